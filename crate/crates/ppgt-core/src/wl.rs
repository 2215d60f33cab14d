//! Exact 1-WL and generalized-distance WL color refinement.
//!
//! Refinement never hashes: at every round the distinct node signatures are
//! collected, sorted, and renumbered by rank, so color ids are a canonical
//! function of each node's full refinement history. A graph's fingerprint
//! serializes the per-round signature tables (with distance labels spelled
//! out exactly) together with the final color multiset. Two graphs get equal
//! fingerprints exactly when WL refinement cannot tell them apart, with no
//! tolerance and no hash collisions, even across separate invocations.
//!
//! Distance labels are either shortest-path distances (with an explicit
//! infinity for unreachable pairs) or exact-rational RRWP tuples; the
//! rational backend keeps multiset comparison free of rounding.

use num_rational::BigRational;
use serde::Serialize;

use crate::graph::Graph;
use crate::pe::rrwp_exact;

/// A shortest-path distance with an explicit unreachable sentinel.
/// `Finite(d)` sorts before `Infinite`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Dist {
    Finite(u64),
    Infinite,
}

impl std::fmt::Display for Dist {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Dist::Finite(d) => write!(f, "{d}"),
            Dist::Infinite => write!(f, "inf"),
        }
    }
}

/// Per-pair distance labels for GD-WL.
#[derive(Debug, Clone)]
pub enum DistanceLabel {
    /// All-pairs shortest-path distances, row-major.
    Spd { n: usize, dist: Vec<Dist> },
    /// Exact K-tuples `(I_ij, W_ij, ..., W^{K-1}_ij)`, row-major.
    RrwpExact {
        n: usize,
        k: usize,
        tuples: Vec<Vec<BigRational>>,
    },
}

impl DistanceLabel {
    pub fn n(&self) -> usize {
        match self {
            DistanceLabel::Spd { n, .. } => *n,
            DistanceLabel::RrwpExact { n, .. } => *n,
        }
    }

    /// Intern every pair label: returns the `n*n` matrix of label ranks and
    /// the sorted legend of serialized label values.
    fn intern(&self) -> (Vec<u32>, Vec<String>) {
        match self {
            DistanceLabel::Spd { n: _, dist } => {
                let mut distinct: Vec<Dist> = dist.clone();
                distinct.sort_unstable();
                distinct.dedup();
                let ids = dist
                    .iter()
                    .map(|d| distinct.binary_search(d).unwrap() as u32)
                    .collect();
                let legend = distinct.iter().map(|d| d.to_string()).collect();
                (ids, legend)
            }
            DistanceLabel::RrwpExact { n: _, k: _, tuples } => {
                let mut distinct: Vec<&Vec<BigRational>> = tuples.iter().collect();
                distinct.sort();
                distinct.dedup();
                let ids = tuples
                    .iter()
                    .map(|t| distinct.binary_search(&t).unwrap() as u32)
                    .collect();
                let legend = distinct
                    .iter()
                    .map(|t| {
                        t.iter()
                            .map(|r| r.to_string())
                            .collect::<Vec<_>>()
                            .join("|")
                    })
                    .collect();
                (ids, legend)
            }
        }
    }
}

/// All-pairs BFS distances; unreachable pairs get the infinity sentinel.
pub fn spd_labels(g: &Graph) -> DistanceLabel {
    let n = g.n();
    let mut dist = vec![Dist::Infinite; n * n];
    let mut queue = std::collections::VecDeque::new();
    for src in 0..n {
        let mut seen = vec![false; n];
        seen[src] = true;
        dist[src * n + src] = Dist::Finite(0);
        queue.push_back((src, 0u64));
        while let Some((v, d)) = queue.pop_front() {
            for &u in g.neighbors(v) {
                if !seen[u] {
                    seen[u] = true;
                    dist[src * n + u] = Dist::Finite(d + 1);
                    queue.push_back((u, d + 1));
                }
            }
        }
    }
    DistanceLabel::Spd { n, dist }
}

/// Exact-rational RRWP tuples as generalized distance labels.
pub fn rrwp_labels(g: &Graph, k: usize) -> DistanceLabel {
    let n = g.n();
    let powers = rrwp_exact(g, k);
    let mut tuples: Vec<Vec<BigRational>> = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            tuples.push(powers.iter().map(|m| m.get(i, j).clone()).collect());
        }
    }
    DistanceLabel::RrwpExact { n, k, tuples }
}

/// Result of a refinement run: canonical per-node colors, the round count,
/// whether a fixed point was reached, per-round history, and the canonical
/// signature log the fingerprint is built from.
#[derive(Debug, Clone, Serialize)]
pub struct ColorPartition {
    pub colors: Vec<u32>,
    pub round: usize,
    pub stable: bool,
    /// Color vector after each round; entry 0 is the initial coloring.
    pub history: Vec<Vec<u32>>,
    signature_log: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
enum Sig {
    Wl1(u32, Vec<u32>),
    Gdwl(Vec<(u32, u32)>),
}

impl Sig {
    fn serialize(&self) -> String {
        match self {
            Sig::Wl1(prev, neigh) => {
                let parts: Vec<String> = neigh.iter().map(|c| c.to_string()).collect();
                format!("{prev}:[{}]", parts.join(","))
            }
            Sig::Gdwl(pairs) => {
                let parts: Vec<String> =
                    pairs.iter().map(|(l, c)| format!("({l},{c})")).collect();
                format!("[{}]", parts.join(","))
            }
        }
    }
}

/// Initial colors: uniform zero without node attributes, otherwise the rank
/// of each node's attribute row among the sorted distinct rows.
fn initial_colors(g: &Graph) -> (Vec<u32>, String) {
    match g.node_attrs() {
        None => (vec![0; g.n()], "init=uniform".to_string()),
        Some(rows) => {
            let key = |row: &Vec<f64>| {
                row.iter()
                    .map(|v| format!("{v:?}"))
                    .collect::<Vec<_>>()
                    .join(",")
            };
            let mut distinct: Vec<String> = rows.iter().map(key).collect();
            distinct.sort();
            distinct.dedup();
            let colors = rows
                .iter()
                .map(|r| distinct.binary_search(&key(r)).unwrap() as u32)
                .collect();
            (colors, format!("init=[{}]", distinct.join(";")))
        }
    }
}

/// Do two color vectors induce the same partition of the nodes?
fn same_partition(a: &[u32], b: &[u32]) -> bool {
    let distinct = |v: &[u32]| {
        let mut s: Vec<u32> = v.to_vec();
        s.sort_unstable();
        s.dedup();
        s.len()
    };
    let pairs = {
        let mut s: Vec<(u32, u32)> = a.iter().copied().zip(b.iter().copied()).collect();
        s.sort_unstable();
        s.dedup();
        s.len()
    };
    distinct(a) == pairs && distinct(b) == pairs
}

fn refine(g: &Graph, labels: Option<&DistanceLabel>, max_rounds: usize) -> ColorPartition {
    assert!(max_rounds >= 1, "refinement needs at least one round");
    let n = g.n();
    let (mut colors, init_log) = initial_colors(g);
    let mut signature_log = vec![init_log];
    let label_ids = labels.map(|l| {
        assert_eq!(l.n(), n, "labels must cover all node pairs");
        let (ids, legend) = l.intern();
        signature_log.push(format!("labels=[{}]", legend.join(";")));
        ids
    });
    let mut history = vec![colors.clone()];
    let mut stable = false;
    let mut round = 0;

    for _ in 0..max_rounds {
        let sigs: Vec<Sig> = (0..n)
            .map(|v| match &label_ids {
                None => {
                    let mut neigh: Vec<u32> =
                        g.neighbors(v).iter().map(|&u| colors[u]).collect();
                    neigh.sort_unstable();
                    Sig::Wl1(colors[v], neigh)
                }
                Some(ids) => {
                    let mut pairs: Vec<(u32, u32)> =
                        (0..n).map(|u| (ids[v * n + u], colors[u])).collect();
                    pairs.sort_unstable();
                    Sig::Gdwl(pairs)
                }
            })
            .collect();
        let mut distinct: Vec<&Sig> = sigs.iter().collect();
        distinct.sort();
        distinct.dedup();
        let new_colors: Vec<u32> = sigs
            .iter()
            .map(|s| distinct.binary_search(&s).unwrap() as u32)
            .collect();
        round += 1;
        signature_log.push(format!(
            "r{round}=[{}]",
            distinct
                .iter()
                .map(|s| s.serialize())
                .collect::<Vec<_>>()
                .join(";")
        ));
        let fixed_point = same_partition(&colors, &new_colors);
        history.push(new_colors.clone());
        colors = new_colors;
        if fixed_point {
            stable = true;
            break;
        }
    }

    ColorPartition {
        colors,
        round,
        stable,
        history,
        signature_log,
    }
}

/// Classic 1-WL: new color = (old color, sorted multiset of neighbor colors),
/// run to stability or `max_rounds`.
pub fn wl1_refine(g: &Graph, max_rounds: usize) -> ColorPartition {
    refine(g, None, max_rounds)
}

/// GD-WL: new color of `v` = sorted multiset of `(label(v, u), old color of u)`
/// over all nodes `u` (including `v` itself).
pub fn gdwl_refine(g: &Graph, labels: &DistanceLabel, max_rounds: usize) -> ColorPartition {
    refine(g, Some(labels), max_rounds)
}

/// Canonical, isomorphism-invariant fingerprint: the refinement tables plus
/// the sorted multiset of final colors. Equality is exact multiset-refinement
/// equality.
pub fn graph_fingerprint(part: &ColorPartition) -> String {
    let mut counts = std::collections::BTreeMap::new();
    for &c in &part.colors {
        *counts.entry(c).or_insert(0usize) += 1;
    }
    let final_part: Vec<String> = counts
        .iter()
        .map(|(c, m)| format!("{c}x{m}"))
        .collect();
    format!(
        "{};final=[{}]",
        part.signature_log.join(";"),
        final_part.join(",")
    )
}

/// Convenience: does refinement separate the two graphs?
pub fn wl1_distinguishes(g1: &Graph, g2: &Graph) -> bool {
    let n = g1.n().max(g2.n()).max(1);
    graph_fingerprint(&wl1_refine(g1, n)) != graph_fingerprint(&wl1_refine(g2, n))
}

/// Does GD-WL with exact RRWP labels at walk length `k` separate the graphs?
pub fn gdwl_rrwp_distinguishes(g1: &Graph, g2: &Graph, k: usize) -> bool {
    let n = g1.n().max(g2.n()).max(1);
    let f1 = graph_fingerprint(&gdwl_refine(g1, &rrwp_labels(g1, k), n));
    let f2 = graph_fingerprint(&gdwl_refine(g2, &rrwp_labels(g2, k), n));
    f1 != f2
}

/// Does partition `fine` refine partition `coarse`? (Equal `fine` colors
/// imply equal `coarse` colors.)
pub fn refines(fine: &[u32], coarse: &[u32]) -> bool {
    let n = fine.len();
    for i in 0..n {
        for j in (i + 1)..n {
            if fine[i] == fine[j] && coarse[i] != coarse[j] {
                return false;
            }
        }
    }
    true
}
