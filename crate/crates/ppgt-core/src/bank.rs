//! Curated bank of small graph pairs with known distinguishability.
//!
//! Each pair is hard-coded from an explicit adjacency list and carries two
//! expectation flags: whether 1-WL refinement separates the pair, and whether
//! generalized-distance WL with exact-rational RRWP labels (K = 3, the bank's
//! reference walk length) separates it. The flags are re-derived from the
//! oracles in the test suite; they are data here, not assumptions.

use crate::graph::{cycle, disjoint_union, Graph};

/// Which corner of the difficulty landscape a pair probes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairCategory {
    /// Simple 1-WL-indistinguishable pairs.
    Basic,
    /// Regular graphs (here: strongly regular, the 3-WL wall).
    Regular,
    /// Structured non-isomorphic pairs beyond the basic family.
    ExtensionLike,
    /// Isomorphic graphs that must never be separated.
    IsomorphicControl,
}

impl PairCategory {
    pub fn as_str(&self) -> &'static str {
        match self {
            PairCategory::Basic => "basic",
            PairCategory::Regular => "regular",
            PairCategory::ExtensionLike => "extension-like",
            PairCategory::IsomorphicControl => "isomorphic-control",
        }
    }
}

/// A named pair of equal-size graphs with expected oracle verdicts.
#[derive(Debug, Clone)]
pub struct GraphPair {
    pub name: &'static str,
    pub g1: Graph,
    pub g2: Graph,
    pub category: PairCategory,
    /// Does 1-WL tell the two graphs apart?
    pub expected_1wl: bool,
    /// Does GD-WL with exact RRWP labels at K = 3 tell them apart?
    pub expected_gdwl_rrwp: bool,
}

/// Reference walk length the bank's GD-WL expectation flags are stated at.
pub const BANK_REFERENCE_K: usize = 3;

#[rustfmt::skip]
const ROOK_4X4_EDGES: [(usize, usize); 48] = [
    (0, 1), (0, 2), (0, 3), (0, 4), (0, 8), (0, 12), (1, 2), (1, 3),
    (1, 5), (1, 9), (1, 13), (2, 3), (2, 6), (2, 10), (2, 14), (3, 7),
    (3, 11), (3, 15), (4, 5), (4, 6), (4, 7), (4, 8), (4, 12), (5, 6),
    (5, 7), (5, 9), (5, 13), (6, 7), (6, 10), (6, 14), (7, 11), (7, 15),
    (8, 9), (8, 10), (8, 11), (8, 12), (9, 10), (9, 11), (9, 13), (10, 11),
    (10, 14), (11, 15), (12, 13), (12, 14), (12, 15), (13, 14), (13, 15), (14, 15),
];

#[rustfmt::skip]
const SHRIKHANDE_EDGES: [(usize, usize); 48] = [
    (0, 1), (0, 3), (0, 4), (0, 5), (0, 12), (0, 15), (1, 2), (1, 5),
    (1, 6), (1, 12), (1, 13), (2, 3), (2, 6), (2, 7), (2, 13), (2, 14),
    (3, 4), (3, 7), (3, 14), (3, 15), (4, 5), (4, 7), (4, 8), (4, 9),
    (5, 6), (5, 9), (5, 10), (6, 7), (6, 10), (6, 11), (7, 8), (7, 11),
    (8, 9), (8, 11), (8, 12), (8, 13), (9, 10), (9, 13), (9, 14), (10, 11),
    (10, 14), (10, 15), (11, 12), (11, 15), (12, 13), (12, 15), (13, 14), (14, 15),
];

/// Decalin skeleton: two 6-cycles sharing the edge (0, 1).
#[rustfmt::skip]
const DECALIN_EDGES: [(usize, usize); 11] = [
    (0, 1), (0, 2), (2, 3), (3, 4), (4, 5), (5, 1),
    (0, 6), (6, 7), (7, 8), (8, 9), (9, 1),
];

/// Bicyclopentyl skeleton: two 5-cycles joined by the edge (0, 5).
#[rustfmt::skip]
const BICYCLOPENTYL_EDGES: [(usize, usize); 11] = [
    (0, 1), (1, 2), (2, 3), (3, 4), (4, 0),
    (5, 6), (6, 7), (7, 8), (8, 9), (9, 5),
    (0, 5),
];

/// Triangular prism: two triangles joined by a perfect matching.
#[rustfmt::skip]
const PRISM_EDGES: [(usize, usize); 9] = [
    (0, 1), (1, 2), (0, 2),
    (3, 4), (4, 5), (3, 5),
    (0, 3), (1, 4), (2, 5),
];

/// K(3,3) with parts {0, 1, 2} and {3, 4, 5}.
#[rustfmt::skip]
const K33_EDGES: [(usize, usize); 9] = [
    (0, 3), (0, 4), (0, 5),
    (1, 3), (1, 4), (1, 5),
    (2, 3), (2, 4), (2, 5),
];

/// The curated pair bank.
///
/// - `c6-vs-2c3`: 6-cycle vs two disjoint triangles. Both 2-regular, so 1-WL
///   is blind; the triangles put weight on the W^2 channel between adjacent
///   nodes, which RRWP labels expose immediately.
/// - `decalin-like`: two fused 6-cycles vs two bridged 5-cycles, the classic
///   1-WL-equivalent bicyclic pair. Both graphs look identical to RRWP
///   labels out to two steps, so GD-WL at K = 3 is blind as well (the
///   decalin side is bipartite, the other is not, which a K >= 4 channel
///   does see).
/// - `prism-vs-k33`: triangular prism vs K(3,3), both cubic on six nodes.
///   1-WL-equivalent by regularity; the prism's triangles give adjacent
///   nodes a nonzero two-step return probability, so RRWP at K = 3 splits
///   the pair.
/// - `srg-16`: Shrikhande graph vs the 4x4 rook's graph, both
///   srg(16, 6, 2, 2). Strongly regular twins sit at the 3-WL boundary and
///   stay merged under GD-WL with RRWP labels.
/// - `iso-control`: a 6-cycle against a relabeling of itself; nothing may
///   separate it.
pub fn pair_bank() -> Vec<GraphPair> {
    let c6 = cycle(6);
    let c3 = Graph::new(3, &[(0, 1), (1, 2), (0, 2)]).expect("triangle");
    let two_c3 = disjoint_union(&c3, &c3);
    let decalin = Graph::new(10, &DECALIN_EDGES).expect("decalin");
    let bicyclopentyl = Graph::new(10, &BICYCLOPENTYL_EDGES).expect("bicyclopentyl");
    let prism = Graph::new(6, &PRISM_EDGES).expect("prism");
    let k33 = Graph::new(6, &K33_EDGES).expect("k33");
    let shrikhande = Graph::new(16, &SHRIKHANDE_EDGES).expect("shrikhande");
    let rook = Graph::new(16, &ROOK_4X4_EDGES).expect("rook");
    let c6_relabeled = c6.permuted(&[3, 5, 0, 2, 4, 1]).expect("relabel");

    vec![
        GraphPair {
            name: "c6-vs-2c3",
            g1: c6.clone(),
            g2: two_c3,
            category: PairCategory::Basic,
            expected_1wl: false,
            expected_gdwl_rrwp: true,
        },
        GraphPair {
            name: "decalin-like",
            g1: decalin,
            g2: bicyclopentyl,
            category: PairCategory::Basic,
            expected_1wl: false,
            expected_gdwl_rrwp: false,
        },
        GraphPair {
            name: "prism-vs-k33",
            g1: prism,
            g2: k33,
            category: PairCategory::ExtensionLike,
            expected_1wl: false,
            expected_gdwl_rrwp: true,
        },
        GraphPair {
            name: "srg-16",
            g1: shrikhande,
            g2: rook,
            category: PairCategory::Regular,
            expected_1wl: false,
            expected_gdwl_rrwp: false,
        },
        GraphPair {
            name: "iso-control",
            g1: c6,
            g2: c6_relabeled,
            category: PairCategory::IsomorphicControl,
            expected_1wl: false,
            expected_gdwl_rrwp: false,
        },
    ]
}

/// Look up a bank pair by name.
pub fn find_pair(name: &str) -> crate::error::Result<GraphPair> {
    let bank = pair_bank();
    let known: Vec<&str> = bank.iter().map(|p| p.name).collect();
    bank.into_iter()
        .find(|p| p.name == name)
        .ok_or_else(|| crate::error::Error::UnknownPair(name.to_string(), known.join(", ")))
}
