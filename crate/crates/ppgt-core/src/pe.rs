//! Relative random walk probability (RRWP) positional encodings.
//!
//! `rrwp` stacks `[I, W, W^2, ..., W^{K-1}]` along a trailing channel axis,
//! where `W = D^{-1} A` is the random-walk matrix (rows of degree-0 nodes are
//! zero by convention). A float and an exact-rational backend are computed
//! side by side; the exact one feeds the WL oracle, the float one feeds the
//! model, and the two must agree to within 1e-12.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::rational::RationalMatrix;
use crate::tensor::Tensor;

/// What stage of processing an `[N, N, K]` pair-feature tensor is in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PeKind {
    RawRrwp,
    SpeExpanded,
    StemOutput,
}

/// Dense `N x N x K` relative positional features, channel-last.
#[derive(Debug, Clone, PartialEq)]
pub struct RelPosTensor {
    n: usize,
    k: usize,
    data: Vec<f64>,
    kind: PeKind,
}

impl RelPosTensor {
    pub fn new(n: usize, k: usize, data: Vec<f64>, kind: PeKind) -> Result<RelPosTensor> {
        if data.len() != n * n * k {
            return Err(Error::ShapeMismatch {
                op: "RelPosTensor::new",
                lhs: vec![n, n, k],
                rhs: vec![data.len()],
            });
        }
        Ok(RelPosTensor { n, k, data, kind })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn kind(&self) -> PeKind {
        self.kind
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, i: usize, j: usize, c: usize) -> f64 {
        self.data[(i * self.n + j) * self.k + c]
    }

    /// Channel vector for one (i, j) pair.
    pub fn pair(&self, i: usize, j: usize) -> &[f64] {
        let base = (i * self.n + j) * self.k;
        &self.data[base..base + self.k]
    }

    /// The `N*N x K` matrix of pair features, as a tensor.
    pub fn as_matrix(&self) -> Tensor {
        Tensor::from_vec(vec![self.n * self.n, self.k], self.data.clone())
            .expect("consistent by construction")
    }

    /// The `N x K` matrix of diagonal features `p[i, i, :]`.
    pub fn diagonal(&self) -> Tensor {
        let mut out = Vec::with_capacity(self.n * self.k);
        for i in 0..self.n {
            out.extend_from_slice(self.pair(i, i));
        }
        Tensor::from_vec(vec![self.n, self.k], out).expect("consistent by construction")
    }

    /// Apply `perm` to both node axes.
    pub fn permuted(&self, perm: &[usize]) -> RelPosTensor {
        let mut out = vec![0.0; self.data.len()];
        for i in 0..self.n {
            for j in 0..self.n {
                let src = self.pair(i, j);
                let base = (perm[i] * self.n + perm[j]) * self.k;
                out[base..base + self.k].copy_from_slice(src);
            }
        }
        RelPosTensor {
            n: self.n,
            k: self.k,
            data: out,
            kind: self.kind,
        }
    }
}

/// Float random-walk matrix `W = D^{-1} A` (degree-0 rows zero), together
/// with its exact-rational counterpart.
pub fn random_walk_matrix(g: &Graph) -> (RationalMatrix, Tensor) {
    let exact = RationalMatrix::random_walk(g);
    let float = Tensor::from_vec(vec![g.n(), g.n()], exact.to_f64())
        .expect("square matrix");
    (exact, float)
}

/// Exact RRWP channels `[I, W, ..., W^{K-1}]`.
pub fn rrwp_exact(g: &Graph, k: usize) -> Vec<RationalMatrix> {
    assert!(k >= 1, "rrwp needs K >= 1");
    RationalMatrix::random_walk(g).powers(k)
}

/// Float RRWP tensor. Powers are accumulated in f64; channel 0 is the
/// identity.
pub fn rrwp(g: &Graph, k: usize) -> RelPosTensor {
    assert!(k >= 1, "rrwp needs K >= 1");
    let n = g.n();
    let (_, w) = random_walk_matrix(g);
    let wd = w.data();
    let mut channels: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut eye = vec![0.0; n * n];
    for i in 0..n {
        eye[i * n + i] = 1.0;
    }
    channels.push(eye);
    for c in 1..k {
        let prev = &channels[c - 1];
        let mut next = vec![0.0; n * n];
        for i in 0..n {
            for p in 0..n {
                let a = prev[i * n + p];
                if a == 0.0 {
                    continue;
                }
                for j in 0..n {
                    next[i * n + j] += a * wd[p * n + j];
                }
            }
        }
        channels.push(next);
    }
    let mut data = vec![0.0; n * n * k];
    for (c, ch) in channels.iter().enumerate() {
        for i in 0..n {
            for j in 0..n {
                data[(i * n + j) * k + c] = ch[i * n + j];
            }
        }
    }
    RelPosTensor {
        n,
        k,
        data,
        kind: PeKind::RawRrwp,
    }
}

/// Largest |float - exact| over all RRWP entries; the exactness gauge.
pub fn rrwp_max_deviation(g: &Graph, k: usize) -> f64 {
    let float = rrwp(g, k);
    let exact = rrwp_exact(g, k);
    let mut worst = 0.0f64;
    for (c, m) in exact.iter().enumerate() {
        for i in 0..g.n() {
            for j in 0..g.n() {
                let e = crate::rational::rational_to_f64(m.get(i, j));
                worst = worst.max((float.get(i, j, c) - e).abs());
            }
        }
    }
    worst
}

/// Sinusoidal enhancement: each channel `p` becomes
/// `[p, sin(2^0 pi p), cos(2^0 pi p), ..., sin(2^{S-1} pi p), cos(2^{S-1} pi p)]`,
/// grouped per input channel. `S = 0` passes the tensor through unchanged.
pub fn spe_encode(p: &RelPosTensor, s: usize) -> RelPosTensor {
    if s == 0 {
        return RelPosTensor {
            kind: PeKind::SpeExpanded,
            ..p.clone()
        };
    }
    let n = p.n;
    let k_in = p.k;
    let k_out = k_in * (1 + 2 * s);
    let mut data = Vec::with_capacity(n * n * k_out);
    for i in 0..n {
        for j in 0..n {
            for c in 0..k_in {
                let v = p.get(i, j, c);
                data.push(v);
                for b in 0..s {
                    let arg = (1u64 << b) as f64 * std::f64::consts::PI * v;
                    data.push(arg.sin());
                    data.push(arg.cos());
                }
            }
        }
    }
    RelPosTensor {
        n,
        k: k_out,
        data,
        kind: PeKind::SpeExpanded,
    }
}

/// Degree and graph-order side channels.
///
/// Returns per-node auxiliary attributes `[log(deg + 1), log n]` and the
/// input tensor with three appended channels: `1/max(deg_i, 1)`,
/// `1/max(deg_j, 1)`, and `1/n`.
pub fn inject_aux_features(g: &Graph, p: &RelPosTensor) -> (Tensor, RelPosTensor) {
    let n = g.n();
    assert_eq!(n, p.n, "graph and tensor disagree on node count");
    let log_n = (n as f64).ln();
    let mut aux = Vec::with_capacity(n * 2);
    for v in 0..n {
        aux.push((g.degree(v) as f64 + 1.0).ln());
        aux.push(log_n);
    }
    let node_aux = Tensor::from_vec(vec![n, 2], aux).expect("aux shape");

    let k_out = p.k + 3;
    let inv_n = 1.0 / n as f64;
    let inv_deg: Vec<f64> = (0..n).map(|v| 1.0 / (g.degree(v).max(1)) as f64).collect();
    let mut data = Vec::with_capacity(n * n * k_out);
    for i in 0..n {
        for j in 0..n {
            data.extend_from_slice(p.pair(i, j));
            data.push(inv_deg[i]);
            data.push(inv_deg[j]);
            data.push(inv_n);
        }
    }
    let p_aug = RelPosTensor {
        n,
        k: k_out,
        data,
        kind: p.kind,
    };
    (node_aux, p_aug)
}

/// JSON sidecar written next to a serialized [`RelPosTensor`].
#[derive(Debug, Serialize, Deserialize)]
pub struct PeSidecar {
    pub kind: PeKind,
    pub n: usize,
    pub k: usize,
    pub provenance: String,
}

/// Binary layout: u32-le `n`, u32-le `k` (8 header bytes), then `n*n*k`
/// f64-le values. The JSON sidecar goes to `<path>.json`.
pub fn save_rel_pos(p: &RelPosTensor, path: &Path, provenance: &str) -> Result<()> {
    let mut file = std::fs::File::create(path)?;
    file.write_all(&(p.n as u32).to_le_bytes())?;
    file.write_all(&(p.k as u32).to_le_bytes())?;
    for v in &p.data {
        file.write_all(&v.to_le_bytes())?;
    }
    let sidecar = PeSidecar {
        kind: p.kind,
        n: p.n,
        k: p.k,
        provenance: provenance.to_string(),
    };
    let json = serde_json::to_string_pretty(&sidecar)?;
    std::fs::write(path.with_extension(
        path.extension()
            .map(|e| format!("{}.json", e.to_string_lossy()))
            .unwrap_or_else(|| "json".into()),
    ), json)?;
    Ok(())
}

pub fn load_rel_pos(path: &Path) -> Result<RelPosTensor> {
    let mut file = std::fs::File::open(path)?;
    let mut head = [0u8; 8];
    file.read_exact(&mut head)?;
    let n = u32::from_le_bytes(head[0..4].try_into().unwrap()) as usize;
    let k = u32::from_le_bytes(head[4..8].try_into().unwrap()) as usize;
    let mut raw = Vec::new();
    file.read_to_end(&mut raw)?;
    if raw.len() != n * n * k * 8 {
        return Err(Error::GraphFormat(format!(
            "pe file body has {} bytes, expected {}",
            raw.len(),
            n * n * k * 8
        )));
    }
    let data: Vec<f64> = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let sidecar_path = path.with_extension(
        path.extension()
            .map(|e| format!("{}.json", e.to_string_lossy()))
            .unwrap_or_else(|| "json".into()),
    );
    let kind = if sidecar_path.exists() {
        let sidecar: PeSidecar = serde_json::from_str(&std::fs::read_to_string(sidecar_path)?)?;
        sidecar.kind
    } else {
        PeKind::RawRrwp
    };
    RelPosTensor::new(n, k, data, kind)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{cycle, Graph};

    fn triangle() -> Graph {
        Graph::new(3, &[(0, 1), (1, 2), (0, 2)]).unwrap()
    }

    #[test]
    fn triangle_rrwp_k3_matches_hand_powers() {
        // W has 1/2 off-diagonal; W^2 = 1/2 I + 1/4 (J - I).
        let p = rrwp(&triangle(), 3);
        for i in 0..3 {
            assert_eq!(p.pair(i, i), &[1.0, 0.0, 0.5]);
            for j in 0..3 {
                if i != j {
                    assert_eq!(p.pair(i, j), &[0.0, 0.5, 0.25]);
                }
            }
        }
    }

    #[test]
    fn six_cycle_odd_powers_have_zero_diagonal() {
        // Bipartite graph: odd-length closed walks are impossible.
        let p = rrwp(&cycle(6), 4);
        let exact = rrwp_exact(&cycle(6), 4);
        for i in 0..6 {
            assert_eq!(p.get(i, i, 1), 0.0);
            assert_eq!(p.get(i, i, 3), 0.0);
            assert!(num_traits::Zero::is_zero(exact[3].get(i, i)));
        }
    }

    #[test]
    fn k1_is_identity_only() {
        let p = rrwp(&cycle(5), 1);
        for i in 0..5 {
            for j in 0..5 {
                assert_eq!(p.get(i, j, 0), if i == j { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn float_and_exact_agree_tightly() {
        for g in [cycle(6), triangle(), crate::graph::path(7)] {
            assert!(rrwp_max_deviation(&g, 16) < 1e-12);
        }
    }

    #[test]
    fn float_and_exact_agree_up_to_n32_k16() {
        // The stated bound of the contract: n <= 32, K <= 16.
        let mut rng = crate::rng::Rng::seed(42);
        let mut edges = Vec::new();
        for u in 0..32usize {
            for v in (u + 1)..32 {
                if rng.next_f64() < 0.25 {
                    edges.push((u, v));
                }
            }
        }
        let dense = Graph::new(32, &edges).unwrap();
        assert!(rrwp_max_deviation(&dense, 16) < 1e-12);
        assert!(rrwp_max_deviation(&cycle(32), 16) < 1e-12);
    }

    #[test]
    fn raw_rrwp_rows_are_stochastic_for_positive_degree() {
        let g = Graph::new(5, &[(0, 1), (1, 2), (2, 3), (3, 0)]).unwrap(); // node 4 isolated
        let p = rrwp(&g, 4);
        for c in 1..4 {
            for i in 0..5 {
                let sum: f64 = (0..5).map(|j| p.get(i, j, c)).sum();
                if g.degree(i) > 0 {
                    assert!((sum - 1.0).abs() < 1e-15, "row {i} channel {c} sums to {sum}");
                } else {
                    assert_eq!(sum, 0.0);
                }
            }
        }
    }

    #[test]
    fn spe_zero_and_one_land_on_the_unit_circle_corners() {
        let p = RelPosTensor::new(1, 1, vec![0.0], PeKind::RawRrwp).unwrap();
        let e = spe_encode(&p, 1);
        assert_eq!(e.pair(0, 0), &[0.0, 0.0, 1.0]);

        let p = RelPosTensor::new(1, 1, vec![1.0], PeKind::RawRrwp).unwrap();
        let e = spe_encode(&p, 2);
        let got = e.pair(0, 0);
        let want = [1.0, 0.0, -1.0, 0.0, 1.0]; // sin pi, cos pi, sin 2pi, cos 2pi
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-12, "{got:?}");
        }
    }

    #[test]
    fn spe_channel_count_is_k_times_1_plus_2s() {
        let p = rrwp(&triangle(), 3);
        assert_eq!(spe_encode(&p, 3).k(), 21);
        assert_eq!(spe_encode(&p, 0).k(), 3);
    }

    #[test]
    fn spe_keeps_raw_channels_in_place() {
        let p = rrwp(&cycle(5), 4);
        let e = spe_encode(&p, 2);
        let stride = 1 + 2 * 2;
        for i in 0..5 {
            for j in 0..5 {
                for c in 0..4 {
                    assert_eq!(e.get(i, j, c * stride), p.get(i, j, c));
                }
            }
        }
    }

    #[test]
    fn aux_features_on_triangle_and_edge_cases() {
        let g = triangle();
        let (aux, p_aug) = inject_aux_features(&g, &rrwp(&g, 2));
        let ln3 = 3.0f64.ln();
        for v in 0..3 {
            assert!((aux.data()[v * 2] - ln3).abs() < 1e-15); // log(deg+1) = log 3
            assert!((aux.data()[v * 2 + 1] - ln3).abs() < 1e-15); // log n
        }
        assert_eq!(p_aug.k(), 5);
        assert_eq!(p_aug.pair(0, 1)[2..], [0.5, 0.5, 1.0 / 3.0]);

        // Isolated node clamps the reciprocal degree at 1.
        let lone = Graph::new(1, &[]).unwrap();
        let (_, p1) = inject_aux_features(&lone, &rrwp(&lone, 1));
        assert_eq!(p1.pair(0, 0), &[1.0, 1.0, 1.0, 1.0]); // identity, 1/max(0,1), same, 1/1
    }

    #[test]
    fn permuted_tensor_permutes_both_axes() {
        let g = crate::graph::path(4);
        let p = rrwp(&g, 3);
        let perm = vec![2, 0, 3, 1];
        let q = p.permuted(&perm);
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(q.pair(perm[i], perm[j]), p.pair(i, j));
            }
        }
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tri.pe");
        let p = spe_encode(&rrwp(&triangle(), 3), 2);
        save_rel_pos(&p, &path, "unit test").unwrap();
        let back = load_rel_pos(&path).unwrap();
        assert_eq!(back, p);
        assert!(path.with_extension("pe.json").exists());
    }
}
