//! Attention mechanisms: scaled dot-product, cosine, simplified-L2, and
//! simplified-L2 with a universal relative-PE multiplier.
//!
//! Simplified-L2 attention is scaled dot-product attention plus a per-key
//! additive bias `-k.k / (2 sqrt(D))`, which makes the softmax argument equal
//! (up to a per-row constant) to the negative scaled squared Euclidean
//! distance between query and key. The bias is materialized once per call as
//! an N-vector and broadcast across rows, the float-attention-mask trick.

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttentionKind {
    Sdp,
    Cosine,
    Sl2,
    Sl2Urpe,
}

impl AttentionKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            AttentionKind::Sdp => "sdp",
            AttentionKind::Cosine => "cosine",
            AttentionKind::Sl2 => "sl2",
            AttentionKind::Sl2Urpe => "sl2-urpe",
        }
    }

    pub fn parse(s: &str) -> Result<AttentionKind> {
        match s {
            "sdp" => Ok(AttentionKind::Sdp),
            "cosine" => Ok(AttentionKind::Cosine),
            "sl2" => Ok(AttentionKind::Sl2),
            "sl2-urpe" => Ok(AttentionKind::Sl2Urpe),
            other => Err(Error::Config(format!("unknown attention kind {other:?}"))),
        }
    }
}

/// Per-head linear maps from pair features to a scalar: the multiplicative
/// `phi` outside the softmax and the additive `theta` inside it.
#[derive(Debug, Clone)]
pub struct UrpeMaps {
    pub phi_w: Tensor,
    pub phi_b: Tensor,
    pub theta_w: Tensor,
    pub theta_b: Tensor,
}

#[derive(Debug, Clone)]
pub struct AttentionHead {
    pub w_q: Tensor,
    pub w_k: Tensor,
    pub w_v: Tensor,
    /// Present iff the layer kind is sl2-urpe.
    pub urpe: Option<UrpeMaps>,
}

/// One multi-head attention layer. `model_dim = heads.len() * head_dim`.
#[derive(Debug, Clone)]
pub struct AttentionParams {
    pub kind: AttentionKind,
    pub heads: Vec<AttentionHead>,
    pub w_o: Tensor,
    /// Temperature for the cosine kind.
    pub tau: f64,
    /// Post-softmax dropout rate; 0 disables.
    pub dropout: f64,
}

impl AttentionParams {
    /// Fresh parameters. Projections use truncated-normal (sigma 0.02). The
    /// `phi`/`theta` maps are standalone linear layers on the pair features
    /// and get Kaiming-uniform weights: the positional pathway must carry
    /// signal from step zero, otherwise structurally different graphs with
    /// identical node-level features are provably indistinguishable at
    /// initialization. `phi`'s bias starts at 1 (a multiplier centered on
    /// neutral) and `theta`'s at 0.
    pub fn init(
        kind: AttentionKind,
        model_dim: usize,
        n_heads: usize,
        d_pe: usize,
        rng: &mut Rng,
    ) -> AttentionParams {
        assert!(
            model_dim % n_heads == 0,
            "model_dim {model_dim} not divisible by heads {n_heads}"
        );
        let dh = model_dim / n_heads;
        let heads = (0..n_heads)
            .map(|h| {
                let mut hr = rng.child(&format!("head{h}"));
                AttentionHead {
                    w_q: Tensor::trunc_normal(vec![model_dim, dh], 0.02, &mut hr),
                    w_k: Tensor::trunc_normal(vec![model_dim, dh], 0.02, &mut hr),
                    w_v: Tensor::trunc_normal(vec![model_dim, dh], 0.02, &mut hr),
                    urpe: (kind == AttentionKind::Sl2Urpe).then(|| UrpeMaps {
                        phi_w: Tensor::kaiming_uniform(d_pe, 1, 1.0, &mut hr),
                        phi_b: Tensor::ones(vec![1]),
                        theta_w: Tensor::kaiming_uniform(d_pe, 1, 1.0, &mut hr),
                        theta_b: Tensor::zeros(vec![1]),
                    }),
                }
            })
            .collect();
        AttentionParams {
            kind,
            heads,
            w_o: Tensor::trunc_normal(vec![model_dim, model_dim], 0.02, &mut rng.child("w_o")),
            tau: 1.0,
            dropout: 0.0,
        }
    }

    pub fn model_dim(&self) -> usize {
        self.w_o.shape()[0]
    }

    pub fn trainable(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        for (h, head) in self.heads.iter().enumerate() {
            out.push((format!("head{h}.w_q"), head.w_q.clone()));
            out.push((format!("head{h}.w_k"), head.w_k.clone()));
            out.push((format!("head{h}.w_v"), head.w_v.clone()));
            if let Some(urpe) = &head.urpe {
                out.push((format!("head{h}.phi_w"), urpe.phi_w.clone()));
                out.push((format!("head{h}.phi_b"), urpe.phi_b.clone()));
                out.push((format!("head{h}.theta_w"), urpe.theta_w.clone()));
                out.push((format!("head{h}.theta_b"), urpe.theta_b.clone()));
            }
        }
        out.push(("w_o".into(), self.w_o.clone()));
        out
    }

    pub fn set_trainable(&mut self, tensors: &mut std::vec::IntoIter<Tensor>) {
        for head in &mut self.heads {
            head.w_q = tensors.next().expect("w_q");
            head.w_k = tensors.next().expect("w_k");
            head.w_v = tensors.next().expect("w_v");
            if let Some(urpe) = &mut head.urpe {
                urpe.phi_w = tensors.next().expect("phi_w");
                urpe.phi_b = tensors.next().expect("phi_b");
                urpe.theta_w = tensors.next().expect("theta_w");
                urpe.theta_b = tensors.next().expect("theta_b");
            }
        }
        self.w_o = tensors.next().expect("w_o");
    }
}

/// Pairs excluded from attention (Node2Subgraph batching). Excluded pairs
/// get an additive `-inf` logit and a `phi` multiplier of zero.
#[derive(Debug, Clone)]
pub struct PairMask {
    n: usize,
    keep: Vec<bool>,
}

impl PairMask {
    pub fn new(n: usize, keep: Vec<bool>) -> Result<PairMask> {
        if keep.len() != n * n {
            return Err(Error::ShapeMismatch {
                op: "PairMask::new",
                lhs: vec![n, n],
                rhs: vec![keep.len()],
            });
        }
        Ok(PairMask { n, keep })
    }

    /// Additive bias matrix: 0 where kept, -inf where excluded.
    fn additive(&self) -> Tensor {
        let data: Vec<f64> = self
            .keep
            .iter()
            .map(|&k| if k { 0.0 } else { f64::NEG_INFINITY })
            .collect();
        Tensor::from_vec(vec![self.n, self.n], data).expect("mask shape")
    }

    /// Multiplicative matrix: 1 where kept, 0 where excluded.
    fn multiplicative(&self) -> Tensor {
        let data: Vec<f64> = self.keep.iter().map(|&k| if k { 1.0 } else { 0.0 }).collect();
        Tensor::from_vec(vec![self.n, self.n], data).expect("mask shape")
    }
}

fn head_dim(q: &Tensor, k: &Tensor, op: &'static str) -> Result<usize> {
    if q.shape().len() != 2 || k.shape().len() != 2 || q.shape()[1] != k.shape()[1] {
        return Err(Error::ShapeMismatch {
            op,
            lhs: q.shape().to_vec(),
            rhs: k.shape().to_vec(),
        });
    }
    Ok(q.shape()[1])
}

/// Scaled dot-product scores: row softmax of `q k^T / sqrt(D)`.
pub fn sdp_scores(q: &Tensor, k: &Tensor) -> Result<Tensor> {
    let d = head_dim(q, k, "sdp_scores")?;
    q.matmul(&k.transpose()?)?
        .scale(1.0 / (d as f64).sqrt())
        .softmax_rows(None)
}

/// Cosine-similarity scores with temperature `tau`.
pub fn cosine_scores(q: &Tensor, k: &Tensor, tau: f64) -> Result<Tensor> {
    let d = head_dim(q, k, "cosine_scores")?;
    assert!(tau > 0.0, "cosine temperature must be positive");
    for (which, t) in [("query", q), ("key", k)] {
        let rows = t.numel() / d;
        for r in 0..rows {
            let norm: f64 = t.data()[r * d..(r + 1) * d].iter().map(|x| x * x).sum();
            if norm == 0.0 {
                return Err(Error::ZeroNormRow { which, row: r });
            }
        }
    }
    let qn = q.div(&q.l2_norm_last().broadcast_last(d))?;
    let kn = k.div(&k.l2_norm_last().broadcast_last(d))?;
    qn.matmul(&kn.transpose()?)?
        .scale(1.0 / tau)
        .softmax_rows(None)
}

/// Simplified-L2 logits before the softmax: `q k^T / sqrt(D)` plus the
/// per-key bias `-k.k / (2 sqrt(D))` broadcast across rows.
pub fn sl2_logits(q: &Tensor, k: &Tensor) -> Result<Tensor> {
    let d = head_dim(q, k, "sl2_scores")?;
    let scale = 1.0 / (d as f64).sqrt();
    let dot = q.matmul(&k.transpose()?)?.scale(scale);
    let key_bias = k.square().sum_last()?.scale(-0.5 * scale);
    dot.add(&key_bias)
}

/// Simplified-L2 scores: softmax of the sl2 logits, equal to the softmax of
/// `-||q_i - k_j||^2 / (2 sqrt(D))` by shift invariance.
pub fn sl2_scores(q: &Tensor, k: &Tensor) -> Result<Tensor> {
    sl2_logits(q, k)?.softmax_rows(None)
}

/// Inner softmax and final (phi-scaled) attention weights of one sl2-urpe
/// head. `p` holds stem-processed pair features, one `d_pe` row per ordered
/// pair, row-major over (i, j).
pub fn sl2_urpe_head_scores(
    x: &Tensor,
    p: &Tensor,
    head: &AttentionHead,
    mask: Option<&PairMask>,
) -> Result<(Tensor, Tensor)> {
    let n = x.shape()[0];
    let urpe = head.urpe.as_ref().ok_or(Error::Config(
        "sl2-urpe scores need phi/theta maps on the head".into(),
    ))?;
    if p.shape() != [n * n, urpe.theta_w.shape()[0]] {
        return Err(Error::ShapeMismatch {
            op: "sl2_urpe_head_scores",
            lhs: vec![n * n, urpe.theta_w.shape()[0]],
            rhs: p.shape().to_vec(),
        });
    }
    let q = x.matmul(&head.w_q)?;
    let k = x.matmul(&head.w_k)?;
    let theta = p.matmul(&urpe.theta_w)?.add(&urpe.theta_b)?.reshape(vec![n, n])?;
    let logits = sl2_logits(&q, &k)?.add(&theta)?;
    let inner = logits.softmax_rows(mask.map(|m| m.additive()).as_ref())?;
    let mut phi = p.matmul(&urpe.phi_w)?.add(&urpe.phi_b)?.reshape(vec![n, n])?;
    if let Some(m) = mask {
        phi = phi.mul(&m.multiplicative())?;
    }
    let alpha = inner.mul(&phi)?;
    Ok((inner, alpha))
}

/// Full sl2-urpe multi-head attention: per head,
/// `alpha_ij = phi(p_ij) * softmax_j(q k^T / sqrt(D) - k.k / (2 sqrt(D)) + theta(p_ij))`,
/// heads concatenated and projected by `w_o`. Rows of `alpha` need not sum
/// to one because `phi` multiplies outside the softmax.
pub fn sl2_urpe_attention(
    x: &Tensor,
    p: &Tensor,
    params: &AttentionParams,
    mask: Option<&PairMask>,
) -> Result<Tensor> {
    multi_head(x, Some(p), params, mask, None)
}

/// Multi-head attention dispatching on `params.kind`. Heads share `p` but
/// own their projections and phi/theta maps. `dropout_rng` enables
/// post-softmax weight dropout at `params.dropout`.
pub fn multi_head(
    x: &Tensor,
    p: Option<&Tensor>,
    params: &AttentionParams,
    mask: Option<&PairMask>,
    mut dropout_rng: Option<&mut Rng>,
) -> Result<Tensor> {
    let n = x.shape()[0];
    if x.shape().len() != 2 || x.shape()[1] != params.model_dim() {
        return Err(Error::ShapeMismatch {
            op: "multi_head",
            lhs: vec![n, params.model_dim()],
            rhs: x.shape().to_vec(),
        });
    }
    let mut outputs = Vec::with_capacity(params.heads.len());
    for head in &params.heads {
        let weights = match params.kind {
            AttentionKind::Sl2Urpe => {
                let p = p.ok_or(Error::Config("sl2-urpe attention needs pair features".into()))?;
                let (_, alpha) = sl2_urpe_head_scores(x, p, head, mask)?;
                alpha
            }
            kind => {
                let q = x.matmul(&head.w_q)?;
                let k = x.matmul(&head.w_k)?;
                let logits = match kind {
                    AttentionKind::Sdp => {
                        let d = q.shape()[1];
                        q.matmul(&k.transpose()?)?.scale(1.0 / (d as f64).sqrt())
                    }
                    AttentionKind::Cosine => {
                        return_cosine_logits(&q, &k, params.tau)?
                    }
                    _ => sl2_logits(&q, &k)?,
                };
                logits.softmax_rows(mask.map(|m| m.additive()).as_ref())?
            }
        };
        let weights = match (&mut dropout_rng, params.dropout) {
            (Some(rng), rate) if rate > 0.0 => {
                let keep: Vec<f64> = (0..weights.numel())
                    .map(|_| {
                        if rng.next_f64() >= rate {
                            1.0 / (1.0 - rate)
                        } else {
                            0.0
                        }
                    })
                    .collect();
                weights.mul(&Tensor::from_vec(weights.shape().to_vec(), keep)?)?
            }
            _ => weights,
        };
        let v = x.matmul(&head.w_v)?;
        outputs.push(weights.matmul(&v)?);
    }
    let refs: Vec<&Tensor> = outputs.iter().collect();
    Tensor::concat_last(&refs)?.matmul(&params.w_o)
}

fn return_cosine_logits(q: &Tensor, k: &Tensor, tau: f64) -> Result<Tensor> {
    let d = head_dim(q, k, "cosine_scores")?;
    for (which, t) in [("query", q), ("key", k)] {
        let rows = t.numel() / d;
        for r in 0..rows {
            let norm: f64 = t.data()[r * d..(r + 1) * d].iter().map(|x| x * x).sum();
            if norm == 0.0 {
                return Err(Error::ZeroNormRow { which, row: r });
            }
        }
    }
    let qn = q.div(&q.l2_norm_last().broadcast_last(d))?;
    let kn = k.div(&k.l2_norm_last().broadcast_last(d))?;
    Ok(qn.matmul(&kn.transpose()?)?.scale(1.0 / tau))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn t2(rows: usize, cols: usize, vals: &[f64]) -> Tensor {
        Tensor::from_vec(vec![rows, cols], vals.to_vec()).unwrap()
    }

    #[test]
    fn sdp_zero_inputs_give_uniform_rows() {
        let q = Tensor::zeros(vec![3, 4]);
        let k = Tensor::zeros(vec![3, 4]);
        let s = sdp_scores(&q, &k).unwrap();
        for v in s.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn sdp_single_key_gets_all_weight() {
        let q = t2(3, 2, &[1.0, 0.0, -2.0, 1.0, 0.3, 0.4]);
        let k = t2(1, 2, &[0.7, -0.1]);
        let s = sdp_scores(&q, &k).unwrap();
        assert!(s.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn sdp_prefers_larger_magnitude_key() {
        let q = t2(1, 2, &[1.0, 0.0]);
        let k = t2(2, 2, &[1.0, 0.0, 2.0, 0.0]);
        let s = sdp_scores(&q, &k).unwrap();
        assert!(s.data()[1] > s.data()[0], "sdp should favor the longer key");
    }

    #[test]
    fn sl2_reverses_sdp_preference_toward_the_closer_key() {
        // logits: 1/sqrt(2) - 1/(2 sqrt(2)) vs 2/sqrt(2) - 4/(2 sqrt(2)).
        let q = t2(1, 2, &[1.0, 0.0]);
        let k = t2(2, 2, &[1.0, 0.0, 2.0, 0.0]);
        let s = sl2_scores(&q, &k).unwrap();
        assert!(s.data()[0] > s.data()[1], "sl2 should favor the closer key");
        let l0 = 1.0 / 2f64.sqrt() - 1.0 / (2.0 * 2f64.sqrt());
        let l1 = 2.0 / 2f64.sqrt() - 4.0 / (2.0 * 2f64.sqrt());
        let z = l0.exp() + l1.exp();
        assert!((s.data()[0] - l0.exp() / z).abs() < 1e-15);
    }

    #[test]
    fn sl2_equal_keys_are_uniform() {
        let q = t2(2, 3, &[0.5, 1.0, -2.0, 3.0, 0.0, 0.25]);
        let k = t2(4, 3, &[1.0, 2.0, 3.0, 1.0, 2.0, 3.0, 1.0, 2.0, 3.0, 1.0, 2.0, 3.0]);
        let s = sl2_scores(&q, &k).unwrap();
        for v in s.data() {
            assert!((v - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn sl2_matches_negative_squared_distance_route() {
        let mut rng = Rng::seed(4);
        for _ in 0..20 {
            let n = 2 + rng.below(6);
            let d = 1 + rng.below(8);
            let q = Tensor::randn(vec![n, d], &mut rng);
            let k = Tensor::randn(vec![n, d], &mut rng);
            let fast = sl2_scores(&q, &k).unwrap();
            // Independent route: explicit pairwise distances.
            let scale = 1.0 / (d as f64).sqrt();
            for i in 0..n {
                let mut logits = Vec::with_capacity(n);
                for j in 0..n {
                    let dist2: f64 = (0..d)
                        .map(|c| {
                            let diff = q.data()[i * d + c] - k.data()[j * d + c];
                            diff * diff
                        })
                        .sum();
                    logits.push(-0.5 * scale * dist2);
                }
                let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
                let z: f64 = exps.iter().sum();
                for j in 0..n {
                    assert!(
                        (fast.data()[i * n + j] - exps[j] / z).abs() < 1e-12,
                        "row {i} col {j}"
                    );
                }
            }
        }
    }

    #[test]
    fn cosine_ignores_key_magnitude() {
        let q = t2(1, 2, &[1.0, 1.0]);
        let k = t2(2, 2, &[0.3, 0.1, 3.0, 1.0]);
        let s = cosine_scores(&q, &k, 1.0).unwrap();
        assert!((s.data()[0] - 0.5).abs() < 1e-12);
        assert!((s.data()[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn cosine_orthogonal_keys_are_uniform() {
        let q = t2(1, 2, &[1.0, 0.0]);
        let k = t2(2, 2, &[0.0, 1.0, 0.0, -2.0]);
        let s = cosine_scores(&q, &k, 0.7).unwrap();
        assert!((s.data()[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn cosine_small_tau_sharpens_to_argmax() {
        let q = t2(1, 2, &[1.0, 0.0]);
        let k = t2(3, 2, &[1.0, 0.2, 1.0, 0.1, 0.5, 1.0]);
        let s = cosine_scores(&q, &k, 1e-3).unwrap();
        assert!(s.data()[1] > 0.999, "{:?}", s.data());
    }

    #[test]
    fn cosine_rejects_zero_norm_rows() {
        let q = t2(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        let k = t2(1, 2, &[1.0, 1.0]);
        let err = cosine_scores(&q, &k, 1.0).unwrap_err();
        assert!(err.to_string().contains("query row 1"));
    }

    #[test]
    fn sdp_saturates_at_large_magnitudes() {
        // The softmax-saturation pitfall: scaling tokens up drives the
        // gradient through sdp scores toward zero.
        let grad_norm = |scale: f64| {
            let mut rng = Rng::seed(77);
            let q = Tensor::randn(vec![3, 4], &mut rng).scale(scale);
            let k = Tensor::randn(vec![3, 4], &mut rng).scale(scale);
            let tape = crate::tensor::Tape::new();
            let qt = tape.watch(&q);
            // A non-constant functional of the scores: the first column's
            // total weight (row sums alone are constant 1).
            let col0 = Tensor::from_vec(vec![3], vec![1.0, 0.0, 0.0]).unwrap();
            let loss = sdp_scores(&qt, &k).unwrap().mul(&col0).unwrap().sum_all();
            loss.backward().unwrap();
            qt.grad_or_zeros().data().iter().map(|g| g * g).sum::<f64>().sqrt()
        };
        let small = grad_norm(1.0);
        let large = grad_norm(40.0);
        assert!(large < small * 1e-3, "saturation missing: {large} vs {small}");
    }

    #[test]
    fn sdp_query_scaling_only_changes_sharpness() {
        let mut rng = Rng::seed(12);
        for _ in 0..20 {
            let q = Tensor::randn(vec![4, 6], &mut rng);
            let k = Tensor::randn(vec![5, 6], &mut rng);
            let base = sdp_scores(&q, &k).unwrap();
            for c in [0.5, 3.0, 17.0] {
                let scaled = sdp_scores(&q.scale(c), &k).unwrap();
                for r in 0..4 {
                    let argmax = |t: &Tensor| {
                        (0..5).max_by(|a, b| {
                            t.data()[r * 5 + a].total_cmp(&t.data()[r * 5 + b])
                        })
                    };
                    assert_eq!(argmax(&base), argmax(&scaled));
                }
            }
        }
    }

    fn urpe_params(dm: usize, h: usize, d_pe: usize, seed: u64) -> AttentionParams {
        let mut rng = Rng::seed(seed);
        AttentionParams::init(AttentionKind::Sl2Urpe, dm, h, d_pe, &mut rng)
    }

    #[test]
    fn neutral_urpe_equals_multi_head_sl2() {
        let mut rng = Rng::seed(40);
        let n = 5;
        let (dm, h, d_pe) = (8, 2, 3);
        let mut params = urpe_params(dm, h, d_pe, 7);
        for head in &mut params.heads {
            let urpe = head.urpe.as_mut().unwrap();
            urpe.phi_w = Tensor::zeros(vec![d_pe, 1]);
            urpe.phi_b = Tensor::ones(vec![1]);
            urpe.theta_w = Tensor::zeros(vec![d_pe, 1]);
            urpe.theta_b = Tensor::zeros(vec![1]);
        }
        let mut plain = params.clone();
        plain.kind = AttentionKind::Sl2;
        for head in &mut plain.heads {
            head.urpe = None;
        }
        let x = Tensor::randn(vec![n, dm], &mut rng);
        let p = Tensor::randn(vec![n * n, d_pe], &mut rng);
        let with_urpe = multi_head(&x, Some(&p), &params, None, None).unwrap();
        let without = multi_head(&x, None, &plain, None, None).unwrap();
        for (a, b) in with_urpe.data().iter().zip(without.data()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn zero_phi_silences_a_head() {
        let mut rng = Rng::seed(41);
        let n = 4;
        let (dm, h, d_pe) = (8, 2, 3);
        let mut params = urpe_params(dm, h, d_pe, 8);
        let urpe = params.heads[0].urpe.as_mut().unwrap();
        urpe.phi_w = Tensor::zeros(vec![d_pe, 1]);
        urpe.phi_b = Tensor::zeros(vec![1]);
        let x = Tensor::randn(vec![n, dm], &mut rng);
        let p = Tensor::randn(vec![n * n, d_pe], &mut rng);
        let (_, alpha) = sl2_urpe_head_scores(&x, &p, &params.heads[0], None).unwrap();
        assert!(alpha.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn inner_softmax_rows_sum_to_one_with_theta_bias() {
        let mut rng = Rng::seed(42);
        let n = 6;
        let (dm, h, d_pe) = (12, 3, 4);
        let mut params = urpe_params(dm, h, d_pe, 9);
        for head in &mut params.heads {
            let urpe = head.urpe.as_mut().unwrap();
            urpe.theta_w = Tensor::randn(vec![d_pe, 1], &mut rng).scale(0.3);
            urpe.theta_b = Tensor::randn(vec![1], &mut rng);
        }
        let x = Tensor::randn(vec![n, dm], &mut rng);
        let p = Tensor::randn(vec![n * n, d_pe], &mut rng);
        for head in &params.heads {
            let (inner, _) = sl2_urpe_head_scores(&x, &p, head, None).unwrap();
            for r in 0..n {
                let sum: f64 = inner.data()[r * n..(r + 1) * n].iter().sum();
                assert!((sum - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn masked_pairs_get_zero_weight_and_all_masked_rows_error() {
        let mut rng = Rng::seed(43);
        let n = 3;
        let params = urpe_params(6, 2, 2, 10);
        let x = Tensor::randn(vec![n, 6], &mut rng);
        let p = Tensor::randn(vec![n * n, 2], &mut rng);
        let mut keep = vec![true; n * n];
        keep[2] = false; // pair (0, 2)
        let mask = PairMask::new(n, keep).unwrap();
        let (inner, alpha) = sl2_urpe_head_scores(&x, &p, &params.heads[0], Some(&mask)).unwrap();
        assert_eq!(inner.data()[2], 0.0);
        assert_eq!(alpha.data()[2], 0.0);
        let row0: f64 = inner.data()[0..n].iter().sum();
        assert!((row0 - 1.0).abs() < 1e-12);

        let mask = PairMask::new(n, {
            let mut k = vec![true; n * n];
            for j in 0..n {
                k[n + j] = false; // exclude every key for row 1
            }
            k
        })
        .unwrap();
        let err = sl2_urpe_head_scores(&x, &p, &params.heads[0], Some(&mask)).unwrap_err();
        assert!(err.to_string().contains("row 1"));
    }

    #[test]
    fn single_head_multi_head_equals_head_op() {
        let mut rng = Rng::seed(44);
        let n = 4;
        let params = urpe_params(6, 1, 3, 11);
        let x = Tensor::randn(vec![n, 6], &mut rng);
        let p = Tensor::randn(vec![n * n, 3], &mut rng);
        let full = multi_head(&x, Some(&p), &params, None, None).unwrap();
        let (_, alpha) = sl2_urpe_head_scores(&x, &p, &params.heads[0], None).unwrap();
        let by_hand = alpha
            .matmul(&x.matmul(&params.heads[0].w_v).unwrap())
            .unwrap()
            .matmul(&params.w_o)
            .unwrap();
        for (a, b) in full.data().iter().zip(by_hand.data()) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn zero_output_projection_zeroes_everything() {
        let mut rng = Rng::seed(45);
        let n = 4;
        let mut params = urpe_params(8, 2, 3, 12);
        params.w_o = Tensor::zeros(vec![8, 8]);
        let x = Tensor::randn(vec![n, 8], &mut rng);
        let p = Tensor::randn(vec![n * n, 3], &mut rng);
        let out = multi_head(&x, Some(&p), &params, None, None).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn permutation_equivariance_of_multi_head() {
        let mut rng = Rng::seed(46);
        let n = 5;
        let (dm, d_pe) = (8, 3);
        let mut params = urpe_params(dm, 2, d_pe, 13);
        for head in &mut params.heads {
            let urpe = head.urpe.as_mut().unwrap();
            urpe.phi_w = Tensor::randn(vec![d_pe, 1], &mut rng).scale(0.2);
            urpe.theta_w = Tensor::randn(vec![d_pe, 1], &mut rng).scale(0.2);
        }
        let x = Tensor::randn(vec![n, dm], &mut rng);
        let p = Tensor::randn(vec![n * n, d_pe], &mut rng);
        let perm = rng.permutation(n);

        let out = multi_head(&x, Some(&p), &params, None, None).unwrap();

        // Permute x rows and p on both pair axes.
        let mut xp = vec![0.0; n * dm];
        for i in 0..n {
            xp[perm[i] * dm..(perm[i] + 1) * dm].copy_from_slice(&x.data()[i * dm..(i + 1) * dm]);
        }
        let mut pp = vec![0.0; n * n * d_pe];
        for i in 0..n {
            for j in 0..n {
                let dst = (perm[i] * n + perm[j]) * d_pe;
                let src = (i * n + j) * d_pe;
                pp[dst..dst + d_pe].copy_from_slice(&p.data()[src..src + d_pe]);
            }
        }
        let out_p = multi_head(
            &Tensor::from_vec(vec![n, dm], xp).unwrap(),
            Some(&Tensor::from_vec(vec![n * n, d_pe], pp).unwrap()),
            &params,
            None,
            None,
        )
        .unwrap();
        for i in 0..n {
            for c in 0..dm {
                let a = out.data()[i * dm + c];
                let b = out_p.data()[perm[i] * dm + c];
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn gradcheck_through_full_urpe_attention() {
        let mut rng = Rng::seed(47);
        let n = 4;
        let (dm, d_pe) = (6, 3);
        let mut params = urpe_params(dm, 2, d_pe, 14);
        for head in &mut params.heads {
            let urpe = head.urpe.as_mut().unwrap();
            urpe.phi_w = Tensor::randn(vec![d_pe, 1], &mut rng).scale(0.3);
            urpe.theta_w = Tensor::randn(vec![d_pe, 1], &mut rng).scale(0.3);
        }
        let x = Tensor::randn(vec![n, dm], &mut rng);
        let p = Tensor::randn(vec![n * n, d_pe], &mut rng);
        let err = crate::tensor::grad_check(
            |x| Ok(sl2_urpe_attention(x, &p, &params, None)?.square().sum_all()),
            &x,
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }
}
