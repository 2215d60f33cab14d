//! The fast invariant suite behind `ppgt check`.
//!
//! Each check is named so a regression points at the algebraic fact it
//! violates rather than at a line number.

use ppgt_core::attention::{sl2_scores, sl2_urpe_attention, AttentionKind, AttentionParams};
use ppgt_core::norm::{ada_rmsn, layer_norm, rmsn, NormKind, NormParams};
use ppgt_core::rng::Rng;
use ppgt_core::tensor::{grad_check, Tensor};

pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Softmax shift invariance on a dyadic grid with integer shifts, where the
/// shifted logits are exactly representable: outputs must be bit-identical.
fn softmax_shift() -> CheckResult {
    let mut rng = Rng::seed(101);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let n = 2 + rng.below(6);
        let m = 2 + rng.below(6);
        let grid: Vec<f64> = (0..n * m)
            .map(|_| {
                let k = rng.below(10 << 20) as f64 - (5 << 20) as f64;
                k / (1u64 << 20) as f64
            })
            .collect();
        let shift = rng.below(2001) as f64 - 1000.0;
        let z = Tensor::from_vec(vec![n, m], grid.clone()).unwrap();
        let zs = Tensor::from_vec(vec![n, m], grid.iter().map(|v| v + shift).collect()).unwrap();
        let a = z.softmax_rows(None).unwrap();
        let b = zs.softmax_rows(None).unwrap();
        worst = worst.max(max_abs_diff(a.data(), b.data()));
    }
    CheckResult {
        name: "softmax-shift",
        passed: worst == 0.0,
        detail: format!("max deviation {worst:e} (must be exactly 0)"),
    }
}

/// sl2 scores must equal the softmax of the negative scaled squared
/// Euclidean distance, computed by an independent route.
fn eq4_identity() -> CheckResult {
    let mut rng = Rng::seed(102);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let n = 2 + rng.below(15);
        let d = [2usize, 8, 32][rng.below(3)];
        let q = Tensor::randn(vec![n, d], &mut rng);
        let k = Tensor::randn(vec![n, d], &mut rng);
        let fast = sl2_scores(&q, &k).unwrap();
        let scale = 1.0 / (d as f64).sqrt();
        for i in 0..n {
            let logits: Vec<f64> = (0..n)
                .map(|j| {
                    let dist2: f64 = (0..d)
                        .map(|c| {
                            let diff = q.data()[i * d + c] - k.data()[j * d + c];
                            diff * diff
                        })
                        .sum();
                    -0.5 * scale * dist2
                })
                .collect();
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
            let z: f64 = exps.iter().sum();
            for j in 0..n {
                worst = worst.max((fast.data()[i * n + j] - exps[j] / z).abs());
            }
        }
    }
    CheckResult {
        name: "eq4-identity",
        passed: worst < 1e-12,
        detail: format!("max |sl2 - distance softmax| = {worst:e} (< 1e-12)"),
    }
}

/// LayerNorm and RMSNorm with eps = 0 are invariant to positive rescaling.
fn prop1_invariance() -> CheckResult {
    let mut rng = Rng::seed(103);
    let ln = NormParams::new(NormKind::Ln, 16).with_eps(0.0);
    let rs = NormParams::new(NormKind::Rmsn, 16).with_eps(0.0);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let x = Tensor::randn(vec![16], &mut rng);
        for c in [0.5, 2.0, 10.0] {
            let cx = x.scale(c);
            worst = worst.max(max_abs_diff(
                layer_norm(&cx, &ln).unwrap().data(),
                layer_norm(&x, &ln).unwrap().data(),
            ));
            worst = worst.max(max_abs_diff(
                rmsn(&cx, &rs).unwrap().data(),
                rmsn(&x, &rs).unwrap().data(),
            ));
        }
    }
    CheckResult {
        name: "prop1-invariance",
        passed: worst < 1e-12,
        detail: format!("max |norm(cx) - norm(x)| = {worst:e} (< 1e-12)"),
    }
}

fn adarmsn_init() -> CheckResult {
    let mut rng = Rng::seed(104);
    let ada = NormParams::new(NormKind::Adarmsn, 16).with_eps(0.0);
    let rs = NormParams::new(NormKind::Rmsn, 16).with_eps(0.0);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let x = Tensor::randn(vec![16], &mut rng);
        worst = worst.max(max_abs_diff(
            ada_rmsn(&x, &ada).unwrap().data(),
            rmsn(&x, &rs).unwrap().data(),
        ));
    }
    CheckResult {
        name: "adarmsn-init",
        passed: worst < 1e-12,
        detail: format!("max |ada(x) - rmsn(x)| at init = {worst:e} (< 1e-12)"),
    }
}

fn adarmsn_identity() -> CheckResult {
    let mut rng = Rng::seed(105);
    let mut ada = NormParams::new(NormKind::Adarmsn, 16).with_eps(0.0);
    ada.alpha = Tensor::ones(vec![16]);
    ada.beta = Tensor::zeros(vec![16]);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let x = Tensor::randn(vec![16], &mut rng);
        worst = worst.max(max_abs_diff(ada_rmsn(&x, &ada).unwrap().data(), x.data()));
    }
    CheckResult {
        name: "adarmsn-identity",
        passed: worst < 1e-12,
        detail: format!("max |ada(x) - x| with alpha=1, beta=0 = {worst:e} (< 1e-12)"),
    }
}

/// Gradient checks on small shapes: every norm plus sl2-urpe attention.
fn grad_small() -> CheckResult {
    let mut rng = Rng::seed(106);
    let mut worst: (f64, &'static str) = (0.0, "none");
    let mut track = |err: f64, what: &'static str| {
        if err > worst.0 {
            worst = (err, what);
        }
    };

    let x = Tensor::randn(vec![3, 8], &mut rng);
    let ln = NormParams::new(NormKind::Ln, 8);
    track(
        grad_check(|x| Ok(layer_norm(x, &ln)?.square().sum_all()), &x, 1e-6).unwrap(),
        "ln",
    );
    let rs = NormParams::new(NormKind::Rmsn, 8);
    track(
        grad_check(|x| Ok(rmsn(x, &rs)?.square().sum_all()), &x, 1e-6).unwrap(),
        "rmsn",
    );
    let mut ada = NormParams::new(NormKind::Adarmsn, 8);
    ada.alpha = Tensor::randn(vec![8], &mut rng);
    ada.beta = Tensor::randn(vec![8], &mut rng);
    track(
        grad_check(|x| Ok(ada_rmsn(x, &ada)?.square().sum_all()), &x, 1e-6).unwrap(),
        "adarmsn",
    );
    track(
        grad_check(
            |x| {
                let mut bn = NormParams::new(NormKind::Bn, 8);
                Ok(ppgt_core::norm::batch_norm_1d(x, &mut bn, true)?.square().sum_all())
            },
            &x,
            1e-6,
        )
        .unwrap(),
        "bn",
    );

    let n = 4;
    let (dm, d_pe) = (6, 3);
    let params = AttentionParams::init(AttentionKind::Sl2Urpe, dm, 2, d_pe, &mut rng);
    let p = Tensor::randn(vec![n * n, d_pe], &mut rng);
    let xa = Tensor::randn(vec![n, dm], &mut rng);
    track(
        grad_check(
            |x| Ok(sl2_urpe_attention(x, &p, &params, None)?.square().sum_all()),
            &xa,
            1e-6,
        )
        .unwrap(),
        "sl2-urpe",
    );

    CheckResult {
        name: "grad-small",
        passed: worst.0 < 1e-4,
        detail: format!("worst rel err {:e} ({}) (< 1e-4)", worst.0, worst.1),
    }
}

/// Run the whole suite in order.
pub fn run_all() -> Vec<CheckResult> {
    vec![
        softmax_shift(),
        eq4_identity(),
        prop1_invariance(),
        adarmsn_init(),
        adarmsn_identity(),
        grad_small(),
    ]
}
