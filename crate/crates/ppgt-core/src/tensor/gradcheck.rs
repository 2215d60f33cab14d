//! Central-difference verification of analytic gradients.

use super::{Tape, Tensor};
use crate::error::{Error, Result};

/// Compare the analytic gradient of `f` at `x` against central finite
/// differences with step `h`. Returns the maximum over coordinates of
/// `|analytic - numeric| / max(1, |analytic|)`.
///
/// `f` must map a tensor to a scalar tensor and be deterministic; it is
/// evaluated once on a tracked copy of `x` and twice per coordinate on
/// untracked perturbations.
pub fn grad_check<F>(f: F, x: &Tensor, h: f64) -> Result<f64>
where
    F: Fn(&Tensor) -> Result<Tensor>,
{
    if !(h > 0.0 && h <= 1e-3) {
        return Err(Error::Config(format!("grad_check step h={h} outside (0, 1e-3]")));
    }
    let tape = Tape::new();
    let tracked = tape.watch(x);
    let loss = f(&tracked)?;
    loss.backward()?;
    let analytic = tracked.grad_or_zeros();
    let analytic = analytic.data();

    let mut max_rel = 0.0_f64;
    let base = x.data();
    for i in 0..x.numel() {
        if !analytic[i].is_finite() {
            return Err(Error::NonFiniteGradCheck { coordinate: i });
        }
        let mut plus = base.to_vec();
        plus[i] += h;
        let mut minus = base.to_vec();
        minus[i] -= h;
        let fp = f(&Tensor::from_vec(x.shape().to_vec(), plus)?)?.item();
        let fm = f(&Tensor::from_vec(x.shape().to_vec(), minus)?)?.item();
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::NonFiniteGradCheck { coordinate: i });
        }
        let numeric = (fp - fm) / (2.0 * h);
        let rel = (analytic[i] - numeric).abs() / analytic[i].abs().max(1.0);
        max_rel = max_rel.max(rel);
    }
    Ok(max_rel)
}

/// Gradient check for a function of several named tensors, checking each in
/// turn while holding the others fixed. Returns the worst (name, error) pair.
pub fn grad_check_named<F>(f: F, params: &[(String, Tensor)], h: f64) -> Result<(String, f64)>
where
    F: Fn(&[Tensor]) -> Result<Tensor>,
{
    let mut worst = (String::new(), 0.0_f64);
    let tensors: Vec<Tensor> = params.iter().map(|(_, t)| t.clone()).collect();
    for (i, (name, t)) in params.iter().enumerate() {
        let per_param = |x: &Tensor| {
            let mut inputs = tensors.clone();
            inputs[i] = x.clone();
            f(&inputs)
        };
        let err = grad_check(per_param, t, h).map_err(|e| match e {
            Error::NonFiniteGradCheck { coordinate } => Error::NonFiniteGradient {
                name: format!("{name}[{coordinate}]"),
            },
            other => other,
        })?;
        if err > worst.1 {
            worst = (name.clone(), err);
        }
    }
    Ok(worst)
}
