//! AdamW with decoupled weight decay, plus the warmup/cosine learning-rate
//! schedule used by every training loop in this crate.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Per-parameter optimizer state for AdamW.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub lr: f64,
    pub betas: (f64, f64),
    pub weight_decay: f64,
    pub eps: f64,
}

impl OptimizerState {
    pub fn new(param_sizes: &[usize], lr: f64, weight_decay: f64) -> OptimizerState {
        OptimizerState {
            step: 0,
            m: param_sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: param_sizes.iter().map(|&n| vec![0.0; n]).collect(),
            lr,
            betas: (0.9, 0.999),
            weight_decay,
            eps: 1e-8,
        }
    }

    pub fn for_params(params: &[Tensor], lr: f64, weight_decay: f64) -> OptimizerState {
        let sizes: Vec<usize> = params.iter().map(|p| p.numel()).collect();
        OptimizerState::new(&sizes, lr, weight_decay)
    }
}

/// One AdamW update. Weight decay is decoupled: parameters are first scaled
/// by `1 - lr * wd`, then moved along the bias-corrected moment estimate.
pub fn adamw_step(
    state: &mut OptimizerState,
    params: &mut [Tensor],
    grads: &[Tensor],
) -> Result<()> {
    assert_eq!(params.len(), grads.len(), "params/grads length mismatch");
    assert_eq!(params.len(), state.m.len(), "optimizer state size mismatch");
    for (i, g) in grads.iter().enumerate() {
        if g.data().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteGradient {
                name: format!("param {i}"),
            });
        }
        if g.numel() != params[i].numel() {
            return Err(Error::ShapeMismatch {
                op: "adamw_step",
                lhs: params[i].shape().to_vec(),
                rhs: g.shape().to_vec(),
            });
        }
    }
    state.step += 1;
    let (b1, b2) = state.betas;
    let bc1 = 1.0 - b1.powi(state.step as i32);
    let bc2 = 1.0 - b2.powi(state.step as i32);
    for (i, param) in params.iter_mut().enumerate() {
        let g = grads[i].data();
        let mut new_data = param.data().to_vec();
        let m = &mut state.m[i];
        let v = &mut state.v[i];
        for j in 0..new_data.len() {
            m[j] = b1 * m[j] + (1.0 - b1) * g[j];
            v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            new_data[j] *= 1.0 - state.lr * state.weight_decay;
            new_data[j] -= state.lr * m_hat / (v_hat.sqrt() + state.eps);
        }
        *param = Tensor::from_vec(param.shape().to_vec(), new_data)?;
    }
    Ok(())
}

/// Learning rate at `step`: linear ramp from 0 to `lr_max` over `warmup`
/// steps, then cosine annealing to 0 at `total`. Steps past `total` clamp.
pub fn cosine_lr(step: u64, warmup: u64, total: u64, lr_max: f64) -> f64 {
    let step = step.min(total);
    if step < warmup {
        return lr_max * step as f64 / warmup as f64;
    }
    if total == warmup {
        return lr_max;
    }
    let progress = (step - warmup) as f64 / (total - warmup) as f64;
    lr_max * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tape;

    #[test]
    fn zero_grad_zero_decay_is_identity() {
        let mut params = vec![Tensor::from_vec(vec![3], vec![1.0, -2.0, 3.0]).unwrap()];
        let grads = vec![Tensor::zeros(vec![3])];
        let mut state = OptimizerState::for_params(&params, 0.1, 0.0);
        let before = params[0].data().to_vec();
        adamw_step(&mut state, &mut params, &grads).unwrap();
        assert_eq!(params[0].data(), &before[..]);
    }

    #[test]
    fn first_step_is_sign_like() {
        // Hand-computed single step: m_hat = g, v_hat = g^2, so the update is
        // -lr * g / (|g| + eps), magnitude ~ lr.
        let lr = 0.05;
        let g = 0.7;
        let mut params = vec![Tensor::scalar(2.0)];
        let grads = vec![Tensor::scalar(g)];
        let mut state = OptimizerState::for_params(&params, lr, 0.0);
        adamw_step(&mut state, &mut params, &grads).unwrap();
        let expected = 2.0 - lr * g / (g.abs() + 1e-8);
        assert!((params[0].item() - expected).abs() < 1e-15);
        assert!((params[0].item() - (2.0 - lr)).abs() < 1e-8);
    }

    #[test]
    fn decay_only_scales_parameters() {
        let mut params = vec![Tensor::scalar(4.0)];
        let grads = vec![Tensor::scalar(0.0)];
        let mut state = OptimizerState::for_params(&params, 0.01, 0.1);
        adamw_step(&mut state, &mut params, &grads).unwrap();
        assert!((params[0].item() - 4.0 * (1.0 - 0.01 * 0.1)).abs() < 1e-15);
    }

    #[test]
    fn nan_gradient_is_rejected() {
        let mut params = vec![Tensor::scalar(1.0)];
        let grads = vec![Tensor::scalar(f64::NAN)];
        let mut state = OptimizerState::for_params(&params, 0.01, 0.0);
        let err = adamw_step(&mut state, &mut params, &grads).unwrap_err();
        assert!(err.to_string().contains("non-finite gradient"));
    }

    #[test]
    fn step_counter_increases() {
        let mut params = vec![Tensor::scalar(1.0)];
        let grads = vec![Tensor::scalar(0.1)];
        let mut state = OptimizerState::for_params(&params, 0.01, 0.0);
        for expect in 1..=5 {
            adamw_step(&mut state, &mut params, &grads).unwrap();
            assert_eq!(state.step, expect);
        }
    }

    #[test]
    fn cosine_lr_endpoints() {
        assert_eq!(cosine_lr(0, 10, 100, 3.0), 0.0);
        assert_eq!(cosine_lr(10, 10, 100, 3.0), 3.0);
        // Exactly midway between warmup and total: cos(pi/2) = 0.
        assert!((cosine_lr(55, 10, 100, 3.0) - 1.5).abs() < 1e-12);
        assert!(cosine_lr(100, 10, 100, 3.0).abs() < 1e-12);
        // Clamps past the end.
        assert!(cosine_lr(250, 10, 100, 3.0).abs() < 1e-12);
    }

    #[test]
    fn optimization_actually_descends() {
        // Minimize (x - 3)^2 from 0; a few hundred AdamW steps get close.
        let mut params = vec![Tensor::scalar(0.0)];
        let mut state = OptimizerState::for_params(&params, 0.1, 0.0);
        for _ in 0..300 {
            let tape = Tape::new();
            let x = tape.watch(&params[0]);
            let loss = x.add_scalar(-3.0).square().sum_all();
            loss.backward().unwrap();
            let grads = vec![x.grad_or_zeros()];
            adamw_step(&mut state, &mut params, &grads).unwrap();
        }
        assert!((params[0].item() - 3.0).abs() < 1e-2);
    }
}
