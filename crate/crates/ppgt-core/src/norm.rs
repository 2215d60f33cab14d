//! Token-wise and batch normalization layers.
//!
//! LayerNorm and RMSNorm are strictly magnitude-invariant; adaptive RMSNorm
//! recovers a learnable amount of magnitude information by scaling each token
//! with `gamma'(x) = ||alpha * x + beta|| / sqrt(D)`. At initialization
//! (`alpha = 0`, `beta = 1`) it coincides with plain RMSNorm, and with
//! `alpha = 1`, `beta = 0` it is the identity map.
//!
//! Epsilon enters the token-wise denominators as `max(rms, eps)`; invariance
//! tests that demand exactness set `eps = 0`.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormKind {
    Ln,
    Rmsn,
    Adarmsn,
    Bn,
}

impl NormKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            NormKind::Ln => "ln",
            NormKind::Rmsn => "rmsn",
            NormKind::Adarmsn => "adarmsn",
            NormKind::Bn => "bn",
        }
    }

    pub fn parse(s: &str) -> Result<NormKind> {
        match s {
            "ln" => Ok(NormKind::Ln),
            "rmsn" => Ok(NormKind::Rmsn),
            "adarmsn" => Ok(NormKind::Adarmsn),
            "bn" => Ok(NormKind::Bn),
            other => Err(Error::Config(format!("unknown norm kind {other:?}"))),
        }
    }
}

/// Parameters of one normalization layer. The roles of `gamma`, `beta`, and
/// `alpha` vary by kind; unused ones stay at their neutral values.
#[derive(Debug, Clone)]
pub struct NormParams {
    pub kind: NormKind,
    pub gamma: Tensor,
    pub beta: Tensor,
    /// adarmsn only.
    pub alpha: Tensor,
    pub eps: f64,
    /// bn only.
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
}

impl NormParams {
    /// Fresh parameters: `gamma = 1`, `beta = 0` — except adarmsn, which
    /// starts at `alpha = 0`, `beta = 1` so that it equals plain RMSN.
    pub fn new(kind: NormKind, d: usize) -> NormParams {
        let (eps, beta) = match kind {
            NormKind::Bn => (1e-5, Tensor::zeros(vec![d])),
            NormKind::Adarmsn => (1e-6, Tensor::ones(vec![d])),
            _ => (1e-6, Tensor::zeros(vec![d])),
        };
        NormParams {
            kind,
            gamma: Tensor::ones(vec![d]),
            beta,
            alpha: Tensor::zeros(vec![d]),
            eps,
            running_mean: vec![0.0; d],
            running_var: vec![1.0; d],
            momentum: 0.1,
        }
    }

    pub fn with_eps(mut self, eps: f64) -> NormParams {
        self.eps = eps;
        self
    }

    pub fn d(&self) -> usize {
        self.gamma.numel()
    }

    fn check_d(&self, x: &Tensor, op: &'static str) -> Result<usize> {
        let d = *x.shape().last().ok_or(Error::DimMismatch {
            op,
            expected: 1,
            got: 0,
        })?;
        if d != self.d() {
            return Err(Error::DimMismatch {
                op,
                expected: self.d(),
                got: d,
            });
        }
        Ok(d)
    }

    /// Tensors that participate in training, in a fixed order.
    pub fn trainable(&self) -> Vec<(&'static str, Tensor)> {
        match self.kind {
            NormKind::Rmsn => vec![("gamma", self.gamma.clone())],
            NormKind::Adarmsn => vec![("alpha", self.alpha.clone()), ("beta", self.beta.clone())],
            _ => vec![("gamma", self.gamma.clone()), ("beta", self.beta.clone())],
        }
    }

    /// Inverse of [`NormParams::trainable`].
    pub fn set_trainable(&mut self, tensors: &[Tensor]) {
        match self.kind {
            NormKind::Rmsn => {
                self.gamma = tensors[0].clone();
            }
            NormKind::Adarmsn => {
                self.alpha = tensors[0].clone();
                self.beta = tensors[1].clone();
            }
            _ => {
                self.gamma = tensors[0].clone();
                self.beta = tensors[1].clone();
            }
        }
    }
}

/// Expand a per-token scalar (shape `x.shape[..-1]`) back over the last axis.
/// Rank-1 inputs reduce to a plain scalar, which broadcasts as-is.
fn per_token(t: Tensor, x: &Tensor, d: usize) -> Tensor {
    if x.shape().len() == 1 {
        t
    } else {
        t.broadcast_last(d)
    }
}

/// LayerNorm: center each token, scale to unit RMS, apply the affine pair.
pub fn layer_norm(x: &Tensor, params: &NormParams) -> Result<Tensor> {
    debug_assert_eq!(params.kind, NormKind::Ln);
    let d = params.check_d(x, "layer_norm")?;
    let centered = x.sub(&per_token(x.mean_last()?, x, d))?;
    centered
        .rms_normalize(params.eps)
        .mul(&params.gamma)?
        .add(&params.beta)
}

/// RMSNorm: scale each token to unit RMS, apply gamma.
pub fn rmsn(x: &Tensor, params: &NormParams) -> Result<Tensor> {
    debug_assert_eq!(params.kind, NormKind::Rmsn);
    params.check_d(x, "rmsn")?;
    x.rms_normalize(params.eps).mul(&params.gamma)
}

/// Adaptive RMSNorm: unit-RMS direction times the learned magnitude
/// `gamma'(x) = ||alpha * x + beta|| / sqrt(D)`. Zero tokens map to zero.
pub fn ada_rmsn(x: &Tensor, params: &NormParams) -> Result<Tensor> {
    debug_assert_eq!(params.kind, NormKind::Adarmsn);
    let d = params.check_d(x, "ada_rmsn")?;
    let normalized = x.rms_normalize(params.eps);
    let gain = x
        .mul(&params.alpha)?
        .add(&params.beta)?
        .l2_norm_last()
        .scale(1.0 / (d as f64).sqrt());
    normalized.mul(&per_token(gain, x, d))
}

/// 1-D BatchNorm over a `[B, D]` batch. Training mode normalizes by batch
/// statistics (biased variance) and folds them into the running averages;
/// eval mode uses the running statistics. Training needs `B >= 2`.
pub fn batch_norm_1d(x: &Tensor, params: &mut NormParams, training: bool) -> Result<Tensor> {
    debug_assert_eq!(params.kind, NormKind::Bn);
    let d = params.check_d(x, "batch_norm_1d")?;
    if x.shape().len() != 2 {
        return Err(Error::DimMismatch {
            op: "batch_norm_1d",
            expected: 2,
            got: x.shape().len(),
        });
    }
    let b = x.shape()[0];
    let normalized = if training {
        if b < 2 {
            return Err(Error::DegenerateBatch { got: b });
        }
        let mean = x.mean_axis(0)?;
        let var = x.sub(&mean)?.square().mean_axis(0)?;
        // Running stats track the unbiased variance, torch-style.
        let unbias = b as f64 / (b - 1) as f64;
        for j in 0..d {
            params.running_mean[j] = (1.0 - params.momentum) * params.running_mean[j]
                + params.momentum * mean.data()[j];
            params.running_var[j] = (1.0 - params.momentum) * params.running_var[j]
                + params.momentum * var.data()[j] * unbias;
        }
        x.sub(&mean)?.div(&var.add_scalar(params.eps).sqrt())?
    } else {
        let mean = Tensor::from_vec(vec![d], params.running_mean.clone())?;
        let var = Tensor::from_vec(vec![d], params.running_var.clone())?;
        x.sub(&mean)?.div(&var.add_scalar(params.eps).sqrt())?
    };
    normalized.mul(&params.gamma)?.add(&params.beta)
}

/// Dispatch on the token-wise kinds (bn needs the mutable entry point).
pub fn apply_token_norm(x: &Tensor, params: &NormParams) -> Result<Tensor> {
    match params.kind {
        NormKind::Ln => layer_norm(x, params),
        NormKind::Rmsn => rmsn(x, params),
        NormKind::Adarmsn => ada_rmsn(x, params),
        NormKind::Bn => Err(Error::Config(
            "batch norm needs batch_norm_1d with a training flag".into(),
        )),
    }
}
