//! Primitive tensor operations and their backward rules.
//!
//! Broadcasting is deliberately narrow: two operands must have equal shapes,
//! or one must be a single element, or the smaller shape must be a suffix of
//! the larger (a `[D]` bias against an `[N, D]` matrix). Anything richer has
//! to be spelled out with an explicit `broadcast_last`.

use std::rc::Rc;

use super::tape::{join_tapes, NodeRef, Tape};
use super::Tensor;
use crate::error::{Error, Result};

/// Operand snapshot saved for the backward pass.
pub(crate) struct Src {
    node: Option<usize>,
    data: Rc<[f64]>,
    shape: Vec<usize>,
}

impl Src {
    fn of(t: &Tensor) -> Src {
        Src {
            node: t.node_ref().map(|n| n.id),
            data: t.data_rc(),
            shape: t.shape().to_vec(),
        }
    }

    fn numel(&self) -> usize {
        self.data.len()
    }
}

pub(crate) enum Op {
    Leaf,
    Add { a: Src, b: Src },
    Sub { a: Src, b: Src },
    Mul { a: Src, b: Src },
    Div { a: Src, b: Src },
    Scale { a: Src, c: f64 },
    AddScalar { a: Src },
    Matmul { a: Src, b: Src, m: usize, k: usize, n: usize },
    Transpose { a: Src, rows: usize, cols: usize },
    Relu { a: Src },
    Sin { a: Src },
    Cos { a: Src },
    Sqrt { a: Src, out: Rc<[f64]> },
    Square { a: Src },
    SumAxis { a: Src, axis: usize },
    MeanAxis { a: Src, axis: usize },
    SumAll { a: Src },
    L2NormLast { a: Src, out: Rc<[f64]> },
    RmsNormalize { a: Src, rms: Vec<f64>, eps: f64 },
    BroadcastLast { a: Src, d: usize },
    ConcatLast { parts: Vec<Src> },
    GatherRows { a: Src, idx: Vec<usize>, row: usize },
    SegmentSum { a: Src, segments: Vec<usize>, row: usize },
    SoftmaxRows { z: Src, mask: Option<Src>, out: Rc<[f64]>, cols: usize },
    Reshape { a: Src },
}

// ---------------------------------------------------------------------------
// forward helpers
// ---------------------------------------------------------------------------

/// Shape of the result of an elementwise binary op, or an error when the
/// shapes are not equal/scalar/suffix-compatible.
fn binary_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<Vec<usize>> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa == sb || b.numel() == 1 {
        return Ok(sa.to_vec());
    }
    if a.numel() == 1 {
        return Ok(sb.to_vec());
    }
    if sa.len() > sb.len() && sa.ends_with(sb) {
        return Ok(sa.to_vec());
    }
    if sb.len() > sa.len() && sb.ends_with(sa) {
        return Ok(sb.to_vec());
    }
    Err(Error::ShapeMismatch {
        op,
        lhs: sa.to_vec(),
        rhs: sb.to_vec(),
    })
}

fn binary_forward(
    op: &'static str,
    a: &Tensor,
    b: &Tensor,
    f: impl Fn(f64, f64) -> f64,
) -> Result<(Vec<usize>, Vec<f64>)> {
    let shape = binary_shape(op, a, b)?;
    let numel: usize = shape.iter().product();
    let (ad, bd) = (a.data(), b.data());
    let (an, bn) = (ad.len(), bd.len());
    let mut out = Vec::with_capacity(numel);
    for i in 0..numel {
        out.push(f(ad[i % an], bd[i % bn]));
    }
    Ok((shape, out))
}

fn record(tape: Option<Tape>, op: Op, shape: Vec<usize>, data: Vec<f64>) -> Tensor {
    let data: Rc<[f64]> = data.into();
    let node = tape.map(|tape| {
        let id = tape.push(op);
        NodeRef { tape, id }
    });
    Tensor::with_node(shape, data, node)
}

/// Reduce an output-sized gradient onto a (possibly broadcast) operand.
/// The suffix-broadcast rule means operand index = output index mod numel.
fn reduce_to(partial: &[f64], numel: usize) -> Vec<f64> {
    if partial.len() == numel {
        return partial.to_vec();
    }
    let mut out = vec![0.0; numel];
    for (i, p) in partial.iter().enumerate() {
        out[i % numel] += p;
    }
    out
}

fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer: usize = shape[..axis].iter().product();
    let len = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    (outer, len, inner)
}

fn reduced_shape(shape: &[usize], axis: usize) -> Vec<usize> {
    let mut s: Vec<usize> = shape.to_vec();
    s.remove(axis);
    if s.is_empty() {
        s.push(1);
    }
    s
}

fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let row = &b[p * n..(p + 1) * n];
            let dst = &mut c[i * n..(i + 1) * n];
            for j in 0..n {
                dst[j] += av * row[j];
            }
        }
    }
    c
}

fn transpose_raw(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; a.len()];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = a[i * cols + j];
        }
    }
    out
}

// ---------------------------------------------------------------------------
// public operations
// ---------------------------------------------------------------------------

impl Tensor {
    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        let (shape, data) = binary_forward("add", self, other, |x, y| x + y)?;
        let tape = join_tapes([self, other])?;
        Ok(record(
            tape,
            Op::Add {
                a: Src::of(self),
                b: Src::of(other),
            },
            shape,
            data,
        ))
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        let (shape, data) = binary_forward("sub", self, other, |x, y| x - y)?;
        let tape = join_tapes([self, other])?;
        Ok(record(
            tape,
            Op::Sub {
                a: Src::of(self),
                b: Src::of(other),
            },
            shape,
            data,
        ))
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        let (shape, data) = binary_forward("mul", self, other, |x, y| x * y)?;
        let tape = join_tapes([self, other])?;
        Ok(record(
            tape,
            Op::Mul {
                a: Src::of(self),
                b: Src::of(other),
            },
            shape,
            data,
        ))
    }

    pub fn div(&self, other: &Tensor) -> Result<Tensor> {
        let (shape, data) = binary_forward("div", self, other, |x, y| x / y)?;
        let tape = join_tapes([self, other])?;
        Ok(record(
            tape,
            Op::Div {
                a: Src::of(self),
                b: Src::of(other),
            },
            shape,
            data,
        ))
    }

    /// Multiply by a plain scalar constant.
    pub fn scale(&self, c: f64) -> Tensor {
        let data: Vec<f64> = self.data().iter().map(|x| c * x).collect();
        let tape = self.node_ref().map(|n| n.tape.clone());
        record(tape, Op::Scale { a: Src::of(self), c }, self.shape().to_vec(), data)
    }

    /// Add a plain scalar constant.
    pub fn add_scalar(&self, c: f64) -> Tensor {
        let data: Vec<f64> = self.data().iter().map(|x| x + c).collect();
        let tape = self.node_ref().map(|n| n.tape.clone());
        record(tape, Op::AddScalar { a: Src::of(self) }, self.shape().to_vec(), data)
    }

    pub fn neg(&self) -> Tensor {
        self.scale(-1.0)
    }

    /// 2-D matrix product.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (sa, sb) = (self.shape(), other.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let data = matmul_raw(self.data(), other.data(), m, k, n);
        let tape = join_tapes([self, other])?;
        Ok(record(
            tape,
            Op::Matmul {
                a: Src::of(self),
                b: Src::of(other),
                m,
                k,
                n,
            },
            vec![m, n],
            data,
        ))
    }

    /// 2-D transpose.
    pub fn transpose(&self) -> Result<Tensor> {
        let s = self.shape();
        if s.len() != 2 {
            return Err(Error::DimMismatch {
                op: "transpose",
                expected: 2,
                got: s.len(),
            });
        }
        let (rows, cols) = (s[0], s[1]);
        let data = transpose_raw(self.data(), rows, cols);
        let tape = self.node_ref().map(|n| n.tape.clone());
        Ok(record(
            tape,
            Op::Transpose {
                a: Src::of(self),
                rows,
                cols,
            },
            vec![cols, rows],
            data,
        ))
    }

    pub fn relu(&self) -> Tensor {
        let data: Vec<f64> = self.data().iter().map(|x| x.max(0.0)).collect();
        let tape = self.node_ref().map(|n| n.tape.clone());
        record(tape, Op::Relu { a: Src::of(self) }, self.shape().to_vec(), data)
    }

    pub fn sin(&self) -> Tensor {
        let data: Vec<f64> = self.data().iter().map(|x| x.sin()).collect();
        let tape = self.node_ref().map(|n| n.tape.clone());
        record(tape, Op::Sin { a: Src::of(self) }, self.shape().to_vec(), data)
    }

    pub fn cos(&self) -> Tensor {
        let data: Vec<f64> = self.data().iter().map(|x| x.cos()).collect();
        let tape = self.node_ref().map(|n| n.tape.clone());
        record(tape, Op::Cos { a: Src::of(self) }, self.shape().to_vec(), data)
    }

    pub fn sqrt(&self) -> Tensor {
        let data: Vec<f64> = self.data().iter().map(|x| x.sqrt()).collect();
        let tape = self.node_ref().map(|n| n.tape.clone());
        let out: Rc<[f64]> = data.clone().into();
        record(
            tape,
            Op::Sqrt {
                a: Src::of(self),
                out,
            },
            self.shape().to_vec(),
            data,
        )
    }

    pub fn square(&self) -> Tensor {
        let data: Vec<f64> = self.data().iter().map(|x| x * x).collect();
        let tape = self.node_ref().map(|n| n.tape.clone());
        record(tape, Op::Square { a: Src::of(self) }, self.shape().to_vec(), data)
    }

    pub fn sum_axis(&self, axis: usize) -> Result<Tensor> {
        self.reduce_axis(axis, false)
    }

    pub fn mean_axis(&self, axis: usize) -> Result<Tensor> {
        self.reduce_axis(axis, true)
    }

    fn reduce_axis(&self, axis: usize, mean: bool) -> Result<Tensor> {
        let s = self.shape();
        if axis >= s.len() {
            return Err(Error::DimMismatch {
                op: "reduce_axis",
                expected: s.len(),
                got: axis,
            });
        }
        let (outer, len, inner) = axis_split(s, axis);
        let mut data = vec![0.0; outer * inner];
        let src = self.data();
        for o in 0..outer {
            for j in 0..len {
                for i in 0..inner {
                    data[o * inner + i] += src[(o * len + j) * inner + i];
                }
            }
        }
        if mean {
            let inv = 1.0 / len as f64;
            for v in &mut data {
                *v *= inv;
            }
        }
        let shape = reduced_shape(s, axis);
        let tape = self.node_ref().map(|n| n.tape.clone());
        let op = if mean {
            Op::MeanAxis { a: Src::of(self), axis }
        } else {
            Op::SumAxis { a: Src::of(self), axis }
        };
        Ok(record(tape, op, shape, data))
    }

    /// Sum over the last axis.
    pub fn sum_last(&self) -> Result<Tensor> {
        self.sum_axis(self.shape().len() - 1)
    }

    /// Mean over the last axis.
    pub fn mean_last(&self) -> Result<Tensor> {
        self.mean_axis(self.shape().len() - 1)
    }

    /// Sum of every element, as a scalar tensor.
    pub fn sum_all(&self) -> Tensor {
        let total: f64 = self.data().iter().sum();
        let tape = self.node_ref().map(|n| n.tape.clone());
        record(tape, Op::SumAll { a: Src::of(self) }, vec![1], vec![total])
    }

    pub fn mean_all(&self) -> Tensor {
        self.sum_all().scale(1.0 / self.numel() as f64)
    }

    /// Euclidean norm over the last axis.
    pub fn l2_norm_last(&self) -> Tensor {
        let s = self.shape();
        let d = *s.last().expect("l2_norm_last on rank-0 tensor");
        let rows = self.numel() / d;
        let src = self.data();
        let mut data = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = &src[r * d..(r + 1) * d];
            data.push(row.iter().map(|x| x * x).sum::<f64>().sqrt());
        }
        let shape = reduced_shape(s, s.len() - 1);
        let tape = self.node_ref().map(|n| n.tape.clone());
        let out: Rc<[f64]> = data.clone().into();
        record(
            tape,
            Op::L2NormLast {
                a: Src::of(self),
                out,
            },
            shape,
            data,
        )
    }

    /// Divide each last-axis row by `max(rms(row), eps)` where
    /// `rms = ||row|| / sqrt(D)`. A row whose clamped denominator is zero
    /// (all-zero row with `eps == 0`) maps to zero, the continuous extension.
    pub fn rms_normalize(&self, eps: f64) -> Tensor {
        let s = self.shape();
        let d = *s.last().expect("rms_normalize on rank-0 tensor");
        let rows = self.numel() / d;
        let sqrt_d = (d as f64).sqrt();
        let src = self.data();
        let mut rms = Vec::with_capacity(rows);
        let mut data = vec![0.0; self.numel()];
        for r in 0..rows {
            let row = &src[r * d..(r + 1) * d];
            let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            let rv = norm / sqrt_d;
            rms.push(rv);
            let denom = rv.max(eps);
            if denom > 0.0 {
                for i in 0..d {
                    data[r * d + i] = row[i] / denom;
                }
            }
        }
        let tape = self.node_ref().map(|n| n.tape.clone());
        record(
            tape,
            Op::RmsNormalize {
                a: Src::of(self),
                rms,
                eps,
            },
            s.to_vec(),
            data,
        )
    }

    /// Repeat each element `d` times along a new trailing axis:
    /// shape `[...]` becomes `[..., d]`.
    pub fn broadcast_last(&self, d: usize) -> Tensor {
        let src = self.data();
        let mut data = Vec::with_capacity(src.len() * d);
        for &v in src {
            for _ in 0..d {
                data.push(v);
            }
        }
        let mut shape = self.shape().to_vec();
        shape.push(d);
        let tape = self.node_ref().map(|n| n.tape.clone());
        record(tape, Op::BroadcastLast { a: Src::of(self), d }, shape, data)
    }

    /// Concatenate along the last axis.
    pub fn concat_last(parts: &[&Tensor]) -> Result<Tensor> {
        assert!(!parts.is_empty(), "concat_last needs at least one tensor");
        let lead = |t: &Tensor| t.shape()[..t.shape().len() - 1].to_vec();
        let first_lead = lead(parts[0]);
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            if p.shape().is_empty() || lead(p) != first_lead {
                return Err(Error::ShapeMismatch {
                    op: "concat_last",
                    lhs: parts[0].shape().to_vec(),
                    rhs: p.shape().to_vec(),
                });
            }
            widths.push(*p.shape().last().unwrap());
        }
        let rows: usize = first_lead.iter().product();
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (p, w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&p.data()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = first_lead;
        shape.push(total);
        let tape = join_tapes(parts.iter().copied())?;
        Ok(record(
            tape,
            Op::ConcatLast {
                parts: parts.iter().map(|p| Src::of(p)).collect(),
            },
            shape,
            data,
        ))
    }

    /// Select rows (leading-axis slices) by index.
    pub fn gather_rows(&self, idx: &[usize]) -> Result<Tensor> {
        let s = self.shape();
        let rows = s[0];
        let width = self.numel() / rows;
        for &i in idx {
            if i >= rows {
                return Err(Error::DimMismatch {
                    op: "gather_rows",
                    expected: rows,
                    got: i,
                });
            }
        }
        let src = self.data();
        let mut data = Vec::with_capacity(idx.len() * width);
        for &i in idx {
            data.extend_from_slice(&src[i * width..(i + 1) * width]);
        }
        let mut shape = s.to_vec();
        shape[0] = idx.len();
        let tape = self.node_ref().map(|n| n.tape.clone());
        Ok(record(
            tape,
            Op::GatherRows {
                a: Src::of(self),
                idx: idx.to_vec(),
                row: width,
            },
            shape,
            data,
        ))
    }

    /// Sum rows into `n_segments` buckets given a per-row segment id
    /// (graph pooling).
    pub fn segment_sum(&self, segments: &[usize], n_segments: usize) -> Result<Tensor> {
        let s = self.shape();
        let rows = s[0];
        if segments.len() != rows {
            return Err(Error::DimMismatch {
                op: "segment_sum",
                expected: rows,
                got: segments.len(),
            });
        }
        for &seg in segments {
            if seg >= n_segments {
                return Err(Error::DimMismatch {
                    op: "segment_sum",
                    expected: n_segments,
                    got: seg,
                });
            }
        }
        let width = self.numel() / rows.max(1);
        let src = self.data();
        let mut data = vec![0.0; n_segments * width];
        for (r, &seg) in segments.iter().enumerate() {
            for i in 0..width {
                data[seg * width + i] += src[r * width + i];
            }
        }
        let mut shape = s.to_vec();
        shape[0] = n_segments;
        let tape = self.node_ref().map(|n| n.tape.clone());
        Ok(record(
            tape,
            Op::SegmentSum {
                a: Src::of(self),
                segments: segments.to_vec(),
                row: width,
            },
            shape,
            data,
        ))
    }

    /// Row softmax of a 2-D tensor with an optional additive mask.
    /// `-inf` mask entries exclude a column; a fully excluded row is an error.
    /// Logits are stabilized by row-max subtraction, which also makes the
    /// result exactly shift-invariant whenever the shifted logits are exact.
    pub fn softmax_rows(&self, mask: Option<&Tensor>) -> Result<Tensor> {
        let s = self.shape();
        if s.len() != 2 {
            return Err(Error::DimMismatch {
                op: "softmax_rows",
                expected: 2,
                got: s.len(),
            });
        }
        let (n, m) = (s[0], s[1]);
        if let Some(mk) = mask {
            if mk.shape() != s {
                return Err(Error::ShapeMismatch {
                    op: "softmax_rows",
                    lhs: s.to_vec(),
                    rhs: mk.shape().to_vec(),
                });
            }
        }
        let zd = self.data();
        let md = mask.map(|t| t.data());
        let mut data = vec![0.0; n * m];
        for r in 0..n {
            let logit = |j: usize| {
                let base = zd[r * m + j];
                match md {
                    Some(mv) => base + mv[r * m + j],
                    None => base,
                }
            };
            let mut max = f64::NEG_INFINITY;
            for j in 0..m {
                max = max.max(logit(j));
            }
            if max == f64::NEG_INFINITY {
                return Err(Error::EmptyAttentionRow { row: r });
            }
            let mut sum = 0.0;
            for j in 0..m {
                let e = (logit(j) - max).exp();
                data[r * m + j] = e;
                sum += e;
            }
            for j in 0..m {
                data[r * m + j] /= sum;
            }
        }
        let tape = match mask {
            Some(mk) => join_tapes([self, mk])?,
            None => join_tapes([self])?,
        };
        let out: Rc<[f64]> = data.clone().into();
        Ok(record(
            tape,
            Op::SoftmaxRows {
                z: Src::of(self),
                mask: mask.map(Src::of),
                out,
                cols: m,
            },
            s.to_vec(),
            data,
        ))
    }

    pub fn reshape(&self, shape: Vec<usize>) -> Result<Tensor> {
        let numel: usize = shape.iter().product();
        if numel != self.numel() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                lhs: self.shape().to_vec(),
                rhs: shape,
            });
        }
        let tape = self.node_ref().map(|n| n.tape.clone());
        Ok(record(
            tape,
            Op::Reshape { a: Src::of(self) },
            shape,
            self.data().to_vec(),
        ))
    }
}

// ---------------------------------------------------------------------------
// backward rules
// ---------------------------------------------------------------------------

impl Op {
    /// Feed `grad_out` backwards into each tracked parent via `sink`.
    pub(crate) fn accumulate(&self, grad_out: &[f64], sink: &mut dyn FnMut(usize, &[f64])) {
        match self {
            Op::Leaf => {}
            Op::Add { a, b } => {
                if let Some(id) = a.node {
                    sink(id, &reduce_to(grad_out, a.numel()));
                }
                if let Some(id) = b.node {
                    sink(id, &reduce_to(grad_out, b.numel()));
                }
            }
            Op::Sub { a, b } => {
                if let Some(id) = a.node {
                    sink(id, &reduce_to(grad_out, a.numel()));
                }
                if let Some(id) = b.node {
                    let neg: Vec<f64> = grad_out.iter().map(|g| -g).collect();
                    sink(id, &reduce_to(&neg, b.numel()));
                }
            }
            Op::Mul { a, b } => {
                let (an, bn) = (a.numel(), b.numel());
                if let Some(id) = a.node {
                    let partial: Vec<f64> = grad_out
                        .iter()
                        .enumerate()
                        .map(|(i, g)| g * b.data[i % bn])
                        .collect();
                    sink(id, &reduce_to(&partial, an));
                }
                if let Some(id) = b.node {
                    let partial: Vec<f64> = grad_out
                        .iter()
                        .enumerate()
                        .map(|(i, g)| g * a.data[i % an])
                        .collect();
                    sink(id, &reduce_to(&partial, bn));
                }
            }
            Op::Div { a, b } => {
                let (an, bn) = (a.numel(), b.numel());
                if let Some(id) = a.node {
                    let partial: Vec<f64> = grad_out
                        .iter()
                        .enumerate()
                        .map(|(i, g)| g / b.data[i % bn])
                        .collect();
                    sink(id, &reduce_to(&partial, an));
                }
                if let Some(id) = b.node {
                    let partial: Vec<f64> = grad_out
                        .iter()
                        .enumerate()
                        .map(|(i, g)| {
                            let bv = b.data[i % bn];
                            -g * a.data[i % an] / (bv * bv)
                        })
                        .collect();
                    sink(id, &reduce_to(&partial, bn));
                }
            }
            Op::Scale { a, c } => {
                if let Some(id) = a.node {
                    let partial: Vec<f64> = grad_out.iter().map(|g| g * c).collect();
                    sink(id, &partial);
                }
            }
            Op::AddScalar { a } => {
                if let Some(id) = a.node {
                    sink(id, grad_out);
                }
            }
            Op::Matmul { a, b, m, k, n } => {
                if let Some(id) = a.node {
                    // dA = dC @ B^T
                    let bt = transpose_raw(&b.data, *k, *n);
                    sink(id, &matmul_raw(grad_out, &bt, *m, *n, *k));
                }
                if let Some(id) = b.node {
                    // dB = A^T @ dC
                    let at = transpose_raw(&a.data, *m, *k);
                    sink(id, &matmul_raw(&at, grad_out, *k, *m, *n));
                }
            }
            Op::Transpose { a, rows, cols } => {
                if let Some(id) = a.node {
                    sink(id, &transpose_raw(grad_out, *cols, *rows));
                }
            }
            Op::Relu { a } => {
                if let Some(id) = a.node {
                    let partial: Vec<f64> = grad_out
                        .iter()
                        .zip(a.data.iter())
                        .map(|(g, x)| if *x > 0.0 { *g } else { 0.0 })
                        .collect();
                    sink(id, &partial);
                }
            }
            Op::Sin { a } => {
                if let Some(id) = a.node {
                    let partial: Vec<f64> = grad_out
                        .iter()
                        .zip(a.data.iter())
                        .map(|(g, x)| g * x.cos())
                        .collect();
                    sink(id, &partial);
                }
            }
            Op::Cos { a } => {
                if let Some(id) = a.node {
                    let partial: Vec<f64> = grad_out
                        .iter()
                        .zip(a.data.iter())
                        .map(|(g, x)| -g * x.sin())
                        .collect();
                    sink(id, &partial);
                }
            }
            Op::Sqrt { a, out } => {
                if let Some(id) = a.node {
                    let partial: Vec<f64> = grad_out
                        .iter()
                        .zip(out.iter())
                        .map(|(g, y)| g / (2.0 * y))
                        .collect();
                    sink(id, &partial);
                }
            }
            Op::Square { a } => {
                if let Some(id) = a.node {
                    let partial: Vec<f64> = grad_out
                        .iter()
                        .zip(a.data.iter())
                        .map(|(g, x)| 2.0 * g * x)
                        .collect();
                    sink(id, &partial);
                }
            }
            Op::SumAxis { a, axis } | Op::MeanAxis { a, axis } => {
                if let Some(id) = a.node {
                    let (outer, len, inner) = axis_split(&a.shape, *axis);
                    let scale = match self {
                        Op::MeanAxis { .. } => 1.0 / len as f64,
                        _ => 1.0,
                    };
                    let mut partial = vec![0.0; a.numel()];
                    for o in 0..outer {
                        for j in 0..len {
                            for i in 0..inner {
                                partial[(o * len + j) * inner + i] =
                                    grad_out[o * inner + i] * scale;
                            }
                        }
                    }
                    sink(id, &partial);
                }
            }
            Op::SumAll { a } => {
                if let Some(id) = a.node {
                    sink(id, &vec![grad_out[0]; a.numel()]);
                }
            }
            Op::L2NormLast { a, out } => {
                if let Some(id) = a.node {
                    let d = *a.shape.last().unwrap();
                    let mut partial = vec![0.0; a.numel()];
                    for (r, norm) in out.iter().enumerate() {
                        if *norm == 0.0 {
                            continue;
                        }
                        let g = grad_out[r];
                        for i in 0..d {
                            partial[r * d + i] = g * a.data[r * d + i] / norm;
                        }
                    }
                    sink(id, &partial);
                }
            }
            Op::RmsNormalize { a, rms, eps } => {
                if let Some(id) = a.node {
                    let d = *a.shape.last().unwrap();
                    let sqrt_d = (d as f64).sqrt();
                    let mut partial = vec![0.0; a.numel()];
                    for (r, &rv) in rms.iter().enumerate() {
                        let row = &a.data[r * d..(r + 1) * d];
                        let gout = &grad_out[r * d..(r + 1) * d];
                        let dst = &mut partial[r * d..(r + 1) * d];
                        if rv > *eps {
                            // y = sqrt(D) * x / ||x||
                            let norm = rv * sqrt_d;
                            let dot: f64 = row.iter().zip(gout).map(|(x, g)| x * g).sum();
                            for i in 0..d {
                                dst[i] =
                                    (sqrt_d / norm) * (gout[i] - row[i] * dot / (norm * norm));
                            }
                        } else if *eps > 0.0 {
                            for i in 0..d {
                                dst[i] = gout[i] / eps;
                            }
                        }
                        // rv == eps == 0: output was pinned to zero, gradient zero.
                    }
                    sink(id, &partial);
                }
            }
            Op::BroadcastLast { a, d } => {
                if let Some(id) = a.node {
                    let mut partial = vec![0.0; a.numel()];
                    for (i, p) in partial.iter_mut().enumerate() {
                        for r in 0..*d {
                            *p += grad_out[i * d + r];
                        }
                    }
                    sink(id, &partial);
                }
            }
            Op::ConcatLast { parts } => {
                let widths: Vec<usize> = parts
                    .iter()
                    .map(|p| *p.shape.last().unwrap())
                    .collect();
                let total: usize = widths.iter().sum();
                let rows = grad_out.len() / total;
                let mut offset = 0;
                for (p, w) in parts.iter().zip(&widths) {
                    if let Some(id) = p.node {
                        let mut partial = Vec::with_capacity(rows * w);
                        for r in 0..rows {
                            partial
                                .extend_from_slice(&grad_out[r * total + offset..r * total + offset + w]);
                        }
                        sink(id, &partial);
                    }
                    offset += w;
                }
            }
            Op::GatherRows { a, idx, row } => {
                if let Some(id) = a.node {
                    let mut partial = vec![0.0; a.numel()];
                    for (out_r, &src_r) in idx.iter().enumerate() {
                        for i in 0..*row {
                            partial[src_r * row + i] += grad_out[out_r * row + i];
                        }
                    }
                    sink(id, &partial);
                }
            }
            Op::SegmentSum { a, segments, row } => {
                if let Some(id) = a.node {
                    let mut partial = vec![0.0; a.numel()];
                    for (r, &seg) in segments.iter().enumerate() {
                        for i in 0..*row {
                            partial[r * row + i] = grad_out[seg * row + i];
                        }
                    }
                    sink(id, &partial);
                }
            }
            Op::SoftmaxRows { z, mask, out, cols } => {
                let m = *cols;
                let rows = grad_out.len() / m;
                let mut partial = vec![0.0; grad_out.len()];
                for r in 0..rows {
                    let s = &out[r * m..(r + 1) * m];
                    let g = &grad_out[r * m..(r + 1) * m];
                    let dot: f64 = s.iter().zip(g).map(|(si, gi)| si * gi).sum();
                    for j in 0..m {
                        partial[r * m + j] = s[j] * (g[j] - dot);
                    }
                }
                if let Some(id) = z.node {
                    sink(id, &partial);
                }
                if let Some(mk) = mask {
                    if let Some(id) = mk.node {
                        sink(id, &partial);
                    }
                }
            }
            Op::Reshape { a } => {
                if let Some(id) = a.node {
                    sink(id, grad_out);
                }
            }
        }
    }
}
