//! Primitive operations with their forward and backward rules.
//!
//! Each primitive is a pure function of its inputs. The [`Tape`](super::Tape)
//! records applications and replays [`backward`] in reverse; [`eval`] runs a
//! primitive without recording anything.

use std::fmt;
use std::sync::Arc;

use super::tensor::{gemm, Tensor};
use crate::error::{shape_err, Error, Result};

/// User-supplied primitive. Used for extension and as a negative control in
/// gradient-check tests.
pub trait CustomOp: fmt::Debug + Send + Sync {
    fn name(&self) -> &'static str;
    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor>;
    /// Gradients with respect to each input, given the upstream gradient.
    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad: &Tensor) -> Vec<Tensor>;
}

#[derive(Clone, Debug)]
pub enum OpKind {
    /// Rank-2 matrix product.
    MatMul,
    /// Elementwise; the right operand may also be a single row broadcast
    /// over all rows of the left operand.
    Add,
    Sub,
    Mul,
    Scale(f64),
    Sigmoid,
    Tanh,
    /// Softmax over the last axis.
    Softmax,
    /// Concatenation along the last axis.
    Concat,
    /// Columns `start..start + len` of the last axis.
    Slice { start: usize, len: usize },
    /// Row lookup into a rank-2 table (embedding lookup).
    Gather(Vec<usize>),
    /// Sum of all elements into a scalar.
    Sum,
    Log,
    /// `Σ_i w_i · −log softmax(x_i)[t_i]` over the rows `x_i` of the input.
    SoftmaxNll {
        targets: Vec<usize>,
        weights: Vec<f64>,
    },
    Transpose,
    Reshape(Vec<usize>),
    Custom(Arc<dyn CustomOp>),
}

impl OpKind {
    pub fn name(&self) -> &'static str {
        match self {
            OpKind::MatMul => "matmul",
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Mul => "mul",
            OpKind::Scale(_) => "scale",
            OpKind::Sigmoid => "sigmoid",
            OpKind::Tanh => "tanh",
            OpKind::Softmax => "softmax",
            OpKind::Concat => "concat",
            OpKind::Slice { .. } => "slice",
            OpKind::Gather(_) => "gather",
            OpKind::Sum => "sum",
            OpKind::Log => "log",
            OpKind::SoftmaxNll { .. } => "softmax_nll",
            OpKind::Transpose => "transpose",
            OpKind::Reshape(_) => "reshape",
            OpKind::Custom(op) => op.name(),
        }
    }
}

fn arity(kind: &OpKind, inputs: &[&Tensor], n: usize) -> Result<()> {
    if inputs.len() != n {
        return shape_err(
            kind.name(),
            format!("expected {n} inputs, got {}", inputs.len()),
        );
    }
    Ok(())
}

#[derive(Clone, Copy, PartialEq)]
enum Broadcast {
    Same,
    Row,
}

fn broadcast(kind: &OpKind, a: &Tensor, b: &Tensor) -> Result<Broadcast> {
    if a.shape() == b.shape() {
        Ok(Broadcast::Same)
    } else if b.len() == a.cols() && b.rows() == 1 {
        Ok(Broadcast::Row)
    } else {
        shape_err(kind.name(), format!("{:?} vs {:?}", a.shape(), b.shape()))
    }
}

fn zip_with(a: &Tensor, b: &Tensor, mode: Broadcast, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let c = a.cols();
    let data = a
        .data()
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let y = match mode {
                Broadcast::Same => b.data()[i],
                Broadcast::Row => b.data()[i % c],
            };
            f(x, y)
        })
        .collect();
    Tensor::new(a.shape().to_vec(), data).expect("shape preserved")
}

/// Reduce a gradient of `a`'s shape back onto a broadcast operand.
fn unbroadcast(g: Tensor, b: &Tensor, mode: Broadcast) -> Tensor {
    match mode {
        Broadcast::Same => g,
        Broadcast::Row => {
            let c = b.len();
            let mut out = vec![0.0; c];
            for (i, v) in g.data().iter().enumerate() {
                out[i % c] += v;
            }
            Tensor::new(b.shape().to_vec(), out).expect("shape preserved")
        }
    }
}

pub(crate) fn softmax_rows(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for v in row.iter_mut() {
            *v = (*v - mx).exp();
            z += *v;
        }
        row.iter_mut().for_each(|v| *v /= z);
    }
    out
}

/// Row-wise `log Σ exp`.
pub(crate) fn logsumexp(row: &[f64]) -> f64 {
    let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    mx + row.iter().map(|v| (v - mx).exp()).sum::<f64>().ln()
}

/// Log-softmax of a single row.
pub fn log_softmax(row: &[f64]) -> Vec<f64> {
    let lse = logsumexp(row);
    row.iter().map(|v| v - lse).collect()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn last_axis_shape(t: &Tensor, cols: usize) -> Vec<usize> {
    let mut s = t.shape().to_vec();
    if let Some(l) = s.last_mut() {
        *l = cols;
    }
    s
}

/// Apply a primitive without recording it.
pub fn eval(kind: &OpKind, inputs: &[&Tensor]) -> Result<Tensor> {
    let out = forward_unchecked(kind, inputs)?;
    out.check_finite(kind.name())
}

fn forward_unchecked(kind: &OpKind, inputs: &[&Tensor]) -> Result<Tensor> {
    match kind {
        OpKind::MatMul => {
            arity(kind, inputs, 2)?;
            let (a, b) = (inputs[0], inputs[1]);
            if a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0] {
                return shape_err("matmul", format!("{:?} x {:?}", a.shape(), b.shape()));
            }
            let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
            Tensor::new(vec![m, n], gemm(a.data(), false, b.data(), false, m, k, n))
        }
        OpKind::Add | OpKind::Sub | OpKind::Mul => {
            arity(kind, inputs, 2)?;
            let (a, b) = (inputs[0], inputs[1]);
            let mode = broadcast(kind, a, b)?;
            Ok(match kind {
                OpKind::Add => zip_with(a, b, mode, |x, y| x + y),
                OpKind::Sub => zip_with(a, b, mode, |x, y| x - y),
                _ => zip_with(a, b, mode, |x, y| x * y),
            })
        }
        OpKind::Scale(s) => {
            arity(kind, inputs, 1)?;
            Ok(inputs[0].map(|x| x * s))
        }
        OpKind::Sigmoid => {
            arity(kind, inputs, 1)?;
            Ok(inputs[0].map(sigmoid))
        }
        OpKind::Tanh => {
            arity(kind, inputs, 1)?;
            Ok(inputs[0].map(f64::tanh))
        }
        OpKind::Softmax => {
            arity(kind, inputs, 1)?;
            Ok(softmax_rows(inputs[0]))
        }
        OpKind::Concat => {
            if inputs.is_empty() {
                return shape_err("concat", "no inputs");
            }
            let rows = inputs[0].rows();
            if inputs.iter().any(|t| t.rows() != rows) {
                return shape_err("concat", "row counts differ");
            }
            let cols: usize = inputs.iter().map(|t| t.cols()).sum();
            let mut data = Vec::with_capacity(rows * cols);
            for r in 0..rows {
                for t in inputs {
                    data.extend_from_slice(t.row(r));
                }
            }
            Tensor::new(last_axis_shape(inputs[0], cols), data)
        }
        OpKind::Slice { start, len } => {
            arity(kind, inputs, 1)?;
            let x = inputs[0];
            if *len == 0 || start + len > x.cols() {
                return shape_err("slice", format!("{start}+{len} > {}", x.cols()));
            }
            let mut data = Vec::with_capacity(x.rows() * len);
            for r in 0..x.rows() {
                data.extend_from_slice(&x.row(r)[*start..start + len]);
            }
            Tensor::new(last_axis_shape(x, *len), data)
        }
        OpKind::Gather(idx) => {
            arity(kind, inputs, 1)?;
            let table = inputs[0];
            if table.rank() != 2 {
                return shape_err("gather", "table must be rank 2");
            }
            if idx.is_empty() {
                return shape_err("gather", "no indices");
            }
            let mut data = Vec::with_capacity(idx.len() * table.cols());
            for &i in idx {
                if i >= table.rows() {
                    return shape_err("gather", format!("row {i} >= {}", table.rows()));
                }
                data.extend_from_slice(table.row(i));
            }
            Tensor::new(vec![idx.len(), table.cols()], data)
        }
        OpKind::Sum => {
            arity(kind, inputs, 1)?;
            Ok(Tensor::scalar(inputs[0].sum()))
        }
        OpKind::Log => {
            arity(kind, inputs, 1)?;
            Ok(inputs[0].map(f64::ln))
        }
        OpKind::SoftmaxNll { targets, weights } => {
            arity(kind, inputs, 1)?;
            let x = inputs[0];
            if targets.len() != x.rows() || weights.len() != x.rows() {
                return shape_err(
                    "softmax_nll",
                    format!("{} rows, {} targets", x.rows(), targets.len()),
                );
            }
            let mut total = 0.0;
            for (r, (&t, &w)) in targets.iter().zip(weights).enumerate() {
                if w == 0.0 {
                    continue;
                }
                let row = x.row(r);
                if t >= row.len() {
                    return Err(Error::IdOutOfRange {
                        id: t,
                        size: row.len(),
                    });
                }
                total += w * (logsumexp(row) - row[t]);
            }
            Ok(Tensor::scalar(total))
        }
        OpKind::Transpose => {
            arity(kind, inputs, 1)?;
            let x = inputs[0];
            if x.rank() != 2 {
                return shape_err("transpose", "rank must be 2");
            }
            let (r, c) = (x.shape()[0], x.shape()[1]);
            let mut data = vec![0.0; r * c];
            for i in 0..r {
                for j in 0..c {
                    data[j * r + i] = x.data()[i * c + j];
                }
            }
            Tensor::new(vec![c, r], data)
        }
        OpKind::Reshape(shape) => {
            arity(kind, inputs, 1)?;
            inputs[0].reshape(shape.clone())
        }
        OpKind::Custom(op) => op.forward(inputs),
    }
}

/// Gradients of each input given the upstream gradient `grad` of `output`.
pub fn backward(kind: &OpKind, inputs: &[&Tensor], output: &Tensor, grad: &Tensor) -> Vec<Tensor> {
    match kind {
        OpKind::MatMul => {
            let (a, b) = (inputs[0], inputs[1]);
            let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
            // dA = G Bᵀ, dB = Aᵀ G
            let da = gemm(grad.data(), false, b.data(), true, m, n, k);
            let db = gemm(a.data(), true, grad.data(), false, k, m, n);
            vec![
                Tensor::new(vec![m, k], da).expect("shape"),
                Tensor::new(vec![k, n], db).expect("shape"),
            ]
        }
        OpKind::Add | OpKind::Sub => {
            let mode = broadcast(kind, inputs[0], inputs[1]).expect("checked in forward");
            let gb = if matches!(kind, OpKind::Sub) {
                grad.map(|g| -g)
            } else {
                grad.clone()
            };
            vec![grad.clone(), unbroadcast(gb, inputs[1], mode)]
        }
        OpKind::Mul => {
            let (a, b) = (inputs[0], inputs[1]);
            let mode = broadcast(kind, a, b).expect("checked in forward");
            let ga = zip_with(grad, b, mode, |g, y| g * y);
            let gb_full = Tensor::new(
                a.shape().to_vec(),
                grad.data().iter().zip(a.data()).map(|(g, x)| g * x).collect(),
            )
            .expect("shape");
            vec![ga, unbroadcast(gb_full, b, mode)]
        }
        OpKind::Scale(s) => vec![grad.map(|g| g * s)],
        OpKind::Sigmoid => vec![Tensor::new(
            grad.shape().to_vec(),
            grad.data()
                .iter()
                .zip(output.data())
                .map(|(g, y)| g * y * (1.0 - y))
                .collect(),
        )
        .expect("shape")],
        OpKind::Tanh => vec![Tensor::new(
            grad.shape().to_vec(),
            grad.data()
                .iter()
                .zip(output.data())
                .map(|(g, y)| g * (1.0 - y * y))
                .collect(),
        )
        .expect("shape")],
        OpKind::Softmax => {
            let mut out = grad.clone();
            for r in 0..out.rows() {
                let y = output.row(r);
                let dot: f64 = grad.row(r).iter().zip(y).map(|(g, y)| g * y).sum();
                out.row_mut(r)
                    .iter_mut()
                    .zip(y)
                    .for_each(|(g, y)| *g = y * (*g - dot));
            }
            vec![out]
        }
        OpKind::Concat => {
            let mut offset = 0;
            inputs
                .iter()
                .map(|t| {
                    let c = t.cols();
                    let mut data = Vec::with_capacity(t.len());
                    for r in 0..t.rows() {
                        data.extend_from_slice(&grad.row(r)[offset..offset + c]);
                    }
                    offset += c;
                    Tensor::new(t.shape().to_vec(), data).expect("shape")
                })
                .collect()
        }
        OpKind::Slice { start, len } => {
            let x = inputs[0];
            let mut g = Tensor::zeros(x.shape());
            for r in 0..x.rows() {
                g.row_mut(r)[*start..start + len].copy_from_slice(grad.row(r));
            }
            vec![g]
        }
        OpKind::Gather(idx) => {
            let mut g = Tensor::zeros(inputs[0].shape());
            for (k, &i) in idx.iter().enumerate() {
                g.row_mut(i)
                    .iter_mut()
                    .zip(grad.row(k))
                    .for_each(|(a, b)| *a += b);
            }
            vec![g]
        }
        OpKind::Sum => vec![Tensor::full(inputs[0].shape(), grad.item())],
        OpKind::Log => vec![Tensor::new(
            grad.shape().to_vec(),
            grad.data()
                .iter()
                .zip(inputs[0].data())
                .map(|(g, x)| g / x)
                .collect(),
        )
        .expect("shape")],
        OpKind::SoftmaxNll { targets, weights } => {
            let x = inputs[0];
            let upstream = grad.item();
            let mut g = Tensor::zeros(x.shape());
            for (r, (&t, &w)) in targets.iter().zip(weights).enumerate() {
                if w == 0.0 {
                    continue;
                }
                let row = x.row(r);
                let lse = logsumexp(row);
                let gr = g.row_mut(r);
                for (j, v) in row.iter().enumerate() {
                    gr[j] = upstream * w * (v - lse).exp();
                }
                gr[t] -= upstream * w;
            }
            vec![g]
        }
        OpKind::Transpose => {
            let g = eval(&OpKind::Transpose, &[grad]).expect("rank 2");
            vec![g]
        }
        OpKind::Reshape(_) => vec![grad.reshape(inputs[0].shape().to_vec()).expect("same size")],
        OpKind::Custom(op) => op.backward(inputs, output, grad),
    }
}
