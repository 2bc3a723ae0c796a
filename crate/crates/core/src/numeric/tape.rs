//! Reverse-mode differentiation record.
//!
//! Values live inside the tape; callers hold copyable [`Var`] handles.
//! Leaves may borrow their tensor (model parameters) or own it (inputs,
//! constants). Entries are appended in evaluation order, so the entry list
//! is always topologically sorted and a single reverse sweep suffices.

use std::borrow::Cow;
use std::cell::{Ref, RefCell};
use std::sync::atomic::{AtomicUsize, Ordering};

use super::ops::{self, OpKind};
use super::tensor::Tensor;
use crate::error::{Error, Result};

static NEXT_TAPE_ID: AtomicUsize = AtomicUsize::new(0);

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var {
    tape: usize,
    id: usize,
}

impl Var {
    pub fn index(self) -> usize {
        self.id
    }
}

struct Entry<'p> {
    value: Cow<'p, Tensor>,
    op: Option<(OpKind, Vec<usize>)>,
}

pub struct Tape<'p> {
    id: usize,
    entries: RefCell<Vec<Entry<'p>>>,
}

impl Default for Tape<'_> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'p> Tape<'p> {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            entries: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Cow<'p, Tensor>, op: Option<(OpKind, Vec<usize>)>) -> Var {
        let mut entries = self.entries.borrow_mut();
        entries.push(Entry { value, op });
        Var {
            tape: self.id,
            id: entries.len() - 1,
        }
    }

    /// Leaf that borrows its value, typically a model parameter.
    pub fn param(&self, value: &'p Tensor) -> Var {
        self.push(Cow::Borrowed(value), None)
    }

    /// Leaf that owns its value.
    pub fn leaf(&self, value: Tensor) -> Var {
        self.push(Cow::Owned(value), None)
    }

    fn check(&self, v: Var) -> Result<()> {
        if v.tape != self.id || v.id >= self.len() {
            return Err(Error::ForeignVar(v.id));
        }
        Ok(())
    }

    pub fn value(&self, v: Var) -> Ref<'_, Tensor> {
        assert_eq!(v.tape, self.id, "variable from another tape");
        Ref::map(self.entries.borrow(), |e| e[v.id].value.as_ref())
    }

    /// Evaluate `kind` on `inputs` and record the application.
    pub fn apply(&self, kind: OpKind, inputs: &[Var]) -> Result<Var> {
        for &v in inputs {
            self.check(v)?;
        }
        let out = {
            let entries = self.entries.borrow();
            let args: Vec<&Tensor> = inputs.iter().map(|v| entries[v.id].value.as_ref()).collect();
            ops::eval(&kind, &args)?
        };
        let ids = inputs.iter().map(|v| v.id).collect();
        Ok(self.push(Cow::Owned(out), Some((kind, ids))))
    }

    /// Gradient of the scalar `loss` with respect to every entry.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        self.check(loss)?;
        let entries = self.entries.borrow();
        let root = &entries[loss.id].value;
        if !root.is_scalar() {
            return Err(Error::NotScalar(root.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; entries.len()];
        grads[loss.id] = Some(Tensor::ones(root.shape()));
        for j in (0..=loss.id).rev() {
            let Some((kind, inputs)) = &entries[j].op else {
                continue;
            };
            let Some(g) = grads[j].take() else {
                continue;
            };
            let args: Vec<&Tensor> = inputs.iter().map(|&i| entries[i].value.as_ref()).collect();
            let input_grads = ops::backward(kind, &args, &entries[j].value, &g);
            for (&i, gi) in inputs.iter().zip(input_grads) {
                match &mut grads[i] {
                    Some(acc) => acc.add_assign(&gi)?,
                    slot @ None => *slot = Some(gi),
                }
            }
            // keep the gradient of interior nodes only if someone asks for it
            grads[j] = Some(g);
        }
        let shapes = entries.iter().map(|e| e.value.shape().to_vec()).collect();
        Ok(Gradients {
            tape: self.id,
            grads,
            shapes,
        })
    }

    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        self.apply(OpKind::MatMul, &[a, b])
    }
    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        self.apply(OpKind::Add, &[a, b])
    }
    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        self.apply(OpKind::Sub, &[a, b])
    }
    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        self.apply(OpKind::Mul, &[a, b])
    }
    pub fn scale(&self, a: Var, s: f64) -> Result<Var> {
        self.apply(OpKind::Scale(s), &[a])
    }
    pub fn sigmoid(&self, a: Var) -> Result<Var> {
        self.apply(OpKind::Sigmoid, &[a])
    }
    pub fn tanh(&self, a: Var) -> Result<Var> {
        self.apply(OpKind::Tanh, &[a])
    }
    pub fn softmax(&self, a: Var) -> Result<Var> {
        self.apply(OpKind::Softmax, &[a])
    }
    pub fn concat(&self, parts: &[Var]) -> Result<Var> {
        self.apply(OpKind::Concat, parts)
    }
    pub fn slice(&self, a: Var, start: usize, len: usize) -> Result<Var> {
        self.apply(OpKind::Slice { start, len }, &[a])
    }
    pub fn gather(&self, table: Var, rows: Vec<usize>) -> Result<Var> {
        self.apply(OpKind::Gather(rows), &[table])
    }
    pub fn sum(&self, a: Var) -> Result<Var> {
        self.apply(OpKind::Sum, &[a])
    }
    pub fn log(&self, a: Var) -> Result<Var> {
        self.apply(OpKind::Log, &[a])
    }
    pub fn softmax_nll(&self, logits: Var, targets: Vec<usize>, weights: Vec<f64>) -> Result<Var> {
        self.apply(OpKind::SoftmaxNll { targets, weights }, &[logits])
    }
    pub fn transpose(&self, a: Var) -> Result<Var> {
        self.apply(OpKind::Transpose, &[a])
    }
    pub fn reshape(&self, a: Var, shape: Vec<usize>) -> Result<Var> {
        self.apply(OpKind::Reshape(shape), &[a])
    }
}

/// Result of a backward sweep.
pub struct Gradients {
    tape: usize,
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient for `v`; zeros if `v` does not influence the loss.
    pub fn get(&self, v: Var) -> Tensor {
        assert_eq!(v.tape, self.tape, "variable from another tape");
        self.grads[v.id]
            .clone()
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[v.id]))
    }

    pub fn take(&mut self, v: Var) -> Tensor {
        assert_eq!(v.tape, self.tape, "variable from another tape");
        self.grads[v.id]
            .take()
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[v.id]))
    }

    /// Whether any gradient reached `v`.
    pub fn reached(&self, v: Var) -> bool {
        self.grads[v.id].is_some()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grad_of_sum_is_ones() {
        let x = Tensor::from_rows(&[vec![1.0, -2.0], vec![3.0, 0.5]]).unwrap();
        let tape = Tape::new();
        let xv = tape.param(&x);
        let loss = tape.sum(xv).unwrap();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(xv), Tensor::ones(&[2, 2]));
    }

    #[test]
    fn grad_of_sum_of_squares() {
        let x = Tensor::vector(vec![1.0, 2.0]);
        let tape = Tape::new();
        let xv = tape.param(&x);
        let sq = tape.mul(xv, xv).unwrap();
        let loss = tape.sum(sq).unwrap();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(xv).data(), &[2.0, 4.0]);
    }

    #[test]
    fn unreachable_leaves_receive_zero() {
        let x = Tensor::vector(vec![1.0, 2.0]);
        let y = Tensor::vector(vec![3.0]);
        let tape = Tape::new();
        let xv = tape.param(&x);
        let yv = tape.param(&y);
        let loss = tape.sum(xv).unwrap();
        let g = tape.backward(loss).unwrap();
        assert!(!g.reached(yv));
        assert_eq!(g.get(yv), Tensor::zeros(&[1]));
    }

    #[test]
    fn loss_must_be_scalar() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![1.0, 2.0]));
        assert!(matches!(tape.backward(x), Err(Error::NotScalar(_))));
    }

    #[test]
    fn loss_from_another_tape_is_rejected() {
        let a = Tape::new();
        let b = Tape::new();
        let x = a.leaf(Tensor::scalar(1.0));
        assert!(matches!(b.backward(x), Err(Error::ForeignVar(_))));
    }
}
