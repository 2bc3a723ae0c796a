use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};

/// Dense row-major tensor of `f64`.
///
/// Most of the library works with rank-1 and rank-2 values. Operations that
/// act "per row" treat the last axis as the row and everything before it as
/// the row index.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) {
            return shape_err("tensor", format!("zero-sized dimension in {shape:?}"));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return shape_err(
                "tensor",
                format!("shape {shape:?} needs {n} elements, got {}", data.len()),
            );
        }
        Ok(Self { shape, data })
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    /// Rank-1 tensor. Panics on an empty vector.
    pub fn vector(data: Vec<f64>) -> Self {
        assert!(!data.is_empty(), "empty vector");
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    /// Rank-2 tensor built from equally long rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return shape_err("from_rows", "ragged rows");
        }
        Self::new(vec![r, c], rows.concat())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// Size of the last axis.
    pub fn cols(&self) -> usize {
        *self.shape.last().unwrap_or(&1)
    }

    /// Number of rows when viewed as `[len / cols, cols]`.
    pub fn rows(&self) -> usize {
        self.data.len() / self.cols()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let c = self.cols();
        &mut self.data[i * c..(i + 1) * c]
    }

    /// Element of a rank-2 tensor.
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols() + c]
    }

    pub fn item(&self) -> f64 {
        self.data[0]
    }

    pub fn reshape(&self, shape: Vec<usize>) -> Result<Self> {
        Self::new(shape, self.data.clone())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub(crate) fn check_finite(self, op: &'static str) -> Result<Self> {
        if self.is_finite() {
            Ok(self)
        } else {
            Err(Error::NonFinite(op))
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn sq_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }

    pub fn scale_in_place(&mut self, s: f64) {
        self.data.iter_mut().for_each(|x| *x *= s);
    }

    /// `self += other`, shapes must match exactly.
    pub fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return shape_err(
                "add_assign",
                format!("{:?} vs {:?}", self.shape, other.shape),
            );
        }
        self.data
            .iter_mut()
            .zip(&other.data)
            .for_each(|(a, b)| *a += b);
        Ok(())
    }

    /// Largest absolute elementwise difference; `None` if shapes differ.
    pub fn max_abs_diff(&self, other: &Tensor) -> Option<f64> {
        (self.shape == other.shape).then(|| {
            self.data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max)
        })
    }
}

/// `C = op(A) · op(B)` on raw row-major buffers, where `op` optionally
/// transposes. `m`, `k`, `n` are the dimensions after transposition.
pub(crate) fn gemm(
    a: &[f64],
    trans_a: bool,
    b: &[f64],
    trans_b: bool,
    m: usize,
    k: usize,
    n: usize,
) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    match (trans_a, trans_b) {
        (false, false) => {
            for i in 0..m {
                let ci = &mut c[i * n..(i + 1) * n];
                for p in 0..k {
                    let aip = a[i * k + p];
                    if aip == 0.0 {
                        continue;
                    }
                    let bp = &b[p * n..(p + 1) * n];
                    ci.iter_mut().zip(bp).for_each(|(x, y)| *x += aip * y);
                }
            }
        }
        (true, false) => {
            // a is k×m
            for p in 0..k {
                let bp = &b[p * n..(p + 1) * n];
                for i in 0..m {
                    let api = a[p * m + i];
                    if api == 0.0 {
                        continue;
                    }
                    let ci = &mut c[i * n..(i + 1) * n];
                    ci.iter_mut().zip(bp).for_each(|(x, y)| *x += api * y);
                }
            }
        }
        (false, true) => {
            // b is n×k
            for i in 0..m {
                let ai = &a[i * k..(i + 1) * k];
                for j in 0..n {
                    let bj = &b[j * k..(j + 1) * k];
                    c[i * n + j] = ai.iter().zip(bj).map(|(x, y)| x * y).sum();
                }
            }
        }
        (true, true) => {
            // a is k×m, b is n×k
            for i in 0..m {
                for j in 0..n {
                    let mut s = 0.0;
                    for p in 0..k {
                        s += a[p * m + i] * b[j * k + p];
                    }
                    c[i * n + j] = s;
                }
            }
        }
    }
    c
}
