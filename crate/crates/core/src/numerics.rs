//! Dense linear algebra, activations and loss primitives in double precision.
//!
//! Everything here is a pure function of its inputs. The learned heads in
//! [`crate::model`] are built from these pieces and their analytic gradients
//! are checked against [`finite_diff_gradient`].

use std::fmt;
use std::ops::{Deref, DerefMut};

use crate::error::{Error, Result};

/// Probabilities are clamped into `[PROB_EPSILON, 1 - PROB_EPSILON]` before
/// any logarithm is taken.
pub const PROB_EPSILON: f64 = 1e-7;

/// A dense real vector with finite entries.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DenseVector {
    data: Vec<f64>,
}

impl DenseVector {
    /// Wraps `data`, rejecting NaN and infinite entries.
    pub fn new(data: Vec<f64>) -> Result<Self> {
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Contract(format!(
                "vector entry {pos} is not finite ({})",
                data[pos]
            )));
        }
        Ok(Self { data })
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            data: vec![0.0; dim],
        }
    }

    pub fn filled(dim: usize, value: f64) -> Self {
        Self {
            data: vec![value; dim],
        }
    }

    /// Wraps values produced by a finite computation without rescanning them.
    pub(crate) fn from_vec_unchecked(data: Vec<f64>) -> Self {
        debug_assert!(data.iter().all(|v| v.is_finite()));
        Self { data }
    }

    pub fn dim(&self) -> usize {
        self.data.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }
}

impl Deref for DenseVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.data
    }
}

impl DerefMut for DenseVector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }
}

impl TryFrom<Vec<f64>> for DenseVector {
    type Error = Error;

    fn try_from(data: Vec<f64>) -> Result<Self> {
        Self::new(data)
    }
}

/// A dense row-major real matrix with finite entries.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

/// `rows x cols`, for error messages.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Shape(pub usize, pub usize);

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.0, self.1)
    }
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Builds a matrix from row-major `data`.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(
                "DenseMatrix::from_vec",
                Shape(rows, cols),
                format!("{} values", data.len()),
            ));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Contract(format!(
                "matrix entry ({}, {}) is not finite",
                pos / cols.max(1),
                pos % cols.max(1)
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != cols) {
            return Err(Error::shape(
                "DenseMatrix::from_rows",
                format!("row of {cols}"),
                format!("row of {}", bad.len()),
            ));
        }
        Self::from_vec(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> Shape {
        Shape(self.rows, self.cols)
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, value: f64) {
        self.data[r * self.cols + c] = value;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// `self += alpha * u v^T`.
    pub fn add_outer(&mut self, alpha: f64, u: &[f64], v: &[f64]) -> Result<()> {
        if u.len() != self.rows || v.len() != self.cols {
            return Err(Error::shape(
                "add_outer",
                self.shape(),
                Shape(u.len(), v.len()),
            ));
        }
        for (r, &ur) in u.iter().enumerate() {
            let scale = alpha * ur;
            if scale == 0.0 {
                continue;
            }
            for (dst, &vc) in self.row_mut(r).iter_mut().zip(v) {
                *dst += scale * vc;
            }
        }
        Ok(())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `M x`.
pub fn matvec(m: &DenseMatrix, x: &[f64]) -> Result<DenseVector> {
    if m.cols != x.len() {
        return Err(Error::shape(
            "matvec",
            m.shape(),
            format!("vector of {}", x.len()),
        ));
    }
    let out = (0..m.rows).map(|r| dot(m.row(r), x)).collect();
    Ok(DenseVector { data: out })
}

/// `M^T y`.
pub fn matvec_transposed(m: &DenseMatrix, y: &[f64]) -> Result<DenseVector> {
    if m.rows != y.len() {
        return Err(Error::shape(
            "matvec_transposed",
            m.shape(),
            format!("vector of {}", y.len()),
        ));
    }
    let mut out = vec![0.0; m.cols];
    for (r, &yr) in y.iter().enumerate() {
        for (o, &w) in out.iter_mut().zip(m.row(r)) {
            *o += w * yr;
        }
    }
    Ok(DenseVector { data: out })
}

/// Largest `f64` strictly below one.
const BELOW_ONE: f64 = 1.0 - f64::EPSILON / 2.0;

/// Logistic function evaluated without overflow for either sign of `x`.
///
/// Saturated results are pinned inside the open interval, so `a * sigmoid(x)`
/// stays strictly below any positive `a`.
pub fn sigmoid_scalar(x: f64) -> f64 {
    let s = if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    };
    s.clamp(f64::MIN_POSITIVE, BELOW_ONE)
}

pub fn sigmoid(x: &[f64]) -> DenseVector {
    DenseVector {
        data: x.iter().copied().map(sigmoid_scalar).collect(),
    }
}

pub fn relu(x: &[f64]) -> DenseVector {
    DenseVector {
        data: x.iter().map(|&v| v.max(0.0)).collect(),
    }
}

/// Numerically stable softmax (max-shifted).
pub fn softmax(logits: &[f64]) -> DenseVector {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    DenseVector {
        data: exps.into_iter().map(|e| e / total).collect(),
    }
}

/// `-log softmax(logits)[true_class]`, via the max-shifted log-sum-exp.
pub fn softmax_cross_entropy(logits: &[f64], true_class: usize) -> Result<f64> {
    if true_class >= logits.len() {
        return Err(Error::Index {
            what: "class",
            index: true_class,
            len: logits.len(),
        });
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_sum: f64 = logits.iter().map(|&l| (l - max).exp()).sum::<f64>().ln() + max;
    // Rounding can leave a tiny negative when the true class dominates.
    Ok((log_sum - logits[true_class]).max(0.0))
}

pub fn clamp_probability(p: f64) -> f64 {
    p.clamp(PROB_EPSILON, 1.0 - PROB_EPSILON)
}

/// Binary cross entropy of a single probability against a {0, 1} target.
pub fn bce(p: f64, target: bool) -> f64 {
    let p = clamp_probability(p);
    if target {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

/// Central-difference gradient of `f` at `x` with step `h`.
pub fn finite_diff_gradient<F>(f: F, x: &[f64], h: f64) -> DenseVector
where
    F: Fn(&[f64]) -> f64,
{
    assert!(h > 0.0, "finite difference step must be positive");
    let mut probe = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + h;
        let plus = f(&probe);
        probe[i] = orig - h;
        let minus = f(&probe);
        probe[i] = orig;
        grad.push((plus - minus) / (2.0 * h));
    }
    DenseVector { data: grad }
}

/// `||a - b|| / max(||a||, ||b||, floor)` in the Euclidean norm.
pub fn relative_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    assert_eq!(a.len(), b.len());
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut a.iter().zip(b).map(|(x, y)| x - y));
    let scale = norm(&mut a.iter().copied())
        .max(norm(&mut b.iter().copied()))
        .max(floor);
    diff / scale
}
