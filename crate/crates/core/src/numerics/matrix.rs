//! Dense row-major `f64` matrices and the value-level kernels shared by the
//! tape's forward pass.

use std::fmt;

use crate::error::{Error, Result};

/// Eps used by every layer normalization in the model.
pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Below this norm `l2_normalize` returns its input unchanged.
pub const L2_NORM_FLOOR: f64 = 1e-12;

#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Matrix {}x{} ", self.rows, self.cols)?;
        f.debug_list().entries(self.data.chunks(self.cols.max(1))).finish()
    }
}

impl Matrix {
    /// Builds a matrix, rejecting a length mismatch or any non-finite entry.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(Error::shape("Matrix::new", (rows, cols), (data.len(), 1)));
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("matrix entry {bad}")));
        }
        Ok(Self { rows, cols, data })
    }

    pub(crate) fn from_parts(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(rows * cols, data.len());
        Self { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::from_parts(rows, cols, vec![0.0; rows * cols])
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self::from_parts(rows, cols, vec![value; rows * cols])
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Stacks equal-length rows. An empty slice yields a 0x0 matrix.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::shape("Matrix::from_rows", (1, cols), (1, r.len())));
            }
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), cols, data)
    }

    pub fn row_vector(values: Vec<f64>) -> Result<Self> {
        Self::new(1, values.len(), values)
    }

    pub fn scalar(value: f64) -> Self {
        Self::from_parts(1, 1, vec![value])
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
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

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        (0..self.rows).map(move |r| self.row(r))
    }

    /// The scalar held by a 1x1 matrix.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.shape(), (1, 1));
        self.data[0]
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::shape("matmul", self.shape(), other.shape()));
        }
        Ok(matmul_unchecked(self, other))
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        if self.shape() != other.shape() {
            return Err(Error::shape("add", self.shape(), other.shape()));
        }
        Ok(self.zip_map(other, |a, b| a + b))
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        if self.shape() != other.shape() {
            return Err(Error::shape("sub", self.shape(), other.shape()));
        }
        Ok(self.zip_map(other, |a, b| a - b))
    }

    pub fn scale(&self, k: f64) -> Matrix {
        self.map(|v| v * k)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix::from_parts(self.rows, self.cols, self.data.iter().map(|&v| f(v)).collect())
    }

    pub(crate) fn zip_map(&self, other: &Matrix, f: impl Fn(f64, f64) -> f64) -> Matrix {
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Matrix::from_parts(self.rows, self.cols, data)
    }

    pub(crate) fn add_assign(&mut self, other: &Matrix) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    /// Largest elementwise absolute difference; `f64::INFINITY` on shape mismatch.
    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        if self.shape() != other.shape() {
            return f64::INFINITY;
        }
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Copies rows `start..start + len`.
    pub fn slice_rows(&self, start: usize, len: usize) -> Matrix {
        let data = self.data[start * self.cols..(start + len) * self.cols].to_vec();
        Matrix::from_parts(len, self.cols, data)
    }

    pub fn slice_cols(&self, start: usize, len: usize) -> Matrix {
        let mut data = Vec::with_capacity(self.rows * len);
        for r in 0..self.rows {
            data.extend_from_slice(&self.row(r)[start..start + len]);
        }
        Matrix::from_parts(self.rows, len, data)
    }
}

pub(crate) fn matmul_unchecked(a: &Matrix, b: &Matrix) -> Matrix {
    let (n, k, m) = (a.rows, a.cols, b.cols);
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let out_row = &mut out[i * m..(i + 1) * m];
        for p in 0..k {
            let av = a.data[i * k + p];
            if av == 0.0 {
                continue;
            }
            let b_row = &b.data[p * m..(p + 1) * m];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
    Matrix::from_parts(n, m, out)
}

pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    a.matmul(b)
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    for r in 0..out.rows {
        softmax_in_place(out.row_mut(r));
    }
    out
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Layer normalization of one vector with affine gain and bias.
pub fn layer_norm(x: &[f64], gain: &[f64], bias: &[f64], eps: f64) -> Result<Vec<f64>> {
    if gain.len() != x.len() || bias.len() != x.len() {
        return Err(Error::shape("layer_norm", (1, x.len()), (gain.len(), bias.len())));
    }
    if !(eps > 0.0) {
        return Err(Error::Argument(format!("layer_norm eps must be positive, got {eps}")));
    }
    let mut out = vec![0.0; x.len()];
    layer_norm_row(x, gain, bias, eps, &mut out);
    Ok(out)
}

/// Writes the normalized row into `out` and returns `1 / sqrt(var + eps)`.
pub(crate) fn layer_norm_row(x: &[f64], gain: &[f64], bias: &[f64], eps: f64, out: &mut [f64]) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let inv_std = 1.0 / (var + eps).sqrt();
    for i in 0..x.len() {
        out[i] = (x[i] - mean) * inv_std * gain[i] + bias[i];
    }
    inv_std
}

pub fn l2_normalize(x: &[f64]) -> Vec<f64> {
    let mut out = x.to_vec();
    l2_normalize_in_place(&mut out);
    out
}

/// Returns the norm used (or `None` if the guard left the row unchanged).
pub(crate) fn l2_normalize_in_place(x: &mut [f64]) -> Option<f64> {
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm < L2_NORM_FLOOR {
        return None;
    }
    for v in x.iter_mut() {
        *v /= norm;
    }
    Some(norm)
}

/// `x · w (+ b)` with `b` broadcast over rows.
pub fn linear(x: &Matrix, w: &Matrix, b: Option<&[f64]>) -> Result<Matrix> {
    let mut out = x.matmul(w)?;
    if let Some(b) = b {
        if b.len() != out.cols {
            return Err(Error::shape("linear bias", out.shape(), (1, b.len())));
        }
        for r in 0..out.rows {
            for (o, bv) in out.row_mut(r).iter_mut().zip(b) {
                *o += bv;
            }
        }
    }
    Ok(out)
}

/// Mean over rows of `-log softmax(logits)[target]`.
pub fn cross_entropy(logits: &Matrix, targets: &[usize]) -> Result<f64> {
    check_targets(logits, targets)?;
    Ok(cross_entropy_unchecked(logits, targets))
}

pub(crate) fn check_targets(logits: &Matrix, targets: &[usize]) -> Result<()> {
    if targets.len() != logits.rows() {
        return Err(Error::shape("cross_entropy", logits.shape(), (targets.len(), 1)));
    }
    if logits.rows() == 0 {
        return Err(Error::Argument("cross_entropy over zero rows".into()));
    }
    if let Some(&bad) = targets.iter().find(|&&t| t >= logits.cols()) {
        return Err(Error::Index {
            what: "cross_entropy target",
            index: bad,
            len: logits.cols(),
        });
    }
    Ok(())
}

pub(crate) fn cross_entropy_unchecked(logits: &Matrix, targets: &[usize]) -> f64 {
    let mut total = 0.0;
    for (r, &t) in targets.iter().enumerate() {
        let row = logits.row(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
        total += lse - row[t];
    }
    total / targets.len() as f64
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}
