//! Row-major dense matrices and the forward kernels the model is built from.

use serde::{Deserialize, Serialize};

use crate::error::{MvarError, Result};

/// Row-major `rows × cols` matrix of `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl DenseMatrix {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(MvarError::shape(format!(
                "matrix dimensions must be positive, got {rows}x{cols}"
            )));
        }
        if values.len() != rows * cols {
            return Err(MvarError::shape(format!(
                "{} values supplied for a {rows}x{cols} matrix",
                values.len()
            )));
        }
        Ok(Self { rows, cols, values })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, 0.0)
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        assert!(rows > 0 && cols > 0, "matrix dimensions must be positive");
        Self {
            rows,
            cols,
            values: vec![value; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.values[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map(Vec::len).unwrap_or(0);
        if rows.iter().any(|row| row.len() != c) {
            return Err(MvarError::shape("ragged rows"));
        }
        Self::new(r, c, rows.concat())
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut values = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                values.push(f(i, j));
            }
        }
        Self::new(rows, cols, values).expect("from_fn dimensions")
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.values[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.values[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        let c = self.cols;
        &mut self.values[r * c..(r + 1) * c]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.values[j * self.rows + i] = self.values[i * self.cols + j];
            }
        }
        out
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map(|v| v * s)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check_same_shape(other, "add")?;
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a + b)
                .collect(),
        })
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.check_same_shape(other, "sub")?;
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a - b)
                .collect(),
        })
    }

    pub fn add_assign(&mut self, other: &Self) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += b;
        }
    }

    /// Adds a `1 × cols` row vector to every row.
    pub fn add_row(&self, row: &Self) -> Result<Self> {
        if row.rows != 1 || row.cols != self.cols {
            return Err(MvarError::shape(format!(
                "cannot broadcast {}x{} over rows of {}x{}",
                row.rows, row.cols, self.rows, self.cols
            )));
        }
        let mut out = self.clone();
        for r in 0..self.rows {
            for (o, b) in out.row_mut(r).iter_mut().zip(&row.values) {
                *o += b;
            }
        }
        Ok(out)
    }

    /// Columns `[start, start + len)`.
    pub fn slice_cols(&self, start: usize, len: usize) -> Result<Self> {
        if len == 0 || start + len > self.cols {
            return Err(MvarError::shape(format!(
                "column slice {start}..{} out of range for {} columns",
                start + len,
                self.cols
            )));
        }
        Ok(Self::from_fn(self.rows, len, |i, j| self.get(i, start + j)))
    }

    pub fn concat_cols(parts: &[&Self]) -> Result<Self> {
        let rows = parts
            .first()
            .ok_or_else(|| MvarError::shape("concat of zero matrices"))?
            .rows;
        if parts.iter().any(|p| p.rows != rows) {
            let shapes: Vec<_> = parts.iter().map(|p| p.shape()).collect();
            return Err(MvarError::shape(format!(
                "column concat needs equal row counts, got {shapes:?}"
            )));
        }
        let cols = parts.iter().map(|p| p.cols).sum();
        let mut values = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for p in parts {
                values.extend_from_slice(p.row(r));
            }
        }
        Self::new(rows, cols, values)
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.shape(), other.shape());
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    fn check_same_shape(&self, other: &Self, what: &str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(MvarError::shape(format!(
                "{what}: operand shapes {}x{} and {}x{} differ",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(())
    }
}

/// Standard matrix product `a · b`.
pub fn matmul(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    if a.cols != b.rows {
        return Err(MvarError::shape(format!(
            "matmul: left operand is {}x{}, right operand is {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    let (n, k, m) = (a.rows, a.cols, b.cols);
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let out_row = &mut out[i * m..(i + 1) * m];
        let a_row = &a.values[i * k..(i + 1) * k];
        for (p, &a_ip) in a_row.iter().enumerate() {
            if a_ip == 0.0 {
                continue;
            }
            let b_row = &b.values[p * m..(p + 1) * m];
            for (o, &b_pj) in out_row.iter_mut().zip(b_row) {
                *o += a_ip * b_pj;
            }
        }
    }
    DenseMatrix::new(n, m, out)
}

/// `a · bᵀ` without materializing the transpose.
pub fn matmul_transb(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    if a.cols != b.cols {
        return Err(MvarError::shape(format!(
            "matmul_transb: left operand is {}x{}, right operand (transposed) is {}x{}",
            a.rows, a.cols, b.cols, b.rows
        )));
    }
    let (n, k, m) = (a.rows, a.cols, b.rows);
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let a_row = &a.values[i * k..(i + 1) * k];
        for j in 0..m {
            let b_row = &b.values[j * k..(j + 1) * k];
            out[i * m + j] = a_row.iter().zip(b_row).map(|(x, y)| x * y).sum();
        }
    }
    DenseMatrix::new(n, m, out)
}

/// `aᵀ · b` without materializing the transpose.
pub fn matmul_transa(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    if a.rows != b.rows {
        return Err(MvarError::shape(format!(
            "matmul_transa: left operand (transposed) is {}x{}, right operand is {}x{}",
            a.cols, a.rows, b.rows, b.cols
        )));
    }
    let (k, n, m) = (a.rows, a.cols, b.cols);
    let mut out = vec![0.0; n * m];
    for p in 0..k {
        let a_row = &a.values[p * n..(p + 1) * n];
        let b_row = &b.values[p * m..(p + 1) * m];
        for (i, &a_pi) in a_row.iter().enumerate() {
            if a_pi == 0.0 {
                continue;
            }
            let out_row = &mut out[i * m..(i + 1) * m];
            for (o, &b_pj) in out_row.iter_mut().zip(b_row) {
                *o += a_pi * b_pj;
            }
        }
    }
    DenseMatrix::new(n, m, out)
}

/// Matrix product whose inner sums are taken in a canonical (sorted) order,
/// so permuting the reduction axis of both operands leaves every output bit
/// unchanged. Used where the reduction runs over cities.
pub fn matmul_canonical(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    if a.cols != b.rows {
        return Err(MvarError::shape(format!(
            "matmul: left operand is {}x{}, right operand is {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    let (n, k, m) = (a.rows, a.cols, b.cols);
    let mut out = vec![0.0; n * m];
    let mut terms = vec![0.0; k];
    for i in 0..n {
        for j in 0..m {
            for (p, t) in terms.iter_mut().enumerate() {
                *t = a.values[i * k + p] * b.values[p * m + j];
            }
            out[i * m + j] = canonical_sum(&mut terms);
        }
    }
    DenseMatrix::new(n, m, out)
}

/// Sum that does not depend on the order of `terms` (sorts in place).
pub(crate) fn canonical_sum(terms: &mut [f64]) -> f64 {
    terms.sort_unstable_by(f64::total_cmp);
    terms.iter().sum()
}

/// Row-wise softmax, stabilized by subtracting each row's maximum.
pub fn softmax_rows(m: &DenseMatrix) -> Result<DenseMatrix> {
    if !m.is_finite() {
        return Err(MvarError::NonFinite("softmax input contains NaN or infinity".into()));
    }
    let mut out = m.clone();
    let mut scratch = vec![0.0; m.cols];
    for r in 0..m.rows {
        let row = out.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for v in row.iter_mut() {
            *v = (*v - max).exp();
        }
        scratch.copy_from_slice(row);
        let total = canonical_sum(&mut scratch);
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    Ok(out)
}

/// Per-row statistics retained by [`layer_norm_with_cache`] for the backward pass.
#[derive(Debug, Clone)]
pub struct LayerNormCache {
    pub normalized: DenseMatrix,
    pub inv_std: Vec<f64>,
}

pub fn layer_norm(x: &DenseMatrix, gain: &[f64], bias: &[f64], eps: f64) -> Result<DenseMatrix> {
    layer_norm_with_cache(x, gain, bias, eps).map(|(y, _)| y)
}

/// Normalizes each row to zero mean and unit population variance, then applies
/// `gain ⊙ x̂ + bias`.
pub fn layer_norm_with_cache(
    x: &DenseMatrix,
    gain: &[f64],
    bias: &[f64],
    eps: f64,
) -> Result<(DenseMatrix, LayerNormCache)> {
    if gain.len() != x.cols || bias.len() != x.cols {
        return Err(MvarError::shape(format!(
            "layer_norm: gain/bias lengths {}/{} do not match {} columns",
            gain.len(),
            bias.len(),
            x.cols
        )));
    }
    let c = x.cols as f64;
    let mut normalized = x.clone();
    let mut out = x.clone();
    let mut inv_std = Vec::with_capacity(x.rows);
    for r in 0..x.rows {
        let row = x.row(r);
        let mean = row.iter().sum::<f64>() / c;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c;
        let inv = 1.0 / (var + eps).sqrt();
        inv_std.push(inv);
        for ((n, o), (&v, (&g, &b))) in normalized
            .row_mut(r)
            .iter_mut()
            .zip(out.row_mut(r).iter_mut())
            .zip(row.iter().zip(gain.iter().zip(bias)))
        {
            *n = (v - mean) * inv;
            *o = g * *n + b;
        }
    }
    Ok((out, LayerNormCache { normalized, inv_std }))
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

pub fn gelu_scalar(x: f64) -> f64 {
    x * normal_cdf(x)
}

/// d/dx of `x·Φ(x)`.
pub fn gelu_derivative(x: f64) -> f64 {
    let pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    normal_cdf(x) + x * pdf
}

/// Elementwise GELU in its exact erf form.
pub fn gelu(x: &DenseMatrix) -> DenseMatrix {
    x.map(gelu_scalar)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn approx(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn construction_rejects_bad_lengths() {
        assert!(DenseMatrix::new(2, 2, vec![1.0; 3]).is_err());
        assert!(DenseMatrix::new(0, 2, vec![]).is_err());
    }

    #[test]
    fn identity_product_is_noop() {
        let m = DenseMatrix::from_rows(&[vec![1.5, -2.0, 3.0], vec![0.25, 4.0, -1.0]]).unwrap();
        let i2 = DenseMatrix::identity(2);
        assert_eq!(matmul(&i2, &m).unwrap(), m);
        let i3 = DenseMatrix::identity(3);
        assert_eq!(matmul(&m, &i3).unwrap(), m);
    }

    #[test]
    fn hand_product() {
        let a = DenseMatrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let b = DenseMatrix::from_rows(&[vec![5.0], vec![6.0]]).unwrap();
        let c = matmul(&a, &b).unwrap();
        assert_eq!(c.values(), &[17.0, 39.0]);
    }

    #[test]
    fn mismatch_names_both_shapes() {
        let a = DenseMatrix::zeros(2, 3);
        let b = DenseMatrix::zeros(2, 3);
        let err = matmul(&a, &b).unwrap_err().to_string();
        assert!(err.contains("2x3") && err.matches("2x3").count() == 2, "{err}");
    }

    #[test]
    fn transposed_products_agree_with_plain() {
        let a = DenseMatrix::from_fn(4, 3, |i, j| (i as f64) - 0.5 * j as f64);
        let b = DenseMatrix::from_fn(5, 3, |i, j| (i * j) as f64 * 0.1 + 1.0);
        let c = DenseMatrix::from_fn(4, 5, |i, j| (i + 2 * j) as f64 * 0.3);
        let ab = matmul(&a, &b.transpose()).unwrap();
        assert!(ab.max_abs_diff(&matmul_transb(&a, &b).unwrap()) < 1e-12);
        let ac = matmul(&a.transpose(), &c).unwrap();
        assert!(ac.max_abs_diff(&matmul_transa(&a, &c).unwrap()) < 1e-12);
        let ab2 = matmul(&a, &b.transpose()).unwrap();
        assert!(ab2.max_abs_diff(&matmul_canonical(&a, &b.transpose()).unwrap()) < 1e-12);
    }

    #[test]
    fn softmax_examples() {
        let c = 3.7;
        let m = DenseMatrix::from_rows(&[
            vec![c, c],
            vec![0.0, 3f64.ln()],
            vec![1000.0, 0.0],
        ])
        .unwrap();
        let s = softmax_rows(&m).unwrap();
        assert_eq!(s.row(0), &[0.5, 0.5]);
        assert!(approx(s.get(1, 0), 0.25, 1e-15));
        assert!(approx(s.get(1, 1), 0.75, 1e-15));
        assert_eq!(s.get(2, 0), 1.0);
        assert!(s.get(2, 1) < 1e-300);
        assert!(s.is_finite());
    }

    #[test]
    fn softmax_rejects_nan() {
        let m = DenseMatrix::new(1, 2, vec![f64::NAN, 0.0]).unwrap();
        assert!(matches!(softmax_rows(&m), Err(MvarError::NonFinite(_))));
    }

    #[test]
    fn layer_norm_examples() {
        let x = DenseMatrix::from_rows(&[vec![4.0, 4.0, 4.0], vec![1.0, 3.0, 2.0]]).unwrap();
        let ones = [1.0; 3];
        let zeros = [0.0; 3];
        let y = layer_norm(&x, &ones, &zeros, 1e-5).unwrap();
        assert_eq!(y.row(0), &[0.0, 0.0, 0.0]);

        let x2 = DenseMatrix::from_rows(&[vec![1.0, 3.0]]).unwrap();
        let y2 = layer_norm(&x2, &[1.0, 1.0], &[0.0, 0.0], 0.0).unwrap();
        assert_eq!(y2.row(0), &[-1.0, 1.0]);

        let bias = [0.5, -1.0, 2.0];
        let y3 = layer_norm(&x, &zeros, &bias, 1e-5).unwrap();
        assert_eq!(y3.row(0), &bias);
        assert_eq!(y3.row(1), &bias);
    }

    #[test]
    fn layer_norm_rejects_wrong_gain_length() {
        let x = DenseMatrix::zeros(2, 3);
        assert!(layer_norm(&x, &[1.0; 2], &[0.0; 3], 1e-5).is_err());
    }

    #[test]
    fn gelu_examples() {
        assert_eq!(gelu_scalar(0.0), 0.0);
        assert!(approx(gelu_scalar(10.0), 10.0, 1e-6));
        // Φ(1) = 0.841344746068543 (standard normal table, 15 digits).
        assert!(approx(gelu_scalar(1.0), 0.841_344_746_068_543, 1e-12));
    }

    #[test]
    fn gelu_derivative_matches_central_difference() {
        for &x in &[-3.0, -0.7, 0.0, 0.4, 2.5] {
            let h = 1e-6;
            let fd = (gelu_scalar(x + h) - gelu_scalar(x - h)) / (2.0 * h);
            assert!(approx(fd, gelu_derivative(x), 1e-8), "x={x}");
        }
    }
}
