//! Dense row-major 2-D tensors of `f64`.
//!
//! Every quantity in the library is at most `(batch, features)`: the first
//! dimension is the batch size `n` and the second the feature width `d`.
//! Broadcasting is limited to scalar-vs-tensor, plus the row-vector helpers
//! used for biases.

use std::fmt;

use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};
use rand_pcg::Pcg64;

use crate::error::{shape_err, Error, Result};

/// Seedable random source.
///
/// Backed by PCG64 (O'Neill's PCG XSL-RR 128/64 generator, see
/// <https://www.pcg-random.org/>), seeded through `SeedableRng::seed_from_u64`
/// (a PCG32 expansion of the 64-bit seed). The same seed yields the same
/// stream on every platform.
#[derive(Clone, Debug)]
pub struct Rng {
    seed: u64,
    inner: Pcg64,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: Pcg64::seed_from_u64(seed),
        }
    }

    /// The seed this generator was created from.
    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Uniform sample on `[0, 1)`.
    pub fn next_f64(&mut self) -> f64 {
        rand::Rng::random::<f64>(&mut self.inner)
    }

    /// Uniform integer on the inclusive range `[lo, hi]`.
    pub fn int_in(&mut self, lo: u64, hi: u64) -> u64 {
        rand::Rng::random_range(&mut self.inner, lo..=hi)
    }

    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }
}

/// Dense `(rows, cols)` matrix stored row-major.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor({}x{}) ", self.rows, self.cols)?;
        if self.data.len() <= 16 {
            write!(f, "{:?}", self.data)
        } else {
            write!(f, "[{}, {}, ..]", self.data[0], self.data[1])
        }
    }
}

impl Tensor {
    /// Builds a tensor from row-major data, checking the length and that every
    /// entry is finite.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Domain(format!("empty shape ({rows}, {cols})")));
        }
        if data.len() != rows * cols {
            return Err(Error::Domain(format!(
                "data length {} does not match shape ({rows}, {cols})",
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("non-finite entry {bad}")));
        }
        Ok(Self { rows, cols, data })
    }

    /// Internal constructor for results of arithmetic; skips validation.
    pub(crate) fn raw(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Self { rows, cols, data }
    }

    pub fn full(rows: usize, cols: usize, value: f64) -> Self {
        assert!(rows > 0 && cols > 0, "empty shape ({rows}, {cols})");
        Self::raw(rows, cols, vec![value; rows * cols])
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::full(rows, cols, 0.0)
    }

    pub fn ones(rows: usize, cols: usize) -> Self {
        Self::full(rows, cols, 1.0)
    }

    pub fn scalar(value: f64) -> Self {
        Self::full(1, 1, value)
    }

    pub fn eye(n: usize) -> Self {
        Self::from_fn(n, n, |r, c| if r == c { 1.0 } else { 0.0 })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self::raw(rows, cols, data)
    }

    /// `(n, 1)` column from a slice.
    pub fn column(values: &[f64]) -> Result<Self> {
        Self::new(values.len(), 1, values.to_vec())
    }

    /// `(1, d)` row from a slice.
    pub fn row(values: &[f64]) -> Result<Self> {
        Self::new(1, values.len(), values.to_vec())
    }

    /// `n` evenly spaced points on `[lo, hi]` as an `(n, 1)` column.
    pub fn linspace(lo: f64, hi: f64, n: usize) -> Self {
        assert!(n >= 1);
        if n == 1 {
            return Self::scalar(lo);
        }
        let h = (hi - lo) / (n - 1) as f64;
        Self::from_fn(n, 1, |r, _| if r == n - 1 { hi } else { lo + h * r as f64 })
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

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    /// Value of a `(1, 1)` tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.shape(), (1, 1), "item() on non-scalar tensor");
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self::raw(self.rows, self.cols, self.data.iter().map(|&v| f(v)).collect())
    }

    fn check_same(&self, other: &Self, op: &'static str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(shape_err(op, self.shape(), other.shape()));
        }
        Ok(())
    }

    pub(crate) fn zip_unchecked(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        debug_assert_eq!(self.shape(), other.shape());
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Self::raw(self.rows, self.cols, data)
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.check_same(other, "zip_map")?;
        Ok(self.zip_unchecked(other, f))
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check_same(other, "add")?;
        Ok(self.zip_unchecked(other, |a, b| a + b))
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.check_same(other, "sub")?;
        Ok(self.zip_unchecked(other, |a, b| a - b))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.check_same(other, "mul")?;
        Ok(self.zip_unchecked(other, |a, b| a * b))
    }

    pub fn scale(&self, c: f64) -> Self {
        self.map(|v| v * c)
    }

    pub fn add_scalar(&self, c: f64) -> Self {
        self.map(|v| v + c)
    }

    /// In-place `self += c * other`.
    pub(crate) fn axpy_in_place(&mut self, c: f64, other: &Self) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += c * b;
        }
    }

    pub fn transpose(&self) -> Self {
        let mut out = vec![0.0; self.data.len()];
        for r in 0..self.rows {
            for c in 0..self.cols {
                out[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        Self::raw(self.cols, self.rows, out)
    }

    /// Standard matrix product `self · other`.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        Self::matmul_with(self, false, other, false)
    }

    /// `op(a) · op(b)` where `op` optionally transposes its operand.
    pub fn matmul_with(a: &Self, trans_a: bool, b: &Self, trans_b: bool) -> Result<Self> {
        let (m, ka) = if trans_a { (a.cols, a.rows) } else { a.shape() };
        let (kb, n) = if trans_b { (b.cols, b.rows) } else { b.shape() };
        if ka != kb {
            let sa = if trans_a { (a.cols, a.rows) } else { a.shape() };
            let sb = if trans_b { (b.cols, b.rows) } else { b.shape() };
            return Err(shape_err("matmul", sa, sb));
        }
        Ok(Self::gemm(a, trans_a, b, trans_b, m, ka, n))
    }

    pub(crate) fn gemm(a: &Self, trans_a: bool, b: &Self, trans_b: bool, m: usize, k: usize, n: usize) -> Self {
        let mut out = vec![0.0; m * n];
        let (rsa, csa) = if trans_a { (1, a.cols) } else { (a.cols, 1) };
        let (rsb, csb) = if trans_b { (1, b.cols) } else { (b.cols, 1) };
        // SAFETY: strides and extents describe exactly the buffers of `a`, `b`
        // (shape-checked by the caller) and the freshly allocated `out`.
        unsafe {
            matrixmultiply::dgemm(
                m,
                k,
                n,
                1.0,
                a.data.as_ptr(),
                rsa as isize,
                csa as isize,
                b.data.as_ptr(),
                rsb as isize,
                csb as isize,
                0.0,
                out.as_mut_ptr(),
                n as isize,
                1,
            );
        }
        Self::raw(m, n, out)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.data.len() as f64
    }

    /// Column sums as a `(1, d)` row.
    pub fn sum_rows(&self) -> Self {
        let mut out = vec![0.0; self.cols];
        for row in self.data.chunks_exact(self.cols) {
            for (o, v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        Self::raw(1, self.cols, out)
    }

    /// Repeats a `(1, d)` row `n` times.
    pub fn broadcast_rows(&self, n: usize) -> Result<Self> {
        if self.rows != 1 {
            return Err(shape_err("broadcast_rows", self.shape(), (1, self.cols)));
        }
        let mut data = Vec::with_capacity(n * self.cols);
        for _ in 0..n {
            data.extend_from_slice(&self.data);
        }
        Ok(Self::raw(n, self.cols, data))
    }

    /// Columns `start..start + len` as a new tensor.
    pub fn slice_cols(&self, start: usize, len: usize) -> Result<Self> {
        if len == 0 || start + len > self.cols {
            return Err(Error::Domain(format!(
                "column slice {start}..{} out of range for {} columns",
                start + len,
                self.cols
            )));
        }
        let mut data = Vec::with_capacity(self.rows * len);
        for row in self.data.chunks_exact(self.cols) {
            data.extend_from_slice(&row[start..start + len]);
        }
        Ok(Self::raw(self.rows, len, data))
    }

    pub fn col(&self, j: usize) -> Result<Self> {
        self.slice_cols(j, 1)
    }

    /// Places `self` into columns `start..` of a zero tensor with `total` columns.
    pub(crate) fn pad_cols(&self, total: usize, start: usize) -> Self {
        debug_assert!(start + self.cols <= total);
        let mut out = vec![0.0; self.rows * total];
        for (dst, src) in out.chunks_exact_mut(total).zip(self.data.chunks_exact(self.cols)) {
            dst[start..start + self.cols].copy_from_slice(src);
        }
        Self::raw(self.rows, total, out)
    }

    /// Horizontal concatenation; all parts must share the row count.
    pub fn concat_cols(parts: &[&Self]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Domain("concat of zero tensors".into()))?;
        let rows = first.rows;
        for p in parts {
            if p.rows != rows {
                return Err(shape_err("concat_cols", first.shape(), p.shape()));
            }
        }
        let cols: usize = parts.iter().map(|p| p.cols).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for p in parts {
                data.extend_from_slice(&p.data[r * p.cols..(r + 1) * p.cols]);
            }
        }
        Ok(Self::raw(rows, cols, data))
    }

    /// I.i.d. uniform entries on `[lo, hi)`.
    pub fn uniform(rng: &mut Rng, n: usize, d: usize, lo: f64, hi: f64) -> Result<Self> {
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::Domain(format!("uniform bounds need lo < hi, got [{lo}, {hi})")));
        }
        let span = hi - lo;
        let data = (0..n * d).map(|_| lo + span * rng.next_f64()).collect();
        Tensor::new(n, d, data)
    }

    /// I.i.d. Gaussian entries with the given mean and variance.
    pub fn normal(rng: &mut Rng, n: usize, d: usize, mean: f64, var: f64) -> Result<Self> {
        if !(var > 0.0) || !var.is_finite() {
            return Err(Error::Domain(format!("normal variance must be positive, got {var}")));
        }
        let std = var.sqrt();
        let data = (0..n * d).map(|_| mean + std * rng.standard_normal()).collect();
        Tensor::new(n, d, data)
    }
}
