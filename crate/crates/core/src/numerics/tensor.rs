//! Dense 1-D and 2-D tensors over `f64`, plus the unit-norm embedding type.
//!
//! Matrices are row-major. These types are deliberately minimal: just what a
//! small MLP, low-rank adapter algebra, and cosine-space classification need.

use crate::error::{Error, Result};
use crate::numerics::rng::SeededRng;
use serde::Serialize;

/// Dense vector.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Tensor1D {
    data: Vec<f64>,
}

impl Tensor1D {
    pub fn zeros(len: usize) -> Self {
        assert!(len > 0, "Tensor1D length must be positive");
        Tensor1D {
            data: vec![0.0; len],
        }
    }

    pub fn from_vec(data: Vec<f64>) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::shape("Tensor1D::from_vec", "empty vector"));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("non-finite element in vector".into()));
        }
        Ok(Tensor1D { data })
    }

    pub fn filled(len: usize, value: f64) -> Self {
        assert!(len > 0 && value.is_finite());
        Tensor1D {
            data: vec![value; len],
        }
    }

    pub fn random_normal(len: usize, std: f64, rng: &mut SeededRng) -> Self {
        let mut data = vec![0.0; len];
        rng.fill_normal(&mut data);
        for v in data.iter_mut() {
            *v *= std;
        }
        Tensor1D { data }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &Tensor1D) -> Result<f64> {
        if self.len() != other.len() {
            return Err(Error::shape(
                "dot",
                format!("lengths {} vs {}", self.len(), other.len()),
            ));
        }
        Ok(dot_slices(&self.data, &other.data))
    }

    pub fn add(&self, other: &Tensor1D) -> Result<Tensor1D> {
        if self.len() != other.len() {
            return Err(Error::shape(
                "vec add",
                format!("lengths {} vs {}", self.len(), other.len()),
            ));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + b)
            .collect();
        Ok(Tensor1D { data })
    }

    pub fn scale(&self, c: f64) -> Tensor1D {
        Tensor1D {
            data: self.data.iter().map(|v| v * c).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Dense row-major matrix.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Tensor2D {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor2D {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "Tensor2D dims must be positive");
        Tensor2D {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        if rows.is_empty() || rows[0].is_empty() {
            return Err(Error::shape("Tensor2D::from_rows", "empty matrix"));
        }
        let cols = rows[0].len();
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != cols {
                return Err(Error::shape(
                    "Tensor2D::from_rows",
                    format!("row {i} has {} cols, expected {cols}", row.len()),
                ));
            }
            data.extend_from_slice(row);
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("non-finite element in matrix".into()));
        }
        Ok(Tensor2D {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn from_flat(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 || data.len() != rows * cols {
            return Err(Error::shape(
                "Tensor2D::from_flat",
                format!("{rows}x{cols} does not match {} elements", data.len()),
            ));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("non-finite element in matrix".into()));
        }
        Ok(Tensor2D { rows, cols, data })
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Tensor2D::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn random_normal(rows: usize, cols: usize, std: f64, rng: &mut SeededRng) -> Self {
        let mut data = vec![0.0; rows * cols];
        rng.fill_normal(&mut data);
        for v in data.iter_mut() {
            *v *= std;
        }
        Tensor2D { rows, cols, data }
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

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// `self · x` for a column vector `x`.
    pub fn matvec(&self, x: &Tensor1D) -> Result<Tensor1D> {
        if self.cols != x.len() {
            return Err(Error::shape(
                "matvec",
                format!("{}x{} by vector of {}", self.rows, self.cols, x.len()),
            ));
        }
        let mut out = vec![0.0; self.rows];
        for (r, o) in out.iter_mut().enumerate() {
            *o = dot_slices(self.row(r), x.as_slice());
        }
        Ok(Tensor1D { data: out })
    }

    /// `selfᵀ · x`.
    pub fn matvec_transposed(&self, x: &Tensor1D) -> Result<Tensor1D> {
        if self.rows != x.len() {
            return Err(Error::shape(
                "matvec_transposed",
                format!("{}x{} transposed by vector of {}", self.rows, self.cols, x.len()),
            ));
        }
        let mut out = vec![0.0; self.cols];
        for (r, &xi) in x.as_slice().iter().enumerate() {
            axpy(xi, self.row(r), &mut out);
        }
        Ok(Tensor1D { data: out })
    }

    /// `self · other`, accumulated row-wise so inner loops stay contiguous.
    pub fn matmul(&self, other: &Tensor2D) -> Result<Tensor2D> {
        if self.cols != other.rows {
            return Err(Error::shape(
                "matmul",
                format!(
                    "{}x{} by {}x{}",
                    self.rows, self.cols, other.rows, other.cols
                ),
            ));
        }
        let mut out = Tensor2D::zeros(self.rows, other.cols);
        for r in 0..self.rows {
            let a_row = self.row(r);
            let out_row = out.row_mut(r);
            for (k, &a) in a_row.iter().enumerate() {
                if a != 0.0 {
                    axpy(a, other.row(k), out_row);
                }
            }
        }
        Ok(out)
    }

    /// `self · otherᵀ`; both operands are read along contiguous rows.
    pub fn matmul_nt(&self, other: &Tensor2D) -> Result<Tensor2D> {
        if self.cols != other.cols {
            return Err(Error::shape(
                "matmul_nt",
                format!(
                    "{}x{} by ({}x{})ᵀ",
                    self.rows, self.cols, other.rows, other.cols
                ),
            ));
        }
        let mut out = Tensor2D::zeros(self.rows, other.rows);
        for r in 0..self.rows {
            let a_row = self.row(r);
            let out_row = out.row_mut(r);
            for (c, o) in out_row.iter_mut().enumerate() {
                *o = dot_slices(a_row, other.row(c));
            }
        }
        Ok(out)
    }

    /// `selfᵀ · other`.
    pub fn matmul_tn(&self, other: &Tensor2D) -> Result<Tensor2D> {
        if self.rows != other.rows {
            return Err(Error::shape(
                "matmul_tn",
                format!(
                    "({}x{})ᵀ by {}x{}",
                    self.rows, self.cols, other.rows, other.cols
                ),
            ));
        }
        let mut out = Tensor2D::zeros(self.cols, other.cols);
        for r in 0..self.rows {
            let a_row = self.row(r);
            for (k, &a) in a_row.iter().enumerate() {
                if a != 0.0 {
                    axpy(a, other.row(r), out.row_mut(k));
                }
            }
        }
        Ok(out)
    }

    pub fn add(&self, other: &Tensor2D) -> Result<Tensor2D> {
        if self.shape() != other.shape() {
            return Err(Error::shape(
                "mat add",
                format!("{:?} vs {:?}", self.shape(), other.shape()),
            ));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + b)
            .collect();
        Ok(Tensor2D {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    pub fn scale(&self, c: f64) -> Tensor2D {
        Tensor2D {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * c).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[inline]
pub(crate) fn dot_slices(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `out += a * x`, elementwise.
#[inline]
pub(crate) fn axpy(a: f64, x: &[f64], out: &mut [f64]) {
    debug_assert_eq!(x.len(), out.len());
    for (o, &xi) in out.iter_mut().zip(x) {
        *o += a * xi;
    }
}

/// Unit-norm vector in the shared embedding space.
///
/// Plays the role of visual embeddings, zero-shot text embeddings, and
/// adapter-refined text embeddings alike; cosine similarity between two of
/// these is a plain dot product.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EmbeddingVector(Tensor1D);

impl EmbeddingVector {
    /// Wrap a vector that is already unit-norm (within 1e-12).
    pub fn from_normalized(t: Tensor1D) -> Result<Self> {
        let n = t.norm();
        if (n - 1.0).abs() > 1e-12 {
            return Err(Error::Domain(format!(
                "embedding norm {n} is not 1 within 1e-12"
            )));
        }
        Ok(EmbeddingVector(t))
    }

    /// Wrap a vector that was stored at float32 precision: the norm may be
    /// off by rounding, and the values are kept bit-exact rather than
    /// renormalized.
    pub(crate) fn from_f32_stored(t: Tensor1D) -> Result<Self> {
        let n = t.norm();
        if (n - 1.0).abs() > 1e-6 {
            return Err(Error::Domain(format!(
                "stored embedding norm {n} is not 1 within float32 rounding"
            )));
        }
        Ok(EmbeddingVector(t))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice()
    }

    pub fn tensor(&self) -> &Tensor1D {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor1D {
        self.0
    }

    /// Cosine similarity; both sides are unit-norm so this is the dot product.
    pub fn cosine(&self, other: &EmbeddingVector) -> Result<f64> {
        self.0.dot(&other.0)
    }
}

/// Normalize to unit L2 norm. Errors on the zero vector.
pub fn l2_normalize(v: &Tensor1D) -> Result<EmbeddingVector> {
    let n = v.norm();
    if n == 0.0 || !n.is_finite() {
        return Err(Error::Domain(format!("cannot normalize vector of norm {n}")));
    }
    Ok(EmbeddingVector(v.scale(1.0 / n)))
}

/// Cosine similarity between two vectors. Errors on a zero vector.
pub fn cosine_sim(a: &Tensor1D, b: &Tensor1D) -> Result<f64> {
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Domain("cosine of zero vector".into()));
    }
    Ok(a.dot(b)? / (na * nb))
}

/// Numerically stable softmax (max-subtracted).
pub fn softmax(v: &Tensor1D) -> Tensor1D {
    let max = v.as_slice().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = v.as_slice().iter().map(|&x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Tensor1D {
        data: exps.iter().map(|e| e / sum).collect(),
    }
}
