use serde::{Deserialize, Serialize};

use crate::error::{shape_mismatch, Error, Result};
use crate::numcore::kernels;

/// Dense row-major array of `f64` values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.iter().product::<usize>() != data.len() || shape.iter().any(|&s| s == 0) {
            return Err(Error::InvalidShape {
                shape: shape.as_slice().into(),
                len: data.len(),
            });
        }
        Ok(Tensor { shape, data })
    }

    /// Builds a matrix, allowing zero rows (empty feature sets are legal data).
    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows * cols != data.len() || cols == 0 {
            return Err(Error::InvalidShape {
                shape: [rows, cols].as_slice().into(),
                len: data.len(),
            });
        }
        Ok(Tensor {
            shape: vec![rows, cols],
            data,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn vector(values: &[f64]) -> Self {
        Tensor {
            shape: vec![values.len()],
            data: values.to_vec(),
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Tensor::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    /// Stacks equal-length rows into a matrix.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(shape_mismatch("from_rows", &[cols], &[r.len()]));
            }
            data.extend_from_slice(r);
        }
        Tensor::matrix(rows.len(), cols.max(1), data).or_else(|e| {
            if rows.is_empty() {
                Ok(Tensor {
                    shape: vec![0, 1],
                    data: vec![],
                })
            } else {
                Err(e)
            }
        })
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

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.is_scalar() {
            Ok(self.data[0])
        } else {
            Err(Error::NotScalar {
                op: "item",
                shape: self.shape.as_slice().into(),
            })
        }
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Rows of a matrix (or 1 for a vector, which is treated as a row).
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            2 => self.shape[0],
            _ => 1,
        }
    }

    pub fn cols(&self) -> usize {
        *self.shape.last().unwrap_or(&1)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let c = self.cols();
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols() + j]
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(shape_mismatch("reshape", &self.shape, shape));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Tensor, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(shape_mismatch(op, &self.shape, &other.shape));
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_map(other, "add", |a, b| a + b)
    }

    pub fn scale(&self, s: f64) -> Tensor {
        self.map(|v| v * s)
    }

    /// In-place `self += other`.
    pub fn accumulate(&mut self, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(shape_mismatch("accumulate", &self.shape, &other.shape));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    /// Left-to-right sum of all elements.
    pub fn sum(&self) -> f64 {
        self.data.iter().fold(0.0, |acc, &v| acc + v)
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.data.len() as f64
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    fn require_matrix(&self, op: &'static str) -> Result<(usize, usize)> {
        if self.shape.len() != 2 {
            return Err(Error::Domain {
                op,
                detail: format!("expected a matrix, got shape {:?}", self.shape),
            });
        }
        Ok((self.shape[0], self.shape[1]))
    }

    /// `self · other`.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (m, k) = self.require_matrix("matmul")?;
        let (k2, n) = other.require_matrix("matmul")?;
        if k != k2 {
            return Err(shape_mismatch("matmul", &self.shape, &other.shape));
        }
        Ok(Tensor {
            shape: vec![m, n],
            data: kernels::matmul(&self.data, &other.data, m, k, n),
        })
    }

    /// `self · otherᵀ`.
    pub fn matmul_nt(&self, other: &Tensor) -> Result<Tensor> {
        let (m, k) = self.require_matrix("matmul_nt")?;
        let (n, k2) = other.require_matrix("matmul_nt")?;
        if k != k2 {
            return Err(shape_mismatch("matmul_nt", &self.shape, &other.shape));
        }
        Ok(Tensor {
            shape: vec![m, n],
            data: kernels::matmul_nt(&self.data, &other.data, m, k, n),
        })
    }

    /// `selfᵀ · other`.
    pub fn matmul_tn(&self, other: &Tensor) -> Result<Tensor> {
        let (k, m) = self.require_matrix("matmul_tn")?;
        let (k2, n) = other.require_matrix("matmul_tn")?;
        if k != k2 {
            return Err(shape_mismatch("matmul_tn", &self.shape, &other.shape));
        }
        Ok(Tensor {
            shape: vec![m, n],
            data: kernels::matmul_tn(&self.data, &other.data, k, m, n),
        })
    }

    pub fn transpose(&self) -> Result<Tensor> {
        let (m, n) = self.require_matrix("transpose")?;
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = self.data[i * n + j];
            }
        }
        Ok(Tensor {
            shape: vec![n, m],
            data: out,
        })
    }

    /// Rows selected by index, in the given order (repeats allowed).
    pub fn select_rows(&self, idx: &[usize]) -> Result<Tensor> {
        let (m, n) = self.require_matrix("select_rows")?;
        let mut data = Vec::with_capacity(idx.len() * n);
        for &i in idx {
            if i >= m {
                return Err(Error::Domain {
                    op: "select_rows",
                    detail: format!("row {i} out of range for {m} rows"),
                });
            }
            data.extend_from_slice(&self.data[i * n..(i + 1) * n]);
        }
        Ok(Tensor {
            shape: vec![idx.len(), n],
            data,
        })
    }

    /// Divides each row by its Euclidean norm.
    pub fn l2_normalize_rows(&self) -> Result<Tensor> {
        let mut out = self.clone();
        let c = self.cols();
        for (r, row) in out.data.chunks_mut(c).enumerate() {
            let norm = kernels::dot(row, row).sqrt();
            if norm <= 1e-12 {
                return Err(Error::ZeroNorm {
                    op: "l2_normalize",
                    row: r,
                });
            }
            row.iter_mut().for_each(|v| *v /= norm);
        }
        Ok(out)
    }

    /// Numerically stable `ln Σ exp(x)` over all elements.
    pub fn log_sum_exp(&self) -> f64 {
        log_sum_exp(&self.data)
    }
}

/// Max-shifted log-sum-exp; `-inf` for an empty slice.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let s = xs.iter().fold(0.0, |acc, &v| acc + (v - max).exp());
    max + s.ln()
}
