use serde::{Deserialize, Serialize};

use super::{NumericError, Shape};

/// Row-major dense matrix of `f64`. Vectors are `1 x n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RealMat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl RealMat {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, NumericError> {
        if data.len() != rows * cols {
            return Err(NumericError::ShapeMismatch {
                op: "new",
                left: (rows, cols),
                right: (data.len(), 1),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self { rows, cols, data: vec![value; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn row_vector(data: Vec<f64>) -> Self {
        Self { rows: 1, cols: data.len(), data }
    }

    pub fn scalar(x: f64) -> Self {
        Self { rows: 1, cols: 1, data: vec![x] }
    }

    pub fn shape(&self) -> Shape {
        (self.rows, self.cols)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
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

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// `self * x` for a column vector given as a slice.
    pub fn mat_vec(&self, x: &[f64]) -> Result<Vec<f64>, NumericError> {
        if x.len() != self.cols {
            return Err(NumericError::ShapeMismatch {
                op: "mat_vec",
                left: self.shape(),
                right: (x.len(), 1),
            });
        }
        Ok((0..self.rows)
            .map(|i| self.row(i).iter().zip(x).map(|(a, b)| a * b).sum())
            .collect())
    }
}

/// Complex vector stored as separate real and imaginary parts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexVec {
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

impl ComplexVec {
    pub fn new(re: Vec<f64>, im: Vec<f64>) -> Result<Self, NumericError> {
        if re.len() != im.len() {
            return Err(NumericError::ShapeMismatch {
                op: "complex",
                left: (1, re.len()),
                right: (1, im.len()),
            });
        }
        Ok(Self { re, im })
    }

    pub fn zeros(k: usize) -> Self {
        Self { re: vec![0.0; k], im: vec![0.0; k] }
    }

    pub fn dim(&self) -> usize {
        self.re.len()
    }

    /// Unit-modulus vector `e^{i theta}`.
    pub fn from_angles(theta: &[f64]) -> Self {
        Self {
            re: theta.iter().map(|t| t.cos()).collect(),
            im: theta.iter().map(|t| t.sin()).collect(),
        }
    }

    /// Elementwise (Hadamard) product.
    pub fn hadamard(&self, other: &Self) -> Result<Self, NumericError> {
        if self.dim() != other.dim() {
            return Err(NumericError::ShapeMismatch {
                op: "hadamard",
                left: (1, self.dim()),
                right: (1, other.dim()),
            });
        }
        let (re, im) = (0..self.dim())
            .map(|j| {
                let (a, b, c, d) = (self.re[j], self.im[j], other.re[j], other.im[j]);
                (a * c - b * d, a * d + b * c)
            })
            .unzip();
        Ok(Self { re, im })
    }

    /// Rotates each coordinate by the matching angle.
    pub fn rotate(&self, theta: &[f64]) -> Result<Self, NumericError> {
        if theta.len() != self.dim() {
            return Err(NumericError::ShapeMismatch {
                op: "rotate",
                left: (1, self.dim()),
                right: (1, theta.len()),
            });
        }
        let (re, im) = (0..self.dim())
            .map(|j| {
                let (c, s) = (theta[j].cos(), theta[j].sin());
                (self.re[j] * c - self.im[j] * s, self.re[j] * s + self.im[j] * c)
            })
            .unzip();
        Ok(Self { re, im })
    }

    pub fn modulus(&self) -> Vec<f64> {
        self.re.iter().zip(&self.im).map(|(a, b)| a.hypot(*b)).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.re.iter().chain(&self.im).all(|x| x.is_finite())
    }
}

/// L1 norm of a real slice.
pub fn l1_norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v.abs()).sum()
}
