use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major `f64` tensor.
///
/// Matrix operations treat a 1-D tensor of width `n` as a `1 × n` row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::dim(format!(
                "shape {:?} needs {} values, got {}",
                shape,
                expected,
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self { shape: shape.to_vec(), data: vec![0.0; n] }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Self { shape: shape.to_vec(), data: vec![value; n] }
    }

    pub fn scalar(value: f64) -> Self {
        Self { shape: vec![], data: vec![value] }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Self { shape: vec![data.len()], data }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    /// Stacks equal-width 1-D tensors (or single rows) into a matrix.
    pub fn stack_rows(rows: &[Tensor]) -> Result<Self> {
        let first = rows.first().ok_or(Error::EmptySequence("stack_rows"))?;
        let width = first.len();
        let mut data = Vec::with_capacity(width * rows.len());
        for r in rows {
            if r.len() != width {
                return Err(Error::dim(format!("row width {} != {}", r.len(), width)));
            }
            data.extend_from_slice(&r.data);
        }
        Self::matrix(rows.len(), width, data)
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
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

    /// `(rows, cols)` view; scalars are `1 × 1`, vectors `1 × n`.
    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape.len() {
            0 => Ok((1, 1)),
            1 => Ok((1, self.shape[0])),
            2 => Ok((self.shape[0], self.shape[1])),
            _ => Err(Error::dim(format!("expected rank ≤ 2, got {:?}", self.shape))),
        }
    }

    pub fn rows(&self) -> usize {
        self.dims2().map(|d| d.0).unwrap_or(0)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let (_, c) = self.dims2().expect("rank ≤ 2");
        &self.data[i * c..(i + 1) * c]
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::dim(format!("cannot reshape {:?} to {:?}", self.shape, shape)));
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn item(&self) -> Result<f64> {
        if self.data.len() != 1 {
            return Err(Error::Contract(format!("expected a scalar, got shape {:?}", self.shape)));
        }
        Ok(self.data[0])
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn sq_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn scale_in_place(&mut self, c: f64) {
        self.data.iter_mut().for_each(|v| *v *= c);
    }

    pub fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        if self.data.len() != other.data.len() {
            return Err(Error::dim(format!("add {:?} += {:?}", self.shape, other.shape)));
        }
        self.data.iter_mut().zip(&other.data).for_each(|(a, b)| *a += b);
        Ok(())
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn dot(&self, other: &Tensor) -> Result<f64> {
        if self.data.len() != other.data.len() {
            return Err(Error::dim(format!("dot of widths {} and {}", self.len(), other.len())));
        }
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    pub fn transpose(&self) -> Result<Self> {
        let (r, c) = self.dims2()?;
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Self::matrix(c, r, out)
    }

    /// `self (m×k) · other (k×n)`.
    pub fn matmul(&self, other: &Tensor) -> Result<Self> {
        let (m, k) = self.dims2()?;
        let (k2, n) = other.dims2()?;
        if k != k2 {
            return Err(Error::dim(format!(
                "matmul {:?} x {:?}",
                self.shape, other.shape
            )));
        }
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let a_row = &self.data[i * k..(i + 1) * k];
            let o_row = &mut out[i * n..(i + 1) * n];
            for (p, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let b_row = &other.data[p * n..(p + 1) * n];
                for (o, &b) in o_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Self::matrix(m, n, out)
    }

    /// Row slice `[start, end)` of a matrix.
    pub fn slice_rows(&self, start: usize, end: usize) -> Result<Self> {
        let (r, c) = self.dims2()?;
        if start >= end || end > r {
            return Err(Error::dim(format!("row slice {start}..{end} of {r} rows")));
        }
        Self::matrix(end - start, c, self.data[start * c..end * c].to_vec())
    }
}
