use std::ops::{AddAssign, Index, IndexMut};

use serde::{Deserialize, Serialize};

/// Square matrix of integer pair counts, row-major.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountMatrix {
    dim: usize,
    data: Vec<u64>,
}

impl CountMatrix {
    pub fn zeros(dim: usize) -> Self {
        CountMatrix {
            dim,
            data: vec![0; dim * dim],
        }
    }

    pub fn diagonal(values: &[u64]) -> Self {
        let mut m = CountMatrix::zeros(values.len());
        for (i, &v) in values.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn as_slice(&self) -> &[u64] {
        &self.data
    }

    pub(crate) fn as_mut_slice(&mut self) -> &mut [u64] {
        &mut self.data
    }

    pub fn total(&self) -> u64 {
        self.data.iter().sum()
    }

    pub fn transpose(&self) -> Self {
        let n = self.dim;
        let mut out = CountMatrix::zeros(n);
        for a in 0..n {
            for b in 0..n {
                out.data[b * n + a] = self.data[a * n + b];
            }
        }
        out
    }

    pub fn add_transposed(&mut self, other: &CountMatrix) {
        let n = self.dim;
        for a in 0..n {
            for b in 0..n {
                self.data[a * n + b] += other.data[b * n + a];
            }
        }
    }

    pub fn add_scaled(&mut self, other: &CountMatrix, factor: u64) {
        for (x, y) in self.data.iter_mut().zip(&other.data) {
            *x += y * factor;
        }
    }

    pub fn row_sums(&self) -> Vec<u64> {
        self.data.chunks(self.dim).map(|r| r.iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<u64> {
        let mut out = vec![0; self.dim];
        for row in self.data.chunks(self.dim) {
            for (o, v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        out
    }
}

impl Index<(usize, usize)> for CountMatrix {
    type Output = u64;
    fn index(&self, (a, b): (usize, usize)) -> &u64 {
        &self.data[a * self.dim + b]
    }
}

impl IndexMut<(usize, usize)> for CountMatrix {
    fn index_mut(&mut self, (a, b): (usize, usize)) -> &mut u64 {
        &mut self.data[a * self.dim + b]
    }
}

impl AddAssign<&CountMatrix> for CountMatrix {
    fn add_assign(&mut self, other: &CountMatrix) {
        debug_assert_eq!(self.dim, other.dim);
        for (x, y) in self.data.iter_mut().zip(&other.data) {
            *x += y;
        }
    }
}

/// Square real matrix, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    dim: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(dim: usize) -> Self {
        Matrix {
            dim,
            data: vec![0.0; dim * dim],
        }
    }

    pub fn from_vec(dim: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), dim * dim);
        Matrix { dim, data }
    }

    pub fn diagonal(values: &[f64]) -> Self {
        let mut m = Matrix::zeros(values.len());
        for (i, &v) in values.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    /// `u v^T`.
    pub fn outer(u: &[f64], v: &[f64]) -> Self {
        assert_eq!(u.len(), v.len());
        let data = u.iter().flat_map(|&x| v.iter().map(move |&y| x * y)).collect();
        Matrix { dim: u.len(), data }
    }

    pub fn from_counts(counts: &CountMatrix, denominator: f64) -> Self {
        Matrix {
            dim: counts.dim(),
            data: counts.as_slice().iter().map(|&c| c as f64 / denominator).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.dim)
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.rows().map(<[f64]>::to_vec).collect()
    }

    pub fn transpose(&self) -> Self {
        let n = self.dim;
        let mut out = Matrix::zeros(n);
        for a in 0..n {
            for b in 0..n {
                out.data[b * n + a] = self.data[a * n + b];
            }
        }
        out
    }

    pub fn scale(&self, factor: f64) -> Self {
        Matrix {
            dim: self.dim,
            data: self.data.iter().map(|x| x * factor).collect(),
        }
    }

    pub fn axpy(&mut self, factor: f64, other: &Matrix) {
        assert_eq!(self.dim, other.dim);
        for (x, y) in self.data.iter_mut().zip(&other.data) {
            *x += factor * y;
        }
    }

    pub fn total(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.rows().map(|r| r.iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for row in self.rows() {
            for (o, v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        out
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!(self.dim, other.dim);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }

    /// Entrywise L1 distance.
    pub fn l1_diff(&self, other: &Matrix) -> f64 {
        assert_eq!(self.dim, other.dim);
        self.data.iter().zip(&other.data).map(|(x, y)| (x - y).abs()).sum()
    }

    pub fn frobenius_diff(&self, other: &Matrix) -> f64 {
        assert_eq!(self.dim, other.dim);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt()
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (a, b): (usize, usize)) -> &f64 {
        &self.data[a * self.dim + b]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (a, b): (usize, usize)) -> &mut f64 {
        &mut self.data[a * self.dim + b]
    }
}
