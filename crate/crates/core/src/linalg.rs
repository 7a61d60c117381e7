//! Small dense row-major matrices. Dimensions here are tiny (n ≤ ~10), so
//! everything is straightforward loops over a flat buffer.

use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};

use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![T::zero(); rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        Self::eye(n, n)
    }

    /// Rectangular identity: the first `min(rows, cols)` coordinate columns.
    pub fn eye(rows: usize, cols: usize) -> Self {
        let mut m = Self::zeros(rows, cols);
        for i in 0..rows.min(cols) {
            m[(i, i)] = T::one();
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    /// Builds from row-major data; panics if the length does not match.
    pub fn from_row_slice(rows: usize, cols: usize, data: &[T]) -> Self {
        assert_eq!(data.len(), rows * cols, "row-major data length");
        Self { rows, cols, data: data.to_vec() }
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|row| row.len() == c), "ragged rows");
        Self { rows: r, cols: c, data: rows.concat() }
    }

    pub fn from_diagonal(diag: &[T]) -> Self {
        let mut m = Self::zeros(diag.len(), diag.len());
        for (i, d) in diag.iter().enumerate() {
            m[(i, i)] = *d;
        }
        m
    }

    pub fn from_columns(cols: &[Vec<T>]) -> Self {
        let c = cols.len();
        let r = cols.first().map_or(0, Vec::len);
        Self::from_fn(r, c, |i, j| cols[j][i])
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn column(&self, j: usize) -> Vec<T> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn set_column(&mut self, j: usize, v: &[T]) {
        for (i, x) in v.iter().enumerate() {
            self[(i, j)] = *x;
        }
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn diagonal(&self) -> Vec<T> {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).collect()
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn matmul(&self, rhs: &Self) -> Self {
        assert_eq!(self.cols, rhs.rows, "matmul inner dimension");
        let mut out = Self::zeros(self.rows, rhs.cols);
        gemm(self.rows, self.cols, rhs.cols, &self.data, &rhs.data, &mut out.data);
        out
    }

    /// `selfᵀ · rhs` without materializing the transpose.
    pub fn tr_matmul(&self, rhs: &Self) -> Self {
        assert_eq!(self.rows, rhs.rows, "tr_matmul dimension");
        Self::from_fn(self.cols, rhs.cols, |i, j| {
            (0..self.rows).map(|k| self[(k, i)] * rhs[(k, j)]).sum()
        })
    }

    pub fn mat_vec(&self, v: &[T]) -> Vec<T> {
        assert_eq!(self.cols, v.len());
        (0..self.rows)
            .map(|i| self.row(i).iter().zip(v).map(|(a, b)| *a * *b).sum())
            .collect()
    }

    /// Row vector times matrix: `v · self`.
    pub fn vec_mat(&self, v: &[T]) -> Vec<T> {
        assert_eq!(self.rows, v.len());
        (0..self.cols).map(|j| (0..self.rows).map(|i| v[i] * self[(i, j)]).sum()).collect()
    }

    pub fn scale(&self, s: T) -> Self {
        Self { rows: self.rows, cols: self.cols, data: self.data.iter().map(|x| *x * s).collect() }
    }

    pub fn sub(&self, rhs: &Self) -> Self {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| *a - *b).collect(),
        }
    }

    pub fn add(&self, rhs: &Self) -> Self {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| *a + *b).collect(),
        }
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, x| m.max(x.abs()))
    }

    pub fn trace(&self) -> T {
        self.diagonal().into_iter().sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// `max |QᵀQ − I|` over the Gram matrix of the columns.
    pub fn orthonormality_deviation(&self) -> T {
        let g = self.tr_matmul(self);
        let mut dev = T::zero();
        for i in 0..g.rows {
            for j in 0..g.cols {
                let target = if i == j { T::one() } else { T::zero() };
                dev = dev.max((g[(i, j)] - target).abs());
            }
        }
        dev
    }

    /// Determinant by LU with partial pivoting. Square matrices only.
    pub fn det(&self) -> T {
        assert_eq!(self.rows, self.cols, "det of non-square matrix");
        let n = self.rows;
        let mut a = self.data.clone();
        let mut det = T::one();
        for k in 0..n {
            let p = (k..n)
                .max_by(|&i, &j| a[i * n + k].abs().partial_cmp(&a[j * n + k].abs()).unwrap())
                .unwrap();
            if a[p * n + k] == T::zero() {
                return T::zero();
            }
            if p != k {
                for j in 0..n {
                    a.swap(k * n + j, p * n + j);
                }
                det = -det;
            }
            let pivot = a[k * n + k];
            det *= pivot;
            for i in k + 1..n {
                let f = a[i * n + k] / pivot;
                for j in k..n {
                    let akj = a[k * n + j];
                    a[i * n + j] -= f * akj;
                }
            }
        }
        det
    }

    /// Singular values (descending) by one-sided Jacobi rotations, which keeps
    /// relative accuracy for the small ones.
    pub fn singular_values(&self) -> Vec<T> {
        let (m, n) = (self.rows, self.cols);
        if m < n {
            return self.transpose().singular_values();
        }
        let mut a = self.clone();
        let tol = T::epsilon() * T::lit(4.0);
        for _sweep in 0..60 {
            let mut rotated = false;
            for p in 0..n {
                for q in p + 1..n {
                    let (mut alpha, mut beta, mut gamma) = (T::zero(), T::zero(), T::zero());
                    for i in 0..m {
                        let (ap, aq) = (a[(i, p)], a[(i, q)]);
                        alpha += ap * ap;
                        beta += aq * aq;
                        gamma += ap * aq;
                    }
                    if gamma.abs() <= tol * (alpha * beta).sqrt() || gamma == T::zero() {
                        continue;
                    }
                    rotated = true;
                    let zeta = (beta - alpha) / (T::lit(2.0) * gamma);
                    let t = zeta.signum() / (zeta.abs() + (T::one() + zeta * zeta).sqrt());
                    let c = T::one() / (T::one() + t * t).sqrt();
                    let s = c * t;
                    for i in 0..m {
                        let (ap, aq) = (a[(i, p)], a[(i, q)]);
                        a[(i, p)] = c * ap - s * aq;
                        a[(i, q)] = s * ap + c * aq;
                    }
                }
            }
            if !rotated {
                break;
            }
        }
        let mut sv: Vec<T> = (0..n)
            .map(|j| crate::scalar::norm2(&a.column(j)))
            .collect();
        sv.sort_by(|x, y| y.partial_cmp(x).unwrap_or(std::cmp::Ordering::Equal));
        sv
    }

    /// Operator 2-norm.
    pub fn spectral_norm(&self) -> T {
        self.singular_values().first().copied().unwrap_or(T::zero())
    }
}

impl<T> Index<(usize, usize)> for Matrix<T> {
    type Output = T;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &T {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl<T> IndexMut<(usize, usize)> for Matrix<T> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

/// `out = a (m×k) · b (k×n)` on flat row-major buffers.
#[inline]
pub(crate) fn gemm<T: Real>(m: usize, k: usize, n: usize, a: &[T], b: &[T], out: &mut [T]) {
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        row.iter_mut().for_each(|x| *x = T::zero());
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == T::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, bv) in row.iter_mut().zip(brow) {
                *o += aip * *bv;
            }
        }
    }
}

/// `out = aᵀ · b` where `a` is m×k and `b` is m×n, giving k×n.
#[inline]
pub(crate) fn gemm_tn<T: Real>(m: usize, k: usize, n: usize, a: &[T], b: &[T], out: &mut [T]) {
    out.iter_mut().for_each(|x| *x = T::zero());
    for r in 0..m {
        for i in 0..k {
            let ari = a[r * k + i];
            if ari == T::zero() {
                continue;
            }
            for j in 0..n {
                out[i * n + j] += ari * b[r * n + j];
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn det_and_transpose() {
        let a = Matrix::from_rows(&[vec![2.0, 1.0], vec![1.0, 3.0]]);
        assert!((a.det() - 5.0_f64).abs() < 1e-14);
        let b = Matrix::from_rows(&[vec![0.0, 1.0, 2.0], vec![1.0, 0.0, 0.0], vec![0.0, 0.0, 4.0]]);
        assert!((b.det() + 4.0_f64).abs() < 1e-14);
        assert_eq!(b.transpose().transpose(), b);
    }

    #[test]
    fn singular_values_of_known_matrices() {
        let d = Matrix::<f64>::from_diagonal(&[3.0, -5.0, 0.5]);
        let sv = d.singular_values();
        assert!((sv[0] - 5.0).abs() < 1e-14 && (sv[1] - 3.0).abs() < 1e-14 && (sv[2] - 0.5).abs() < 1e-14);
        // nonnormal [[1,3],[0,-1]]: σ² are roots of s² - 11 s + 1
        let nn = Matrix::<f64>::from_rows(&[vec![1.0, 3.0], vec![0.0, -1.0]]);
        let big = ((11.0 + 117f64.sqrt()) / 2.0).sqrt();
        assert!((nn.spectral_norm() - big).abs() < 1e-12);
        let sv = nn.singular_values();
        assert!((sv[0] * sv[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn tiny_singular_value_keeps_relative_accuracy() {
        let eps = 1e-13;
        let m = Matrix::<f64>::from_rows(&[vec![1.0, 1.0], vec![0.0, eps]]);
        let sv = m.singular_values();
        // σ_min ≈ eps / sqrt(2)
        assert!((sv[1] / (eps / 2f64.sqrt()) - 1.0).abs() < 1e-6, "{sv:?}");
    }

    #[test]
    fn gemm_tn_matches_explicit_transpose() {
        let a = Matrix::<f64>::from_fn(4, 2, |i, j| (i * 3 + j) as f64 - 2.5);
        let b = Matrix::<f64>::from_fn(4, 3, |i, j| (i as f64).sin() + j as f64);
        let mut out = vec![0.0; 6];
        gemm_tn(4, 2, 3, a.as_slice(), b.as_slice(), &mut out);
        assert_eq!(out, a.transpose().matmul(&b).into_vec());
        assert_eq!(a.tr_matmul(&b), a.transpose().matmul(&b));
    }
}
