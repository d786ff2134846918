//! Small dense square matrices.
//!
//! Covariances in this crate are at most a few dozen rows wide (one block of
//! controls per agent in a neighborhood), so a straightforward row-major
//! representation with Cholesky and cyclic Jacobi is all that is needed.

use crate::scalar::Real;

#[derive(Clone, Debug, PartialEq)]
pub struct Matrix<T> {
    n: usize,
    data: Vec<T>,
}

impl<T: Real> Matrix<T> {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![T::zero(); n * n],
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::scaled_identity(n, T::one())
    }

    pub fn scaled_identity(n: usize, scale: T) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m[(i, i)] = scale;
        }
        m
    }

    pub fn from_diag(diag: &[T]) -> Self {
        let mut m = Self::zeros(diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m[(i, i)] = d;
        }
        m
    }

    /// Builds a matrix from row-major data. Panics if `data.len() != n * n`.
    pub fn from_row_major(n: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), n * n, "row-major data has wrong length");
        Self { n, data }
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn diag(&self) -> Vec<T> {
        (0..self.n).map(|i| self[(i, i)]).collect()
    }

    /// `self += scale * v v^T`
    pub fn add_outer(&mut self, v: &[T], scale: T) {
        debug_assert_eq!(v.len(), self.n);
        for i in 0..self.n {
            let si = scale * v[i];
            let row = &mut self.data[i * self.n..(i + 1) * self.n];
            for (r, &vj) in row.iter_mut().zip(v) {
                *r += si * vj;
            }
        }
    }

    pub fn scale(&mut self, s: T) {
        self.data.iter_mut().for_each(|x| *x *= s);
    }

    /// `a * self + b * other`
    pub fn blend(&self, a: T, other: &Self, b: T) -> Self {
        assert_eq!(self.n, other.n);
        Self {
            n: self.n,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&x, &y)| a * x + b * y)
                .collect(),
        }
    }

    pub fn symmetrize(&mut self) {
        let half = T::lit(0.5);
        for i in 0..self.n {
            for j in (i + 1)..self.n {
                let m = half * (self[(i, j)] + self[(j, i)]);
                self[(i, j)] = m;
                self[(j, i)] = m;
            }
        }
    }

    pub fn max_asymmetry(&self) -> T {
        let mut worst = T::zero();
        for i in 0..self.n {
            for j in (i + 1)..self.n {
                worst = worst.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        worst
    }

    pub fn mul_vec(&self, v: &[T]) -> Vec<T> {
        (0..self.n)
            .map(|i| {
                self.data[i * self.n..(i + 1) * self.n]
                    .iter()
                    .zip(v)
                    .map(|(&a, &b)| a * b)
                    .sum()
            })
            .collect()
    }

    /// Copies the sub-block with rows/columns taken from `index` (in order).
    pub fn select(&self, index: &[usize]) -> Self {
        let k = index.len();
        let mut out = Self::zeros(k);
        for (a, &i) in index.iter().enumerate() {
            for (b, &j) in index.iter().enumerate() {
                out[(a, b)] = self[(i, j)];
            }
        }
        out
    }

    /// Lower Cholesky factor, or `None` if the matrix is not positive definite.
    pub fn cholesky(&self) -> Option<Cholesky<T>> {
        let n = self.n;
        let mut l = vec![T::zero(); n * n];
        for j in 0..n {
            let mut d = self[(j, j)];
            for k in 0..j {
                d -= l[j * n + k] * l[j * n + k];
            }
            if !(d > T::zero()) || !d.is_finite() {
                return None;
            }
            let d = d.sqrt();
            l[j * n + j] = d;
            for i in (j + 1)..n {
                let mut s = self[(i, j)];
                for k in 0..j {
                    s -= l[i * n + k] * l[j * n + k];
                }
                l[i * n + j] = s / d;
            }
        }
        Some(Cholesky { n, lower: l })
    }

    /// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
    /// Returns eigenvalues and the eigenvectors as columns of a row-major matrix.
    pub fn symmetric_eigen(&self) -> (Vec<T>, Matrix<T>) {
        let n = self.n;
        let mut a = self.clone();
        a.symmetrize();
        let mut v = Matrix::identity(n);
        let eps = T::epsilon();
        for _sweep in 0..64 {
            let mut off = T::zero();
            let mut total = T::zero();
            for i in 0..n {
                for j in 0..n {
                    let x = a[(i, j)] * a[(i, j)];
                    total += x;
                    if i != j {
                        off += x;
                    }
                }
            }
            if off <= eps * eps * total || off == T::zero() {
                break;
            }
            for p in 0..n {
                for q in (p + 1)..n {
                    let apq = a[(p, q)];
                    if apq == T::zero() {
                        continue;
                    }
                    let app = a[(p, p)];
                    let aqq = a[(q, q)];
                    let theta = (aqq - app) / (T::lit(2.0) * apq);
                    let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                    let c = T::one() / (t * t + T::one()).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let akp = a[(k, p)];
                        let akq = a[(k, q)];
                        a[(k, p)] = c * akp - s * akq;
                        a[(k, q)] = s * akp + c * akq;
                    }
                    for k in 0..n {
                        let apk = a[(p, k)];
                        let aqk = a[(q, k)];
                        a[(p, k)] = c * apk - s * aqk;
                        a[(q, k)] = s * apk + c * aqk;
                    }
                    for k in 0..n {
                        let vkp = v[(k, p)];
                        let vkq = v[(k, q)];
                        v[(k, p)] = c * vkp - s * vkq;
                        v[(k, q)] = s * vkp + c * vkq;
                    }
                }
            }
        }
        (a.diag(), v)
    }

    pub fn min_eigenvalue(&self) -> T {
        let (vals, _) = self.symmetric_eigen();
        vals.into_iter().fold(T::infinity(), T::min)
    }

    /// Symmetrizes and raises every eigenvalue to at least `floor`.
    pub fn floor_eigenvalues(&self, floor: T) -> Self {
        let mut sym = self.clone();
        sym.symmetrize();
        // Fast path: already comfortably positive definite.
        if sym.n <= 1 {
            if sym.n == 1 {
                sym.data[0] = sym.data[0].max(floor);
            }
            return sym;
        }
        let (vals, vecs) = sym.symmetric_eigen();
        if vals.iter().all(|&l| l >= floor) {
            return sym;
        }
        let n = sym.n;
        let mut out = Self::zeros(n);
        for (k, &l) in vals.iter().enumerate() {
            let l = l.max(floor);
            for i in 0..n {
                let vik = vecs[(i, k)] * l;
                for j in 0..n {
                    out.data[i * n + j] += vik * vecs[(j, k)];
                }
            }
        }
        out.symmetrize();
        out
    }
}

impl<T> std::ops::Index<(usize, usize)> for Matrix<T> {
    type Output = T;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[i * self.n + j]
    }
}

impl<T> std::ops::IndexMut<(usize, usize)> for Matrix<T> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.data[i * self.n + j]
    }
}

/// Lower-triangular Cholesky factor `L` with `A = L L^T`.
#[derive(Clone, Debug)]
pub struct Cholesky<T> {
    n: usize,
    lower: Vec<T>,
}

impl<T: Real> Cholesky<T> {
    /// `L z`
    pub fn mul_lower(&self, z: &[T], out: &mut [T]) {
        for i in 0..self.n {
            let mut s = T::zero();
            for k in 0..=i {
                s += self.lower[i * self.n + k] * z[k];
            }
            out[i] = s;
        }
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &[T]) -> Vec<T> {
        let n = self.n;
        let mut y = b.to_vec();
        for i in 0..n {
            let mut s = y[i];
            for k in 0..i {
                s -= self.lower[i * n + k] * y[k];
            }
            y[i] = s / self.lower[i * n + i];
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in (i + 1)..n {
                s -= self.lower[k * n + i] * y[k];
            }
            y[i] = s / self.lower[i * n + i];
        }
        y
    }

    /// Squared Mahalanobis norm `d^T A^{-1} d`.
    pub fn mahalanobis_sq(&self, d: &[T]) -> T {
        let n = self.n;
        let mut y = vec![T::zero(); n];
        for i in 0..n {
            let mut s = d[i];
            for k in 0..i {
                s -= self.lower[i * n + k] * y[k];
            }
            y[i] = s / self.lower[i * n + i];
        }
        y.iter().map(|&v| v * v).sum()
    }

    pub fn log_det(&self) -> T {
        let two = T::lit(2.0);
        (0..self.n)
            .map(|i| two * self.lower[i * self.n + i].ln())
            .sum()
    }

    /// Log-density of `N(x; mean, A)`.
    pub fn log_gaussian(&self, x: &[T], mean: &[T]) -> T {
        let d: Vec<T> = x.iter().zip(mean).map(|(&a, &b)| a - b).collect();
        let ln_2pi = T::lit((2.0 * std::f64::consts::PI).ln());
        -T::lit(0.5) * (T::count(self.n) * ln_2pi + self.log_det() + self.mahalanobis_sq(&d))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cholesky_reconstructs() {
        let a = Matrix::from_row_major(2, vec![4.0f64, 2.0, 2.0, 3.0]);
        let c = a.cholesky().unwrap();
        let x = c.solve(&[2.0, 1.0]);
        let back = a.mul_vec(&x);
        assert!((back[0] - 2.0).abs() < 1e-12 && (back[1] - 1.0).abs() < 1e-12);
        assert!((c.log_det() - 8.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn indefinite_has_no_cholesky() {
        let a = Matrix::from_row_major(2, vec![1.0, 2.0, 2.0, 1.0]);
        assert!(a.cholesky().is_none());
    }

    #[test]
    fn jacobi_eigenvalues() {
        let a = Matrix::from_row_major(2, vec![2.0f64, 1.0, 1.0, 2.0]);
        let (mut vals, _) = a.symmetric_eigen();
        vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!((vals[0] - 1.0).abs() < 1e-12);
        assert!((vals[1] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn floor_lifts_singular_matrix() {
        let a = Matrix::from_row_major(2, vec![1.0f64, 1.0, 1.0, 1.0]);
        let f = a.floor_eigenvalues(1e-6);
        assert!(f.min_eigenvalue() >= 1e-6 - 1e-15);
        assert!(f.cholesky().is_some());
        // the non-degenerate direction is untouched
        let (vals, _) = f.symmetric_eigen();
        assert!(vals.iter().any(|v| (v - 2.0).abs() < 1e-12));
    }
}
