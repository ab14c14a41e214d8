//! Small dense linear algebra: enough for mixture covariances and forward
//! operators at toy dimensions (d up to a few hundred).

use crate::error::{Error, Result};
use crate::scalar::{dot, Scalar};

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<F> {
    rows: usize,
    cols: usize,
    data: Vec<F>,
}

impl<F: Scalar> Matrix<F> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![F::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = F::one();
        }
        m
    }

    pub fn scaled_identity(n: usize, scale: F) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = scale;
        }
        m
    }

    pub fn diagonal(diag: &[F]) -> Self {
        let mut m = Self::zeros(diag.len(), diag.len());
        for (i, &v) in diag.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<F>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::dim("matrix data", rows * cols, data.len()));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<F>]) -> Result<Self> {
        let n_rows = rows.len();
        let n_cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(n_rows * n_cols);
        for row in rows {
            if row.len() != n_cols {
                return Err(Error::dim("matrix row", n_cols, row.len()));
            }
            data.extend_from_slice(row);
        }
        Ok(Self {
            rows: n_rows,
            cols: n_cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[F] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[F] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn to_rows(&self) -> Vec<Vec<F>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    /// `A x`
    pub fn matvec(&self, x: &[F]) -> Vec<F> {
        assert_eq!(x.len(), self.cols, "matvec dimension");
        (0..self.rows).map(|i| dot(self.row(i), x)).collect()
    }

    /// `Aᵀ y`
    pub fn matvec_t(&self, y: &[F]) -> Vec<F> {
        assert_eq!(y.len(), self.rows, "matvec_t dimension");
        let mut out = vec![F::zero(); self.cols];
        for (i, &yi) in y.iter().enumerate() {
            for (o, &a) in out.iter_mut().zip(self.row(i)) {
                *o = *o + a * yi;
            }
        }
        out
    }

    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.rows, "matmul dimension");
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == F::zero() {
                    continue;
                }
                for j in 0..other.cols {
                    out[(i, j)] = out[(i, j)] + a * other[(k, j)];
                }
            }
        }
        out
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| a + b).collect();
        Self {
            rows: self.rows,
            cols: self.cols,
            data,
        }
    }

    pub fn add_diagonal(&self, v: F) -> Self {
        let mut out = self.clone();
        for i in 0..self.rows.min(self.cols) {
            out[(i, i)] = out[(i, i)] + v;
        }
        out
    }

    /// Largest absolute deviation from symmetry, relative to the largest entry.
    pub fn asymmetry(&self) -> F {
        let scale = self
            .data
            .iter()
            .fold(F::zero(), |m, v| m.max(v.abs()))
            .max(F::min_positive_value());
        let mut worst = F::zero();
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                worst = worst.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        worst / scale
    }

    pub fn cholesky(&self) -> Result<Cholesky<F>> {
        if !self.is_square() {
            return Err(Error::dim("cholesky (square)", self.rows, self.cols));
        }
        let n = self.rows;
        let mut l = Self::zeros(n, n);
        for j in 0..n {
            let mut d = self[(j, j)];
            for k in 0..j {
                d = d - l[(j, k)] * l[(j, k)];
            }
            if !(d > F::zero()) || !d.is_finite() {
                return Err(Error::Numeric(format!(
                    "matrix is not positive definite (pivot {j} = {d:e})"
                )));
            }
            let djj = d.sqrt();
            l[(j, j)] = djj;
            for i in (j + 1)..n {
                let mut s = self[(i, j)];
                for k in 0..j {
                    s = s - l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = s / djj;
            }
        }
        Ok(Cholesky { l })
    }

    /// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
    pub fn symmetric_eigen(&self) -> Result<SymmetricEigen<F>> {
        if !self.is_square() {
            return Err(Error::dim("eigen (square)", self.rows, self.cols));
        }
        let n = self.rows;
        let mut a = self.clone();
        let mut v = Self::identity(n);
        let tol = F::epsilon() * F::lit(0.5);
        for _sweep in 0..100 {
            let mut off = F::zero();
            let mut total = F::zero();
            for i in 0..n {
                for j in 0..n {
                    let x = a[(i, j)] * a[(i, j)];
                    total = total + x;
                    if i != j {
                        off = off + x;
                    }
                }
            }
            if off <= tol * tol * total || off == F::zero() {
                let values = (0..n).map(|i| a[(i, i)]).collect();
                return Ok(SymmetricEigen { values, vectors: v });
            }
            for p in 0..n {
                for q in (p + 1)..n {
                    let apq = a[(p, q)];
                    if apq == F::zero() {
                        continue;
                    }
                    let theta = (a[(q, q)] - a[(p, p)]) / (F::lit(2.0) * apq);
                    let t = theta.signum() / (theta.abs() + (theta * theta + F::one()).sqrt());
                    let c = F::one() / (t * t + F::one()).sqrt();
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
        Err(Error::Numeric("Jacobi eigen-solver did not converge".into()))
    }

    /// Largest eigenvalue of `AᵀA` (squared spectral norm) by power iteration.
    pub fn spectral_norm_sq(&self, max_iter: usize, rel_tol: F) -> Result<F> {
        let n = self.cols;
        if n == 0 {
            return Ok(F::zero());
        }
        // Deterministic, non-degenerate start vector.
        let mut v: Vec<F> = (0..n)
            .map(|i| F::one() + F::lit(0.1) * F::from_usize_lossy(i % 7))
            .collect();
        normalize(&mut v);
        let mut prev = F::zero();
        for _ in 0..max_iter {
            let mut w = self.matvec_t(&self.matvec(&v));
            let lambda = dot(&v, &w);
            let wn = crate::scalar::norm(&w);
            if wn == F::zero() {
                return Ok(F::zero());
            }
            w.iter_mut().for_each(|x| *x = *x / wn);
            v = w;
            if (lambda - prev).abs() <= rel_tol * lambda.abs() {
                return Ok(lambda);
            }
            prev = lambda;
        }
        Err(Error::config(format!(
            "power iteration for the operator norm did not converge in {max_iter} iterations"
        )))
    }
}

fn normalize<F: Scalar>(v: &mut [F]) {
    let n = crate::scalar::norm(v);
    if n > F::zero() {
        v.iter_mut().for_each(|x| *x = *x / n);
    }
}

impl<F> std::ops::Index<(usize, usize)> for Matrix<F> {
    type Output = F;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &F {
        &self.data[i * self.cols + j]
    }
}

impl<F> std::ops::IndexMut<(usize, usize)> for Matrix<F> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut F {
        &mut self.data[i * self.cols + j]
    }
}

/// Lower-triangular Cholesky factor, `A = L Lᵀ`.
#[derive(Debug, Clone)]
pub struct Cholesky<F> {
    l: Matrix<F>,
}

impl<F: Scalar> Cholesky<F> {
    pub fn factor(&self) -> &Matrix<F> {
        &self.l
    }

    /// `L z`
    pub fn mul_lower(&self, z: &[F]) -> Vec<F> {
        let n = self.l.rows();
        (0..n)
            .map(|i| (0..=i).fold(F::zero(), |acc, k| acc + self.l[(i, k)] * z[k]))
            .collect()
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &[F]) -> Vec<F> {
        let n = self.l.rows();
        let mut y = b.to_vec();
        for i in 0..n {
            let mut s = y[i];
            for k in 0..i {
                s = s - self.l[(i, k)] * y[k];
            }
            y[i] = s / self.l[(i, i)];
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in (i + 1)..n {
                s = s - self.l[(k, i)] * y[k];
            }
            y[i] = s / self.l[(i, i)];
        }
        y
    }

    pub fn log_det(&self) -> F {
        let n = self.l.rows();
        F::lit(2.0) * (0..n).map(|i| self.l[(i, i)].ln()).sum::<F>()
    }
}

/// `A = V diag(values) Vᵀ` with orthonormal columns in `vectors`.
#[derive(Debug, Clone)]
pub struct SymmetricEigen<F> {
    pub values: Vec<F>,
    pub vectors: Matrix<F>,
}

impl<F: Scalar> SymmetricEigen<F> {
    /// `Vᵀ x`
    pub fn to_eigenbasis(&self, x: &[F]) -> Vec<F> {
        self.vectors.matvec_t(x)
    }

    /// `V c`
    pub fn from_eigenbasis(&self, c: &[F]) -> Vec<F> {
        self.vectors.matvec(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn spd3() -> Matrix<f64> {
        Matrix::from_rows(&[
            vec![4.0, 1.0, 0.5],
            vec![1.0, 3.0, 0.2],
            vec![0.5, 0.2, 2.0],
        ])
        .unwrap()
    }

    #[test]
    fn cholesky_solves_and_reconstructs() {
        let a = spd3();
        let ch = a.cholesky().unwrap();
        let l = ch.factor();
        let llt = l.matmul(&l.transpose());
        for i in 0..3 {
            for j in 0..3 {
                assert_relative_eq!(llt[(i, j)], a[(i, j)], epsilon = 1e-14);
            }
        }
        let b = [1.0, -2.0, 0.5];
        let x = ch.solve(&b);
        let ax = a.matvec(&x);
        for (u, v) in ax.iter().zip(b) {
            assert_relative_eq!(*u, v, epsilon = 1e-13);
        }
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0]]).unwrap();
        assert!(a.cholesky().is_err());
    }

    #[test]
    fn jacobi_eigen_reconstructs() {
        let a = spd3();
        let e = a.symmetric_eigen().unwrap();
        let d = Matrix::diagonal(&e.values);
        let rec = e.vectors.matmul(&d).matmul(&e.vectors.transpose());
        for i in 0..3 {
            for j in 0..3 {
                assert_relative_eq!(rec[(i, j)], a[(i, j)], epsilon = 1e-12);
            }
        }
        let det: f64 = e.values.iter().product();
        assert_relative_eq!(det.ln(), a.cholesky().unwrap().log_det(), epsilon = 1e-12);
    }

    #[test]
    fn power_iteration_matches_known_spectrum() {
        // Singular values 2 and 1 after an orthogonal rotation.
        let (c, s) = (0.6_f64, 0.8_f64);
        let a = Matrix::from_rows(&[vec![2.0 * c, -2.0 * s], vec![s, c]]).unwrap();
        let rho = a.spectral_norm_sq(10_000, 1e-14).unwrap();
        assert_relative_eq!(rho, 4.0, epsilon = 1e-10);
    }

    #[test]
    fn transpose_product_matches_explicit_transpose() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0, 3.0], vec![-1.0, 0.5, 4.0]]).unwrap();
        let y = [0.3, -0.7];
        assert_eq!(a.matvec_t(&y), a.transpose().matvec(&y));
    }
}
