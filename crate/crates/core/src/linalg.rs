//! Small dense linear algebra: LU solves, symmetric eigenproblems, power iteration.

use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LinalgError {
    #[error("matrix is {rows}x{cols}, expected square")]
    NotSquare { rows: usize, cols: usize },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("matrix is singular to working precision (pivot {pivot:e} at column {column})")]
    Singular { column: usize, pivot: f64 },
    #[error("{method} did not converge in {iterations} iterations")]
    NoConvergence { method: &'static str, iterations: usize },
}

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn new(rows: usize, cols: usize, data: Vec<T>) -> Result<Self, LinalgError> {
        if data.len() != rows * cols {
            return Err(LinalgError::Dimension(format!("{rows}x{cols} matrix from {} values", data.len())));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![T::zero(); rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    pub fn from_diag(d: &[T]) -> Self {
        let mut m = Self::zeros(d.len(), d.len());
        for (i, &v) in d.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<T> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
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

    /// `A x`.
    pub fn matvec(&self, x: &[T]) -> Vec<T> {
        assert_eq!(x.len(), self.cols, "matvec dimension");
        (0..self.rows).map(|i| dot(self.row(i), x)).collect()
    }

    /// `Aᵀ x`.
    pub fn tmatvec(&self, x: &[T]) -> Vec<T> {
        assert_eq!(x.len(), self.rows, "tmatvec dimension");
        let mut out = vec![T::zero(); self.cols];
        for (i, &xi) in x.iter().enumerate() {
            for (o, &a) in out.iter_mut().zip(self.row(i)) {
                *o = *o + a * xi;
            }
        }
        out
    }

    pub fn matmul(&self, other: &Self) -> Result<Self, LinalgError> {
        if self.cols != other.rows {
            return Err(LinalgError::Dimension(format!(
                "{}x{} times {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                for j in 0..other.cols {
                    out[(i, j)] = out[(i, j)] + a * other[(k, j)];
                }
            }
        }
        Ok(out)
    }

    /// `AᵀA`.
    pub fn gram(&self) -> Self {
        self.transpose().matmul(self).expect("gram dimensions")
    }

    fn require_square(&self) -> Result<usize, LinalgError> {
        if self.rows != self.cols {
            return Err(LinalgError::NotSquare { rows: self.rows, cols: self.cols });
        }
        Ok(self.rows)
    }
}

impl<T> std::ops::Index<(usize, usize)> for Matrix<T> {
    type Output = T;
    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[i * self.cols + j]
    }
}

impl<T> std::ops::IndexMut<(usize, usize)> for Matrix<T> {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.data[i * self.cols + j]
    }
}

pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

pub fn norm_inf<T: Scalar>(a: &[T]) -> T {
    a.iter().fold(T::zero(), |m, v| m.max(v.abs()))
}

/// Solves `A x = b` by Gaussian elimination with partial pivoting.
pub fn lu_solve<T: Scalar>(a: &Matrix<T>, b: &[T]) -> Result<Vec<T>, LinalgError> {
    let n = a.require_square()?;
    if b.len() != n {
        return Err(LinalgError::Dimension(format!("{n}x{n} system with rhs of length {}", b.len())));
    }
    let mut m = a.data.clone();
    let mut x = b.to_vec();
    let scale = norm_inf(&m).max(T::min_positive_value());
    let threshold = scale * T::epsilon() * T::lit(n as f64);
    for col in 0..n {
        let pivot_row = (col..n)
            .max_by(|&i, &j| m[i * n + col].abs().partial_cmp(&m[j * n + col].abs()).expect("finite matrix"))
            .expect("non-empty range");
        let pivot = m[pivot_row * n + col];
        if !(pivot.abs() > threshold) {
            return Err(LinalgError::Singular { column: col, pivot: pivot.as_f64() });
        }
        if pivot_row != col {
            for j in 0..n {
                m.swap(col * n + j, pivot_row * n + j);
            }
            x.swap(col, pivot_row);
        }
        for i in col + 1..n {
            let f = m[i * n + col] / pivot;
            if f == T::zero() {
                continue;
            }
            for j in col..n {
                m[i * n + j] = m[i * n + j] - f * m[col * n + j];
            }
            x[i] = x[i] - f * x[col];
        }
    }
    for i in (0..n).rev() {
        let mut s = x[i];
        for j in i + 1..n {
            s = s - m[i * n + j] * x[j];
        }
        x[i] = s / m[i * n + i];
    }
    Ok(x)
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Returns eigenvalues in ascending order and the matching eigenvectors as
/// matrix columns.
pub fn symmetric_eigen<T: Scalar>(a: &Matrix<T>) -> Result<(Vec<T>, Matrix<T>), LinalgError> {
    const MAX_SWEEPS: usize = 100;
    let n = a.require_square()?;
    let mut m = a.clone();
    let mut v = Matrix::identity(n);
    let total: T = m.data.iter().map(|&x| x * x).sum();
    let tiny = total * T::epsilon() * T::epsilon();
    let mut converged = false;
    for _ in 0..MAX_SWEEPS {
        let off: T = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| m[(i, j)] * m[(i, j)]).sum();
        if off <= tiny {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[(p, q)];
                if apq == T::zero() {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (T::lit(2.0) * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (mkp, mkq) = (m[(k, p)], m[(k, q)]);
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let (mpk, mqk) = (m[(p, k)], m[(q, k)]);
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let (vkp, vkq) = (v[(k, p)], v[(k, q)]);
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    if !converged {
        return Err(LinalgError::NoConvergence { method: "jacobi", iterations: MAX_SWEEPS });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[(i, i)].partial_cmp(&m[(j, j)]).expect("finite eigenvalues"));
    let values = order.iter().map(|&i| m[(i, i)]).collect();
    let mut vectors = Matrix::zeros(n, n);
    for (new, &old) in order.iter().enumerate() {
        for k in 0..n {
            vectors[(k, new)] = v[(k, old)];
        }
    }
    Ok((values, vectors))
}

/// 2-norm condition number, `sqrt(λmax / λmin)` of `AᵀA`.
pub fn condition_number<T: Scalar>(a: &Matrix<T>) -> Result<T, LinalgError> {
    a.require_square()?;
    let (values, _) = symmetric_eigen(&a.gram())?;
    let lo = values[0];
    let hi = *values.last().expect("non-empty");
    if !(lo > T::zero()) {
        return Ok(T::infinity());
    }
    Ok((hi / lo).sqrt())
}

/// Flips `v` so that its largest-magnitude coordinate is positive.
pub fn fix_sign<T: Scalar>(v: &mut [T]) {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v.get(best).is_some_and(|&x| x < T::zero()) {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

/// Leading `k` eigenpairs of a symmetric positive semidefinite matrix by power
/// iteration with deflation. Stops early when the remaining spectrum is zero.
pub fn power_iteration<T: Scalar>(
    a: &Matrix<T>,
    k: usize,
    tol: T,
    max_iter: usize,
) -> Result<Vec<(T, Vec<T>)>, LinalgError> {
    let n = a.require_square()?;
    let mut m = a.clone();
    let mut out = Vec::new();
    let scale = norm_inf(&a.data).max(T::min_positive_value());
    for _ in 0..k.min(n) {
        // Deterministic start with a component along every axis.
        let mut v: Vec<T> = (0..n).map(|i| T::one() + T::lit(i as f64 + 1.0).sqrt() * T::lit(1e-3)).collect();
        normalize(&mut v);
        let mut lambda = T::zero();
        let mut converged = false;
        for _ in 0..max_iter {
            let w = m.matvec(&v);
            let nw = dot(&w, &w).sqrt();
            if nw <= scale * T::epsilon() * T::lit(n as f64) {
                lambda = T::zero();
                converged = true;
                break;
            }
            let next: Vec<T> = w.iter().map(|&x| x / nw).collect();
            let delta = next.iter().zip(&v).map(|(&a, &b)| (a - b).abs()).fold(T::zero(), T::max);
            v = next;
            lambda = nw;
            if delta < tol {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(LinalgError::NoConvergence { method: "power iteration", iterations: max_iter });
        }
        if lambda == T::zero() {
            break;
        }
        let rayleigh = dot(&v, &m.matvec(&v));
        fix_sign(&mut v);
        for i in 0..n {
            for j in 0..n {
                m[(i, j)] = m[(i, j)] - rayleigh * v[i] * v[j];
            }
        }
        out.push((rayleigh, v));
    }
    Ok(out)
}

fn normalize<T: Scalar>(v: &mut [T]) {
    let n = dot(v, v).sqrt();
    v.iter_mut().for_each(|x| *x = *x / n);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_small_system() {
        let a = Matrix::<f64>::new(2, 2, vec![0.0, 2.0, 1.0, 1.0]).unwrap();
        let x = lu_solve(&a, &[4.0, 3.0]).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-15 && (x[1] - 2.0).abs() < 1e-15);
        let s = Matrix::<f64>::new(2, 2, vec![1.0, 2.0, 2.0, 4.0]).unwrap();
        assert!(matches!(lu_solve(&s, &[1.0, 1.0]), Err(LinalgError::Singular { .. })));
    }

    #[test]
    fn jacobi_on_known_spectrum() {
        let a = Matrix::<f64>::new(2, 2, vec![2.0, 1.0, 1.0, 2.0]).unwrap();
        let (vals, vecs) = symmetric_eigen(&a).unwrap();
        assert!((vals[0] - 1.0).abs() < 1e-14 && (vals[1] - 3.0).abs() < 1e-14);
        let v = vecs.column(1);
        assert!((v[0].abs() - 0.5f64.sqrt()).abs() < 1e-14);
        assert!((condition_number(&Matrix::<f64>::from_diag(&[0.5, 2.0])).unwrap() - 4.0).abs() < 1e-12);
    }

    #[test]
    fn power_iteration_finds_top_pairs() {
        let a = Matrix::<f64>::from_diag(&[1.0, 5.0, 3.0]);
        let pairs = power_iteration(&a, 2, 1e-12, 10_000).unwrap();
        assert!((pairs[0].0 - 5.0).abs() < 1e-10);
        assert!((pairs[1].0 - 3.0).abs() < 1e-10);
        assert!(pairs[0].1[1] > 0.0);
        let rank0 = power_iteration(&Matrix::<f64>::zeros(3, 3), 2, 1e-12, 100).unwrap();
        assert!(rank0.is_empty());
    }
}
