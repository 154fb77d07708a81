//! Dense linear-algebra helpers shared by the solvers.

use faer::{c64, Mat, Side};
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub fn to_faer(m: &DMatrix<f64>) -> Mat<f64> {
    Mat::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

pub fn from_faer(m: faer::MatRef<'_, f64>) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

/// Symmetric eigendecomposition, eigenvalues ascending.
pub fn sym_eigen(m: &DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let s = (m + m.transpose()) * 0.5;
    let e = to_faer(&s)
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::Solver(format!("symmetric eigensolver failed: {e:?}")))?;
    let vals: Vec<f64> = (0..s.nrows()).map(|i| e.S()[i]).collect();
    Ok((vals, from_faer(e.U())))
}

pub fn sym_eigenvalues(m: &DMatrix<f64>) -> Result<Vec<f64>> {
    let s = (m + m.transpose()) * 0.5;
    to_faer(&s)
        .self_adjoint_eigenvalues(Side::Lower)
        .map_err(|e| Error::Solver(format!("symmetric eigensolver failed: {e:?}")))
}

/// Eigenvalues and right eigenvectors (columns) of a general real matrix.
pub fn eigen(m: &DMatrix<f64>) -> Result<(Vec<c64>, Vec<Vec<c64>>)> {
    let e = to_faer(m)
        .eigen()
        .map_err(|e| Error::Solver(format!("eigensolver failed: {e:?}")))?;
    let n = m.nrows();
    let vals: Vec<c64> = (0..n).map(|i| e.S()[i]).collect();
    let u = e.U();
    let vecs = (0..n)
        .map(|j| (0..n).map(|i| u[(i, j)]).collect())
        .collect();
    Ok((vals, vecs))
}

pub fn eigenvalues(m: &DMatrix<f64>) -> Result<Vec<c64>> {
    to_faer(m)
        .eigenvalues()
        .map_err(|e| Error::Solver(format!("eigensolver failed: {e:?}")))
}

/// Singular values, descending.
pub fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    let mut s: Vec<f64> = m.clone().singular_values().iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// Numerical rank with a threshold relative to the largest singular value.
pub fn rank(m: &DMatrix<f64>, rel_tol: f64) -> usize {
    let s = singular_values(m);
    let top = s.first().copied().unwrap_or(0.0);
    if top == 0.0 {
        return 0;
    }
    s.iter().filter(|x| **x > rel_tol * top).count()
}

/// Orthonormal basis of the column span of `c` (modified Gram-Schmidt, twice).
pub fn orthonormalize(c: &DMatrix<f64>) -> DMatrix<f64> {
    let mut q = c.clone();
    for j in 0..q.ncols() {
        for _ in 0..2 {
            for k in 0..j {
                let p = q.column(k).dot(&q.column(j));
                let qk = q.column(k).clone_owned();
                q.column_mut(j).axpy(-p, &qk, 1.0);
            }
        }
        let nrm = q.column(j).norm();
        q.column_mut(j).scale_mut(1.0 / nrm);
    }
    q
}

/// Orthonormal basis of the orthogonal complement of the span of `c`.
pub fn complement(c: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = c.nrows();
    let q = orthonormalize(c);
    let p = DMatrix::identity(n, n) - &q * q.transpose();
    let (vals, vecs) = sym_eigen(&p)?;
    let keep: Vec<usize> = (0..n).filter(|i| vals[*i] > 0.5).collect();
    Ok(DMatrix::from_fn(n, keep.len(), |i, j| vecs[(i, keep[j])]))
}

/// Smallest value of `xᵀAx / xᵀBx` over `x` with `Cᵀx = 0`, and a minimizer.
///
/// `A` is symmetrized; `B` must be symmetric positive definite.
pub fn min_generalized_eigen(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    constraint: Option<&DMatrix<f64>>,
) -> Result<(f64, DVector<f64>)> {
    let n = a.nrows();
    let diagonal = (0..n).all(|i| (0..n).all(|j| i == j || b[(i, j)] == 0.0));
    if diagonal {
        return min_generalized_eigen_diag(
            a,
            &(0..n).map(|i| b[(i, i)]).collect::<Vec<_>>(),
            constraint,
        );
    }
    let chol = b
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Solver("metric is not positive definite".into()))?;
    let l = chol.l();
    let sa = (a + a.transpose()) * 0.5;
    let x = l
        .solve_lower_triangular(&sa)
        .ok_or_else(|| Error::Solver("singular metric factor".into()))?;
    let m = l
        .solve_lower_triangular(&x.transpose())
        .ok_or_else(|| Error::Solver("singular metric factor".into()))?;
    let m = match constraint {
        Some(c) if c.ncols() > 0 => {
            let psi = l
                .solve_lower_triangular(c)
                .ok_or_else(|| Error::Solver("singular metric factor".into()))?;
            let q = orthonormalize(&psi);
            let p = DMatrix::identity(n, n) - &q * q.transpose();
            let shift = 2.0 * m.norm() + 1.0;
            &p * &m * &p + &q * q.transpose() * shift
        }
        _ => m,
    };
    let (vals, vecs) = sym_eigen(&m)?;
    let z = vecs.column(0).clone_owned();
    let x = l
        .transpose()
        .solve_upper_triangular(&z)
        .ok_or_else(|| Error::Solver("singular metric factor".into()))?;
    Ok((vals[0], x))
}

/// Diagonal-metric variant of [`min_generalized_eigen`].
pub fn min_generalized_eigen_diag(
    a: &DMatrix<f64>,
    b: &[f64],
    constraint: Option<&DMatrix<f64>>,
) -> Result<(f64, DVector<f64>)> {
    let n = a.nrows();
    if b.iter().any(|x| !(*x > 0.0)) {
        return Err(Error::Solver("metric is not positive definite".into()));
    }
    let s: Vec<f64> = b.iter().map(|x| 1.0 / x.sqrt()).collect();
    let m = DMatrix::from_fn(n, n, |i, j| 0.5 * (a[(i, j)] + a[(j, i)]) * s[i] * s[j]);
    let m = match constraint {
        Some(c) if c.ncols() > 0 => {
            let psi = DMatrix::from_fn(n, c.ncols(), |i, j| c[(i, j)] * s[i]);
            let q = orthonormalize(&psi);
            let shift = 2.0 * m.norm() + 1.0;
            let mq = &m * &q;
            let qmq = q.transpose() * &mq;
            // (I−QQᵀ)M(I−QQᵀ) + shift·QQᵀ without forming the projector
            &m - &mq * q.transpose() - &q * mq.transpose()
                + &q * (qmq + DMatrix::identity(q.ncols(), q.ncols()) * shift) * q.transpose()
        }
        _ => m,
    };
    let (vals, vecs) = sym_eigen(&m)?;
    let x = DVector::from_fn(n, |i, _| vecs[(i, 0)] * s[i]);
    Ok((vals[0], x))
}

/// Least-squares fit `y ≈ a + b·x`; returns `(a, b)`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let b = sxy / sxx;
    (my - b * mx, b)
}

/// Slope of `log y` against `log x`, the fitted power-law order.
pub fn fitted_order(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    linear_fit(&lx, &ly).1
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constrained_rayleigh_quotient() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0, 3.0]));
        let b = DMatrix::identity(3, 3);
        let (v, _) = min_generalized_eigen(&a, &b, None).unwrap();
        assert!((v - 1.0).abs() < 1e-12);
        let c = DMatrix::from_column_slice(3, 1, &[1.0, 0.0, 0.0]);
        let (v, x) = min_generalized_eigen(&a, &b, Some(&c)).unwrap();
        assert!((v - 2.0).abs() < 1e-12);
        assert!(x[0].abs() < 1e-12);
        let b2 = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 4.0, 1.0]));
        let (v, _) = min_generalized_eigen(&a, &b2, None).unwrap();
        assert!((v - 0.5).abs() < 1e-12);
    }

    #[test]
    fn complement_is_orthogonal() {
        let c = DMatrix::from_column_slice(4, 2, &[1.0, 1.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let z = complement(&c).unwrap();
        assert_eq!(z.ncols(), 2);
        assert!((z.transpose() * &c).norm() < 1e-12);
        assert!((z.transpose() * &z - DMatrix::identity(2, 2)).norm() < 1e-12);
    }

    #[test]
    fn general_eigenvalues_of_rotation() {
        let m = DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]);
        let mut ev = eigenvalues(&m).unwrap();
        ev.sort_by(|a, b| a.im.total_cmp(&b.im));
        assert!((ev[0].im + 1.0).abs() < 1e-12 && ev[0].re.abs() < 1e-12);
    }

    #[test]
    fn order_fit() {
        let x = [0.1, 0.05, 0.025];
        let y: Vec<f64> = x.iter().map(|v: &f64| 3.0 * v.powi(2)).collect();
        assert!((fitted_order(&x, &y) - 2.0).abs() < 1e-12);
    }
}
