//! Small dense linear-algebra helpers for the (n-1)x(n-1) matrices of the
//! coupled Lyapunov inequalities.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Solves the stationary Lyapunov equation `A^T P + P A = -Q` by vectorization.
///
/// The Kronecker system `(I ⊗ A^T + A^T ⊗ I) vec(P) = -vec(Q)` is solved with an
/// LU factorization; the result is symmetrized.
pub fn solve_lyapunov(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let m = a.nrows();
    if a.ncols() != m || q.nrows() != m || q.ncols() != m {
        return Err(Error::InvalidSpec("lyapunov: dimension mismatch".into()));
    }
    let at = a.transpose();
    let eye = DMatrix::<f64>::identity(m, m);
    let kron = eye.kronecker(&at) + at.kronecker(&eye);
    // column-major vec
    let rhs = DVector::from_iterator(m * m, q.iter().map(|v| -v));
    let sol = kron
        .lu()
        .solve(&rhs)
        .ok_or(Error::NumericFailure { term: "lyapunov" })?;
    let p = DMatrix::from_column_slice(m, m, sol.as_slice());
    Ok(symmetrize(&p))
}

pub fn symmetrize(p: &DMatrix<f64>) -> DMatrix<f64> {
    (p + p.transpose()) * 0.5
}

/// Ascending eigenvalues and matching eigenvectors of a symmetric matrix.
pub fn sym_eigen(s: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(symmetrize(s));
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = DMatrix::zeros(s.nrows(), s.ncols());
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}

pub fn lambda_min(s: &DMatrix<f64>) -> f64 {
    sym_eigen(s).0[0]
}

pub fn lambda_max(s: &DMatrix<f64>) -> f64 {
    *sym_eigen(s).0.last().expect("non-empty matrix")
}

/// `P M + M^T P`.
pub fn lyap_form(p: &DMatrix<f64>, m: &DMatrix<f64>) -> DMatrix<f64> {
    p * m + m.transpose() * p
}

/// Coefficients `[c_1, ..., c_m]` of `prod (s + p_i) = s^m + c_1 s^{m-1} + ... + c_m`.
pub fn poly_from_neg_roots(magnitudes: &[f64]) -> Vec<f64> {
    let mut coeffs = vec![1.0];
    for &p in magnitudes {
        let mut next = vec![0.0; coeffs.len() + 1];
        for (i, &c) in coeffs.iter().enumerate() {
            next[i] += c;
            next[i + 1] += c * p;
        }
        coeffs = next;
    }
    coeffs[1..].to_vec()
}

/// Frobenius norm, matching the convention `|A|` for matrices.
pub fn frobenius(m: &DMatrix<f64>) -> f64 {
    m.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
