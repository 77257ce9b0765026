//! Dense symmetric solvers shared by the smoothing and regression modules.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{FdaError, Result};

/// A squared pivot below this fraction of its own diagonal entry marks the
/// matrix as singular.
const PIVOT_RTOL: f64 = 1e-14;

/// Cholesky factor of a symmetric positive-definite matrix.
pub struct SpdFactor {
    chol: Cholesky<f64, Dyn>,
}

impl SpdFactor {
    /// Factors `a`, failing with a rank-deficiency error that reports the
    /// smallest eigenvalue when `a` is numerically singular.
    pub fn new(a: &DMatrix<f64>, context: &str) -> Result<Self> {
        let scale = a.diagonal().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let singular = || FdaError::RankDeficient {
            context: context.to_string(),
            min_eigenvalue: min_eigenvalue(a),
        };
        if scale == 0.0 || !scale.is_finite() {
            return Err(singular());
        }
        let chol = Cholesky::new(a.clone()).ok_or_else(singular)?;
        let l = chol.l_dirty();
        if (0..a.nrows()).any(|i| l[(i, i)] * l[(i, i)] <= PIVOT_RTOL * a[(i, i)]) {
            return Err(singular());
        }
        Ok(SpdFactor { chol })
    }

    pub fn solve(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(b)
    }

    pub fn solve_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(b)
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        self.chol.inverse()
    }
}

pub fn min_eigenvalue(a: &DMatrix<f64>) -> f64 {
    if a.iter().any(|v| !v.is_finite()) {
        return f64::NAN;
    }
    let sym = (a + a.transpose()) * 0.5;
    SymmetricEigen::new(sym).eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
}

/// Solves the symmetric-definite pencil `a v = λ g v` with `g` positive definite.
///
/// Returns eigenvalues and the eigenvector matrix `V` normalized so that
/// `Vᵀ g V = I` and `Vᵀ a V = diag(λ)`.
pub fn generalized_eigen(a: &DMatrix<f64>, g: &DMatrix<f64>, context: &str) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let chol = SpdFactor::new(g, context)?;
    let l = chol.chol.l();
    let l_inv = l
        .clone()
        .solve_lower_triangular(&DMatrix::identity(g.nrows(), g.nrows()))
        .ok_or_else(|| FdaError::RankDeficient { context: context.to_string(), min_eigenvalue: 0.0 })?;
    let c = &l_inv * a * l_inv.transpose();
    let c = (&c + c.transpose()) * 0.5;
    let eig = SymmetricEigen::new(c);
    let v = l_inv.transpose() * eig.eigenvectors;
    Ok((eig.eigenvalues, v))
}

pub fn trace_of_product(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let mut s = 0.0;
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            s += a[(i, j)] * b[(j, i)];
        }
    }
    s
}
