//! Small dense helpers shared by the rate terms and the diagnostics.

use alloc::vec::Vec;

use nalgebra::{Cholesky, DMatrix, Dyn};

use crate::error::{Error, Result};

fn factor(m: DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    Cholesky::new(m).ok_or_else(|| Error::Numeric("matrix is not positive definite".into()))
}

fn logdet_from(chol: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>()
}

/// `log det(I + c YᵀY)` evaluated on whichever Gram side is smaller.
pub(crate) fn logdet_gram(y: &DMatrix<f64>, c: f64) -> Result<f64> {
    let (m, d) = y.shape();
    if m == 0 || d == 0 {
        return Ok(0.0);
    }
    let gram = if m <= d {
        y * y.transpose()
    } else {
        y.transpose() * y
    };
    let n = gram.nrows();
    let chol = factor(DMatrix::identity(n, n) + gram * c)?;
    Ok(logdet_from(&chol))
}

/// Value and gradient with respect to `Y` of `log det(I + c YᵀY)`.
///
/// The gradient is `2c Y (I + c YᵀY)⁻¹`, or equivalently `2c (I + c YYᵀ)⁻¹ Y`
/// when there are fewer rows than columns.
pub(crate) fn logdet_gram_grad(y: &DMatrix<f64>, c: f64) -> Result<(f64, DMatrix<f64>)> {
    let (m, d) = y.shape();
    if m == 0 || d == 0 {
        return Ok((0.0, DMatrix::zeros(m, d)));
    }
    if m <= d {
        let chol = factor(DMatrix::identity(m, m) + (y * y.transpose()) * c)?;
        let value = logdet_from(&chol);
        let grad = chol.solve(y) * (2.0 * c);
        Ok((value, grad))
    } else {
        let chol = factor(DMatrix::identity(d, d) + (y.transpose() * y) * c)?;
        let value = logdet_from(&chol);
        let grad = chol.solve(&y.transpose()).transpose() * (2.0 * c);
        Ok((value, grad))
    }
}

/// Singular values in descending order.
pub fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Vec::new();
    }
    let mut values: Vec<f64> = m.clone().svd(false, false).singular_values.iter().copied().collect();
    values.sort_by(|a, b| b.total_cmp(a));
    values
}

pub(crate) fn all_finite(m: &DMatrix<f64>) -> bool {
    m.iter().all(|v| v.is_finite())
}
