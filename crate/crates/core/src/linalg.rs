//! Small dense linear-algebra helpers on top of `nalgebra`.
//!
//! Every positive-definiteness check goes through [`spd_cholesky`]: the input is
//! symmetrized as `(X + Xᵀ)/2` and the Cholesky factorization must succeed with
//! every squared pivot above [`MIN_PIVOT`].

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// Smallest admissible squared Cholesky pivot.
pub const MIN_PIVOT: f64 = 1e-10;

pub fn symmetrize(x: &DMatrix<f64>) -> DMatrix<f64> {
    (x + x.transpose()) * 0.5
}

pub fn is_finite(x: &DMatrix<f64>) -> bool {
    x.iter().all(|v| v.is_finite())
}

/// Cholesky factor of the symmetrized input, or `NotPositiveDefinite`.
pub fn spd_cholesky(x: &DMatrix<f64>, name: &'static str) -> Result<Cholesky<f64, Dyn>> {
    if !x.is_square() {
        return Err(Error::dims(
            name,
            "square matrix",
            format!("{}x{}", x.nrows(), x.ncols()),
        ));
    }
    if !is_finite(x) {
        return Err(Error::NotPositiveDefinite { name });
    }
    let chol = Cholesky::new(symmetrize(x)).ok_or(Error::NotPositiveDefinite { name })?;
    let l = chol.l_dirty();
    let min_pivot = (0..l.nrows())
        .map(|i| l[(i, i)] * l[(i, i)])
        .fold(f64::INFINITY, f64::min);
    if min_pivot > MIN_PIVOT {
        Ok(chol)
    } else {
        Err(Error::NotPositiveDefinite { name })
    }
}

pub fn check_spd(x: &DMatrix<f64>, name: &'static str) -> Result<()> {
    spd_cholesky(x, name).map(|_| ())
}

/// `ln|X|` of a symmetric positive definite matrix.
pub fn logdet_spd(x: &DMatrix<f64>, name: &'static str) -> Result<f64> {
    Ok(logdet_from_cholesky(&spd_cholesky(x, name)?))
}

pub fn logdet_from_cholesky(chol: &Cholesky<f64, Dyn>) -> f64 {
    let l = chol.l_dirty();
    2.0 * (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>()
}

/// Inverse of a symmetric positive definite matrix, symmetrized on output.
pub fn spd_inverse(x: &DMatrix<f64>, name: &'static str) -> Result<DMatrix<f64>> {
    let inv = spd_cholesky(x, name)?.inverse();
    Ok(symmetrize(&inv))
}

/// Largest absolute entry.
pub fn max_abs(x: &DMatrix<f64>) -> f64 {
    x.iter().fold(0.0, |acc, v| acc.max(v.abs()))
}

/// `xᵀ A x`.
pub fn quad_form(a: &DMatrix<f64>, x: &DVector<f64>) -> f64 {
    x.dot(&(a * x))
}

/// Lexicographic `<` on vectors of equal length.
pub fn lex_less(a: &DVector<f64>, b: &DVector<f64>) -> bool {
    for (x, y) in a.iter().zip(b.iter()) {
        if x < y {
            return true;
        }
        if x > y {
            return false;
        }
    }
    false
}
