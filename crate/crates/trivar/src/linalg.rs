//! Small dense symmetric-matrix helpers: Cholesky factorization, SPD solves
//! and inverses, and the angle parameterization of correlation matrices.
//! Problem sizes here are tiny (3x3 error structures up to ~40x40 Hessians),
//! so straightforward loops are the right tool.

use crate::error::{Error, Result};
use ndarray::{Array1, Array2};

/// Lower-triangular Cholesky factor of a symmetric positive definite matrix,
/// or `None` if the matrix is not (numerically) positive definite.
pub fn cholesky(a: &Array2<f64>) -> Option<Array2<f64>> {
    let n = a.nrows();
    if a.ncols() != n {
        return None;
    }
    let mut l = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a[[i, j]];
            for k in 0..j {
                sum -= l[[i, k]] * l[[j, k]];
            }
            if i == j {
                if !(sum > 0.0) || !sum.is_finite() {
                    return None;
                }
                l[[i, j]] = sum.sqrt();
            } else {
                l[[i, j]] = sum / l[[j, j]];
            }
        }
    }
    Some(l)
}

/// Solve A x = b given the Cholesky factor L of A.
pub fn chol_solve(l: &Array2<f64>, b: &Array1<f64>) -> Array1<f64> {
    let n = l.nrows();
    let mut y = Array1::<f64>::zeros(n);
    for i in 0..n {
        let mut sum = b[i];
        for k in 0..i {
            sum -= l[[i, k]] * y[k];
        }
        y[i] = sum / l[[i, i]];
    }
    let mut x = Array1::<f64>::zeros(n);
    for i in (0..n).rev() {
        let mut sum = y[i];
        for k in (i + 1)..n {
            sum -= l[[k, i]] * x[k];
        }
        x[i] = sum / l[[i, i]];
    }
    x
}

/// Inverse of an SPD matrix from its Cholesky factor.
pub fn chol_inverse(l: &Array2<f64>) -> Array2<f64> {
    let n = l.nrows();
    let mut inv = Array2::<f64>::zeros((n, n));
    for j in 0..n {
        let mut e = Array1::<f64>::zeros(n);
        e[j] = 1.0;
        let col = chol_solve(l, &e);
        for i in 0..n {
            inv[[i, j]] = col[i];
        }
    }
    // enforce exact symmetry against rounding
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (inv[[i, j]] + inv[[j, i]]);
            inv[[i, j]] = v;
            inv[[j, i]] = v;
        }
    }
    inv
}

/// log-determinant of an SPD matrix from its Cholesky factor.
pub fn chol_ln_det(l: &Array2<f64>) -> f64 {
    (0..l.nrows()).map(|i| l[[i, i]].ln()).sum::<f64>() * 2.0
}

/// Solve the SPD system A x = b, failing if A is not positive definite.
pub fn solve_spd(a: &Array2<f64>, b: &Array1<f64>) -> Result<Array1<f64>> {
    let l = cholesky(a).ok_or_else(|| {
        Error::Numerical("matrix is not positive definite in SPD solve".into())
    })?;
    Ok(chol_solve(&l, b))
}

// Squash an unconstrained real onto (-1, 1); this is cos of the
// hyperspherical angle pi/2 - atan(u), so u = 0 maps to 0 exactly.
#[inline]
fn angle_cos(u: f64) -> f64 {
    u / (1.0 + u * u).sqrt()
}

#[inline]
fn angle_sin(u: f64) -> f64 {
    1.0 / (1.0 + u * u).sqrt()
}

#[inline]
fn angle_inverse(c: f64) -> f64 {
    c / (1.0 - c * c).sqrt()
}

/// Number of angle coordinates for a `dim`-dimensional correlation matrix.
pub fn corr_angle_count(dim: usize) -> usize {
    dim * (dim - 1) / 2
}

/// Cholesky factor of a correlation matrix from unconstrained angle
/// coordinates (row-major lower-triangle order). Any real input yields a
/// strictly positive definite correlation matrix with unit diagonal.
pub fn corr_cholesky_from_angles(u: &[f64], dim: usize) -> Result<Array2<f64>> {
    if u.len() != corr_angle_count(dim) {
        return Err(Error::Spec(format!(
            "expected {} angle coordinates for a {dim}x{dim} correlation matrix, got {}",
            corr_angle_count(dim),
            u.len()
        )));
    }
    let mut l = Array2::<f64>::zeros((dim, dim));
    l[[0, 0]] = 1.0;
    let mut pos = 0;
    for i in 1..dim {
        let mut sin_prod = 1.0;
        for j in 0..i {
            l[[i, j]] = angle_cos(u[pos]) * sin_prod;
            sin_prod *= angle_sin(u[pos]);
            pos += 1;
        }
        l[[i, i]] = sin_prod;
    }
    Ok(l)
}

/// Correlation matrix implied by unconstrained angle coordinates.
pub fn corr_from_angles(u: &[f64], dim: usize) -> Result<Array2<f64>> {
    let l = corr_cholesky_from_angles(u, dim)?;
    Ok(l.dot(&l.t()))
}

/// Inverse of [`corr_from_angles`]: recover the unconstrained coordinates of
/// a strictly positive definite correlation matrix.
pub fn angles_from_corr(c: &Array2<f64>) -> Result<Vec<f64>> {
    let dim = c.nrows();
    let l = cholesky(c).ok_or_else(|| {
        Error::Parameter("correlation matrix is not positive definite".into())
    })?;
    let mut out = Vec::with_capacity(corr_angle_count(dim));
    for i in 1..dim {
        let mut sin_prod = 1.0;
        for j in 0..i {
            let cos = l[[i, j]] / sin_prod;
            if !(cos.abs() < 1.0) {
                return Err(Error::Parameter(
                    "correlation matrix is on the boundary of the positive definite region".into(),
                ));
            }
            out.push(angle_inverse(cos));
            sin_prod *= (1.0 - cos * cos).sqrt();
        }
    }
    Ok(out)
}
