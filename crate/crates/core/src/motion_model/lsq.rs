//! Dense linear least squares with rank detection.
//!
//! Columns are equilibrated to unit norm, reduced by QR, and the triangular
//! factor is decomposed by SVD. Directions whose singular value falls below
//! `RANK_TOL * sigma_max` are treated as numerically null and receive a
//! Tikhonov-damped inverse with `lambda = RIDGE_SCALE * trace(AᵀA) / p`; all
//! other directions are inverted exactly, so well-conditioned coefficients
//! are never biased.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub const RANK_TOL: f64 = 1e-10;
pub const RIDGE_SCALE: f64 = 1e-8;
/// Required bound on `‖Aᵀ(Ax − b)‖ / ‖Aᵀb‖` at the returned solution.
pub const GRADIENT_TOL: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct LstsqSolution {
    pub x: DVector<f64>,
    pub rank: usize,
    /// Ridge weight applied to the null directions, when any were found.
    pub ridge: Option<f64>,
}

fn solve_once(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<LstsqSolution> {
    let p = a.ncols();
    let scales: Vec<f64> = (0..p)
        .map(|j| {
            let n = a.column(j).norm();
            if n > 0.0 && n.is_finite() {
                n
            } else {
                1.0
            }
        })
        .collect();
    let mut scaled = a.clone();
    for (j, s) in scales.iter().enumerate() {
        scaled.column_mut(j).unscale_mut(*s);
    }

    // Reduce tall systems to a p x p triangle first.
    let (core, rhs) = if scaled.nrows() > p {
        let qr = scaled.qr();
        let mut qtb = b.clone();
        qr.q_tr_mul(&mut qtb);
        (qr.r(), qtb.rows(0, p).into_owned())
    } else {
        (scaled, b.clone())
    };

    let svd = core.svd(true, true);
    let u = svd
        .u
        .as_ref()
        .ok_or_else(|| Error::NumericalFailure("svd did not produce U".into()))?;
    let v_t = svd
        .v_t
        .as_ref()
        .ok_or_else(|| Error::NumericalFailure("svd did not produce Vᵀ".into()))?;
    let sigma = &svd.singular_values;
    if sigma.iter().any(|s| !s.is_finite()) {
        return Err(Error::NumericalFailure("non-finite singular values".into()));
    }
    let sigma_max = sigma.iter().copied().fold(0.0, f64::max);
    if sigma_max == 0.0 {
        return Ok(LstsqSolution {
            x: DVector::zeros(p),
            rank: 0,
            ridge: None,
        });
    }
    let cutoff = RANK_TOL * sigma_max;
    let rank = sigma.iter().filter(|&&s| s > cutoff).count();
    let ridge = (rank < sigma.len() || rank < p)
        .then(|| RIDGE_SCALE * sigma.iter().map(|s| s * s).sum::<f64>() / p as f64);

    let utb = u.transpose() * rhs;
    let mut coeffs = DVector::zeros(sigma.len());
    for (i, &s) in sigma.iter().enumerate() {
        coeffs[i] = if s > cutoff {
            utb[i] / s
        } else {
            utb[i] * s / (s * s + ridge.unwrap_or(0.0))
        };
    }
    let mut x = v_t.transpose() * coeffs;
    for (j, s) in scales.iter().enumerate() {
        x[j] /= s;
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericalFailure("non-finite solution".into()));
    }
    Ok(LstsqSolution { x, rank, ridge })
}

fn gradient_ratio(a: &DMatrix<f64>, b: &DVector<f64>, x: &DVector<f64>) -> f64 {
    let rhs_norm = (a.transpose() * b).norm();
    let grad = a.transpose() * (a * x - b);
    if rhs_norm == 0.0 {
        grad.norm()
    } else {
        grad.norm() / rhs_norm
    }
}

/// Minimizes `‖Ax − b‖²`. Fails if the normal-equation gradient at the result
/// stays above [`GRADIENT_TOL`] after one refinement step.
pub fn solve_least_squares(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<LstsqSolution> {
    if a.nrows() != b.len() {
        return Err(Error::DimensionMismatch(format!(
            "design has {} rows, rhs has {}",
            a.nrows(),
            b.len()
        )));
    }
    if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NumericalFailure("non-finite input to least squares".into()));
    }
    let mut sol = solve_once(a, b)?;
    if gradient_ratio(a, b, &sol.x) <= GRADIENT_TOL {
        return Ok(sol);
    }
    let residual = b - a * &sol.x;
    let step = solve_once(a, &residual)?;
    sol.x += step.x;
    let ratio = gradient_ratio(a, b, &sol.x);
    if ratio <= GRADIENT_TOL {
        Ok(sol)
    } else {
        Err(Error::NumericalFailure(format!(
            "normal-equation gradient ratio {ratio:.3e} exceeds {GRADIENT_TOL:e}"
        )))
    }
}
