//! Two-stage least squares with a single endogenous exposure.

use nalgebra::{DMatrix, DVector};

use super::ols::solve_ls;
use super::{numerical_rank, DesignMatrix, RANK_TOLERANCE};
use crate::error::{Error, Result};

/// Two-stage least squares fit for the effect of a scalar exposure.
#[derive(Debug, Clone, PartialEq)]
pub struct TslsFit {
    /// Coefficient on the exposure.
    pub theta: f64,
    /// Heteroskedasticity-robust (HC0) standard error.
    pub se: f64,
    pub residual_df: usize,
    /// First-stage t-statistic of the excluded instrument block (smallest
    /// |t| across instruments in the multi-instrument case).
    pub first_stage_t: f64,
    /// Set when `first_stage_t` falls below the configured floor. Signaled,
    /// not fatal: the point estimate and (wide) standard error are still
    /// returned.
    pub weak_instrument: bool,
}

#[derive(Debug, Clone)]
pub struct TslsOptions {
    /// First-stage |t| below this flags a weak instrument.
    pub weak_t_floor: f64,
}

impl Default for TslsOptions {
    fn default() -> Self {
        TslsOptions { weak_t_floor: 2.0 }
    }
}

/// TSLS using a single instrument, with `controls` entered exogenously in
/// both stages. Pass 0-column controls when there are none.
pub fn fit_tsls(
    y: &[f64],
    exposure: &[f64],
    instrument: &[f64],
    controls: &DMatrix<f64>,
) -> Result<TslsFit> {
    let n = y.len();
    let z = DMatrix::from_column_slice(n, 1, instrument);
    fit_tsls_multi_with(y, exposure, &z, controls, &TslsOptions::default())
}

/// TSLS using every column of `instruments` jointly.
pub fn fit_tsls_multi(
    y: &[f64],
    exposure: &[f64],
    instruments: &DMatrix<f64>,
    controls: &DMatrix<f64>,
) -> Result<TslsFit> {
    fit_tsls_multi_with(y, exposure, instruments, controls, &TslsOptions::default())
}

pub fn fit_tsls_multi_with(
    y: &[f64],
    exposure: &[f64],
    instruments: &DMatrix<f64>,
    controls: &DMatrix<f64>,
    opts: &TslsOptions,
) -> Result<TslsFit> {
    let n = y.len();
    if exposure.len() != n {
        return Err(Error::DimensionMismatch {
            context: "tsls exposure",
            expected: n,
            got: exposure.len(),
        });
    }
    if instruments.nrows() != n || (controls.ncols() > 0 && controls.nrows() != n) {
        return Err(Error::DimensionMismatch {
            context: "tsls instruments/controls",
            expected: n,
            got: instruments.nrows(),
        });
    }
    let m = instruments.ncols();
    let k = controls.ncols();
    if m == 0 {
        return Err(Error::InvalidArgument("tsls needs at least one instrument".into()));
    }

    // Instrument design [1 | Z | W]; must have full rank.
    let mut zfull = DMatrix::zeros(n, 1 + m + k);
    zfull.column_mut(0).fill(1.0);
    zfull.view_mut((0, 1), (n, m)).copy_from(instruments);
    if k > 0 {
        zfull.view_mut((0, 1 + m), (n, k)).copy_from(controls);
    }
    let zdesign = DesignMatrix::new(zfull.clone())?;
    zdesign.check_full_rank()?;

    let xv = DVector::from_column_slice(exposure);
    let yv = DVector::from_column_slice(y);
    if !xv.iter().all(|v| v.is_finite()) || !yv.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite { context: "tsls data" });
    }

    // First stage: exposure on [1 | Z | W], HC0 t-statistics for Z.
    let gamma = solve_ls(&zfull, &xv)?;
    let fs_resid = &xv - &zfull * &gamma;
    let fs_cov = hc0_covariance(&zfull, &fs_resid)?;
    let mut min_abs_t = f64::INFINITY;
    for j in 0..m {
        let se = fs_cov[(1 + j, 1 + j)].max(0.0).sqrt();
        let t = if se > 0.0 { gamma[1 + j] / se } else { 0.0 };
        min_abs_t = min_abs_t.min(t.abs());
    }
    if !min_abs_t.is_finite() {
        return Err(Error::NonFinite { context: "first-stage t-statistic" });
    }

    // Second stage on [1 | x_hat | W]; residuals use the original exposure.
    let xhat = &zfull * &gamma;
    let q_cols = 2 + k;
    let mut qhat = DMatrix::zeros(n, q_cols);
    let mut qorig = DMatrix::zeros(n, q_cols);
    qhat.column_mut(0).fill(1.0);
    qorig.column_mut(0).fill(1.0);
    qhat.column_mut(1).copy_from(&xhat);
    qorig.column_mut(1).copy_from(&xv);
    if k > 0 {
        qhat.view_mut((0, 2), (n, k)).copy_from(controls);
        qorig.view_mut((0, 2), (n, k)).copy_from(controls);
    }
    if numerical_rank(&qhat, RANK_TOLERANCE) < q_cols {
        return Err(Error::RankDeficient { threshold: RANK_TOLERANCE });
    }
    let beta = solve_ls(&qhat, &yv)?;
    let resid = &yv - &qorig * &beta;
    let cov = hc0_covariance(&qhat, &resid)?;
    let theta = beta[1];
    let se = cov[(1, 1)].max(0.0).sqrt();
    if !theta.is_finite() || !se.is_finite() {
        return Err(Error::NonFinite { context: "tsls estimate" });
    }

    Ok(TslsFit {
        theta,
        se,
        residual_df: n.saturating_sub(q_cols),
        first_stage_t: min_abs_t,
        weak_instrument: min_abs_t < opts.weak_t_floor,
    })
}

/// HC0 sandwich covariance `(X'X)^{-1} (sum e_i^2 x_i x_i') (X'X)^{-1}`.
fn hc0_covariance(x: &DMatrix<f64>, resid: &DVector<f64>) -> Result<DMatrix<f64>> {
    let p = x.ncols();
    let xtx = x.transpose() * x;
    let bread = xtx
        .clone()
        .cholesky()
        .map(|c| c.inverse())
        .or_else(|| xtx.try_inverse())
        .ok_or(Error::RankDeficient { threshold: RANK_TOLERANCE })?;
    let mut meat = DMatrix::zeros(p, p);
    for i in 0..x.nrows() {
        let e2 = resid[i] * resid[i];
        let row = x.row(i);
        for a in 0..p {
            for b in 0..p {
                meat[(a, b)] += e2 * row[a] * row[b];
            }
        }
    }
    Ok(&bread * meat * &bread)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn instrumenting_with_the_exposure_collapses_to_ols() {
        let x: Vec<f64> = (0..40).map(|i| (i as f64) * 0.25 - 3.0).collect();
        let y: Vec<f64> = x.iter().enumerate().map(|(i, &v)| 1.5 + 0.8 * v + ((i % 7) as f64 - 3.0) * 0.1).collect();
        let controls = DMatrix::zeros(40, 0);
        let tsls = fit_tsls(&y, &x, &x, &controls).unwrap();

        let design = DesignMatrix::with_intercept(&DMatrix::from_column_slice(40, 1, &x)).unwrap();
        let ols = crate::qr::fit_ols(&design, &y).unwrap();
        assert_abs_diff_eq!(tsls.theta, ols[1], epsilon = 1e-9);
        assert!(!tsls.weak_instrument);
    }

    #[test]
    fn weak_instrument_is_flagged_not_fatal() {
        // Instrument nearly unrelated to the exposure.
        let n = 60;
        let x: Vec<f64> = (0..n).map(|i| ((i * 37 + 11) % 23) as f64 / 7.0).collect();
        let z: Vec<f64> = (0..n).map(|i| 1e-7 * ((i % 3) as f64)).collect();
        let y: Vec<f64> = x.iter().map(|&v| 0.4 * v + 0.2).collect();
        let controls = DMatrix::zeros(n, 0);
        let fit = fit_tsls(&y, &x, &z, &controls).unwrap();
        assert!(fit.weak_instrument);
        assert!(fit.se >= 0.0);
    }
}
