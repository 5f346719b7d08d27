//! Extreme-quantile causal effect estimators.
//!
//! The estimators contrast fitted conditional quantiles at a small tail
//! index `tau`: with a light-tailed error term the conditional quantile of
//! the error becomes exposure-independent in the tail, so the contrast
//! recovers the causal effect even when the exposure is endogenous.

mod covariate;
mod tail;
mod tau;

pub use covariate::{excel_covariate_avg, excel_covariate_residualized, residualize_columns};
pub(crate) use covariate::select_columns;
pub use tail::select_tail;
pub use tau::{select_tau, TauDiagnostics, TauSelection};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::basis::{Basis, BasisKind, BasisSpec};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::qr::{fit_check_loss_with, DesignMatrix, FitOptions, QuantileFit};

/// Which tail of the error distribution the light-tailedness assumption is
/// placed on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tail {
    Upper,
    Lower,
}

impl Tail {
    /// Quantile level fitted for tail index `tau`: upper-tail work fits the
    /// (1 - tau)-level, lower-tail work fits the tau-level.
    pub fn level(self, tau: f64) -> f64 {
        match self {
            Tail::Upper => 1.0 - tau,
            Tail::Lower => tau,
        }
    }

    pub fn opposite(self) -> Tail {
        match self {
            Tail::Upper => Tail::Lower,
            Tail::Lower => Tail::Upper,
        }
    }
}

/// Outcome of the data-driven tail choice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailSelection {
    pub side: Tail,
    /// Range over the grid of the local maxima of upper-fit residuals.
    pub range_upper: f64,
    /// Range over the grid of the local minima of lower-fit residuals.
    pub range_lower: f64,
}

/// A fitted effect estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectEstimate {
    /// Scalar contrast for the pointwise estimator (length 1), or the
    /// length-d slope vector for the linear estimator.
    pub theta: DVector<f64>,
    /// Intercept of the linear fit, when one is part of the model.
    pub mu: Option<f64>,
    /// Tail index used.
    pub tau: f64,
    pub tail: Tail,
    pub basis: BasisSpec,
    /// Underlying series coefficients (full basis dimension).
    pub beta: DVector<f64>,
    /// Set when a contrast point lies outside the componentwise range of
    /// the observed exposures.
    pub support_warning: bool,
}

/// Default tail index `0.01 / n^{1/4}`.
pub fn default_tau(n: usize) -> f64 {
    0.01 / (n as f64).powf(0.25)
}

/// Fit the series quantile regression for a placed basis, dropping the
/// redundant intercept column for spline bases (whose partition-of-unity
/// block already spans the constant). The returned coefficient vector is in
/// full basis coordinates with 0 in the dropped slot; basis contrasts are
/// invariant to that choice because every contrast annihilates the constant
/// direction.
pub(crate) fn fit_series(
    basis: &Basis,
    x: &DMatrix<f64>,
    y: &[f64],
    level: f64,
    opts: &FitOptions,
) -> Result<(QuantileFit, DVector<f64>)> {
    let expanded = basis.expand(x)?;
    let m = expanded.design.as_matrix();
    let spline = matches!(basis.spec().kind, BasisKind::TensorSpline { .. });
    if spline {
        let reduced = m.columns(1, m.ncols() - 1).into_owned();
        let design = DesignMatrix::new(reduced)?;
        let fit = fit_check_loss_with(&design, y, level, opts)?;
        let mut beta = DVector::zeros(m.ncols());
        beta.rows_mut(1, m.ncols() - 1).copy_from(&fit.beta);
        Ok((fit, beta))
    } else {
        let fit = fit_check_loss_with(&expanded.design, y, level, opts)?;
        let beta = fit.beta.clone();
        Ok((fit, beta))
    }
}

fn contrast(basis: &Basis, beta: &DVector<f64>, x: &[f64], x0: &[f64]) -> Result<f64> {
    let vx = basis.evaluate(x)?.values;
    let vx0 = basis.evaluate(x0)?.values;
    Ok(vx
        .iter()
        .zip(vx0.iter())
        .zip(beta.iter())
        .map(|((a, b), w)| (a - b) * w)
        .sum())
}

fn outside_support(data: &Dataset, point: &[f64]) -> bool {
    for j in 0..data.d() {
        let col = data.x.column(j);
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for &v in col.iter() {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if point[j] < lo || point[j] > hi {
            return true;
        }
    }
    false
}

/// Pointwise effect estimate `(v(x) - v(x0))' beta_hat` at tail index `tau`.
pub fn excel_effect(
    data: &Dataset,
    x: &[f64],
    x0: &[f64],
    tau: f64,
    spec: &BasisSpec,
    tail: Tail,
) -> Result<EffectEstimate> {
    data.validate()?;
    if x.len() != data.d() || x0.len() != data.d() {
        return Err(Error::DimensionMismatch {
            context: "effect contrast point",
            expected: data.d(),
            got: x.len(),
        });
    }
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::InvalidArgument(format!("tau must lie in (0,1), got {tau}")));
    }
    let basis = spec.place(&data.x)?;
    let (fit, beta) = fit_series(&basis, &data.x, &data.y, tail.level(tau), &FitOptions::default())?;
    let theta = contrast(&basis, &beta, x, x0)?;
    let mu = match spec.kind {
        BasisKind::IdentityLinear => Some(fit.beta[0]),
        _ => None,
    };
    Ok(EffectEstimate {
        theta: DVector::from_element(1, theta),
        mu,
        tau,
        tail,
        basis: spec.clone(),
        beta,
        support_warning: outside_support(data, x) || outside_support(data, x0),
    })
}

/// Linear-model estimator: intercept and slope vector from the quantile
/// regression of y on `[1 | X]` at the tail level.
pub fn excel_linear(data: &Dataset, tau_n: f64, tail: Tail) -> Result<EffectEstimate> {
    data.validate()?;
    if !(tau_n > 0.0 && tau_n < 1.0) {
        return Err(Error::InvalidArgument(format!("tau must lie in (0,1), got {tau_n}")));
    }
    let design = DesignMatrix::with_intercept(&data.x)?;
    let fit = crate::qr::fit_check_loss(&design, &data.y, tail.level(tau_n))?;
    let beta = fit.beta.clone();
    Ok(EffectEstimate {
        theta: beta.rows(1, data.d()).into_owned(),
        mu: Some(beta[0]),
        tau: tau_n,
        tail,
        basis: BasisSpec::identity_linear(data.d()),
        beta,
        support_warning: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    fn toy_data(n: usize, seed: u64) -> Dataset {
        let mut rng = crate::rng::stream(seed, &[99]);
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let y: Vec<f64> = x.iter().map(|&v| 0.7 * v + rng.gen_range(-1.0..1.0)).collect();
        Dataset::from_columns(y, x).unwrap()
    }

    #[test]
    fn identical_points_give_zero_effect() {
        let data = toy_data(120, 3);
        let spec = BasisSpec::identity_linear(1);
        let est = excel_effect(&data, &[0.5], &[0.5], 0.1, &spec, Tail::Upper).unwrap();
        assert_eq!(est.theta[0], 0.0);
        assert!(!est.support_warning);
    }

    #[test]
    fn linear_matches_effect_coordinatewise() {
        let data = toy_data(200, 4);
        let spec = BasisSpec::identity_linear(1);
        let eff = excel_effect(&data, &[1.0], &[0.0], 0.05, &spec, Tail::Upper).unwrap();
        let lin = excel_linear(&data, 0.05, Tail::Upper).unwrap();
        assert_eq!(eff.beta, lin.beta);
        assert_abs_diff_eq!(eff.theta[0], lin.theta[0], epsilon = 1e-12);
        assert_eq!(eff.mu, lin.mu);
    }

    #[test]
    fn contrast_is_antisymmetric() {
        let data = toy_data(150, 5);
        let spec = BasisSpec::polynomial(2, 1);
        let a = excel_effect(&data, &[1.2], &[-0.3], 0.08, &spec, Tail::Upper).unwrap();
        let b = excel_effect(&data, &[-0.3], &[1.2], 0.08, &spec, Tail::Upper).unwrap();
        assert_abs_diff_eq!(a.theta[0], -b.theta[0], epsilon = 1e-10);
    }

    #[test]
    fn support_warning_fires_outside_the_hull() {
        let data = toy_data(80, 6);
        let spec = BasisSpec::identity_linear(1);
        let est = excel_effect(&data, &[10.0], &[0.0], 0.1, &spec, Tail::Upper).unwrap();
        assert!(est.support_warning);
    }
}
