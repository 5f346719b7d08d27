//! Inference with possibly invalid instruments.
//!
//! Each candidate instrument gets a TSLS Wald interval treating it as the
//! only valid one. Instruments whose interval (at a deflated level)
//! intersects the bootstrap interval of the extreme-quantile estimator are
//! kept, and the final confidence set is the union of the kept instruments'
//! intervals at the remaining level. The split between the two levels is
//! indexed by `lambda` and chosen by total-length grid search.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::excel::{default_tau, residualize_columns, select_tail, Tail, TailSelection};
use crate::qr::{fit_tsls, TslsFit};
use crate::resample::{
    bootstrap_excel, ConfidenceSet, CsMethod, Interval, PreTransform,
};
use crate::basis::BasisSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IvRepairConfig {
    pub alpha: f64,
    /// Candidate split fractions, strictly inside (0,1), sorted, distinct.
    pub lambda_grid: Vec<f64>,
    /// Tail index for the extreme-quantile anchor; `None` uses
    /// `0.01 / n^{1/4}`.
    pub tau_n: Option<f64>,
    /// Bootstrap replicates for the anchor interval.
    pub b: usize,
    pub seed: u64,
    /// Tail override; `None` selects the tail from the residualized data.
    pub tail: Option<Tail>,
}

impl IvRepairConfig {
    pub fn new(alpha: f64, seed: u64) -> Self {
        IvRepairConfig {
            alpha,
            lambda_grid: default_lambda_grid(),
            tau_n: None,
            b: 500,
            seed,
            tail: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "alpha must lie in (0,1), got {}",
                self.alpha
            )));
        }
        if self.lambda_grid.is_empty() {
            return Err(Error::InvalidArgument("lambda grid is empty".into()));
        }
        for w in self.lambda_grid.windows(2) {
            if !(w[0] < w[1]) {
                return Err(Error::InvalidArgument(
                    "lambda grid must be sorted and distinct".into(),
                ));
            }
        }
        let first = self.lambda_grid[0];
        let last = *self.lambda_grid.last().unwrap();
        if !(first > 0.0 && last < 1.0) {
            return Err(Error::InvalidArgument(
                "lambda grid values must lie strictly in (0,1)".into(),
            ));
        }
        if self.b < 2 {
            return Err(Error::InvalidArgument("bootstrap size must be >= 2".into()));
        }
        Ok(())
    }
}

/// `{0.05, 0.10, ..., 0.95}`.
pub fn default_lambda_grid() -> Vec<f64> {
    (1..=19).map(|k| k as f64 * 0.05).collect()
}

/// Standard normal quantile `z_{1 - alpha/2}` for a two-sided Wald interval.
fn wald_half_width(se: f64, level_alpha: f64) -> f64 {
    if level_alpha >= 1.0 {
        return 0.0;
    }
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    normal.inverse_cdf(1.0 - level_alpha / 2.0) * se
}

/// TSLS fit treating column `j` of the IV matrix as the instrument and the
/// remaining columns as exogenous controls.
pub fn per_iv_fit(data: &Dataset, j: usize) -> Result<TslsFit> {
    let z = data.z.as_ref().ok_or(Error::MissingInstruments)?;
    let dz = z.ncols();
    if j >= dz {
        return Err(Error::IndexOutOfRange { index: j, dim: dz });
    }
    if data.d() != 1 {
        return Err(Error::InvalidArgument(
            "per-IV inference requires a scalar exposure".into(),
        ));
    }
    let instrument: Vec<f64> = z.column(j).iter().copied().collect();
    let others: Vec<usize> = (0..dz).filter(|&k| k != j).collect();
    let controls = crate::excel::select_columns(z, &others);
    let exposure: Vec<f64> = data.x.column(0).iter().copied().collect();
    fit_tsls(&data.y, &exposure, &instrument, &controls)
}

/// Wald confidence interval for the effect, regarding `Z_j` as the only
/// valid instrument. A weak first stage widens the interval through its
/// standard error but is not an error.
pub fn per_iv_interval(data: &Dataset, j: usize, level_alpha: f64) -> Result<ConfidenceSet> {
    let fit = per_iv_fit(data, j)?;
    let half = wald_half_width(fit.se, level_alpha);
    ConfidenceSet::from_intervals(
        vec![Interval::new(fit.theta - half, fit.theta + half)],
        level_alpha,
        CsMethod::PerIvTsls,
    )
}

/// Indices whose interval intersects the anchor interval (closed-interval
/// intersection, shared endpoints count).
pub fn select_valid(per_iv: &[(usize, Interval)], anchor: &Interval) -> Vec<usize> {
    per_iv
        .iter()
        .filter(|(_, iv)| iv.intersects(anchor))
        .map(|(j, _)| *j)
        .collect()
}

/// One row of the lambda grid search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaRow {
    pub lambda: f64,
    pub selected: Vec<usize>,
    /// Total union length; `None` when no instrument was selected.
    pub total_length: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IvRepairResult {
    /// Valid-instrument set at the chosen lambda.
    pub selected: Vec<usize>,
    /// Per-instrument intervals at the final level (alpha - lambda*alpha).
    pub per_iv_intervals: Vec<(usize, Interval)>,
    /// Anchor interval at level lambda*alpha/2 for the chosen lambda.
    pub excel_interval: Interval,
    /// Chosen split, `None` when the fallback engaged.
    pub chosen_lambda: Option<f64>,
    pub final_set: ConfidenceSet,
    pub per_lambda: Vec<LambdaRow>,
    /// When every lambda produced an empty selection the final set falls
    /// back to the anchor bootstrap interval at level alpha.
    pub fallback: bool,
    /// Instruments flagged weak in the first stage.
    pub weak_instruments: Vec<usize>,
    /// Anchor point estimate.
    pub excel_estimate: f64,
    pub tail: TailSelection,
}

/// Build the union confidence set over the lambda grid.
pub fn union_confidence_set(data: &Dataset, config: &IvRepairConfig) -> Result<IvRepairResult> {
    config.validate()?;
    data.validate()?;
    let z = data.z.as_ref().ok_or(Error::MissingInstruments)?;
    if data.d() != 1 {
        return Err(Error::InvalidArgument(
            "the IV-repair path requires a scalar exposure".into(),
        ));
    }
    let n = data.n();
    let tau_n = config.tau_n.unwrap_or_else(|| default_tau(n));
    let alpha = config.alpha;

    // Tail choice on the residualized data, unless overridden.
    let tail = match config.tail {
        Some(side) => TailSelection { side, range_upper: f64::NAN, range_lower: f64::NAN },
        None => {
            let (xi_y, xi_x) = residualize_columns(&data.y, &data.x, z)?;
            let resid_data = Dataset::new(xi_y, xi_x, None)?;
            let x0 = resid_data.x_means();
            select_tail(&resid_data, tau_n, &BasisSpec::identity_linear(1), &x0, 10)?
        }
    };

    // One bootstrap run; radii at every lambda level come from its sorted
    // replicate distribution.
    let boot = bootstrap_excel(
        data,
        tau_n,
        tail.side,
        alpha.min(0.5),
        config.b,
        config.seed,
        Some(PreTransform::ResidualizeOnInstruments),
    )?;
    let theta_hat = boot.center[0];

    let dz = z.ncols();
    let mut fits = Vec::with_capacity(dz);
    for j in 0..dz {
        fits.push(per_iv_fit(data, j)?);
    }
    let weak_instruments: Vec<usize> =
        (0..dz).filter(|&j| fits[j].weak_instrument).collect();

    let mut per_lambda = Vec::with_capacity(config.lambda_grid.len());
    let mut best: Option<(usize, f64)> = None;
    for (gi, &lambda) in config.lambda_grid.iter().enumerate() {
        let sel_level = lambda * alpha / 2.0;
        let radius = boot.component_radius_at(0, sel_level)?;
        let anchor = Interval::new(theta_hat - radius, theta_hat + radius);
        let sel_intervals: Vec<(usize, Interval)> = fits
            .iter()
            .enumerate()
            .map(|(j, f)| {
                let half = wald_half_width(f.se, sel_level);
                (j, Interval::new(f.theta - half, f.theta + half))
            })
            .collect();
        let selected = select_valid(&sel_intervals, &anchor);
        let total_length = if selected.is_empty() {
            None
        } else {
            let final_level = alpha - lambda * alpha;
            let union: Vec<Interval> = selected
                .iter()
                .map(|&j| {
                    let half = wald_half_width(fits[j].se, final_level);
                    Interval::new(fits[j].theta - half, fits[j].theta + half)
                })
                .collect();
            Some(
                crate::resample::merge_intervals(union)
                    .iter()
                    .map(Interval::length)
                    .sum(),
            )
        };
        if let Some(len) = total_length {
            // Strict improvement keeps ties at the smaller lambda.
            if best.map_or(true, |(_, cur)| len < cur) {
                best = Some((gi, len));
            }
        }
        per_lambda.push(LambdaRow { lambda, selected, total_length });
    }

    match best {
        Some((gi, _)) => {
            let lambda = config.lambda_grid[gi];
            let sel_level = lambda * alpha / 2.0;
            let radius = boot.component_radius_at(0, sel_level)?;
            let anchor = Interval::new(theta_hat - radius, theta_hat + radius);
            let final_level = alpha - lambda * alpha;
            let per_iv_intervals: Vec<(usize, Interval)> = fits
                .iter()
                .enumerate()
                .map(|(j, f)| {
                    let half = wald_half_width(f.se, final_level);
                    (j, Interval::new(f.theta - half, f.theta + half))
                })
                .collect();
            let selected = per_lambda[gi].selected.clone();
            let union: Vec<Interval> = selected
                .iter()
                .map(|&j| per_iv_intervals[j].1)
                .collect();
            let final_set = ConfidenceSet::from_intervals(union, alpha, CsMethod::UnionIvRepair)?;
            Ok(IvRepairResult {
                selected,
                per_iv_intervals,
                excel_interval: anchor,
                chosen_lambda: Some(lambda),
                final_set,
                per_lambda,
                fallback: false,
                weak_instruments,
                excel_estimate: theta_hat,
                tail,
            })
        }
        None => {
            // No lambda kept any instrument: report the anchor interval at
            // the full level, which stays valid on its own.
            let radius = boot.component_radius_at(0, alpha)?;
            let anchor = Interval::new(theta_hat - radius, theta_hat + radius);
            let per_iv_intervals: Vec<(usize, Interval)> = fits
                .iter()
                .enumerate()
                .map(|(j, f)| {
                    let half = wald_half_width(f.se, alpha);
                    (j, Interval::new(f.theta - half, f.theta + half))
                })
                .collect();
            let final_set =
                ConfidenceSet::from_intervals(vec![anchor], alpha, CsMethod::UnionIvRepair)?;
            Ok(IvRepairResult {
                selected: Vec::new(),
                per_iv_intervals,
                excel_interval: anchor,
                chosen_lambda: None,
                final_set,
                per_lambda,
                fallback: true,
                weak_instruments,
                excel_estimate: theta_hat,
                tail,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn touching_endpoints_intersect() {
        let per_iv = vec![(0usize, Interval::new(0.0, 1.0))];
        let anchor = Interval::new(1.0, 2.0);
        assert_eq!(select_valid(&per_iv, &anchor), vec![0]);
    }

    #[test]
    fn disjoint_intervals_select_nothing() {
        let per_iv = vec![
            (0usize, Interval::new(0.0, 1.0)),
            (1usize, Interval::new(3.0, 4.0)),
        ];
        let anchor = Interval::new(1.5, 2.5);
        assert!(select_valid(&per_iv, &anchor).is_empty());
    }

    #[test]
    fn widening_the_intervals_grows_the_selection() {
        let anchor = Interval::new(0.0, 1.0);
        let narrow = vec![
            (0usize, Interval::new(1.2, 1.4)),
            (1usize, Interval::new(0.5, 0.6)),
            (2usize, Interval::new(-2.0, -1.5)),
        ];
        let wide: Vec<(usize, Interval)> = narrow
            .iter()
            .map(|&(j, iv)| (j, Interval::new(iv.lo - 0.5, iv.hi + 0.5)))
            .collect();
        let small = select_valid(&narrow, &anchor);
        let anchor_wide = Interval::new(-0.5, 1.5);
        let big = select_valid(&wide, &anchor_wide);
        for j in &small {
            assert!(big.contains(j));
        }
        assert!(big.len() >= small.len());
    }

    #[test]
    fn level_one_interval_is_a_point() {
        assert_eq!(wald_half_width(2.0, 1.0), 0.0);
    }

    #[test]
    fn grid_validation() {
        let mut cfg = IvRepairConfig::new(0.05, 1);
        assert!(cfg.validate().is_ok());
        cfg.lambda_grid = vec![0.2, 0.2];
        assert!(cfg.validate().is_err());
        cfg.lambda_grid = vec![0.0, 0.5];
        assert!(cfg.validate().is_err());
    }
}
