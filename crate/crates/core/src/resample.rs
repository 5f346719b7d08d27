//! Nonparametric bootstrap for the linear extreme-quantile estimator: joint
//! ball and component-wise confidence sets.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::excel::{excel_linear, residualize_columns, Tail};
use crate::par;
use crate::qr::{fit_check_loss, DesignMatrix};
use crate::rng::{purpose, stream};

/// Transform re-estimated inside every bootstrap replicate before the
/// quantile fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PreTransform {
    /// Residualize the outcome and every exposure column on the candidate-IV
    /// matrix by least squares, then fit on the residuals. Re-estimating the
    /// regression inside each replicate propagates its sampling noise into
    /// the bootstrap distribution.
    ResidualizeOnInstruments,
}

/// Bootstrap distribution of the linear estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapResult {
    /// Number of successful replicates (rows of `estimates`).
    pub b: usize,
    /// Replicate estimates, one row per replicate.
    pub estimates: DMatrix<f64>,
    /// Point estimate on the original data.
    pub center: DVector<f64>,
    /// (1 - alpha) order statistic of the replicate distances to the center.
    pub joint_radius: f64,
    /// Per-component (1 - alpha) order statistics of |deviation|.
    pub component_radii: DVector<f64>,
    pub alpha: f64,
    pub seed: u64,
    /// Replicates that failed rank checks even after one redraw.
    pub failed_replicates: usize,
    /// Set when fewer than 50 replicates were requested.
    pub low_replicate_warning: bool,
}

impl BootstrapResult {
    /// Assemble a result from a precomputed estimate matrix; radii are the
    /// upper order statistics at `ceil((1 - alpha) * b)`.
    pub fn from_estimates(
        center: DVector<f64>,
        estimates: DMatrix<f64>,
        alpha: f64,
        seed: u64,
        failed_replicates: usize,
    ) -> Result<Self> {
        let b = estimates.nrows();
        let d = estimates.ncols();
        if b == 0 {
            return Err(Error::InvalidArgument("no bootstrap replicates".into()));
        }
        if center.len() != d {
            return Err(Error::DimensionMismatch {
                context: "bootstrap center",
                expected: d,
                got: center.len(),
            });
        }
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::InvalidArgument(format!("alpha must lie in (0,1), got {alpha}")));
        }
        let mut distances = Vec::with_capacity(b);
        for i in 0..b {
            let mut s = 0.0;
            for j in 0..d {
                let dev = estimates[(i, j)] - center[j];
                s += dev * dev;
            }
            distances.push(s.sqrt());
        }
        let joint_radius = upper_order_statistic(&mut distances, alpha);
        let mut component_radii = DVector::zeros(d);
        for j in 0..d {
            let mut devs: Vec<f64> = (0..b).map(|i| (estimates[(i, j)] - center[j]).abs()).collect();
            component_radii[j] = upper_order_statistic(&mut devs, alpha);
        }
        Ok(BootstrapResult {
            b,
            estimates,
            center,
            joint_radius,
            component_radii,
            alpha,
            seed,
            failed_replicates,
            low_replicate_warning: b < 50,
        })
    }

    /// Joint radius at an arbitrary level, recomputed from the stored
    /// replicate distribution (one bootstrap run serves every level).
    pub fn joint_radius_at(&self, alpha: f64) -> f64 {
        let d = self.estimates.ncols();
        let mut distances: Vec<f64> = (0..self.b)
            .map(|i| {
                (0..d)
                    .map(|j| {
                        let dev = self.estimates[(i, j)] - self.center[j];
                        dev * dev
                    })
                    .sum::<f64>()
                    .sqrt()
            })
            .collect();
        upper_order_statistic(&mut distances, alpha)
    }

    /// Component radius at an arbitrary level.
    pub fn component_radius_at(&self, component: usize, alpha: f64) -> Result<f64> {
        let d = self.estimates.ncols();
        if component >= d {
            return Err(Error::IndexOutOfRange { index: component, dim: d });
        }
        let mut devs: Vec<f64> = (0..self.b)
            .map(|i| (self.estimates[(i, component)] - self.center[component]).abs())
            .collect();
        Ok(upper_order_statistic(&mut devs, alpha))
    }
}

/// Upper order statistic ceil((1 - alpha) * b), 1-indexed, of the values.
fn upper_order_statistic(values: &mut [f64], alpha: f64) -> f64 {
    let b = values.len();
    values.sort_by(|a, c| a.partial_cmp(c).unwrap());
    let k = ((1.0 - alpha) * b as f64).ceil() as usize;
    let k = k.clamp(1, b);
    values[k - 1]
}

/// A closed interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Self {
        Interval { lo, hi }
    }

    pub fn length(&self) -> f64 {
        self.hi - self.lo
    }

    /// Closed-interval intersection: shared endpoints count.
    pub fn intersects(&self, other: &Interval) -> bool {
        self.lo <= other.hi && other.lo <= self.hi
    }

    pub fn contains(&self, v: f64) -> bool {
        self.lo <= v && v <= self.hi
    }
}

/// Sort and merge overlapping or touching intervals.
pub fn merge_intervals(mut v: Vec<Interval>) -> Vec<Interval> {
    v.sort_by(|a, b| a.lo.partial_cmp(&b.lo).unwrap());
    let mut out: Vec<Interval> = Vec::with_capacity(v.len());
    for iv in v {
        match out.last_mut() {
            Some(last) if iv.lo <= last.hi => last.hi = last.hi.max(iv.hi),
            _ => out.push(iv),
        }
    }
    out
}

/// How a confidence set was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CsMethod {
    ExcelBootstrap,
    PerIvTsls,
    UnionIvRepair,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConfidenceRegion {
    /// Disjoint, sorted closed intervals (scalar parameter).
    Intervals(Vec<Interval>),
    /// Euclidean ball (vector parameter).
    Ball { center: Vec<f64>, radius: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceSet {
    pub region: ConfidenceRegion,
    pub alpha: f64,
    pub method: CsMethod,
}

impl ConfidenceSet {
    pub fn from_intervals(intervals: Vec<Interval>, alpha: f64, method: CsMethod) -> Result<Self> {
        if intervals.is_empty() {
            return Err(Error::InvalidArgument("confidence set has no intervals".into()));
        }
        for iv in &intervals {
            if !(iv.lo <= iv.hi) {
                return Err(Error::InvalidArgument(format!(
                    "invalid interval [{}, {}]",
                    iv.lo, iv.hi
                )));
            }
        }
        Ok(ConfidenceSet {
            region: ConfidenceRegion::Intervals(merge_intervals(intervals)),
            alpha,
            method,
        })
    }

    pub fn total_length(&self) -> f64 {
        match &self.region {
            ConfidenceRegion::Intervals(v) => v.iter().map(Interval::length).sum(),
            ConfidenceRegion::Ball { radius, .. } => 2.0 * radius,
        }
    }

    pub fn covers(&self, v: f64) -> bool {
        match &self.region {
            ConfidenceRegion::Intervals(ivs) => ivs.iter().any(|iv| iv.contains(v)),
            ConfidenceRegion::Ball { center, radius } => {
                center.len() == 1 && (center[0] - v).abs() <= *radius
            }
        }
    }
}

/// Bootstrap the linear estimator: `b` replicates resample rows i.i.d. with
/// replacement (seed derived per replicate), refit, and collect deviations.
/// A replicate failing rank checks is redrawn once; more than 5% failures
/// aborts with `ResampleInstability`.
pub fn bootstrap_excel(
    data: &Dataset,
    tau_n: f64,
    tail: Tail,
    alpha: f64,
    b: usize,
    seed: u64,
    pre_transform: Option<PreTransform>,
) -> Result<BootstrapResult> {
    data.validate()?;
    if !(alpha > 0.0 && alpha <= 0.5) {
        return Err(Error::InvalidArgument(format!(
            "alpha must lie in (0, 0.5], got {alpha}"
        )));
    }
    if b < 2 {
        return Err(Error::InvalidArgument("bootstrap size must be >= 2".into()));
    }
    let n = data.n();
    if tau_n * (n as f64) < 1.0 {
        return Err(Error::DegenerateQuantile { level: tail.level(tau_n), n });
    }
    if pre_transform.is_some() && data.z.is_none() {
        return Err(Error::MissingInstruments);
    }

    let center = point_estimate(data, tau_n, tail, pre_transform)?;
    let d = center.len();

    let draws: Vec<Result<Option<DVector<f64>>>> = par::map_indexed(b, |rep| {
        for attempt in 0..2u64 {
            let mut r = stream(seed, &[purpose::BOOTSTRAP, rep as u64, attempt]);
            let idx: Vec<usize> = (0..n).map(|_| r.gen_range(0..n)).collect();
            let resampled = data.resample_rows(&idx);
            match point_estimate(&resampled, tau_n, tail, pre_transform) {
                Ok(est) => return Ok(Some(est)),
                Err(Error::RankDeficient { .. }) | Err(Error::SolverDiverged { .. }) => continue,
                Err(e) => return Err(e),
            }
        }
        Ok(None)
    });

    let mut rows: Vec<DVector<f64>> = Vec::with_capacity(b);
    let mut failed = 0usize;
    for dr in draws {
        match dr? {
            Some(est) => rows.push(est),
            None => failed += 1,
        }
    }
    if failed * 20 > b {
        return Err(Error::ResampleInstability { failed, total: b });
    }
    let mut estimates = DMatrix::zeros(rows.len(), d);
    for (i, row) in rows.iter().enumerate() {
        estimates.row_mut(i).copy_from(&row.transpose());
    }
    let mut out = BootstrapResult::from_estimates(center, estimates, alpha, seed, failed)?;
    out.low_replicate_warning = b < 50;
    Ok(out)
}

/// The estimator bootstrapped: plain linear fit, or the
/// residualize-on-instruments variant.
fn point_estimate(
    data: &Dataset,
    tau_n: f64,
    tail: Tail,
    pre: Option<PreTransform>,
) -> Result<DVector<f64>> {
    match pre {
        None => Ok(excel_linear(data, tau_n, tail)?.theta),
        Some(PreTransform::ResidualizeOnInstruments) => {
            let z = data.z.as_ref().ok_or(Error::MissingInstruments)?;
            let (xi_y, xi_x) = residualize_columns(&data.y, &data.x, z)?;
            let design = DesignMatrix::with_intercept(&xi_x)?;
            let fit = fit_check_loss(&design, &xi_y, tail.level(tau_n))?;
            Ok(fit.beta.rows(1, data.d()).into_owned())
        }
    }
}

/// Symmetric component-wise confidence interval from a bootstrap run.
pub fn to_confidence_interval(result: &BootstrapResult, component: usize) -> Result<ConfidenceSet> {
    let d = result.center.len();
    if component >= d {
        return Err(Error::IndexOutOfRange { index: component, dim: d });
    }
    let c = result.center[component];
    let r = result.component_radii[component];
    ConfidenceSet::from_intervals(
        vec![Interval::new(c - r, c + r)],
        result.alpha,
        CsMethod::ExcelBootstrap,
    )
}

/// Joint Euclidean ball from a bootstrap run.
pub fn joint_confidence_ball(result: &BootstrapResult) -> ConfidenceSet {
    ConfidenceSet {
        region: ConfidenceRegion::Ball {
            center: result.center.iter().copied().collect(),
            radius: result.joint_radius,
        },
        alpha: result.alpha,
        method: CsMethod::ExcelBootstrap,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn two_replicate_quantile_is_the_first_order_statistic() {
        let center = DVector::from_element(1, 0.0);
        let estimates = DMatrix::from_column_slice(2, 1, &[1.0, -1.0]);
        let res = BootstrapResult::from_estimates(center, estimates, 0.5, 0, 0).unwrap();
        assert_abs_diff_eq!(res.joint_radius, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(res.component_radii[0], 1.0, epsilon = 1e-15);
        assert!(res.low_replicate_warning);
    }

    #[test]
    fn interval_arithmetic() {
        let center = DVector::from_element(1, 0.4);
        let estimates = DMatrix::from_column_slice(4, 1, &[0.3, 0.5, 0.35, 0.45]);
        let mut res = BootstrapResult::from_estimates(center, estimates, 0.05, 0, 0).unwrap();
        res.component_radii[0] = 0.1;
        let ci = to_confidence_interval(&res, 0).unwrap();
        match &ci.region {
            ConfidenceRegion::Intervals(v) => {
                assert_eq!(v.len(), 1);
                assert_abs_diff_eq!(v[0].lo, 0.3, epsilon = 1e-15);
                assert_abs_diff_eq!(v[0].hi, 0.5, epsilon = 1e-15);
            }
            _ => panic!("expected intervals"),
        }
    }

    #[test]
    fn degenerate_bootstrap_gives_a_point_interval() {
        let center = DVector::from_element(1, 2.0);
        let estimates = DMatrix::from_element(6, 1, 2.0);
        let res = BootstrapResult::from_estimates(center, estimates, 0.1, 0, 0).unwrap();
        let ci = to_confidence_interval(&res, 0).unwrap();
        assert_abs_diff_eq!(ci.total_length(), 0.0, epsilon = 1e-15);
        assert!(ci.covers(2.0));
    }

    #[test]
    fn merge_normalizes_touching_and_overlapping() {
        let merged = merge_intervals(vec![
            Interval::new(3.0, 4.0),
            Interval::new(0.0, 1.0),
            Interval::new(1.0, 2.0),
            Interval::new(3.5, 3.8),
        ]);
        assert_eq!(merged, vec![Interval::new(0.0, 2.0), Interval::new(3.0, 4.0)]);
        let total: f64 = merged.iter().map(Interval::length).sum();
        assert_abs_diff_eq!(total, 3.0, epsilon = 1e-15);
    }

    #[test]
    fn radii_are_monotone_in_alpha() {
        let center = DVector::from_element(1, 0.0);
        let vals: Vec<f64> = (0..100).map(|i| (i as f64 - 50.0) / 10.0).collect();
        let estimates = DMatrix::from_column_slice(100, 1, &vals);
        let res = BootstrapResult::from_estimates(center, estimates, 0.05, 0, 0).unwrap();
        assert!(res.joint_radius_at(0.10) <= res.joint_radius_at(0.05));
        assert!(
            res.component_radius_at(0, 0.10).unwrap() <= res.component_radius_at(0, 0.05).unwrap()
        );
    }
}
