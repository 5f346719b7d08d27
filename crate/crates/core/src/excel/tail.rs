//! Data-driven choice between the upper and lower tail.
//!
//! Fit the effect once per tail, form per-observation residuals against the
//! fitted contrast at a reference point, and compare how much the extreme
//! residual moves across exposure neighborhoods: under the correct tail the
//! extreme conditional quantile of the residual is (nearly) flat in the
//! exposure, so the flatter side wins.

use nalgebra::DVector;

use super::{fit_series, Tail, TailSelection};
use crate::basis::BasisSpec;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::qr::FitOptions;

/// Select the tail by the residual-range rule.
///
/// `num_grid` reference points are placed at equally spaced empirical
/// quantiles of the first exposure column (of the leading principal
/// direction when the exposure is multi-dimensional). Each grid point
/// collects its `floor(n / ln n)` (at least 5) nearest observations under
/// the Euclidean distance on standardized exposures, with ties broken by
/// observation index. Ties between the two ranges resolve to `Upper`.
pub fn select_tail(
    data: &Dataset,
    tau: f64,
    spec: &BasisSpec,
    x0: &[f64],
    num_grid: usize,
) -> Result<TailSelection> {
    data.validate()?;
    let n = data.n();
    if n < 20 {
        return Err(Error::TooFewObservations { needed: 20, got: n });
    }
    if num_grid < 2 {
        return Err(Error::InvalidArgument("num_grid must be >= 2".into()));
    }
    if x0.len() != data.d() {
        return Err(Error::DimensionMismatch {
            context: "tail-selection reference point",
            expected: data.d(),
            got: x0.len(),
        });
    }

    let basis = spec.place(&data.x)?;
    let opts = FitOptions { allow_degenerate: true, ..FitOptions::default() };
    let (_, beta_u) = fit_series(&basis, &data.x, &data.y, Tail::Upper.level(tau), &opts)?;
    let (_, beta_l) = fit_series(&basis, &data.x, &data.y, Tail::Lower.level(tau), &opts)?;

    let v0 = basis.evaluate(x0)?.values;
    let v0 = DVector::from_vec(v0);
    let expanded = basis.expand(&data.x)?;
    let vm = expanded.design.as_matrix();
    let base_u = v0.dot(&beta_u);
    let base_l = v0.dot(&beta_l);
    let mut eps_u = Vec::with_capacity(n);
    let mut eps_l = Vec::with_capacity(n);
    for i in 0..n {
        let row = vm.row(i).transpose();
        eps_u.push(data.y[i] - (row.dot(&beta_u) - base_u));
        eps_l.push(data.y[i] - (row.dot(&beta_l) - base_l));
    }

    // Standardize exposures, project on the leading principal direction.
    let d = data.d();
    let mut xs = data.x.clone();
    for j in 0..d {
        let mean = xs.column(j).iter().sum::<f64>() / n as f64;
        let var = xs.column(j).iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        let sd = if var > 0.0 { var.sqrt() } else { 1.0 };
        for i in 0..n {
            xs[(i, j)] = (xs[(i, j)] - mean) / sd;
        }
    }
    let direction = if d == 1 {
        DVector::from_element(1, 1.0)
    } else {
        leading_direction(&xs)
    };
    let proj: Vec<f64> = (0..n).map(|i| xs.row(i).transpose().dot(&direction)).collect();
    let mut sorted = proj.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());

    let neighbors = ((n as f64) / (n as f64).ln()).floor() as usize;
    let neighbors = neighbors.clamp(5, n);

    let mut q_upper = Vec::with_capacity(num_grid);
    let mut q_lower = Vec::with_capacity(num_grid);
    let mut order: Vec<usize> = (0..n).collect();
    for k in 0..num_grid {
        let prob = (k as f64 + 0.5) / num_grid as f64;
        let t = crate::basis::empirical_quantile(&sorted, prob);
        // Distance to the grid point reduces to |proj_i - t| along the
        // principal direction.
        order.sort_by(|&i, &j| {
            let di = (proj[i] - t).abs();
            let dj = (proj[j] - t).abs();
            di.partial_cmp(&dj).unwrap().then(i.cmp(&j))
        });
        let set = &order[..neighbors];
        let qu = set.iter().map(|&i| eps_u[i]).fold(f64::NEG_INFINITY, f64::max);
        let ql = set.iter().map(|&i| eps_l[i]).fold(f64::INFINITY, f64::min);
        q_upper.push(qu);
        q_lower.push(ql);
    }

    let range = |v: &[f64]| {
        let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        hi - lo
    };
    let range_upper = range(&q_upper);
    let range_lower = range(&q_lower);
    let side = if range_upper <= range_lower { Tail::Upper } else { Tail::Lower };
    Ok(TailSelection { side, range_upper, range_lower })
}

/// Leading eigenvector of the sample covariance of (already standardized)
/// columns, with a deterministic sign convention.
fn leading_direction(xs: &nalgebra::DMatrix<f64>) -> DVector<f64> {
    let n = xs.nrows() as f64;
    let cov = xs.transpose() * xs / n;
    let eig = cov.symmetric_eigen();
    let mut best = 0;
    for i in 1..eig.eigenvalues.len() {
        if eig.eigenvalues[i] > eig.eigenvalues[best] {
            best = i;
        }
    }
    let mut v = eig.eigenvectors.column(best).into_owned();
    // Fix the sign so the decision does not depend on eigen solver quirks.
    let lead = v.iter().cloned().find(|w| w.abs() > 1e-12).unwrap_or(1.0);
    if lead < 0.0 {
        v = -v;
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    /// Mirror property: negating the outcome swaps the decision and the
    /// diagnostics.
    #[test]
    fn negation_mirrors_the_decision() {
        let mut rng = crate::rng::stream(11, &[1]);
        let n = 400;
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let y: Vec<f64> = x
            .iter()
            .map(|&v| {
                let e: f64 = rng.gen_range(0.0..1.0);
                0.5 * v - e.ln() // exponential upper tail, bounded below
            })
            .collect();
        let neg_y: Vec<f64> = y.iter().map(|v| -v).collect();
        let data = Dataset::from_columns(y, x.clone()).unwrap();
        let mirrored = Dataset::from_columns(neg_y, x).unwrap();
        let spec = BasisSpec::identity_linear(1);
        let a = select_tail(&data, 0.05, &spec, &[0.0], 10).unwrap();
        let b = select_tail(&mirrored, 0.05, &spec, &[0.0], 10).unwrap();
        assert_eq!(a.side, b.side.opposite());
        assert!((a.range_upper - b.range_lower).abs() < 1e-8);
        assert!((a.range_lower - b.range_upper).abs() < 1e-8);
    }

    #[test]
    fn deterministic_given_data() {
        let mut rng = crate::rng::stream(12, &[1]);
        let n = 200;
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let y: Vec<f64> = x.iter().map(|&v| v + rng.gen_range(-1.0..1.0)).collect();
        let data = Dataset::from_columns(y, x).unwrap();
        let spec = BasisSpec::identity_linear(1);
        let a = select_tail(&data, 0.05, &spec, &[0.0], 8).unwrap();
        let b = select_tail(&data, 0.05, &spec, &[0.0], 8).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn small_samples_are_rejected() {
        let data = Dataset::from_columns(vec![1.0; 10], (0..10).map(|i| i as f64).collect()).unwrap();
        let err = select_tail(&data, 0.1, &BasisSpec::identity_linear(1), &[0.0], 5).unwrap_err();
        assert!(matches!(err, Error::TooFewObservations { .. }));
    }
}
