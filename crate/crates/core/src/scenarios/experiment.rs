//! Monte Carlo experiment harness: replicate a scenario, run the requested
//! estimators, and reduce to bias / MSE / coverage / length rows.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{generate, DgpConfig, Scenario};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::excel::{default_tau, excel_linear, residualize_columns, select_tail, select_tau, Tail};
use crate::iv_repair::{union_confidence_set, IvRepairConfig};
use crate::par;
use crate::qr::{fit_ols, fit_tsls, fit_tsls_multi, DesignMatrix};
use crate::resample::{bootstrap_excel, to_confidence_interval, PreTransform};
use crate::rng::{derive, purpose};
use crate::basis::BasisSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Ols,
    TslsAll,
    TslsOracle,
    Excel,
    ExcelBootstrapCi,
    IvRepair,
    ExcelAdaptiveTau,
}

impl Method {
    pub fn tag(&self) -> &'static str {
        match self {
            Method::Ols => "ols",
            Method::TslsAll => "tsls_all",
            Method::TslsOracle => "tsls_oracle",
            Method::Excel => "excel",
            Method::ExcelBootstrapCi => "excel_bootstrap_ci",
            Method::IvRepair => "iv_repair",
            Method::ExcelAdaptiveTau => "excel_adaptive_tau",
        }
    }

    fn needs_instruments(&self) -> bool {
        matches!(self, Method::TslsAll | Method::TslsOracle | Method::IvRepair)
    }

    fn produces_interval(&self) -> bool {
        matches!(self, Method::ExcelBootstrapCi | Method::IvRepair)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dgp: DgpConfig,
    pub methods: Vec<Method>,
    pub replications: usize,
    pub alpha: f64,
    pub seed: u64,
    /// Bootstrap replicates for interval methods.
    #[serde(default = "default_b")]
    pub bootstrap_b: usize,
    /// Tail index; `None` uses `0.01 / n^{1/4}`.
    #[serde(default)]
    pub tau: Option<f64>,
    /// Tail override; `None` selects per replicate from the data.
    #[serde(default)]
    pub tail: Option<Tail>,
    /// Candidate set for the adaptive tail index; `None` uses
    /// `{0.01 k / n^{1/4} : k = 1..5}`.
    #[serde(default)]
    pub adaptive_candidates: Option<Vec<f64>>,
    #[serde(default = "default_adaptive_b")]
    pub adaptive_b: usize,
}

fn default_b() -> usize {
    500
}

fn default_adaptive_b() -> usize {
    200
}

impl ExperimentConfig {
    pub fn new(dgp: DgpConfig, methods: Vec<Method>, replications: usize, seed: u64) -> Self {
        ExperimentConfig {
            dgp,
            methods,
            replications,
            alpha: 0.05,
            seed,
            bootstrap_b: default_b(),
            tau: None,
            tail: None,
            adaptive_candidates: None,
            adaptive_b: default_adaptive_b(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodRow {
    pub method: Method,
    pub bias: f64,
    pub mse: f64,
    /// Empirical coverage of the true effect; interval methods only.
    pub coverage: Option<f64>,
    pub mean_length: Option<f64>,
    pub replications: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub theta0: f64,
    pub rows: Vec<MethodRow>,
    pub wall_seconds: f64,
}

struct ReplicateOutcome {
    estimate: f64,
    interval: Option<(bool, f64)>,
}

/// Default adaptive candidate grid `{0.01 k / n^{1/4}}`.
pub fn default_adaptive_candidates(n: usize) -> Vec<f64> {
    (1..=5).map(|k| 0.01 * k as f64 / (n as f64).powf(0.25)).collect()
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.dgp.validate()?;
    if config.replications == 0 {
        return Err(Error::InvalidArgument("replications must be >= 1".into()));
    }
    if !(config.alpha > 0.0 && config.alpha <= 0.5) {
        return Err(Error::InvalidArgument("alpha must lie in (0, 0.5]".into()));
    }
    if config.methods.is_empty() {
        return Err(Error::InvalidArgument("no methods requested".into()));
    }
    for m in &config.methods {
        if m.needs_instruments() && config.dgp.scenario != Scenario::InvalidIv {
            return Err(Error::IncompatibleMethodScenario {
                method: m.tag().to_string(),
                scenario: config.dgp.scenario.tag().to_string(),
            });
        }
    }

    let started = Instant::now();
    let tau_n = config.tau.unwrap_or_else(|| default_tau(config.dgp.n));
    let reps = config.replications;

    let outcomes: Vec<Result<Vec<ReplicateOutcome>>> = par::map_indexed(reps, |r| {
        let mut dgp = config.dgp.clone();
        dgp.seed = derive(config.seed, &[purpose::EXPERIMENT, r as u64]);
        let generated = generate(&dgp)?;
        replicate(config, &generated.data, tau_n, r as u64)
    });

    let theta0 = theta_target(config);
    let mut per_method: Vec<Vec<ReplicateOutcome>> =
        config.methods.iter().map(|_| Vec::with_capacity(reps)).collect();
    for rep in outcomes {
        let row = rep?;
        for (slot, outcome) in per_method.iter_mut().zip(row) {
            slot.push(outcome);
        }
    }

    let mut rows = Vec::with_capacity(config.methods.len());
    for (mi, m) in config.methods.iter().enumerate() {
        let ests: Vec<f64> = per_method[mi].iter().map(|o| o.estimate).collect();
        let bias = ests.iter().sum::<f64>() / reps as f64 - theta0;
        let mse = ests.iter().map(|e| (e - theta0) * (e - theta0)).sum::<f64>() / reps as f64;
        let (coverage, mean_length) = if m.produces_interval() {
            let mut covered = 0usize;
            let mut total_len = 0.0;
            for o in &per_method[mi] {
                let (c, len) = o.interval.expect("interval method outcome");
                covered += c as usize;
                total_len += len;
            }
            (Some(covered as f64 / reps as f64), Some(total_len / reps as f64))
        } else {
            (None, None)
        };
        rows.push(MethodRow {
            method: *m,
            bias,
            mse,
            coverage,
            mean_length,
            replications: reps,
        });
    }

    Ok(ExperimentReport {
        config: config.clone(),
        theta0,
        rows,
        wall_seconds: started.elapsed().as_secs_f64(),
    })
}

/// Run every requested method on one generated dataset.
fn replicate(
    config: &ExperimentConfig,
    data: &Dataset,
    tau_n: f64,
    r: u64,
) -> Result<Vec<ReplicateOutcome>> {
    let scenario = config.dgp.scenario;
    let residualized = scenario == Scenario::InvalidIv;

    // Working data for the extreme-quantile family: residualize on the
    // candidate instruments when they double as measured confounders.
    let needs_excel = config.methods.iter().any(|m| {
        matches!(m, Method::Excel | Method::ExcelBootstrapCi | Method::ExcelAdaptiveTau | Method::IvRepair)
    });
    let working: Option<Dataset> = if needs_excel {
        if residualized {
            let z = data.z.as_ref().ok_or(Error::MissingInstruments)?;
            let (xi_y, xi_x) = residualize_columns(&data.y, &data.x, z)?;
            Some(Dataset::new(xi_y, xi_x, None)?)
        } else {
            Some(data.clone())
        }
    } else {
        None
    };
    let tail = match (&working, config.tail) {
        (_, Some(t)) => Some(t),
        (Some(w), None) => {
            let x0 = w.x_means();
            Some(select_tail(w, tau_n, &BasisSpec::identity_linear(w.d()), &x0, 10)?.side)
        }
        (None, None) => None,
    };

    let mut out = Vec::with_capacity(config.methods.len());
    for (mi, m) in config.methods.iter().enumerate() {
        let outcome = match m {
            Method::Ols => {
                // Candidate instruments enter as measured covariates when
                // present, matching how the baseline is run in that setting.
                let raw = if residualized {
                    let z = data.z.as_ref().ok_or(Error::MissingInstruments)?;
                    let joined = nalgebra::DMatrix::from_fn(data.n(), 1 + z.ncols(), |i, j| {
                        if j == 0 {
                            data.x[(i, 0)]
                        } else {
                            z[(i, j - 1)]
                        }
                    });
                    DesignMatrix::with_intercept(&joined)?
                } else {
                    DesignMatrix::with_intercept(&data.x)?
                };
                let beta = fit_ols(&raw, &data.y)?;
                ReplicateOutcome { estimate: beta[1], interval: None }
            }
            Method::TslsAll => {
                let z = data.z.as_ref().ok_or(Error::MissingInstruments)?;
                let exposure: Vec<f64> = data.x.column(0).iter().copied().collect();
                let fit = fit_tsls_multi(&data.y, &exposure, z, &nalgebra::DMatrix::zeros(data.n(), 0))?;
                ReplicateOutcome { estimate: fit.theta, interval: None }
            }
            Method::TslsOracle => {
                let z = data.z.as_ref().ok_or(Error::MissingInstruments)?;
                let exposure: Vec<f64> = data.x.column(0).iter().copied().collect();
                let instrument: Vec<f64> = z.column(0).iter().copied().collect();
                let controls = crate::excel::select_columns(z, &[1, 2]);
                let fit = fit_tsls(&data.y, &exposure, &instrument, &controls)?;
                ReplicateOutcome { estimate: fit.theta, interval: None }
            }
            Method::Excel => {
                let w = working.as_ref().expect("working data");
                let est = excel_linear(w, tau_n, tail.expect("tail"))?;
                ReplicateOutcome { estimate: est.theta[0], interval: None }
            }
            Method::ExcelBootstrapCi => {
                let side = tail.expect("tail");
                let seed = derive(config.seed, &[purpose::EXPERIMENT, r, 100 + mi as u64]);
                let pre = residualized.then_some(PreTransform::ResidualizeOnInstruments);
                let boot = bootstrap_excel(
                    data,
                    tau_n,
                    side,
                    config.alpha,
                    config.bootstrap_b,
                    seed,
                    pre,
                )?;
                let ci = to_confidence_interval(&boot, 0)?;
                ReplicateOutcome {
                    estimate: boot.center[0],
                    interval: Some((ci.covers(theta_target(config)), ci.total_length())),
                }
            }
            Method::IvRepair => {
                let seed = derive(config.seed, &[purpose::EXPERIMENT, r, 100 + mi as u64]);
                let cfg = IvRepairConfig {
                    alpha: config.alpha,
                    lambda_grid: crate::iv_repair::default_lambda_grid(),
                    tau_n: Some(tau_n),
                    b: config.bootstrap_b,
                    seed,
                    tail: Some(tail.expect("tail")),
                };
                let res = union_confidence_set(data, &cfg)?;
                ReplicateOutcome {
                    estimate: res.excel_estimate,
                    interval: Some((
                        res.final_set.covers(theta_target(config)),
                        res.final_set.total_length(),
                    )),
                }
            }
            Method::ExcelAdaptiveTau => {
                let w = working.as_ref().expect("working data");
                let side = tail.expect("tail");
                let candidates = config
                    .adaptive_candidates
                    .clone()
                    .unwrap_or_else(|| default_adaptive_candidates(config.dgp.n));
                let seed = derive(config.seed, &[purpose::EXPERIMENT, r, 100 + mi as u64]);
                let sel = select_tau(
                    w,
                    &candidates,
                    config.adaptive_b,
                    &[1.0],
                    &[0.0],
                    &BasisSpec::identity_linear(1),
                    side,
                    seed,
                )?;
                let est = excel_linear(w, sel.chosen, side)?;
                ReplicateOutcome { estimate: est.theta[0], interval: None }
            }
        };
        out.push(outcome);
    }
    Ok(out)
}

fn theta_target(config: &ExperimentConfig) -> f64 {
    config
        .dgp
        .overrides
        .get("theta0")
        .copied()
        .unwrap_or(match config.dgp.scenario {
            Scenario::MixtureIllustration => 0.5,
            _ => 0.4,
        })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn incompatible_method_is_rejected() {
        let dgp = DgpConfig::new(Scenario::NoIvLinear, 100, 1, 1);
        let cfg = ExperimentConfig::new(dgp, vec![Method::TslsAll], 2, 1);
        assert!(matches!(
            run_experiment(&cfg),
            Err(Error::IncompatibleMethodScenario { .. })
        ));
    }

    #[test]
    fn report_is_deterministic() {
        let dgp = DgpConfig::new(Scenario::NoIvLinear, 300, 1, 4);
        let mut cfg = ExperimentConfig::new(dgp, vec![Method::Ols, Method::Excel], 4, 9);
        cfg.tau = Some(0.05);
        let a = run_experiment(&cfg).unwrap();
        let b = run_experiment(&cfg).unwrap();
        assert_eq!(a.rows, b.rows);
        assert_eq!(a.theta0, 0.4);
    }
}
