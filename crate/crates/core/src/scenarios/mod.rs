//! Data-generating processes for the simulation studies, plus closed-form
//! ground truth where it exists.

mod experiment;

pub use experiment::{run_experiment, ExperimentConfig, ExperimentReport, Method, MethodRow};

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::rng::{purpose, stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    /// Linear outcome with a binomial confounder driving endogeneity, no
    /// instruments.
    NoIvLinear,
    /// Same, with a heavy-tailed outcome noise (scaled t with 5 df) that
    /// breaks the light-tail requirement.
    NoIvLinearHeavyTail,
    /// Three Bernoulli candidate instruments, two of them with direct
    /// outcome effects (invalid).
    InvalidIv,
    /// Binary latent mixture with uniform tail noise; the conditional
    /// quantile has a closed form usable as an oracle.
    MixtureIllustration,
    /// Unmeasured-confounder illustration (same law as `NoIvLinear`).
    ConfounderExample,
    /// Outcome-dependent sampling with selection probability bounded away
    /// from zero.
    SelectionExample,
    /// Classical measurement error in the exposure.
    MeasurementErrorExample,
}

impl Scenario {
    pub fn tag(&self) -> &'static str {
        match self {
            Scenario::NoIvLinear => "no_iv_linear",
            Scenario::NoIvLinearHeavyTail => "no_iv_linear_heavy_tail",
            Scenario::InvalidIv => "invalid_iv",
            Scenario::MixtureIllustration => "mixture_illustration",
            Scenario::ConfounderExample => "confounder_example",
            Scenario::SelectionExample => "selection_example",
            Scenario::MeasurementErrorExample => "measurement_error_example",
        }
    }

    fn allowed_overrides(&self) -> &'static [&'static str] {
        match self {
            Scenario::NoIvLinear | Scenario::ConfounderExample => {
                &["theta0", "gamma_u_exponent", "noise_sd_y"]
            }
            Scenario::NoIvLinearHeavyTail => &["theta0", "gamma_u_exponent"],
            Scenario::InvalidIv => {
                &["theta0", "gamma_u_exponent", "noise_sd_y", "z1_direct_effect"]
            }
            Scenario::MixtureIllustration => &[],
            Scenario::SelectionExample => &["theta0", "selection_floor"],
            Scenario::MeasurementErrorExample => &["theta0", "measurement_sd"],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpConfig {
    pub scenario: Scenario,
    pub n: usize,
    /// Confounder dimension (exposure dimension for the measurement-error
    /// scenario); ignored where not applicable.
    #[serde(default = "default_d_u")]
    pub d_u: usize,
    pub seed: u64,
    #[serde(default)]
    pub overrides: BTreeMap<String, f64>,
}

fn default_d_u() -> usize {
    1
}

impl DgpConfig {
    pub fn new(scenario: Scenario, n: usize, d_u: usize, seed: u64) -> Self {
        DgpConfig { scenario, n, d_u, seed, overrides: BTreeMap::new() }
    }

    pub fn with_override(mut self, key: &str, value: f64) -> Self {
        self.overrides.insert(key.to_string(), value);
        self
    }

    fn get(&self, key: &str, default: f64) -> f64 {
        self.overrides.get(key).copied().unwrap_or(default)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::InvalidArgument("n must be >= 1".into()));
        }
        if self.d_u == 0 {
            return Err(Error::InvalidArgument("d_u must be >= 1".into()));
        }
        let allowed = self.scenario.allowed_overrides();
        for key in self.overrides.keys() {
            if !allowed.contains(&key.as_str()) {
                return Err(Error::UnknownOverride(key.clone()));
            }
        }
        Ok(())
    }
}

/// Ground truth attached to a generated dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    /// Causal effect coefficients (slope of the structural function).
    pub theta0: Vec<f64>,
    /// Noiseless structural component f0(X_i) per row.
    pub structural: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generated {
    pub data: Dataset,
    pub truth: GroundTruth,
}

fn std_normal(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller keeps the draw count per observation fixed and portable.
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

fn binomial_2_03(rng: &mut ChaCha8Rng) -> f64 {
    let a = rng.gen_bool(0.3) as u8;
    let b = rng.gen_bool(0.3) as u8;
    (a + b) as f64
}

/// Scaled Student t with 5 degrees of freedom, `t(5)/2`, built from the
/// normal-over-chi ratio.
fn half_t5(rng: &mut ChaCha8Rng) -> f64 {
    let z = std_normal(rng);
    let chi2: f64 = (0..5).map(|_| std_normal(rng).powi(2)).sum();
    0.5 * z / (chi2 / 5.0).sqrt()
}

/// Mixture weight of the upper uniform component conditional on X = x.
pub fn mixture_pi(x: f64) -> f64 {
    let phi = |t: f64| (-0.5 * t * t).exp();
    let a = phi((x - 1.0) / 3.0);
    let b = phi((x + 1.0) / 3.0);
    a / (a + b)
}

/// Closed-form conditional upper quantile of the mixture outcome:
/// `q_Y(x; tau) = x/2 + 6 - 6 tau / pi_x`, valid for small tau.
pub fn mixture_conditional_quantile(x: f64, tau: f64) -> f64 {
    0.5 * x + 6.0 - 6.0 * tau / mixture_pi(x)
}

/// Generate a dataset; deterministic given the config.
pub fn generate(config: &DgpConfig) -> Result<Generated> {
    config.validate()?;
    let n = config.n;
    let mut rng = stream(config.seed, &[purpose::GENERATE, config.scenario.tag().len() as u64]);
    let theta0 = config.get("theta0", match config.scenario {
        Scenario::MixtureIllustration => 0.5,
        _ => 0.4,
    });

    match config.scenario {
        Scenario::NoIvLinear | Scenario::ConfounderExample | Scenario::NoIvLinearHeavyTail => {
            let heavy = config.scenario == Scenario::NoIvLinearHeavyTail;
            let gamma = (config.d_u as f64).powf(config.get("gamma_u_exponent", 0.5));
            let sd_y = config.get("noise_sd_y", 0.5);
            let mut x = Vec::with_capacity(n);
            let mut y = Vec::with_capacity(n);
            let mut structural = Vec::with_capacity(n);
            for _ in 0..n {
                let t: f64 = (0..config.d_u).map(|_| binomial_2_03(&mut rng)).sum::<f64>() * gamma;
                let xi = 0.2 * t + std_normal(&mut rng);
                let eps_y = if heavy { half_t5(&mut rng) } else { sd_y * std_normal(&mut rng) };
                x.push(xi);
                structural.push(theta0 * xi);
                y.push(theta0 * xi + 4.0 * t + eps_y);
            }
            Ok(Generated {
                data: Dataset::from_columns(y, x)?,
                truth: GroundTruth { theta0: vec![theta0], structural },
            })
        }
        Scenario::InvalidIv => {
            let gamma = (config.d_u as f64).powf(config.get("gamma_u_exponent", 0.5));
            let sd_y = config.get("noise_sd_y", 0.5);
            let z1_direct = config.get("z1_direct_effect", 0.0);
            let mut x = Vec::with_capacity(n);
            let mut y = Vec::with_capacity(n);
            let mut structural = Vec::with_capacity(n);
            let mut z = DMatrix::zeros(n, 3);
            for i in 0..n {
                let z1 = rng.gen_bool(0.5) as u8 as f64;
                let z2 = rng.gen_bool(0.5) as u8 as f64;
                let z3 = rng.gen_bool(0.5) as u8 as f64;
                let t: f64 = (0..config.d_u).map(|_| binomial_2_03(&mut rng)).sum::<f64>() * gamma;
                let xi = 2.0 * (z1 + z2 + z3) + 0.2 * t + std_normal(&mut rng);
                let eps_y = sd_y * std_normal(&mut rng);
                z[(i, 0)] = z1;
                z[(i, 1)] = z2;
                z[(i, 2)] = z3;
                x.push(xi);
                structural.push(theta0 * xi);
                y.push(z1_direct * z1 + 2.0 * z2 + 2.0 * z3 + theta0 * xi + 4.0 * t + eps_y);
            }
            let data = Dataset::new(y, DMatrix::from_vec(n, 1, x), Some(z))?;
            Ok(Generated { data, truth: GroundTruth { theta0: vec![theta0], structural } })
        }
        Scenario::MixtureIllustration => {
            let mut x = Vec::with_capacity(n);
            let mut y = Vec::with_capacity(n);
            let mut structural = Vec::with_capacity(n);
            for _ in 0..n {
                let u = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                let xi = u + 3.0 * std_normal(&mut rng);
                let eps = 3.0 * u + rng.gen_range(-3.0..3.0);
                x.push(xi);
                structural.push(0.5 * xi);
                y.push(0.5 * xi + eps);
            }
            Ok(Generated {
                data: Dataset::from_columns(y, x)?,
                truth: GroundTruth { theta0: vec![0.5], structural },
            })
        }
        Scenario::SelectionExample => {
            let floor = config.get("selection_floor", 0.1);
            if !(0.0 < floor && floor < 0.5) {
                return Err(Error::InvalidArgument(
                    "selection_floor must lie in (0, 0.5)".into(),
                ));
            }
            let mut x = Vec::with_capacity(n);
            let mut y = Vec::with_capacity(n);
            let mut structural = Vec::with_capacity(n);
            while x.len() < n {
                let xs = std_normal(&mut rng);
                let ys = theta0 * xs + std_normal(&mut rng);
                let logistic = 1.0 / (1.0 + (-(xs + ys)).exp());
                let p = (floor + (1.0 - 2.0 * floor) * logistic).clamp(floor, 1.0);
                if rng.gen_range(0.0..1.0) < p {
                    x.push(xs);
                    structural.push(theta0 * xs);
                    y.push(ys);
                }
            }
            Ok(Generated {
                data: Dataset::from_columns(y, x)?,
                truth: GroundTruth { theta0: vec![theta0], structural },
            })
        }
        Scenario::MeasurementErrorExample => {
            let d = config.d_u;
            let sd_u = config.get("measurement_sd", 0.5);
            let mut x = DMatrix::zeros(n, d);
            let mut y = Vec::with_capacity(n);
            let mut structural = Vec::with_capacity(n);
            for i in 0..n {
                let mut wdot = 0.0;
                let mut xdot = 0.0;
                for j in 0..d {
                    let w: f64 = rng.gen_range(0.0..1.0);
                    let xj = w + sd_u * std_normal(&mut rng);
                    x[(i, j)] = xj;
                    wdot += w;
                    xdot += xj;
                }
                let v = std_normal(&mut rng);
                structural.push(theta0 * xdot);
                y.push(theta0 * wdot + v);
            }
            let data = Dataset::new(y, x, None)?;
            Ok(Generated {
                data,
                truth: GroundTruth { theta0: vec![theta0; d], structural },
            })
        }
    }
}
