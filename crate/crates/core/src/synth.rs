//! Seeded synthetic scenarios with known coefficient functions.

use std::f64::consts::PI;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::basis::Interval;
use crate::error::{FdaError, Result};
use crate::smoothing::DiscreteSeries;

pub const COVARIATE_DOMAIN: (f64, f64) = (0.0, 153.0);
pub const RESPONSE_DOMAIN: (f64, f64) = (30.0, 153.0);
pub const FIRST_YEAR: i32 = 1981;

const BUMP_HEIGHT: f64 = 0.05;
const BUMP_DELAY: f64 = 5.0;
const BUMP_WIDTH: f64 = 8.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scenario {
    FlmsVaryingBeta,
    FlmfBump,
    Null,
}

impl Scenario {
    pub fn name(self) -> &'static str {
        match self {
            Scenario::FlmsVaryingBeta => "flms-varying-beta",
            Scenario::FlmfBump => "flmf-bump",
            Scenario::Null => "null",
        }
    }
}

impl FromStr for Scenario {
    type Err = FdaError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "flms-varying-beta" => Ok(Scenario::FlmsVaryingBeta),
            "flmf-bump" => Ok(Scenario::FlmfBump),
            "null" => Ok(Scenario::Null),
            other => Err(FdaError::UnknownScenario(other.to_string())),
        }
    }
}

/// Coefficient function of the scalar scenario.
pub fn beta_star(t: f64) -> f64 {
    let (lo, hi) = COVARIATE_DOMAIN;
    (2.0 * PI * (t - lo) / (hi - lo)).sin()
}

/// Diagonal bump of the functional scenario.
pub fn beta_star_surface(s: f64, t: f64) -> f64 {
    let d = t - s - BUMP_DELAY;
    BUMP_HEIGHT * (-d * d / (2.0 * BUMP_WIDTH * BUMP_WIDTH)).exp()
}

/// Intercept curve of the functional scenario.
pub fn alpha_star(t: f64) -> f64 {
    3.0 + 2.0 * (-(t - 60.0).powi(2) / (2.0 * 20.0f64.powi(2))).exp()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Response {
    Scalar(Vec<f64>),
    Curves(Vec<DiscreteSeries>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum GroundTruth {
    Curve { times: Vec<f64>, values: Vec<f64> },
    /// `values[(i, j)]` is β*(s_i, t_j).
    Surface { s: Vec<f64>, t: Vec<f64>, values: DMatrix<f64> },
}

impl GroundTruth {
    pub fn is_zero(&self) -> bool {
        match self {
            GroundTruth::Curve { values, .. } => values.iter().all(|&v| v == 0.0),
            GroundTruth::Surface { values, .. } => values.iter().all(|&v| v == 0.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticData {
    pub scenario: Scenario,
    pub labels: Vec<String>,
    pub covariate: Vec<DiscreteSeries>,
    pub response: Response,
    pub truth: GroundTruth,
}

fn daily(domain: (f64, f64)) -> Vec<f64> {
    Interval::new(domain.0, domain.1).expect("constant domain").daily_grid()
}

/// Smooth random curve from six harmonics with decaying amplitudes.
fn smooth_curve(rng: &mut ChaCha8Rng, times: &[f64]) -> Vec<f64> {
    let std = Normal::new(0.0, 1.0).expect("unit normal");
    let (lo, hi) = COVARIATE_DOMAIN;
    let coefs: Vec<(f64, f64)> =
        (0..6).map(|k| (std.sample(rng) / (k as f64 + 1.0), std.sample(rng) / (k as f64 + 1.0))).collect();
    times
        .iter()
        .map(|&t| {
            let x = 2.0 * PI * (t - lo) / (hi - lo);
            coefs.iter().enumerate().map(|(k, (a, b))| a * (k as f64 * x).cos() + b * (k as f64 * x).sin()).sum()
        })
        .collect()
}

fn trapezoid(times: &[f64], f: impl Fn(usize) -> f64) -> f64 {
    (1..times.len()).map(|i| 0.5 * (times[i] - times[i - 1]) * (f(i) + f(i - 1))).sum()
}

fn variance(v: &[f64]) -> f64 {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64
}

/// Generates `n` labelled years of covariate and response data.
pub fn generate(scenario: Scenario, seed: u64, n: usize) -> Result<SyntheticData> {
    if n < 4 {
        return Err(FdaError::InsufficientData(format!("synthetic scenarios need n ≥ 4, got {n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels: Vec<String> = (0..n).map(|i| (FIRST_YEAR + i as i32).to_string()).collect();
    let xt = daily(COVARIATE_DOMAIN);
    let daily_noise = Normal::new(0.0, 0.2).expect("valid sd");
    let mut signals = Vec::with_capacity(n);
    let mut covariate = Vec::with_capacity(n);
    for label in &labels {
        let clean = smooth_curve(&mut rng, &xt);
        let observed: Vec<f64> = clean.iter().map(|v| v + daily_noise.sample(&mut rng)).collect();
        covariate.push(DiscreteSeries::new(label.clone(), xt.clone(), observed)?);
        signals.push(clean);
    }

    let (response, truth) = match scenario {
        Scenario::FlmsVaryingBeta | Scenario::Null => {
            let beta: Vec<f64> = if scenario == Scenario::Null { vec![0.0; xt.len()] } else { xt.iter().map(|&t| beta_star(t)).collect() };
            let signal: Vec<f64> = signals.iter().map(|x| 1.0 + trapezoid(&xt, |i| beta[i] * x[i])).collect();
            let sd = match scenario {
                Scenario::Null => 1.0,
                _ => (variance(&signal) / 10.0).sqrt(),
            };
            let noise = Normal::new(0.0, sd).map_err(|e| FdaError::InvalidData(e.to_string()))?;
            let y = signal.iter().map(|s| s + noise.sample(&mut rng)).collect();
            (Response::Scalar(y), GroundTruth::Curve { times: xt.clone(), values: beta })
        }
        Scenario::FlmfBump => {
            let yt = daily(RESPONSE_DOMAIN);
            let surface = DMatrix::from_fn(xt.len(), yt.len(), |i, j| beta_star_surface(xt[i], yt[j]));
            let noise = Normal::new(0.0, 0.1).expect("valid sd");
            let mut curves = Vec::with_capacity(n);
            for (label, x) in labels.iter().zip(&signals) {
                let values = yt
                    .iter()
                    .enumerate()
                    .map(|(j, &t)| alpha_star(t) + trapezoid(&xt, |i| surface[(i, j)] * x[i]) + noise.sample(&mut rng))
                    .collect();
                curves.push(DiscreteSeries::new(label.clone(), yt.clone(), values)?);
            }
            (Response::Curves(curves), GroundTruth::Surface { s: xt.clone(), t: yt, values: surface })
        }
    };
    Ok(SyntheticData { scenario, labels, covariate, response, truth })
}
