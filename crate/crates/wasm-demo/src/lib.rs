//! Browser bindings for three small interactive views. Every export returns a
//! JSON string; errors come back as `{"error": "..."}`.

use funflow_core::flm_full::{beta_surface, fit_flmf, FlmfBases, Penalties};
use funflow_core::flm_scalar::{beta_confidence_band, fit_flms};
use funflow_core::smoothing::{smooth, Smoother};
use funflow_core::synth::{beta_star, beta_star_surface, generate, Response, Scenario};
use funflow_core::{BasisSystem, DiffOperator, DiscreteSeries, Interval};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;
use wasm_bindgen::prelude::*;

const SEASON: (f64, f64) = (0.0, 153.0);
const RESPONSE: (f64, f64) = (30.0, 153.0);

#[derive(Serialize)]
pub struct SmoothView {
    pub times: Vec<f64>,
    pub observed: Vec<f64>,
    pub truth: Vec<f64>,
    pub fitted: Vec<f64>,
    pub effective_df: f64,
    pub rmse_vs_truth: f64,
}

#[derive(Serialize)]
pub struct BetaView {
    pub times: Vec<f64>,
    pub lower: Vec<f64>,
    pub estimate: Vec<f64>,
    pub upper: Vec<f64>,
    pub truth: Vec<f64>,
    pub r2: f64,
    pub loocv: f64,
}

#[derive(Serialize)]
pub struct SurfaceView {
    pub s: Vec<f64>,
    pub t: Vec<f64>,
    /// Row-major, `s.len() × t.len()`.
    pub estimate: Vec<f64>,
    pub truth: Vec<f64>,
}

fn interval(d: (f64, f64)) -> funflow_core::Result<Interval> {
    Interval::new(d.0, d.1)
}

fn to_json<T: Serialize>(r: funflow_core::Result<T>) -> String {
    match r {
        Ok(v) => serde_json::to_string(&v).unwrap_or_else(|e| serde_json::json!({ "error": e.to_string() }).to_string()),
        Err(e) => serde_json::json!({ "error": e.to_string() }).to_string(),
    }
}

fn rmse(a: &[f64], b: &[f64]) -> f64 {
    (a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64).sqrt()
}

/// One noisy daily season smoothed with a cubic B-spline basis.
pub fn smooth_view(seed: u64, noise: f64, log10_lambda: f64, nbasis: usize) -> funflow_core::Result<SmoothView> {
    let dom = interval(SEASON)?;
    let times = dom.daily_grid();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let phase = rng.random_range(0.0..std::f64::consts::TAU);
    let peak = rng.random_range(40.0..110.0);
    let truth: Vec<f64> = times
        .iter()
        .map(|&t| 2.0 + (t / 25.0 + phase).sin() + 3.0 * (-(t - peak).powi(2) / 200.0).exp())
        .collect();
    let dist = Normal::new(0.0, noise.max(0.0)).map_err(|e| funflow_core::FdaError::InvalidData(e.to_string()))?;
    let observed: Vec<f64> = truth.iter().map(|v| v + dist.sample(&mut rng)).collect();
    let basis = BasisSystem::bspline(dom, nbasis, 4)?;
    let series = DiscreteSeries::new("demo", times.clone(), observed.clone())?;
    let (coefs, report) = Smoother::new(&basis, 10f64.powf(log10_lambda), DiffOperator::SECOND)?.fit(&series)?;
    let fitted = (basis.eval(&times, 0)? * coefs).iter().copied().collect::<Vec<f64>>();
    Ok(SmoothView { rmse_vs_truth: rmse(&fitted, &truth), times, observed, truth, fitted, effective_df: report.effective_df })
}

/// Scalar-response fit on simulated years with a 95% band for the coefficient function.
pub fn beta_view(seed: u64, n: usize, log10_lambda: f64) -> funflow_core::Result<BetaView> {
    let data = generate(Scenario::FlmsVaryingBeta, seed, n)?;
    let Response::Scalar(y) = &data.response else {
        unreachable!("scalar scenario");
    };
    let dom = interval(SEASON)?;
    let (x, _) = smooth(&data.covariate, &BasisSystem::bspline(dom, 41, 4)?, 10.0, DiffOperator::SECOND)?;
    let bb = BasisSystem::bspline(dom, 15, 4)?;
    let (model, diag) = fit_flms(&x, y, &bb, 10f64.powf(log10_lambda), DiffOperator::SECOND)?;
    let times = dom.linspace(154);
    let band = beta_confidence_band(&model, &times, 0.95)?;
    Ok(BetaView {
        truth: times.iter().map(|&t| beta_star(t)).collect(),
        times,
        lower: band.lower,
        estimate: band.center,
        upper: band.upper,
        r2: diag.r2,
        loocv: diag.loocv,
    })
}

/// Function-on-function fit; returns the coefficient surface on a coarse grid.
pub fn surface_view(seed: u64, n: usize, log10_lambda_s: f64, log10_lambda_t: f64) -> funflow_core::Result<SurfaceView> {
    let data = generate(Scenario::FlmfBump, seed, n)?;
    let Response::Curves(curves) = &data.response else {
        unreachable!("curve scenario");
    };
    let (sd, td) = (interval(SEASON)?, interval(RESPONSE)?);
    let (x, _) = smooth(&data.covariate, &BasisSystem::bspline(sd, 41, 4)?, 10.0, DiffOperator::SECOND)?;
    let (y, _) = smooth(curves, &BasisSystem::bspline(td, 31, 4)?, 10.0, DiffOperator::SECOND)?;
    let bases = FlmfBases {
        s: BasisSystem::bspline(sd, 13, 4)?,
        t: BasisSystem::bspline(td, 11, 4)?,
        alpha: BasisSystem::bspline(td, 11, 4)?,
    };
    let lambdas = [1.0, 10f64.powf(log10_lambda_s), 10f64.powf(log10_lambda_t)];
    let model = fit_flmf(&x, &y, &bases, Penalties::new(lambdas))?;
    let (s, t) = (sd.linspace(52), td.linspace(42));
    let surf = beta_surface(&model, &s, &t)?;
    let mut estimate = Vec::with_capacity(s.len() * t.len());
    let mut truth = Vec::with_capacity(s.len() * t.len());
    for (i, &si) in s.iter().enumerate() {
        for (j, &tj) in t.iter().enumerate() {
            estimate.push(surf[(i, j)]);
            truth.push(beta_star_surface(si, tj));
        }
    }
    Ok(SurfaceView { s, t, estimate, truth })
}

#[wasm_bindgen]
pub fn smooth_demo(seed: u32, noise: f64, log10_lambda: f64, nbasis: u32) -> String {
    to_json(smooth_view(seed.into(), noise, log10_lambda, nbasis as usize))
}

#[wasm_bindgen]
pub fn flms_demo(seed: u32, n: u32, log10_lambda: f64) -> String {
    to_json(beta_view(seed.into(), n as usize, log10_lambda))
}

#[wasm_bindgen]
pub fn flmf_surface(seed: u32, n: u32, log10_lambda_s: f64, log10_lambda_t: f64) -> String {
    to_json(surface_view(seed.into(), n as usize, log10_lambda_s, log10_lambda_t))
}
