use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{FdaError, Result};
use crate::smoothing::DiscreteSeries;

/// Simple regression of a scalar response on the sum of each series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggLinearModel {
    pub slope: f64,
    pub intercept: f64,
    pub slope_se: f64,
    /// Two-sided t-test of a zero slope.
    pub p_value: f64,
}

impl AggLinearModel {
    pub fn predict(&self, total: f64) -> f64 {
        self.intercept + self.slope * total
    }

    pub fn predict_series(&self, series: &[DiscreteSeries]) -> Vec<f64> {
        series.iter().map(|s| self.predict(s.values().iter().sum())).collect()
    }
}

pub fn fit_agg_lm(x_daily: &[DiscreteSeries], y: &[f64]) -> Result<AggLinearModel> {
    if x_daily.len() != y.len() {
        return Err(FdaError::Shape(format!("{} series for {} responses", x_daily.len(), y.len())));
    }
    if y.len() < 2 {
        return Err(FdaError::InsufficientData("need at least two observations".into()));
    }
    let sums: Vec<f64> = x_daily.iter().map(|s| s.values().iter().sum()).collect();
    let n = y.len() as f64;
    let mx = sums.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = sums.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx <= 1e-14 * sums.iter().map(|x| x * x).sum::<f64>().max(f64::MIN_POSITIVE) {
        return Err(FdaError::DegenerateRegressor);
    }
    let sxy: f64 = sums.iter().zip(y).map(|(x, v)| (x - mx) * (v - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = sums.iter().zip(y).map(|(x, v)| (v - intercept - slope * x).powi(2)).sum();
    let dof = n - 2.0;
    let slope_se = if dof > 0.0 { (sse / dof / sxx).sqrt() } else { 0.0 };
    let p_value = if slope == 0.0 {
        1.0
    } else if slope_se == 0.0 {
        0.0
    } else {
        let t = (slope / slope_se).abs();
        let dist = StudentsT::new(0.0, 1.0, dof).expect("positive degrees of freedom");
        (2.0 * dist.sf(t)).clamp(0.0, 1.0)
    };
    Ok(AggLinearModel { slope, intercept, slope_se, p_value })
}

/// Mean squared leave-one-out residual, from the hat diagonal
/// `1/n + (x_i − x̄)²/Sxx` of simple regression.
pub fn agg_lm_loocv(x_daily: &[DiscreteSeries], y: &[f64]) -> Result<f64> {
    let m = fit_agg_lm(x_daily, y)?;
    if y.len() < 3 {
        return Err(FdaError::InsufficientData("leave-one-out needs at least three observations".into()));
    }
    let sums: Vec<f64> = x_daily.iter().map(|s| s.values().iter().sum()).collect();
    let n = y.len() as f64;
    let mx = sums.iter().sum::<f64>() / n;
    let sxx: f64 = sums.iter().map(|x| (x - mx) * (x - mx)).sum();
    let mut acc = 0.0;
    for (i, (&x, &v)) in sums.iter().zip(y).enumerate() {
        let h = 1.0 / n + (x - mx).powi(2) / sxx;
        if 1.0 - h <= 1e-12 {
            return Err(FdaError::DegenerateFold { index: i });
        }
        acc += ((v - m.predict(x)) / (1.0 - h)).powi(2);
    }
    Ok(acc / n)
}
