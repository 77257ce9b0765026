//! Fit-quality criteria and comparison tables.

use serde::{Deserialize, Serialize};

use crate::error::{FdaError, Result};

fn check(actual: &[f64], fitted: &[f64]) -> Result<()> {
    if actual.len() != fitted.len() {
        return Err(FdaError::Shape(format!("{} actual values vs {} fitted", actual.len(), fitted.len())));
    }
    if actual.is_empty() {
        return Err(FdaError::Shape("metrics need at least one value".into()));
    }
    Ok(())
}

/// Mean of `fitted − actual`.
pub fn bias(actual: &[f64], fitted: &[f64]) -> Result<f64> {
    check(actual, fitted)?;
    Ok(fitted.iter().zip(actual).map(|(f, a)| f - a).sum::<f64>() / actual.len() as f64)
}

pub fn rmse(actual: &[f64], fitted: &[f64]) -> Result<f64> {
    check(actual, fitted)?;
    let mse = fitted.iter().zip(actual).map(|(f, a)| (f - a) * (f - a)).sum::<f64>() / actual.len() as f64;
    Ok(mse.sqrt())
}

/// `1 − SSE/SST` with SST taken about the mean of `actual`.
pub fn r2(actual: &[f64], fitted: &[f64]) -> Result<f64> {
    check(actual, fitted)?;
    let mean = actual.iter().sum::<f64>() / actual.len() as f64;
    let sst: f64 = actual.iter().map(|a| (a - mean) * (a - mean)).sum();
    if sst == 0.0 {
        return Err(FdaError::InvalidData("R² is undefined when the actual values have zero variance".into()));
    }
    let sse: f64 = fitted.iter().zip(actual).map(|(f, a)| (f - a) * (f - a)).sum();
    Ok(1.0 - sse / sst)
}

/// Spearman rank correlation (average ranks for ties).
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    check(a, b)?;
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in ra.iter().zip(&rb) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        return Err(FdaError::InvalidData("rank correlation of a constant sequence".into()));
    }
    Ok(cov / (va * vb).sqrt())
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = rank;
        }
        i = j + 1;
    }
    out
}

/// One row of a model comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriteriaRow {
    pub model_name: String,
    pub bias: f64,
    pub rmse: f64,
    pub cv: f64,
    pub r2: f64,
}

/// Input to [`criteria_table`]: a model's in-sample fit and its CV score.
pub struct ModelFit<'a> {
    pub name: &'a str,
    pub actual: &'a [f64],
    pub fitted: &'a [f64],
    pub cv_score: f64,
}

/// One [`CriteriaRow`] per model, in input order.
pub fn criteria_table(rows: &[ModelFit<'_>]) -> Result<Vec<CriteriaRow>> {
    rows.iter()
        .map(|m| {
            Ok(CriteriaRow {
                model_name: m.name.to_string(),
                bias: bias(m.actual, m.fitted)?,
                rmse: rmse(m.actual, m.fitted)?,
                cv: m.cv_score,
                r2: r2(m.actual, m.fitted)?,
            })
        })
        .collect()
}
