//! Smoothing-parameter grids and selection rules.

use serde::{Deserialize, Serialize};

use crate::error::{FdaError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SelectionRule {
    /// Grid point with the smallest score.
    Minimum,
    /// Smallest λ whose score lies within one standard error of the minimum.
    LowestWithinOneSE,
}

/// Cross-validation scores over a λ grid and the selected value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CVResult {
    pub grid: Vec<f64>,
    pub scores: Vec<f64>,
    pub ses: Vec<f64>,
    pub chosen: f64,
    pub rule: SelectionRule,
}

impl CVResult {
    /// Applies `rule` to precomputed scores.
    pub fn from_scores(grid: Vec<f64>, scores: Vec<f64>, ses: Vec<f64>, rule: SelectionRule) -> Result<Self> {
        if grid.is_empty() || grid.len() != scores.len() || grid.len() != ses.len() {
            return Err(FdaError::InvalidGrid(format!(
                "grid, scores and ses must be nonempty and equally long ({}, {}, {})",
                grid.len(),
                scores.len(),
                ses.len()
            )));
        }
        let best = argmin(&scores);
        let chosen_index = match rule {
            SelectionRule::Minimum => best,
            SelectionRule::LowestWithinOneSE => {
                let threshold = scores[best] + ses[best];
                // Smallest λ: the grid is increasing, so the first qualifying index.
                (0..grid.len()).find(|&i| scores[i] <= threshold).unwrap_or(best)
            }
        };
        Ok(CVResult { chosen: grid[chosen_index], grid, scores, ses, rule })
    }

    pub fn chosen_index(&self) -> usize {
        self.grid.iter().position(|&g| g == self.chosen).expect("chosen lies in the grid")
    }
}

/// Index of the smallest finite score; ties resolve to the lowest index.
pub(crate) fn argmin(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s < scores[best] || scores[best].is_nan() {
            best = i;
        }
    }
    best
}

/// Checks that a λ grid is nonempty, nonnegative and strictly increasing.
pub fn validate_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(FdaError::InvalidGrid("λ grid is empty".into()));
    }
    if grid.iter().any(|&l| !(l >= 0.0) || !l.is_finite()) {
        return Err(FdaError::InvalidGrid("λ values must be finite and nonnegative".into()));
    }
    if grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(FdaError::InvalidGrid("λ grid must be strictly increasing".into()));
    }
    Ok(())
}

/// `10^from, 10^(from+step), ...` up to and including `10^to`.
pub fn log10_grid(from: f64, to: f64, step: f64) -> Vec<f64> {
    assert!(step > 0.0 && to >= from, "invalid log grid");
    let n = ((to - from) / step + 1e-9).floor() as usize;
    (0..=n).map(|i| 10f64.powf(from + step * i as f64)).collect()
}

/// Half-decade grid from 10⁻⁴ to 10⁶.
pub fn default_grid() -> Vec<f64> {
    log10_grid(-4.0, 6.0, 0.5)
}

/// Sample mean and standard error (sample sd / √n) of fold scores.
pub fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_se_rule_excludes_first_point() {
        let cv = CVResult::from_scores(
            vec![1.0, 10.0, 100.0],
            vec![0.52, 0.45, 0.46],
            vec![0.05; 3],
            SelectionRule::LowestWithinOneSE,
        )
        .unwrap();
        assert_eq!(cv.chosen, 10.0);
        let cv = CVResult::from_scores(cv.grid, cv.scores, cv.ses, SelectionRule::Minimum).unwrap();
        assert_eq!(cv.chosen, 10.0);
    }

    #[test]
    fn one_se_rule_prefers_smallest_lambda_within_band() {
        let cv = CVResult::from_scores(
            vec![1.0, 10.0, 100.0],
            vec![0.40, 0.45, 0.38],
            vec![0.05; 3],
            SelectionRule::LowestWithinOneSE,
        )
        .unwrap();
        assert_eq!(cv.chosen, 1.0);
    }

    #[test]
    fn single_point_grid() {
        for rule in [SelectionRule::Minimum, SelectionRule::LowestWithinOneSE] {
            let cv = CVResult::from_scores(vec![3.0], vec![1.0], vec![0.1], rule).unwrap();
            assert_eq!(cv.chosen, 3.0);
        }
    }

    #[test]
    fn default_grid_is_half_decades() {
        let g = default_grid();
        assert_eq!(g.len(), 21);
        assert!((g[0] - 1e-4).abs() < 1e-18);
        assert!((g[20] - 1e6).abs() < 1e-6);
        validate_grid(&g).unwrap();
    }

    #[test]
    fn grid_validation() {
        assert!(validate_grid(&[]).is_err());
        assert!(validate_grid(&[1.0, 1.0]).is_err());
        assert!(validate_grid(&[-1.0]).is_err());
    }

    #[test]
    fn standard_error() {
        let (m, se) = mean_and_se(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((se - (5.0f64 / 3.0 / 4.0).sqrt()).abs() < 1e-15);
    }
}
