//! Penalized least-squares smoothing of discrete series into functional data.
//!
//! Each series is fitted by solving `(ΦᵀΦ + λR) c = Φᵀz`, where `Φ` holds the
//! basis values at the observation times and `R` is the roughness penalty.
//! The fit is a linear smoother, so the hat diagonal gives effective degrees
//! of freedom and leave-one-out residuals without refitting.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::basis::{penalty_matrix, penalty_null_space, BasisSystem, DiffOperator};
use crate::cv::{mean_and_se, validate_grid, CVResult, SelectionRule};
use crate::error::{FdaError, Result};
use crate::linalg::SpdFactor;
use crate::par_map;

/// Measurements `values[j]` taken at `times[j]` for one label (e.g. one year).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteSeries {
    pub label: String,
    times: Vec<f64>,
    values: Vec<f64>,
}

impl DiscreteSeries {
    pub fn new(label: impl Into<String>, times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        let label = label.into();
        if times.len() != values.len() {
            return Err(FdaError::InvalidData(format!(
                "series {label}: {} times but {} values",
                times.len(),
                values.len()
            )));
        }
        if times.len() < 2 {
            return Err(FdaError::InvalidData(format!("series {label}: need at least 2 observations")));
        }
        if times.iter().chain(&values).any(|v| !v.is_finite()) {
            return Err(FdaError::InvalidData(format!("series {label}: non-finite entry")));
        }
        if times.windows(2).any(|w| w[0] >= w[1]) {
            return Err(FdaError::InvalidData(format!("series {label}: times must be strictly increasing")));
        }
        Ok(DiscreteSeries { label, times, values })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Value observed at `t`, if any.
    pub fn value_at(&self, t: f64) -> Option<f64> {
        let i = self.times.partition_point(|&x| x < t - 1e-9);
        (i < self.times.len() && (self.times[i] - t).abs() <= 1e-9).then(|| self.values[i])
    }

    /// Keeps the observations whose time satisfies `keep`.
    pub fn filter_times(&self, keep: impl Fn(f64) -> bool) -> Result<Self> {
        let (t, v): (Vec<f64>, Vec<f64>) =
            self.times.iter().zip(&self.values).filter(|(t, _)| keep(**t)).map(|(t, v)| (*t, *v)).unzip();
        DiscreteSeries::new(self.label.clone(), t, v)
    }

    pub fn map_values(&self, f: impl Fn(f64) -> f64) -> Self {
        DiscreteSeries { label: self.label.clone(), times: self.times.clone(), values: self.values.iter().map(|&v| f(v)).collect() }
    }
}

/// `n` curves sharing one basis, stored as an `n × K` coefficient matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionalDataset {
    basis: BasisSystem,
    coefs: DMatrix<f64>,
    labels: Vec<String>,
}

impl FunctionalDataset {
    pub fn new(basis: BasisSystem, coefs: DMatrix<f64>, labels: Vec<String>) -> Result<Self> {
        if coefs.ncols() != basis.nbasis() {
            return Err(FdaError::Shape(format!(
                "coefficient matrix has {} columns but the basis has {} functions",
                coefs.ncols(),
                basis.nbasis()
            )));
        }
        if labels.len() != coefs.nrows() {
            return Err(FdaError::Shape(format!("{} labels for {} curves", labels.len(), coefs.nrows())));
        }
        let mut sorted = labels.clone();
        sorted.sort();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(FdaError::InvalidData("curve labels must be unique".into()));
        }
        Ok(FunctionalDataset { basis, coefs, labels })
    }

    pub fn basis(&self) -> &BasisSystem {
        &self.basis
    }

    pub fn coefs(&self) -> &DMatrix<f64> {
        &self.coefs
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.coefs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.coefs.nrows() == 0
    }

    /// Curve values: row `i` is curve `i` at every time in `times`.
    pub fn eval(&self, times: &[f64]) -> Result<DMatrix<f64>> {
        eval_curves(self, times)
    }

    /// Dataset restricted to the given row indices, in that order.
    pub fn select(&self, rows: &[usize]) -> FunctionalDataset {
        let coefs = self.coefs.select_rows(rows);
        let labels = rows.iter().map(|&i| self.labels[i].clone()).collect();
        FunctionalDataset { basis: self.basis.clone(), coefs, labels }
    }

    /// Dataset with row `i` removed.
    pub fn without(&self, i: usize) -> FunctionalDataset {
        let rows: Vec<usize> = (0..self.len()).filter(|&r| r != i).collect();
        self.select(&rows)
    }

    pub fn with_coefs(&self, coefs: DMatrix<f64>) -> Result<FunctionalDataset> {
        FunctionalDataset::new(self.basis.clone(), coefs, self.labels.clone())
    }
}

/// Per-series smoothing diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothReport {
    pub lambda: f64,
    /// Trace of the hat matrix.
    pub effective_df: f64,
    pub sse: f64,
    pub hat_diag: Vec<f64>,
}

/// `ln(max(v, epsilon))` for every value; negative inputs are rejected.
pub fn preprocess_log(values: &[f64], epsilon: f64) -> Result<Vec<f64>> {
    if !(epsilon > 0.0) {
        return Err(FdaError::InvalidData(format!("epsilon must be positive, got {epsilon}")));
    }
    values
        .iter()
        .map(|&v| {
            if v < 0.0 || v.is_nan() {
                Err(FdaError::InvalidData(format!("negative or missing value {v} cannot be log-transformed")))
            } else {
                Ok(v.max(epsilon).ln())
            }
        })
        .collect()
}

/// Penalty expressed in coordinates `[N | Q]`, where `N` spans its null space
/// and `Q` the orthogonal complement. The null block is exactly zero, so very
/// large λ cannot leak rounding error into unpenalized directions.
#[derive(Clone)]
struct RotatedPenalty {
    rotation: DMatrix<f64>,
    penalty: DMatrix<f64>,
}

impl RotatedPenalty {
    fn new(basis: &BasisSystem, op: DiffOperator) -> Result<Self> {
        let r = penalty_matrix(basis, op)?;
        let null = penalty_null_space(basis, op)?;
        let k = r.nrows();
        let m = null.ncols();
        let proj = DMatrix::identity(k, k) - &null * null.transpose();
        let eig = nalgebra::SymmetricEigen::new(proj);
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let mut rotation = DMatrix::zeros(k, k);
        rotation.columns_mut(0, m).copy_from(&null);
        for (c, &i) in order.iter().take(k - m).enumerate() {
            rotation.set_column(m + c, &eig.eigenvectors.column(i));
        }
        let mut penalty = rotation.transpose() * r * &rotation;
        penalty.rows_mut(0, m).fill(0.0);
        penalty.columns_mut(0, m).fill(0.0);
        penalty = (&penalty + penalty.transpose()) * 0.5;
        Ok(RotatedPenalty { rotation, penalty })
    }
}

/// Penalized smoother for a fixed basis, λ and operator; reuses the penalty matrix.
pub struct Smoother<'a> {
    basis: &'a BasisSystem,
    penalty: RotatedPenalty,
    lambda: f64,
}

struct SeriesFit {
    coefs: DVector<f64>,
    report: SmoothReport,
}

impl<'a> Smoother<'a> {
    pub fn new(basis: &'a BasisSystem, lambda: f64, op: DiffOperator) -> Result<Self> {
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(FdaError::InvalidGrid(format!("λ must be finite and nonnegative, got {lambda}")));
        }
        Ok(Smoother { basis, penalty: RotatedPenalty::new(basis, op)?, lambda })
    }

    fn with_penalty(basis: &'a BasisSystem, penalty: RotatedPenalty, lambda: f64) -> Self {
        Smoother { basis, penalty, lambda }
    }

    fn fit_points(&self, label: &str, times: &[f64], values: &[f64]) -> Result<SeriesFit> {
        let k = self.basis.nbasis();
        if self.lambda == 0.0 && times.len() < k {
            return Err(FdaError::RankDeficient {
                context: format!(
                    "series {label}: {} observations for {k} basis functions at λ = 0; use λ > 0",
                    times.len()
                ),
                min_eigenvalue: 0.0,
            });
        }
        let phi = self.basis.eval(times, 0)? * &self.penalty.rotation;
        let z = DVector::from_column_slice(values);
        let a = phi.transpose() * &phi + &self.penalty.penalty * self.lambda;
        let factor = SpdFactor::new(&a, &format!("smoothing series {label}; λ > 0 may help"))?;
        let rotated = factor.solve_vec(&(phi.transpose() * &z));
        let solved = factor.solve(&phi.transpose());
        let hat_diag: Vec<f64> =
            (0..times.len()).map(|j| (0..k).map(|c| phi[(j, c)] * solved[(c, j)]).sum()).collect();
        let fitted = &phi * &rotated;
        let sse = (&z - fitted).norm_squared();
        let coefs = &self.penalty.rotation * rotated;
        let report = SmoothReport { lambda: self.lambda, effective_df: hat_diag.iter().sum(), sse, hat_diag };
        Ok(SeriesFit { coefs, report })
    }

    pub fn fit(&self, series: &DiscreteSeries) -> Result<(DVector<f64>, SmoothReport)> {
        let f = self.fit_points(&series.label, series.times(), series.values())?;
        Ok((f.coefs, f.report))
    }
}

/// Smooths every series onto `basis` with one λ.
pub fn smooth(
    series: &[DiscreteSeries],
    basis: &BasisSystem,
    lambda: f64,
    op: DiffOperator,
) -> Result<(FunctionalDataset, Vec<SmoothReport>)> {
    if series.is_empty() {
        return Err(FdaError::InsufficientData("no series to smooth".into()));
    }
    let smoother = Smoother::new(basis, lambda, op)?;
    let fits: Vec<Result<(DVector<f64>, SmoothReport)>> = par_map(series, |s| smoother.fit(s));
    let mut coefs = DMatrix::zeros(series.len(), basis.nbasis());
    let mut reports = Vec::with_capacity(series.len());
    for (i, fit) in fits.into_iter().enumerate() {
        let (c, r) = fit?;
        coefs.set_row(i, &c.transpose());
        reports.push(r);
    }
    let labels = series.iter().map(|s| s.label.clone()).collect();
    Ok((FunctionalDataset::new(basis.clone(), coefs, labels)?, reports))
}

/// Leave-one-out residuals `(z_j − ŷ_j) / (1 − H_jj)` of one series.
pub fn loo_residuals(series: &DiscreteSeries, basis: &BasisSystem, lambda: f64, op: DiffOperator) -> Result<Vec<f64>> {
    let smoother = Smoother::new(basis, lambda, op)?;
    let fit = smoother.fit_points(&series.label, series.times(), series.values())?;
    let fitted = basis.eval(series.times(), 0)? * &fit.coefs;
    series
        .values()
        .iter()
        .zip(fitted.iter())
        .zip(&fit.report.hat_diag)
        .enumerate()
        .map(|(j, ((z, f), h))| {
            if (1.0 - h).abs() < 1e-10 {
                Err(FdaError::DegenerateFold { index: j })
            } else {
                Ok((z - f) / (1.0 - h))
            }
        })
        .collect()
}

/// Assigns each observation of each series to a fold: contiguous index
/// blocks, with the block-to-fold mapping shuffled per series from `seed`.
pub fn fold_assignment(series: &[DiscreteSeries], folds: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    series
        .iter()
        .map(|s| {
            let t = s.len();
            let mut perm: Vec<usize> = (0..folds).collect();
            perm.shuffle(&mut rng);
            (0..t).map(|j| perm[j * folds / t]).collect()
        })
        .collect()
}

/// K-fold cross-validation of the smoothing parameter over held-out time points.
///
/// A fold's score is the mean squared prediction error pooled over all of
/// its held-out points; `score(λ)` averages fold scores and `se(λ)` is their
/// standard deviation divided by √folds.
pub fn select_lambda(
    series: &[DiscreteSeries],
    basis: &BasisSystem,
    grid: &[f64],
    folds: usize,
    rule: SelectionRule,
    op: DiffOperator,
    seed: u64,
) -> Result<CVResult> {
    validate_grid(grid)?;
    let total: usize = series.iter().map(|s| s.len()).sum();
    if folds < 2 || folds > total {
        return Err(FdaError::InvalidGrid(format!("folds must lie in [2, {total}], got {folds}")));
    }
    let assignment = fold_assignment(series, folds, seed);
    for f in 0..folds {
        let count = assignment.iter().flatten().filter(|&&a| a == f).count();
        if count < 2 {
            return Err(FdaError::FoldSize { fold: f, count });
        }
    }
    let penalty = RotatedPenalty::new(basis, op)?;
    let per_lambda: Vec<Result<(f64, f64)>> = par_map(grid, |&lambda| {
        let smoother = Smoother::with_penalty(basis, penalty.clone(), lambda);
        let mut sq = vec![0.0; folds];
        let mut count = vec![0usize; folds];
        for (s, assign) in series.iter().zip(&assignment) {
            for f in 0..folds {
                let (mut tt, mut tv, mut ht, mut hv) = (vec![], vec![], vec![], vec![]);
                for ((&t, &v), &a) in s.times().iter().zip(s.values()).zip(assign) {
                    if a == f {
                        ht.push(t);
                        hv.push(v);
                    } else {
                        tt.push(t);
                        tv.push(v);
                    }
                }
                if ht.is_empty() {
                    continue;
                }
                let fit = smoother.fit_points(&s.label, &tt, &tv)?;
                let pred = basis.eval(&ht, 0)? * &fit.coefs;
                for (p, v) in pred.iter().zip(&hv) {
                    sq[f] += (v - p) * (v - p);
                }
                count[f] += ht.len();
            }
        }
        let fold_scores: Vec<f64> = sq.iter().zip(&count).map(|(s, &c)| s / c as f64).collect();
        Ok(mean_and_se(&fold_scores))
    });
    let mut scores = Vec::with_capacity(grid.len());
    let mut ses = Vec::with_capacity(grid.len());
    for r in per_lambda {
        let (m, se) = r?;
        scores.push(m);
        ses.push(se);
    }
    CVResult::from_scores(grid.to_vec(), scores, ses, rule)
}

/// Curve values at `times`: row `i` is `C_i · Φ(t)ᵀ`.
pub fn eval_curves(ds: &FunctionalDataset, times: &[f64]) -> Result<DMatrix<f64>> {
    let phi = ds.basis.eval(times, 0)?;
    Ok(&ds.coefs * phi.transpose())
}

/// Single-curve dataset whose coefficients are the column means.
pub fn mean_curve(ds: &FunctionalDataset) -> Result<FunctionalDataset> {
    if ds.is_empty() {
        return Err(FdaError::InsufficientData("mean of an empty dataset".into()));
    }
    let n = ds.len() as f64;
    let mut mean = DMatrix::zeros(1, ds.basis.nbasis());
    for k in 0..ds.basis.nbasis() {
        mean[(0, k)] = ds.coefs.column(k).iter().sum::<f64>() / n;
    }
    FunctionalDataset::new(ds.basis.clone(), mean, vec!["mean".into()])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::Interval;

    fn basis() -> BasisSystem {
        BasisSystem::bspline(Interval::new(0.0, 10.0).unwrap(), 8, 4).unwrap()
    }

    fn line_series(label: &str) -> DiscreteSeries {
        let t: Vec<f64> = (0..=20).map(|j| j as f64 * 0.5).collect();
        let v = t.iter().map(|x| 1.5 - 0.3 * x).collect();
        DiscreteSeries::new(label, t, v).unwrap()
    }

    #[test]
    fn log_preprocessing() {
        let out = preprocess_log(&[0.0, 0.2], 0.05).unwrap();
        assert_eq!(out, vec![0.05f64.ln(), 0.2f64.ln()]);
        assert_eq!(preprocess_log(&[1.0], 0.5).unwrap(), vec![0.0]);
        assert!((preprocess_log(&[std::f64::consts::E], 0.05).unwrap()[0] - 1.0).abs() < 1e-15);
        assert!(matches!(preprocess_log(&[-0.1], 0.05), Err(FdaError::InvalidData(_))));
    }

    #[test]
    fn series_validation() {
        assert!(DiscreteSeries::new("a", vec![0.0], vec![1.0]).is_err());
        assert!(DiscreteSeries::new("a", vec![0.0, 0.0], vec![1.0, 2.0]).is_err());
        assert!(DiscreteSeries::new("a", vec![0.0, 1.0], vec![1.0]).is_err());
    }

    #[test]
    fn duplicate_labels_rejected() {
        let b = basis();
        let c = DMatrix::zeros(2, 8);
        assert!(FunctionalDataset::new(b, c, vec!["x".into(), "x".into()]).is_err());
    }

    #[test]
    fn line_is_reproduced_at_any_lambda() {
        let s = line_series("1990");
        let z2: f64 = s.values().iter().map(|v| v * v).sum();
        for lambda in [0.0, 1e-2, 1.0, 1e4] {
            let (ds, rep) = smooth(std::slice::from_ref(&s), &basis(), lambda, DiffOperator::SECOND).unwrap();
            assert!(rep[0].sse <= 1e-16 * z2 + 1e-28, "λ={lambda} sse={}", rep[0].sse);
            let vals = eval_curves(&ds, &[0.25, 5.0, 9.9]).unwrap();
            for (j, t) in [0.25, 5.0, 9.9].iter().enumerate() {
                assert!((vals[(0, j)] - (1.5 - 0.3 * t)).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn too_few_points_at_zero_lambda() {
        let s = DiscreteSeries::new("y", vec![0.0, 5.0, 10.0], vec![1.0, 2.0, 0.0]).unwrap();
        match smooth(&[s.clone()], &basis(), 0.0, DiffOperator::SECOND) {
            Err(FdaError::RankDeficient { context, .. }) => assert!(context.contains("λ > 0")),
            other => panic!("unexpected {other:?}"),
        }
        assert!(smooth(&[s], &basis(), 1.0, DiffOperator::SECOND).is_ok());
    }

    #[test]
    fn effective_df_bounded_by_basis() {
        let s = line_series("a");
        let (_, rep) = smooth(&[s], &basis(), 0.0, DiffOperator::SECOND).unwrap();
        assert!((rep[0].effective_df - 8.0).abs() < 1e-9);
    }

    #[test]
    fn zero_and_mean_curves() {
        let b = basis();
        let mut c = DMatrix::zeros(2, 8);
        for k in 0..8 {
            c[(0, k)] = k as f64 - 3.0;
            c[(1, k)] = 3.0 - k as f64;
        }
        let ds = FunctionalDataset::new(b.clone(), c, vec!["a".into(), "b".into()]).unwrap();
        let m = mean_curve(&ds).unwrap();
        assert!(m.coefs().iter().all(|&v| v == 0.0));
        let single = ds.select(&[0]);
        assert_eq!(mean_curve(&single).unwrap().coefs(), single.coefs());
        let zero = FunctionalDataset::new(b, DMatrix::zeros(1, 8), vec!["z".into()]).unwrap();
        assert!(eval_curves(&zero, &[0.0, 3.3, 10.0]).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn folds_are_contiguous_and_deterministic() {
        let s = vec![line_series("a"), line_series("b")];
        let a1 = fold_assignment(&s, 5, 42);
        let a2 = fold_assignment(&s, 5, 42);
        assert_eq!(a1, a2);
        for assign in &a1 {
            // Each fold id appears in a single run.
            for f in 0..5 {
                let idx: Vec<usize> = assign.iter().enumerate().filter(|(_, &a)| a == f).map(|(i, _)| i).collect();
                assert!(idx.windows(2).all(|w| w[1] == w[0] + 1));
            }
        }
    }

    #[test]
    fn fold_size_error() {
        let s = DiscreteSeries::new("a", vec![0.0, 1.0, 2.0], vec![1.0, 2.0, 3.0]).unwrap();
        assert!(matches!(
            select_lambda(&[s], &basis(), &[1.0], 2, SelectionRule::Minimum, DiffOperator::SECOND, 0),
            Err(FdaError::FoldSize { .. })
        ));
    }

    #[test]
    fn single_lambda_grid_cv() {
        let cv = select_lambda(
            &[line_series("a")],
            &basis(),
            &[0.5],
            5,
            SelectionRule::LowestWithinOneSE,
            DiffOperator::SECOND,
            1,
        )
        .unwrap();
        assert_eq!(cv.chosen, 0.5);
    }
}
