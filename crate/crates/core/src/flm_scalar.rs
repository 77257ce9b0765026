//! Scalar-on-function linear model.
//!
//! `y_i = α + ∫ β(t) x_i(t) dt + ε_i` with `x_i = C_i Φ` and `β = Θᵀ B`
//! reduces to the ridge-type problem `y = χ 𝐁 + ε`, `χ = [1 | C J_ΦΘ]`,
//! with roughness penalty `λ Bᵀ R B` on the coefficient curve only. Several
//! functional covariates stack their `C J` blocks side by side.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::basis::{gram_matrix, penalty_matrix, BasisSystem, DiffOperator};
use crate::cv::{validate_grid, CVResult, SelectionRule};
use crate::error::{FdaError, Result};
use crate::linalg::SpdFactor;
use crate::par_map;
use crate::smoothing::FunctionalDataset;

/// Fitted coefficient curve of one functional covariate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaTerm {
    pub x_basis: BasisSystem,
    pub beta_basis: BasisSystem,
    pub beta_coefs: DVector<f64>,
    pub lambda: f64,
    pub op: DiffOperator,
    /// `∫ Φ(t) Θ(t)ᵀ dt`, `K_x × K_β`.
    pub j_phi_theta: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalarFLMModel {
    pub intercept: f64,
    pub terms: Vec<BetaTerm>,
    /// `(χᵀχ + P)⁻¹` including the intercept row and column.
    pub xtx_inv: DMatrix<f64>,
    /// Residual variance, `SSE / (n − tr H)`; zero when no residual degrees of freedom remain.
    pub sigma2: f64,
}

impl ScalarFLMModel {
    pub fn beta_basis(&self) -> &BasisSystem {
        &self.terms[0].beta_basis
    }

    pub fn beta_coefs(&self) -> &DVector<f64> {
        &self.terms[0].beta_coefs
    }

    pub fn lambda(&self) -> f64 {
        self.terms[0].lambda
    }

    /// `β̂(t)` of the first covariate at `times`.
    pub fn beta_values(&self, times: &[f64]) -> Result<Vec<f64>> {
        let term = &self.terms[0];
        Ok((term.beta_basis.eval(times, 0)? * &term.beta_coefs).iter().copied().collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub fitted: Vec<f64>,
    pub residuals: Vec<f64>,
    /// NaN when the response has zero variance.
    pub r2: f64,
    pub rmse: f64,
    pub bias: f64,
    /// Mean squared leave-one-out residual; NaN when some hat diagonal equals 1.
    pub loocv: f64,
}

/// One functional covariate with its coefficient basis and penalty.
#[derive(Debug, Clone, Copy)]
pub struct FunctionalCovariate<'a> {
    pub x: &'a FunctionalDataset,
    pub beta_basis: &'a BasisSystem,
    pub lambda: f64,
    pub op: DiffOperator,
}

/// Design matrix and unscaled penalty blocks, reusable across λ values.
struct Design {
    chi: DMatrix<f64>,
    chi_t_chi: DMatrix<f64>,
    chi_t_y: DVector<f64>,
    /// Column offset and penalty block of each covariate.
    blocks: Vec<(usize, DMatrix<f64>)>,
    j: Vec<DMatrix<f64>>,
}

impl Design {
    fn build(covariates: &[FunctionalCovariate<'_>], y: &DVector<f64>) -> Result<Self> {
        if covariates.is_empty() {
            return Err(FdaError::InvalidData("at least one functional covariate is required".into()));
        }
        let n = y.len();
        let mut width = 1;
        let mut blocks = Vec::with_capacity(covariates.len());
        let mut j = Vec::with_capacity(covariates.len());
        for cov in covariates {
            if cov.x.len() != n {
                return Err(FdaError::Shape(format!("{} curves for {n} responses", cov.x.len())));
            }
            if cov.x.labels() != covariates[0].x.labels() {
                return Err(FdaError::Alignment("covariate datasets carry different labels".into()));
            }
            if !(cov.lambda >= 0.0) || !cov.lambda.is_finite() {
                return Err(FdaError::InvalidGrid(format!("λ must be finite and nonnegative, got {}", cov.lambda)));
            }
            let jm = gram_matrix(cov.x.basis(), cov.beta_basis)?;
            blocks.push((width, penalty_matrix(cov.beta_basis, cov.op)?));
            width += cov.beta_basis.nbasis();
            j.push(jm);
        }
        let mut chi = DMatrix::zeros(n, width);
        chi.column_mut(0).fill(1.0);
        for (cov, (jm, (offset, _))) in covariates.iter().zip(j.iter().zip(&blocks)) {
            let cj = cov.x.coefs() * jm;
            chi.view_mut((0, *offset), (n, cj.ncols())).copy_from(&cj);
        }
        let chi_t_chi = chi.transpose() * &chi;
        let chi_t_y = chi.transpose() * y;
        Ok(Design { chi, chi_t_chi, chi_t_y, blocks, j })
    }

    fn system(&self, lambdas: &[f64]) -> DMatrix<f64> {
        let mut a = self.chi_t_chi.clone();
        for ((offset, r), &lambda) in self.blocks.iter().zip(lambdas) {
            let k = r.nrows();
            let mut view = a.view_mut((*offset, *offset), (k, k));
            view += r * lambda;
        }
        a
    }

    fn solve(&self, lambdas: &[f64]) -> Result<(DVector<f64>, SpdFactor)> {
        let n = self.chi.nrows();
        let p = self.chi.ncols();
        if lambdas.iter().all(|&l| l == 0.0) && p > n {
            return Err(FdaError::RankDeficient {
                context: format!("{p} coefficients (intercept included) for {n} responses at λ = 0"),
                min_eigenvalue: 0.0,
            });
        }
        let factor = SpdFactor::new(&self.system(lambdas), "scalar functional regression normal equations")?;
        Ok((factor.solve_vec(&self.chi_t_y), factor))
    }

    fn hat_diag(&self, factor: &SpdFactor) -> Vec<f64> {
        let solved = factor.solve(&self.chi.transpose());
        (0..self.chi.nrows())
            .map(|i| (0..self.chi.ncols()).map(|c| self.chi[(i, c)] * solved[(c, i)]).sum())
            .collect()
    }
}

/// Fits the model with one functional covariate.
pub fn fit_flms(
    x: &FunctionalDataset,
    y: &[f64],
    beta_basis: &BasisSystem,
    lambda: f64,
    op: DiffOperator,
) -> Result<(ScalarFLMModel, FitDiagnostics)> {
    fit_flms_multi(&[FunctionalCovariate { x, beta_basis, lambda, op }], y)
}

/// Fits the model with any number of functional covariates, each with its own
/// coefficient basis, operator and λ.
pub fn fit_flms_multi(covariates: &[FunctionalCovariate<'_>], y: &[f64]) -> Result<(ScalarFLMModel, FitDiagnostics)> {
    for cov in covariates {
        if !cov.x.basis().domain().same_as(&cov.beta_basis.domain()) {
            let (a, b) = (cov.x.basis().domain(), cov.beta_basis.domain());
            return Err(FdaError::DomainMismatch(a.lo(), a.hi(), b.lo(), b.hi()));
        }
    }
    let yv = DVector::from_column_slice(y);
    let design = Design::build(covariates, &yv)?;
    let lambdas: Vec<f64> = covariates.iter().map(|c| c.lambda).collect();
    let (b, factor) = design.solve(&lambdas)?;
    let hat = design.hat_diag(&factor);
    let terms: Vec<BetaTerm> = covariates
        .iter()
        .zip(design.blocks.iter().zip(&design.j))
        .map(|(cov, ((offset, _), jm))| BetaTerm {
            x_basis: cov.x.basis().clone(),
            beta_basis: cov.beta_basis.clone(),
            beta_coefs: b.rows(*offset, cov.beta_basis.nbasis()).into_owned(),
            lambda: cov.lambda,
            op: cov.op,
            j_phi_theta: jm.clone(),
        })
        .collect();
    let mut model = ScalarFLMModel { intercept: b[0], terms, xtx_inv: factor.inverse(), sigma2: 0.0 };

    let inputs: Vec<&FunctionalDataset> = covariates.iter().map(|c| c.x).collect();
    let fitted: Vec<f64> = predict_flms_multi(&model, &inputs)?.iter().copied().collect();
    let residuals: Vec<f64> = y.iter().zip(&fitted).map(|(a, f)| a - f).collect();
    let n = y.len() as f64;
    let sse: f64 = residuals.iter().map(|r| r * r).sum();
    let dof = n - hat.iter().sum::<f64>();
    model.sigma2 = if dof > 1e-8 { sse / dof } else { 0.0 };

    let mean = y.iter().sum::<f64>() / n;
    let sst: f64 = y.iter().map(|v| (v - mean) * (v - mean)).sum();
    let loo: Option<Vec<f64>> =
        residuals.iter().zip(&hat).map(|(r, h)| ((1.0 - h).abs() >= 1e-10).then(|| r / (1.0 - h))).collect();
    let diagnostics = FitDiagnostics {
        r2: if sst > 0.0 { 1.0 - sse / sst } else { f64::NAN },
        rmse: (sse / n).sqrt(),
        bias: residuals.iter().map(|r| -r).sum::<f64>() / n,
        loocv: loo.map_or(f64::NAN, |l| l.iter().map(|r| r * r).sum::<f64>() / n),
        fitted,
        residuals,
    };
    Ok((model, diagnostics))
}

/// `ŷ_i = α + C_i J_ΦΘ B` for new curves on the training covariate basis.
pub fn predict_flms(model: &ScalarFLMModel, xnew: &FunctionalDataset) -> Result<DVector<f64>> {
    predict_flms_multi(model, &[xnew])
}

pub fn predict_flms_multi(model: &ScalarFLMModel, xnew: &[&FunctionalDataset]) -> Result<DVector<f64>> {
    if xnew.len() != model.terms.len() {
        return Err(FdaError::Shape(format!("{} covariates for a model with {}", xnew.len(), model.terms.len())));
    }
    let n = xnew[0].len();
    let mut out = DVector::from_element(n, 0.0);
    for (x, term) in xnew.iter().zip(&model.terms) {
        if x.basis() != &term.x_basis {
            return Err(FdaError::BasisMismatch("new curves must use the training covariate basis".into()));
        }
        if x.len() != n {
            return Err(FdaError::Shape("covariates disagree on the number of curves".into()));
        }
        out += (x.coefs() * &term.j_phi_theta) * &term.beta_coefs;
    }
    Ok(out.map(|v| model.intercept + v))
}

/// Pointwise band `β̂(t) ± z · se(t)` for the first covariate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceBand {
    pub times: Vec<f64>,
    pub lower: Vec<f64>,
    pub center: Vec<f64>,
    pub upper: Vec<f64>,
}

pub fn beta_confidence_band(model: &ScalarFLMModel, times: &[f64], level: f64) -> Result<ConfidenceBand> {
    beta_confidence_band_for(model, 0, times, level)
}

/// Band for covariate `term`; the variance uses the β block of `xtx_inv` scaled by `sigma2`.
pub fn beta_confidence_band_for(model: &ScalarFLMModel, term: usize, times: &[f64], level: f64) -> Result<ConfidenceBand> {
    if !(level > 0.0 && level < 1.0) {
        return Err(FdaError::InvalidLevel(level));
    }
    let t = model
        .terms
        .get(term)
        .ok_or_else(|| FdaError::Shape(format!("model has no covariate {term}")))?;
    let offset = 1 + model.terms[..term].iter().map(|b| b.beta_basis.nbasis()).sum::<usize>();
    let k = t.beta_basis.nbasis();
    let cov = model.xtx_inv.view((offset, offset), (k, k));
    let theta = t.beta_basis.eval(times, 0)?;
    let z = normal_quantile((1.0 + level) / 2.0);
    let mut band = ConfidenceBand { times: times.to_vec(), lower: vec![], center: vec![], upper: vec![] };
    for j in 0..times.len() {
        let row = theta.row(j);
        let center = (row * &t.beta_coefs)[(0, 0)];
        let var = model.sigma2 * (row * cov * row.transpose())[(0, 0)];
        let half = z * var.max(0.0).sqrt();
        band.lower.push(center - half);
        band.center.push(center);
        band.upper.push(center + half);
    }
    Ok(band)
}

pub fn normal_quantile(p: f64) -> f64 {
    Normal::new(0.0, 1.0).expect("standard normal").inverse_cdf(p)
}

/// Leave-one-out CV over a λ grid through the hat-diagonal identity.
///
/// The score is the mean squared LOO residual; its standard error is the
/// sample sd of squared residuals over √n.
pub fn loocv_flms(
    x: &FunctionalDataset,
    y: &[f64],
    beta_basis: &BasisSystem,
    grid: &[f64],
    op: DiffOperator,
    rule: SelectionRule,
) -> Result<CVResult> {
    validate_grid(grid)?;
    let yv = DVector::from_column_slice(y);
    let cov = FunctionalCovariate { x, beta_basis, lambda: 0.0, op };
    if !x.basis().domain().same_as(&beta_basis.domain()) {
        let (a, b) = (x.basis().domain(), beta_basis.domain());
        return Err(FdaError::DomainMismatch(a.lo(), a.hi(), b.lo(), b.hi()));
    }
    let design = Design::build(&[cov], &yv)?;
    let per: Vec<Result<(f64, f64)>> = par_map(grid, |&lambda| {
        let r = loo_residuals_with(&design, &yv, lambda)?;
        let sq: Vec<f64> = r.iter().map(|v| v * v).collect();
        Ok(crate::cv::mean_and_se(&sq))
    });
    let mut scores = vec![];
    let mut ses = vec![];
    for p in per {
        let (m, s) = p?;
        scores.push(m);
        ses.push(s);
    }
    CVResult::from_scores(grid.to_vec(), scores, ses, rule)
}

/// Leave-one-out residuals `(y_i − ŷ_i)/(1 − H_ii)` at one λ.
pub fn loo_residuals_flms(
    x: &FunctionalDataset,
    y: &[f64],
    beta_basis: &BasisSystem,
    lambda: f64,
    op: DiffOperator,
) -> Result<Vec<f64>> {
    let yv = DVector::from_column_slice(y);
    let design = Design::build(&[FunctionalCovariate { x, beta_basis, lambda, op }], &yv)?;
    loo_residuals_with(&design, &yv, lambda)
}

fn loo_residuals_with(design: &Design, y: &DVector<f64>, lambda: f64) -> Result<Vec<f64>> {
    let (b, factor) = design.solve(&[lambda])?;
    let hat = design.hat_diag(&factor);
    let fitted = &design.chi * b;
    (0..y.len())
        .map(|i| {
            if (1.0 - hat[i]).abs() < 1e-10 {
                Err(FdaError::DegenerateFold { index: i })
            } else {
                Ok((y[i] - fitted[i]) / (1.0 - hat[i]))
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::Interval;

    fn dataset(n: usize) -> FunctionalDataset {
        let b = BasisSystem::bspline(Interval::new(0.0, 1.0).unwrap(), 6, 4).unwrap();
        let coefs = DMatrix::from_fn(n, 6, |i, k| ((i * 7 + k * 3) % 11) as f64 / 5.0 - 1.0 + (i as f64 * 0.37).sin());
        FunctionalDataset::new(b, coefs, (0..n).map(|i| format!("c{i}")).collect()).unwrap()
    }

    #[test]
    fn zero_response_gives_zero_model() {
        let x = dataset(12);
        let bb = BasisSystem::bspline(Interval::new(0.0, 1.0).unwrap(), 5, 4).unwrap();
        for lambda in [0.0, 1e-3, 10.0] {
            let (m, d) = fit_flms(&x, &vec![0.0; 12], &bb, lambda, DiffOperator::SECOND).unwrap();
            assert!(m.intercept.abs() < 1e-12);
            assert!(m.beta_coefs().amax() < 1e-12);
            assert!(d.r2.is_nan());
        }
    }

    #[test]
    fn level_must_be_open_unit_interval() {
        let x = dataset(12);
        let y: Vec<f64> = (0..12).map(|i| i as f64).collect();
        let (m, _) = fit_flms(&x, &y, x.basis(), 1.0, DiffOperator::SECOND).unwrap();
        assert!(matches!(beta_confidence_band(&m, &[0.5], 1.0), Err(FdaError::InvalidLevel(_))));
        assert!(matches!(beta_confidence_band(&m, &[0.5], 0.0), Err(FdaError::InvalidLevel(_))));
    }

    #[test]
    fn normal_multiplier() {
        assert!((normal_quantile(0.975) - 1.959964).abs() < 5e-7);
    }

    #[test]
    fn zero_variance_collapses_band() {
        let x = dataset(12);
        let y: Vec<f64> = (0..12).map(|i| i as f64).collect();
        let (mut m, _) = fit_flms(&x, &y, x.basis(), 1.0, DiffOperator::SECOND).unwrap();
        m.sigma2 = 0.0;
        let band = beta_confidence_band(&m, &[0.1, 0.5, 0.9], 0.95).unwrap();
        assert_eq!(band.lower, band.center);
        assert_eq!(band.upper, band.center);
    }

    #[test]
    fn too_many_coefficients_at_zero_lambda() {
        let x = dataset(5);
        let y = vec![1.0, 2.0, 0.5, 3.0, 2.2];
        assert!(matches!(
            fit_flms(&x, &y, x.basis(), 0.0, DiffOperator::SECOND),
            Err(FdaError::RankDeficient { .. })
        ));
    }

    #[test]
    fn domain_and_basis_mismatch() {
        let x = dataset(8);
        let other = BasisSystem::bspline(Interval::new(0.0, 2.0).unwrap(), 5, 4).unwrap();
        let y = vec![0.0; 8];
        assert!(matches!(fit_flms(&x, &y, &other, 1.0, DiffOperator::SECOND), Err(FdaError::DomainMismatch(..))));
        let (m, _) = fit_flms(&x, &y, x.basis(), 1.0, DiffOperator::SECOND).unwrap();
        let xnew = FunctionalDataset::new(other, DMatrix::zeros(1, 5), vec!["a".into()]).unwrap();
        assert!(matches!(predict_flms(&m, &xnew), Err(FdaError::BasisMismatch(_))));
    }

    #[test]
    fn prediction_reproduces_fitted_values_bitwise() {
        let x = dataset(15);
        let y: Vec<f64> = (0..15).map(|i| (i as f64).sqrt()).collect();
        let (m, d) = fit_flms(&x, &y, x.basis(), 0.3, DiffOperator::SECOND).unwrap();
        let p = predict_flms(&m, &x).unwrap();
        assert_eq!(p.iter().copied().collect::<Vec<_>>(), d.fitted);
        let zero = FunctionalDataset::new(x.basis().clone(), DMatrix::zeros(1, 6), vec!["z".into()]).unwrap();
        assert_eq!(predict_flms(&m, &zero).unwrap()[0], m.intercept);
    }

    #[test]
    fn single_point_grid_loocv() {
        let x = dataset(15);
        let y: Vec<f64> = (0..15).map(|i| (i as f64).cos()).collect();
        let cv = loocv_flms(&x, &y, x.basis(), &[0.7], DiffOperator::SECOND, SelectionRule::Minimum).unwrap();
        assert_eq!(cv.chosen, 0.7);
    }
}
