//! Function-on-function linear model.
//!
//! `y_i(t) = α(t) + ∫ β(s,t) x_i(s) ds + ε_i(t)` with `α = Aᵀa`,
//! `β(s,t) = H(s)ᵀ B Θ(t)`. The integrated squared error plus three
//! roughness penalties (on α, on β along `s`, on β along `t`) is quadratic
//! in `(a, vec B)`; `vec` is s-index major, so entry `(k, l)` of `B` sits at
//! position `k·K₂ + l`.
//!
//! With `Z = C_x J_ΦH` the β block of the normal matrix is
//! `(ZᵀZ + λ₁R₁) ⊗ J_ΘΘ + λ₂ J_HH ⊗ R₂`. Two generalized eigenproblems
//! diagonalize it, and the intercept block is eliminated through a Schur
//! complement, so a fit never forms the full `(K_α + K₁K₂)²` matrix.
//! [`assemble_normal_equations`] builds that matrix explicitly for checking.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::basis::{gram_matrix, penalty_matrix, BasisSystem, DiffOperator};
use crate::cv::{argmin, mean_and_se, validate_grid, CVResult, SelectionRule};
use crate::error::{FdaError, Result};
use crate::linalg::{generalized_eigen, min_eigenvalue, SpdFactor};
use crate::par_map;
use crate::smoothing::{DiscreteSeries, FunctionalDataset};

/// Bases for the coefficient surface (`s` over the covariate domain, `t`
/// over the response domain) and the intercept curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlmfBases {
    pub s: BasisSystem,
    pub t: BasisSystem,
    pub alpha: BasisSystem,
}

/// Penalty weights `(λ₀, λ₁, λ₂)` and operators `(L₀, L₁, L₂)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Penalties {
    pub lambdas: [f64; 3],
    pub ops: [DiffOperator; 3],
}

impl Penalties {
    pub fn new(lambdas: [f64; 3]) -> Self {
        Penalties { lambdas, ops: [DiffOperator::SECOND; 3] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FullFLMModel {
    pub x_basis: BasisSystem,
    pub alpha_basis: BasisSystem,
    pub alpha_coefs: DVector<f64>,
    pub s_basis: BasisSystem,
    pub t_basis: BasisSystem,
    /// `K₁ × K₂`.
    pub b_matrix: DMatrix<f64>,
    pub penalties: Penalties,
    /// `∫ Φ(s) H(s)ᵀ ds`.
    pub j_phi_h: DMatrix<f64>,
    /// Intercept curve expressed on the `t` basis (L² projection when the bases differ).
    pub alpha_on_t: DVector<f64>,
}

/// Predicted response curves on the model's `t` basis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePrediction {
    pub dataset: FunctionalDataset,
    pub per_time_se: Option<Vec<f64>>,
}

/// Data-independent integrals plus the `t`-direction eigendecomposition.
pub struct FlmfOperators {
    bases: FlmfBases,
    x_basis: BasisSystem,
    y_basis: BasisSystem,
    ops: [DiffOperator; 3],
    j_phi_h: DMatrix<f64>,
    j_hh: DMatrix<f64>,
    r1: DMatrix<f64>,
    j_tt: DMatrix<f64>,
    r2: DMatrix<f64>,
    j_aa: DMatrix<f64>,
    r0: DMatrix<f64>,
    j_at: DMatrix<f64>,
    j_ay: DMatrix<f64>,
    /// `∫ Ψ(t) Θ(t)ᵀ dt` for the response basis `Ψ`.
    j_yt: DMatrix<f64>,
    t_eigvals: DVector<f64>,
    t_eigvecs: DMatrix<f64>,
    alpha_to_t: DMatrix<f64>,
}

impl FlmfOperators {
    pub fn new(x_basis: &BasisSystem, y_basis: &BasisSystem, bases: &FlmfBases, ops: [DiffOperator; 3]) -> Result<Self> {
        let j_phi_h = gram_matrix(x_basis, &bases.s)?;
        let j_hh = gram_matrix(&bases.s, &bases.s)?;
        let r1 = penalty_matrix(&bases.s, ops[1])?;
        let j_tt = gram_matrix(&bases.t, &bases.t)?;
        let r2 = penalty_matrix(&bases.t, ops[2])?;
        let j_aa = gram_matrix(&bases.alpha, &bases.alpha)?;
        let r0 = penalty_matrix(&bases.alpha, ops[0])?;
        let j_at = gram_matrix(&bases.alpha, &bases.t)?;
        let j_ay = gram_matrix(&bases.alpha, y_basis)?;
        let j_yt = gram_matrix(y_basis, &bases.t)?;
        let (t_eigvals, t_eigvecs) = generalized_eigen(&r2, &j_tt, "Gram matrix of the t basis")?;
        let alpha_to_t = if bases.alpha == bases.t {
            DMatrix::identity(bases.t.nbasis(), bases.t.nbasis())
        } else {
            SpdFactor::new(&j_tt, "Gram matrix of the t basis")?.solve(&j_at.transpose())
        };
        Ok(FlmfOperators {
            bases: bases.clone(),
            x_basis: x_basis.clone(),
            y_basis: y_basis.clone(),
            ops,
            j_phi_h,
            j_hh,
            r1,
            j_tt,
            r2,
            j_aa,
            r0,
            j_at,
            j_ay,
            j_yt,
            t_eigvals,
            t_eigvecs,
            alpha_to_t,
        })
    }

    fn check_inputs(&self, x: &FunctionalDataset, y: &FunctionalDataset) -> Result<()> {
        if x.basis() != &self.x_basis {
            return Err(FdaError::BasisMismatch("covariate curves use a different basis".into()));
        }
        if y.basis() != &self.y_basis {
            return Err(FdaError::BasisMismatch("response curves use a different basis".into()));
        }
        if x.len() != y.len() {
            return Err(FdaError::Alignment(format!("{} covariate curves vs {} response curves", x.len(), y.len())));
        }
        if x.labels() != y.labels() {
            return Err(FdaError::Alignment("covariate and response labels differ in content or order".into()));
        }
        Ok(())
    }

    /// Solves the penalized normal equations for `(a, B)`.
    fn solve(&self, z: &DMatrix<f64>, d: &DMatrix<f64>, lambdas: [f64; 3]) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let n = z.nrows() as f64;
        let (k1, k2, ka) = (self.bases.s.nbasis(), self.bases.t.nbasis(), self.bases.alpha.nbasis());
        let [l0, l1, l2] = lambdas;
        let s = z.transpose() * z + &self.r1 * l1;
        let singular = |what: &str| -> FdaError {
            let (m, _) = assemble_from(self, z, d, lambdas);
            FdaError::RankDeficient {
                context: format!(
                    "{what}; without penalties the surface is identifiable only when K1 ({k1}) is below both n ({}) and K2 ({k2})",
                    z.nrows()
                ),
                min_eigenvalue: min_eigenvalue(&m),
            }
        };
        let (s_vals, w) = generalized_eigen(&s, &self.j_hh, "Gram matrix of the s basis")?;
        let v = &self.t_eigvecs;
        let diag = DMatrix::from_fn(k1, k2, |k, l| s_vals[k] + l2 * self.t_eigvals[l]);
        let scale = diag.amax();
        if !(diag.min() > 1e-13 * scale) {
            return Err(singular("coefficient-surface block is singular"));
        }
        let inv_bb = |x: &DMatrix<f64>| -> DMatrix<f64> {
            let y = (w.transpose() * x * v).component_div(&diag);
            &w * y * v.transpose()
        };

        let zsum = DVector::from_iterator(k1, (0..k1).map(|k| z.column(k).sum()));
        let dsum = DVector::from_iterator(d.ncols(), (0..d.ncols()).map(|c| d.column(c).sum()));
        // Row p of the α–B block, reshaped to K₁ × K₂.
        let cross: Vec<DMatrix<f64>> = (0..ka).map(|p| &zsum * self.j_at.row(p)).collect();
        let cross_solved: Vec<DMatrix<f64>> = cross.iter().map(inv_bb).collect();
        let rb = z.transpose() * d * &self.j_yt;
        let rb_solved = inv_bb(&rb);
        let ra = &self.j_ay * dsum;

        let mut schur = &self.j_aa * n + &self.r0 * l0;
        let mut rhs = ra;
        for p in 0..ka {
            for q in 0..ka {
                schur[(p, q)] -= cross[p].dot(&cross_solved[q]);
            }
            rhs[p] -= cross[p].dot(&rb_solved);
        }
        let schur = (&schur + schur.transpose()) * 0.5;
        let factor = SpdFactor::new(&schur, "intercept block").map_err(|_| singular("intercept block is singular"))?;
        let a = factor.solve_vec(&rhs);
        let mut b = rb_solved;
        for p in 0..ka {
            b -= &cross_solved[p] * a[p];
        }
        Ok((a, b))
    }

    fn fit_rows(&self, x: &FunctionalDataset, y: &FunctionalDataset, penalties: Penalties) -> Result<FullFLMModel> {
        let z = x.coefs() * &self.j_phi_h;
        let (a, b) = self.solve(&z, y.coefs(), penalties.lambdas)?;
        Ok(FullFLMModel {
            x_basis: self.x_basis.clone(),
            alpha_basis: self.bases.alpha.clone(),
            alpha_on_t: &self.alpha_to_t * &a,
            alpha_coefs: a,
            s_basis: self.bases.s.clone(),
            t_basis: self.bases.t.clone(),
            b_matrix: b,
            penalties: Penalties { lambdas: penalties.lambdas, ops: self.ops },
            j_phi_h: self.j_phi_h.clone(),
        })
    }
}

fn check_penalties(penalties: &Penalties) -> Result<()> {
    if penalties.lambdas.iter().any(|l| !(*l >= 0.0) || !l.is_finite()) {
        return Err(FdaError::InvalidGrid(format!("λs must be finite and nonnegative, got {:?}", penalties.lambdas)));
    }
    Ok(())
}

fn warn_identifiability(n: usize, k1: usize, k2: usize) {
    if k1 >= n || k1 >= k2 {
        log::warn!("K1 = {k1} is not below both n = {n} and K2 = {k2}; the fit relies on the penalties for identifiability");
    }
}

/// Fits the function-on-function model by solving the penalized normal equations.
pub fn fit_flmf(
    x: &FunctionalDataset,
    y: &FunctionalDataset,
    bases: &FlmfBases,
    penalties: Penalties,
) -> Result<FullFLMModel> {
    check_penalties(&penalties)?;
    let ops = FlmfOperators::new(x.basis(), y.basis(), bases, penalties.ops)?;
    ops.check_inputs(x, y)?;
    warn_identifiability(x.len(), bases.s.nbasis(), bases.t.nbasis());
    ops.fit_rows(x, y, penalties)
}

/// Explicit normal matrix and right-hand side over `(a, vec B)`.
pub fn assemble_normal_equations(
    x: &FunctionalDataset,
    y: &FunctionalDataset,
    bases: &FlmfBases,
    penalties: Penalties,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let ops = FlmfOperators::new(x.basis(), y.basis(), bases, penalties.ops)?;
    ops.check_inputs(x, y)?;
    let z = x.coefs() * &ops.j_phi_h;
    Ok(assemble_from(&ops, &z, y.coefs(), penalties.lambdas))
}

fn assemble_from(ops: &FlmfOperators, z: &DMatrix<f64>, d: &DMatrix<f64>, lambdas: [f64; 3]) -> (DMatrix<f64>, DVector<f64>) {
    let n = z.nrows() as f64;
    let (k1, k2, ka) = (ops.bases.s.nbasis(), ops.bases.t.nbasis(), ops.bases.alpha.nbasis());
    let dim = ka + k1 * k2;
    let [l0, l1, l2] = lambdas;
    let mut m = DMatrix::zeros(dim, dim);
    m.view_mut((0, 0), (ka, ka)).copy_from(&(&ops.j_aa * n + &ops.r0 * l0));
    let zsum: Vec<f64> = (0..k1).map(|k| z.column(k).sum()).collect();
    for p in 0..ka {
        for k in 0..k1 {
            for l in 0..k2 {
                let v = zsum[k] * ops.j_at[(p, l)];
                m[(p, ka + k * k2 + l)] = v;
                m[(ka + k * k2 + l, p)] = v;
            }
        }
    }
    let ztz = z.transpose() * z;
    let s = &ztz + &ops.r1 * l1;
    let bb = s.kronecker(&ops.j_tt) + ops.j_hh.kronecker(&ops.r2) * l2;
    m.view_mut((ka, ka), (k1 * k2, k1 * k2)).copy_from(&bb);
    let dsum = DVector::from_iterator(d.ncols(), (0..d.ncols()).map(|c| d.column(c).sum()));
    let mut rhs = DVector::zeros(dim);
    rhs.rows_mut(0, ka).copy_from(&(&ops.j_ay * dsum));
    let rb = z.transpose() * d * &ops.j_yt;
    for k in 0..k1 {
        for l in 0..k2 {
            rhs[ka + k * k2 + l] = rb[(k, l)];
        }
    }
    (m, rhs)
}

/// Predicted response coefficients on the `t` basis: `C_i J_ΦH B` plus the intercept.
pub fn predict_flmf(model: &FullFLMModel, xnew: &FunctionalDataset) -> Result<CurvePrediction> {
    if xnew.basis() != &model.x_basis {
        return Err(FdaError::BasisMismatch("new curves must use the training covariate basis".into()));
    }
    let mut coefs = xnew.coefs() * &model.j_phi_h * &model.b_matrix;
    for mut row in coefs.row_iter_mut() {
        row += model.alpha_on_t.transpose();
    }
    let dataset = FunctionalDataset::new(model.t_basis.clone(), coefs, xnew.labels().to_vec())?;
    Ok(CurvePrediction { dataset, per_time_se: None })
}

/// `β̂(s_j, t_l) = H(s_j)ᵀ B Θ(t_l)` on a grid, `s` along rows.
pub fn beta_surface(model: &FullFLMModel, s_grid: &[f64], t_grid: &[f64]) -> Result<DMatrix<f64>> {
    let h = model.s_basis.eval(s_grid, 0)?;
    let th = model.t_basis.eval(t_grid, 0)?;
    Ok(h * &model.b_matrix * th.transpose())
}

/// `α̂(t)` at `times`.
pub fn alpha_curve(model: &FullFLMModel, times: &[f64]) -> Result<Vec<f64>> {
    Ok((model.alpha_basis.eval(times, 0)? * &model.alpha_coefs).iter().copied().collect())
}

/// Share of `∫∫ β̂²` lying where `s > t`, i.e. influence of future covariate
/// values. Computed by trapezoid on a `grid × grid` mesh.
pub fn backward_mass_fraction(model: &FullFLMModel, grid: usize) -> Result<f64> {
    let s = model.s_basis.domain().linspace(grid);
    let t = model.t_basis.domain().linspace(grid);
    let surface = beta_surface(model, &s, &t)?;
    let w = |n: usize, j: usize| if j == 0 || j == n - 1 { 0.5 } else { 1.0 };
    let (mut total, mut ahead) = (0.0, 0.0);
    for (j, &sj) in s.iter().enumerate() {
        for (l, &tl) in t.iter().enumerate() {
            let v = w(grid, j) * w(grid, l) * surface[(j, l)].powi(2);
            total += v;
            if sj > tl {
                ahead += v;
            }
        }
    }
    Ok(if total > 0.0 { ahead / total } else { 0.0 })
}

/// What a held-out prediction is compared with.
#[derive(Debug, Clone, Copy)]
pub enum HeldOutTarget<'a> {
    /// The held-out smoothed response curve on a daily grid over the response domain.
    Smoothed,
    /// Raw observations (aligned with the response labels) at grid days where observed.
    Raw(&'a [DiscreteSeries]),
}

/// Leave-one-curve-out cross-validation over a product λ grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocvResult {
    /// Profile through the optimum along each λ dimension.
    pub cv: [CVResult; 3],
    pub chosen: [f64; 3],
    /// Every evaluated triple with its score and standard error.
    pub table: Vec<([f64; 3], f64, f64)>,
    pub labels: Vec<String>,
    /// Mean squared error of each held-out curve at the chosen triple.
    pub per_label_error: Vec<f64>,
    pub eval_times: Vec<f64>,
    /// Mean over curves of the squared error at each evaluation time.
    pub per_time_error: Vec<f64>,
    /// Held-out predictions at the chosen triple, `n × |eval_times|`.
    pub predictions: DMatrix<f64>,
}

struct TripleOutcome {
    errors: DMatrix<f64>,
    mask: DMatrix<f64>,
    predictions: DMatrix<f64>,
}

pub fn locv_flmf(
    x: &FunctionalDataset,
    y: &FunctionalDataset,
    bases: &FlmfBases,
    grids: [&[f64]; 3],
    ops: [DiffOperator; 3],
    target: HeldOutTarget<'_>,
) -> Result<LocvResult> {
    let n = x.len();
    if n < 3 {
        return Err(FdaError::InsufficientData(format!("leave-one-curve-out needs at least 3 curves, got {n}")));
    }
    for g in grids {
        validate_grid(g)?;
    }
    let operators = FlmfOperators::new(x.basis(), y.basis(), bases, ops)?;
    operators.check_inputs(x, y)?;
    warn_identifiability(n - 1, bases.s.nbasis(), bases.t.nbasis());
    let eval_times = bases.t.domain().daily_grid();
    let truth = match target {
        HeldOutTarget::Smoothed => {
            let vals = y.eval(&eval_times)?;
            (vals, DMatrix::from_element(n, eval_times.len(), 1.0))
        }
        HeldOutTarget::Raw(series) => raw_targets(series, y.labels(), &eval_times)?,
    };

    let mut triples = Vec::new();
    for &l0 in grids[0] {
        for &l1 in grids[1] {
            for &l2 in grids[2] {
                triples.push([l0, l1, l2]);
            }
        }
    }
    let outcomes: Vec<Result<TripleOutcome>> = par_map(&triples, |&lambdas| {
        let penalties = Penalties { lambdas, ops };
        let mut errors = DMatrix::zeros(n, eval_times.len());
        let mut predictions = DMatrix::zeros(n, eval_times.len());
        for i in 0..n {
            // Per-fold datasets never contain the held-out curve.
            let model = operators.fit_rows(&x.without(i), &y.without(i), penalties)?;
            let pred = predict_flmf(&model, &x.select(&[i]))?.dataset.eval(&eval_times)?;
            for j in 0..eval_times.len() {
                predictions[(i, j)] = pred[(0, j)];
                if truth.1[(i, j)] > 0.0 {
                    errors[(i, j)] = (pred[(0, j)] - truth.0[(i, j)]).powi(2);
                }
            }
        }
        Ok(TripleOutcome { errors, mask: truth.1.clone(), predictions })
    });
    let mut outs = Vec::with_capacity(outcomes.len());
    for o in outcomes {
        outs.push(o?);
    }
    let per_label = |o: &TripleOutcome| -> Vec<f64> {
        (0..n)
            .map(|i| {
                let c = o.mask.row(i).sum();
                if c > 0.0 { o.errors.row(i).sum() / c } else { f64::NAN }
            })
            .collect()
    };
    let mut table = Vec::with_capacity(triples.len());
    let mut scores = Vec::with_capacity(triples.len());
    for (t, o) in triples.iter().zip(&outs) {
        let pl: Vec<f64> = per_label(o).into_iter().filter(|v| v.is_finite()).collect();
        let (m, se) = mean_and_se(&pl);
        table.push((*t, m, se));
        scores.push(m);
    }
    let best = argmin(&scores);
    let chosen = triples[best];
    let outcome = &outs[best];
    let per_label_error = per_label(outcome);
    let per_time_error = (0..eval_times.len())
        .map(|j| {
            let c = outcome.mask.column(j).sum();
            if c > 0.0 { outcome.errors.column(j).sum() / c } else { f64::NAN }
        })
        .collect();

    let profile = |dim: usize| -> Result<CVResult> {
        let mut s = vec![];
        let mut e = vec![];
        for &g in grids[dim] {
            let mut key = chosen;
            key[dim] = g;
            let (_, m, se) = table.iter().find(|(t, _, _)| *t == key).expect("product grid entry");
            s.push(*m);
            e.push(*se);
        }
        let mut cv = CVResult::from_scores(grids[dim].to_vec(), s, e, SelectionRule::Minimum)?;
        cv.chosen = chosen[dim];
        Ok(cv)
    };
    Ok(LocvResult {
        cv: [profile(0)?, profile(1)?, profile(2)?],
        chosen,
        table,
        labels: x.labels().to_vec(),
        per_label_error,
        eval_times,
        per_time_error,
        predictions: outcome.predictions.clone(),
    })
}

fn raw_targets(series: &[DiscreteSeries], labels: &[String], times: &[f64]) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let mut vals = DMatrix::zeros(labels.len(), times.len());
    let mut mask = DMatrix::zeros(labels.len(), times.len());
    for (i, label) in labels.iter().enumerate() {
        let s = series
            .iter()
            .find(|s| &s.label == label)
            .ok_or_else(|| FdaError::Alignment(format!("no raw series for label {label}")))?;
        for (j, &t) in times.iter().enumerate() {
            if let Some(v) = s.value_at(t) {
                vals[(i, j)] = v;
                mask[(i, j)] = 1.0;
            }
        }
    }
    Ok((vals, mask))
}
