use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{FdaError, Result};
use crate::par_map;
use crate::smoothing::{DiscreteSeries, FunctionalDataset};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Tanh,
}

/// Per-column affine map to zero mean and unit variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn identity(width: usize) -> Self {
        Standardizer { mean: vec![0.0; width], scale: vec![1.0; width] }
    }

    fn fit_columns(m: &DMatrix<f64>) -> Self {
        let n = m.nrows() as f64;
        let mut mean = Vec::with_capacity(m.ncols());
        let mut scale = Vec::with_capacity(m.ncols());
        for col in m.column_iter() {
            let mu = col.sum() / n;
            let var = col.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n;
            mean.push(mu);
            scale.push(if var > 0.0 { var.sqrt() } else { 1.0 });
        }
        Standardizer { mean, scale }
    }

    fn apply(&self, j: usize, v: f64) -> f64 {
        (v - self.mean[j]) / self.scale[j]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub hidden: usize,
    pub max_epochs: usize,
    pub step_size: f64,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    /// Trailing fraction of rows held out for early stopping; 0 disables it.
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { hidden: 5, max_epochs: 4000, step_size: 0.1, patience: 200, validation_fraction: 0.2, seed: 0 }
    }
}

/// One-hidden-layer network with tanh units and a linear output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaggedNetModel {
    pub lags: usize,
    pub hidden: usize,
    /// `hidden × inputs`.
    pub w1: DMatrix<f64>,
    pub b1: DVector<f64>,
    pub w2: DVector<f64>,
    pub b2: f64,
    pub activation: Activation,
    pub seed: u64,
    pub train_config: TrainConfig,
    pub input_scaling: Standardizer,
    pub target_mean: f64,
    pub target_scale: f64,
    /// Predictions on the training features after the final epoch.
    pub fitted: Vec<f64>,
    pub epochs_run: usize,
}

impl LaggedNetModel {
    /// Builds a model from explicit weights with identity scaling.
    pub fn from_weights(w1: DMatrix<f64>, b1: DVector<f64>, w2: DVector<f64>, b2: f64) -> Self {
        let inputs = w1.ncols();
        LaggedNetModel {
            lags: inputs,
            hidden: w1.nrows(),
            w1,
            b1,
            w2,
            b2,
            activation: Activation::Tanh,
            seed: 0,
            train_config: TrainConfig::default(),
            input_scaling: Standardizer::identity(inputs),
            target_mean: 0.0,
            target_scale: 1.0,
            fitted: vec![],
            epochs_run: 0,
        }
    }

    pub fn inputs(&self) -> usize {
        self.w1.ncols()
    }

    /// Output in standardized target units for an already standardized input row.
    fn forward_std(&self, x: &[f64], hidden_out: &mut [f64]) -> f64 {
        let mut out = self.b2;
        for h in 0..self.hidden {
            let mut a = self.b1[h];
            for (j, xj) in x.iter().enumerate() {
                a += self.w1[(h, j)] * xj;
            }
            let z = a.tanh();
            hidden_out[h] = z;
            out += self.w2[h] * z;
        }
        out
    }

    fn standardized_rows(&self, features: &DMatrix<f64>) -> Vec<Vec<f64>> {
        (0..features.nrows())
            .map(|i| (0..features.ncols()).map(|j| self.input_scaling.apply(j, features[(i, j)])).collect())
            .collect()
    }

    fn params(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.hidden * (self.inputs() + 2) + 1);
        for h in 0..self.hidden {
            for j in 0..self.inputs() {
                p.push(self.w1[(h, j)]);
            }
        }
        p.extend(self.b1.iter());
        p.extend(self.w2.iter());
        p.push(self.b2);
        p
    }

    /// Replaces all weights from a flat vector ordered as [`LaggedNetModel::params`].
    pub fn set_params(&mut self, p: &[f64]) {
        let (hd, inp) = (self.hidden, self.inputs());
        for h in 0..hd {
            for j in 0..inp {
                self.w1[(h, j)] = p[h * inp + j];
            }
        }
        let o = hd * inp;
        for h in 0..hd {
            self.b1[h] = p[o + h];
            self.w2[h] = p[o + hd + h];
        }
        self.b2 = p[o + 2 * hd];
    }

    pub fn param_vector(&self) -> Vec<f64> {
        self.params()
    }
}

/// Rows of previous values `(z(t−1), …, z(t−lags))` for each horizon time.
pub fn make_lag_matrix(x: &DiscreteSeries, lags: usize, horizon_times: &[f64]) -> Result<DMatrix<f64>> {
    if lags == 0 {
        return Err(FdaError::InvalidData("lags must be at least 1".into()));
    }
    let mut m = DMatrix::zeros(horizon_times.len(), lags);
    for (i, &t) in horizon_times.iter().enumerate() {
        for k in 1..=lags {
            m[(i, k - 1)] = x.value_at(t - k as f64).ok_or(FdaError::History { time: t, lags })?;
        }
    }
    Ok(m)
}

/// Concatenates matrices with equal row counts side by side.
pub fn hstack(parts: &[DMatrix<f64>]) -> Result<DMatrix<f64>> {
    let rows = parts.first().map_or(0, |p| p.nrows());
    if parts.iter().any(|p| p.nrows() != rows) {
        return Err(FdaError::Shape("cannot stack matrices with different row counts".into()));
    }
    let cols = parts.iter().map(|p| p.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut c = 0;
    for p in parts {
        out.view_mut((0, c), (rows, p.ncols())).copy_from(p);
        c += p.ncols();
    }
    Ok(out)
}

/// Mean squared error in standardized target units and its gradient with
/// respect to the flat parameter vector.
pub fn loss_and_gradient(model: &LaggedNetModel, features: &DMatrix<f64>, targets: &[f64]) -> (f64, Vec<f64>) {
    let rows = model.standardized_rows(features);
    let ys: Vec<f64> = targets.iter().map(|t| (t - model.target_mean) / model.target_scale).collect();
    loss_grad_std(model, &rows, &ys)
}

fn loss_grad_std(model: &LaggedNetModel, rows: &[Vec<f64>], ys: &[f64]) -> (f64, Vec<f64>) {
    let (hd, inp) = (model.hidden, model.inputs());
    let mut grad = vec![0.0; hd * inp + 2 * hd + 1];
    let mut hidden = vec![0.0; hd];
    let mut loss = 0.0;
    let n = rows.len() as f64;
    for (x, &y) in rows.iter().zip(ys) {
        let out = model.forward_std(x, &mut hidden);
        let err = out - y;
        loss += err * err;
        let g_out = 2.0 * err / n;
        let o = hd * inp;
        for h in 0..hd {
            grad[o + hd + h] += g_out * hidden[h];
            let g_a = g_out * model.w2[h] * (1.0 - hidden[h] * hidden[h]);
            grad[o + h] += g_a;
            for (j, xj) in x.iter().enumerate() {
                grad[h * inp + j] += g_a * xj;
            }
        }
        grad[o + 2 * hd] += g_out;
    }
    (loss / n, grad)
}

fn mse_std(model: &LaggedNetModel, rows: &[Vec<f64>], ys: &[f64]) -> f64 {
    let mut hidden = vec![0.0; model.hidden];
    rows.iter().zip(ys).map(|(x, y)| (model.forward_std(x, &mut hidden) - y).powi(2)).sum::<f64>() / rows.len() as f64
}

/// Trains by full-batch gradient descent with early stopping on a trailing
/// validation block; the best-validation weights are kept.
pub fn fit_lagged_net(features: &DMatrix<f64>, targets: &[f64], config: TrainConfig) -> Result<LaggedNetModel> {
    if features.nrows() != targets.len() {
        return Err(FdaError::Shape(format!("{} feature rows for {} targets", features.nrows(), targets.len())));
    }
    if targets.len() < 10 {
        return Err(FdaError::InsufficientData(format!("need at least 10 training rows, got {}", targets.len())));
    }
    if config.hidden == 0 || features.ncols() == 0 {
        return Err(FdaError::Shape("network needs at least one input and one hidden unit".into()));
    }
    let inputs = features.ncols();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let bound = (6.0 / (inputs + config.hidden) as f64).sqrt();
    let w1 = DMatrix::from_fn(config.hidden, inputs, |_, _| rng.random_range(-bound..bound));
    let mut model = LaggedNetModel::from_weights(w1, DVector::zeros(config.hidden), DVector::zeros(config.hidden), 0.0);
    model.lags = inputs;
    model.seed = config.seed;
    model.train_config = config;
    model.input_scaling = Standardizer::fit_columns(features);
    let tcol = DMatrix::from_column_slice(targets.len(), 1, targets);
    let ts = Standardizer::fit_columns(&tcol);
    model.target_mean = ts.mean[0];
    model.target_scale = ts.scale[0];

    let rows = model.standardized_rows(features);
    let ys: Vec<f64> = targets.iter().map(|t| (t - model.target_mean) / model.target_scale).collect();
    let n_val = ((rows.len() as f64) * config.validation_fraction.clamp(0.0, 0.5)).floor() as usize;
    let split = rows.len() - n_val;
    let (train_x, val_x) = rows.split_at(split);
    let (train_y, val_y) = ys.split_at(split);

    let mut params = model.params();
    let mut best = (f64::INFINITY, params.clone());
    let mut since_best = 0;
    let mut epochs = 0;
    for epoch in 0..config.max_epochs {
        let (loss, grad) = loss_grad_std(&model, train_x, train_y);
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(FdaError::Divergence { epoch });
        }
        for (p, g) in params.iter_mut().zip(&grad) {
            *p -= config.step_size * g;
        }
        model.set_params(&params);
        epochs = epoch + 1;
        if n_val > 0 {
            let v = mse_std(&model, val_x, val_y);
            if !v.is_finite() {
                return Err(FdaError::Divergence { epoch });
            }
            if v < best.0 {
                best = (v, params.clone());
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= config.patience {
                    break;
                }
            }
        }
    }
    if n_val > 0 {
        model.set_params(&best.1);
    }
    model.epochs_run = epochs;
    model.fitted = predict_lagged_net(&model, features)?;
    Ok(model)
}

pub fn predict_lagged_net(model: &LaggedNetModel, features: &DMatrix<f64>) -> Result<Vec<f64>> {
    if features.ncols() != model.inputs() {
        return Err(FdaError::Shape(format!(
            "network expects {} inputs, got {}",
            model.inputs(),
            features.ncols()
        )));
    }
    let mut hidden = vec![0.0; model.hidden];
    Ok(model
        .standardized_rows(features)
        .iter()
        .map(|x| model.target_mean + model.target_scale * model.forward_std(x, &mut hidden))
        .collect())
}

/// Leave-one-group-out selection of the hidden-layer size; ties go to the
/// smaller network. Returns the chosen size and the score of each candidate.
pub fn select_hidden(
    features: &DMatrix<f64>,
    targets: &[f64],
    groups: &[usize],
    candidates: &[usize],
    config: TrainConfig,
) -> Result<(usize, Vec<f64>)> {
    if groups.len() != targets.len() {
        return Err(FdaError::Shape("one group id per row is required".into()));
    }
    let mut ids: Vec<usize> = groups.to_vec();
    ids.sort_unstable();
    ids.dedup();
    let scores: Vec<Result<f64>> = par_map(candidates, |&hidden| {
        let cfg = TrainConfig { hidden, ..config };
        let mut sq = 0.0;
        for &g in &ids {
            let train: Vec<usize> = (0..groups.len()).filter(|&i| groups[i] != g).collect();
            let test: Vec<usize> = (0..groups.len()).filter(|&i| groups[i] == g).collect();
            let ty: Vec<f64> = train.iter().map(|&i| targets[i]).collect();
            let model = fit_lagged_net(&features.select_rows(&train), &ty, cfg)?;
            let pred = predict_lagged_net(&model, &features.select_rows(&test))?;
            sq += test.iter().zip(&pred).map(|(&i, p)| (p - targets[i]).powi(2)).sum::<f64>();
        }
        Ok(sq / targets.len() as f64)
    });
    let scores: Vec<f64> = scores.into_iter().collect::<Result<_>>()?;
    let mut best = 0;
    for (i, s) in scores.iter().enumerate() {
        if *s < scores[best] || (*s == scores[best] && candidates[i] < candidates[best]) {
            best = i;
        }
    }
    Ok((candidates[best], scores))
}

/// Multi-step forecast feeding predictions back as response lags.
///
/// Feature layout is `[y(t−1..t−lags), x(t−1..t−lags)]`. `history` holds the
/// `lags` response values preceding `times[0]`, oldest first.
pub fn forecast_recursive(
    model: &LaggedNetModel,
    lags: usize,
    history: &[f64],
    x: &DiscreteSeries,
    times: &[f64],
) -> Result<Vec<f64>> {
    if model.inputs() != 2 * lags || history.len() != lags {
        return Err(FdaError::Shape(format!("recursive forecasting needs {} inputs and {lags} history values", 2 * lags)));
    }
    let mut ys: Vec<f64> = history.to_vec();
    let mut row = DMatrix::zeros(1, 2 * lags);
    let mut out = Vec::with_capacity(times.len());
    for &t in times {
        for k in 1..=lags {
            row[(0, k - 1)] = ys[ys.len() - k];
            row[(0, lags + k - 1)] = x.value_at(t - k as f64).ok_or(FdaError::History { time: t, lags })?;
        }
        let y = predict_lagged_net(model, &row)?[0];
        ys.push(y);
        out.push(y);
    }
    Ok(out)
}

/// Leave-one-label-out evaluation of recursive network forecasts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonCv {
    pub labels: Vec<String>,
    /// Forecast days; horizon `h` is `forecast_times[h − 1]`.
    pub forecast_times: Vec<f64>,
    pub per_label_error: Vec<f64>,
    pub per_time_error: Vec<f64>,
    /// `n × |forecast_times|` held-out forecasts.
    pub predictions: DMatrix<f64>,
    /// Forecasts of each curve by the network trained on all labels.
    pub fitted: DMatrix<f64>,
}

fn training_rows(x: &[DiscreteSeries], y: &[DiscreteSeries], lags: usize, include: &[usize]) -> Result<(DMatrix<f64>, Vec<f64>)> {
    let mut parts = vec![];
    let mut targets = vec![];
    for &i in include {
        let times: Vec<f64> = y[i]
            .times()
            .iter()
            .copied()
            .filter(|&t| (1..=lags).all(|k| y[i].value_at(t - k as f64).is_some() && x[i].value_at(t - k as f64).is_some()))
            .collect();
        let m = hstack(&[make_lag_matrix(&y[i], lags, &times)?, make_lag_matrix(&x[i], lags, &times)?])?;
        parts.push(m);
        targets.extend(times.iter().map(|&t| y[i].value_at(t).expect("filtered above")));
    }
    let rows = parts.iter().map(|p| p.nrows()).sum();
    let mut out = DMatrix::zeros(rows, 2 * lags);
    let mut r = 0;
    for p in parts {
        out.view_mut((r, 0), (p.nrows(), p.ncols())).copy_from(&p);
        r += p.nrows();
    }
    Ok((out, targets))
}

/// Lagged feature rows of every label with the label index of each row,
/// ready for [`select_hidden`].
pub fn lagged_training_set(
    x: &[DiscreteSeries],
    y: &[DiscreteSeries],
    lags: usize,
) -> Result<(DMatrix<f64>, Vec<f64>, Vec<usize>)> {
    if x.len() != y.len() {
        return Err(FdaError::Alignment("covariate and response counts differ".into()));
    }
    let mut groups = vec![];
    for i in 0..y.len() {
        let (_, t) = training_rows(x, y, lags, &[i])?;
        groups.extend(std::iter::repeat_n(i, t.len()));
    }
    let idx: Vec<usize> = (0..y.len()).collect();
    let (f, t) = training_rows(x, y, lags, &idx)?;
    Ok((f, t, groups))
}

/// Trains on all labels but one, forecasts the held-out response recursively
/// from its first `lags` days, and scores against the held-out smoothed curve.
pub fn net_horizon_cv(
    x: &[DiscreteSeries],
    y: &[DiscreteSeries],
    truth: &FunctionalDataset,
    lags: usize,
    config: TrainConfig,
) -> Result<HorizonCv> {
    let n = y.len();
    if x.len() != n || truth.len() != n {
        return Err(FdaError::Alignment("covariate, response and curve counts differ".into()));
    }
    for i in 0..n {
        if x[i].label != y[i].label || truth.labels()[i] != y[i].label {
            return Err(FdaError::Alignment(format!("label mismatch at position {i}")));
        }
    }
    if n < 3 {
        return Err(FdaError::InsufficientData("need at least 3 labels".into()));
    }
    let domain = truth.basis().domain();
    let days = domain.daily_grid();
    if days.len() <= lags {
        return Err(FdaError::InsufficientData("response domain shorter than the lag window".into()));
    }
    let start = &days[..lags];
    let forecast_times = days[lags..].to_vec();
    let truth_vals = truth.eval(&forecast_times)?;
    let start_curve = truth.eval(start)?;

    let forecast = |model: &LaggedNetModel, i: usize| -> Result<Vec<f64>> {
        let history: Vec<f64> =
            start.iter().enumerate().map(|(j, &t)| y[i].value_at(t).unwrap_or(start_curve[(i, j)])).collect();
        forecast_recursive(model, lags, &history, &x[i], &forecast_times)
    };

    let idx: Vec<usize> = (0..n).collect();
    let folds: Vec<Result<Vec<f64>>> = par_map(&idx, |&i| {
        let others: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        let (f, t) = training_rows(x, y, lags, &others)?;
        let model = fit_lagged_net(&f, &t, config)?;
        forecast(&model, i)
    });
    let mut predictions = DMatrix::zeros(n, forecast_times.len());
    for (i, f) in folds.into_iter().enumerate() {
        let f = f?;
        for (j, v) in f.into_iter().enumerate() {
            predictions[(i, j)] = v;
        }
    }
    let (f, t) = training_rows(x, y, lags, &idx)?;
    let full = fit_lagged_net(&f, &t, config)?;
    let mut fitted = DMatrix::zeros(n, forecast_times.len());
    for i in 0..n {
        for (j, v) in forecast(&full, i)?.into_iter().enumerate() {
            fitted[(i, j)] = v;
        }
    }
    let err = (&predictions - &truth_vals).map(|v| v * v);
    let m = forecast_times.len() as f64;
    Ok(HorizonCv {
        labels: y.iter().map(|s| s.label.clone()).collect(),
        per_label_error: (0..n).map(|i| err.row(i).sum() / m).collect(),
        per_time_error: (0..forecast_times.len()).map(|j| err.column(j).sum() / n as f64).collect(),
        forecast_times,
        predictions,
        fitted,
    })
}
