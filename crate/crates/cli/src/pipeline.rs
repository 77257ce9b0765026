//! Stage orchestration: ingest, smooth, fit, evaluate, export.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use funflow_core::baselines::{
    agg_lm_loocv, fit_agg_lm, lagged_training_set, net_horizon_cv, select_hidden, TrainConfig,
};
use funflow_core::flm_full::{alpha_curve, beta_surface, fit_flmf, locv_flmf, predict_flmf, FlmfBases, HeldOutTarget, Penalties};
use funflow_core::flm_scalar::{beta_confidence_band, fit_flms, loocv_flms};
use funflow_core::metrics::{criteria_table, CriteriaRow, ModelFit};
use funflow_core::smoothing::{preprocess_log, select_lambda, smooth};
use funflow_core::{BasisSystem, CVResult, DiffOperator, DiscreteSeries, FunctionalDataset, Interval, SelectionRule};
use serde::Serialize;

use crate::config::{ModelKind, ResponseKind, RunConfig};
use crate::error::{CliError, StageContext};
use crate::ingest::{export_csv, ingest_csv, read_scalar_csv, Rejected, SeriesTable};
use crate::output::{criteria_csv, cv_table, ensure_dir, fmt9, write_json, Table};

/// Which part of the pipeline a verb runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verb {
    Ingest,
    Smooth,
    FitScalar,
    FitFunctional,
    Baseline,
    Evaluate,
    Run,
}

impl Verb {
    fn models(self, cfg: &RunConfig) -> Vec<ModelKind> {
        let mut m = match self {
            Verb::Ingest | Verb::Smooth => vec![],
            Verb::FitScalar => vec![ModelKind::Flms],
            Verb::FitFunctional => vec![ModelKind::Flmf],
            Verb::Baseline => {
                let b: Vec<ModelKind> = cfg.models.iter().copied().filter(|m| matches!(m, ModelKind::Lm | ModelKind::Ann)).collect();
                if b.is_empty() {
                    vec![ModelKind::Lm]
                } else {
                    b
                }
            }
            Verb::Evaluate | Verb::Run => cfg.models.clone(),
        };
        m.dedup();
        m
    }

    /// Evaluate writes only the comparison table, CV curves and manifest.
    fn exports_curves(self) -> bool {
        self != Verb::Evaluate
    }
}

/// What a run produced.
#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub out_dir: PathBuf,
    pub n: usize,
    pub labels: Vec<String>,
    pub files: Vec<String>,
    pub criteria: Vec<CriteriaRow>,
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    core_version: &'static str,
    verb: Verb,
    config: &'a RunConfig,
    seed: u64,
    n: usize,
    labels: &'a [String],
    rejected: BTreeMap<&'static str, Vec<Rejected>>,
    selected: &'a BTreeMap<String, f64>,
    files: &'a [String],
    timings_ms: &'a BTreeMap<String, u128>,
}

/// Data shared by the model stages.
struct Prepared {
    labels: Vec<String>,
    x_raw: Vec<DiscreteSeries>,
    x: Vec<DiscreteSeries>,
    y_daily: Option<Vec<DiscreteSeries>>,
    y_scalar: Vec<f64>,
    rejected: BTreeMap<&'static str, Vec<Rejected>>,
}

struct Run<'a> {
    cfg: &'a RunConfig,
    out: PathBuf,
    seed: u64,
    files: Vec<String>,
    timings: BTreeMap<String, u128>,
    selected: BTreeMap<String, f64>,
}

impl Run<'_> {
    fn write(&mut self, name: &str, table: &Table) -> Result<(), CliError> {
        table.write(&self.out.join(name))?;
        self.files.push(name.to_string());
        Ok(())
    }

    fn timed<T>(&mut self, stage: &str, f: impl FnOnce(&mut Self) -> Result<T, CliError>) -> Result<T, CliError> {
        let start = Instant::now();
        log::info!("stage {stage}");
        let r = f(self);
        self.timings.insert(stage.to_string(), start.elapsed().as_millis());
        r
    }

    fn rule(&self) -> SelectionRule {
        self.cfg.cv.rule.into()
    }
}

/// Placeholder CV record for a one-point grid.
fn fixed(lambda: f64) -> CVResult {
    CVResult { grid: vec![lambda], scores: vec![f64::NAN], ses: vec![f64::NAN], chosen: lambda, rule: SelectionRule::Minimum }
}

fn align(x: SeriesTable, response: ResponseData) -> Result<Prepared, CliError> {
    let mut rejected = BTreeMap::new();
    rejected.insert("covariate", x.rejected.clone());
    let resp_labels: Vec<String> = match &response {
        ResponseData::Daily(t) => {
            rejected.insert("response", t.rejected.clone());
            t.labels()
        }
        ResponseData::Scalar(v) => v.iter().map(|(l, _)| l.clone()).collect(),
    };
    let labels: Vec<String> = x.labels().into_iter().filter(|l| resp_labels.contains(l)).collect();
    for l in x.labels().iter().chain(&resp_labels) {
        if !labels.contains(l) {
            log::warn!("label {l} is present in only one input and is dropped");
        }
    }
    if labels.is_empty() {
        return Err(CliError::NoData("covariate and response share no labels".into()));
    }
    log::info!("{} labels after alignment", labels.len());
    let x_raw: Vec<DiscreteSeries> = labels.iter().map(|l| x.get(l).expect("aligned").clone()).collect();
    let (y_daily, y_scalar) = match response {
        ResponseData::Daily(t) => {
            let ys: Vec<DiscreteSeries> = labels.iter().map(|l| t.get(l).expect("aligned").clone()).collect();
            // Scalar response from daily data: log of the total over the response domain.
            let mut totals = vec![];
            for s in &ys {
                let total: f64 = s.values().iter().sum();
                if !(total > 0.0) {
                    return Err(CliError::NoData(format!("label {}: response total {total} has no logarithm", s.label)));
                }
                totals.push(total.ln());
            }
            (Some(ys), totals)
        }
        ResponseData::Scalar(v) => (None, labels.iter().map(|l| v.iter().find(|(k, _)| k == l).expect("aligned").1).collect()),
    };
    Ok(Prepared { labels, x: x_raw.clone(), x_raw, y_daily, y_scalar, rejected })
}

enum ResponseData {
    Daily(SeriesTable),
    Scalar(Vec<(String, f64)>),
}

fn log_series(series: &[DiscreteSeries], epsilon: f64) -> Result<Vec<DiscreteSeries>, CliError> {
    series
        .iter()
        .map(|s| DiscreteSeries::new(s.label.clone(), s.times().to_vec(), preprocess_log(s.values(), epsilon)?))
        .collect::<funflow_core::Result<_>>()
        .stage("preprocess")
}

fn curves_table(ds: &FunctionalDataset, grid: &[f64]) -> Result<Table, CliError> {
    let vals = ds.eval(grid).stage("export")?;
    let mut t = Table::new(&["label", "t", "value"]);
    for (i, label) in ds.labels().iter().enumerate() {
        for (j, &tt) in grid.iter().enumerate() {
            t.push_nums(&[label], &[tt, vals[(i, j)]]);
        }
    }
    Ok(t)
}

/// Completes a daily series on `days`, taking absent days from the smoothed curve.
fn fill_gaps(raw: &DiscreteSeries, smooth_row: &[f64], days: &[f64]) -> Result<DiscreteSeries, CliError> {
    let values = days.iter().zip(smooth_row).map(|(&t, &s)| raw.value_at(t).unwrap_or(s)).collect();
    DiscreteSeries::new(raw.label.clone(), days.to_vec(), values).stage("ann")
}

fn pooled(m: &nalgebra::DMatrix<f64>) -> Vec<f64> {
    m.row_iter().flat_map(|r| r.iter().copied().collect::<Vec<_>>()).collect()
}

fn smooth_stage(
    run: &mut Run<'_>,
    role: &str,
    series: &[DiscreteSeries],
    basis: &BasisSystem,
    grid: &[f64],
) -> Result<FunctionalDataset, CliError> {
    let cv = if grid.len() == 1 {
        fixed(grid[0])
    } else {
        select_lambda(series, basis, grid, run.cfg.cv.folds, run.rule(), DiffOperator::SECOND, run.seed).stage("smooth")?
    };
    run.selected.insert(format!("smoothing-{role}"), cv.chosen);
    run.write(&format!("cv_smoothing_{role}.csv"), &cv_table(&cv))?;
    let (ds, _) = smooth(series, basis, cv.chosen, DiffOperator::SECOND).stage("smooth")?;
    Ok(ds)
}

/// Runs `verb` with `cfg`, writing artifacts under the configured output directory.
pub fn run_pipeline(cfg: &RunConfig, verb: Verb) -> Result<RunSummary, CliError> {
    cfg.validate()?;
    let out = ensure_dir(&cfg.output.dir)?;
    let mut run = Run { cfg, out, seed: cfg.cv.seed, files: vec![], timings: BTreeMap::new(), selected: BTreeMap::new() };
    let result = execute(&mut run, verb);
    match result {
        Ok((prep, criteria)) => {
            let manifest = Manifest {
                tool: "funflow",
                version: env!("CARGO_PKG_VERSION"),
                core_version: funflow_core::VERSION,
                verb,
                config: cfg,
                seed: run.seed,
                n: prep.labels.len(),
                labels: &prep.labels,
                rejected: prep.rejected.clone(),
                selected: &run.selected,
                files: &run.files,
                timings_ms: &run.timings,
            };
            write_json(&run.out.join("manifest.json"), &manifest)?;
            Ok(RunSummary { out_dir: run.out.clone(), n: prep.labels.len(), labels: prep.labels, files: run.files, criteria })
        }
        Err(e) => {
            // Best effort: the original error matters more than a failed report write.
            let _ = write_json(&run.out.join("error.json"), &e.report());
            Err(e)
        }
    }
}

fn execute(run: &mut Run<'_>, verb: Verb) -> Result<(Prepared, Vec<CriteriaRow>), CliError> {
    let cfg = run.cfg;
    let anchor = cfg.anchor()?;
    let (xdom, ydom) = (cfg.covariate_domain()?, cfg.response_domain()?);

    let prep = run.timed("ingest", |run| {
        let x = ingest_csv(&cfg.input.covariate, anchor, xdom)?;
        let resp = match cfg.input.response_kind {
            ResponseKind::Daily => ResponseData::Daily(ingest_csv(&cfg.input.response, anchor, ydom)?),
            ResponseKind::Scalar => ResponseData::Scalar(read_scalar_csv(&cfg.input.response)?),
        };
        let mut prep = align(x, resp)?;
        if verb == Verb::Ingest {
            export_csv(&prep.x_raw, anchor, &run.out.join("ingested_covariate.csv"))?;
            run.files.push("ingested_covariate.csv".into());
            match &prep.y_daily {
                Some(y) => {
                    export_csv(y, anchor, &run.out.join("ingested_response.csv"))?;
                    run.files.push("ingested_response.csv".into());
                }
                None => {
                    let mut t = Table::new(&["label", "value"]);
                    for (l, v) in prep.labels.iter().zip(&prep.y_scalar) {
                        t.push(vec![l.clone(), format!("{v}")]);
                    }
                    run.write("ingested_response.csv", &t)?;
                }
            }
        }
        if cfg.preprocessing.log_covariate {
            prep.x = log_series(&prep.x, cfg.preprocessing.epsilon)?;
        }
        if cfg.preprocessing.log_response {
            if let Some(y) = &prep.y_daily {
                prep.y_daily = Some(log_series(y, cfg.preprocessing.epsilon)?);
            }
        }
        Ok(prep)
    })?;
    if verb == Verb::Ingest {
        return Ok((prep, vec![]));
    }

    let models = verb.models(cfg);
    let exports = verb.exports_curves();
    let needs_y_curves = verb == Verb::Smooth || models.iter().any(|m| matches!(m, ModelKind::Flmf | ModelKind::Ann));
    let (xs, ys) = run.timed("smooth", |run| {
        let xb = cfg.basis.smoothing_x.build(xdom).stage("smooth")?;
        let xs = smooth_stage(run, "x", &prep.x, &xb, &cfg.lambda.smoothing_x)?;
        if exports {
            run.write("smoothed_x.csv", &curves_table(&xs, &xdom.daily_grid())?)?;
        }
        let ys = match (&prep.y_daily, needs_y_curves) {
            (Some(y), true) => {
                let spec = cfg.basis.smoothing_y.as_ref().expect("validated");
                let yb = spec.build(ydom).stage("smooth")?;
                let ys = smooth_stage(run, "y", y, &yb, &cfg.lambda.smoothing_y)?;
                if exports {
                    run.write("smoothed_y.csv", &curves_table(&ys, &ydom.daily_grid())?)?;
                }
                Some(ys)
            }
            _ => None,
        };
        Ok((xs, ys))
    })?;

    let mut fits: Vec<(ModelKind, Vec<f64>, Vec<f64>, f64)> = vec![];
    for model in models {
        let fit = match model {
            ModelKind::Flms => run.timed("flms", |run| flms_stage(run, &xs, &prep.y_scalar, xdom, exports))?,
            ModelKind::Lm => run.timed("lm", |_| {
                let m = fit_agg_lm(&prep.x_raw, &prep.y_scalar).stage("lm")?;
                let cv = agg_lm_loocv(&prep.x_raw, &prep.y_scalar).stage("lm")?;
                log::info!("lm slope {} (p = {})", m.slope, m.p_value);
                Ok((prep.y_scalar.clone(), m.predict_series(&prep.x_raw), cv))
            })?,
            ModelKind::Flmf => {
                let ys = ys.as_ref().expect("validated: daily response");
                run.timed("flmf", |run| flmf_stage(run, &xs, ys, xdom, ydom, exports))?
            }
            ModelKind::Ann => {
                let ys = ys.as_ref().expect("validated: daily response");
                let y_daily = prep.y_daily.as_ref().expect("validated: daily response");
                run.timed("ann", |run| ann_stage(run, &prep.x, &xs, y_daily, ys, xdom, exports))?
            }
        };
        fits.push((model, fit.0, fit.1, fit.2));
    }
    if fits.is_empty() {
        return Ok((prep, vec![]));
    }
    let rows: Vec<ModelFit<'_>> =
        fits.iter().map(|(m, a, f, cv)| ModelFit { name: m.name(), actual: a, fitted: f, cv_score: *cv }).collect();
    let criteria = criteria_table(&rows).stage("evaluate")?;
    run.write("criteria.csv", &criteria_csv(&criteria))?;
    Ok((prep, criteria))
}

type FitOutcome = (Vec<f64>, Vec<f64>, f64);

fn flms_stage(run: &mut Run<'_>, xs: &FunctionalDataset, y: &[f64], xdom: Interval, exports: bool) -> Result<FitOutcome, CliError> {
    let cfg = run.cfg;
    let bb = cfg.basis.beta_s.build(xdom).stage("flms")?;
    let grid = &cfg.lambda.beta_s;
    let cv = if grid.len() == 1 {
        fixed(grid[0])
    } else {
        loocv_flms(xs, y, &bb, grid, DiffOperator::SECOND, run.rule()).stage("flms")?
    };
    run.selected.insert("flms".into(), cv.chosen);
    run.write("cv_flms.csv", &cv_table(&cv))?;
    let (model, diag) = fit_flms(xs, y, &bb, cv.chosen, DiffOperator::SECOND).stage("flms")?;
    if exports {
        let band = beta_confidence_band(&model, &xdom.daily_grid(), 0.95).stage("flms")?;
        let mut t = Table::new(&["t", "lower", "estimate", "upper"]);
        for i in 0..band.times.len() {
            t.push_nums(&[], &[band.times[i], band.lower[i], band.center[i], band.upper[i]]);
        }
        run.write("flms_beta.csv", &t)?;
        let mut f = Table::new(&["label", "actual", "fitted"]);
        for (i, l) in xs.labels().iter().enumerate() {
            f.push_nums(&[l], &[y[i], diag.fitted[i]]);
        }
        run.write("flms_fitted.csv", &f)?;
    }
    Ok((y.to_vec(), diag.fitted, diag.loocv))
}

fn flmf_stage(
    run: &mut Run<'_>,
    xs: &FunctionalDataset,
    ys: &FunctionalDataset,
    xdom: Interval,
    ydom: Interval,
    exports: bool,
) -> Result<FitOutcome, CliError> {
    let cfg = run.cfg;
    let build = |spec: &crate::config::BasisSpec, d| spec.build(d).stage("flmf");
    let bases = FlmfBases {
        s: build(&cfg.basis.beta_s, xdom)?,
        t: build(cfg.basis.beta_t.as_ref().expect("validated"), ydom)?,
        alpha: build(cfg.basis.alpha.as_ref().expect("validated"), ydom)?,
    };
    let grids = [cfg.lambda.alpha.as_slice(), cfg.lambda.beta_s.as_slice(), cfg.lambda.beta_t.as_slice()];
    let locv = locv_flmf(xs, ys, &bases, grids, [DiffOperator::SECOND; 3], HeldOutTarget::Smoothed).stage("flmf")?;
    for (k, role) in ["alpha", "beta_s", "beta_t"].iter().enumerate() {
        let cv = &locv.cv[k];
        run.selected.insert(format!("flmf-{}", role.replace('_', "-")), locv.chosen[k]);
        run.write(&format!("cv_flmf_{role}.csv"), &cv_table(cv))?;
    }
    let mut grid_t = Table::new(&["lambda_alpha", "lambda_s", "lambda_t", "score", "se"]);
    for (l, score, se) in &locv.table {
        grid_t.push_nums(&[], &[l[0], l[1], l[2], *score, *se]);
    }
    run.write("cv_flmf_grid.csv", &grid_t)?;

    let mut per_label = Table::new(&["label", "error"]);
    for (l, e) in locv.labels.iter().zip(&locv.per_label_error) {
        per_label.push_nums(&[l], &[*e]);
    }
    run.write("flmf_per_label.csv", &per_label)?;
    let mut per_time = Table::new(&["t", "error"]);
    for (t, e) in locv.eval_times.iter().zip(&locv.per_time_error) {
        per_time.push_nums(&[], &[*t, *e]);
    }
    run.write("flmf_per_time.csv", &per_time)?;

    let model = fit_flmf(xs, ys, &bases, Penalties { lambdas: locv.chosen, ops: [DiffOperator::SECOND; 3] }).stage("flmf")?;
    let days = ydom.daily_grid();
    if exports {
        let sdays = xdom.daily_grid();
        let surf = beta_surface(&model, &sdays, &days).stage("flmf")?;
        let mut t = Table::new(&["s", "t", "value"]);
        for (i, &s) in sdays.iter().enumerate() {
            for (j, &tt) in days.iter().enumerate() {
                t.push_nums(&[], &[s, tt, surf[(i, j)]]);
            }
        }
        run.write("flmf_surface.csv", &t)?;
        let alpha = alpha_curve(&model, &days).stage("flmf")?;
        let mut a = Table::new(&["t", "value"]);
        for (t, v) in days.iter().zip(&alpha) {
            a.push_nums(&[], &[*t, *v]);
        }
        run.write("flmf_alpha.csv", &a)?;
    }
    let actual = pooled(&ys.eval(&days).stage("flmf")?);
    let fitted = pooled(&predict_flmf(&model, xs).stage("flmf")?.dataset.eval(&days).stage("flmf")?);
    let cv = locv.per_label_error.iter().sum::<f64>() / locv.per_label_error.len() as f64;
    Ok((actual, fitted, cv))
}

fn ann_stage(
    run: &mut Run<'_>,
    x: &[DiscreteSeries],
    xs: &FunctionalDataset,
    y: &[DiscreteSeries],
    ys: &FunctionalDataset,
    xdom: Interval,
    exports: bool,
) -> Result<FitOutcome, CliError> {
    let a = &run.cfg.ann;
    let days = xdom.daily_grid();
    let smooth_x = xs.eval(&days).stage("ann")?;
    let filled: Vec<DiscreteSeries> = x
        .iter()
        .enumerate()
        .map(|(i, s)| fill_gaps(s, &smooth_x.row(i).iter().copied().collect::<Vec<_>>(), &days))
        .collect::<Result<_, _>>()?;
    let mut config = TrainConfig {
        hidden: a.hidden[0],
        max_epochs: a.max_epochs,
        step_size: a.step_size,
        patience: a.patience,
        seed: run.seed,
        ..TrainConfig::default()
    };
    if a.hidden.len() > 1 {
        let (f, t, groups) = lagged_training_set(&filled, y, a.lags).stage("ann")?;
        let (h, scores) = select_hidden(&f, &t, &groups, &a.hidden, config).stage("ann")?;
        let mut tab = Table::new(&["hidden", "score", "chosen"]);
        for (c, s) in a.hidden.iter().zip(&scores) {
            tab.push(vec![c.to_string(), fmt9(*s), if *c == h { "1" } else { "0" }.into()]);
        }
        run.write("cv_ann_hidden.csv", &tab)?;
        config.hidden = h;
    }
    run.selected.insert("ann-hidden".into(), config.hidden as f64);
    let hc = net_horizon_cv(&filled, y, ys, a.lags, config).stage("ann")?;
    if exports {
        let mut per_label = Table::new(&["label", "error"]);
        for (l, e) in hc.labels.iter().zip(&hc.per_label_error) {
            per_label.push_nums(&[l], &[*e]);
        }
        run.write("ann_per_label.csv", &per_label)?;
        let mut per_time = Table::new(&["t", "horizon", "error"]);
        for (h, (t, e)) in hc.forecast_times.iter().zip(&hc.per_time_error).enumerate() {
            per_time.push(vec![fmt9(*t), (h + 1).to_string(), fmt9(*e)]);
        }
        run.write("ann_per_time.csv", &per_time)?;
    }
    let actual = pooled(&ys.eval(&hc.forecast_times).stage("ann")?);
    let fitted = pooled(&hc.fitted);
    let cv = hc.per_label_error.iter().sum::<f64>() / hc.per_label_error.len() as f64;
    Ok((actual, fitted, cv))
}

/// Writes a synthetic scenario as covariate/response CSVs plus ground truth.
pub fn write_synthetic(scenario: &str, seed: u64, n: usize, out: &Path) -> Result<Vec<String>, CliError> {
    use funflow_core::synth::{generate, GroundTruth, Response, Scenario};
    let sc: Scenario = scenario.parse().map_err(|e: funflow_core::FdaError| CliError::Config(e.to_string()))?;
    let data = generate(sc, seed, n).stage("synth")?;
    ensure_dir(out)?;
    let anchor = (6, 1);
    let mut files = vec!["covariate.csv".to_string(), "response.csv".to_string()];
    export_csv(&data.covariate, anchor, &out.join("covariate.csv"))?;
    match &data.response {
        Response::Scalar(y) => {
            let mut t = Table::new(&["label", "value"]);
            for (l, v) in data.labels.iter().zip(y) {
                t.push(vec![l.clone(), format!("{v}")]);
            }
            t.write(&out.join("response.csv"))?;
        }
        Response::Curves(c) => export_csv(c, anchor, &out.join("response.csv"))?,
    }
    match &data.truth {
        GroundTruth::Curve { times, values } => {
            let mut t = Table::new(&["t", "value"]);
            for (a, b) in times.iter().zip(values) {
                t.push_nums(&[], &[*a, *b]);
            }
            t.write(&out.join("truth_beta.csv"))?;
        }
        GroundTruth::Surface { s, t: tt, values } => {
            let mut t = Table::new(&["s", "t", "value"]);
            for (i, a) in s.iter().enumerate() {
                for (j, b) in tt.iter().enumerate() {
                    t.push_nums(&[], &[*a, *b, values[(i, j)]]);
                }
            }
            t.write(&out.join("truth_beta.csv"))?;
        }
    }
    files.push("truth_beta.csv".into());
    Ok(files)
}
