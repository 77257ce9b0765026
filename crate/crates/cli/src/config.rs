//! Declarative run configuration, read from TOML.

use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use funflow_core::{BasisSystem, Interval, SelectionRule};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub input: InputConfig,
    pub domains: DomainConfig,
    #[serde(default)]
    pub preprocessing: Preprocessing,
    pub basis: BasisRoles,
    pub lambda: LambdaRoles,
    #[serde(default)]
    pub cv: CvConfig,
    pub models: Vec<ModelKind>,
    #[serde(default)]
    pub ann: AnnConfig,
    pub output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputConfig {
    pub covariate: PathBuf,
    pub response: PathBuf,
    /// `daily` for a `date,value` file, `scalar` for one `label,value` row per year.
    #[serde(default)]
    pub response_kind: ResponseKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResponseKind {
    #[default]
    Daily,
    Scalar,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainConfig {
    pub response: [f64; 2],
    pub covariate: [f64; 2],
    /// Day zero as `MM-DD`.
    #[serde(default = "default_anchor")]
    pub anchor: String,
}

fn default_anchor() -> String {
    "06-01".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Preprocessing {
    #[serde(default)]
    pub log_covariate: bool,
    #[serde(default)]
    pub log_response: bool,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
}

fn default_epsilon() -> f64 {
    0.05
}

impl Default for Preprocessing {
    fn default() -> Self {
        Preprocessing { log_covariate: false, log_response: false, epsilon: default_epsilon() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BasisKindSpec {
    Bspline,
    Fourier,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasisSpec {
    pub kind: BasisKindSpec,
    pub nbasis: usize,
    #[serde(default = "default_order")]
    pub order: usize,
}

fn default_order() -> usize {
    4
}

impl BasisSpec {
    pub fn build(&self, domain: Interval) -> funflow_core::Result<BasisSystem> {
        match self.kind {
            BasisKindSpec::Bspline => BasisSystem::bspline(domain, self.nbasis, self.order),
            BasisKindSpec::Fourier => BasisSystem::fourier(domain, self.nbasis),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct BasisRoles {
    pub smoothing_x: BasisSpec,
    pub smoothing_y: Option<BasisSpec>,
    pub beta_s: BasisSpec,
    pub beta_t: Option<BasisSpec>,
    pub alpha: Option<BasisSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct LambdaRoles {
    pub smoothing_x: Vec<f64>,
    #[serde(default)]
    pub smoothing_y: Vec<f64>,
    pub beta_s: Vec<f64>,
    #[serde(default)]
    pub beta_t: Vec<f64>,
    #[serde(default)]
    pub alpha: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RuleSpec {
    Minimum,
    OneSe,
}

impl From<RuleSpec> for SelectionRule {
    fn from(r: RuleSpec) -> Self {
        match r {
            RuleSpec::Minimum => SelectionRule::Minimum,
            RuleSpec::OneSe => SelectionRule::LowestWithinOneSE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CvConfig {
    #[serde(default = "default_folds")]
    pub folds: usize,
    #[serde(default = "default_rule")]
    pub rule: RuleSpec,
    #[serde(default)]
    pub seed: u64,
}

fn default_folds() -> usize {
    5
}

fn default_rule() -> RuleSpec {
    RuleSpec::Minimum
}

impl Default for CvConfig {
    fn default() -> Self {
        CvConfig { folds: default_folds(), rule: default_rule(), seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Flms,
    Flmf,
    Lm,
    Ann,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Flms => "flms",
            ModelKind::Flmf => "flmf",
            ModelKind::Lm => "lm",
            ModelKind::Ann => "ann",
        }
    }
}

/// Lagged network settings. The training seed is the run seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnConfig {
    #[serde(default = "default_lags")]
    pub lags: usize,
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default = "default_epochs")]
    pub max_epochs: usize,
    #[serde(default = "default_step")]
    pub step_size: f64,
    #[serde(default = "default_patience")]
    pub patience: usize,
}

fn default_lags() -> usize {
    3
}
fn default_hidden() -> Vec<usize> {
    vec![5]
}
fn default_epochs() -> usize {
    4000
}
fn default_step() -> f64 {
    0.1
}
fn default_patience() -> usize {
    200
}

impl Default for AnnConfig {
    fn default() -> Self {
        AnnConfig {
            lags: default_lags(),
            hidden: default_hidden(),
            max_epochs: default_epochs(),
            step_size: default_step(),
            patience: default_patience(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl RunConfig {
    /// Reads and validates a config; relative paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut cfg: RunConfig = toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.input.covariate, &mut cfg.input.response, &mut cfg.output.dir] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let (x, y) = (self.covariate_domain()?, self.response_domain()?);
        if x.lo() > y.lo() {
            return Err(CliError::Config(format!(
                "covariate domain starts at {} after the response domain start {}",
                x.lo(),
                y.lo()
            )));
        }
        self.anchor()?;
        if !(self.preprocessing.epsilon > 0.0) {
            return Err(CliError::Config("preprocessing.epsilon must be positive".into()));
        }
        if self.models.is_empty() {
            return Err(CliError::Config("models is empty".into()));
        }
        let curves = self.models.iter().any(|m| matches!(m, ModelKind::Flmf | ModelKind::Ann));
        if curves && self.input.response_kind == ResponseKind::Scalar {
            return Err(CliError::Config("flmf and ann need a daily response".into()));
        }
        if curves || self.input.response_kind == ResponseKind::Daily {
            if self.basis.smoothing_y.is_none() || self.lambda.smoothing_y.is_empty() {
                return Err(CliError::Config("a daily response needs basis.smoothing-y and lambda.smoothing-y".into()));
            }
        }
        if self.models.contains(&ModelKind::Flmf)
            && (self.basis.beta_t.is_none() || self.basis.alpha.is_none() || self.lambda.beta_t.is_empty() || self.lambda.alpha.is_empty())
        {
            return Err(CliError::Config("flmf needs beta-t and alpha bases and λ grids".into()));
        }
        if self.models.contains(&ModelKind::Ann) && (self.ann.lags == 0 || self.ann.hidden.is_empty()) {
            return Err(CliError::Config("ann needs lags ≥ 1 and at least one hidden size".into()));
        }
        Ok(())
    }

    pub fn covariate_domain(&self) -> Result<Interval, CliError> {
        Interval::new(self.domains.covariate[0], self.domains.covariate[1]).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn response_domain(&self) -> Result<Interval, CliError> {
        Interval::new(self.domains.response[0], self.domains.response[1]).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Anchor as (month, day).
    pub fn anchor(&self) -> Result<(u32, u32), CliError> {
        parse_anchor(&self.domains.anchor)
    }
}

pub fn parse_anchor(s: &str) -> Result<(u32, u32), CliError> {
    let bad = || CliError::Config(format!("anchor `{s}` is not MM-DD"));
    let (m, d) = s.split_once('-').ok_or_else(bad)?;
    let (m, d): (u32, u32) = (m.parse().map_err(|_| bad())?, d.parse().map_err(|_| bad())?);
    // 2000 is a leap year, so 02-29 is accepted here.
    NaiveDate::from_ymd_opt(2000, m, d).ok_or_else(bad)?;
    Ok((m, d))
}
