//! CSV and JSON writers. Numbers carry 9 significant digits.

use std::path::{Path, PathBuf};

use funflow_core::metrics::CriteriaRow;
use funflow_core::CVResult;
use serde::Serialize;

use crate::error::CliError;

/// Rounds to 9 significant digits and prints the shortest text that parses
/// back to the rounded value.
pub fn fmt9(v: f64) -> String {
    if !v.is_finite() {
        return format!("{v}");
    }
    let rounded: f64 = format!("{v:.8e}").parse().expect("formatted float parses");
    format!("{rounded}")
}

/// Collects rows in memory; nothing touches disk until [`Table::write`].
pub struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Table { header: header.iter().map(|s| s.to_string()).collect(), rows: vec![] }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn push_nums(&mut self, lead: &[&str], nums: &[f64]) {
        let mut row: Vec<String> = lead.iter().map(|s| s.to_string()).collect();
        row.extend(nums.iter().map(|&v| fmt9(v)));
        self.push(row);
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        let mut w = csv::Writer::from_path(path).map_err(|e| CliError::io(path, e))?;
        w.write_record(&self.header).map_err(|e| CliError::io(path, e))?;
        for r in &self.rows {
            w.write_record(r).map_err(|e| CliError::io(path, e))?;
        }
        w.flush().map_err(|e| CliError::io(path, e))
    }
}

/// `lambda,score,se,rule,chosen` rows. A one-point grid is recorded as `fixed`.
pub fn cv_table(cv: &CVResult) -> Table {
    let mut t = Table::new(&["lambda", "score", "se", "rule", "chosen"]);
    let rule = if cv.grid.len() == 1 {
        "fixed"
    } else {
        match cv.rule {
            funflow_core::SelectionRule::Minimum => "minimum",
            funflow_core::SelectionRule::LowestWithinOneSE => "one-se",
        }
    };
    for i in 0..cv.grid.len() {
        let mut row = vec![fmt9(cv.grid[i]), fmt9(cv.scores[i]), fmt9(cv.ses[i]), rule.to_string()];
        row.push(if i == cv.chosen_index() { "1" } else { "0" }.into());
        t.push(row);
    }
    t
}

pub fn criteria_csv(rows: &[CriteriaRow]) -> Table {
    let mut t = Table::new(&["model_name", "bias", "rmse", "cv", "r2"]);
    for r in rows {
        t.push_nums(&[&r.model_name], &[r.bias, r.rmse, r.cv, r.r2]);
    }
    t
}

/// Reads a CSV written by [`Table::write`] back into strings.
pub fn read_table(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>), CliError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| CliError::io(path, e))?;
    let header = r.headers().map_err(|e| CliError::io(path, e))?.iter().map(String::from).collect();
    let mut rows = vec![];
    for rec in r.records() {
        rows.push(rec.map_err(|e| CliError::io(path, e))?.iter().map(String::from).collect());
    }
    Ok((header, rows))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::io(path, e))?;
    std::fs::write(path, text + "\n").map_err(|e| CliError::io(path, e))
}

pub fn ensure_dir(dir: &Path) -> Result<PathBuf, CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    Ok(dir.to_path_buf())
}
