//! Daily `date,value` CSV files to per-year series indexed by day of season.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::{Datelike, NaiveDate, TimeDelta};
use funflow_core::{DiscreteSeries, Interval};

use crate::error::CliError;

/// Labels with more than this fraction of missing days are rejected.
pub const MAX_MISSING: f64 = 0.10;

/// One variable's series, one per year label, plus rejected labels.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesTable {
    pub series: Vec<DiscreteSeries>,
    pub rejected: Vec<Rejected>,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct Rejected {
    pub label: String,
    pub missing_fraction: f64,
}

impl SeriesTable {
    pub fn labels(&self) -> Vec<String> {
        self.series.iter().map(|s| s.label.clone()).collect()
    }

    pub fn get(&self, label: &str) -> Option<&DiscreteSeries> {
        self.series.iter().find(|s| s.label == label)
    }
}

/// Day zero of `year`.
pub fn anchor_date(year: i32, anchor: (u32, u32)) -> Result<NaiveDate, CliError> {
    NaiveDate::from_ymd_opt(year, anchor.0, anchor.1)
        .ok_or_else(|| CliError::Config(format!("anchor {:02}-{:02} does not exist in {year}", anchor.0, anchor.1)))
}

fn check_header(path: &Path, reader: &mut csv::Reader<std::fs::File>, expect: [&str; 2]) -> Result<(), CliError> {
    let header = reader.headers().map_err(|e| CliError::io(path, e))?;
    let got: Vec<&str> = header.iter().map(str::trim).collect();
    if got != expect {
        return Err(CliError::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: format!("expected header `{}`, found `{}`", expect.join(","), got.join(",")),
        });
    }
    Ok(())
}

fn open(path: &Path) -> Result<csv::Reader<std::fs::File>, CliError> {
    csv::ReaderBuilder::new().has_headers(true).from_path(path).map_err(|e| CliError::io(path, e))
}

/// Reads a daily CSV and groups it by year.
///
/// Rows outside `domain` are dropped. Missing values are empty fields or
/// absent dates; the remaining days of an accepted label form its series.
pub fn ingest_csv(path: &Path, anchor: (u32, u32), domain: Interval) -> Result<SeriesTable, CliError> {
    let mut reader = open(path)?;
    check_header(path, &mut reader, ["date", "value"])?;
    let mut by_year: BTreeMap<i32, Vec<(f64, Option<f64>)>> = BTreeMap::new();
    let mut last: BTreeMap<i32, NaiveDate> = BTreeMap::new();
    for record in reader.records() {
        let record = record.map_err(|e| CliError::Parse {
            path: path.to_path_buf(),
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let fail = |message: String| CliError::Parse { path: path.to_path_buf(), line, message };
        if record.len() != 2 {
            return Err(fail(format!("expected 2 fields, found {}", record.len())));
        }
        let date = NaiveDate::parse_from_str(record[0].trim(), "%Y-%m-%d")
            .map_err(|e| fail(format!("invalid date `{}`: {e}", &record[0])))?;
        let raw = record[1].trim();
        let value = if raw.is_empty() {
            None
        } else {
            match raw.parse::<f64>() {
                Ok(v) if v.is_finite() => Some(v),
                _ => return Err(fail(format!("invalid value `{raw}`"))),
            }
        };
        let year = date.year();
        if let Some(prev) = last.insert(year, date) {
            if date <= prev {
                return Err(fail(format!("date {date} does not follow {prev}")));
            }
        }
        let day = (date - anchor_date(year, anchor)?).num_days() as f64;
        if domain.contains(day) {
            by_year.entry(year).or_default().push((day, value));
        }
    }

    let expected = domain.daily_grid().len() as f64;
    let mut series = vec![];
    let mut rejected = vec![];
    for (year, rows) in by_year {
        let label = year.to_string();
        let (times, values): (Vec<f64>, Vec<f64>) = rows.iter().filter_map(|&(t, v)| v.map(|v| (t, v))).unzip();
        let missing_fraction = 1.0 - times.len() as f64 / expected;
        if missing_fraction > MAX_MISSING || times.is_empty() {
            log::warn!("{}: label {label} rejected, {:.1}% of days missing", path.display(), 100.0 * missing_fraction);
            rejected.push(Rejected { label, missing_fraction });
            continue;
        }
        series.push(DiscreteSeries::new(label, times, values).map_err(|e| CliError::Parse {
            path: path.to_path_buf(),
            line: 0,
            message: e.to_string(),
        })?);
    }
    if series.is_empty() {
        return Err(CliError::NoData(format!("{}: no label inside [{}, {}] survived ingestion", path.display(), domain.lo(), domain.hi())));
    }
    Ok(SeriesTable { series, rejected })
}

/// Writes series back as `date,value`, with shortest round-trip float text.
pub fn export_csv(series: &[DiscreteSeries], anchor: (u32, u32), path: &Path) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::io(path, e))?;
    w.write_record(["date", "value"]).map_err(|e| CliError::io(path, e))?;
    for s in series {
        let year: i32 = s.label.parse().map_err(|_| CliError::Config(format!("label `{}` is not a year", s.label)))?;
        let zero = anchor_date(year, anchor)?;
        for (&t, &v) in s.times().iter().zip(s.values()) {
            let date = zero + TimeDelta::days(t.round() as i64);
            w.write_record([date.format("%Y-%m-%d").to_string(), format!("{v}")]).map_err(|e| CliError::io(path, e))?;
        }
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Reads one scalar per label from a `label,value` CSV.
pub fn read_scalar_csv(path: &Path) -> Result<Vec<(String, f64)>, CliError> {
    let mut reader = open(path)?;
    check_header(path, &mut reader, ["label", "value"])?;
    let mut out: Vec<(String, f64)> = vec![];
    for record in reader.records() {
        let record = record.map_err(|e| CliError::Parse {
            path: path.to_path_buf(),
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let fail = |message: String| CliError::Parse { path: path.to_path_buf(), line, message };
        if record.len() != 2 {
            return Err(fail(format!("expected 2 fields, found {}", record.len())));
        }
        let label = record[0].trim().to_string();
        if out.iter().any(|(l, _)| *l == label) {
            return Err(fail(format!("duplicate label `{label}`")));
        }
        let raw = record[1].trim();
        if raw.is_empty() {
            log::warn!("{}: label {label} has no value and is skipped", path.display());
            continue;
        }
        match raw.parse::<f64>() {
            Ok(v) if v.is_finite() => out.push((label, v)),
            _ => return Err(fail(format!("invalid value `{raw}`"))),
        }
    }
    if out.is_empty() {
        return Err(CliError::NoData(format!("{}: no scalar responses", path.display())));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn file(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn anchor_dates() {
        assert_eq!(anchor_date(1989, (6, 1)).unwrap(), NaiveDate::from_ymd_opt(1989, 6, 1).unwrap());
        assert!(anchor_date(1989, (2, 29)).is_err());
    }

    #[test]
    fn unsorted_dates_are_rejected() {
        let f = file("date,value\n1989-06-02,1\n1989-06-01,2\n");
        let err = ingest_csv(f.path(), (6, 1), Interval::new(0.0, 1.0).unwrap()).unwrap_err();
        assert!(matches!(err, CliError::Parse { line: 3, .. }), "{err}");
    }

    #[test]
    fn sparse_labels_are_rejected() {
        let mut text = "date,value\n".to_string();
        for d in 1..=10 {
            text += &format!("1990-06-{d:02},1\n");
        }
        for d in 1..=9 {
            text += &format!("1991-06-{d:02},1\n");
        }
        text += "1991-06-10,\n";
        for d in 1..=8 {
            text += &format!("1992-06-{d:02},1\n");
        }
        let f = file(&text);
        let t = ingest_csv(f.path(), (6, 1), Interval::new(0.0, 9.0).unwrap()).unwrap();
        assert_eq!(t.labels(), vec!["1990", "1991"]);
        assert_eq!(t.rejected.len(), 1);
        assert_eq!(t.rejected[0].label, "1992");
        assert!((t.rejected[0].missing_fraction - 0.2).abs() < 1e-12);
    }

    #[test]
    fn scalar_file() {
        let f = file("label,value\n1981,2.5\n1982,\n1983,-1\n");
        assert_eq!(read_scalar_csv(f.path()).unwrap(), vec![("1981".to_string(), 2.5), ("1983".to_string(), -1.0)]);
        let bad = file("label,value\n1981,x\n");
        assert!(matches!(read_scalar_csv(bad.path()), Err(CliError::Parse { line: 2, .. })));
    }
}
