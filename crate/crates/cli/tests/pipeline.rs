use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::Command;

use funflow_cli::ingest::{export_csv, ingest_csv};
use funflow_cli::output::read_table;
use funflow_cli::{run_pipeline, write_synthetic, CliError, RunConfig, Verb};
use funflow_core::Interval;
use proptest::prelude::*;

fn data_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data").canonicalize().unwrap()
}

fn synth_config(out: &Path) -> RunConfig {
    let mut cfg = RunConfig::load(&data_dir().join("synth.cfg")).unwrap();
    cfg.output.dir = out.to_path_buf();
    cfg
}

/// One full season of 41 days starting on June 1st, with a value on July 1st.
fn season(year: i32) -> String {
    let start = chrono::NaiveDate::from_ymd_opt(year, 6, 1).unwrap();
    let mut text = String::new();
    for d in 0..41 {
        let date = start + chrono::TimeDelta::days(d);
        let v = if d == 30 { 12.3 } else { d as f64 * 0.5 };
        writeln!(text, "{},{v}", date.format("%Y-%m-%d")).unwrap();
    }
    text
}

#[test]
fn ingest_maps_dates_to_season_days() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.csv");
    std::fs::write(&path, format!("date,value\n{}", season(1989))).unwrap();
    let table = ingest_csv(&path, (6, 1), Interval::new(0.0, 40.0).unwrap()).unwrap();
    assert_eq!(table.labels(), vec!["1989"]);
    let s = table.get("1989").unwrap();
    assert_eq!(s.times()[0], 0.0);
    assert_eq!(s.value_at(30.0), Some(12.3));
    assert!(table.rejected.is_empty());
}

#[test]
fn invalid_date_reports_its_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.csv");
    std::fs::write(&path, "date,value\n1989-06-01,1.0\n1989-13-01,2.0\n").unwrap();
    let err = ingest_csv(&path, (6, 1), Interval::new(0.0, 40.0).unwrap()).unwrap_err();
    assert!(matches!(err, CliError::Parse { line: 3, .. }), "{err}");
    assert_eq!(err.exit_code(), 3);
}

#[test]
fn empty_domain_is_no_data() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.csv");
    std::fs::write(&path, "date,value\n1989-01-05,1.0\n").unwrap();
    let err = ingest_csv(&path, (6, 1), Interval::new(0.0, 40.0).unwrap()).unwrap_err();
    assert!(matches!(err, CliError::NoData(_)));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn ingest_export_round_trip(
        years in proptest::collection::btree_set(1950i32..2030, 1..4),
        values in proptest::collection::vec(-1e6f64..1e6, 41 * 3),
        gaps in proptest::collection::vec(0usize..41, 0..4),
    ) {
        let dir = tempfile::tempdir().unwrap();
        let mut text = "date,value\n".to_string();
        for (k, &y) in years.iter().enumerate() {
            let start = chrono::NaiveDate::from_ymd_opt(y, 6, 1).unwrap();
            for d in 0..41usize {
                let date = (start + chrono::TimeDelta::days(d as i64)).format("%Y-%m-%d");
                if gaps.contains(&d) {
                    writeln!(text, "{date},").unwrap();
                } else {
                    writeln!(text, "{date},{}", values[k * 41 + d]).unwrap();
                }
            }
        }
        let domain = Interval::new(0.0, 40.0).unwrap();
        let first = dir.path().join("first.csv");
        std::fs::write(&first, text).unwrap();
        let a = ingest_csv(&first, (6, 1), domain).unwrap();
        let second = dir.path().join("second.csv");
        export_csv(&a.series, (6, 1), &second).unwrap();
        let b = ingest_csv(&second, (6, 1), domain).unwrap();
        prop_assert_eq!(&a.series, &b.series);
    }
}

#[test]
fn one_point_grid_is_recorded_as_fixed() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = synth_config(dir.path());
    cfg.lambda.smoothing_x = vec![10.0];
    run_pipeline(&cfg, Verb::Smooth).unwrap();
    let (header, rows) = read_table(&dir.path().join("cv_smoothing_x.csv")).unwrap();
    assert_eq!(header, vec!["lambda", "score", "se", "rule", "chosen"]);
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0][0], "10");
    assert_eq!(rows[0][3], "fixed");
    assert_eq!(rows[0][4], "1");
}

#[test]
fn bundled_run_ranks_models_and_writes_parseable_csvs() {
    let dir = tempfile::tempdir().unwrap();
    let summary = run_pipeline(&synth_config(dir.path()), Verb::Run).unwrap();
    assert_eq!(summary.n, 32);
    let r2 = |name: &str| summary.criteria.iter().find(|r| r.model_name == name).unwrap().r2;
    assert!(r2("flms") > r2("lm"));

    let (header, rows) = read_table(&dir.path().join("criteria.csv")).unwrap();
    assert_eq!(header, vec!["model_name", "bias", "rmse", "cv", "r2"]);
    assert_eq!(rows.len(), 2);

    let mut csvs = 0;
    for entry in std::fs::read_dir(dir.path()).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "csv") {
            csvs += 1;
            let (header, rows) = read_table(&path).unwrap();
            assert!(!rows.is_empty(), "{}", path.display());
            for row in rows {
                assert_eq!(row.len(), header.len());
                for (h, cell) in header.iter().zip(&row) {
                    if !matches!(h.as_str(), "model_name" | "label" | "rule" | "date") {
                        assert!(cell.parse::<f64>().is_ok(), "{}: `{cell}` in column {h}", path.display());
                    }
                }
            }
        }
    }
    assert!(csvs >= 5);
    let manifest: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["n"], 32);
    assert_eq!(manifest["seed"], 7);
}

#[test]
fn missing_input_exits_nonzero_with_json_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("run.cfg");
    let text = std::fs::read_to_string(data_dir().join("synth.cfg")).unwrap()
        .replace("synth/covariate.csv", "does-not-exist.csv")
        .replace("../out/synth", "out");
    std::fs::write(&cfg_path, text).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_funflow")).args(["run", "--config"]).arg(&cfg_path).output().unwrap();
    assert!(!out.status.success());
    assert_eq!(out.status.code(), Some(4));
    let report: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(report["kind"], "io");
    assert_eq!(report["exit_code"], 4);
    assert!(report["message"].as_str().unwrap().contains("does-not-exist.csv"));
}

#[test]
fn bad_config_exits_with_config_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("run.cfg");
    std::fs::write(&cfg_path, "models = []\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_funflow")).args(["run", "--config"]).arg(&cfg_path).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let report: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(report["kind"], "config");
}

#[test]
fn null_scenario_truth_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    let status = Command::new(env!("CARGO_BIN_EXE_funflow"))
        .args(["synth", "--scenario", "null", "--n", "6", "--seed", "3", "--out"])
        .arg(dir.path())
        .status()
        .unwrap();
    assert!(status.success());
    let (header, rows) = read_table(&dir.path().join("truth_beta.csv")).unwrap();
    assert_eq!(header.last().unwrap(), "value");
    assert!(!rows.is_empty());
    assert!(rows.iter().all(|r| r.last().unwrap().parse::<f64>().unwrap() == 0.0));
}

#[test]
fn synthetic_files_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let files = write_synthetic("flmf-bump", 11, 5, &a).unwrap();
    assert_eq!(write_synthetic("flmf-bump", 11, 5, &b).unwrap(), files);
    for f in &files {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let c = dir.path().join("c");
    write_synthetic("flmf-bump", 12, 5, &c).unwrap();
    assert_ne!(std::fs::read(a.join("response.csv")).unwrap(), std::fs::read(c.join("response.csv")).unwrap());
}
