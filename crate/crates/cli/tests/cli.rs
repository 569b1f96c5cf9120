use std::fs;
use std::process::{Command, Output};

use erw_core::experiment::ExperimentReport;
use serde_json::Value;

fn erw(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_erw"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

const DIFFUSIVE: [&str; 8] = ["-p", "0.6", "-q", "0.2", "-r", "0.2", "--theta", "0.5"];

fn with(base: &[&str], extra: &[&str]) -> Vec<String> {
    base.iter().chain(extra).map(|s| s.to_string()).collect()
}

fn run(args: &[String]) -> Output {
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    erw(&refs)
}

#[test]
fn predict_diffusive_example() {
    let out = run(&with(&["predict", "--format", "json"], &DIFFUSIVE));
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let v: Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(v["schema_version"], 1);
    assert_eq!(v["regime"], "diffusive");
    assert!((v["lln_limit"].as_f64().unwrap() - 0.25).abs() < 1e-12);
    assert!((v["constants"]["phi"].as_f64().unwrap() - 0.6041666666666666).abs() < 1e-9);
    assert!(v["v_limit"].is_null());
}

#[test]
fn predict_rejects_simplex_violation() {
    let out = erw(&[
        "predict", "-p", "0.6", "-q", "0.2", "-r", "0.3", "--theta", "0.5",
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("simplex"), "{}", stderr(&out));
}

#[test]
fn predict_superdiffusive_prints_series_limit() {
    let out = erw(&[
        "predict", "-p", "0.95", "-q", "0.05", "--theta", "0.9", "--format", "json",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let v: Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(v["regime"], "superdiffusive");
    let v_limit = v["v_limit"].as_f64().unwrap();
    assert!(v_limit > v["v_n"].as_f64().unwrap());
    assert!(stderr(&out).contains("v_limit="));
}

#[test]
fn predict_rejects_negative_alpha_and_degenerate() {
    let neg = erw(&["predict", "-p", "0.6", "-q", "0.2", "--theta", "-0.5"]);
    assert_eq!(neg.status.code(), Some(2));
    let deg = erw(&["predict", "-p", "1", "-q", "0", "--theta", "0.3"]);
    assert_eq!(deg.status.code(), Some(2));
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(erw(&["predict"]).status.code(), Some(2));
    assert_eq!(erw(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(
        run(&with(&["experiment", "nonsense"], &DIFFUSIVE))
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn exact_csv_columns_and_first_moments() {
    let out = run(&with(&["exact", "--snapshots", "1,2,100"], &DIFFUSIVE));
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let text = stdout(&out);
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let header: Vec<String> = rdr.headers().unwrap().iter().map(String::from).collect();
    assert_eq!(
        header[..5],
        ["schema_version", "n", "mean_s", "var_s", "mean_z"].map(String::from)
    );
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 3);
    let get = |row: usize, col: &str| -> f64 {
        let i = header.iter().position(|h| h == col).unwrap();
        rows[row][i].parse().unwrap()
    };
    assert!((get(0, "mean_s") - 0.4).abs() < 1e-15);
    assert!((get(0, "var_s") - (0.8 - 0.16)).abs() < 1e-15);
    assert!((get(1, "mean_s") - 0.68).abs() < 1e-12);
}

#[test]
fn exact_distribution_cap() {
    let out = run(&with(
        &["exact", "--distribution", "--steps", "401"],
        &DIFFUSIVE,
    ));
    assert_eq!(out.status.code(), Some(2));
    let ok = run(&with(
        &[
            "exact",
            "--distribution",
            "--steps",
            "6",
            "--format",
            "json",
        ],
        &DIFFUSIVE,
    ));
    assert_eq!(ok.status.code(), Some(0));
    let v: Value = serde_json::from_str(&stdout(&ok)).unwrap();
    let total: f64 = v["atoms"]
        .as_array()
        .unwrap()
        .iter()
        .map(|a| a[2].as_f64().unwrap())
        .sum();
    assert!((total - 1.0).abs() < 1e-12);
}

#[test]
fn experiment_lln_reports_predictions_and_is_byte_identical() {
    let args = with(
        &[
            "experiment",
            "lln",
            "--steps",
            "2000",
            "--trajectories",
            "200",
            "--seed",
            "5",
        ],
        &DIFFUSIVE,
    );
    let a = run(&args);
    let b = run(&with(
        &args.iter().map(String::as_str).collect::<Vec<_>>(),
        &["--workers", "3"],
    ));
    assert!(matches!(a.status.code(), Some(0) | Some(1)));
    assert_eq!(a.stdout, b.stdout);
    let text = stdout(&a);
    assert!(text.lines().any(|l| l.contains(",prediction,predicted,")));
    assert!(text.lines().any(|l| l.contains(",prediction,z_predicted,")));

    let json = run(&with(
        &args.iter().map(String::as_str).collect::<Vec<_>>(),
        &["--format", "json"],
    ));
    let report: ExperimentReport = serde_json::from_str(&stdout(&json)).unwrap();
    assert!((report.prediction("predicted").unwrap() - 0.25).abs() < 1e-12);
    assert!((report.prediction("z_predicted").unwrap() - 2.0 / 3.0).abs() < 1e-12);
    let expected_code = if report.verdict == erw_core::experiment::Verdict::Fail {
        1
    } else {
        0
    };
    assert_eq!(json.status.code(), Some(expected_code));
}

#[test]
fn json_report_round_trips() {
    let out = erw(&[
        "experiment",
        "superdiffusive",
        "-p",
        "0.85",
        "-q",
        "0.05",
        "-r",
        "0.1",
        "--theta",
        "0.9375",
        "--steps",
        "1600",
        "--trajectories",
        "300",
        "--format",
        "json",
    ]);
    let text = stdout(&out);
    let report: ExperimentReport = serde_json::from_str(&text).unwrap();
    let again = serde_json::to_string_pretty(&report).unwrap();
    assert_eq!(
        serde_json::from_str::<ExperimentReport>(&again).unwrap(),
        report
    );
    assert_eq!(again.trim_end(), text.trim_end());
}

#[test]
fn critical_clt_uses_n_log_n_scale() {
    let out = erw(&[
        "experiment",
        "clt",
        "-p",
        "0.75",
        "-q",
        "0.125",
        "-r",
        "0.125",
        "--theta",
        "0.8",
        "--steps",
        "1000",
        "--trajectories",
        "500",
        "--format",
        "json",
    ]);
    let report: ExperimentReport = serde_json::from_str(&stdout(&out)).unwrap();
    let phi = report.constants.phi;
    let expected = phi * 1000.0 * 1000f64.ln();
    let got = report.prediction("variance_scale").unwrap();
    assert!((got - expected).abs() < 1e-9 * expected);
}

#[test]
fn gate_failure_exits_one() {
    // alpha = 0.4 with p - q = 0.9 sits outside the diffusive band at n = 1e6
    let out = erw(&[
        "experiment",
        "regime-scan",
        "-p",
        "0.95",
        "-q",
        "0.05",
        "--theta",
        "0.5",
    ]);
    assert_eq!(out.status.code(), Some(1), "{}", stderr(&out));
    assert!(stderr(&out).contains("verdict: FAIL"));
}

#[test]
fn wrong_regime_exits_two() {
    let out = run(&with(&["experiment", "critical"], &DIFFUSIVE));
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("regime"));
}

#[test]
fn config_file_and_flag_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(
        &cfg,
        "# diffusive reference\np = 0.6\nq = 0.2\nr = 0.2\ntheta = 0.5\nsnapshots = 10,20\nformat = json\n",
    )
    .unwrap();
    let cfg = cfg.to_str().unwrap();
    let out = erw(&["exact", "--config", cfg]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let v: Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(v["rows"].as_array().unwrap().len(), 2);

    let out = erw(&[
        "exact",
        "--config",
        cfg,
        "--format",
        "csv",
        "--snapshots",
        "5",
    ]);
    let text = stdout(&out);
    assert!(text.starts_with("schema_version,n,"));
    assert_eq!(text.lines().count(), 2);
}

#[test]
fn output_file_and_svg_plot() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sim.csv");
    let out = run(&with(
        &[
            "simulate",
            "--steps",
            "512",
            "--trajectories",
            "64",
            "--plot",
            "--output",
            path.to_str().unwrap(),
        ],
        &DIFFUSIVE,
    ));
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(stdout(&out).is_empty());
    let csv = fs::read_to_string(&path).unwrap();
    assert!(csv.starts_with("schema_version,n,mean_s"));
    let svg = fs::read_to_string(dir.path().join("sim.svg")).unwrap();
    assert!(svg.contains(r#"version="1.1""#));
    assert!(svg.contains("<polyline"));
}

#[test]
fn lil_diagnostic_has_no_gate() {
    let out = erw(&[
        "experiment",
        "lil-diagnostic",
        "-p",
        "0.6",
        "-q",
        "0.2",
        "--theta",
        "0",
        "--steps",
        "4096",
        "--trajectories",
        "20",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(stderr(&out).contains("verdict: NO-GATE"));
}
