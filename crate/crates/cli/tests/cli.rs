use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_conboost"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Deterministic scattered values in [0, 1).
fn frac(i: usize, a: f64) -> f64 {
    ((i as f64 + 1.0) * a).fract()
}

fn write_data(dir: &Path, poisson: bool) -> PathBuf {
    let mut text = String::from("x,t,z,y\n");
    for i in 0..120 {
        let x = frac(i, 0.618_033_988_7);
        let t = 24.0 * frac(i, 0.414_213_562_3);
        let z = frac(i, 0.732_050_807_5);
        let noise = 0.1 * (frac(i, 0.271_828_182_8) - 0.5);
        let mean = 2.0 * x + (2.0 * std::f64::consts::PI * t / 24.0).cos() + 0.3 * z;
        let y = if poisson { (mean + 1.5).exp().round() } else { mean + noise };
        text.push_str(&format!("{x},{t},{z},{y}\n"));
    }
    let path = dir.join(if poisson { "counts.csv" } else { "data.csv" });
    fs::write(&path, text).unwrap();
    path
}

fn write_config(dir: &Path, loss: &str, extra: &str) -> PathBuf {
    let text = format!(
        r#"version = 1
response = "y"
loss = "{loss}"
m_stop = 60
seed = 7
{extra}
[[learner]]
name = "trend"
kind = "monotone-pspline"
covariates = ["x"]
constraints = ["increasing"]

[[learner]]
name = "daily"
kind = "cyclic-pspline"
covariates = ["t"]
range = [[0.0, 24.0]]

[[learner]]
kind = "linear"
covariates = ["z"]
"#
    );
    let path = dir.join(format!("{loss}.toml"));
    fs::write(&path, text).unwrap();
    path
}

fn fit(dir: &Path, loss: &str) -> PathBuf {
    let data = write_data(dir, loss == "poisson");
    let cfg = write_config(dir, loss, "");
    let model = dir.join(format!("{loss}.json"));
    let out = run(&["fit", s(&data), s(&cfg), s(&model)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    model
}

fn csv_rows(out: &Output) -> (Vec<String>, Vec<Vec<f64>>) {
    let text = String::from_utf8(out.stdout.clone()).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(',').map(String::from).collect();
    let rows = lines
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    (header, rows)
}

#[test]
fn fit_writes_model_and_summary() {
    let dir = TempDir::new().unwrap();
    let data = write_data(dir.path(), false);
    let cfg = write_config(dir.path(), "gaussian", "");
    let model = dir.path().join("m.json");
    let out = run(&["fit", s(&data), s(&cfg), s(&model)]);
    assert_eq!(out.status.code(), Some(0));
    assert!(model.exists());
    let summary = String::from_utf8(out.stdout).unwrap();
    assert!(summary.contains("trend") && summary.contains("final risk"), "{summary}");
}

#[test]
fn fit_with_cross_validation() {
    let dir = TempDir::new().unwrap();
    let data = write_data(dir.path(), false);
    let cfg = write_config(dir.path(), "gaussian", "[cv]\ncount = 4\nm_max = 80\n").to_path_buf();
    let text = fs::read_to_string(&cfg).unwrap().replace("m_stop = 60\n", "");
    fs::write(&cfg, text).unwrap();
    let model = dir.path().join("m.json");
    let out = run(&["fit", s(&data), s(&cfg), s(&model)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8(out.stdout).unwrap().contains("m_stop:"));
}

#[test]
fn missing_column_is_a_user_error() {
    let dir = TempDir::new().unwrap();
    let data = write_data(dir.path(), false);
    let cfg = write_config(dir.path(), "gaussian", "");
    let text = fs::read_to_string(&cfg).unwrap().replace("[\"z\"]", "[\"humidity\"]");
    fs::write(&cfg, text).unwrap();
    let out = run(&["fit", s(&data), s(&cfg), s(&dir.path().join("m.json"))]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("humidity"), "{err}");
    assert_eq!(err.trim().lines().count(), 1);
}

#[test]
fn bad_constraint_combination_is_a_user_error() {
    let dir = TempDir::new().unwrap();
    let data = write_data(dir.path(), false);
    let cfg = write_config(dir.path(), "gaussian", "");
    let text = fs::read_to_string(&cfg)
        .unwrap()
        .replace("constraints = [\"increasing\"]", "constraints = [\"increasing\", \"cyclic\"]");
    fs::write(&cfg, text).unwrap();
    let out = run(&["fit", s(&data), s(&cfg), s(&dir.path().join("m.json"))]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn same_seed_gives_identical_files() {
    let dir = TempDir::new().unwrap();
    let data = write_data(dir.path(), false);
    let cfg = write_config(dir.path(), "gaussian", "");
    let (a, b) = (dir.path().join("a.json"), dir.path().join("b.json"));
    assert!(run(&["fit", s(&data), s(&cfg), s(&a)]).status.success());
    assert!(run(&["fit", s(&data), s(&cfg), s(&b)]).status.success());
    assert_eq!(fs::read(a).unwrap(), fs::read(b).unwrap());
}

#[test]
fn predictions_round_trip() {
    let dir = TempDir::new().unwrap();
    let model = fit(dir.path(), "gaussian");
    let data = dir.path().join("data.csv");
    let out = run(&["predict", s(&model), s(&data)]);
    assert!(out.status.success());
    let (header, rows) = csv_rows(&out);
    assert_eq!(header, vec!["prediction"]);
    assert_eq!(rows.len(), 120);
    let m = conboost::persist::load(&model).unwrap();
    let d = conboost::Dataset::from_pairs(
        ["x", "t", "z"]
            .iter()
            .map(|c| (*c, (0..120).map(|i| value(&data, c, i)).collect()))
            .collect(),
    )
    .unwrap();
    let direct = m.predict(&d, conboost::boost::PredictType::Link).unwrap();
    for (r, p) in rows.iter().zip(direct.iter()) {
        assert!((r[0] - p).abs() <= 1e-12);
    }
}

fn value(data: &Path, col: &str, row: usize) -> f64 {
    let text = fs::read_to_string(data).unwrap();
    let mut lines = text.lines();
    let j = lines.next().unwrap().split(',').position(|h| h == col).unwrap();
    lines.nth(row).unwrap().split(',').nth(j).unwrap().parse().unwrap()
}

#[test]
fn empty_input_gives_empty_output() {
    let dir = TempDir::new().unwrap();
    let model = fit(dir.path(), "gaussian");
    for text in ["", "x,t,z\n"] {
        let empty = dir.path().join("empty.csv");
        fs::write(&empty, text).unwrap();
        let out = run(&["predict", s(&model), s(&empty)]);
        assert_eq!(out.status.code(), Some(0));
        assert!(out.stdout.is_empty());
    }
}

#[test]
fn out_of_range_row_is_reported() {
    let dir = TempDir::new().unwrap();
    let model = fit(dir.path(), "gaussian");
    let data = dir.path().join("far.csv");
    fs::write(&data, "x,t,z\n0.5,3,0.5\n7.5,3,0.5\n").unwrap();
    let out = run(&["predict", s(&model), s(&data)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8(out.stderr).unwrap().contains("row 1"));
}

#[test]
fn poisson_responses_are_positive() {
    let dir = TempDir::new().unwrap();
    let model = fit(dir.path(), "poisson");
    let out = run(&["predict", s(&model), s(&dir.path().join("counts.csv")), "--type", "response"]);
    assert!(out.status.success());
    let (_, rows) = csv_rows(&out);
    assert!(rows.iter().all(|r| r[0] > 0.0));
}

#[test]
fn effects_respect_constraints() {
    let dir = TempDir::new().unwrap();
    let model = fit(dir.path(), "gaussian");
    let out = run(&["effects", s(&model), "--learner", "daily", "--grid", "100"]);
    assert!(out.status.success());
    let (header, rows) = csv_rows(&out);
    assert_eq!(header, vec!["t", "effect"]);
    assert_eq!(rows.len(), 100);
    assert!((rows[0][1] - rows[99][1]).abs() <= 1e-8);

    let out = run(&["effects", s(&model), "--learner", "0", "--grid", "100"]);
    let (_, rows) = csv_rows(&out);
    assert_eq!(rows.len(), 100);
    assert!(rows.windows(2).all(|w| w[1][1] >= w[0][1] - 1e-8));
}

#[test]
fn effects_with_bootstrap_bands() {
    let dir = TempDir::new().unwrap();
    let model = fit(dir.path(), "gaussian");
    let data = dir.path().join("data.csv");
    let args = [
        "effects", s(&model), "--learner", "trend", "--grid", "20", "--ci", "--data", s(&data),
        "--boot", "20", "--inner-m-max", "40",
    ];
    let out = run(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let (header, rows) = csv_rows(&out);
    assert_eq!(header, vec!["x", "effect", "lower80", "upper80", "lower95", "upper95"]);
    assert_eq!(rows.len(), 20);
    for r in &rows {
        assert!(r[4] <= r[2] && r[2] <= r[3] && r[3] <= r[5]);
    }
    let mut sim = args.to_vec();
    sim.extend(["--band", "simultaneous"]);
    let out = run(&sim);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let (_, wide) = csv_rows(&out);
    for (p, w) in rows.iter().zip(&wide) {
        assert!(w[4] <= p[4] + 1e-12 && w[5] >= p[5] - 1e-12);
    }
}

#[test]
fn unknown_learner_is_rejected() {
    let dir = TempDir::new().unwrap();
    let model = fit(dir.path(), "gaussian");
    for id in ["9", "nonesuch"] {
        let out = run(&["effects", s(&model), "--learner", id]);
        assert_eq!(out.status.code(), Some(2));
        assert!(String::from_utf8(out.stderr).unwrap().contains("unknown learner"));
    }
}

#[test]
fn simulate_emits_metrics() {
    let out = run(&["simulate", "qp-vs-iter", "--reps", "3", "--seed", "4"]);
    assert!(out.status.success());
    let (header, rows) = csv_rows(&out);
    assert_eq!(header, vec!["rep", "max_discrepancy", "active_constraints"]);
    assert_eq!(rows.len(), 3);
    assert!(rows.iter().all(|r| r[1] <= 1e-4));
    assert_eq!(run(&["simulate", "spiral"]).status.code(), Some(2));
    assert_eq!(run(&["simulate", "cyclic", "--reps", "0"]).status.code(), Some(2));
}
