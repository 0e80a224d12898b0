//! End-to-end tests of the `ccluster` binary: file formats, exit codes,
//! determinism, and the command examples.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_ccluster")
}

fn run(args: &[&str]) -> Output {
    Command::new(bin())
        .args(args)
        .output()
        .expect("failed to launch ccluster")
}

fn write_json(dir: &Path, name: &str, contents: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, contents).unwrap();
    path
}

fn data_rows(path: &Path) -> Vec<String> {
    let text = fs::read_to_string(path).unwrap();
    text.lines()
        .filter(|l| !l.starts_with('#') && !l.is_empty())
        .skip(1)
        .map(|l| l.to_string())
        .collect()
}

const SEPARABLE_GEN: &str = r#"{
  "generator": {
    "family": "gaussian",
    "k": 3,
    "p": 2,
    "centers": [[4.0, 0.0], [-2.0, 3.5], [-2.0, -3.5]],
    "sigma2": 0.05
  },
  "n": 120
}"#;

fn simulate_separable(dir: &Path) -> (PathBuf, PathBuf) {
    let cfg = write_json(dir, "gen.json", SEPARABLE_GEN);
    let features = dir.join("x.csv");
    let labels = dir.join("y.csv");
    let out = run(&[
        "simulate",
        "--config",
        cfg.to_str().unwrap(),
        "--seed",
        "7",
        "--features-out",
        features.to_str().unwrap(),
        "--labels-out",
        labels.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    (features, labels)
}

#[test]
fn simulate_shape_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let (features, labels) = simulate_separable(dir.path());
    let rows = data_rows(&features);
    assert_eq!(rows.len(), 120);
    assert_eq!(rows[0].split(',').count(), 2);
    assert_eq!(data_rows(&labels).len(), 120);

    let first = fs::read(&features).unwrap();
    let cfg = dir.path().join("gen.json");
    let out = run(&[
        "simulate",
        "--config",
        cfg.to_str().unwrap(),
        "--seed",
        "7",
        "--features-out",
        features.to_str().unwrap(),
        "--labels-out",
        labels.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    assert_eq!(first, fs::read(&features).unwrap());
}

#[test]
fn simulate_rejects_negative_gamma_center() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_json(
        dir.path(),
        "bad.json",
        r#"{
          "generator": {
            "family": "gamma",
            "k": 2,
            "p": 1,
            "centers": [[1.0], [-2.0]],
            "sigma2": 0.5
          },
          "n": 10
        }"#,
    );
    let out = run(&[
        "simulate",
        "--config",
        cfg.to_str().unwrap(),
        "--seed",
        "1",
        "--features-out",
        dir.path().join("x.csv").to_str().unwrap(),
        "--labels-out",
        dir.path().join("y.csv").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3));
    let msg = String::from_utf8_lossy(&out.stderr);
    assert!(msg.contains("center"), "stderr: {msg}");
}

#[test]
fn simulate_rejects_unknown_config_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_json(
        dir.path(),
        "bad.json",
        r#"{"generator": {"family": "gaussian", "k": 1, "p": 1, "centers": [[0.0]], "sigma2": 1.0}, "n": 5, "bogus": 1}"#,
    );
    let out = run(&[
        "simulate",
        "--config",
        cfg.to_str().unwrap(),
        "--seed",
        "1",
        "--features-out",
        dir.path().join("x.csv").to_str().unwrap(),
        "--labels-out",
        dir.path().join("y.csv").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn missing_input_file_is_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "simulate",
        "--config",
        dir.path().join("nope.json").to_str().unwrap(),
        "--seed",
        "1",
        "--features-out",
        dir.path().join("x.csv").to_str().unwrap(),
        "--labels-out",
        dir.path().join("y.csv").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

fn fit_pipeline(dir: &Path, features: &Path, alpha: f64, name: &str) -> (PathBuf, Output) {
    let cfg = write_json(
        dir,
        name,
        &format!(r#"{{"k": 3, "alpha": {alpha}, "classifier": {{"kind": "knn-soft", "k": 10}}}}"#),
    );
    let out_path = dir.join(format!("{name}.pipeline.json"));
    let out = run(&[
        "fit",
        "--config",
        cfg.to_str().unwrap(),
        "--data",
        features.to_str().unwrap(),
        "--seed",
        "11",
        "--out",
        out_path.to_str().unwrap(),
    ]);
    (out_path, out)
}

#[test]
fn fit_separable_prints_zero_threshold_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (features, _) = simulate_separable(dir.path());
    let (pipeline, out) = fit_pipeline(dir.path(), &features, 0.1, "fit.json");
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("threshold q_hat = 0"), "stdout: {stdout}");

    let first = fs::read(&pipeline).unwrap();
    let (_, out2) = fit_pipeline(dir.path(), &features, 0.1, "fit.json");
    assert!(out2.status.success());
    assert_eq!(first, fs::read(&pipeline).unwrap());
}

#[test]
fn fit_overflow_threshold_prints_inf() {
    let dir = tempfile::tempdir().unwrap();
    let (features, _) = simulate_separable(dir.path());
    // alpha below 1/(n_ca + 1) = 1/61 forces the +infinity threshold
    let (_, out) = fit_pipeline(dir.path(), &features, 0.001, "tiny.json");
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("threshold q_hat = inf"), "stdout: {stdout}");
}

#[test]
fn predict_sets_format() {
    let dir = tempfile::tempdir().unwrap();
    let (features, _) = simulate_separable(dir.path());
    let (pipeline, out) = fit_pipeline(dir.path(), &features, 0.1, "fit.json");
    assert!(out.status.success());
    let sets_path = dir.path().join("sets.csv");
    let out = run(&[
        "predict-sets",
        "--pipeline",
        pipeline.to_str().unwrap(),
        "--data",
        features.to_str().unwrap(),
        "--out",
        sets_path.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = data_rows(&sets_path);
    assert_eq!(rows.len(), 120);
    for (i, row) in rows.iter().enumerate() {
        let fields: Vec<&str> = row.split(',').collect();
        assert_eq!(fields.len(), 3);
        assert_eq!(fields[0], i.to_string());
        let size: usize = fields[1].parse().unwrap();
        let members: Vec<usize> = fields[2]
            .split(';')
            .map(|m| m.parse().unwrap())
            .collect();
        assert_eq!(members.len(), size);
        assert!(size >= 1);
        assert!(members.iter().all(|&m| (1..=3).contains(&m)));
    }
    let text = fs::read_to_string(&sets_path).unwrap();
    assert!(text.starts_with("# tool_version="));
    assert!(text.contains("# config_hash="));
}

#[test]
fn heatmap_grid_shape_and_full_sets_under_infinite_threshold() {
    let dir = tempfile::tempdir().unwrap();
    let (features, _) = simulate_separable(dir.path());
    let (pipeline, out) = fit_pipeline(dir.path(), &features, 0.001, "tiny.json");
    assert!(out.status.success());
    let grid_cfg = write_json(
        dir.path(),
        "grid.json",
        r#"{"xmin": -6.0, "xmax": 6.0, "ymin": -6.0, "ymax": 6.0, "nx": 10, "ny": 10}"#,
    );
    let grid_path = dir.path().join("grid.csv");
    let out = run(&[
        "heatmap",
        "--config",
        grid_cfg.to_str().unwrap(),
        "--pipeline",
        pipeline.to_str().unwrap(),
        "--out",
        grid_path.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = data_rows(&grid_path);
    assert_eq!(rows.len(), 100);
    // q_hat = +inf: every cell carries the full label set
    for row in &rows {
        let fields: Vec<&str> = row.split(',').collect();
        assert_eq!(fields[2], "3");
        assert_eq!(fields[3], "1;2;3");
    }
}

#[test]
fn heatmap_rejects_non_2d_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let gen3 = write_json(
        dir.path(),
        "gen3.json",
        r#"{
          "generator": {
            "family": "gaussian",
            "k": 2,
            "p": 3,
            "centers": [[4.0, 0.0, 0.0], [-4.0, 0.0, 0.0]],
            "sigma2": 0.05
          },
          "n": 80
        }"#,
    );
    let features = dir.path().join("x3.csv");
    let out = run(&[
        "simulate",
        "--config",
        gen3.to_str().unwrap(),
        "--seed",
        "3",
        "--features-out",
        features.to_str().unwrap(),
        "--labels-out",
        dir.path().join("y3.csv").to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let fit_cfg = write_json(
        dir.path(),
        "fit3.json",
        r#"{"k": 2, "alpha": 0.1, "classifier": {"kind": "knn-soft", "k": 5}}"#,
    );
    let pipeline = dir.path().join("p3.json");
    let out = run(&[
        "fit",
        "--config",
        fit_cfg.to_str().unwrap(),
        "--data",
        features.to_str().unwrap(),
        "--seed",
        "4",
        "--out",
        pipeline.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let grid_cfg = write_json(
        dir.path(),
        "grid.json",
        r#"{"xmin": 0.0, "xmax": 1.0, "ymin": 0.0, "ymax": 1.0, "nx": 2, "ny": 2}"#,
    );
    let out = run(&[
        "heatmap",
        "--config",
        grid_cfg.to_str().unwrap(),
        "--pipeline",
        pipeline.to_str().unwrap(),
        "--out",
        dir.path().join("grid.csv").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("2-dimensional"));
}

#[test]
fn experiment_single_cell_tidy_row() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_json(
        dir.path(),
        "exp.json",
        r#"{
          "generator": {
            "family": "gaussian",
            "k": 3,
            "p": 2,
            "centers": [[4.0, 0.0], [-2.0, 3.5], [-2.0, -3.5]],
            "sigma2": 0.05
          },
          "sweep": {"sample-size": [120]},
          "alpha": 0.1,
          "methods": ["stochastic"],
          "reps": 1,
          "classifier": {"kind": "knn-soft", "k": 10},
          "test_size": 100
        }"#,
    );
    let tidy = dir.path().join("tidy.csv");
    let agg = dir.path().join("agg.csv");
    let args = [
        "experiment",
        "--config",
        cfg.to_str().unwrap(),
        "--seed",
        "5",
        "--tidy-out",
        tidy.to_str().unwrap(),
        "--aggregate-out",
        agg.to_str().unwrap(),
    ];
    let out = run(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(data_rows(&tidy).len(), 1);
    assert_eq!(data_rows(&agg).len(), 1);

    let first = (fs::read(&tidy).unwrap(), fs::read(&agg).unwrap());
    let out = run(&args);
    assert!(out.status.success());
    assert_eq!(first, (fs::read(&tidy).unwrap(), fs::read(&agg).unwrap()));
}

#[test]
fn diagnostics_report_echoes_hash() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_json(
        dir.path(),
        "diag.json",
        r#"{
          "generator": {
            "family": "gaussian",
            "k": 2,
            "p": 1,
            "centers": [[-3.0], [3.0]],
            "sigma2": 1.0
          },
          "alpha": 0.1,
          "n_grid": [40],
          "reps": 3
        }"#,
    );
    let out_path = dir.path().join("diag.out.json");
    let out = run(&[
        "diagnostics",
        "--config",
        cfg.to_str().unwrap(),
        "--seed",
        "9",
        "--out",
        out_path.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&out_path).unwrap()).unwrap();
    assert_eq!(report["config_hash"].as_str().unwrap().len(), 64);
    assert_eq!(report["reports"].as_array().unwrap().len(), 1);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("E_hat"));
}
