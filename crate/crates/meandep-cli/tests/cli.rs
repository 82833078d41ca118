//! Black-box checks of exit codes, output files, and metadata shape.

use std::path::Path;
use std::process::Output;

fn run(dir: &Path, args: &[&str]) -> Output {
    std::process::Command::new(env!("CARGO_BIN_EXE_meandep"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawn CLI")
}

fn write_config(dir: &Path, body: &str) {
    std::fs::write(dir.join("run.toml"), body).unwrap();
}

fn read_json(dir: &Path, name: &str) -> serde_json::Value {
    let text = std::fs::read_to_string(dir.join(name)).unwrap();
    serde_json::from_str(&text).unwrap()
}

fn stderr_error_kind(out: &Output) -> String {
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).expect("error JSON");
    err["error"]["kind"].as_str().unwrap().to_string()
}

const SMALL_SIM: &str = "[simulate]\nn = 10\nm = 2\nc = 0.5\nout_dir = \".\"\n";

#[test]
fn unknown_config_keys_exit_with_config_error() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), "[fit]\nbogus = 1\n");
    let out = run(dir.path(), &["--config", "run.toml", "fit"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_error_kind(&out), "config");
}

#[test]
fn missing_input_files_exit_with_config_error() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), "");
    let out = run(dir.path(), &["--config", "run.toml", "fit"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_error_kind(&out), "config");
}

#[test]
fn zero_threads_rejected() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), SMALL_SIM);
    let out = run(dir.path(), &["--config", "run.toml", "--threads", "0", "simulate"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_error_kind(&out), "config");
}

#[test]
fn zero_multiplier_simulates_stationary_truth() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), "[simulate]\nn = 8\nm = 2\nc = 0.0\nout_dir = \".\"\n");
    let out = run(dir.path(), &["--config", "run.toml", "simulate"]);
    assert!(out.status.success());
    let truth = read_json(dir.path(), "truth.json");
    for slope in ["b1", "b2", "b3"] {
        assert_eq!(truth["eta_true"][slope].as_f64().unwrap(), 0.0);
    }
}

#[test]
fn stationary_method_pins_slopes_to_zero() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), SMALL_SIM);
    assert!(run(dir.path(), &["--config", "run.toml", "simulate"]).status.success());
    let out = run(
        dir.path(),
        &["--config", "run.toml", "--method", "stationary", "fit"],
    );
    assert!(out.status.success());
    let model = read_json(dir.path(), "model.json");
    for slope in ["b1", "b2", "b3"] {
        assert_eq!(model["eta"][slope].as_f64().unwrap(), 0.0);
    }
    assert_eq!(model["loglik"], model["stationary_loglik"]);
    assert!(model["onestep_loglik"].is_null());
}

#[test]
fn refits_only_raise_the_recorded_logliks() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), SMALL_SIM);
    assert!(run(dir.path(), &["--config", "run.toml", "simulate"]).status.success());
    let out = run(
        dir.path(),
        &["--config", "run.toml", "--method", "fullmle", "fit"],
    );
    assert!(out.status.success());
    let model = read_json(dir.path(), "model.json");
    let stationary = model["stationary_loglik"].as_f64().unwrap();
    let onestep = model["onestep_loglik"].as_f64().unwrap();
    let full = model["loglik"].as_f64().unwrap();
    assert!(onestep >= stationary - 1e-9);
    assert!(full >= onestep - 1e-9);
}

#[test]
fn metadata_lists_config_first() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), SMALL_SIM);
    let out = run(dir.path(), &["--config", "run.toml", "simulate"]);
    assert!(out.status.success());
    let stdout = String::from_utf8(out.stdout).unwrap();
    let first_key = stdout.find('"').map(|i| &stdout[i..i + 8]);
    assert_eq!(first_key, Some("\"config\""));
}

#[test]
fn test_output_is_internally_consistent() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), "[simulate]\nn = 10\nm = 2\nc = 1.0\nout_dir = \".\"\n");
    assert!(run(dir.path(), &["--config", "run.toml", "simulate"]).status.success());
    let out = run(dir.path(), &["--config", "run.toml", "test"]);
    assert!(out.status.success());
    let test = read_json(dir.path(), "test.json");
    let statistic = test["statistic"].as_f64().unwrap();
    let p = test["p_value"].as_f64().unwrap();
    assert!(statistic >= 0.0);
    assert!((0.0..=1.0).contains(&p));
    assert_eq!(test["reject_at"]["alpha_05"].as_bool().unwrap(), p < 0.05);
}

#[test]
fn negative_predictive_means_clip_to_zero_in_their_own_column() {
    let dir = tempfile::tempdir().unwrap();
    write_config(
        dir.path(),
        "[simulate]\nn = 10\nm = 2\nc = 0.5\nout_dir = \".\"\n\n[predict]\ntargets = \"stations.csv\"\n",
    );
    for sub in ["simulate", "fit", "predict"] {
        assert!(run(dir.path(), &["--config", "run.toml", sub]).status.success());
    }
    let mut rdr = csv::Reader::from_path(dir.path().join("predictions.csv")).unwrap();
    let headers = rdr.headers().unwrap().clone();
    let mean_idx = headers.iter().position(|h| h == "mean").unwrap();
    let nonneg_idx = headers.iter().position(|h| h == "mean_nonneg").unwrap();
    let mut rows = 0;
    for record in rdr.records() {
        let record = record.unwrap();
        let mean: f64 = record[mean_idx].parse().unwrap();
        let nonneg: f64 = record[nonneg_idx].parse().unwrap();
        assert_eq!(nonneg, mean.max(0.0));
        rows += 1;
    }
    assert_eq!(rows, 20);
}
