use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use intentkg_core::sim::{run_experiment, ExperimentConfig};
use serde_json::Value;

const STAGES: [&str; 6] = ["simulate", "build-kg", "mine-relations", "train-matcher", "train-predictor", "evaluate"];

fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/example_graph.jsonl")
}

fn intentkg(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_intentkg"))
        .current_dir(dir)
        .env_remove("INTENTKG_CONFIG")
        .env_remove("INTENTKG_SEED")
        .env_remove("INTENTKG_OUT")
        .env_remove("INTENTKG_PORT")
        .args(args)
        .output()
        .unwrap()
}

fn error_line(out: &Output) -> Value {
    let err = String::from_utf8(out.stderr.clone()).unwrap();
    assert_eq!(err.lines().count(), 1, "{err}");
    serde_json::from_str(err.trim()).unwrap()
}

#[test]
fn validate_accepts_the_fixture_and_rejects_a_broken_graph() {
    let dir = tempfile::tempdir().unwrap();
    let out = intentkg(dir.path(), &["validate", fixture().to_str().unwrap()]);
    assert!(out.status.success(), "{out:?}");
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["findings"], Value::Array(vec![]));

    let broken = dir.path().join("broken.jsonl");
    let mut text = std::fs::read_to_string(fixture()).unwrap();
    text += "{\"t\":\"edge\",\"src\":0,\"kind\":\"Consequent\",\"dst\":0,\"conf\":0.5,\"prov\":\"manual\"}\n";
    std::fs::write(&broken, text).unwrap();
    let out = intentkg(dir.path(), &["validate", "broken.jsonl"]);
    // loading checks every record, so the bad edge stops it at its line
    assert_eq!(out.status.code(), Some(1));
    let e = error_line(&out);
    assert_eq!(e["error"], "runtime");
    assert!(e["message"].as_str().unwrap().contains("line 83"), "{e}");
}

#[test]
fn config_errors_exit_2_with_one_json_line() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.toml"), "[experiment]\nuserz = 3\n").unwrap();
    let out = intentkg(dir.path(), &["--config", "bad.toml", "simulate"]);
    assert_eq!(out.status.code(), Some(2));
    let e = error_line(&out);
    assert_eq!(e["error"], "config");
    assert!(e["message"].as_str().unwrap().contains("userz"), "{e}");

    std::fs::write(dir.path().join("missing.toml"), "[paths]\nevents = \"nowhere.jsonl\"\n").unwrap();
    let out = intentkg(dir.path(), &["--config", "missing.toml", "mine-relations"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(error_line(&out)["message"].as_str().unwrap().contains("paths.events"));

    let out = intentkg(dir.path(), &["no-such-command"]);
    assert_eq!(out.status.code(), Some(2));
    error_line(&out);

    // the environment stands in for the flag
    let out = Command::new(env!("CARGO_BIN_EXE_intentkg"))
        .current_dir(dir.path())
        .env("INTENTKG_CONFIG", "bad.toml")
        .arg("simulate")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_artifacts_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let out = intentkg(dir.path(), &["--out", "empty", "train-predictor"]);
    assert_eq!(out.status.code(), Some(1));
    let e = error_line(&out);
    assert_eq!(e["error"], "runtime");
    assert!(e["message"].as_str().unwrap().contains("graph.jsonl"), "{e}");
}

#[test]
fn api_doc_matches_the_renderer() {
    let dir = tempfile::tempdir().unwrap();
    let out = intentkg(dir.path(), &["api-doc"]);
    assert!(out.status.success());
    assert_eq!(String::from_utf8(out.stdout).unwrap(), intentkg_gateway::api::render_markdown());
}

#[test]
fn staged_pipeline_reproduces_the_in_memory_experiment() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("small.toml"), "[experiment]\nusers = 120\n").unwrap();
    for stage in STAGES {
        let out = intentkg(dir.path(), &["--config", "small.toml", "--seed", "5", "--out", "run", stage]);
        assert!(out.status.success(), "{stage}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let out = intentkg(dir.path(), &["--out", "run", "validate"]);
    assert!(out.status.success());

    let file = std::fs::read_to_string(dir.path().join("run/report.json")).unwrap();
    let config = ExperimentConfig {
        users: 120,
        ..Default::default()
    };
    let expected = run_experiment(&config, 5).unwrap().report.to_json();
    assert_eq!(file, expected);
}
