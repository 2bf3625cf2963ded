use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn toy_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/toy/config.json")
}

fn mediadiet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mediadiet")).args(args).output().unwrap()
}

#[test]
fn full_toy_run_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let cfg = toy_config();
    let res = mediadiet(&["run", "--config", cfg.to_str().unwrap(), "--output-dir", out.to_str().unwrap()]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let stdout = String::from_utf8(res.stdout).unwrap();
    let hash = stdout.lines().last().unwrap().strip_prefix("config_sha256 ").unwrap();
    assert_eq!(hash.len(), 64);
    let scores = fs::read_to_string(out.join("scores.csv")).unwrap();
    assert_eq!(scores.lines().next().unwrap(), format!("# config_sha256: {hash}"));
    assert!(!out.join("FAILED").exists());
}

#[test]
fn bad_config_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("config.json");
    fs::write(&path, "{\"seed\": 1}").unwrap();
    let res = mediadiet(&["run", "--config", path.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).starts_with("error: "));

    let cfg = toy_config();
    let res = mediadiet(&["run", "--config", cfg.to_str().unwrap(), "--stages", "score,plot"]);
    assert_eq!(res.status.code(), Some(2));
}

#[test]
fn unmet_stage_dependency_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = toy_config();
    let res = mediadiet(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--stages",
        "analyze",
        "--output-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(res.status.code(), Some(2), "{}", String::from_utf8_lossy(&res.stderr));
}

#[test]
fn subcommand_failure_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let res = mediadiet(&[
        "train-ngram",
        "--dataset",
        "NOPE",
        "--datasets-dir",
        dir.path().to_str().unwrap(),
        "--out",
        dir.path().join("m.json").to_str().unwrap(),
    ]);
    assert_eq!(res.status.code(), Some(3));
}
