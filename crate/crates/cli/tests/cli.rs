use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn les_miserables() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/data/les_miserables.txt")
}

fn igel(args: &[&str], envs: &[(&str, &Path)], cwd: &Path) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_igel"));
    cmd.args(args).current_dir(cwd).env("RUST_LOG", "warn").env_remove("IGEL_OUT_DIR");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().unwrap()
}

fn error_json(out: &Output) -> serde_json::Value {
    let stderr = String::from_utf8_lossy(&out.stderr);
    let line = stderr.lines().last().unwrap();
    serde_json::from_str(line).unwrap()
}

#[test]
fn encode_writes_features_and_metadata() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("enc");
    let res = igel(
        &["encode", "--graph", les_miserables().to_str().unwrap(), "--out", out.to_str().unwrap()],
        &[],
        tmp.path(),
    );
    assert!(res.status.success());
    let features = std::fs::read_to_string(out.join("features.txt")).unwrap();
    assert_eq!(features.lines().count(), 77);
    let run: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("run.json")).unwrap()).unwrap();
    assert_eq!(run["command"], "encode");
    assert!(run["timings"]["total"].as_f64().unwrap() >= 0.0);
    let resolved: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("config.resolved.json")).unwrap()).unwrap();
    assert_eq!(resolved["encoder"]["alpha"], 1);
}

#[test]
fn out_dir_falls_back_to_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let env_dir = tmp.path().join("from-env");
    let res = igel(
        &["encode", "--graph", les_miserables().to_str().unwrap()],
        &[("IGEL_OUT_DIR", &env_dir)],
        tmp.path(),
    );
    assert!(res.status.success());
    assert!(env_dir.join("features.txt").exists());
}

#[test]
fn unknown_config_key_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.json");
    std::fs::write(&cfg, r#"{"walk": {"steps": 3}}"#).unwrap();
    let res = igel(&["encode", "--config", cfg.to_str().unwrap()], &[], tmp.path());
    assert_eq!(res.status.code(), Some(2));
    assert_eq!(error_json(&res)["error"]["kind"], "config");
}

#[test]
fn link_prediction_on_a_triangle_fails_cleanly() {
    let tmp = tempfile::tempdir().unwrap();
    let tri = tmp.path().join("tri.txt");
    std::fs::write(&tri, "0 1\n1 2\n2 0\n").unwrap();
    let res = igel(&["link-predict", "--graph", tri.to_str().unwrap()], &[], tmp.path());
    assert_eq!(res.status.code(), Some(1));
    let err = error_json(&res);
    assert_eq!(err["error"]["kind"], "graph");
    assert!(!err["error"]["message"].as_str().unwrap().is_empty());
}

#[test]
fn missing_graph_is_reported() {
    let tmp = tempfile::tempdir().unwrap();
    let res = igel(&["train-unsup"], &[], tmp.path());
    assert_eq!(res.status.code(), Some(2));
    assert_eq!(error_json(&res)["error"]["kind"], "config");
}

#[test]
fn classify_flags_conflict() {
    let tmp = tempfile::tempdir().unwrap();
    let res = igel(&["classify", "--graph-only", "--with-features"], &[], tmp.path());
    assert!(!res.status.success());
}
