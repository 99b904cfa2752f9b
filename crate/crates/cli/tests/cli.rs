use std::fs;
use std::process::{Command, Output};

fn mnca(dir: &std::path::Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mnca"))
        .current_dir(dir)
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

#[test]
fn usage_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let out = mnca(dir.path(), &["no-such-command"]);
    assert_eq!(out.status.code(), Some(1));
    let out = mnca(dir.path(), &["steer", "--checkpoint", "x"]);
    assert_eq!(out.status.code(), Some(1), "missing --multipliers");
}

#[test]
fn help_exits_0() {
    let dir = tempfile::tempdir().unwrap();
    assert!(mnca(dir.path(), &["--help"]).status.success());
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = mnca(dir.path(), &["train"]);
    assert_eq!(out.status.code(), Some(2), "train without a config");
    let out = mnca(dir.path(), &["--config", "preset:nope", "train"]);
    assert_eq!(out.status.code(), Some(2));
    fs::write(
        dir.path().join("bad.toml"),
        "variant = \"mnca\"\nwhat = 3\n",
    )
    .unwrap();
    let out = mnca(dir.path(), &["--config", "bad.toml", "train"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bad.toml"));
}

#[test]
fn corrupt_checkpoint_exits_2_and_missing_files_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let ck = dir.path().join("ck");
    fs::create_dir(&ck).unwrap();
    fs::write(ck.join("manifest.json"), "{").unwrap();
    fs::write(ck.join("weights.bin"), [0u8; 8]).unwrap();
    let out = mnca(
        dir.path(),
        &["--seed", "1", "analyze", "--checkpoint", "ck"],
    );
    assert_eq!(out.status.code(), Some(2));
    let out = mnca(
        dir.path(),
        &["--seed", "1", "analyze", "--checkpoint", "nowhere"],
    );
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn simulate_writes_manifest_with_seed() {
    let dir = tempfile::tempdir().unwrap();
    let out = mnca(
        dir.path(),
        &[
            "--seed",
            "9",
            "--out-dir",
            "o",
            "simulate-tissue",
            "--realizations",
            "2",
            "--grid-size",
            "9",
            "--steps",
            "3",
        ],
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = fs::read_to_string(dir.path().join("o/run_manifest.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["seed"], 9);
}
