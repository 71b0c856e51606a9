// SPDX-License-Identifier: MIT OR Apache-2.0

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_steer-decode"))
}

fn write_config(dir: &Path, extra: &str) -> PathBuf {
    let path = dir.join("pipeline.toml");
    std::fs::write(&path, format!("seed = 7\nartifacts = \"out\"\n{extra}")).unwrap();
    path
}

fn run(args: &[&str], config: &Path) -> Output {
    bin()
        .args(args)
        .arg("--config")
        .arg(config)
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn prepare(config: &Path) {
    for stage in ["generate", "train", "warmstart", "calibrate"] {
        let o = run(&[stage], config);
        assert!(o.status.success(), "{stage}: {}", stderr(&o));
    }
}

#[test]
fn zero_strength_equals_no_steer() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    prepare(&cfg);
    let zero = run(&["decode", "--mu", "0"], &cfg);
    let plain = run(&["decode", "--no-steer"], &cfg);
    assert!(zero.status.success() && plain.status.success());
    assert!(!zero.stdout.is_empty());
    assert_eq!(zero.stdout, plain.stdout);
    let steered = run(&["decode", "--mu", "-8"], &cfg);
    assert!(steered.status.success(), "{}", stderr(&steered));
}

#[test]
fn corrupt_model_reports_path() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    prepare(&cfg);
    let model = dir.path().join("out/phi.nglm");
    let mut bytes = std::fs::read(&model).unwrap();
    let last = bytes.len() - 1;
    bytes[last] ^= 0x40;
    std::fs::write(&model, bytes).unwrap();
    let o = run(&["decode"], &cfg);
    assert_eq!(o.status.code(), Some(3));
    let msg = stderr(&o);
    assert!(
        msg.contains("checksum") && msg.contains("phi.nglm"),
        "{msg}"
    );
}

#[test]
fn stage_order_violation() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    assert!(run(&["generate"], &cfg).status.success());
    assert!(run(&["train"], &cfg).status.success());
    let o = run(&["calibrate"], &cfg);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("warmstart"), "{}", stderr(&o));
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write_config(dir.path(), "[steering]\nalfa = 0.1\n");
    let o = run(&["generate"], &bad);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("alfa"), "{}", stderr(&o));

    let missing = dir.path().join("nope.toml");
    assert_eq!(run(&["generate"], &missing).status.code(), Some(2));

    let good = write_config(dir.path(), "");
    let o = bin()
        .args(["generate", "--strategy", "beam:0", "--config"])
        .arg(&good)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
    let o = bin()
        .args(["generate", "--alpha", "1.5", "--config"])
        .arg(&good)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn overrides_change_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    prepare(&cfg);
    let greedy = run(&["decode", "--mu", "-3"], &cfg);
    let sampled = bin()
        .args([
            "decode",
            "--mu",
            "-3",
            "--strategy",
            "top_p:0.9",
            "--seed",
            "11",
            "--config",
        ])
        .arg(&cfg)
        .output()
        .unwrap();
    assert!(sampled.status.success(), "{}", stderr(&sampled));
    assert_ne!(greedy.stdout, sampled.stdout);
}

#[test]
fn trace_and_eval() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    prepare(&cfg);
    let trace = dir.path().join("steps.jsonl");
    let o = bin()
        .arg("decode")
        .arg("--trace")
        .arg(&trace)
        .arg("--config")
        .arg(&cfg)
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(std::fs::read_to_string(&trace).unwrap().lines().count() > 0);
    let o = run(&["eval"], &cfg);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("baseline_warmstart") && text.contains("svd"));
}

#[test]
fn run_with_seeds() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let o = bin()
        .args(["run", "--seeds", "1,2", "--config"])
        .arg(&cfg)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(dir.path().join("out/seed-1/calibration.json").is_file());
    assert!(dir.path().join("out/seed-2/generations.txt").is_file());
    assert!(dir.path().join("out/eval.json").is_file());
}

#[test]
fn verify_passes() {
    let o = bin().args(["verify", "--trials", "200"]).output().unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
}
