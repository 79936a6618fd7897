//! The `pofsm` binary: exit codes and a small end-to-end chain.

use std::path::Path;
use std::process::{Command, Output};

use pofsm::pipeline::Config;

fn pofsm(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pofsm")).current_dir(dir).args(args).output().unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = pofsm(dir, args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn tiny_config() -> String {
    let mut cfg = Config::desk();
    cfg.target.samples_per_class = 5;
    cfg.target.test_per_class = 2;
    cfg.flow_net.width = 4;
    cfg.flow_train.iterations = 3;
    cfg.pretrain.iterations = 3;
    cfg.finetune.iterations = 3;
    cfg.to_toml()
}

#[test]
fn malformed_config_exits_with_1() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.toml"), "[codebook]\nclusters = \"many\"\n").unwrap();
    let out = pofsm(dir.path(), &["--config", "bad.toml", "synth"]);
    assert_eq!(out.status.code(), Some(1));
    std::fs::write(dir.path().join("unknown.toml"), "[codebok]\nclusters = 3\n").unwrap();
    assert_eq!(pofsm(dir.path(), &["--config", "unknown.toml", "synth"]).status.code(), Some(1));
    assert_eq!(pofsm(dir.path(), &["--config", "missing.toml", "synth"]).status.code(), Some(1));
}

#[test]
fn missing_data_exits_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = pofsm(dir.path(), &["fit-codebook", "--manifest", "nowhere.csv"]);
    assert_eq!(out.status.code(), Some(2));

    // a manifest pointing at an image that is gone
    ok(dir.path(), &["--out", "data", "synth", "--task", "target"]);
    let first = std::fs::read_to_string(dir.path().join("data/manifest.csv")).unwrap();
    let path = first.lines().nth(1).unwrap().split(',').next().unwrap().to_string();
    std::fs::remove_file(dir.path().join("data").join(path)).unwrap();
    assert_eq!(pofsm(dir.path(), &["fit-codebook", "--manifest", "data/manifest.csv"]).status.code(), Some(2));
}

#[test]
fn full_chain_runs_through_the_binary() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("tiny.toml"), tiny_config()).unwrap();
    let c = ["--config", "tiny.toml", "--seed", "3", "--threads", "1"];
    let run = |extra: &[&str]| ok(d, &[&c[..], extra].concat());

    run(&["--out", "data", "synth", "--task", "target"]);
    run(&["--out", "model", "fit-codebook", "--manifest", "data/manifest.csv"]);
    run(&["--out", "model", "train-flow", "--manifest", "data/manifest.csv", "--codebook", "model/codebook.txt"]);
    assert!(d.join("model/flow_log.csv").exists());
    run(&["--out", "mapped", "map", "--manifest", "data/manifest.csv", "--flow", "model/flow.weights", "--codebook", "model/codebook.txt"]);
    run(&["--out", "cls", "pretrain", "--manifest", "mapped/manifest.csv"]);
    let ft = run(&["--out", "cls", "finetune", "--weights", "cls/pretrained.weights", "--manifest", "mapped/manifest.csv", "--scenario", "top5-layers"]);
    assert!(ft.contains("Fine-tune top 5 layers"));
    let table = run(&["--out", "cls", "eval", "--weights", "cls/finetuned.weights", "--manifest", "mapped/manifest.csv"]);
    assert!(table.contains("top-1"), "{table}");
    let csv = std::fs::read_to_string(d.join("cls/eval.csv")).unwrap();
    assert!(csv.starts_with("class,ap"));

    let mapped = std::fs::read_to_string(d.join("mapped/manifest.csv")).unwrap();
    let first = mapped.lines().nth(1).unwrap().split(',').next().unwrap();
    let pofsm_file = d.join("mapped").join(first);
    run(&["--out", "inspect", "inspect", pofsm_file.to_str().unwrap()]);
    assert!(std::fs::read_dir(d.join("inspect")).unwrap().count() >= 4);
    let header = run(&["--out", "inspect", "inspect", "cls/finetuned.weights"]);
    assert!(header.contains("FC8"));

    // same seed, same bytes
    run(&["--out", "model2", "fit-codebook", "--manifest", "data/manifest.csv"]);
    assert_eq!(std::fs::read(d.join("model/codebook.txt")).unwrap(), std::fs::read(d.join("model2/codebook.txt")).unwrap());
}
