use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const TINY: &str = r#"{
  "model": {"d": 32, "heads": 2, "d_ffn": 48, "enc_layers": 2, "num_theme_nodes": 4, "dropout": 0.1},
  "xe": {"total_steps": 12, "warmup_steps": 3, "batch_size": 3},
  "rl": {"total_steps": 3, "warmup_steps": 1, "batch_size": 2, "k": 3, "max_decode_len": 12},
  "beam": {"max_len": 12},
  "world": {"n_train": 40, "n_dev": 6, "n_test": 6},
  "checkpoint_every": 5,
  "eval_limit": 4
}"#;

fn tcic(root: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tcic"))
        .args(args)
        .env("TCIC_OUTPUT_ROOT", root)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok_json(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn err_json(out: &Output) -> Value {
    assert!(!out.status.success());
    let line = String::from_utf8_lossy(&out.stderr).lines().last().unwrap_or_default().to_string();
    serde_json::from_str(&line).unwrap_or_else(|_| panic!("stderr is not JSON: {line}"))
}

fn setup() -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.json");
    fs::write(&cfg, TINY).unwrap();
    (dir, cfg)
}

fn train(root: &Path, cfg: &Path, name: &str, extra: &[&str]) -> Value {
    let mut args = vec!["train", "--config", cfg.to_str().unwrap(), "--name", name];
    args.extend_from_slice(extra);
    ok_json(&tcic(root, &args))
}

#[test]
fn xe_then_rl_logs_both_phases() {
    let (dir, cfg) = setup();
    let out = train(dir.path(), &cfg, "run", &[]);
    assert_eq!(out["summary"]["xe_steps"], 12);
    assert_eq!(out["summary"]["rl_steps"], 3);
    let log = fs::read_to_string(dir.path().join("run/train.jsonl")).unwrap();
    let phases: Vec<String> = log.lines().map(|l| serde_json::from_str::<Value>(l).unwrap()["phase"].as_str().unwrap().to_string()).collect();
    assert_eq!(phases.iter().filter(|p| *p == "xe").count(), 12);
    assert_eq!(phases.iter().filter(|p| *p == "rl").count(), 3);
    assert!(dir.path().join("run/xe.ckpt").exists() && dir.path().join("run/rl.ckpt").exists());
    let dev = &out["summary"]["dev"];
    assert_eq!(dev["bleu"].as_array().unwrap().len(), 4);
    assert!(dev["rouge_l"].is_number() && dev["cider_d"].is_number());
}

#[test]
fn same_seed_gives_identical_checkpoints() {
    let (dir, cfg) = setup();
    train(dir.path(), &cfg, "a", &["--phase", "xe", "--seed", "7"]);
    train(dir.path(), &cfg, "b", &["--phase", "xe", "--seed", "7"]);
    train(dir.path(), &cfg, "c", &["--phase", "xe", "--seed", "8"]);
    let read = |n: &str| fs::read(dir.path().join(n).join("xe.ckpt")).unwrap();
    assert_eq!(read("a"), read("b"));
    assert_ne!(read("a"), read("c"));
}

#[test]
fn resuming_matches_an_uninterrupted_run() {
    let (dir, cfg) = setup();
    train(dir.path(), &cfg, "full", &["--phase", "xe"]);
    let half = train(dir.path(), &cfg, "half", &["--phase", "xe", "--stop-after", "5"]);
    assert_eq!(half["summary"]["xe_steps"], 5);
    let half = dir.path().join("half/xe.ckpt");
    train(dir.path(), &cfg, "resumed", &["--phase", "xe", "--resume", half.to_str().unwrap()]);
    let full = fs::read(dir.path().join("full/xe.ckpt")).unwrap();
    let resumed = fs::read(dir.path().join("resumed/xe.ckpt")).unwrap();
    assert_eq!(full, resumed);
}

#[test]
fn ensemble_of_one_checkpoint_twice_matches_single() {
    let (dir, cfg) = setup();
    train(dir.path(), &cfg, "m", &["--phase", "xe"]);
    let ck = dir.path().join("m/xe.ckpt");
    let ck = ck.to_str().unwrap();
    let single = ok_json(&tcic(dir.path(), &["eval", "--ckpt", ck, "--split", "dev"]));
    let double = ok_json(&tcic(dir.path(), &["eval", "--ckpt", ck, "--ckpt", ck, "--split", "dev"]));
    assert_eq!(single, double);
    for key in ["bleu", "rouge_l", "cider_d", "n"] {
        assert!(single.get(key).is_some(), "{key}");
    }
}

#[test]
fn generate_and_interpret_write_reports() {
    let (dir, cfg) = setup();
    train(dir.path(), &cfg, "m", &["--phase", "xe"]);
    let ck = dir.path().join("m/xe.ckpt");
    let ck = ck.to_str().unwrap();
    let gen = dir.path().join("gen.jsonl");
    ok_json(&tcic(dir.path(), &["generate", "--ckpt", ck, "--limit", "3", "--out", gen.to_str().unwrap()]));
    let lines: Vec<Value> = fs::read_to_string(&gen).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 3);
    for l in &lines {
        assert!(l["id"].is_number() && l["caption"].is_array() && l["score"].is_number());
    }
    let sampled = ok_json(&tcic(dir.path(), &["generate", "--ckpt", ck, "--limit", "2", "--samples", "3", "--out", gen.to_str().unwrap()]));
    assert_eq!(sampled["captions"], 6);

    let rep = ok_json(&tcic(dir.path(), &["interpret", "--ckpt", ck, "--limit", "5"]));
    let nodes = rep["nodes"].as_array().unwrap();
    assert_eq!(nodes.len(), 4);
    for (i, n) in nodes.iter().enumerate() {
        assert_eq!(n["theme_node"], i);
        assert!(n["objects"].as_array().unwrap().len() <= 8);
        assert!(n["words"].is_array());
    }
    let bad = tcic(dir.path(), &["interpret", "--ckpt", ck, "--layer", "9"]);
    assert_eq!(err_json(&bad)["error"]["kind"], "config");
}

#[test]
fn sweep_emits_one_row_per_count() {
    let (dir, cfg) = setup();
    let out = ok_json(&tcic(dir.path(), &["sweep", "--config", cfg.to_str().unwrap(), "--theme-counts", "0,4,16,64", "--xe-steps", "3"]));
    let counts: Vec<u64> = out["rows"].as_array().unwrap().iter().map(|r| r["theme_nodes"].as_u64().unwrap()).collect();
    assert_eq!(counts, [0, 4, 16, 64]);
}

#[test]
fn ablation_rows_follow_the_ladder() {
    let (dir, cfg) = setup();
    let out = ok_json(&tcic(dir.path(), &["ablate", "--config", cfg.to_str().unwrap(), "--xe-steps", "2"]));
    let stages: Vec<&str> = out["table"].as_array().unwrap().iter().map(|r| r["stage"].as_str().unwrap()).collect();
    assert_eq!(stages, ["T+O", "+R", "+V", "+GE", "+CR", "+TA"]);
}

#[test]
fn gen_data_files_feed_training() {
    let (dir, _) = setup();
    let data = dir.path().join("data");
    let world = dir.path().join("world.json");
    let mut spec: Value = serde_json::to_value(tcic::microworld::WorldSpec::default()).unwrap();
    spec["n_train"] = 30.into();
    spec["n_dev"] = 5.into();
    spec["n_test"] = 5.into();
    fs::write(&world, spec.to_string()).unwrap();
    let out = ok_json(&tcic(dir.path(), &["gen-data", "--world", world.to_str().unwrap(), "--out", data.to_str().unwrap()]));
    assert_eq!((out["train"].as_u64(), out["dev"].as_u64()), (Some(30), Some(5)));
    let cfg = dir.path().join("files.json");
    let mut c: Value = serde_json::from_str(TINY).unwrap();
    c["data"] = serde_json::json!({
        "train": data.join("train.json"), "dev": data.join("dev.json"), "test": data.join("test.json"),
    });
    fs::write(&cfg, c.to_string()).unwrap();
    let out = train(dir.path(), &cfg, "files", &["--phase", "xe", "--xe-steps", "2"]);
    assert_eq!(out["summary"]["xe_steps"], 2);
}

#[test]
fn failures_are_reported_as_json() {
    let (dir, cfg) = setup();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{"xe": {"lamda1": 0.5}}"#).unwrap();
    let e = err_json(&tcic(dir.path(), &["train", "--config", bad.to_str().unwrap()]));
    assert_eq!(e["error"]["kind"], "config");
    assert!(e["error"]["message"].as_str().unwrap().contains("lamda1"));

    let e = err_json(&tcic(dir.path(), &["eval", "--ckpt", "/nonexistent.ckpt"]));
    assert!(e["error"]["message"].as_str().unwrap().contains("nonexistent"));

    let e = err_json(&tcic(dir.path(), &["train", "--config", cfg.to_str().unwrap(), "--phase", "rl"]));
    assert_eq!(e["error"]["kind"], "config");

    let e = err_json(&tcic(dir.path(), &["frobnicate"]));
    assert_eq!(e["error"]["kind"], "usage");

    let garbage = dir.path().join("garbage.ckpt");
    fs::write(&garbage, b"not a checkpoint").unwrap();
    let e = err_json(&tcic(dir.path(), &["eval", "--ckpt", garbage.to_str().unwrap()]));
    assert_eq!(e["error"]["kind"], "checkpoint");
}

#[test]
fn output_root_comes_from_the_environment() {
    let (dir, cfg) = setup();
    let out = ok_json(&tcic(dir.path(), &["train", "--config", cfg.to_str().unwrap(), "--phase", "xe", "--xe-steps", "1"]));
    let run_dir = PathBuf::from(out["run_dir"].as_str().unwrap());
    assert!(run_dir.starts_with(dir.path()));
    assert!(run_dir.join("config.json").exists());
}
