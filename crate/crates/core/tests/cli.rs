use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

use dear::graph_data::read_jsonl;
use dear::train::accuracy_from_predictions;

fn dear(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dear"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

const TINY: &str = r#"{
  "dataset": {"algorithm": "insertion_sort", "train": 12, "val": 4, "test": 4,
              "train_sizes": [4, 6], "val_size": 6, "test_size": 8},
  "model": {"latent_dim": 8},
  "train": {"epochs": 2, "batch_size": 4},
  "eval": {"repetitions": 2, "dump_predictions": true}
}"#;

fn write_config(dir: &TempDir, text: &str) -> PathBuf {
    let p = dir.path().join("config.json");
    fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn gen_data_is_reproducible() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, TINY);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let o = dear(&["gen-data", "--config", s(&cfg), "--out", s(out), "--seed", "3"]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    for f in ["train.jsonl", "val.jsonl", "test.jsonl", "meta.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    assert_eq!(read_jsonl(&a.join("train.jsonl")).unwrap().len(), 12);
    let stdout = String::from_utf8_lossy(&dear(&["gen-data", "--config", s(&cfg), "--out", s(&a)]).stdout).to_string();
    assert!(stdout.contains("train: 12 samples"), "{stdout}");
}

#[test]
fn train_eval_bench_ablate_round_trip() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, TINY);
    let data = dir.path().join("data");
    let run = dir.path().join("run");
    let with_data = TINY.replacen(
        r#""algorithm": "insertion_sort","#,
        &format!(r#""algorithm": "insertion_sort", "dir": {:?},"#, s(&data)),
        1,
    );
    let cfg_data = dir.path().join("with_data.json");
    fs::write(&cfg_data, &with_data).unwrap();

    // training against a missing dataset directory is a runtime failure
    let o = dear(&["train", "--config", s(&cfg_data), "--out", s(&run)]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("gen-data"));

    assert_eq!(code(&dear(&["gen-data", "--config", s(&cfg_data)])), 0);
    let o = dear(&["train", "--config", s(&cfg_data), "--out", s(&run)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));

    let csv = fs::read_to_string(run.join("metrics.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[0].starts_with("epoch,train_loss"));
    let summary = read_json(&run.join("summary.json"));
    assert_eq!(summary["config"], serde_json::from_str::<Value>(&with_data).unwrap());
    assert!(summary["build"]["git_revision"].is_string());
    assert!(summary["results"]["test"]["accuracy"].is_f64());
    let ckpt = run.join("checkpoint.json");

    // eval reads the algorithm from the checkpoint and leaves it untouched
    let ev = dir.path().join("eval");
    let o = dear(&["eval", "--config", s(&cfg_data), "--checkpoint", s(&ckpt), "--out", s(&ev)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report = read_json(&ev.join("eval.json"));
    let r = &report["results"];
    assert_eq!(r["param_fingerprint"], r["param_fingerprint_after"]);
    let reported = r["metrics"]["accuracy"].as_f64().unwrap();
    let preds: Vec<Vec<usize>> = fs::read_to_string(ev.join("predictions.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_value(serde_json::from_str::<Value>(l).unwrap()["predictions"].clone()).unwrap())
        .collect();
    let test = read_jsonl(&data.join("test.jsonl")).unwrap();
    assert_eq!(accuracy_from_predictions(&test, &preds), reported);

    let bench = dir.path().join("bench");
    let o = dear(&["bench", "--config", s(&cfg), "--checkpoint", s(&ckpt), "--out", s(&bench)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let b = read_json(&bench.join("bench.json"));
    for kind in ["equilibrium", "unroll"] {
        let e = &b["results"][kind];
        assert!(e["mean_seconds_per_sample"].as_f64().unwrap() > 0.0);
        assert!(e["std_seconds_per_sample"].is_f64());
        assert_eq!(e["std_defined"], Value::Bool(true));
    }

    let abl = dir.path().join("ablate");
    let o = dear(&["ablate", "--config", s(&cfg), "--checkpoint", s(&ckpt), "--out", s(&abl)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let a = read_json(&abl.join("ablation.json"));
    for side in ["absolute", "relative"] {
        assert!(a["results"][side]["metrics"]["accuracy"].is_f64());
        assert!(a["results"][side]["metrics"]["mean_iterations"].is_f64());
    }
    let header = fs::read_to_string(abl.join("ablation.csv")).unwrap();
    assert!(header.starts_with(
        "index,n,slots,absolute_correct,relative_correct,absolute_iterations,relative_iterations\n"
    ));
}

#[test]
fn single_candidate_fixture_scores_perfectly() {
    // with no edges every node can only point to itself
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        &dir,
        r#"{"dataset": {"algorithm": "bellman_ford", "train": 4, "val": 2, "test": 5,
                        "edge_probabilities": [0.0]},
            "model": {"latent_dim": 4}, "train": {"epochs": 1}}"#,
    );
    let run = dir.path().join("run");
    assert_eq!(code(&dear(&["train", "--config", s(&cfg), "--out", s(&run)])), 0);
    let ev = dir.path().join("eval");
    let o = dear(&["eval", "--config", s(&cfg), "--checkpoint", s(&run.join("checkpoint.json")), "--out", s(&ev)]);
    assert_eq!(code(&o), 0);
    assert_eq!(read_json(&ev.join("eval.json"))["results"]["metrics"]["accuracy"], 1.0);
}

#[test]
fn usage_errors_exit_one() {
    let dir = TempDir::new().unwrap();
    assert_eq!(code(&dear(&["no-such-command"])), 1);
    assert_eq!(code(&dear(&["train", "--preset", "huge"])), 1);
    assert_eq!(code(&dear(&["train", "--out", s(dir.path())])), 1, "no algorithm");
    let bad = write_config(&dir, r#"{"train": {"epochz": 1}}"#);
    let o = dear(&["train", "--config", s(&bad), "--algorithm", "scc"]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("epochz"));
    assert_eq!(code(&dear(&["--help"])), 0);
}

#[test]
fn missing_checkpoint_is_a_runtime_failure() {
    let dir = TempDir::new().unwrap();
    let o = dear(&[
        "eval",
        "--algorithm",
        "scc",
        "--checkpoint",
        s(&dir.path().join("nope.json")),
        "--out",
        s(dir.path()),
    ]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("nope.json"));
}

#[test]
fn selftest_passes() {
    let o = dear(&["selftest"]);
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert_eq!(code(&o), 0, "{stdout}");
    assert!(stdout.contains(" 0 failed"));
}
