use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gameon")).args(args).output().unwrap()
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!("stdout is not JSON ({e}): {}", String::from_utf8_lossy(&out.stdout))
    })
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn synth(dir: &Path, seed: &str, n: &str, mode: &str) -> String {
    let out = run(&["synth", "--seed", seed, "--n", n, "--mode", mode, "--out", dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    json(&out)["manifest"].as_str().unwrap().to_owned()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_owned()
}

const FAST: &str = "model.d_shared = 16\nmodel.d_gat = 8\nmodel.d_hidden = 4\ntrain.epochs = 2\ntrain.batch_size = 8\n";

#[test]
fn params_reports_every_tensor_and_the_total() {
    let out = run(&["params"]);
    assert!(out.status.success());
    let v = json(&out);
    assert_eq!(v["total"], 1_017_730);
    let sum: u64 = v["tensors"].as_array().unwrap().iter().map(|t| t["count"].as_u64().unwrap()).sum();
    assert_eq!(sum, 1_017_730);
    assert_eq!(v["tensors"][0]["name"], "proj.w");
    assert_eq!(v["tensors"][0]["shape"], serde_json::json!([768, 768]));
}

#[test]
fn params_follow_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", r#"{"model": {"variant": "concat"}}"#);
    let v = json(&run(&["params", "--config", &cfg]));
    assert_eq!(v["variant"], "concat");
    assert_ne!(v["total"], 1_017_730);
}

#[test]
fn synth_is_deterministic_and_validates_its_arguments() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    synth(&a, "3", "10", "crossmodal");
    synth(&b, "3", "10", "crossmodal");
    for entry in std::fs::read_dir(&a).unwrap() {
        let name = entry.unwrap().file_name();
        assert_eq!(std::fs::read(a.join(&name)).unwrap(), std::fs::read(b.join(&name)).unwrap());
    }
    let odd = run(&["synth", "--n", "5", "--out", dir.path().join("c").to_str().unwrap()]);
    assert_eq!(odd.status.code(), Some(1));
    assert!(stderr(&odd).starts_with("error:"));
    let mode = run(&["synth", "--n", "10", "--mode", "noisy", "--out", dir.path().join("d").to_str().unwrap()]);
    assert_eq!(mode.status.code(), Some(1));
}

#[test]
fn train_then_eval() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(&dir.path().join("data"), "1", "20", "separable");
    let cfg = write(dir.path(), "run.txt", FAST);
    let out_dir = dir.path().join("run");
    let out = run(&["train", "--manifest", &manifest, "--config", &cfg, "--out", out_dir.to_str().unwrap(), "--variant", "gcn", "--seed", "4"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let summary = json(&out);
    assert_eq!(summary["variant"], "gcn");
    assert_eq!(summary["epochs_run"], 2);
    for file in ["checkpoint.gmck", "final.gmck", "history.tsv", "history.json", "run.json"] {
        assert!(out_dir.join(file).exists(), "{file}");
    }
    let tsv = std::fs::read_to_string(out_dir.join("history.tsv")).unwrap();
    assert_eq!(tsv.lines().count(), 3);
    assert_eq!(tsv.lines().next().unwrap().split('\t').count(), 10);

    let ckpt = out_dir.join("checkpoint.gmck");
    let out = run(&["eval", "--checkpoint", ckpt.to_str().unwrap(), "--manifest", &manifest, "--split", "val", "--metrics-per-class"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let m = json(&out);
    assert_eq!(m["split"], "val");
    assert_eq!(m["samples"], 2);
    assert_eq!(m["variant"], "gcn");
    for key in ["accuracy", "precision", "recall", "f1"] {
        let x = m[key].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&x), "{key} = {x}");
    }
    assert_eq!(m["per_class"].as_array().unwrap().len(), 2);

    let bad = run(&["eval", "--checkpoint", ckpt.to_str().unwrap(), "--manifest", &manifest, "--split", "dev"]);
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn missing_inputs_exit_with_io_code() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.jsonl");
    let out = run(&["train", "--manifest", missing.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("nope.jsonl"));
    let out = run(&["eval", "--checkpoint", missing.to_str().unwrap(), "--manifest", missing.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bad_configs_and_commands_exit_with_validation_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "bad.txt", "train.learning_rate = 3\n");
    assert_eq!(run(&["params", "--config", &cfg]).status.code(), Some(1));
    let cfg = write(dir.path(), "neg.txt", "model.dropout = 1.5\n");
    assert_eq!(run(&["params", "--config", &cfg]).status.code(), Some(1));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(run(&["train"]).status.code(), Some(1));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}

#[test]
fn gradcheck_passes_and_detects_an_injected_fault() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "toy.txt", "model.d_in = 8\nmodel.d_shared = 6\nmodel.d_gat = 4\nmodel.d_hidden = 3\n");
    let ok = run(&["gradcheck", "--config", &cfg]);
    assert!(ok.status.success(), "{}", stderr(&ok));
    let report = json(&ok);
    assert_eq!(report["passed"], true);
    assert!(report["max_rel_error"].as_f64().unwrap() < 1e-4);

    let bad = run(&["gradcheck", "--config", &cfg, "--inject-fault"]);
    assert_eq!(bad.status.code(), Some(3));
    assert_eq!(json(&bad)["passed"], false);
    assert!(stderr(&bad).contains("gradient check failed"));
}

#[test]
fn ablate_reports_all_five_variants() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(&dir.path().join("data"), "2", "20", "crossmodal");
    let cfg = write(dir.path(), "run.txt", FAST);
    let out_dir = dir.path().join("ablate");
    let out = run(&["ablate", "--manifest", &manifest, "--config", &cfg, "--out", out_dir.to_str().unwrap(), "--seed", "1"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let rows = json(&out)["rows"].as_array().unwrap().clone();
    let variants: Vec<&str> = rows.iter().map(|r| r["variant"].as_str().unwrap()).collect();
    assert_eq!(variants.len(), 5);
    for v in ["text", "visual", "concat", "gcn"] {
        assert!(variants.contains(&v), "{variants:?}");
    }
    let tsv = std::fs::read_to_string(out_dir.join("ablation.tsv")).unwrap();
    assert_eq!(tsv.lines().count(), 6);
}
