//! End-to-end runs of the `recpo` binary on a tiny configuration.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn recpo(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_recpo")).args(args).output().unwrap()
}

const TINY: &str = r#"{
  "seed": 3,
  "corpus": { "num_items": 40, "num_users": 30, "min_events": 3, "max_events": 5 },
  "model": { "layers": 1, "heads": 2, "width": 16, "ff_width": 32 },
  "sampler": { "group_size": 2, "reasoning_budget": 3 },
  "train": { "batch_size": 2, "total_steps": 4, "val_every": 2, "val_users": 3,
             "checkpoint_every": 2, "learning_rate": 0.001, "warmup_steps": 1 },
  "eval": { "reasoning_budget": 3, "max_users": 3 },
  "latency": { "catalog_sizes": [50, 100], "repetitions": 3, "warmup": 0 }
}"#;

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("cfg.json");
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn run_dir(dir: &Path, name: &str) -> String {
    dir.join(name).to_str().unwrap().to_string()
}

fn train(dir: &Path, name: &str, extra: &[&str]) -> String {
    let cfg = write_config(dir, TINY);
    let rd = run_dir(dir, name);
    let mut args = vec!["train", "--config", &cfg, "--run-dir", &rd];
    args.extend_from_slice(extra);
    let out = recpo(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    rd
}

fn checkpoints(rd: &str) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(Path::new(rd).join("checkpoints"))
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap())
        })
        .collect();
    v.sort();
    v
}

#[test]
fn help_and_version_exit_zero() {
    let out = recpo(&["--help"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("bench-latency"));
    assert_eq!(recpo(&["--version"]).status.code(), Some(0));
}

#[test]
fn usage_errors_exit_one() {
    let out = recpo(&["train", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!out.stderr.is_empty());
    assert_eq!(recpo(&["train", "--ablation", "bogus"]).status.code(), Some(1));
}

#[test]
fn malformed_config_names_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let rd = run_dir(dir.path(), "r");
    for (text, key) in [
        (r#"{"train": {"clip_epsilon": "wide"}}"#, "train.clip_epsilon"),
        (r#"{"sampler": {"topk": 5}}"#, "sampler"),
        (r#"{"train": {"beta": 2.0}}"#, "train.beta"),
        (r#"{"model": {"width": 30, "heads": 4}}"#, "model"),
    ] {
        let cfg = write_config(dir.path(), text);
        let out = recpo(&["train", "--config", &cfg, "--run-dir", &rd]);
        assert_eq!(out.status.code(), Some(1), "{text}");
        let err = String::from_utf8_lossy(&out.stderr);
        assert!(err.contains(key), "{text}: {err}");
    }
}

#[test]
fn missing_checkpoint_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let rd = run_dir(dir.path(), "empty");
    let out = recpo(&["eval", "--config", &cfg, "--run-dir", &rd]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("checkpoint"));
}

#[test]
fn full_pipeline_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let rd = train(dir.path(), "run", &[]);
    let root = Path::new(&rd);
    for f in ["config.json", "metrics.jsonl", "val_metrics.jsonl", "reports/train_summary.json"] {
        assert!(root.join(f).exists(), "{f}");
    }
    let names: Vec<String> = checkpoints(&rd).into_iter().map(|(n, _)| n).collect();
    assert_eq!(names, ["step_00000000.ckpt", "step_00000002.ckpt", "step_00000004.ckpt"]);
    let metrics = fs::read_to_string(root.join("metrics.jsonl")).unwrap();
    assert_eq!(metrics.lines().count(), 4);

    let out = recpo(&["eval", "--run-dir", &rd, "--split", "test"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(root.join("reports/eval_test.json")).unwrap()).unwrap();
    let hr = &report["hit_rate"];
    assert!(hr["5"].as_f64().unwrap() <= hr["10"].as_f64().unwrap());
    assert!(hr["10"].as_f64().unwrap() <= hr["20"].as_f64().unwrap());
    assert!(root.join("reports/eval_test.csv").exists());

    let out = recpo(&["inspect-trajectory", "--run-dir", &rd, "--samples", "2"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(fs::read_dir(root.join("trajectories")).unwrap().count(), 1);

    let out = recpo(&["bench-latency", "--run-dir", &rd, "--checkpoint", "last"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(root.join("reports/latency.json").exists());
    assert!(!root.join(".lock").exists());
}

#[test]
fn plots_are_idempotent_and_cover_every_step() {
    let dir = tempfile::tempdir().unwrap();
    let rd = train(dir.path(), "run", &["--strict"]);
    let plot = root_plot(&rd);
    assert!(recpo(&["plot-curves", "--run-dir", &rd]).status.success());
    let first = fs::read(&plot).unwrap();
    assert!(recpo(&["plot-curves", "--run-dir", &rd]).status.success());
    assert_eq!(first, fs::read(&plot).unwrap());
    // The data series is the only blue polyline; it has one vertex per step.
    let svg = String::from_utf8(first).unwrap();
    let series: Vec<&str> = svg
        .split("<polyline")
        .skip(1)
        .filter(|p| p.contains("stroke=\"#0000FF\""))
        .collect();
    assert_eq!(series.len(), 1);
    let points = series[0].split("points=\"").nth(1).unwrap().split('"').next().unwrap();
    assert_eq!(points.split_whitespace().count(), 4);
}

fn root_plot(rd: &str) -> std::path::PathBuf {
    Path::new(rd).join("reports/plots/train_reward.svg")
}

#[test]
fn plotting_without_metrics_fails() {
    let dir = tempfile::tempdir().unwrap();
    let rd = run_dir(dir.path(), "none");
    fs::create_dir_all(&rd).unwrap();
    assert_eq!(recpo(&["plot-curves", "--run-dir", &rd]).status.code(), Some(1));
}

#[test]
fn strict_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let a = train(dir.path(), "a", &["--strict"]);
    let b = train(dir.path(), "b", &["--strict"]);
    for f in ["metrics.jsonl", "val_metrics.jsonl"] {
        let x = fs::read(Path::new(&a).join(f)).unwrap();
        assert_eq!(x, fs::read(Path::new(&b).join(f)).unwrap(), "{f}");
        assert!(!String::from_utf8_lossy(&x).contains("wall_time"));
    }
    assert_eq!(checkpoints(&a), checkpoints(&b));
}

#[test]
fn seeds_change_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let a = train(dir.path(), "a", &["--strict"]);
    let b = train(dir.path(), "b", &["--strict", "--seed", "4"]);
    assert_ne!(checkpoints(&a), checkpoints(&b));
}

#[test]
fn reward_ablations_match_their_beta_runs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = |beta: f64| TINY.replace(r#""batch_size": 2"#, &format!(r#""beta": {beta}, "batch_size": 2"#));
    for (ablation, beta) in [("no_rc", 0.0), ("no_rd", 1.0)] {
        let ab = train(dir.path(), ablation, &["--strict", "--ablation", ablation]);
        let path = write_config(dir.path(), &cfg(beta));
        let rd = run_dir(dir.path(), &format!("beta{beta}"));
        let out = recpo(&["train", "--config", &path, "--run-dir", &rd, "--strict"]);
        assert!(out.status.success());
        assert_eq!(checkpoints(&ab), checkpoints(&rd), "{ablation}");
        assert_eq!(
            fs::read(Path::new(&ab).join("metrics.jsonl")).unwrap(),
            fs::read(Path::new(&rd).join("metrics.jsonl")).unwrap()
        );
    }
}

#[test]
fn locked_run_dir_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let rd = run_dir(dir.path(), "locked");
    fs::create_dir_all(&rd).unwrap();
    fs::write(Path::new(&rd).join(".lock"), "1").unwrap();
    let out = recpo(&["gen-data", "--config", &cfg, "--run-dir", &rd]);
    assert_eq!(out.status.code(), Some(2));
}
