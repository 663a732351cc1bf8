use std::collections::HashMap;
use std::path::Path;
use std::process::{Command, Output};
use std::time::Instant;

use swr::features::read_features;
use swr::manifest::load_manifest;
use swr_core::data::Split;

const TINY: &str = r#"
name = "tiny"
num_classes = 4
feature_dim = 4
mode = "multiclass"
global_pairs = [[1, 2]]
noise_sigma = 0.0
num_videos = 6
seed = 3

[occlusion]
rate = 0.05
min_len = 2
max_len = 4

[[grammar]]
phase = 0
min_frames = 5
max_frames = 8

[[grammar]]
phase = 1
min_frames = 4
max_frames = 6

[[grammar]]
phase = 2
min_frames = 4
max_frames = 6

[[grammar]]
phase = 3
min_frames = 5
max_frames = 8

[split]
test-groups = 2
"#;

fn swr(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_swr"))
        .args(args)
        .current_dir(cwd)
        .env("SWR_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn tiny_dataset(dir: &Path) {
    std::fs::write(dir.join("tiny.toml"), TINY).unwrap();
    let o = swr(&["synth", "--config", "tiny.toml", "--out", "data"], dir);
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn bundled_internal_7_writes_the_requested_videos() {
    let dir = tempfile::tempdir().unwrap();
    let o = swr(&["synth", "--out", "d"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let ds = load_manifest(&dir.path().join("d/manifest.toml")).unwrap();
    assert_eq!(ds.manifest.entries.len(), 50);
    assert_eq!(ds.manifest.entries_in(Split::Train).count(), 40);
    assert_eq!(ds.manifest.entries_in(Split::Test).count(), 10);
    assert!(dir.path().join("d/bayes_bound.json").exists());
    assert_eq!(std::fs::read_to_string(dir.path().join("d/annotations.jsonl")).unwrap().lines().count(), 50);
    let o = swr(&["synth", "--out", "d", "--no-overwrite"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("already exists"));
}

#[test]
fn bound_file_matches_counting_oracle() {
    let dir = tempfile::tempdir().unwrap();
    tiny_dataset(dir.path());
    // Oracle: at zero noise, frames emitted by one cluster have identical rows.
    let ds = load_manifest(&dir.path().join("data/manifest.toml")).unwrap();
    let mut counts: HashMap<Vec<u32>, HashMap<usize, usize>> = HashMap::new();
    let mut total = 0;
    for e in &ds.manifest.entries {
        let v = read_features(&ds.path_of(e), &e.video_id).unwrap();
        let ids = v.labels.ids().unwrap();
        for (t, &y) in ids.iter().enumerate() {
            let key = v.seq.features.row(t).iter().map(|&x| (x as f32).to_bits()).collect();
            *counts.entry(key).or_default().entry(y).or_default() += 1;
            total += 1;
        }
    }
    let best: usize = counts.values().map(|c| *c.values().max().unwrap()).sum();
    let oracle = best as f64 / total as f64;
    let text = std::fs::read_to_string(dir.path().join("data/bayes_bound.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    let emitted = v["all"].as_f64().unwrap();
    assert!((emitted - oracle).abs() < 1e-12, "{emitted} vs {oracle}");
    assert!(oracle < 1.0);
}

#[test]
fn invalid_synth_config_itemizes_violations() {
    let dir = tempfile::tempdir().unwrap();
    let bad = TINY.replace("min_len = 2\nmax_len = 4", "min_len = 5\nmax_len = 4").replace("rate = 0.05", "rate = 1.5");
    std::fs::write(dir.path().join("bad.toml"), bad).unwrap();
    let o = swr(&["synth", "--config", "bad.toml", "--out", "x"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("min_len") && err.contains("rate"), "{err}");
    assert_eq!(err.trim().lines().count(), 1, "{err}");
    assert!(!dir.path().join("x/manifest.toml").exists());
}

#[test]
fn train_eval_contract_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    tiny_dataset(p);
    let args = [
        "train-eval", "--manifest", "data/manifest.toml", "--model", "mstcn", "--seeds", "0,1,2", "--epochs", "2", "--out",
        "runs/a",
    ];
    let o = swr(&args, p);
    assert!(o.status.success(), "{}", stderr(&o));
    let run = p.join("runs/a");
    for s in 0..3 {
        assert!(run.join(format!("seed-{s}/model.swrc")).is_file());
        assert_eq!(
            std::fs::read_to_string(run.join(format!("seed-{s}/history.jsonl"))).unwrap().lines().count(),
            2
        );
    }
    assert!(run.join("report.json").is_file());
    assert!(run.join("config.toml").is_file());
    assert!(!run.join("INCOMPLETE").exists());
    let table = String::from_utf8_lossy(&o.stdout).into_owned();
    assert!(table.contains("mstcn") && table.contains('±'), "{table}");

    let report = std::fs::read(run.join("report.json")).unwrap();
    let ckpt = std::fs::read(run.join("seed-1/model.swrc")).unwrap();
    let o = swr(&args, p);
    assert!(o.status.success());
    assert_eq!(std::fs::read(run.join("report.json")).unwrap(), report);
    assert_eq!(std::fs::read(run.join("seed-1/model.swrc")).unwrap(), ckpt);

    let mut refuse = args.to_vec();
    refuse.push("--no-overwrite");
    let o = swr(&refuse, p);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("already exists"));

    // The written config alone reproduces the run.
    let o = swr(&["train-eval", "--config", "runs/a/config.toml", "--out", "runs/b"], p);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(std::fs::read(p.join("runs/b/report.json")).unwrap(), report);

    let o = swr(&["report", "runs/a", "runs/b"], p);
    assert!(o.status.success());
    assert_eq!(String::from_utf8_lossy(&o.stdout).matches("mstcn").count(), 2);
}

#[test]
fn failed_run_leaves_marker() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    tiny_dataset(p);
    std::fs::create_dir_all(p.join("runs/a")).unwrap();
    std::fs::write(p.join("runs/a/seed-0"), "not a directory").unwrap();
    let o = swr(
        &["train-eval", "--manifest", "data/manifest.toml", "--model", "gru", "--seeds", "0", "--epochs", "1", "--out", "runs/a"],
        p,
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(p.join("runs/a/INCOMPLETE").exists());
    let o = swr(&["report", "runs/a"], p);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("incomplete"));
}

#[test]
fn usage_and_config_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let o = swr(&["train-eval", "--manifest", "m.toml", "--model", "lstm", "--out", "r"], p);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("frame-mlp, clip-conv, gru, mstcn"), "{err}");
    assert!(swr(&["no-such-command"], p).status.code() == Some(1));
    assert!(swr(&["train-eval", "--model", "gru", "--seeds", "0,x"], p).status.code() == Some(1));
    assert!(swr(&["gradcheck", "everything"], p).status.code() == Some(1));

    tiny_dataset(p);
    let o = Command::new(env!("CARGO_BIN_EXE_swr"))
        .args(["train-eval", "--manifest", "data/manifest.toml", "--model", "gru", "--out", "r"])
        .current_dir(p)
        .env("SWR_THREADS", "0")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("SWR_THREADS"));
    let o = swr(&["train-eval", "--manifest", "missing.toml", "--model", "gru", "--out", "r"], p);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(stderr(&o).trim().lines().count(), 1);
}

#[test]
fn gradcheck_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let start = Instant::now();
    let o = swr(&["gradcheck", "ops"], dir.path());
    assert!(o.status.success());
    assert!(start.elapsed().as_secs() < 60);
    assert_eq!(String::from_utf8_lossy(&o.stdout).lines().count(), 6);

    let o = swr(&["gradcheck", "all"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));

    let o = swr(&["gradcheck", "models", "--inject-fault", "gru-update-gate"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("gru") && err.contains("w_z"), "{err}");
    let out = String::from_utf8_lossy(&o.stdout).into_owned();
    assert!(out.lines().any(|l| l.starts_with("mstcn") && l.ends_with("ok")), "{out}");
}
