//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any criterion fails.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use rand::Rng;
use swr::config::{ArchSettings, RunConfig, TrainSettings};
use swr::datagen::{write_synth, SynthJob};
use swr::harness::{train_eval, RunOptions, REPORT_FILE};
use swr_core::data::{LabelMode, LabelTrack, Manifest, ManifestEntry, Split};
use swr_core::loss::{bce, cross_entropy};
use swr_core::metrics::{average_precision, evaluate_video, f1_video, per_class_pr};
use swr_core::model::mstcn::stage_receptive_field;
use swr_core::model::probe::{random_input, random_params};
use swr_core::model::{forward, init_params};
use swr_core::rng;
use swr_core::split::group_split;
use swr_core::suites::{run_unit, units, Scope};
use swr_core::synth::{presets, synth_generate, OcclusionConfig, PhaseStep};
use swr_core::train::{pooled_frame_accuracy, train, TrainConfig};
use swr_core::{Matrix, ModelKind, ModelSpec, Prediction};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

// 1. Every finite-difference unit passes.

fn gradcheck_suites() -> Outcome {
    let start = Instant::now();
    let mut checks = 0;
    for unit in units(Scope::All) {
        let r = run_unit(unit, None).map_err(err)?;
        ensure(r.pass, || format!("{unit}: max rel err {:.2e} at {:?}", r.max_rel_err, r.worst))?;
        checks += r.checks;
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 300.0, || format!("took {secs:.0}s"))?;
    Ok(format!("{} units, {checks} checks, {secs:.1}s", units(Scope::All).len()))
}

// 2. Causality and receptive field.

fn outputs(spec: &ModelSpec, seed: u64, x: &Matrix) -> Result<Vec<Matrix>, String> {
    let p = random_params(spec, seed).map_err(err)?;
    forward(&p, spec, x).map(|(s, _)| s).map_err(err)
}

fn rows_equal(a: &[Matrix], b: &[Matrix], rows: impl Iterator<Item = usize> + Clone) -> bool {
    a.iter().zip(b).all(|(a, b)| rows.clone().all(|t| a.row(t) == b.row(t)))
}

fn impulse_reach(layers: usize) -> Result<usize, String> {
    let mut spec = ModelSpec::new(ModelKind::Mstcn, 3, 3, LabelMode::Multiclass);
    spec.layers = layers;
    spec.stages = 1;
    spec.filters = 4;
    let mut p = init_params(&spec, 7).map_err(err)?;
    for q in p.params_mut() {
        if q.name.ends_with("dil.b") {
            q.value.fill(10.0);
        }
    }
    let (t_len, t0) = (48, 20);
    let base = random_input(t_len, 3, 11);
    let mut moved = base.clone();
    moved[(t0, 0)] += 1.0;
    let a = forward(&p, &spec, &base).map_err(err)?.0;
    let b = forward(&p, &spec, &moved).map_err(err)?.0;
    let changed: Vec<usize> = (0..t_len).filter(|&t| a[0].row(t) != b[0].row(t)).collect();
    ensure(changed.iter().all(|&t| t >= t0), || format!("L={layers}: output before the impulse moved"))?;
    Ok(changed.last().map_or(0, |&t| t - t0 + 1))
}

fn causality() -> Outcome {
    let (d, c, t_len) = (6, 4, 40);
    for kind in [ModelKind::Gru, ModelKind::Mstcn, ModelKind::ClipConv] {
        let mut spec = ModelSpec::new(kind, d, c, LabelMode::Multiclass);
        spec.layers = 6;
        spec.filters = 8;
        spec.clip_filters = 8;
        for trial in 0..50u64 {
            let mut r = rng::stream(trial, rng::STREAM_PROBE + 99);
            let x = random_input(t_len, d, 1000 + trial);
            let t0 = r.random_range(1..t_len);
            let mut future = x.clone();
            for t in t0..t_len {
                for v in future.row_mut(t) {
                    *v = r.random_range(-3.0..3.0);
                }
            }
            let a = outputs(&spec, trial, &x)?;
            let b = outputs(&spec, trial, &future)?;
            ensure(rows_equal(&a, &b, 0..t0), || format!("{kind}: frames before t0={t0} moved (trial {trial})"))?;
            ensure(a.iter().zip(&b).any(|(a, b)| a.row(t0) != b.row(t0)), || format!("{kind}: frame t0 ignored its input"))?;
            if kind == ModelKind::ClipConv {
                let mut spike = x.clone();
                for v in spike.row_mut(t0) {
                    *v += 1.0;
                }
                let s = outputs(&spec, trial, &spike)?;
                let window = spec.clip_window;
                ensure(rows_equal(&a, &s, (t0 + window).min(t_len)..t_len), || {
                    format!("clip-conv: frame t0={t0} reached past its window")
                })?;
            }
        }
    }
    let mut reaches = Vec::new();
    for layers in 1..=3 {
        let reach = impulse_reach(layers)?;
        let closed = (1usize << (layers + 1)) - 1;
        ensure(reach == closed, || format!("L={layers}: impulse reach {reach}, expected {closed}"))?;
        let mut spec = ModelSpec::new(ModelKind::Mstcn, 3, 3, LabelMode::Multiclass);
        spec.layers = layers;
        ensure(stage_receptive_field(&spec) == closed, || format!("L={layers}: reported field differs"))?;
        reaches.push(reach);
    }
    Ok(format!("3 models x 50 inputs causal, impulse reach {reaches:?} for L=1..3"))
}

// 3. Metrics and losses against direct oracles.

fn oracle_f1(pred: &[usize], truth: &[usize], c: usize) -> f64 {
    let (mut ps, mut rs) = (Vec::new(), Vec::new());
    for k in 0..c {
        let predicted: BTreeSet<usize> = (0..pred.len()).filter(|&t| pred[t] == k).collect();
        let actual: BTreeSet<usize> = (0..truth.len()).filter(|&t| truth[t] == k).collect();
        let hit = predicted.intersection(&actual).count() as f64;
        if !predicted.is_empty() {
            ps.push(hit / predicted.len() as f64);
        }
        if !actual.is_empty() {
            rs.push(hit / actual.len() as f64);
        }
    }
    let mean = |v: &[f64]| if v.is_empty() { 0.0 } else { v.iter().sum::<f64>() / v.len() as f64 };
    let (p, r) = (mean(&ps), mean(&rs));
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Mean over positives of the precision at that positive's rank.
fn oracle_ap(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let pos: Vec<usize> = (0..scores.len()).filter(|&i| labels[i]).collect();
    if pos.is_empty() {
        return None;
    }
    let ahead = |i: usize, j: usize| scores[j] > scores[i] || (scores[j] == scores[i] && j < i);
    let sum: f64 = pos
        .iter()
        .map(|&i| {
            let rank = 1 + (0..scores.len()).filter(|&j| ahead(i, j)).count();
            let hits = 1 + pos.iter().filter(|&&j| ahead(i, j)).count();
            hits as f64 / rank as f64
        })
        .sum();
    Some(sum / pos.len() as f64)
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * (1.0 + b.abs())
}

fn metric_oracles() -> Outcome {
    let c = per_class_pr(&[0, 1, 1, 1], &[0, 0, 1, 1], 2);
    let f1 = f1_video(&c).map_err(err)?.2;
    ensure((f1 - 0.789474).abs() < 1e-6, || format!("hand F1 {f1}"))?;
    let ap = average_precision(&[0.9, 0.8, 0.7], &[true, false, true]).unwrap_or(0.0);
    ensure(close(ap, 5.0 / 6.0), || format!("hand AP {ap}"))?;
    let ce = cross_entropy(&Matrix::zeros(5, 7), &LabelTrack::multiclass(7, vec![0, 3, 6, 2, 1])).map_err(err)?.0;
    ensure(close(ce, 7f64.ln()), || format!("uniform CE {ce}"))?;

    for i in 0..1000u64 {
        let mut r = rng::stream(i, rng::STREAM_PROBE + 7);
        let t_len = r.random_range(1..=12);
        let classes = r.random_range(2..=4);
        // Quarter-step scores give ties and keep sigmoid away from 0.5.
        let scores = Matrix::from_fn(t_len, classes, |_, _| {
            let k = r.random_range(1..=8) as f64 * 0.25;
            if r.random_bool(0.5) {
                k
            } else {
                -k
            }
        });
        let truth: Vec<usize> = (0..t_len).map(|_| r.random_range(0..classes)).collect();
        let pred: Vec<usize> = (0..t_len).map(|_| r.random_range(0..classes)).collect();
        let onehot = Matrix::from_fn(t_len, classes, |t, k| if pred[t] == k { 2.0 } else { 0.0 });
        let labels = LabelTrack::multiclass(classes, truth.clone());
        let m = evaluate_video("v", &Prediction::from_scores(onehot, LabelMode::Multiclass).map_err(err)?, &labels)
            .map_err(err)?;
        let acc = pred.iter().zip(&truth).filter(|(a, b)| a == b).count() as f64 / t_len as f64;
        ensure(close(m.accuracy.unwrap_or(-1.0), acc), || format!("instance {i}: accuracy"))?;
        ensure(close(m.f1, oracle_f1(&pred, &truth, classes)), || format!("instance {i}: multiclass F1"))?;

        let ce = cross_entropy(&scores, &labels).map_err(err)?.0;
        let naive: f64 = (0..t_len)
            .map(|t| {
                let z: f64 = scores.row(t).iter().map(|v| v.exp()).sum();
                z.ln() - scores[(t, truth[t])]
            })
            .sum::<f64>()
            / t_len as f64;
        ensure(close(ce, naive), || format!("instance {i}: CE {ce} vs {naive}"))?;

        let mask: Vec<u8> = (0..t_len * classes).map(|_| u8::from(r.random_bool(0.4))).collect();
        let ml = LabelTrack::multilabel(classes, mask.clone());
        let b = bce(&scores, &ml).map_err(err)?.0;
        let naive: f64 = scores
            .as_slice()
            .iter()
            .zip(&mask)
            .map(|(&s, &y)| {
                let p = 1.0 / (1.0 + (-s).exp());
                if y == 1 {
                    -p.ln()
                } else {
                    -(1.0 - p).ln()
                }
            })
            .sum::<f64>()
            / (t_len * classes) as f64;
        ensure((b - naive).abs() < 1e-12, || format!("instance {i}: BCE {b} vs {naive}"))?;

        let decided: Vec<bool> = scores.as_slice().iter().map(|&s| s > 0.0).collect();
        let (mut ps, mut rs) = (Vec::new(), Vec::new());
        for k in 0..classes {
            let col = |t: usize| (decided[t * classes + k], mask[t * classes + k] == 1);
            let hit = (0..t_len).filter(|&t| col(t) == (true, true)).count() as f64;
            let np = (0..t_len).filter(|&t| col(t).0).count();
            let na = (0..t_len).filter(|&t| col(t).1).count();
            if np > 0 {
                ps.push(hit / np as f64);
            }
            if na > 0 {
                rs.push(hit / na as f64);
            }
        }
        let pred_ml = Prediction::from_scores(scores.clone(), LabelMode::Multilabel).map_err(err)?;
        if ps.is_empty() && rs.is_empty() {
            ensure(evaluate_video("v", &pred_ml, &ml).is_err(), || format!("instance {i}: undefined F1 accepted"))?;
            continue;
        }
        let m = evaluate_video("v", &pred_ml, &ml).map_err(err)?;
        let mean = |v: &[f64]| if v.is_empty() { 0.0 } else { v.iter().sum::<f64>() / v.len() as f64 };
        let (p, r) = (mean(&ps), mean(&rs));
        let want = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
        ensure(close(m.f1, want), || format!("instance {i}: multilabel F1 {} vs {want}", m.f1))?;
        let mut aps = Vec::new();
        for k in 0..classes {
            let col: Vec<f64> = (0..t_len).map(|t| scores[(t, k)]).collect();
            let lab: Vec<bool> = (0..t_len).map(|t| mask[t * classes + k] == 1).collect();
            let want = oracle_ap(&col, &lab);
            let got = m.ap_per_class[k];
            ensure(got.is_some() == want.is_some(), || format!("instance {i}: AP definedness, class {k}"))?;
            if let (Some(g), Some(w)) = (got, want) {
                ensure(close(g, w), || format!("instance {i}: AP class {k} {g} vs {w}"))?;
                aps.push(w);
            }
        }
        if !aps.is_empty() {
            let want = aps.iter().sum::<f64>() / aps.len() as f64;
            ensure(close(m.mean_ap.unwrap_or(-1.0), want), || format!("instance {i}: mAP"))?;
        }
    }
    Ok("hand examples reproduced, 1000 random instances agree".into())
}

// 4. Thread-count independence.

const SMALL_SYNTH: &str = r#"
name = "small"
num_classes = 4
feature_dim = 6
mode = "multiclass"
global_pairs = [[1, 2]]
noise_sigma = 0.3
num_videos = 8
seed = 5

[occlusion]
rate = 0.05
min_len = 2
max_len = 4

[[grammar]]
phase = 0
min_frames = 6
max_frames = 10

[[grammar]]
phase = 1
min_frames = 5
max_frames = 8

[[grammar]]
phase = 2
min_frames = 5
max_frames = 8

[[grammar]]
phase = 3
min_frames = 6
max_frames = 10

[split]
test-groups = 2
"#;

fn small_arch() -> ArchSettings {
    ArchSettings {
        mlp_hidden: 16,
        clip_window: 8,
        clip_filters: 8,
        layers: 5,
        filters: 8,
        ..ArchSettings::default()
    }
}

fn run_files(dir: &Path, seeds: &[u64]) -> Result<Vec<(String, Vec<u8>)>, String> {
    let mut names = vec![REPORT_FILE.to_string()];
    for s in seeds {
        for f in ["model.swrc", "history.jsonl", "report.json"] {
            names.push(format!("seed-{s}/{f}"));
        }
    }
    names
        .into_iter()
        .map(|n| std::fs::read(dir.join(&n)).map(|b| (n.clone(), b)).map_err(|e| format!("{n}: {e}")))
        .collect()
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(err)?;
    let root = tmp.path();
    std::fs::write(root.join("small.toml"), SMALL_SYNTH).map_err(err)?;
    let job = SynthJob::load(root.join("small.toml").to_str().unwrap_or_default()).map_err(err)?;
    write_synth(&job, &root.join("data"), false).map_err(err)?;
    let seeds = vec![0, 1, 2, 3];
    let mut compared = 0;
    for kind in ModelKind::ALL {
        let mut files = Vec::new();
        for threads in [1, 4] {
            let out = root.join(format!("runs/{kind}-{threads}"));
            let cfg = RunConfig {
                model: kind,
                manifest: root.join("data/manifest.toml"),
                seeds: seeds.clone(),
                out: out.clone(),
                train: TrainSettings {
                    epochs: 3,
                    ..TrainSettings::default()
                },
                arch: small_arch(),
            };
            let opts = RunOptions {
                threads,
                ..RunOptions::default()
            };
            train_eval(&cfg, &opts).map_err(err)?;
            files.push(run_files(&out, &seeds)?);
        }
        for ((name, a), (_, b)) in files[0].iter().zip(&files[1]) {
            ensure(a == b, || format!("{kind}: {name} differs between 1 and 4 threads"))?;
            compared += 1;
        }
    }
    // Same through the binary and its environment variable.
    let mut reports = Vec::new();
    for threads in ["1", "4"] {
        let o = Command::new(env!("CARGO_BIN_EXE_swr"))
            .args(["train-eval", "--manifest", "data/manifest.toml", "--model", "gru", "--seeds", "0,1,2,3"])
            .args(["--epochs", "2", "--out", &format!("cli-{threads}")])
            .current_dir(root)
            .env("SWR_THREADS", threads)
            .output()
            .map_err(err)?;
        ensure(o.status.success(), || String::from_utf8_lossy(&o.stderr).into_owned())?;
        reports.push(std::fs::read(root.join(format!("cli-{threads}/{REPORT_FILE}"))).map_err(err)?);
    }
    ensure(reports[0] == reports[1], || "cli: report differs between SWR_THREADS=1 and 4".into())?;
    Ok(format!("{compared} files byte-identical across 4 models, cli run identical"))
}

// 5. Overfitting two short videos.

fn overfit() -> Outcome {
    let mut cfg = presets::internal_7();
    cfg.global_pairs.clear();
    cfg.occlusion = OcclusionConfig::none();
    cfg.num_videos = 2;
    cfg.grammar = (0..7)
        .map(|phase| {
            let n = if phase < 2 { 15 } else { 14 };
            PhaseStep {
                phase,
                min_frames: n,
                max_frames: n,
            }
        })
        .collect();
    let ds = synth_generate(&cfg).map_err(err)?;
    let videos: Vec<_> = ds.videos.iter().map(|v| v.video.clone()).collect();
    ensure(videos.iter().all(|v| v.seq.frames() == 100), || "videos are not 100 frames".into())?;
    let mut parts = Vec::new();
    for (kind, lr) in [(ModelKind::Gru, 1e-1), (ModelKind::Mstcn, 1e-3)] {
        let spec = ModelSpec::new(kind, cfg.feature_dim, cfg.num_classes, LabelMode::Multiclass);
        let tc = TrainConfig {
            lr,
            epochs: 30,
            ..TrainConfig::default()
        };
        let start = Instant::now();
        let (p, _) = train(&spec, &tc, &videos, None).map_err(err)?;
        let secs = start.elapsed().as_secs_f64();
        let acc = pooled_frame_accuracy(&p, &spec, &videos).map_err(err)?;
        ensure(acc == 1.0, || format!("{kind}: train accuracy {acc:.3}"))?;
        ensure(secs < 120.0, || format!("{kind}: took {secs:.0}s"))?;
        parts.push(format!("{kind} 100% in {secs:.1}s"));
    }
    Ok(parts.join(", "))
}

// 6. Bundled benchmark ordering.

fn benchmark() -> Outcome {
    let start = Instant::now();
    let tmp = tempfile::tempdir().map_err(err)?;
    let job = SynthJob::bundled("internal-7").ok_or("no bundled internal-7")?;
    let summary = write_synth(&job, &tmp.path().join("data"), false).map_err(err)?;
    let bound = summary.bound.ok_or("no bound for internal-7")?.test;
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get());
    let mut acc = BTreeMap::new();
    for kind in ModelKind::ALL {
        let cfg = RunConfig {
            model: kind,
            manifest: tmp.path().join("data/manifest.toml"),
            seeds: vec![0, 1, 2],
            out: tmp.path().join(format!("runs/{kind}")),
            train: TrainSettings::default(),
            arch: ArchSettings::default(),
        };
        let opts = RunOptions {
            threads,
            ..RunOptions::default()
        };
        let report = train_eval(&cfg, &opts).map_err(err)?;
        let a = report.aggregate.summary.get("accuracy").ok_or("no accuracy in report")?.mean;
        acc.insert(kind, a);
    }
    let mlp = acc[&ModelKind::FrameMlp];
    let listing = acc.iter().map(|(k, v)| format!("{k} {v:.3}")).collect::<Vec<_>>().join(", ");
    ensure(mlp <= bound + 0.01, || format!("frame-mlp {mlp:.3} above bound {bound:.3}; {listing}"))?;
    for kind in [ModelKind::Gru, ModelKind::Mstcn] {
        ensure(acc[&kind] >= mlp + 0.10, || format!("{kind} not 0.10 above frame-mlp; {listing}"))?;
    }
    ensure(acc[&ModelKind::ClipConv] >= mlp + 0.03, || format!("clip-conv not 0.03 above frame-mlp; {listing}"))?;
    let mins = start.elapsed().as_secs_f64() / 60.0;
    ensure(mins < 30.0, || format!("took {mins:.1} min"))?;
    Ok(format!("{listing}; test bound {bound:.3}; {mins:.1} min"))
}

// 7. Group split invariants.

fn split_invariants() -> Outcome {
    let (mut split, mut refused) = (0, 0);
    for i in 0..1000u64 {
        let mut r = rng::stream(i, rng::STREAM_PROBE + 8);
        let groups = r.random_range(2..=12);
        let mut entries = Vec::new();
        for g in 0..groups {
            for v in 0..r.random_range(1..=3) {
                entries.push(ManifestEntry {
                    video_id: format!("g{g}v{v}"),
                    group_id: format!("g{g}"),
                    feature_path: format!("g{g}v{v}.swrf"),
                    frames: r.random_range(1..=200),
                    split: Split::Unassigned,
                });
            }
        }
        let m = Manifest {
            name: format!("m{i}"),
            num_classes: 3,
            label_mode: LabelMode::Multiclass,
            feature_dim: 2,
            entries,
        };
        let target = r.random_range(0.05..0.95);
        let mut sizes: BTreeMap<&str, usize> = BTreeMap::new();
        for e in &m.entries {
            *sizes.entry(&e.group_id).or_default() += e.frames;
        }
        let total: usize = sizes.values().sum();
        let largest = *sizes.values().max().unwrap_or(&0) as f64 / total as f64;
        let smallest = *sizes.values().min().unwrap_or(&0);
        match group_split(&m, target, i) {
            Err(_) => {
                ensure(((total - smallest) as f64) < target * total as f64, || {
                    format!("manifest {i}: refused although a split exists")
                })?;
                refused += 1;
            }
            Ok(out) => {
                let mut side: BTreeMap<&str, HashSet<Split>> = BTreeMap::new();
                for e in &out.entries {
                    side.entry(&e.group_id).or_default().insert(e.split);
                }
                ensure(side.values().all(|s| s.len() == 1), || format!("manifest {i}: a group straddles"))?;
                let test: usize = out.entries.iter().filter(|e| e.split == Split::Test).map(|e| e.frames).sum();
                ensure(test < total, || format!("manifest {i}: train is empty"))?;
                let f = test as f64 / total as f64;
                ensure(f >= target && f < target + largest, || {
                    format!("manifest {i}: fraction {f:.4} outside [{target:.4}, {:.4})", target + largest)
                })?;
                split += 1;
            }
        }
    }
    Ok(format!("{split} splits valid, {refused} correctly refused"))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 7] = [
        ("gradient checks", gradcheck_suites),
        ("causality and receptive field", causality),
        ("metric oracles", metric_oracles),
        ("thread-count determinism", determinism),
        ("overfit two videos", overfit),
        ("internal-7 model ordering", benchmark),
        ("group split invariants", split_invariants),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let n = i + 1;
        if !filter.is_empty() && !filter.iter().any(|f| f == &n.to_string()) {
            continue;
        }
        match check() {
            Ok(detail) => println!("PASS {n} {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL {n} {name}: {why}");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
