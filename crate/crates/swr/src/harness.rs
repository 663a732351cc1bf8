//! `train-eval`: train every seed, checkpoint, evaluate on the test split and
//! aggregate.
//!
//! Run directory layout:
//!
//! ```text
//! config.toml            resolved run config
//! INCOMPLETE             present until the run has finished
//! seed-<s>/history.jsonl one record per epoch
//! seed-<s>/model.swrc    final-epoch checkpoint
//! seed-<s>/report.json   per-video test metrics
//! report.json            aggregate over seeds
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use swr_core::data::{LabelMode, LabelTrack, Split, Video};
use swr_core::metrics::{aggregate_seeds, evaluate_split, AggregateReport, SeedReport};
use swr_core::train::{predict, train, EpochRecord};
use swr_core::{ModelKind, ModelSpec};

use crate::checkpoint::save_checkpoint;
use crate::config::RunConfig;
use crate::error::{self, Error, Result};
use crate::manifest::{load_manifest, Dataset};

pub const INCOMPLETE: &str = "INCOMPLETE";
pub const CONFIG_FILE: &str = "config.toml";
pub const REPORT_FILE: &str = "report.json";
pub const THREADS_VAR: &str = "SWR_THREADS";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub model: ModelKind,
    pub dataset: String,
    pub label_mode: LabelMode,
    pub train_videos: usize,
    pub test_videos: usize,
    pub aggregate: AggregateReport,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunOptions {
    pub no_overwrite: bool,
    pub threads: usize,
    /// Progress lines on stderr.
    pub verbose: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            no_overwrite: false,
            threads: 1,
            verbose: false,
        }
    }
}

/// Worker count from `SWR_THREADS`, defaulting to the machine's parallelism.
pub fn threads_from_env() -> Result<usize> {
    match std::env::var(THREADS_VAR) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(Error::Invalid(vec![format!("{THREADS_VAR} must be a positive integer, got `{v}`")])),
        },
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

pub fn seed_dir(out: &Path, seed: u64) -> PathBuf {
    out.join(format!("seed-{seed}"))
}

fn to_json<T: Serialize>(v: &T) -> Result<String> {
    serde_json::to_string_pretty(v)
        .map(|s| s + "\n")
        .map_err(|e| Error::Invalid(vec![format!("cannot serialize report: {e}")]))
}

pub fn history_jsonl(history: &[EpochRecord]) -> Result<String> {
    let mut out = String::new();
    for r in history {
        out += &serde_json::to_string(r).map_err(|e| Error::Invalid(vec![e.to_string()]))?;
        out.push('\n');
    }
    Ok(out)
}

struct Inputs<'a> {
    ds: &'a Dataset,
    spec: &'a ModelSpec,
    train_set: &'a [Video],
    labels: BTreeMap<String, LabelTrack>,
    test_set: &'a [Video],
}

fn run_seed(cfg: &RunConfig, inputs: &Inputs<'_>, seed: u64, verbose: bool) -> Result<SeedReport> {
    let dir = seed_dir(&cfg.out, seed);
    let tc = cfg.train.for_seed(seed);
    let (params, history) = train(inputs.spec, &tc, inputs.train_set, None)?;
    error::write(&dir.join("history.jsonl"), history_jsonl(&history)?)?;
    save_checkpoint(&dir.join("model.swrc"), &params, inputs.spec)?;
    let mut preds = BTreeMap::new();
    for v in inputs.test_set {
        preds.insert(v.id().to_string(), predict(&params, inputs.spec, &v.seq.features)?);
    }
    let report = evaluate_split(&inputs.ds.manifest, Split::Test, &preds, &inputs.labels)?;
    let sr = SeedReport { seed, report };
    error::write(&dir.join(REPORT_FILE), to_json(&sr)?)?;
    if verbose {
        let means: Vec<String> = sr.report.means.iter().map(|(k, v)| format!("{k} {v:.4}")).collect();
        eprintln!("{} seed {seed}: {}", cfg.model, means.join(", "));
    }
    Ok(sr)
}

/// Output lines are independent of `threads`: every seed owns its state and
/// results are merged in ascending seed order.
pub fn train_eval(cfg: &RunConfig, opts: &RunOptions) -> Result<RunReport> {
    cfg.validate()?;
    // Absolute paths make the written config usable from any directory.
    let absolute = |p: &Path| std::path::absolute(p).map_err(|e| Error::io(p, e));
    let cfg = &RunConfig {
        manifest: absolute(&cfg.manifest)?,
        out: absolute(&cfg.out)?,
        ..cfg.clone()
    };
    let out = &cfg.out;
    if opts.no_overwrite && (out.join(CONFIG_FILE).exists() || out.join(REPORT_FILE).exists()) {
        return Err(Error::Exists(out.clone()));
    }
    let ds = load_manifest(&cfg.manifest)?;
    let spec = cfg.spec_for(&ds.manifest)?;
    let train_set = ds.load_split(Split::Train)?;
    let test_set = ds.load_split(Split::Test)?;
    if train_set.is_empty() || test_set.is_empty() {
        return Err(Error::Invalid(vec![format!(
            "manifest `{}` needs train and test videos, has {} and {}",
            ds.manifest.name,
            train_set.len(),
            test_set.len()
        )]));
    }
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    error::write(&out.join(INCOMPLETE), "")?;
    error::write(&out.join(CONFIG_FILE), cfg.to_toml()?)?;

    let inputs = Inputs {
        ds: &ds,
        spec: &spec,
        train_set: &train_set,
        labels: test_set.iter().map(|v| (v.id().to_string(), v.labels.clone())).collect(),
        test_set: &test_set,
    };
    let seeds = &cfg.seeds;
    let results: Mutex<Vec<Option<Result<SeedReport>>>> = Mutex::new((0..seeds.len()).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    let workers = opts.threads.clamp(1, seeds.len().max(1));
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= seeds.len() {
                    break;
                }
                let r = run_seed(cfg, &inputs, seeds[i], opts.verbose);
                results.lock().expect("no worker panicked")[i] = Some(r);
            });
        }
    });
    let reports = results
        .into_inner()
        .expect("no worker panicked")
        .into_iter()
        .map(|r| r.expect("every seed ran"))
        .collect::<Result<Vec<_>>>()?;
    let report = RunReport {
        model: cfg.model,
        dataset: ds.manifest.name.clone(),
        label_mode: ds.manifest.label_mode,
        train_videos: train_set.len(),
        test_videos: test_set.len(),
        aggregate: aggregate_seeds(reports)?,
    };
    error::write(&out.join(REPORT_FILE), to_json(&report)?)?;
    let marker = out.join(INCOMPLETE);
    std::fs::remove_file(&marker).map_err(|e| Error::io(&marker, e))?;
    Ok(report)
}

pub fn load_run_report(run_dir: &Path) -> Result<RunReport> {
    let path = run_dir.join(REPORT_FILE);
    if run_dir.join(INCOMPLETE).exists() {
        return Err(Error::Invalid(vec![format!("run {} is incomplete", run_dir.display())]));
    }
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::parse(&path, e))
}
