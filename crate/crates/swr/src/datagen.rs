//! `synth`: write a generated dataset as SWRF files plus manifest,
//! annotations and the frame-wise bound.
//!
//! ```text
//! synth.toml          resolved generator config
//! manifest.toml       train/test assignment
//! features/<id>.swrf
//! annotations.jsonl   per-video phase runs, occluded and shared-cluster frame ranges
//! bayes_bound.json    exact frame-wise bound (noiseless multiclass data only)
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};
use swr_core::data::{LabelMode, Manifest, ManifestEntry, Split};
use swr_core::split::{test_frame_fraction, SplitRule};
use swr_core::synth::{bayes_bound_of, framewise_bayes_bound, presets, synth_generate, SynthConfig, SynthVideo};

use crate::error::{self, Error, Result};
use crate::features::write_features;
use crate::manifest::save_manifest;

pub const MANIFEST_FILE: &str = "manifest.toml";
pub const BOUND_FILE: &str = "bayes_bound.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthJob {
    #[serde(flatten)]
    pub dataset: SynthConfig,
    pub split: SplitRule,
}

impl SynthJob {
    /// Bundled configurations by name.
    pub fn bundled(name: &str) -> Option<SynthJob> {
        let split = match name {
            "internal-7" => SplitRule::TestGroups(10),
            _ => SplitRule::TestFraction(0.2),
        };
        presets::by_name(name).map(|dataset| SynthJob { dataset, split })
    }

    pub const BUNDLED: [&'static str; 2] = ["internal-7", "external-10"];

    /// A bundled name, or else a path to a TOML file.
    pub fn load(name_or_path: &str) -> Result<SynthJob> {
        if let Some(job) = SynthJob::bundled(name_or_path) {
            return Ok(job);
        }
        let path = Path::new(name_or_path);
        if !path.exists() {
            return Err(Error::Invalid(vec![format!(
                "`{name_or_path}` is neither a bundled config ({}) nor a file",
                SynthJob::BUNDLED.join(", ")
            )]));
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::parse(path, e.message()))
    }

    pub fn validate(&self) -> Result<()> {
        let mut v = self.dataset.violations();
        match self.split {
            SplitRule::TestFraction(f) if !(f > 0.0 && f < 1.0) => {
                v.push(format!("split test-fraction must lie in (0, 1), got {f}"))
            }
            SplitRule::TestGroups(n) if n == 0 || n >= self.dataset.num_videos => v.push(format!(
                "split test-groups must lie in [1, {}), got {n}",
                self.dataset.num_videos
            )),
            _ => {}
        }
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Invalid(v))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub all: f64,
    pub train: f64,
    pub test: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSummary {
    pub videos: usize,
    pub train_videos: usize,
    pub test_videos: usize,
    pub test_frame_fraction: f64,
    pub bound: Option<BoundReport>,
}

/// `[start, end)` runs where `flags` is set.
fn ranges(flags: &[bool]) -> Vec<[usize; 2]> {
    let mut out = Vec::new();
    let mut start = None;
    for (t, &f) in flags.iter().chain([&false]).enumerate() {
        match (f, start) {
            (true, None) => start = Some(t),
            (false, Some(s)) => {
                out.push([s, t]);
                start = None;
            }
            _ => {}
        }
    }
    out
}

#[derive(Serialize)]
struct AnnotationRecord<'a> {
    video_id: &'a str,
    /// `[phase, start, end)` runs.
    phases: Vec<[usize; 3]>,
    occluded: Vec<[usize; 2]>,
    shared: Vec<[usize; 2]>,
}

fn annotation(v: &SynthVideo) -> AnnotationRecord<'_> {
    let mut phases: Vec<[usize; 3]> = Vec::new();
    for (t, &p) in v.phases.iter().enumerate() {
        match phases.last_mut() {
            Some(run) if run[0] == p => run[2] = t + 1,
            _ => phases.push([p, t, t + 1]),
        }
    }
    AnnotationRecord {
        video_id: v.video.id(),
        phases,
        occluded: ranges(&v.annotations.occluded),
        shared: ranges(&v.annotations.shared),
    }
}

pub fn write_synth(job: &SynthJob, out: &Path, no_overwrite: bool) -> Result<SynthSummary> {
    job.validate()?;
    if no_overwrite && out.join(MANIFEST_FILE).exists() {
        return Err(Error::Exists(out.to_path_buf()));
    }
    let ds = synth_generate(&job.dataset)?;
    let cfg = &ds.config;
    let mut entries = Vec::with_capacity(ds.videos.len());
    let mut notes = String::new();
    for v in &ds.videos {
        let id = v.video.id();
        let rel = format!("features/{id}.swrf");
        write_features(&out.join(&rel), &v.video)?;
        entries.push(ManifestEntry {
            video_id: id.to_string(),
            group_id: id.to_string(),
            feature_path: rel,
            frames: v.video.seq.frames(),
            split: Split::Unassigned,
        });
        notes += &serde_json::to_string(&annotation(v)).map_err(|e| Error::Invalid(vec![e.to_string()]))?;
        notes.push('\n');
    }
    let manifest = Manifest {
        name: cfg.name.clone(),
        num_classes: cfg.num_classes,
        label_mode: cfg.mode,
        feature_dim: cfg.feature_dim,
        entries,
    };
    let manifest = job.split.apply(&manifest, cfg.seed)?;
    save_manifest(&out.join(MANIFEST_FILE), &manifest)?;
    error::write(&out.join("annotations.jsonl"), notes)?;
    let resolved = toml::to_string(job).map_err(|e| Error::Invalid(vec![e.to_string()]))?;
    error::write(&out.join("synth.toml"), resolved)?;

    let bound = if cfg.noise_sigma == 0.0 && cfg.mode == LabelMode::Multiclass {
        let in_split = |s: Split| {
            ds.videos
                .iter()
                .zip(&manifest.entries)
                .filter(move |(_, e)| e.split == s)
                .map(|(v, _)| v)
        };
        let b = BoundReport {
            all: framewise_bayes_bound(&ds)?,
            train: bayes_bound_of(in_split(Split::Train))?,
            test: bayes_bound_of(in_split(Split::Test))?,
        };
        let text = serde_json::to_string_pretty(&b).map_err(|e| Error::Invalid(vec![e.to_string()]))?;
        error::write(&out.join(BOUND_FILE), text + "\n")?;
        Some(b)
    } else {
        let stale = out.join(BOUND_FILE);
        if stale.exists() {
            std::fs::remove_file(&stale).map_err(|e| Error::io(&stale, e))?;
        }
        None
    };
    Ok(SynthSummary {
        videos: manifest.entries.len(),
        train_videos: manifest.entries_in(Split::Train).count(),
        test_videos: manifest.entries_in(Split::Test).count(),
        test_frame_fraction: test_frame_fraction(&manifest),
        bound,
    })
}
