//! Synthetic workflow generator with controllable ambiguities.
//!
//! Each video walks a fixed phase grammar, drawing every phase's duration
//! uniformly from its range. A frame emits the centroid of its phase's
//! cluster plus isotropic Gaussian noise. Two kinds of ambiguity can be
//! injected:
//!
//! * global: phases listed in `global_pairs` share one centroid, so only
//!   temporal context tells them apart;
//! * local: occlusions start with probability `rate` per frame and last
//!   `min_len..=max_len` frames, during which the frame emits a dedicated
//!   occlusion centroid while the label keeps the underlying phase.
//!
//! In multilabel mode the phase bit is always set and every class also
//! carries an independent activity track: bursts start with probability
//! `activity.rate` per frame, last `activity.min_len..=activity.max_len`
//! frames, set that class's bit and add `activity.gain` times a per-class
//! unit direction to the frame's feature.
//!
//! With `noise_sigma = 0` every frame's emitting cluster is known exactly,
//! which makes [`framewise_bayes_bound`] exact.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{FeatureSequence, LabelMode, LabelTrack, Video};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseStep {
    pub phase: usize,
    pub min_frames: usize,
    pub max_frames: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcclusionConfig {
    /// Probability per frame of an occlusion starting.
    pub rate: f64,
    pub min_len: usize,
    pub max_len: usize,
}

impl OcclusionConfig {
    pub fn none() -> Self {
        OcclusionConfig {
            rate: 0.0,
            min_len: 1,
            max_len: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivityConfig {
    pub rate: f64,
    pub min_len: usize,
    pub max_len: usize,
    pub gain: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub name: String,
    pub num_classes: usize,
    pub feature_dim: usize,
    pub mode: LabelMode,
    /// Phases in the order every video visits them.
    pub grammar: Vec<PhaseStep>,
    #[serde(default)]
    pub global_pairs: Vec<(usize, usize)>,
    pub occlusion: OcclusionConfig,
    pub noise_sigma: f64,
    pub num_videos: usize,
    pub seed: u64,
    /// Multilabel only.
    #[serde(default)]
    pub activity: Option<ActivityConfig>,
}

impl SynthConfig {
    /// Every violated constraint, itemized.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.num_classes < 2 {
            v.push(format!("num_classes must be >= 2, got {}", self.num_classes));
        }
        if self.feature_dim < 1 {
            v.push("feature_dim must be >= 1".into());
        }
        if self.num_videos < 1 {
            v.push("num_videos must be >= 1".into());
        }
        if self.grammar.is_empty() {
            v.push("grammar must list at least one phase".into());
        }
        let mut seen = vec![false; self.num_classes];
        for (i, step) in self.grammar.iter().enumerate() {
            if step.phase >= self.num_classes {
                v.push(format!("grammar[{i}]: phase {} >= num_classes {}", step.phase, self.num_classes));
            } else if core::mem::replace(&mut seen[step.phase], true) {
                v.push(format!("grammar[{i}]: phase {} repeats", step.phase));
            }
            if step.min_frames < 1 {
                v.push(format!("grammar[{i}]: min_frames must be >= 1"));
            }
            if step.min_frames > step.max_frames {
                v.push(format!(
                    "grammar[{i}]: min_frames {} > max_frames {}",
                    step.min_frames, step.max_frames
                ));
            }
        }
        for &(a, b) in &self.global_pairs {
            if a >= self.num_classes || b >= self.num_classes || a == b {
                v.push(format!("global pair ({a}, {b}) is not a pair of distinct phases"));
            }
        }
        let occ = &self.occlusion;
        if !(0.0..=1.0).contains(&occ.rate) {
            v.push(format!("occlusion.rate {} outside [0, 1]", occ.rate));
        }
        if occ.min_len < 1 {
            v.push("occlusion.min_len must be >= 1".into());
        }
        if occ.min_len > occ.max_len {
            v.push(format!("occlusion.min_len {} > occlusion.max_len {}", occ.min_len, occ.max_len));
        }
        if !(self.noise_sigma >= 0.0) {
            v.push(format!("noise_sigma must be >= 0, got {}", self.noise_sigma));
        }
        if let Some(a) = &self.activity {
            if self.mode != LabelMode::Multilabel {
                v.push("activity tracks require multilabel mode".into());
            }
            if !(0.0..=1.0).contains(&a.rate) {
                v.push(format!("activity.rate {} outside [0, 1]", a.rate));
            }
            if a.min_len < 1 || a.min_len > a.max_len {
                v.push(format!("activity length range {}..={} is empty", a.min_len, a.max_len));
            }
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(v))
        }
    }

    /// Cluster index per phase id; phases joined by global pairs (transitively)
    /// share one cluster. Clusters are numbered in ascending phase order.
    pub fn phase_clusters(&self) -> Vec<usize> {
        let c = self.num_classes;
        let mut parent: Vec<usize> = (0..c).collect();
        fn find(p: &mut [usize], x: usize) -> usize {
            let mut r = x;
            while p[r] != r {
                r = p[r];
            }
            p[x] = r;
            r
        }
        for &(a, b) in &self.global_pairs {
            if a < c && b < c {
                let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
                parent[ra.max(rb)] = ra.min(rb);
            }
        }
        let mut id_of_root = BTreeMap::new();
        (0..c)
            .map(|phase| {
                let root = find(&mut parent, phase);
                let next = id_of_root.len();
                *id_of_root.entry(root).or_insert(next)
            })
            .collect()
    }

    pub fn num_phase_clusters(&self) -> usize {
        self.phase_clusters().iter().max().map_or(0, |m| m + 1)
    }

    /// Index of the dedicated occlusion cluster.
    pub fn occlusion_cluster(&self) -> usize {
        self.num_phase_clusters()
    }
}

/// Per-frame ground-truth annotations of the generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotations {
    /// Emitting cluster of every frame.
    pub clusters: Vec<usize>,
    pub occluded: Vec<bool>,
    /// Frame emitted from a centroid shared by several phases.
    pub shared: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthVideo {
    pub video: Video,
    /// Phase id per frame (multiclass label, or the phase bit in multilabel).
    pub phases: Vec<usize>,
    pub annotations: Annotations,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthDataset {
    pub config: SynthConfig,
    /// Unit-norm centroid per cluster; the last one is the occlusion cluster.
    pub centroids: Vec<Vec<f64>>,
    pub videos: Vec<SynthVideo>,
}

fn unit_vectors(count: usize, dim: usize, r: &mut rng::Rng) -> Vec<Vec<f64>> {
    (0..count)
        .map(|_| loop {
            let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(r)).collect();
            let norm = libm::sqrt(v.iter().map(|x| x * x).sum::<f64>());
            if norm > 1e-6 {
                break v.into_iter().map(|x| x / norm).collect();
            }
        })
        .collect()
}

/// Bursts of `min..=max` frames started with probability `rate` per frame
/// while no burst is running.
fn bursts(t_len: usize, rate: f64, min: usize, max: usize, r: &mut rng::Rng) -> Vec<bool> {
    let mut on = vec![false; t_len];
    let mut t = 0;
    while t < t_len {
        if rate > 0.0 && r.random_bool(rate) {
            let len = r.random_range(min..=max);
            for slot in on.iter_mut().skip(t).take(len) {
                *slot = true;
            }
            t += len;
        } else {
            t += 1;
        }
    }
    on
}

fn generate_video(cfg: &SynthConfig, index: usize, centroids: &[Vec<f64>], activity_dirs: &[Vec<f64>]) -> Result<SynthVideo> {
    let mut r = rng::stream(cfg.seed, rng::STREAM_VIDEO_BASE + index as u64);
    let clusters_of = cfg.phase_clusters();
    let occ_cluster = cfg.occlusion_cluster();
    let mut sharing = vec![0usize; cfg.num_phase_clusters()];
    for &k in &clusters_of {
        sharing[k] += 1;
    }

    let mut phases = Vec::new();
    for step in &cfg.grammar {
        let len = r.random_range(step.min_frames..=step.max_frames);
        phases.extend(core::iter::repeat(step.phase).take(len));
    }
    let t_len = phases.len();
    let occ = &cfg.occlusion;
    let occluded = bursts(t_len, occ.rate, occ.min_len, occ.max_len, &mut r);

    let (d, c) = (cfg.feature_dim, cfg.num_classes);
    let mut clusters = Vec::with_capacity(t_len);
    let mut shared = Vec::with_capacity(t_len);
    let mut features = Matrix::zeros(t_len, d);
    for t in 0..t_len {
        let k = if occluded[t] { occ_cluster } else { clusters_of[phases[t]] };
        clusters.push(k);
        shared.push(!occluded[t] && sharing[k] > 1);
        for (j, v) in features.row_mut(t).iter_mut().enumerate() {
            *v = centroids[k][j];
        }
    }

    let labels = match cfg.mode {
        LabelMode::Multiclass => LabelTrack::multiclass(c, phases.clone()),
        LabelMode::Multilabel => {
            let mut mask = vec![0u8; t_len * c];
            for (t, &p) in phases.iter().enumerate() {
                mask[t * c + p] = 1;
            }
            if let Some(a) = &cfg.activity {
                for (class, dir) in activity_dirs.iter().enumerate() {
                    let track = bursts(t_len, a.rate, a.min_len, a.max_len, &mut r);
                    for (t, &on) in track.iter().enumerate() {
                        if on {
                            mask[t * c + class] = 1;
                            for (v, x) in features.row_mut(t).iter_mut().zip(dir) {
                                *v += a.gain * x;
                            }
                        }
                    }
                }
            }
            LabelTrack::multilabel(c, mask)
        }
    };

    if cfg.noise_sigma > 0.0 {
        for v in features.as_mut_slice() {
            let n: f64 = StandardNormal.sample(&mut r);
            *v += cfg.noise_sigma * n;
        }
    }

    let seq = FeatureSequence::new(format!("{}-{:04}", cfg.name, index), features)?;
    Ok(SynthVideo {
        video: Video::new(seq, labels)?,
        phases,
        annotations: Annotations {
            clusters,
            occluded,
            shared,
        },
    })
}

/// Generates `cfg.num_videos` videos. Video `i` draws from its own stream of
/// `cfg.seed`, so any subset can be regenerated independently.
pub fn synth_generate(cfg: &SynthConfig) -> Result<SynthDataset> {
    cfg.validate()?;
    let mut cr = rng::stream(cfg.seed, rng::STREAM_CENTROIDS);
    let centroids = unit_vectors(cfg.num_phase_clusters() + 1, cfg.feature_dim, &mut cr);
    let activity_dirs = match (&cfg.activity, cfg.mode) {
        (Some(_), LabelMode::Multilabel) => unit_vectors(cfg.num_classes, cfg.feature_dim, &mut cr),
        _ => Vec::new(),
    };
    let videos = (0..cfg.num_videos)
        .map(|i| generate_video(cfg, i, &centroids, &activity_dirs))
        .collect::<Result<_>>()?;
    Ok(SynthDataset {
        config: cfg.clone(),
        centroids,
        videos,
    })
}

/// Upper bound on the frame accuracy of any classifier that sees one frame
/// at a time: frames are grouped by emitting cluster and each cluster can at
/// best be mapped to its majority class.
pub fn bayes_bound_of<'a>(videos: impl IntoIterator<Item = &'a SynthVideo>) -> Result<f64> {
    let mut counts: BTreeMap<usize, BTreeMap<usize, usize>> = BTreeMap::new();
    let mut total = 0usize;
    for v in videos {
        if v.video.labels.mode() != LabelMode::Multiclass {
            return Err(Error::InvalidArgument("frame-wise bound is defined for multiclass data only".into()));
        }
        for (&k, &p) in v.annotations.clusters.iter().zip(&v.phases) {
            *counts.entry(k).or_default().entry(p).or_default() += 1;
            total += 1;
        }
    }
    if total == 0 {
        return Err(Error::InvalidArgument("frame-wise bound over zero frames".into()));
    }
    let best: usize = counts.values().map(|m| m.values().copied().max().unwrap_or(0)).sum();
    Ok(best as f64 / total as f64)
}

/// [`bayes_bound_of`] over the whole dataset; only exact without noise.
pub fn framewise_bayes_bound(dataset: &SynthDataset) -> Result<f64> {
    if dataset.config.noise_sigma != 0.0 {
        return Err(Error::InvalidArgument(format!(
            "frame-wise bound is exact only at noise_sigma = 0, dataset has {}",
            dataset.config.noise_sigma
        )));
    }
    bayes_bound_of(&dataset.videos)
}

/// Built-in configurations.
pub mod presets {
    use super::*;

    /// Seven phases with two globally ambiguous pairs and short occlusions,
    /// noiseless.
    pub fn internal_7() -> SynthConfig {
        let durations = [(12, 20), (14, 24), (12, 20), (16, 26), (12, 20), (14, 24), (12, 20)];
        SynthConfig {
            name: "internal-7".into(),
            num_classes: 7,
            feature_dim: 8,
            mode: LabelMode::Multiclass,
            grammar: durations
                .iter()
                .enumerate()
                .map(|(phase, &(min_frames, max_frames))| PhaseStep {
                    phase,
                    min_frames,
                    max_frames,
                })
                .collect(),
            global_pairs: vec![(1, 5), (2, 4)],
            occlusion: OcclusionConfig {
                rate: 0.03,
                min_len: 2,
                max_len: 8,
            },
            noise_sigma: 0.0,
            num_videos: 50,
            seed: 0,
            activity: None,
        }
    }

    /// Ten-class multilabel variant: phases 1/8 and 2/9 mirror each other
    /// (roll-in vs roll-out and the like) and activity bursts overlap phases.
    pub fn external_10() -> SynthConfig {
        SynthConfig {
            name: "external-10".into(),
            num_classes: 10,
            feature_dim: 8,
            mode: LabelMode::Multilabel,
            grammar: (0..10)
                .map(|phase| PhaseStep {
                    phase,
                    min_frames: 10,
                    max_frames: 18,
                })
                .collect(),
            global_pairs: vec![(1, 8), (2, 9)],
            occlusion: OcclusionConfig {
                rate: 0.03,
                min_len: 2,
                max_len: 8,
            },
            noise_sigma: 0.05,
            num_videos: 40,
            seed: 0,
            activity: Some(ActivityConfig {
                rate: 0.01,
                min_len: 3,
                max_len: 10,
                gain: 0.5,
            }),
        }
    }

    pub fn by_name(name: &str) -> Option<SynthConfig> {
        match name {
            "internal-7" => Some(internal_7()),
            "external-10" => Some(external_10()),
            _ => None,
        }
    }
}
