//! Video-level evaluation: accuracy, class-averaged precision/recall/F1,
//! average precision, and aggregation across seeds.
//!
//! Every metric is computed per video first; split-level values are the
//! unweighted mean over videos so long and short videos count equally.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::data::{LabelMode, LabelTrack, Manifest, Split};
use crate::error::{Error, Result};
use crate::model::Prediction;

/// Multilabel decision threshold on probabilities for P/R/F1.
pub const MULTILABEL_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ClassCounts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassPr {
    pub counts: ClassCounts,
    /// `None` when the class was never predicted.
    pub precision: Option<f64>,
    /// `None` when the class never occurs in the ground truth.
    pub recall: Option<f64>,
}

impl ClassPr {
    pub fn from_counts(counts: ClassCounts) -> Self {
        let ratio = |num: usize, den: usize| (den > 0).then(|| num as f64 / den as f64);
        ClassPr {
            counts,
            precision: ratio(counts.tp, counts.tp + counts.fp),
            recall: ratio(counts.tp, counts.tp + counts.fn_),
        }
    }
}

pub fn video_accuracy(pred: &[usize], labels: &LabelTrack) -> Result<f64> {
    let ids = labels.ids().ok_or(Error::ModeMismatch {
        expected: "multiclass",
        found: "multilabel",
    })?;
    if pred.len() != ids.len() || ids.is_empty() {
        return Err(Error::Data(format!(
            "accuracy: {} predicted frames vs {} labelled frames",
            pred.len(),
            ids.len()
        )));
    }
    let correct = pred.iter().zip(ids).filter(|(a, b)| a == b).count();
    Ok(correct as f64 / ids.len() as f64)
}

/// Per-class frame counts for multiclass tracks.
pub fn per_class_pr(pred: &[usize], truth: &[usize], num_classes: usize) -> Vec<ClassPr> {
    let mut counts = alloc::vec![ClassCounts::default(); num_classes];
    for (&p, &y) in pred.iter().zip(truth) {
        if p == y {
            counts[y].tp += 1;
        } else {
            counts[p].fp += 1;
            counts[y].fn_ += 1;
        }
    }
    counts.into_iter().map(ClassPr::from_counts).collect()
}

/// Per-class frame counts for row-major `T x C` binary masks.
pub fn per_class_pr_multilabel(pred: &[u8], truth: &[u8], num_classes: usize) -> Vec<ClassPr> {
    let mut counts = alloc::vec![ClassCounts::default(); num_classes];
    for (i, (&p, &y)) in pred.iter().zip(truth).enumerate() {
        let c = &mut counts[i % num_classes];
        match (p != 0, y != 0) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => {}
        }
    }
    counts.into_iter().map(ClassPr::from_counts).collect()
}

/// Mean precision over classes with defined precision, mean recall likewise,
/// and their harmonic mean.
pub fn f1_video(classes: &[ClassPr]) -> Result<(f64, f64, f64)> {
    let mean = |vals: Vec<f64>| (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64);
    let p = mean(classes.iter().filter_map(|c| c.precision).collect());
    let r = mean(classes.iter().filter_map(|c| c.recall).collect());
    if p.is_none() && r.is_none() {
        return Err(Error::Data("no class has a defined precision or recall".into()));
    }
    let (p, r) = (p.unwrap_or(0.0), r.unwrap_or(0.0));
    let f1 = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    Ok((p, r, f1))
}

/// Non-interpolated AP: rank by descending score (ties by frame index) and
/// sum `(R_k - R_{k-1})·P_k` over ranks holding positives. `None` without
/// positives.
pub fn average_precision(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut hits = 0usize;
    let mut ap = 0.0;
    for (k, &i) in order.iter().enumerate() {
        if labels[i] {
            hits += 1;
            ap += (hits as f64 / (k + 1) as f64) / positives as f64;
        }
    }
    Some(ap)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoMetrics {
    pub video_id: String,
    pub frames: usize,
    pub accuracy: Option<f64>,
    pub mean_precision: f64,
    pub mean_recall: f64,
    pub f1: f64,
    pub ap_per_class: Vec<Option<f64>>,
    pub mean_ap: Option<f64>,
    pub per_class: Vec<ClassCounts>,
}

impl VideoMetrics {
    /// Headline metric values by key.
    pub fn values(&self) -> BTreeMap<String, f64> {
        let mut m = BTreeMap::new();
        if let Some(a) = self.accuracy {
            m.insert("accuracy".into(), a);
        }
        if let Some(a) = self.mean_ap {
            m.insert("map".into(), a);
        }
        m.insert("precision".into(), self.mean_precision);
        m.insert("recall".into(), self.mean_recall);
        m.insert("f1".into(), self.f1);
        m
    }
}

pub fn evaluate_video(video_id: &str, pred: &Prediction, labels: &LabelTrack) -> Result<VideoMetrics> {
    let c = labels.num_classes();
    if pred.scores.rows() != labels.frames() || pred.scores.cols() != c {
        return Err(Error::Data(format!(
            "video `{video_id}`: prediction is {}x{}, labels are {}x{}",
            pred.scores.rows(),
            pred.scores.cols(),
            labels.frames(),
            c
        )));
    }
    match labels {
        LabelTrack::Multiclass { ids, .. } => {
            let argmax = pred.argmax.as_ref().ok_or_else(|| {
                Error::Data(format!("video `{video_id}`: multilabel prediction for multiclass labels"))
            })?;
            let accuracy = video_accuracy(argmax, labels)?;
            let classes = per_class_pr(argmax, ids, c);
            let (p, r, f1) = f1_video(&classes)?;
            Ok(VideoMetrics {
                video_id: video_id.into(),
                frames: ids.len(),
                accuracy: Some(accuracy),
                mean_precision: p,
                mean_recall: r,
                f1,
                ap_per_class: Vec::new(),
                mean_ap: None,
                per_class: classes.iter().map(|x| x.counts).collect(),
            })
        }
        LabelTrack::Multilabel { mask, .. } => {
            let t_len = labels.frames();
            let mut ap_per_class = Vec::with_capacity(c);
            for class in 0..c {
                let scores: Vec<f64> = (0..t_len).map(|t| pred.scores[(t, class)]).collect();
                let truth: Vec<bool> = (0..t_len).map(|t| mask[t * c + class] != 0).collect();
                ap_per_class.push(average_precision(&scores, &truth));
            }
            let defined: Vec<f64> = ap_per_class.iter().flatten().copied().collect();
            let mean_ap = (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
            let decided: Vec<u8> = pred
                .probabilities
                .as_slice()
                .iter()
                .map(|&p| u8::from(p >= MULTILABEL_THRESHOLD))
                .collect();
            let classes = per_class_pr_multilabel(&decided, mask, c);
            let (p, r, f1) = f1_video(&classes)?;
            Ok(VideoMetrics {
                video_id: video_id.into(),
                frames: t_len,
                accuracy: None,
                mean_precision: p,
                mean_recall: r,
                f1,
                ap_per_class,
                mean_ap,
                per_class: classes.iter().map(|x| x.counts).collect(),
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitReport {
    pub label_mode: LabelMode,
    pub videos: Vec<VideoMetrics>,
    /// Unweighted mean over videos, per metric key.
    pub means: BTreeMap<String, f64>,
}

/// Evaluates videos in the given order and averages with equal weight.
pub fn evaluate<'a, I>(mode: LabelMode, items: I) -> Result<SplitReport>
where
    I: IntoIterator<Item = (&'a str, &'a Prediction, &'a LabelTrack)>,
{
    let mut videos = Vec::new();
    for (id, pred, labels) in items {
        if labels.mode() != mode {
            return Err(Error::Data(format!("video `{id}` has {} labels", labels.mode().as_str())));
        }
        videos.push(evaluate_video(id, pred, labels)?);
    }
    if videos.is_empty() {
        return Err(Error::Data("no videos to evaluate".into()));
    }
    let mut sums: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for v in &videos {
        for (k, val) in v.values() {
            let e = sums.entry(k).or_insert((0.0, 0));
            e.0 += val;
            e.1 += 1;
        }
    }
    let means = sums.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect();
    Ok(SplitReport {
        label_mode: mode,
        videos,
        means,
    })
}

/// Evaluates every manifest video in `split`, in manifest order.
pub fn evaluate_split(
    manifest: &Manifest,
    split: Split,
    predictions: &BTreeMap<String, Prediction>,
    labels: &BTreeMap<String, LabelTrack>,
) -> Result<SplitReport> {
    let mut items = Vec::new();
    for e in manifest.entries_in(split) {
        let id = e.video_id.as_str();
        let pred = predictions
            .get(id)
            .ok_or_else(|| Error::Data(format!("no prediction for video `{id}`")))?;
        let lab = labels
            .get(id)
            .ok_or_else(|| Error::Data(format!("no labels for video `{id}`")))?;
        if lab.num_classes() != manifest.num_classes || lab.mode() != manifest.label_mode {
            return Err(Error::Data(format!("labels of video `{id}` do not match the manifest")));
        }
        items.push((id, pred, lab));
    }
    evaluate(manifest.label_mode, items)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation (`n-1`); 0 for a single run.
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedReport {
    pub seed: u64,
    pub report: SplitReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub seeds: Vec<SeedReport>,
    pub summary: BTreeMap<String, MeanStd>,
    /// Set when only one run was aggregated (std is then reported as 0).
    pub single_run: bool,
}

pub fn mean_std(values: &[f64]) -> MeanStd {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() < 2 {
        0.0
    } else {
        libm::sqrt(values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0))
    };
    MeanStd { mean, std }
}

pub fn aggregate_seeds(reports: Vec<SeedReport>) -> Result<AggregateReport> {
    let first = reports
        .first()
        .ok_or_else(|| Error::InvalidArgument("aggregate_seeds needs at least one report".into()))?;
    let keys: Vec<&String> = first.report.means.keys().collect();
    for r in &reports {
        let other: Vec<&String> = r.report.means.keys().collect();
        if other != keys {
            return Err(Error::Data(format!(
                "seed {} reports metrics {:?}, seed {} reports {:?}",
                r.seed, other, first.seed, keys
            )));
        }
    }
    let summary = keys
        .iter()
        .map(|&k| {
            let vals: Vec<f64> = reports.iter().map(|r| r.report.means[k]).collect();
            (k.clone(), mean_std(&vals))
        })
        .collect();
    let single_run = reports.len() == 1;
    Ok(AggregateReport {
        seeds: reports,
        summary,
        single_run,
    })
}
