//! Training loop for the second-stage models on extracted features.

use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::adam::{adam_step, AdamState};
use crate::data::{LabelMode, Video};
use crate::error::{Error, Result};
use crate::loss::multistage_loss;
use crate::matrix::Matrix;
use crate::metrics::evaluate;
use crate::model::{self, init_params, ModelSpec, ParamStore, Prediction};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    /// Multiplicative decay applied every `lr_interval` epochs.
    pub lr_decay: f64,
    pub lr_interval: usize,
    pub epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    /// Frames per optimizer step for frame-mlp.
    pub frame_batch: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            lr_decay: 0.1,
            lr_interval: 10,
            epochs: 30,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
            frame_batch: 64,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let mut v = Vec::new();
        if !(self.lr > 0.0) {
            v.push(format!("lr must be > 0, got {}", self.lr));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            v.push(format!("lr_decay must lie in (0, 1], got {}", self.lr_decay));
        }
        if self.lr_interval < 1 {
            v.push("lr_interval must be >= 1".into());
        }
        if self.frame_batch < 1 {
            v.push("frame_batch must be >= 1".into());
        }
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(v))
        }
    }
}

/// Step schedule: `lr · decay^⌊epoch / interval⌋` for 0-indexed epochs.
pub fn lr_at(epoch: usize, cfg: &TrainConfig) -> f64 {
    cfg.lr * libm::pow(cfg.lr_decay, (epoch / cfg.lr_interval) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    /// Mean loss over the epoch's optimizer steps.
    pub train_loss: f64,
    /// Split-level validation metrics when a validation set is given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub valid: Option<alloc::collections::BTreeMap<alloc::string::String, f64>>,
}

fn check_videos(spec: &ModelSpec, videos: &[Video], what: &str) -> Result<()> {
    for v in videos {
        if v.seq.dim() != spec.feature_dim {
            return Err(Error::Data(format!(
                "{what} video `{}` has D={}, model expects {}",
                v.id(),
                v.seq.dim(),
                spec.feature_dim
            )));
        }
        if v.labels.num_classes() != spec.num_classes || v.labels.mode() != spec.label_mode {
            return Err(Error::Data(format!(
                "{what} video `{}` has {} {} labels, model expects {} {}",
                v.id(),
                v.labels.num_classes(),
                v.labels.mode().as_str(),
                spec.num_classes,
                spec.label_mode.as_str()
            )));
        }
    }
    Ok(())
}

/// One forward/backward pass; gradients are accumulated into `params`.
pub fn loss_and_grad(params: &mut ParamStore, spec: &ModelSpec, video: &Video) -> Result<f64> {
    let (stages, cache) = model::forward(params, spec, &video.seq.features)?;
    let (loss, d) = multistage_loss(&stages, &video.labels)?;
    model::backward(params, spec, &cache, &d)?;
    Ok(loss)
}

/// Trains from `init_params(spec, cfg.seed)` and returns the final-epoch
/// parameters with the per-epoch history.
///
/// Temporal models take one Adam step per video, visiting videos in an order
/// reshuffled every epoch. frame-mlp steps over shuffled minibatches of
/// `frame_batch` frames pooled from all videos.
pub fn train(
    spec: &ModelSpec,
    cfg: &TrainConfig,
    train_set: &[Video],
    valid_set: Option<&[Video]>,
) -> Result<(ParamStore, Vec<EpochRecord>)> {
    spec.validate()?;
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    check_videos(spec, train_set, "training")?;
    if let Some(v) = valid_set {
        check_videos(spec, v, "validation")?;
    }
    let mut params = init_params(spec, cfg.seed)?;
    let mut adam = AdamState::new(&params, cfg.beta1, cfg.beta2, cfg.eps);
    let mut shuffler = rng::stream(cfg.seed, rng::STREAM_SHUFFLE);
    let mut history = Vec::with_capacity(cfg.epochs);

    let frame_index: Vec<(usize, usize)> = if spec.kind.is_temporal() {
        Vec::new()
    } else {
        train_set
            .iter()
            .enumerate()
            .flat_map(|(v, video)| (0..video.seq.frames()).map(move |t| (v, t)))
            .collect()
    };

    for epoch in 0..cfg.epochs {
        let lr = lr_at(epoch, cfg);
        let mut loss_sum = 0.0;
        let mut steps = 0usize;
        if spec.kind.is_temporal() {
            let mut order: Vec<usize> = (0..train_set.len()).collect();
            order.shuffle(&mut shuffler);
            for &i in &order {
                loss_sum += loss_and_grad(&mut params, spec, &train_set[i])?;
                adam_step(&mut params, &mut adam, lr)?;
                steps += 1;
            }
        } else {
            let mut order = frame_index.clone();
            order.shuffle(&mut shuffler);
            for chunk in order.chunks(cfg.frame_batch) {
                let batch = gather_frames(train_set, chunk)?;
                loss_sum += loss_and_grad(&mut params, spec, &batch)?;
                adam_step(&mut params, &mut adam, lr)?;
                steps += 1;
            }
        }
        let valid = match valid_set {
            Some(v) => Some(evaluate_videos(&params, spec, v)?),
            None => None,
        };
        history.push(EpochRecord {
            epoch,
            lr,
            train_loss: loss_sum / steps as f64,
            valid,
        });
    }
    Ok((params, history))
}

/// Stacks the selected `(video, frame)` rows into one pseudo-video.
fn gather_frames(videos: &[Video], picks: &[(usize, usize)]) -> Result<Video> {
    let d = videos[0].seq.dim();
    let mut rows = Matrix::zeros(picks.len(), d);
    for (r, &(v, t)) in picks.iter().enumerate() {
        rows.row_mut(r).copy_from_slice(videos[v].seq.features.row(t));
    }
    let labels = match &videos[0].labels {
        crate::data::LabelTrack::Multiclass { num_classes, .. } => crate::data::LabelTrack::Multiclass {
            num_classes: *num_classes,
            ids: picks.iter().map(|&(v, t)| videos[v].labels.ids().expect("checked mode")[t]).collect(),
        },
        crate::data::LabelTrack::Multilabel { num_classes, .. } => {
            let c = *num_classes;
            crate::data::LabelTrack::Multilabel {
                num_classes: c,
                mask: picks
                    .iter()
                    .flat_map(|&(v, t)| videos[v].labels.mask().expect("checked mode")[t * c..(t + 1) * c].iter().copied())
                    .collect(),
            }
        }
    };
    Video::new(crate::data::FeatureSequence::new("batch", rows)?, labels)
}

fn evaluate_videos(
    params: &ParamStore,
    spec: &ModelSpec,
    videos: &[Video],
) -> Result<alloc::collections::BTreeMap<alloc::string::String, f64>> {
    let preds: Vec<Prediction> = videos
        .iter()
        .map(|v| predict(params, spec, &v.seq.features))
        .collect::<Result<_>>()?;
    let report = evaluate(
        spec.label_mode,
        videos.iter().zip(&preds).map(|(v, p)| (v.id(), p, &v.labels)),
    )?;
    Ok(report.means)
}

/// Pure forward pass of the model kind.
pub fn predict(params: &ParamStore, spec: &ModelSpec, features: &Matrix) -> Result<Prediction> {
    model::predict(params, spec, features)
}

/// Frame accuracy pooled over videos (multiclass only).
pub fn pooled_frame_accuracy(params: &ParamStore, spec: &ModelSpec, videos: &[Video]) -> Result<f64> {
    if spec.label_mode != LabelMode::Multiclass {
        return Err(Error::ModeMismatch {
            expected: "multiclass",
            found: "multilabel",
        });
    }
    let mut correct = 0usize;
    let mut total = 0usize;
    for v in videos {
        let p = predict(params, spec, &v.seq.features)?;
        let ids = v.labels.ids().expect("multiclass");
        correct += p.argmax.expect("multiclass").iter().zip(ids).filter(|(a, b)| a == b).count();
        total += ids.len();
    }
    Ok(correct as f64 / total as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelKind;
    use crate::synth::{presets, synth_generate, OcclusionConfig};

    #[test]
    fn schedule_steps() {
        let cfg = TrainConfig::default();
        assert_eq!(lr_at(0, &cfg), 1e-3);
        assert_eq!(lr_at(9, &cfg), 1e-3);
        assert!((lr_at(10, &cfg) - 1e-4).abs() < 1e-18);
        assert!((lr_at(20, &cfg) - 1e-5).abs() < 1e-19);
        for e in 0..60 {
            assert!(lr_at(e + 1, &cfg) <= lr_at(e, &cfg));
        }
    }

    fn tiny_data(n: usize) -> Vec<Video> {
        let mut cfg = presets::internal_7();
        cfg.num_videos = n;
        cfg.global_pairs.clear();
        cfg.occlusion = OcclusionConfig::none();
        for s in &mut cfg.grammar {
            s.min_frames = 3;
            s.max_frames = 5;
        }
        synth_generate(&cfg).unwrap().videos.into_iter().map(|v| v.video).collect()
    }

    #[test]
    fn zero_epochs_returns_initial_params() {
        let data = tiny_data(2);
        let spec = ModelSpec::new(ModelKind::Gru, 8, 7, LabelMode::Multiclass);
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        let (p, h) = train(&spec, &cfg, &data, None).unwrap();
        assert!(h.is_empty());
        assert_eq!(p, init_params(&spec, 0).unwrap());
    }

    #[test]
    fn training_is_deterministic() {
        let data = tiny_data(3);
        for kind in ModelKind::ALL {
            let mut spec = ModelSpec::new(kind, 8, 7, LabelMode::Multiclass);
            spec.layers = 3;
            spec.filters = 8;
            spec.mlp_hidden = 8;
            spec.clip_filters = 8;
            let cfg = TrainConfig {
                epochs: 3,
                frame_batch: 7,
                seed: 5,
                ..TrainConfig::default()
            };
            let a = train(&spec, &cfg, &data, Some(&data)).unwrap();
            let b = train(&spec, &cfg, &data, Some(&data)).unwrap();
            assert_eq!(a, b, "{kind}");
            assert_eq!(a.1.len(), 3);
            assert!(a.1.iter().all(|r| r.train_loss.is_finite() && r.valid.is_some()));
        }
    }

    #[test]
    fn training_reduces_loss() {
        let data = tiny_data(2);
        let mut spec = ModelSpec::new(ModelKind::Mstcn, 8, 7, LabelMode::Multiclass);
        spec.layers = 4;
        spec.filters = 16;
        let cfg = TrainConfig {
            epochs: 20,
            lr_interval: 100,
            ..TrainConfig::default()
        };
        let (_, h) = train(&spec, &cfg, &data, None).unwrap();
        assert!(h.last().unwrap().train_loss < h[0].train_loss);
    }

    #[test]
    fn rejects_empty_and_mismatched_data() {
        let spec = ModelSpec::new(ModelKind::Gru, 8, 7, LabelMode::Multiclass);
        assert!(train(&spec, &TrainConfig::default(), &[], None).is_err());
        let bad = ModelSpec::new(ModelKind::Gru, 4, 7, LabelMode::Multiclass);
        assert!(train(&bad, &TrainConfig::default(), &tiny_data(1), None).is_err());
    }
}
