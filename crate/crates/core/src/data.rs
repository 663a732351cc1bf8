//! Feature sequences, label tracks and the dataset manifest.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LabelMode {
    /// One of `C` classes per frame.
    Multiclass,
    /// A `C`-bit mask per frame.
    Multilabel,
}

impl LabelMode {
    pub fn as_str(self) -> &'static str {
        match self {
            LabelMode::Multiclass => "multiclass",
            LabelMode::Multilabel => "multilabel",
        }
    }
}

/// One video's per-frame feature vectors, sampled at 1 fps.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    pub video_id: String,
    pub features: Matrix,
}

impl FeatureSequence {
    pub fn new(video_id: impl Into<String>, features: Matrix) -> Result<Self> {
        let seq = FeatureSequence {
            video_id: video_id.into(),
            features,
        };
        seq.validate()?;
        Ok(seq)
    }

    pub fn frames(&self) -> usize {
        self.features.rows()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames() == 0 {
            return Err(Error::Data(format!("video `{}` has no frames", self.video_id)));
        }
        if !self.features.is_finite() {
            return Err(Error::NonFinite(format!("features of video `{}`", self.video_id)));
        }
        Ok(())
    }
}

/// Per-frame ground truth.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LabelTrack {
    Multiclass { num_classes: usize, ids: Vec<usize> },
    /// Row-major `T x C` mask of 0/1 bytes.
    Multilabel { num_classes: usize, mask: Vec<u8> },
}

impl LabelTrack {
    pub fn multiclass(num_classes: usize, ids: Vec<usize>) -> Self {
        LabelTrack::Multiclass { num_classes, ids }
    }

    pub fn multilabel(num_classes: usize, mask: Vec<u8>) -> Self {
        LabelTrack::Multilabel { num_classes, mask }
    }

    pub fn mode(&self) -> LabelMode {
        match self {
            LabelTrack::Multiclass { .. } => LabelMode::Multiclass,
            LabelTrack::Multilabel { .. } => LabelMode::Multilabel,
        }
    }

    pub fn num_classes(&self) -> usize {
        match self {
            LabelTrack::Multiclass { num_classes, .. } | LabelTrack::Multilabel { num_classes, .. } => *num_classes,
        }
    }

    pub fn frames(&self) -> usize {
        match self {
            LabelTrack::Multiclass { ids, .. } => ids.len(),
            LabelTrack::Multilabel { num_classes, mask } => {
                if *num_classes == 0 {
                    0
                } else {
                    mask.len() / num_classes
                }
            }
        }
    }

    pub fn ids(&self) -> Option<&[usize]> {
        match self {
            LabelTrack::Multiclass { ids, .. } => Some(ids),
            LabelTrack::Multilabel { .. } => None,
        }
    }

    pub fn mask(&self) -> Option<&[u8]> {
        match self {
            LabelTrack::Multiclass { .. } => None,
            LabelTrack::Multilabel { mask, .. } => Some(mask),
        }
    }

    /// Rows `frames` of the track, in the given order.
    pub fn select(&self, frames: &[usize]) -> LabelTrack {
        match self {
            LabelTrack::Multiclass { num_classes, ids } => LabelTrack::Multiclass {
                num_classes: *num_classes,
                ids: frames.iter().map(|&t| ids[t]).collect(),
            },
            LabelTrack::Multilabel { num_classes, mask } => LabelTrack::Multilabel {
                num_classes: *num_classes,
                mask: frames
                    .iter()
                    .flat_map(|&t| mask[t * num_classes..(t + 1) * num_classes].iter().copied())
                    .collect(),
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            LabelTrack::Multiclass { num_classes, ids } => {
                for (frame, &label) in ids.iter().enumerate() {
                    if label >= *num_classes {
                        return Err(Error::LabelOutOfRange {
                            frame,
                            label,
                            num_classes: *num_classes,
                        });
                    }
                }
            }
            LabelTrack::Multilabel { num_classes, mask } => {
                if *num_classes == 0 || mask.len() % num_classes != 0 {
                    return Err(Error::Data(format!(
                        "multilabel mask of {} entries is not a multiple of {} classes",
                        mask.len(),
                        num_classes
                    )));
                }
                for (i, &value) in mask.iter().enumerate() {
                    if value > 1 {
                        return Err(Error::NonBinaryLabel {
                            frame: i / num_classes,
                            class: i % num_classes,
                            value,
                        });
                    }
                }
            }
        }
        Ok(())
    }
}

/// A labelled video.
#[derive(Debug, Clone, PartialEq)]
pub struct Video {
    pub seq: FeatureSequence,
    pub labels: LabelTrack,
}

impl Video {
    pub fn new(seq: FeatureSequence, labels: LabelTrack) -> Result<Self> {
        if seq.frames() != labels.frames() {
            return Err(Error::Data(format!(
                "video `{}`: {} feature rows but {} label frames",
                seq.video_id,
                seq.frames(),
                labels.frames()
            )));
        }
        labels.validate()?;
        Ok(Video { seq, labels })
    }

    pub fn id(&self) -> &str {
        &self.seq.video_id
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Split {
    Train,
    Test,
    #[default]
    Unassigned,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub video_id: String,
    /// Procedure / intervention id; videos sharing it never straddle splits.
    pub group_id: String,
    /// Relative to the manifest's directory unless absolute.
    pub feature_path: String,
    pub frames: usize,
    #[serde(default)]
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub name: String,
    pub num_classes: usize,
    pub label_mode: LabelMode,
    pub feature_dim: usize,
    #[serde(default)]
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    /// Structural checks that do not touch the filesystem; every problem is
    /// listed.
    pub fn validate(&self) -> Result<()> {
        let mut issues = Vec::new();
        if self.num_classes < 2 {
            issues.push(format!("num_classes must be >= 2, got {}", self.num_classes));
        }
        if self.feature_dim < 1 {
            issues.push("feature_dim must be >= 1".into());
        }
        let mut seen = BTreeSet::new();
        for e in &self.entries {
            if !seen.insert(e.video_id.as_str()) {
                issues.push(format!("duplicate video_id `{}`", e.video_id));
            }
            if e.frames == 0 {
                issues.push(format!("video `{}` has zero frames", e.video_id));
            }
            if e.group_id.is_empty() {
                issues.push(format!("video `{}` has an empty group_id", e.video_id));
            }
        }
        if issues.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(issues))
        }
    }

    pub fn entries_in(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn entry(&self, video_id: &str) -> Option<&ManifestEntry> {
        self.entries.iter().find(|e| e.video_id == video_id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn label_validation() {
        let err = LabelTrack::multiclass(3, vec![0, 2, 3]).validate().unwrap_err();
        assert_eq!(
            err,
            Error::LabelOutOfRange {
                frame: 2,
                label: 3,
                num_classes: 3
            }
        );
        let err = LabelTrack::multilabel(2, vec![0, 1, 2, 0]).validate().unwrap_err();
        assert_eq!(
            err,
            Error::NonBinaryLabel {
                frame: 1,
                class: 0,
                value: 2
            }
        );
    }

    #[test]
    fn duplicate_ids_are_named() {
        let entry = |id: &str| ManifestEntry {
            video_id: id.into(),
            group_id: "g".into(),
            feature_path: "x.swrf".into(),
            frames: 3,
            split: Split::Unassigned,
        };
        let m = Manifest {
            name: "m".into(),
            num_classes: 7,
            label_mode: LabelMode::Multiclass,
            feature_dim: 4,
            entries: vec![entry("a"), entry("b"), entry("a")],
        };
        let msg = format!("{}", m.validate().unwrap_err());
        assert!(msg.contains("duplicate video_id `a`"), "{msg}");
    }

    #[test]
    fn feature_sequence_rejects_empty_and_nan() {
        assert!(FeatureSequence::new("v", Matrix::zeros(0, 3)).is_err());
        let mut m = Matrix::zeros(2, 2);
        m[(1, 1)] = f64::NAN;
        assert!(FeatureSequence::new("v", m).is_err());
    }
}
