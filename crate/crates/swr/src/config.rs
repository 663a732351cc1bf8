//! Run configuration: an optional TOML file merged with command-line flags.
//!
//! The fully resolved config is written to every run directory and can be
//! passed back with `--config` to repeat the run.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use swr_core::data::Manifest;
use swr_core::train::TrainConfig;
use swr_core::{ModelKind, ModelSpec};

use crate::error::{Error, Result};

/// Optimizer and schedule settings; the per-run seed comes from the seed list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSettings {
    pub lr: f64,
    pub lr_decay: f64,
    pub lr_interval: usize,
    pub epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub frame_batch: usize,
}

impl Default for TrainSettings {
    fn default() -> Self {
        let d = TrainConfig::default();
        TrainSettings {
            lr: d.lr,
            lr_decay: d.lr_decay,
            lr_interval: d.lr_interval,
            epochs: d.epochs,
            beta1: d.beta1,
            beta2: d.beta2,
            eps: d.eps,
            frame_batch: d.frame_batch,
        }
    }
}

impl TrainSettings {
    pub fn for_seed(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            lr: self.lr,
            lr_decay: self.lr_decay,
            lr_interval: self.lr_interval,
            epochs: self.epochs,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            seed,
            frame_batch: self.frame_batch,
        }
    }
}

/// Architecture hyperparameters; dataset-derived sizes come from the manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchSettings {
    pub mlp_hidden: usize,
    pub clip_window: usize,
    pub clip_filters: usize,
    /// Defaults to the feature dim.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gru_hidden: Option<usize>,
    pub gru_layers: usize,
    pub stages: usize,
    pub layers: usize,
    pub filters: usize,
    pub kernel: usize,
}

impl Default for ArchSettings {
    fn default() -> Self {
        let d = ModelSpec::new(ModelKind::Gru, 1, 2, swr_core::data::LabelMode::Multiclass);
        ArchSettings {
            mlp_hidden: d.mlp_hidden,
            clip_window: d.clip_window,
            clip_filters: d.clip_filters,
            gru_hidden: None,
            gru_layers: d.gru_layers,
            stages: d.stages,
            layers: d.layers,
            filters: d.filters,
            kernel: d.kernel,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelKind,
    pub manifest: PathBuf,
    pub seeds: Vec<u64>,
    pub out: PathBuf,
    #[serde(default)]
    pub train: TrainSettings,
    #[serde(default)]
    pub arch: ArchSettings,
}

impl RunConfig {
    pub fn spec_for(&self, manifest: &Manifest) -> Result<ModelSpec> {
        let a = &self.arch;
        let mut s = ModelSpec::new(self.model, manifest.feature_dim, manifest.num_classes, manifest.label_mode);
        s.mlp_hidden = a.mlp_hidden;
        s.clip_window = a.clip_window;
        s.clip_filters = a.clip_filters;
        s.gru_hidden = a.gru_hidden.unwrap_or(manifest.feature_dim);
        s.gru_layers = a.gru_layers;
        s.stages = a.stages;
        s.layers = a.layers;
        s.filters = a.filters;
        s.kernel = a.kernel;
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let mut issues = Vec::new();
        if self.seeds.is_empty() {
            issues.push("seed list is empty".to_string());
        }
        if let Err(e) = self.train.for_seed(0).validate() {
            issues.push(e.to_string());
        }
        if issues.is_empty() {
            Ok(())
        } else {
            Err(Error::Invalid(issues))
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Invalid(vec![format!("cannot serialize run config: {e}")]))
    }
}

/// Config file contents before flags are applied; every field optional.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PartialRunConfig {
    pub model: Option<String>,
    pub manifest: Option<PathBuf>,
    pub seeds: Option<Vec<u64>>,
    pub out: Option<PathBuf>,
    pub train: TrainSettings,
    pub arch: ArchSettings,
}

impl PartialRunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::parse(path, e.message()))
    }
}

/// Command-line values that take precedence over the config file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub model: Option<String>,
    pub manifest: Option<PathBuf>,
    pub seeds: Option<Vec<u64>>,
    pub out: Option<PathBuf>,
    pub epochs: Option<usize>,
    pub lr: Option<f64>,
}

pub const DEFAULT_SEEDS: [u64; 3] = [0, 1, 2];

pub fn resolve(file: PartialRunConfig, flags: Overrides) -> Result<RunConfig> {
    let mut issues = Vec::new();
    let model = match flags.model.or(file.model) {
        Some(m) => match m.parse::<ModelKind>() {
            Ok(k) => Some(k),
            Err(e) => {
                issues.push(e.to_string());
                None
            }
        },
        None => {
            issues.push("no model given (--model or `model` in the config file)".into());
            None
        }
    };
    let manifest = flags.manifest.or(file.manifest);
    if manifest.is_none() {
        issues.push("no manifest given (--manifest or `manifest` in the config file)".into());
    }
    let out = flags.out.or(file.out);
    if out.is_none() {
        issues.push("no output directory given (--out or `out` in the config file)".into());
    }
    if !issues.is_empty() {
        return Err(Error::Invalid(issues));
    }
    let mut train = file.train;
    if let Some(e) = flags.epochs {
        train.epochs = e;
    }
    if let Some(lr) = flags.lr {
        train.lr = lr;
    }
    let mut seeds = flags.seeds.or(file.seeds).unwrap_or_else(|| DEFAULT_SEEDS.to_vec());
    seeds.sort_unstable();
    seeds.dedup();
    let cfg = RunConfig {
        model: model.expect("checked above"),
        manifest: manifest.expect("checked above"),
        seeds,
        out: out.expect("checked above"),
        train,
        arch: file.arch,
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Parses a comma-separated seed list such as `0,1,2`.
pub fn parse_seeds(s: &str) -> std::result::Result<Vec<u64>, String> {
    s.split(',')
        .map(|p| p.trim().parse::<u64>().map_err(|_| format!("invalid seed `{}`", p.trim())))
        .collect()
}
