//! Dataset manifests as TOML, with feature files resolved and checked.
//!
//! ```toml
//! name = "internal-7"
//! num_classes = 7
//! label_mode = "multiclass"
//! feature_dim = 8
//!
//! [[entries]]
//! video_id = "v000"
//! group_id = "g000"
//! feature_path = "features/v000.swrf"
//! frames = 118
//! split = "train"
//! ```

use std::path::{Path, PathBuf};

use swr_core::data::{Manifest, ManifestEntry, Split, Video};

use crate::error::{self, Error, Result};
use crate::features;

const TOP_KEYS: [&str; 4] = ["name", "num_classes", "label_mode", "feature_dim"];
const ENTRY_KEYS: [&str; 4] = ["video_id", "group_id", "feature_path", "frames"];

/// Parses manifest text, listing every missing field and structural problem.
pub fn parse_manifest(text: &str) -> std::result::Result<Manifest, Vec<String>> {
    let table: toml::Table = text.parse().map_err(|e: toml::de::Error| vec![e.message().to_string()])?;
    let mut missing = Vec::new();
    for k in TOP_KEYS {
        if !table.contains_key(k) {
            missing.push(format!("missing field `{k}`"));
        }
    }
    if let Some(entries) = table.get("entries").and_then(|v| v.as_array()) {
        for (i, e) in entries.iter().enumerate() {
            let label = e
                .get("video_id")
                .and_then(|v| v.as_str())
                .map_or_else(|| format!("entry {i}"), |id| format!("entry {i} (`{id}`)"));
            for k in ENTRY_KEYS {
                if e.get(k).is_none() {
                    missing.push(format!("{label}: missing field `{k}`"));
                }
            }
        }
    }
    if !missing.is_empty() {
        return Err(missing);
    }
    let manifest: Manifest = table.try_into().map_err(|e: toml::de::Error| vec![e.message().to_string()])?;
    match manifest.validate() {
        Ok(()) => Ok(manifest),
        Err(swr_core::Error::InvalidConfig(issues)) => Err(issues),
        Err(e) => Err(vec![e.to_string()]),
    }
}

pub fn render_manifest(manifest: &Manifest) -> Result<String> {
    toml::to_string(manifest).map_err(|e| Error::Invalid(vec![format!("cannot serialize manifest: {e}")]))
}

pub fn save_manifest(path: &Path, manifest: &Manifest) -> Result<()> {
    manifest.validate()?;
    error::write(path, render_manifest(manifest)?)
}

/// A manifest together with the directory its relative paths resolve against.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub manifest: Manifest,
    pub root: PathBuf,
}

impl Dataset {
    pub fn path_of(&self, entry: &ManifestEntry) -> PathBuf {
        self.root.join(&entry.feature_path)
    }

    pub fn load_video(&self, entry: &ManifestEntry) -> Result<Video> {
        let path = self.path_of(entry);
        let header = features::read_header(&path)?;
        let issues = header_issues(&self.manifest, entry, &header);
        if !issues.is_empty() {
            return Err(Error::Invalid(issues));
        }
        features::read_features(&path, &entry.video_id)
    }

    /// Videos of one split, in manifest order.
    pub fn load_split(&self, split: Split) -> Result<Vec<Video>> {
        self.manifest.entries_in(split).map(|e| self.load_video(e)).collect()
    }
}

fn header_issues(m: &Manifest, e: &ManifestEntry, h: &features::Header) -> Vec<String> {
    let mut v = Vec::new();
    let id = &e.video_id;
    if h.dim != m.feature_dim {
        v.push(format!(
            "video `{id}`: feature_dim {} does not match manifest feature_dim {}",
            h.dim, m.feature_dim
        ));
    }
    if h.num_classes != m.num_classes {
        v.push(format!(
            "video `{id}`: {} classes, manifest declares {}",
            h.num_classes, m.num_classes
        ));
    }
    if h.mode != m.label_mode {
        v.push(format!(
            "video `{id}`: {} labels, manifest declares {}",
            h.mode.as_str(),
            m.label_mode.as_str()
        ));
    }
    if h.frames != e.frames {
        v.push(format!("video `{id}`: {} frames, manifest declares {}", h.frames, e.frames));
    }
    v
}

/// Loads a manifest and checks that every feature file exists and agrees
/// with it in feature dim, class count, label mode and frame count.
pub fn load_manifest(path: &Path) -> Result<Dataset> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let manifest = parse_manifest(&text).map_err(|issues| {
        Error::parse(path, issues.join("; "))
    })?;
    let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let ds = Dataset { manifest, root };
    let mut issues = Vec::new();
    for e in &ds.manifest.entries {
        let p = ds.path_of(e);
        if !p.is_file() {
            issues.push(format!("video `{}`: feature file {} not found", e.video_id, p.display()));
            continue;
        }
        match features::read_header(&p) {
            Ok(h) => issues.extend(header_issues(&ds.manifest, e, &h)),
            Err(err) => issues.push(format!("video `{}`: {err}", e.video_id)),
        }
    }
    if issues.is_empty() {
        Ok(ds)
    } else {
        Err(Error::parse(path, issues.join("; ")))
    }
}
