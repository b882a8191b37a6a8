//! Precomputed encoder features described by a JSON manifest:
//! `{extractor, channels, entries: [{id, image_path, feature_path}]}`.
//! Relative paths resolve against the manifest's directory.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{load_tensor, read_sidecar, FeatureMap};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExternalEntry {
    pub id: String,
    pub image_path: PathBuf,
    pub feature_path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExternalFeatureSet {
    pub extractor: String,
    pub channels: usize,
    pub entries: Vec<ExternalEntry>,
    /// Encoder checkpoint the exporter used, if recorded.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<String>,
    /// Pre-encoder upsampling factor the exporter used, if recorded.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub upscale: Option<f64>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl ExternalFeatureSet {
    pub fn from_manifest(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut set: Self = serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
        if set.channels == 0 {
            return Err(Error::FeatureSet("manifest declares zero channels".into()));
        }
        set.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(set)
    }

    pub fn entry(&self, id: &str) -> Option<&ExternalEntry> {
        self.entries.iter().find(|e| e.id == id)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }
}

/// Loads the feature map stored for `id`, checking its channel count.
pub fn load_external(set: &ExternalFeatureSet, id: &str) -> Result<FeatureMap> {
    let entry = set
        .entry(id)
        .ok_or_else(|| Error::FeatureSet(format!("no entry with id '{id}'")))?;
    let path = set.resolve(&entry.feature_path);
    let tensor = load_tensor(&path)?;
    let [c, _, _] = tensor.shape() else {
        return Err(Error::FeatureSet(format!(
            "{} holds a {:?} tensor, expected C x H x W",
            path.display(),
            tensor.shape()
        )));
    };
    if *c != set.channels {
        return Err(Error::FeatureSet(format!(
            "{} has {c} channels, manifest declares {}",
            path.display(),
            set.channels
        )));
    }
    let sidecar = read_sidecar(&path)?.unwrap_or_default();
    let tag = sidecar
        .source_tag
        .unwrap_or_else(|| format!("external:{}", set.extractor));
    FeatureMap::from_tensor(&tensor, sidecar.spacing, tag)
}
