//! Optional JSON metadata stored next to a tensor file (`foo.npy` -> `foo.json`).

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sidecar {
    /// `(sy, sx)` in mm per pixel (or per feature cell).
    #[serde(default = "unit_spacing")]
    pub spacing: [f64; 2],
    #[serde(default)]
    pub origin: [f64; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_tag: Option<String>,
    /// Image grid a control lattice is defined over.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid_shape: Option<[usize; 2]>,
}

fn unit_spacing() -> [f64; 2] {
    [1.0, 1.0]
}

impl Default for Sidecar {
    fn default() -> Self {
        Self {
            spacing: unit_spacing(),
            origin: [0.0, 0.0],
            source_tag: None,
            grid_shape: None,
        }
    }
}

pub fn sidecar_path(tensor_path: impl AsRef<Path>) -> PathBuf {
    tensor_path.as_ref().with_extension("json")
}

/// Reads the sidecar of `tensor_path` if it exists.
pub fn read_sidecar(tensor_path: impl AsRef<Path>) -> Result<Option<Sidecar>> {
    let path = sidecar_path(tensor_path);
    if !path.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text)
        .map(Some)
        .map_err(|source| Error::Json { path, source })
}

pub fn write_sidecar(tensor_path: impl AsRef<Path>, sidecar: &Sidecar) -> Result<()> {
    let path = sidecar_path(tensor_path);
    let text = serde_json::to_string_pretty(sidecar).map_err(|source| Error::Json {
        path: path.clone(),
        source,
    })?;
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}
