//! Run configuration file (TOML). Every section is optional; each subcommand
//! reads the parts it needs and reports missing ones by their dotted path.

use std::path::{Path, PathBuf};

use featreg::harness::SweepKind;
use featreg::{Metric, ObjectiveSpec, OptimizerConfig};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    #[default]
    F64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
    /// Accepted for compatibility; all arithmetic runs in f64.
    #[serde(default)]
    pub precision: Precision,
    #[serde(default)]
    pub inputs: Inputs,
    #[serde(default)]
    pub features: FeatureConfig,
    pub objective: Option<ObjectiveSpec>,
    pub optimizer: Option<OptimizerConfig>,
    #[serde(default)]
    pub sweep: SweepConfig,
    #[serde(default)]
    pub synthetic: SyntheticConfig,
    #[serde(default)]
    pub alpha: AlphaConfig,
    /// Benchmark methods; a default set is used when empty.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub methods: Vec<MethodConfig>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Inputs {
    pub fixed: Option<PathBuf>,
    pub moving: Option<PathBuf>,
    pub fixed_seg: Option<PathBuf>,
    pub moving_seg: Option<PathBuf>,
    /// `2 x H x W` field, for `eval` and `commutativity`.
    pub displacement: Option<PathBuf>,
    /// Single image for `sweep`, `pca-viz` and `commutativity`.
    pub image: Option<PathBuf>,
    /// Case list written by `synth`, for `alpha-sweep` and `benchmark`.
    pub cases: Option<PathBuf>,
    pub feature_manifest: Option<PathBuf>,
    pub fixed_feature_id: Option<String>,
    pub moving_feature_id: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExtractorKind {
    Identity,
    #[default]
    Filterbank,
    External,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureConfig {
    pub extractor: ExtractorKind,
    pub channels: usize,
    pub downsample: usize,
    pub seed: u64,
    /// Image upsampling factor applied before extraction.
    pub upscale: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            extractor: ExtractorKind::Filterbank,
            channels: 16,
            downsample: 2,
            seed: 0,
            upscale: 1.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub kind: SweepKind,
    pub distances: Vec<Metric>,
    /// Side of the phantom used when no image is given.
    pub phantom_size: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            kind: SweepKind::Rotation,
            distances: vec![Metric::FeatL1, Metric::FeatCos],
            phantom_size: 64,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticConfig {
    pub count: usize,
    pub size: usize,
    pub max_disp: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            count: 10,
            size: 64,
            max_disp: 5.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlphaConfig {
    /// Defaults to 0.0, 0.1, ..., 1.0.
    pub grid: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodConfig {
    pub name: String,
    pub objective: ObjectiveSpec,
}

impl RunConfig {
    /// Reads `path`, resolving relative input paths against its directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut cfg: RunConfig = toml::from_str(&text).map_err(|e| CliError::Config {
            field: None,
            message: format!("{}: {}", path.display(), e.message()),
        })?;
        if let Some(base) = path.parent() {
            cfg.rebase(base);
        }
        Ok(cfg)
    }

    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(v) = p {
                if v.is_relative() {
                    *v = base.join(&*v);
                }
            }
        };
        let i = &mut self.inputs;
        for p in [
            &mut i.fixed,
            &mut i.moving,
            &mut i.fixed_seg,
            &mut i.moving_seg,
            &mut i.displacement,
            &mut i.image,
            &mut i.cases,
            &mut i.feature_manifest,
            &mut self.output_dir,
        ] {
            fix(p);
        }
    }
}

/// Unwraps a required setting or names it in a config error.
pub fn require<'a, T>(v: &'a Option<T>, field: &str) -> Result<&'a T, CliError> {
    v.as_ref().ok_or_else(|| CliError::Config {
        field: Some(field.to_string()),
        message: format!("missing required setting '{field}'"),
    })
}
