//! Reading inputs and writing outputs inside one output directory.

use std::fs;
use std::path::{Path, PathBuf};

use featreg::data::{load_tensor, read_sidecar, save_tensor, write_sidecar, Sidecar, Tensor};
use featreg::{DisplacementField, Image2D, SegmentationMap};
use serde::Serialize;

use crate::error::CliError;

pub fn load_image(path: &Path) -> Result<Image2D, CliError> {
    let t = load_tensor(path)?;
    let [h, w] = t.shape() else {
        return Err(CliError::Lib(featreg::Error::ShapeMismatch(format!(
            "{} holds a {:?} tensor, expected H x W",
            path.display(),
            t.shape()
        ))));
    };
    let sc = read_sidecar(path)?.unwrap_or_default();
    Ok(Image2D::with_geometry(*h, *w, t.to_f64(), sc.spacing, sc.origin)?)
}

pub fn load_segmentation(path: &Path) -> Result<SegmentationMap, CliError> {
    Ok(SegmentationMap::from_tensor(&load_tensor(path)?)?)
}

/// Spacing of a tensor file from its sidecar, unit spacing without one.
pub fn spacing_of(path: &Path) -> Result<[f64; 2], CliError> {
    Ok(read_sidecar(path)?.map(|s| s.spacing).unwrap_or([1.0, 1.0]))
}

pub fn load_field(path: &Path) -> Result<DisplacementField, CliError> {
    let mut u = DisplacementField::from_tensor(&load_tensor(path)?)?;
    if let Some(sc) = read_sidecar(path)? {
        u.set_spacing(sc.spacing)?;
    }
    Ok(u)
}

/// Output directory of one subcommand run, created on first write so a
/// failed run leaves nothing behind.
pub struct OutDir(PathBuf);

impl OutDir {
    pub fn new(path: PathBuf) -> Self {
        Self(path)
    }

    /// `name` must be a plain relative path.
    pub fn file(&self, name: &str) -> Result<PathBuf, CliError> {
        let p = self.0.join(name);
        if let Some(parent) = p.parent() {
            fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
        }
        Ok(p)
    }

    pub fn json(&self, name: &str, value: &impl Serialize) -> Result<PathBuf, CliError> {
        let p = self.file(name)?;
        let text = serde_json::to_string_pretty(value).map_err(|e| CliError::io(&p, e))?;
        fs::write(&p, text + "\n").map_err(|e| CliError::io(&p, e))?;
        Ok(p)
    }

    pub fn text(&self, name: &str, text: &str) -> Result<PathBuf, CliError> {
        let p = self.file(name)?;
        fs::write(&p, text).map_err(|e| CliError::io(&p, e))?;
        Ok(p)
    }

    pub fn tensor(&self, name: &str, t: &Tensor, sidecar: Option<Sidecar>) -> Result<PathBuf, CliError> {
        let p = self.file(name)?;
        save_tensor(t, &p)?;
        if let Some(s) = sidecar {
            write_sidecar(&p, &s)?;
        }
        Ok(p)
    }

    pub fn writer(&self, name: &str) -> Result<fs::File, CliError> {
        let p = self.file(name)?;
        fs::File::create(&p).map_err(|e| CliError::io(&p, e))
    }

    /// Writes `planes` (one to three `h x w` planes) as an 8-bit PNG, each
    /// plane min-max scaled on its own. One plane gives a grayscale image.
    pub fn png(&self, name: &str, planes: &[&[f64]], h: usize, w: usize) -> Result<PathBuf, CliError> {
        let p = self.file(name)?;
        let scaled: Vec<Vec<u8>> = planes.iter().map(|pl| to_u8(pl)).collect();
        let result = match scaled.len() {
            1 => image::GrayImage::from_raw(w as u32, h as u32, scaled[0].clone())
                .expect("buffer matches dimensions")
                .save(&p),
            _ => {
                let mut rgb = Vec::with_capacity(3 * h * w);
                for i in 0..h * w {
                    for c in 0..3 {
                        rgb.push(scaled.get(c).map_or(0, |s| s[i]));
                    }
                }
                image::RgbImage::from_raw(w as u32, h as u32, rgb)
                    .expect("buffer matches dimensions")
                    .save(&p)
            }
        };
        result.map_err(|e| CliError::io(&p, e))?;
        Ok(p)
    }
}

fn to_u8(v: &[f64]) -> Vec<u8> {
    let (lo, hi) = v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    let span = hi - lo;
    v.iter()
        .map(|&x| if span > 0.0 { ((x - lo) / span * 255.0).round() as u8 } else { 0 })
        .collect()
}

pub fn spacing_sidecar(spacing: [f64; 2]) -> Sidecar {
    Sidecar {
        spacing,
        ..Default::default()
    }
}
