//! Rigid rotation and translation sweeps of a feature distance.

use std::fmt;
use std::io::Write;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{DisplacementField, FeatureMap, Image2D};
use crate::dissimilarity::{CosineMode, Metric};
use crate::error::{Error, Result};
use crate::features::FeatureExtractor;
use crate::resample::warp_image;

/// Rotation samples over [-90°, 90°] in steps of π/32.
pub const ROTATION_STEPS: usize = 33;
/// Translation samples over [-57.6, 57.6] mm in steps of 1.2 mm.
pub const TRANSLATION_STEPS: usize = 97;
pub const TRANSLATION_STEP_MM: f64 = 1.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepKind {
    Rotation,
    Translation,
}

impl fmt::Display for SweepKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepKind::Rotation => "rotation",
            SweepKind::Translation => "translation",
        })
    }
}

impl std::str::FromStr for SweepKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rotation" => Ok(SweepKind::Rotation),
            "translation" => Ok(SweepKind::Translation),
            _ => Err(Error::invalid(format!("unknown sweep kind '{s}'"))),
        }
    }
}

impl SweepKind {
    /// Index of the zero transform in [`Self::grid`].
    pub fn zero_index(&self) -> usize {
        match self {
            SweepKind::Rotation => ROTATION_STEPS / 2,
            SweepKind::Translation => TRANSLATION_STEPS / 2,
        }
    }

    /// Raw parameters: radians for rotation, mm for translation. The centre
    /// sample is exactly zero.
    pub fn grid(&self) -> Vec<f64> {
        let (n, step) = match self {
            SweepKind::Rotation => (ROTATION_STEPS, std::f64::consts::PI / 32.0),
            SweepKind::Translation => (TRANSLATION_STEPS, TRANSLATION_STEP_MM),
        };
        let mid = (n / 2) as f64;
        (0..n).map(|k| (k as f64 - mid) * step).collect()
    }

    pub fn unit(&self) -> &'static str {
        match self {
            SweepKind::Rotation => "deg",
            SweepKind::Translation => "mm",
        }
    }
}

/// Pull-back field rotating the content by `theta` about the image centre.
pub fn rotation_field(h: usize, w: usize, theta: f64) -> Result<DisplacementField> {
    if theta == 0.0 {
        return Ok(DisplacementField::zeros(h, w));
    }
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let (s, c) = theta.sin_cos();
    DisplacementField::from_fn(h, w, |y, x| {
        let (dy, dx) = (y as f64 - cy, x as f64 - cx);
        // sample at R(-theta) applied to the offset
        let sy = c * dy - s * dx;
        let sx = s * dy + c * dx;
        (sy - dy, sx - dx)
    })
}

/// Pull-back field shifting the content by `shift_px` along x.
pub fn translation_field(h: usize, w: usize, shift_px: f64) -> Result<DisplacementField> {
    if shift_px == 0.0 {
        return Ok(DisplacementField::zeros(h, w));
    }
    DisplacementField::uniform(h, w, 0.0, -shift_px)
}

/// Min-max normalizes a whole map (all channels jointly) to [0, 1]; a
/// constant map becomes all zeros.
pub fn normalize_features(f: &FeatureMap) -> Result<FeatureMap> {
    let (lo, hi) = f
        .data()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let data = if hi > lo {
        f.data().iter().map(|v| (v - lo) / (hi - lo)).collect()
    } else {
        vec![0.0; f.data().len()]
    };
    f.with_data(data)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSeries {
    pub extractor: String,
    pub distance: Metric,
    pub values: Vec<f64>,
}

impl SweepSeries {
    /// First index of the smallest value.
    pub fn argmin(&self) -> usize {
        self.values
            .iter()
            .enumerate()
            .fold((0, f64::INFINITY), |best, (i, &v)| if v < best.1 { (i, v) } else { best })
            .0
    }

    /// True when the zero-transform value is strictly below every other.
    pub fn strict_min_at(&self, index: usize) -> bool {
        let v0 = self.values[index];
        self.values.iter().enumerate().all(|(i, &v)| i == index || v > v0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCurve {
    pub kind: SweepKind,
    /// Degrees for rotation, mm for translation.
    pub parameters: Vec<f64>,
    pub series: Vec<SweepSeries>,
}

impl SweepCurve {
    pub fn zero_index(&self) -> usize {
        self.kind.zero_index()
    }

    /// Wide CSV: one row per parameter, one column per series.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        let mut header = vec![format!("{}_{}", self.kind, self.kind.unit())];
        header.extend(self.series.iter().map(|s| format!("{}/{}", s.extractor, s.distance)));
        wtr.write_record(&header).map_err(csv_err)?;
        for (i, p) in self.parameters.iter().enumerate() {
            let mut row = vec![p.to_string()];
            row.extend(self.series.iter().map(|s| s.values[i].to_string()));
            wtr.write_record(&row).map_err(csv_err)?;
        }
        wtr.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    Error::io("<csv>", std::io::Error::other(e.to_string()))
}

/// Rigidly transforms `img` over the sweep grid and records, for every
/// extractor and distance, the distance between the normalized features of
/// the transformed and the original image.
pub fn rigid_sweep(
    img: &Image2D,
    extractors: &[Arc<dyn FeatureExtractor>],
    distances: &[Metric],
    kind: SweepKind,
) -> Result<SweepCurve> {
    let (h, w) = img.shape();
    if kind == SweepKind::Rotation && h != w {
        return Err(Error::invalid(format!("rotation sweep needs a square image, got {h}x{w}")));
    }
    if extractors.is_empty() || distances.is_empty() {
        return Err(Error::invalid("sweep needs at least one extractor and one distance"));
    }
    let reference: Vec<FeatureMap> = extractors
        .iter()
        .map(|g| normalize_features(&g.extract(img)?))
        .collect::<Result<_>>()?;
    let grid = kind.grid();
    let sx = img.spacing()[1];

    // points[k][e * distances.len() + d]
    let points: Vec<Vec<f64>> = grid
        .par_iter()
        .map(|&p| {
            let u = match kind {
                SweepKind::Rotation => rotation_field(h, w, p)?,
                SweepKind::Translation => translation_field(h, w, p / sx)?,
            };
            let moved = warp_image(img, &u)?;
            let mut row = Vec::with_capacity(extractors.len() * distances.len());
            for (g, fref) in extractors.iter().zip(&reference) {
                let f = normalize_features(&g.extract(&moved)?)?;
                for m in distances {
                    row.push(m.evaluate(f.data(), fref.data(), f.channels(), CosineMode::PerLocation)?.value);
                }
            }
            Ok(row)
        })
        .collect::<Result<_>>()?;

    let mut series = Vec::new();
    for (e, g) in extractors.iter().enumerate() {
        for (d, &m) in distances.iter().enumerate() {
            let values: Vec<f64> = points.iter().map(|r| r[e * distances.len() + d]).collect();
            if values.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("{} sweep of {}/{m}", kind, g.name())));
            }
            series.push(SweepSeries {
                extractor: g.name(),
                distance: m,
                values,
            });
        }
    }
    let parameters = match kind {
        SweepKind::Rotation => grid.iter().map(|t| t.to_degrees()).collect(),
        SweepKind::Translation => grid,
    };
    Ok(SweepCurve {
        kind,
        parameters,
        series,
    })
}
