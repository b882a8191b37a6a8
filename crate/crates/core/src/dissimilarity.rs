//! Dissimilarity and regularity terms with analytic gradients.
//!
//! Every metric is "lower is better": NCC and cosine similarity are negated.
//! Gradients are taken with respect to the first argument (the warped moving
//! image or its features).

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{DisplacementField, FeatureMap, Image2D};
use crate::error::{Error, Result};

/// Added to every norm and standard deviation in a denominator.
pub const EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct MetricValue {
    pub value: f64,
    pub grad: Vec<f64>,
}

/// Metric selectable by name in run configs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Metric {
    #[serde(rename = "mse")]
    Mse,
    #[serde(rename = "ncc")]
    Ncc,
    #[serde(rename = "feat-l1")]
    FeatL1,
    #[serde(rename = "feat-cos")]
    FeatCos,
}

/// Spatial treatment of the cosine similarity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CosineMode {
    /// Cosine of the channel vectors at each location, averaged over locations.
    #[default]
    PerLocation,
    /// One cosine over the whole flattened map.
    Flattened,
}

impl Metric {
    pub const ALL: [Metric; 4] = [Metric::Mse, Metric::Ncc, Metric::FeatL1, Metric::FeatCos];

    pub fn name(&self) -> &'static str {
        match self {
            Metric::Mse => "mse",
            Metric::Ncc => "ncc",
            Metric::FeatL1 => "feat-l1",
            Metric::FeatCos => "feat-cos",
        }
    }

    /// Value of `D(x, x)` up to the `EPS` effect.
    pub fn self_value(&self) -> f64 {
        match self {
            Metric::Mse | Metric::FeatL1 => 0.0,
            Metric::Ncc | Metric::FeatCos => -1.0,
        }
    }

    /// Evaluates on raw `channels x n` buffers. Intensity metrics treat the
    /// buffer as one flat sample; the cosine uses the channel structure.
    pub fn evaluate(&self, a: &[f64], b: &[f64], channels: usize, cosine: CosineMode) -> Result<MetricValue> {
        match self {
            Metric::Mse => mse_values(a, b),
            Metric::Ncc => ncc_values(a, b),
            Metric::FeatL1 => l1_values(a, b),
            Metric::FeatCos => neg_cosine_values(a, b, channels, cosine),
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Metric::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown metric '{s}' (expected mse, ncc, feat-l1 or feat-cos)")))
    }
}

fn same_len(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::shape(format!(
            "metric inputs have {} and {} values",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

pub fn mse_values(a: &[f64], b: &[f64]) -> Result<MetricValue> {
    same_len(a, b)?;
    let n = a.len() as f64;
    let mut value = 0.0;
    let mut grad = Vec::with_capacity(a.len());
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        value += d * d;
        grad.push(2.0 * d / n);
    }
    Ok(MetricValue {
        value: value / n,
        grad,
    })
}

fn is_constant(v: &[f64]) -> bool {
    v.iter().all(|&x| x == v[0])
}

/// Global negative normalized cross-correlation.
pub fn ncc_values(a: &[f64], b: &[f64]) -> Result<MetricValue> {
    same_len(a, b)?;
    if is_constant(a) && is_constant(b) {
        return Err(Error::Degenerate("NCC of two constant images".into()));
    }
    let n = a.len() as f64;
    let mean_a = a.iter().sum::<f64>() / n;
    let mean_b = b.iter().sum::<f64>() / n;
    let (mut cross, mut var_a, mut var_b) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (da, db) = (x - mean_a, y - mean_b);
        cross += da * db;
        var_a += da * da;
        var_b += db * db;
    }
    let sd_a = (var_a / n).sqrt();
    let sd_b = (var_b / n).sqrt();
    let (den_a, den_b) = (sd_a + EPS, sd_b + EPS);
    let corr = cross / (n * den_a * den_b);

    // d corr / d a_i = B_i / (n den_a den_b) - cross / (n den_a^2 den_b) * A_i / (n sd_a)
    let k1 = 1.0 / (n * den_a * den_b);
    let k2 = if sd_a > 0.0 {
        cross / (n * den_a * den_a * den_b) / (n * sd_a)
    } else {
        0.0
    };
    let grad = a
        .iter()
        .zip(b)
        .map(|(x, y)| -((y - mean_b) * k1 - (x - mean_a) * k2))
        .collect();
    Ok(MetricValue { value: -corr, grad })
}

/// Mean absolute difference; subgradient `sign(a - b) / N` with `sign(0) = 0`.
pub fn l1_values(a: &[f64], b: &[f64]) -> Result<MetricValue> {
    same_len(a, b)?;
    let n = a.len() as f64;
    let mut value = 0.0;
    let mut grad = Vec::with_capacity(a.len());
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        value += d.abs();
        let s = if d > 0.0 {
            1.0
        } else if d < 0.0 {
            -1.0
        } else {
            0.0
        };
        grad.push(s / n);
    }
    Ok(MetricValue {
        value: value / n,
        grad,
    })
}

/// Negative cosine similarity over `channels x n` buffers.
pub fn neg_cosine_values(a: &[f64], b: &[f64], channels: usize, mode: CosineMode) -> Result<MetricValue> {
    same_len(a, b)?;
    if channels == 0 || !a.len().is_multiple_of(channels) {
        return Err(Error::shape(format!(
            "{} values cannot be split into {channels} channels",
            a.len()
        )));
    }
    let (channels, locations) = match mode {
        CosineMode::PerLocation => (channels, a.len() / channels),
        CosineMode::Flattened => (a.len(), 1),
    };
    let mut value = 0.0;
    let mut grad = vec![0.0; a.len()];
    let scale = 1.0 / locations as f64;
    for l in 0..locations {
        let idx = |c: usize| c * locations + l;
        let (mut dot, mut na2, mut nb2) = (0.0, 0.0, 0.0);
        for c in 0..channels {
            let (x, y) = (a[idx(c)], b[idx(c)]);
            dot += x * y;
            na2 += x * x;
            nb2 += y * y;
        }
        let (na, nb) = (na2.sqrt(), nb2.sqrt());
        let (den_a, den_b) = (na + EPS, nb + EPS);
        value += dot / (den_a * den_b);

        let k1 = 1.0 / (den_a * den_b);
        let k2 = if na > 0.0 {
            dot / (den_a * den_a * den_b) / na
        } else {
            0.0
        };
        for c in 0..channels {
            grad[idx(c)] = -scale * (b[idx(c)] * k1 - a[idx(c)] * k2);
        }
    }
    Ok(MetricValue {
        value: -value * scale,
        grad,
    })
}

pub fn mse(a: &Image2D, b: &Image2D) -> Result<MetricValue> {
    check_image_shapes(a, b)?;
    mse_values(a.data(), b.data())
}

pub fn ncc(a: &Image2D, b: &Image2D) -> Result<MetricValue> {
    check_image_shapes(a, b)?;
    ncc_values(a.data(), b.data())
}

pub fn feature_l1(fa: &FeatureMap, fb: &FeatureMap) -> Result<MetricValue> {
    check_feature_shapes(fa, fb)?;
    l1_values(fa.data(), fb.data())
}

/// Per-location negative cosine, averaged over locations.
pub fn feature_neg_cosine(fa: &FeatureMap, fb: &FeatureMap) -> Result<MetricValue> {
    feature_neg_cosine_with(fa, fb, CosineMode::PerLocation)
}

pub fn feature_neg_cosine_with(fa: &FeatureMap, fb: &FeatureMap, mode: CosineMode) -> Result<MetricValue> {
    check_feature_shapes(fa, fb)?;
    neg_cosine_values(fa.data(), fb.data(), fa.channels(), mode)
}

fn check_image_shapes(a: &Image2D, b: &Image2D) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!("images are {:?} and {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

fn check_feature_shapes(a: &FeatureMap, b: &FeatureMap) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!(
            "feature maps are {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// Diffusion regularizer: squared forward differences of both components
/// along both axes (pixel units), summed and divided by `2 * H * W`.
pub fn diffusion_regularizer(u: &DisplacementField) -> MetricValue {
    let (h, w) = u.shape();
    let n = h * w;
    let norm = 1.0 / (2 * n) as f64;
    let mut value = 0.0;
    let mut grad = vec![0.0; 2 * n];
    for comp in 0..2 {
        let plane = &u.data()[comp * n..(comp + 1) * n];
        let g = &mut grad[comp * n..(comp + 1) * n];
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                if x + 1 < w {
                    let d = plane[i + 1] - plane[i];
                    value += d * d;
                    g[i + 1] += 2.0 * d * norm;
                    g[i] -= 2.0 * d * norm;
                }
                if y + 1 < h {
                    let d = plane[i + w] - plane[i];
                    value += d * d;
                    g[i + w] += 2.0 * d * norm;
                    g[i] -= 2.0 * d * norm;
                }
            }
        }
    }
    MetricValue {
        value: value * norm,
        grad,
    }
}
