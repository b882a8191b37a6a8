//! Feature extractors `G` with `f = G(I)`.
//!
//! Built-in extractors are differentiable and back-propagate exactly, which
//! allows the warp-then-encode gradient path. Externally exported encoder
//! features are loaded as fixed maps and can only be warped after encoding.

mod external;
mod filterbank;
mod pca;

use std::fmt;
use std::sync::Arc;

pub use external::{load_external, ExternalEntry, ExternalFeatureSet};
pub use filterbank::{FilterbankExtractor, KERNEL_SIZE};
pub use pca::{pca_project, PcaProjection};

use crate::data::{resize_bilinear_adjoint, scaled_len, upscale, DisplacementField, FeatureMap, Image2D};
use crate::error::{Error, Result};
use crate::resample::{warp_features, warp_image};

pub trait FeatureExtractor: fmt::Debug + Send + Sync {
    /// Provenance string including parameters.
    fn name(&self) -> String;

    fn channels(&self) -> usize;

    /// Stride between image pixels and feature cells.
    fn downsample(&self) -> usize;

    fn differentiable(&self) -> bool {
        true
    }

    /// `(C, Hf, Wf)` produced for an `h x w` image.
    fn output_shape(&self, h: usize, w: usize) -> (usize, usize, usize) {
        let d = self.downsample();
        (self.channels(), h.div_ceil(d), w.div_ceil(d))
    }

    fn extract(&self, img: &Image2D) -> Result<FeatureMap>;

    /// Gradient with respect to the image pixels of `sum(upstream * extract(img))`.
    fn backward(&self, img: &Image2D, upstream: &[f64]) -> Result<Vec<f64>>;
}

/// `G(I) = I` as a single-channel map.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityExtractor;

pub fn identity_extractor() -> IdentityExtractor {
    IdentityExtractor
}

impl FeatureExtractor for IdentityExtractor {
    fn name(&self) -> String {
        "identity".into()
    }

    fn channels(&self) -> usize {
        1
    }

    fn downsample(&self) -> usize {
        1
    }

    fn extract(&self, img: &Image2D) -> Result<FeatureMap> {
        Ok(img.as_feature_map(self.name()))
    }

    fn backward(&self, img: &Image2D, upstream: &[f64]) -> Result<Vec<f64>> {
        if upstream.len() != img.data().len() {
            return Err(Error::shape("upstream gradient does not match the image"));
        }
        Ok(upstream.to_vec())
    }
}

pub fn filterbank_extractor(seed: u64, channels: usize, downsample: usize) -> Result<FilterbankExtractor> {
    FilterbankExtractor::new(seed, channels, downsample)
}

/// Bilinearly upsamples the image before handing it to the inner extractor.
#[derive(Debug, Clone)]
pub struct UpscaledExtractor {
    inner: Arc<dyn FeatureExtractor>,
    factor: f64,
}

impl UpscaledExtractor {
    pub fn new(inner: Arc<dyn FeatureExtractor>, factor: f64) -> Result<Self> {
        if !(factor.is_finite() && factor > 0.0) {
            return Err(Error::invalid(format!("upscale factor must be > 0, got {factor}")));
        }
        Ok(Self { inner, factor })
    }

    pub fn factor(&self) -> f64 {
        self.factor
    }
}

impl FeatureExtractor for UpscaledExtractor {
    fn name(&self) -> String {
        format!("{}@x{}", self.inner.name(), self.factor)
    }

    fn channels(&self) -> usize {
        self.inner.channels()
    }

    fn downsample(&self) -> usize {
        self.inner.downsample()
    }

    fn differentiable(&self) -> bool {
        self.inner.differentiable()
    }

    fn output_shape(&self, h: usize, w: usize) -> (usize, usize, usize) {
        self.inner
            .output_shape(scaled_len(h, self.factor), scaled_len(w, self.factor))
    }

    fn extract(&self, img: &Image2D) -> Result<FeatureMap> {
        self.inner.extract(&upscale(img, self.factor)?)
    }

    fn backward(&self, img: &Image2D, upstream: &[f64]) -> Result<Vec<f64>> {
        if self.factor == 1.0 {
            return self.inner.backward(img, upstream);
        }
        let up = upscale(img, self.factor)?;
        let g = self.inner.backward(&up, upstream)?;
        let (h, w) = img.shape();
        Ok(resize_bilinear_adjoint(&g, h, w, up.height(), up.width()))
    }
}

/// Result of comparing warp-then-encode against encode-then-warp.
#[derive(Debug, Clone)]
pub struct CommutativityGap {
    /// `G(warp(img, u))`
    pub encoded_warped: FeatureMap,
    /// `warp_features(G(img), u)`
    pub warped_features: FeatureMap,
    /// `encoded_warped - warped_features`
    pub gap: FeatureMap,
    /// Mean absolute value of `gap`.
    pub mean_abs: f64,
}

pub fn commutativity_gap(
    img: &Image2D,
    u: &DisplacementField,
    extractor: &dyn FeatureExtractor,
) -> Result<CommutativityGap> {
    let encoded_warped = extractor.extract(&warp_image(img, u)?)?;
    let warped_features = warp_features(&extractor.extract(img)?, u)?;
    if encoded_warped.shape() != warped_features.shape() {
        return Err(Error::shape("warp/encode orders produced different shapes"));
    }
    let diff: Vec<f64> = encoded_warped
        .data()
        .iter()
        .zip(warped_features.data())
        .map(|(a, b)| a - b)
        .collect();
    let mean_abs = diff.iter().map(|d| d.abs()).sum::<f64>() / diff.len() as f64;
    let gap = encoded_warped.with_data(diff)?;
    Ok(CommutativityGap {
        encoded_warped,
        warped_features,
        gap,
        mean_abs,
    })
}
