//! Domain types shared by every stage of the pipeline, tensor file I/O and
//! image preprocessing.
//!
//! Grids are stored row-major in `f64`. Displacements are in pixel units of
//! the grid they live on, with component order `(uy, ux)`.

mod npy;
mod preprocess;
mod sidecar;

use std::collections::BTreeSet;

pub use npy::{load_tensor, save_tensor, Tensor};
pub use preprocess::{normalize_intensity, resize_bilinear, resize_bilinear_adjoint, upscale};
pub(crate) use preprocess::scaled_len;
pub use sidecar::{read_sidecar, sidecar_path, write_sidecar, Sidecar};

use crate::error::{Error, Result};

/// Smallest image side supported by the cubic B-spline support.
pub const MIN_IMAGE_SIDE: usize = 4;

fn check_finite(data: &[f64], what: &str) -> Result<()> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

fn check_spacing(spacing: [f64; 2]) -> Result<()> {
    if spacing.iter().all(|s| s.is_finite() && *s > 0.0) {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "spacing must be strictly positive, got {spacing:?}"
        )))
    }
}

/// Scalar image on a regular grid with physical spacing (mm/pixel).
#[derive(Debug, Clone, PartialEq)]
pub struct Image2D {
    height: usize,
    width: usize,
    data: Vec<f64>,
    spacing: [f64; 2],
    origin: [f64; 2],
}

impl Image2D {
    /// Unit spacing, zero origin.
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        Self::with_geometry(height, width, data, [1.0, 1.0], [0.0, 0.0])
    }

    pub fn with_geometry(
        height: usize,
        width: usize,
        data: Vec<f64>,
        spacing: [f64; 2],
        origin: [f64; 2],
    ) -> Result<Self> {
        if height < MIN_IMAGE_SIDE || width < MIN_IMAGE_SIDE {
            return Err(Error::shape(format!(
                "image must be at least {MIN_IMAGE_SIDE}x{MIN_IMAGE_SIDE}, got {height}x{width}"
            )));
        }
        if data.len() != height * width {
            return Err(Error::shape(format!(
                "image data has {} values, expected {height}x{width}",
                data.len()
            )));
        }
        check_spacing(spacing)?;
        check_finite(&data, "image")?;
        Ok(Self {
            height,
            width,
            data,
            spacing,
            origin,
        })
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x));
            }
        }
        Self::new(height, width, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn spacing(&self) -> [f64; 2] {
        self.spacing
    }

    pub fn set_spacing(&mut self, spacing: [f64; 2]) -> Result<()> {
        check_spacing(spacing)?;
        self.spacing = spacing;
        Ok(())
    }

    pub fn origin(&self) -> [f64; 2] {
        self.origin
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.width + x]
    }

    /// Same geometry, new pixel values.
    pub fn with_data(&self, data: Vec<f64>) -> Result<Self> {
        Self::with_geometry(self.height, self.width, data, self.spacing, self.origin)
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_f64(vec![self.height, self.width], &self.data)
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        match t.shape() {
            [h, w] => Self::new(*h, *w, t.to_f64()),
            s => Err(Error::shape(format!("image tensor must be 2-D, got {s:?}"))),
        }
    }

    /// View as a single-channel feature map on the same grid.
    pub fn as_feature_map(&self, source_tag: impl Into<String>) -> FeatureMap {
        FeatureMap {
            channels: 1,
            height: self.height,
            width: self.width,
            data: self.data.clone(),
            spacing: self.spacing,
            source_tag: source_tag.into(),
        }
    }
}

/// `C x Hf x Wf` feature grid, channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
    spacing: [f64; 2],
    source_tag: String,
}

impl FeatureMap {
    pub fn new(
        channels: usize,
        height: usize,
        width: usize,
        data: Vec<f64>,
        spacing: [f64; 2],
        source_tag: impl Into<String>,
    ) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::shape(format!(
                "feature map dimensions must be >= 1, got {channels}x{height}x{width}"
            )));
        }
        if data.len() != channels * height * width {
            return Err(Error::shape(format!(
                "feature data has {} values, expected {channels}x{height}x{width}",
                data.len()
            )));
        }
        check_spacing(spacing)?;
        check_finite(&data, "feature map")?;
        Ok(Self {
            channels,
            height,
            width,
            data,
            spacing,
            source_tag: source_tag.into(),
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// `(C, Hf, Wf)`
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn spacing(&self) -> [f64; 2] {
        self.spacing
    }

    pub fn source_tag(&self) -> &str {
        &self.source_tag
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn with_data(&self, data: Vec<f64>) -> Result<Self> {
        Self::new(
            self.channels,
            self.height,
            self.width,
            data,
            self.spacing,
            self.source_tag.clone(),
        )
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_f64(vec![self.channels, self.height, self.width], &self.data)
    }

    pub fn from_tensor(t: &Tensor, spacing: [f64; 2], source_tag: impl Into<String>) -> Result<Self> {
        match t.shape() {
            [c, h, w] => Self::new(*c, *h, *w, t.to_f64(), spacing, source_tag),
            s => Err(Error::shape(format!("feature tensor must be 3-D, got {s:?}"))),
        }
    }
}

/// Dense displacement `u` with `phi(x) = x + u(x)`, stored as `2 x H x W`
/// (`uy` plane followed by `ux` plane), pixel units.
#[derive(Debug, Clone, PartialEq)]
pub struct DisplacementField {
    height: usize,
    width: usize,
    data: Vec<f64>,
    spacing: [f64; 2],
}

impl DisplacementField {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        Self::with_spacing(height, width, data, [1.0, 1.0])
    }

    pub fn with_spacing(
        height: usize,
        width: usize,
        data: Vec<f64>,
        spacing: [f64; 2],
    ) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::shape("displacement field must be non-empty"));
        }
        if data.len() != 2 * height * width {
            return Err(Error::shape(format!(
                "displacement data has {} values, expected 2x{height}x{width}",
                data.len()
            )));
        }
        check_spacing(spacing)?;
        check_finite(&data, "displacement field")?;
        Ok(Self {
            height,
            width,
            data,
            spacing,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0.0; 2 * height * width],
            spacing: [1.0, 1.0],
        }
    }

    pub fn uniform(height: usize, width: usize, uy: f64, ux: f64) -> Result<Self> {
        let n = height * width;
        let mut data = vec![uy; 2 * n];
        data[n..].fill(ux);
        Self::new(height, width, data)
    }

    /// Builds a field from a per-pixel closure returning `(uy, ux)`.
    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> (f64, f64)) -> Result<Self> {
        let n = height * width;
        let mut data = vec![0.0; 2 * n];
        for y in 0..height {
            for x in 0..width {
                let (uy, ux) = f(y, x);
                data[y * width + x] = uy;
                data[n + y * width + x] = ux;
            }
        }
        Self::new(height, width, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn spacing(&self) -> [f64; 2] {
        self.spacing
    }

    pub fn set_spacing(&mut self, spacing: [f64; 2]) -> Result<()> {
        check_spacing(spacing)?;
        self.spacing = spacing;
        Ok(())
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn uy(&self) -> &[f64] {
        &self.data[..self.height * self.width]
    }

    pub fn ux(&self) -> &[f64] {
        &self.data[self.height * self.width..]
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize) -> (f64, f64) {
        let i = y * self.width + x;
        (self.data[i], self.data[self.height * self.width + i])
    }

    /// Largest displacement magnitude over the grid.
    pub fn max_magnitude(&self) -> f64 {
        self.uy()
            .iter()
            .zip(self.ux())
            .map(|(a, b)| a.hypot(*b))
            .fold(0.0, f64::max)
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_f64(vec![2, self.height, self.width], &self.data)
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        match t.shape() {
            [2, h, w] => Self::new(*h, *w, t.to_f64()),
            s => Err(Error::shape(format!(
                "displacement tensor must be 2xHxW, got {s:?}"
            ))),
        }
    }
}

/// Integer label map with its declared label set.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentationMap {
    height: usize,
    width: usize,
    data: Vec<u32>,
    label_set: BTreeSet<u32>,
}

impl SegmentationMap {
    /// The label set is taken to be the labels present in `data`.
    pub fn new(height: usize, width: usize, data: Vec<u32>) -> Result<Self> {
        let label_set = data.iter().copied().collect();
        Self::with_label_set(height, width, data, label_set)
    }

    pub fn with_label_set(
        height: usize,
        width: usize,
        data: Vec<u32>,
        label_set: BTreeSet<u32>,
    ) -> Result<Self> {
        if data.len() != height * width || data.is_empty() {
            return Err(Error::shape(format!(
                "segmentation has {} values, expected {height}x{width}",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !label_set.contains(v)) {
            return Err(Error::invalid(format!(
                "label {v} not in declared label set {label_set:?}"
            )));
        }
        Ok(Self {
            height,
            width,
            data,
            label_set,
        })
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> u32) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x));
            }
        }
        Self::new(height, width, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[u32] {
        &self.data
    }

    pub fn label_set(&self) -> &BTreeSet<u32> {
        &self.label_set
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> u32 {
        self.data[y * self.width + x]
    }

    /// Binary mask of `label`.
    pub fn mask(&self, label: u32) -> Vec<bool> {
        self.data.iter().map(|&v| v == label).collect()
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(
            vec![self.height, self.width],
            self.data.iter().map(|&v| v as f32).collect(),
        )
        .expect("segmentation shape is valid")
    }

    /// Values must be non-negative integers.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let [h, w] = t.shape() else {
            return Err(Error::shape(format!(
                "segmentation tensor must be 2-D, got {:?}",
                t.shape()
            )));
        };
        let data = t
            .data()
            .iter()
            .map(|&v| {
                if v >= 0.0 && v.fract() == 0.0 && v <= u32::MAX as f32 {
                    Ok(v as u32)
                } else {
                    Err(Error::invalid(format!("segmentation value {v} is not a label")))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(*h, *w, data)
    }
}
