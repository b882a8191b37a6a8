//! Registration objective over control-lattice parameters.
//!
//! * baseline: `J = D_I(F, M∘φ) + λ R(φ)`
//! * feature-only: `J = D_F(f^F, f^{M∘φ}) + λ R(φ)`
//! * combined: `J = (1-α) D_I(F, M∘φ) + λ R(φ) + α D_F(f^F, f^{M∘φ})`
//!
//! A data term whose weight is exactly zero is skipped, so the combined
//! objective at `α = 0` or `α = 1` runs the very same arithmetic as the
//! baseline or feature-only objective. The regularizer is not scaled by `α`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::bspline::{ControlLattice, LatticeBasis};
use crate::data::{DisplacementField, FeatureMap, Image2D};
use crate::dissimilarity::{diffusion_regularizer, CosineMode, Metric};
use crate::error::{Error, Result};
use crate::features::FeatureExtractor;
use crate::resample::{warp_backward, warp_features, warp_features_backward, warp_image};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Baseline,
    FeatureOnly,
    Combined,
}

/// Order of feature extraction and warping for the moving image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureMode {
    /// `G(M∘φ)`: exact, needs a differentiable extractor.
    #[default]
    WarpThenEncode,
    /// `G(M)∘φ`: features computed once and warped.
    EncodeThenWarp,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectiveSpec {
    pub variant: Variant,
    #[serde(default)]
    pub intensity_metric: Option<Metric>,
    #[serde(default)]
    pub feature_metric: Option<Metric>,
    #[serde(default)]
    pub alpha: f64,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default)]
    pub feature_mode: FeatureMode,
    #[serde(default)]
    pub cosine: CosineMode,
}

/// Regularizer weight used at 128x128 with a 24x24 lattice.
pub const DEFAULT_LAMBDA: f64 = 120.0;

fn default_lambda() -> f64 {
    DEFAULT_LAMBDA
}

impl ObjectiveSpec {
    pub fn baseline(metric: Metric, lambda: f64) -> Self {
        Self {
            variant: Variant::Baseline,
            intensity_metric: Some(metric),
            feature_metric: None,
            alpha: 0.0,
            lambda,
            feature_mode: FeatureMode::WarpThenEncode,
            cosine: CosineMode::PerLocation,
        }
    }

    pub fn feature_only(metric: Metric, lambda: f64) -> Self {
        Self {
            variant: Variant::FeatureOnly,
            intensity_metric: None,
            feature_metric: Some(metric),
            alpha: 1.0,
            ..Self::baseline(metric, lambda)
        }
    }

    pub fn combined(intensity: Metric, feature: Metric, alpha: f64, lambda: f64) -> Self {
        Self {
            variant: Variant::Combined,
            intensity_metric: Some(intensity),
            feature_metric: Some(feature),
            alpha,
            ..Self::baseline(intensity, lambda)
        }
    }

    pub fn with_feature_mode(mut self, mode: FeatureMode) -> Self {
        self.feature_mode = mode;
        self
    }

    /// `(w_I, w_F)` data-term weights.
    pub fn weights(&self) -> (f64, f64) {
        match self.variant {
            Variant::Baseline => (1.0, 0.0),
            Variant::FeatureOnly => (0.0, 1.0),
            Variant::Combined => (1.0 - self.alpha, self.alpha),
        }
    }

    pub fn uses_features(&self) -> bool {
        self.weights().1 != 0.0
    }

    /// Checks metric presence and parameter ranges.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidObjective(m.to_string()));
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return bad("lambda must be finite and >= 0");
        }
        match self.variant {
            Variant::Baseline if self.intensity_metric.is_none() => bad("baseline needs intensity_metric"),
            Variant::FeatureOnly if self.feature_metric.is_none() => bad("feature-only needs feature_metric"),
            Variant::Combined if self.intensity_metric.is_none() || self.feature_metric.is_none() => {
                bad("combined needs intensity_metric and feature_metric")
            }
            Variant::Combined if !(0.0..=1.0).contains(&self.alpha) => bad("alpha must lie in [0, 1]"),
            _ => Ok(()),
        }
    }
}

/// Where feature maps come from.
#[derive(Debug, Clone)]
pub enum FeatureSource {
    Extractor(Arc<dyn FeatureExtractor>),
    /// Features exported ahead of time; encode-then-warp only.
    Precomputed { fixed: FeatureMap, moving: FeatureMap },
}

/// Individual term values; a skipped data term is `None`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Terms {
    pub intensity: Option<f64>,
    pub feature: Option<f64>,
    pub regularizer: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub value: f64,
    pub terms: Terms,
    /// Gradient with respect to the lattice parameters.
    pub grad: Vec<f64>,
}

/// Objective bound to a fixed/moving pair, with the fixed features cached.
#[derive(Debug, Clone)]
pub struct Objective {
    spec: ObjectiveSpec,
    fixed: Image2D,
    moving: Image2D,
    extractor: Option<Arc<dyn FeatureExtractor>>,
    fixed_features: Option<FeatureMap>,
    /// `G(M)` for encode-then-warp.
    moving_features: Option<FeatureMap>,
}

impl Objective {
    pub fn new(
        spec: ObjectiveSpec,
        fixed: Image2D,
        moving: Image2D,
        features: Option<FeatureSource>,
    ) -> Result<Self> {
        spec.validate()?;
        if fixed.shape() != moving.shape() {
            return Err(Error::shape(format!(
                "fixed is {:?} but moving is {:?}",
                fixed.shape(),
                moving.shape()
            )));
        }
        let mut objective = Self {
            spec,
            fixed,
            moving,
            extractor: None,
            fixed_features: None,
            moving_features: None,
        };
        if !spec.uses_features() {
            return Ok(objective);
        }
        match (features, spec.feature_mode) {
            (None, _) => {
                return Err(Error::InvalidObjective(
                    "feature term requested without a feature source".into(),
                ))
            }
            (Some(FeatureSource::Extractor(g)), FeatureMode::WarpThenEncode) => {
                if !g.differentiable() {
                    return Err(Error::InvalidObjective(format!(
                        "warp-then-encode needs a differentiable extractor, '{}' is not",
                        g.name()
                    )));
                }
                objective.fixed_features = Some(g.extract(&objective.fixed)?);
                objective.extractor = Some(g);
            }
            (Some(FeatureSource::Extractor(g)), FeatureMode::EncodeThenWarp) => {
                objective.fixed_features = Some(g.extract(&objective.fixed)?);
                objective.moving_features = Some(g.extract(&objective.moving)?);
                objective.extractor = Some(g);
            }
            (Some(FeatureSource::Precomputed { .. }), FeatureMode::WarpThenEncode) => {
                return Err(Error::InvalidObjective(
                    "precomputed features cannot be differentiated; use encode-then-warp".into(),
                ))
            }
            (Some(FeatureSource::Precomputed { fixed, moving }), FeatureMode::EncodeThenWarp) => {
                if fixed.shape() != moving.shape() {
                    return Err(Error::shape(format!(
                        "fixed features are {:?} but moving features are {:?}",
                        fixed.shape(),
                        moving.shape()
                    )));
                }
                objective.fixed_features = Some(fixed);
                objective.moving_features = Some(moving);
            }
        }
        Ok(objective)
    }

    pub fn spec(&self) -> &ObjectiveSpec {
        &self.spec
    }

    pub fn fixed(&self) -> &Image2D {
        &self.fixed
    }

    pub fn moving(&self) -> &Image2D {
        &self.moving
    }

    /// Value and gradient with respect to the lattice parameters.
    pub fn evaluate(&self, lattice: &ControlLattice) -> Result<Evaluation> {
        if lattice.grid_shape() != self.fixed.shape() {
            return Err(Error::shape(format!(
                "lattice covers {:?} but images are {:?}",
                lattice.grid_shape(),
                self.fixed.shape()
            )));
        }
        self.evaluate_with_basis(&lattice.basis(), lattice.params())
    }

    /// Same as [`Objective::evaluate`] with precomputed basis tables.
    pub fn evaluate_with_basis(&self, basis: &LatticeBasis, params: &[f64]) -> Result<Evaluation> {
        let (h, w) = self.fixed.shape();
        let mut u = DisplacementField::new(h, w, basis.dense(params))?;
        u.set_spacing(self.fixed.spacing())?;
        let (value, terms, dense_grad) = self.evaluate_field(&u)?;
        Ok(Evaluation {
            value,
            terms,
            grad: basis.adjoint(&dense_grad),
        })
    }

    /// Value, terms and gradient with respect to the dense `2 x H x W` field.
    pub fn evaluate_field(&self, u: &DisplacementField) -> Result<(f64, Terms, Vec<f64>)> {
        let (w_i, w_f) = self.spec.weights();
        let (h, w) = self.fixed.shape();
        let mut total = 0.0;
        let mut dense_grad = vec![0.0; 2 * h * w];
        let mut terms = Terms {
            intensity: None,
            feature: None,
            regularizer: 0.0,
        };

        let needs_warp = w_i != 0.0 || (w_f != 0.0 && self.spec.feature_mode == FeatureMode::WarpThenEncode);
        let warped = if needs_warp {
            Some(warp_image(&self.moving, u)?)
        } else {
            None
        };
        // gradient with respect to the warped moving image
        let mut image_upstream: Option<Vec<f64>> = None;

        if w_i != 0.0 {
            let metric = self.spec.intensity_metric.expect("validated");
            let warped = warped.as_ref().expect("warped when intensity term is active");
            let m = metric.evaluate(warped.data(), self.fixed.data(), 1, self.spec.cosine)?;
            terms.intensity = Some(m.value);
            total += w_i * m.value;
            image_upstream = Some(m.grad.into_iter().map(|g| w_i * g).collect());
        }

        let regularizer = diffusion_regularizer(u);
        terms.regularizer = regularizer.value;
        if self.spec.lambda != 0.0 {
            total += self.spec.lambda * regularizer.value;
            for (d, g) in dense_grad.iter_mut().zip(&regularizer.grad) {
                *d += self.spec.lambda * g;
            }
        }

        if w_f != 0.0 {
            let metric = self.spec.feature_metric.expect("validated");
            let fixed_features = self.fixed_features.as_ref().expect("built with features");
            match self.spec.feature_mode {
                FeatureMode::WarpThenEncode => {
                    let g = self.extractor.as_ref().expect("extractor present");
                    let warped = warped.as_ref().expect("warped for warp-then-encode");
                    let fm = g.extract(warped)?;
                    let m = metric.evaluate(fm.data(), fixed_features.data(), fm.channels(), self.spec.cosine)?;
                    terms.feature = Some(m.value);
                    total += w_f * m.value;
                    let upstream: Vec<f64> = m.grad.into_iter().map(|v| w_f * v).collect();
                    let back = g.backward(warped, &upstream)?;
                    match image_upstream.as_mut() {
                        Some(acc) => acc.iter_mut().zip(&back).for_each(|(a, b)| *a += b),
                        None => image_upstream = Some(back),
                    }
                }
                FeatureMode::EncodeThenWarp => {
                    let moving_features = self.moving_features.as_ref().expect("cached moving features");
                    let fm = warp_features(moving_features, u)?;
                    if fm.shape() != fixed_features.shape() {
                        return Err(Error::shape("warped and fixed feature maps differ in shape"));
                    }
                    let m = metric.evaluate(fm.data(), fixed_features.data(), fm.channels(), self.spec.cosine)?;
                    terms.feature = Some(m.value);
                    total += w_f * m.value;
                    let upstream: Vec<f64> = m.grad.into_iter().map(|v| w_f * v).collect();
                    let g = warp_features_backward(moving_features, u, &upstream)?;
                    dense_grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
                }
            }
        }

        if let Some(upstream) = image_upstream {
            let g = warp_backward(&self.moving, u, &upstream)?;
            dense_grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
        }
        Ok((total, terms, dense_grad))
    }
}

/// One-shot evaluation; prefer [`Objective`] when evaluating repeatedly.
pub fn evaluate(
    spec: &ObjectiveSpec,
    fixed: &Image2D,
    moving: &Image2D,
    features: Option<FeatureSource>,
    lattice: &ControlLattice,
) -> Result<Evaluation> {
    Objective::new(*spec, fixed.clone(), moving.clone(), features)?.evaluate(lattice)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{filterbank_extractor, IdentityExtractor};

    fn pair() -> (Image2D, Image2D) {
        let f = Image2D::from_fn(16, 16, |y, x| ((y as f64) * 0.4).sin() + ((x as f64) * 0.3).cos()).unwrap();
        let m = Image2D::from_fn(16, 16, |y, x| ((y as f64 + 0.7) * 0.4).sin() + ((x as f64 - 0.5) * 0.3).cos()).unwrap();
        (f, m)
    }

    #[test]
    fn spec_validation() {
        let mut s = ObjectiveSpec::baseline(Metric::Ncc, 1.0);
        assert!(s.validate().is_ok());
        s.intensity_metric = None;
        assert!(s.validate().is_err());
        let mut c = ObjectiveSpec::combined(Metric::Ncc, Metric::FeatCos, 1.5, 1.0);
        assert!(c.validate().is_err());
        c.alpha = 0.3;
        assert!(c.validate().is_ok());
        assert!(ObjectiveSpec::baseline(Metric::Mse, -1.0).validate().is_err());
    }

    #[test]
    fn feature_term_requires_source() {
        let (f, m) = pair();
        let spec = ObjectiveSpec::feature_only(Metric::FeatCos, 1.0);
        assert!(Objective::new(spec, f.clone(), m.clone(), None).is_err());
        let pre = FeatureSource::Precomputed {
            fixed: f.as_feature_map("f"),
            moving: m.as_feature_map("m"),
        };
        assert!(Objective::new(spec, f.clone(), m.clone(), Some(pre.clone())).is_err());
        let etw = spec.with_feature_mode(FeatureMode::EncodeThenWarp);
        assert!(Objective::new(etw, f, m, Some(pre)).is_ok());
    }

    #[test]
    fn identical_images_sit_at_self_similarity() {
        let (f, _) = pair();
        let lat = ControlLattice::zeros(5, 5, (16, 16)).unwrap();
        for metric in Metric::ALL {
            let spec = ObjectiveSpec::baseline(metric, 3.0);
            let e = evaluate(&spec, &f, &f, None, &lat).unwrap();
            assert!((e.value - metric.self_value()).abs() < 1e-6, "{metric}");
            let norm: f64 = e.grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            // the cosine epsilon leaves a tiny residual where pixels are near zero
            let tol = if metric == Metric::FeatCos { 1e-6 } else { 1e-8 };
            if metric != Metric::FeatL1 {
                assert!(norm < tol, "{metric}: {norm}");
            }
        }
    }

    #[test]
    fn lambda_zero_drops_regularizer() {
        let (f, m) = pair();
        let mut lat = ControlLattice::zeros(5, 5, (16, 16)).unwrap();
        lat.params_mut().iter_mut().enumerate().for_each(|(i, p)| *p = (i as f64 * 0.37).sin());
        let g: Arc<dyn FeatureExtractor> = Arc::new(IdentityExtractor);
        let with = evaluate(&ObjectiveSpec::baseline(Metric::Mse, 0.0), &f, &m, None, &lat).unwrap();
        let src = Some(FeatureSource::Extractor(g));
        let e = evaluate(&ObjectiveSpec::combined(Metric::Mse, Metric::FeatL1, 0.0, 0.0), &f, &m, src, &lat).unwrap();
        assert_eq!(with.value.to_bits(), e.value.to_bits());
        assert_eq!(with.value, with.terms.intensity.unwrap());
    }

    #[test]
    fn encode_then_warp_with_identity_matches_intensity() {
        let (f, m) = pair();
        let mut lat = ControlLattice::zeros(5, 5, (16, 16)).unwrap();
        lat.params_mut().iter_mut().enumerate().for_each(|(i, p)| *p = 0.5 * (i as f64).cos());
        let g: Arc<dyn FeatureExtractor> = Arc::new(IdentityExtractor);
        let spec = ObjectiveSpec::feature_only(Metric::Mse, 2.0).with_feature_mode(FeatureMode::EncodeThenWarp);
        let a = evaluate(&spec, &f, &m, Some(FeatureSource::Extractor(g)), &lat).unwrap();
        let b = evaluate(&ObjectiveSpec::baseline(Metric::Mse, 2.0), &f, &m, None, &lat).unwrap();
        assert!((a.value - b.value).abs() < 1e-14);
        for (x, y) in a.grad.iter().zip(&b.grad) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn deterministic() {
        let (f, m) = pair();
        let mut lat = ControlLattice::zeros(5, 5, (16, 16)).unwrap();
        lat.params_mut()[7] = 0.8;
        let g: Arc<dyn FeatureExtractor> = Arc::new(filterbank_extractor(2, 3, 2).unwrap());
        let spec = ObjectiveSpec::combined(Metric::Ncc, Metric::FeatCos, 0.4, 1.0);
        let obj = Objective::new(spec, f, m, Some(FeatureSource::Extractor(g))).unwrap();
        let a = obj.evaluate(&lat).unwrap();
        let b = obj.evaluate(&lat).unwrap();
        assert_eq!(a, b);
    }
}
