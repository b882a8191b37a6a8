//! Deformable 2-D image registration with cubic B-spline free-form
//! deformations, driven by intensity metrics (MSE, NCC) and by distances
//! between encoder feature maps (L1, negative cosine).
//!
//! The usual flow: build an [`ObjectiveSpec`], pick a [`FeatureSource`] if
//! the objective has a feature term, and call [`register`]. Score the result with
//! [`evaluation::evaluate`].

pub mod bspline;
pub mod data;
pub mod dissimilarity;
pub mod error;
pub mod evaluation;
pub mod features;
pub mod harness;
pub mod objective;
pub mod optimizer;
pub mod resample;

pub use bspline::{jacobian_determinant, lattice_to_dense, ControlLattice, JacobianMap};
pub use data::{DisplacementField, FeatureMap, Image2D, SegmentationMap};
pub use dissimilarity::{CosineMode, Metric};
pub use error::{Error, NpyError, Result};
pub use evaluation::EvalReport;
pub use features::FeatureExtractor;
pub use objective::{FeatureMode, FeatureSource, ObjectiveSpec, Variant};
pub use optimizer::{register, OptimizerConfig, RegistrationResult};
