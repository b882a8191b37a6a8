//! Fixed-iteration first-order optimization of the control lattice.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::bspline::{lattice_to_dense, ControlLattice};
use crate::data::{DisplacementField, Image2D};
use crate::error::{Error, Result};
use crate::objective::{FeatureSource, Objective, ObjectiveSpec, Terms};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    #[default]
    Adam,
    GradientDescent,
}

/// Optimizer settings. Defaults are the 128x128 / 24x24-lattice settings;
/// the learning rate is in lattice units (pixels) per step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub method: Method,
    pub learning_rate: f64,
    pub iterations: usize,
    /// Control points per axis `(Ny, Nx)`.
    pub control_points: [usize; 2],
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            method: Method::Adam,
            learning_rate: 5e-4,
            iterations: 1500,
            control_points: [24, 24],
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::invalid("learning_rate must be > 0"));
        }
        if self.iterations == 0 {
            return Err(Error::invalid("iterations must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::invalid("Adam betas must lie in [0, 1)"));
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(Error::invalid("epsilon must be > 0"));
        }
        Ok(())
    }
}

/// Objective terms at the start of one iteration (1-based).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub total: f64,
    #[serde(flatten)]
    pub terms: Terms,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub objective: ObjectiveSpec,
    pub optimizer: OptimizerConfig,
    pub feature_source: Option<String>,
}

#[derive(Debug, Clone)]
pub struct RegistrationResult {
    pub lattice: ControlLattice,
    pub displacement: DisplacementField,
    pub trajectory: Vec<IterationRecord>,
    pub elapsed_seconds: f64,
    pub config: ConfigEcho,
}

struct Adam {
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(n: usize, cfg: &OptimizerConfig) -> Self {
        Self {
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            epsilon: cfg.epsilon,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + self.epsilon);
        }
    }
}

fn describe_source(features: &Option<FeatureSource>) -> Option<String> {
    features.as_ref().map(|s| match s {
        FeatureSource::Extractor(g) => g.name(),
        FeatureSource::Precomputed { fixed, .. } => fixed.source_tag().to_string(),
    })
}

/// Runs exactly `opt.iterations` steps from the zero (identity) lattice.
///
/// Aborts with [`Error::NumericalAbort`] as soon as the objective or its
/// gradient is non-finite.
pub fn register(
    fixed: &Image2D,
    moving: &Image2D,
    spec: &ObjectiveSpec,
    features: Option<FeatureSource>,
    opt: &OptimizerConfig,
) -> Result<RegistrationResult> {
    opt.validate()?;
    let start = Instant::now();
    let config = ConfigEcho {
        objective: *spec,
        optimizer: *opt,
        feature_source: describe_source(&features),
    };
    let objective = Objective::new(*spec, fixed.clone(), moving.clone(), features)?;
    let [ny, nx] = opt.control_points;
    let mut lattice = ControlLattice::zeros(ny, nx, fixed.shape())?;
    let basis = lattice.basis();
    let mut adam = Adam::new(lattice.len(), opt);
    let mut trajectory = Vec::with_capacity(opt.iterations);

    for iteration in 1..=opt.iterations {
        let eval = objective.evaluate_with_basis(&basis, lattice.params())?;
        if !eval.value.is_finite() || eval.grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NumericalAbort {
                iteration,
                total: eval.value,
                intensity: eval.terms.intensity,
                feature: eval.terms.feature,
                regularizer: eval.terms.regularizer,
            });
        }
        trajectory.push(IterationRecord {
            iteration,
            total: eval.value,
            terms: eval.terms,
        });
        match opt.method {
            Method::Adam => adam.step(lattice.params_mut(), &eval.grad, opt.learning_rate),
            Method::GradientDescent => lattice
                .params_mut()
                .iter_mut()
                .zip(&eval.grad)
                .for_each(|(p, g)| *p -= opt.learning_rate * g),
        }
    }

    let mut displacement = lattice_to_dense(&lattice);
    displacement.set_spacing(fixed.spacing())?;
    Ok(RegistrationResult {
        lattice,
        displacement,
        trajectory,
        elapsed_seconds: start.elapsed().as_secs_f64(),
        config,
    })
}
