#![allow(dead_code)]

use std::sync::Arc;

use featreg::bspline::ControlLattice;
use featreg::features::{filterbank_extractor, FeatureExtractor, IdentityExtractor};
use featreg::objective::{evaluate, FeatureSource};
use featreg::{Image2D, ObjectiveSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Smooth positive test image with some texture, values in roughly [0.2, 1].
pub fn smooth_image(h: usize, w: usize, seed: u64) -> Image2D {
    let mut r = rng(seed);
    let waves: Vec<[f64; 4]> = (0..5)
        .map(|_| [r.gen_range(0.1..0.5), r.gen_range(0.1..0.5), r.gen_range(0.0..6.0), r.gen_range(0.05..0.15)])
        .collect();
    Image2D::from_fn(h, w, |y, x| {
        0.6 + waves
            .iter()
            .map(|&[fy, fx, ph, a]| a * (fy * y as f64 + fx * x as f64 + ph).sin())
            .sum::<f64>()
    })
    .unwrap()
}

pub fn random_lattice(ny: usize, nx: usize, grid: (usize, usize), scale: f64, seed: u64) -> ControlLattice {
    let mut r = rng(seed);
    let params = (0..2 * ny * nx).map(|_| r.gen_range(-scale..scale)).collect();
    ControlLattice::from_params(ny, nx, grid, params).unwrap()
}

pub fn extractors(seed: u64) -> Vec<(&'static str, Arc<dyn FeatureExtractor>)> {
    vec![
        ("identity", Arc::new(IdentityExtractor)),
        ("filterbank", Arc::new(filterbank_extractor(seed, 8, 2).unwrap())),
    ]
}

/// Central-difference gradient of `f` at `x`.
pub fn fd_gradient(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            let x0 = p[i];
            p[i] = x0 + h;
            let fp = f(&p);
            p[i] = x0 - h;
            let fm = f(&p);
            p[i] = x0;
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

/// `||a - b|| / max(||a||, ||b||)`; zero when both vanish.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

pub struct GradCheck {
    pub rel_err: f64,
    pub analytic_norm: f64,
}

/// Compares the objective gradient at `lattice` against central differences.
pub fn check_objective_gradient(
    spec: &ObjectiveSpec,
    fixed: &Image2D,
    moving: &Image2D,
    source: Option<FeatureSource>,
    lattice: &ControlLattice,
) -> GradCheck {
    let e = evaluate(spec, fixed, moving, source.clone(), lattice).unwrap();
    let (ny, nx) = lattice.shape();
    let grid = lattice.grid_shape();
    let fd = fd_gradient(lattice.params(), 1e-6, |p| {
        let l = ControlLattice::from_params(ny, nx, grid, p.to_vec()).unwrap();
        evaluate(spec, fixed, moving, source.clone(), &l).unwrap().value
    });
    GradCheck {
        rel_err: rel_err(&e.grad, &fd),
        analytic_norm: e.grad.iter().map(|g| g * g).sum::<f64>().sqrt(),
    }
}
