//! Principal-component projection of feature maps for visualization.
//!
//! Every spatial location is one `C`-dimensional sample. Components are
//! ordered by decreasing variance and signed so that each component's
//! largest-magnitude loading is positive.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::data::FeatureMap;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct PcaProjection {
    /// `k x Hf x Wf` component scores.
    pub scores: FeatureMap,
    /// Variance captured by each returned component.
    pub explained_variance: Vec<f64>,
    /// Total variance of the input (trace of the covariance).
    pub total_variance: f64,
}

impl PcaProjection {
    /// Fraction of the total variance captured by component `i`; zero for
    /// spatially constant input.
    pub fn explained_ratio(&self, i: usize) -> f64 {
        if self.total_variance > 0.0 {
            self.explained_variance[i] / self.total_variance
        } else {
            0.0
        }
    }
}

/// Spatially constant features yield all-zero scores.
pub fn pca_project(f: &FeatureMap, k: usize) -> Result<PcaProjection> {
    let (c, h, w) = f.shape();
    let n = h * w;
    if k == 0 || k > c.min(n) {
        return Err(Error::invalid(format!(
            "k = {k} outside 1..={} for a {c}x{h}x{w} map",
            c.min(n)
        )));
    }
    let means: Vec<f64> = (0..c)
        .map(|ch| f.channel(ch).iter().sum::<f64>() / n as f64)
        .collect();
    // n x c centered samples
    let centered = DMatrix::from_fn(n, c, |l, ch| f.channel(ch)[l] - means[ch]);
    let cov = (centered.transpose() * &centered) / n as f64;
    let total_variance = cov.trace();

    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..c).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let mut scores = Vec::with_capacity(k * n);
    let mut explained_variance = Vec::with_capacity(k);
    for &idx in order.iter().take(k) {
        let mut v = eig.eigenvectors.column(idx).into_owned();
        let pivot = v
            .iter()
            .enumerate()
            .fold((0, 0.0f64), |best, (i, x)| if x.abs() > best.1 { (i, x.abs()) } else { best })
            .0;
        if v[pivot] < 0.0 {
            v.neg_mut();
        }
        if total_variance > 0.0 {
            let s = &centered * v;
            scores.extend(s.iter());
        } else {
            scores.extend(std::iter::repeat_n(0.0, n));
        }
        explained_variance.push(eig.eigenvalues[idx].max(0.0));
    }
    let scores = FeatureMap::new(k, h, w, scores, f.spacing(), format!("pca{k}:{}", f.source_tag()))?;
    Ok(PcaProjection {
        scores,
        explained_variance,
        total_variance,
    })
}
