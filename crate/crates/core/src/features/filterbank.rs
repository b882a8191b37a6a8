//! Seeded bank of 7x7 Gaussian-derivative kernels followed by a smooth
//! softplus-like pointwise nonlinearity.
//!
//! Kernel construction uses `libm` and a ChaCha stream so the bank is
//! identical on every platform for a given seed. The nonlinearity
//! `g(z) = (z + sqrt(z^2 + 1)) / 2` needs only IEEE-exact operations.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::FeatureExtractor;
use crate::data::{FeatureMap, Image2D};
use crate::error::{Error, Result};

pub const KERNEL_SIZE: usize = 7;
const RADIUS: isize = (KERNEL_SIZE / 2) as isize;
const TAPS: usize = KERNEL_SIZE * KERNEL_SIZE;

#[inline]
fn activation(z: f64) -> f64 {
    0.5 * (z + (z * z + 1.0).sqrt())
}

#[inline]
fn activation_grad(z: f64) -> f64 {
    0.5 * (1.0 + z / (z * z + 1.0).sqrt())
}

#[derive(Debug, Clone)]
pub struct FilterbankExtractor {
    seed: u64,
    downsample: usize,
    kernels: Vec<[f64; TAPS]>,
    bias: Vec<f64>,
}

fn make_kernel(rng: &mut ChaCha8Rng) -> [f64; TAPS] {
    let sigma: f64 = rng.gen_range(0.8..2.0);
    let theta: f64 = rng.gen_range(0.0..std::f64::consts::PI);
    let mix: [f64; 3] = [
        rng.gen_range(-1.0..1.0),
        rng.gen_range(-1.0..1.0),
        rng.gen_range(-1.0..1.0),
    ];
    let (s, c) = (libm::sin(theta), libm::cos(theta));
    let s2 = sigma * sigma;

    let mut gauss = [0.0; TAPS];
    let mut along = [0.0; TAPS];
    for p in 0..KERNEL_SIZE {
        for q in 0..KERNEL_SIZE {
            let (y, x) = ((p as isize - RADIUS) as f64, (q as isize - RADIUS) as f64);
            gauss[p * KERNEL_SIZE + q] = libm::exp(-(x * x + y * y) / (2.0 * s2));
            along[p * KERNEL_SIZE + q] = x * c + y * s;
        }
    }
    let total: f64 = gauss.iter().sum();
    let mut kernel = [0.0; TAPS];
    for i in 0..TAPS {
        let g = gauss[i] / total;
        let r = along[i];
        let first = -r / s2 * g;
        let second = (r * r / (s2 * s2) - 1.0 / s2) * g;
        kernel[i] = mix[0] * g + mix[1] * first + mix[2] * second;
    }
    let l1: f64 = kernel.iter().map(|v| v.abs()).sum();
    if l1 > 0.0 {
        kernel.iter_mut().for_each(|v| *v /= l1);
    }
    kernel
}

impl FilterbankExtractor {
    pub fn new(seed: u64, channels: usize, downsample: usize) -> Result<Self> {
        if channels == 0 {
            return Err(Error::invalid("filterbank needs at least one channel"));
        }
        if !matches!(downsample, 1 | 2) {
            return Err(Error::invalid(format!(
                "filterbank downsample must be 1 or 2, got {downsample}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut kernels = Vec::with_capacity(channels);
        let mut bias = Vec::with_capacity(channels);
        for _ in 0..channels {
            kernels.push(make_kernel(&mut rng));
            bias.push(rng.gen_range(-0.25..0.25));
        }
        Ok(Self {
            seed,
            downsample,
            kernels,
            bias,
        })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn kernel(&self, channel: usize) -> &[f64; TAPS] {
        &self.kernels[channel]
    }

    pub fn bias(&self, channel: usize) -> f64 {
        self.bias[channel]
    }

    /// Pre-activation responses, `C x Hf x Wf`.
    fn responses(&self, img: &Image2D) -> (Vec<f64>, usize, usize) {
        let (h, w) = img.shape();
        let d = self.downsample;
        let (hf, wf) = (h.div_ceil(d), w.div_ceil(d));
        let data = img.data();
        let rows = clamped_offsets(h, hf, d);
        let cols = clamped_offsets(w, wf, d);
        let mut out = vec![0.0; self.kernels.len() * hf * wf];
        for (ch, kernel) in self.kernels.iter().enumerate() {
            let plane = &mut out[ch * hf * wf..(ch + 1) * hf * wf];
            for i in 0..hf {
                for j in 0..wf {
                    let mut z = self.bias[ch];
                    for p in 0..KERNEL_SIZE {
                        let sy = rows[i * KERNEL_SIZE + p];
                        for q in 0..KERNEL_SIZE {
                            z += kernel[p * KERNEL_SIZE + q] * data[sy * w + cols[j * KERNEL_SIZE + q]];
                        }
                    }
                    plane[i * wf + j] = z;
                }
            }
        }
        (out, hf, wf)
    }
}

/// Source index for every (output position, kernel tap) pair with replicated
/// borders.
fn clamped_offsets(n: usize, nf: usize, stride: usize) -> Vec<usize> {
    let mut idx = Vec::with_capacity(nf * KERNEL_SIZE);
    for i in 0..nf {
        for p in 0..KERNEL_SIZE {
            let s = (i * stride) as isize + p as isize - RADIUS;
            idx.push(s.clamp(0, n as isize - 1) as usize);
        }
    }
    idx
}

impl FeatureExtractor for FilterbankExtractor {
    fn name(&self) -> String {
        format!(
            "filterbank(seed={},C={},d={})",
            self.seed,
            self.kernels.len(),
            self.downsample
        )
    }

    fn channels(&self) -> usize {
        self.kernels.len()
    }

    fn downsample(&self) -> usize {
        self.downsample
    }

    fn extract(&self, img: &Image2D) -> Result<FeatureMap> {
        let (z, hf, wf) = self.responses(img);
        let d = self.downsample as f64;
        let [sy, sx] = img.spacing();
        FeatureMap::new(
            self.kernels.len(),
            hf,
            wf,
            z.into_iter().map(activation).collect(),
            [sy * d, sx * d],
            self.name(),
        )
    }

    fn backward(&self, img: &Image2D, upstream: &[f64]) -> Result<Vec<f64>> {
        let (z, hf, wf) = self.responses(img);
        if upstream.len() != z.len() {
            return Err(Error::shape(format!(
                "upstream gradient has {} values, expected {}",
                upstream.len(),
                z.len()
            )));
        }
        let (h, w) = img.shape();
        let rows = clamped_offsets(h, hf, self.downsample);
        let cols = clamped_offsets(w, wf, self.downsample);
        let mut grad = vec![0.0; h * w];
        for (ch, kernel) in self.kernels.iter().enumerate() {
            let off = ch * hf * wf;
            for i in 0..hf {
                for j in 0..wf {
                    let g = upstream[off + i * wf + j] * activation_grad(z[off + i * wf + j]);
                    if g == 0.0 {
                        continue;
                    }
                    for p in 0..KERNEL_SIZE {
                        let sy = rows[i * KERNEL_SIZE + p];
                        for q in 0..KERNEL_SIZE {
                            grad[sy * w + cols[j * KERNEL_SIZE + q]] += g * kernel[p * KERNEL_SIZE + q];
                        }
                    }
                }
            }
        }
        Ok(grad)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_parameters() {
        assert!(FilterbankExtractor::new(0, 0, 1).is_err());
        assert!(FilterbankExtractor::new(0, 4, 3).is_err());
    }

    #[test]
    fn deterministic_for_seed() {
        let img = Image2D::from_fn(12, 10, |y, x| ((y * 10 + x) as f64 * 0.21).cos()).unwrap();
        let a = FilterbankExtractor::new(42, 6, 2).unwrap().extract(&img).unwrap();
        let b = FilterbankExtractor::new(42, 6, 2).unwrap().extract(&img).unwrap();
        assert_eq!(a.data(), b.data());
        assert_eq!(a.shape(), (6, 6, 5));
        let c = FilterbankExtractor::new(43, 6, 2).unwrap().extract(&img).unwrap();
        assert_ne!(a.data(), c.data());
    }

    #[test]
    fn constant_image_gives_constant_channels() {
        let value = 0.7;
        let img = Image2D::new(9, 9, vec![value; 81]).unwrap();
        let fb = FilterbankExtractor::new(5, 4, 1).unwrap();
        let f = fb.extract(&img).unwrap();
        for ch in 0..4 {
            let ksum: f64 = fb.kernel(ch).iter().sum();
            let expect = activation(fb.bias(ch) + value * ksum);
            for v in f.channel(ch) {
                assert!((v - expect).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn kernels_have_unit_l1_norm() {
        let fb = FilterbankExtractor::new(9, 16, 2).unwrap();
        for ch in 0..16 {
            let l1: f64 = fb.kernel(ch).iter().map(|v| v.abs()).sum();
            assert!((l1 - 1.0).abs() < 1e-12);
        }
    }
}
