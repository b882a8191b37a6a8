//! Seeded cardiac-like phantoms with a known smooth deformation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bspline::{lattice_to_dense, ControlLattice};
use crate::data::{normalize_intensity, DisplacementField, Image2D, SegmentationMap};
use crate::error::{Error, Result};
use crate::resample::{warp_image, warp_segmentation};

/// Pixel spacing of generated pairs, in mm.
pub const SYNTHETIC_SPACING: f64 = 1.8;
pub const MIN_SYNTHETIC_SIZE: usize = 32;
/// Control points per axis of the lattice that generates `u_gt`.
pub const GT_LATTICE: usize = 5;

/// `fixed = moving ∘ (x + u_gt)`, so `u_gt` is exactly the displacement a
/// registration of `moving` onto `fixed` should recover.
#[derive(Debug, Clone)]
pub struct SyntheticPair {
    pub fixed: Image2D,
    pub moving: Image2D,
    pub u_gt: DisplacementField,
    pub fixed_seg: SegmentationMap,
    pub moving_seg: SegmentationMap,
    pub seed: u64,
}

fn sigmoid(t: f64) -> f64 {
    1.0 / (1.0 + (-t).exp())
}

/// Soft edge width, in pixels.
const EDGE: f64 = 0.6;

/// Phantom image and labels: LV blood pool (1), myocardial ring (2) and a
/// right-ventricle crescent (3) over a textured background.
pub fn cardiac_phantom(size: usize, seed: u64) -> Result<(Image2D, SegmentationMap)> {
    if size < MIN_SYNTHETIC_SIZE {
        return Err(Error::invalid(format!(
            "synthetic size must be >= {MIN_SYNTHETIC_SIZE}, got {size}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5e_ed0f_ca4d);
    let n = size as f64;
    let jitter = |rng: &mut ChaCha8Rng, s: f64| rng.gen_range(-s..s);
    let (cy, cx) = ((n - 1.0) / 2.0 + jitter(&mut rng, 0.03 * n), (n - 1.0) / 2.0 + jitter(&mut rng, 0.03 * n));
    let r_lv = 0.17 * n * (1.0 + jitter(&mut rng, 0.06));
    let r_myo = r_lv + 0.10 * n * (1.0 + jitter(&mut rng, 0.1));
    let (ry, rx) = (cy + jitter(&mut rng, 0.03 * n), cx - 0.30 * n);
    let r_rv = 0.22 * n;
    let gap = 1.5;

    let blobs: Vec<[f64; 4]> = (0..8)
        .map(|_| {
            [
                rng.gen_range(0.0..n),
                rng.gen_range(0.0..n),
                rng.gen_range(0.05..0.15) * n,
                rng.gen_range(-0.12..0.12),
            ]
        })
        .collect();

    let geometry = |y: usize, x: usize| {
        let (yf, xf) = (y as f64, x as f64);
        let r = ((yf - cy).powi(2) + (xf - cx).powi(2)).sqrt();
        let rr = ((yf - ry).powi(2) + (xf - rx).powi(2)).sqrt();
        (r, rr)
    };

    let mut img = Image2D::from_fn(size, size, |y, x| {
        let (r, rr) = geometry(y, x);
        let (yf, xf) = (y as f64, x as f64);
        let texture: f64 = blobs
            .iter()
            .map(|&[by, bx, s, a]| a * (-((yf - by).powi(2) + (xf - bx).powi(2)) / (2.0 * s * s)).exp())
            .sum();
        let rv = sigmoid((r_rv - rr) / EDGE) * sigmoid((r - r_myo - gap) / EDGE);
        let myo = sigmoid((r_myo - r) / EDGE);
        let lv = sigmoid((r_lv - r) / EDGE);
        let mut v = 0.15;
        v += (0.70 - v) * rv;
        v += (0.35 - v) * myo;
        v += (0.90 - v) * lv;
        v + texture
    })?;
    img.set_spacing([SYNTHETIC_SPACING; 2])?;
    let img = normalize_intensity(&img);

    let seg = SegmentationMap::with_label_set(
        size,
        size,
        (0..size * size)
            .map(|i| {
                let (r, rr) = geometry(i / size, i % size);
                if r < r_lv {
                    1
                } else if r < r_myo {
                    2
                } else if rr < r_rv && r > r_myo + gap {
                    3
                } else {
                    0
                }
            })
            .collect(),
        [0, 1, 2, 3].into_iter().collect(),
    )?;
    Ok((img, seg))
}

/// Smooth random field from a seeded coarse lattice, rescaled so its largest
/// vector has length `max_disp_px`.
pub fn random_smooth_field(size: usize, seed: u64, max_disp_px: f64) -> Result<DisplacementField> {
    if !(max_disp_px.is_finite() && max_disp_px > 0.0) {
        return Err(Error::invalid(format!("max_disp_px must be > 0, got {max_disp_px}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 2 * GT_LATTICE * GT_LATTICE;
    let params: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let lattice = ControlLattice::from_params(GT_LATTICE, GT_LATTICE, (size, size), params.clone())?;
    let peak = lattice_to_dense(&lattice).max_magnitude();
    if peak == 0.0 {
        return Err(Error::Degenerate("random lattice produced a zero field".into()));
    }
    let scale = max_disp_px / peak;
    let scaled = ControlLattice::from_params(
        GT_LATTICE,
        GT_LATTICE,
        (size, size),
        params.iter().map(|p| p * scale).collect(),
    )?;
    let mut u = lattice_to_dense(&scaled);
    u.set_spacing([SYNTHETIC_SPACING; 2])?;
    Ok(u)
}

pub fn make_synthetic_pair(seed: u64, size: usize, max_disp_px: f64) -> Result<SyntheticPair> {
    let (moving, moving_seg) = cardiac_phantom(size, seed)?;
    let u_gt = random_smooth_field(size, seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(1), max_disp_px)?;
    let fixed = warp_image(&moving, &u_gt)?;
    let fixed_seg = warp_segmentation(&moving_seg, &u_gt)?;
    Ok(SyntheticPair {
        fixed,
        moving,
        u_gt,
        fixed_seg,
        moving_seg,
        seed,
    })
}

/// Mean Euclidean endpoint error in pixels over the pixels where `mask` is set.
pub fn endpoint_error(u: &DisplacementField, u_gt: &DisplacementField, mask: &[bool]) -> Result<f64> {
    if u.shape() != u_gt.shape() || mask.len() != u.height() * u.width() {
        return Err(Error::shape("endpoint error needs fields and mask of one shape"));
    }
    let (mut sum, mut count) = (0.0, 0usize);
    for (i, &m) in mask.iter().enumerate() {
        if m {
            let dy = u.uy()[i] - u_gt.uy()[i];
            let dx = u.ux()[i] - u_gt.ux()[i];
            sum += (dy * dy + dx * dx).sqrt();
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::invalid("endpoint error over an empty mask"));
    }
    Ok(sum / count as f64)
}
