//! Backward (pull) warping: `out(x) = in(x + u(x))`.
//!
//! Samples outside the grid are clamped to the border pixel. The derivative
//! with respect to a clamped coordinate is zero.

use crate::data::{DisplacementField, FeatureMap, Image2D, SegmentationMap};
use crate::error::{Error, Result};

#[inline]
fn clamp_coord(p: f64, n: usize) -> (f64, bool) {
    let hi = (n - 1) as f64;
    if p < 0.0 {
        (0.0, true)
    } else if p > hi {
        (hi, true)
    } else {
        (p, false)
    }
}

#[inline]
fn cell(p: f64, n: usize) -> (usize, usize, f64) {
    if n == 1 {
        return (0, 0, 0.0);
    }
    let i0 = (p.floor() as usize).min(n - 2);
    (i0, i0 + 1, p - i0 as f64)
}

/// Bilinear sample of a row-major `h x w` plane at `(py, px)` with border clamp.
#[inline]
pub fn sample_bilinear(plane: &[f64], h: usize, w: usize, py: f64, px: f64) -> f64 {
    let (py, _) = clamp_coord(py, h);
    let (px, _) = clamp_coord(px, w);
    let (y0, y1, fy) = cell(py, h);
    let (x0, x1, fx) = cell(px, w);
    let top = plane[y0 * w + x0] * (1.0 - fx) + plane[y0 * w + x1] * fx;
    let bot = plane[y1 * w + x0] * (1.0 - fx) + plane[y1 * w + x1] * fx;
    top * (1.0 - fy) + bot * fy
}

/// Partial derivatives `(d/dpy, d/dpx)` of [`sample_bilinear`].
#[inline]
pub fn sample_bilinear_grad(plane: &[f64], h: usize, w: usize, py: f64, px: f64) -> (f64, f64) {
    let (py, clamped_y) = clamp_coord(py, h);
    let (px, clamped_x) = clamp_coord(px, w);
    let (y0, y1, fy) = cell(py, h);
    let (x0, x1, fx) = cell(px, w);
    let (v00, v01) = (plane[y0 * w + x0], plane[y0 * w + x1]);
    let (v10, v11) = (plane[y1 * w + x0], plane[y1 * w + x1]);
    let dy = if clamped_y || h == 1 {
        0.0
    } else {
        (1.0 - fx) * (v10 - v00) + fx * (v11 - v01)
    };
    let dx = if clamped_x || w == 1 {
        0.0
    } else {
        (1.0 - fy) * (v01 - v00) + fy * (v11 - v10)
    };
    (dy, dx)
}

/// Warps one plane by a displacement given as separate component slices.
pub(crate) fn warp_plane(plane: &[f64], h: usize, w: usize, uy: &[f64], ux: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            out.push(sample_bilinear(plane, h, w, y as f64 + uy[i], x as f64 + ux[i]));
        }
    }
    out
}

/// Accumulates `upstream * d(warp)/du` into `grad` (`2 x h x w`).
pub(crate) fn warp_plane_backward_into(
    plane: &[f64],
    h: usize,
    w: usize,
    uy: &[f64],
    ux: &[f64],
    upstream: &[f64],
    grad: &mut [f64],
) {
    let n = h * w;
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let g = upstream[i];
            if g == 0.0 {
                continue;
            }
            let (dy, dx) = sample_bilinear_grad(plane, h, w, y as f64 + uy[i], x as f64 + ux[i]);
            grad[i] += g * dy;
            grad[n + i] += g * dx;
        }
    }
}

fn check_shapes(a: (usize, usize), u: &DisplacementField, what: &str) -> Result<()> {
    if a != u.shape() {
        return Err(Error::shape(format!(
            "{what} is {a:?} but displacement is {:?}",
            u.shape()
        )));
    }
    Ok(())
}

pub fn warp_image(img: &Image2D, u: &DisplacementField) -> Result<Image2D> {
    check_shapes(img.shape(), u, "image")?;
    let (h, w) = img.shape();
    img.with_data(warp_plane(img.data(), h, w, u.uy(), u.ux()))
}

/// Gradient of `sum(upstream * warp_image(img, u))` with respect to `u`,
/// laid out as `2 x H x W`.
pub fn warp_backward(img: &Image2D, u: &DisplacementField, upstream: &[f64]) -> Result<Vec<f64>> {
    check_shapes(img.shape(), u, "image")?;
    let (h, w) = img.shape();
    if upstream.len() != h * w {
        return Err(Error::shape(format!(
            "upstream gradient has {} values, expected {h}x{w}",
            upstream.len()
        )));
    }
    let mut grad = vec![0.0; 2 * h * w];
    warp_plane_backward_into(img.data(), h, w, u.uy(), u.ux(), upstream, &mut grad);
    Ok(grad)
}

/// Resamples a displacement onto an `hf x wf` grid.
///
/// Feature cell `(i, j)` corresponds to image position `(i * H/hf, j * W/wf)`;
/// the field is sampled bilinearly there and divided by the same ratios so
/// that it is expressed in feature-cell units. A same-size target returns
/// the input unchanged.
pub fn resample_displacement(u: &DisplacementField, hf: usize, wf: usize) -> Result<DisplacementField> {
    let (h, w) = u.shape();
    if (hf, wf) == (h, w) {
        return Ok(u.clone());
    }
    if hf == 0 || wf == 0 {
        return Err(Error::shape("target grid must be non-empty"));
    }
    let (ry, rx) = (h as f64 / hf as f64, w as f64 / wf as f64);
    let n = hf * wf;
    let mut data = vec![0.0; 2 * n];
    for i in 0..hf {
        for j in 0..wf {
            let (py, px) = (i as f64 * ry, j as f64 * rx);
            data[i * wf + j] = sample_bilinear(u.uy(), h, w, py, px) / ry;
            data[n + i * wf + j] = sample_bilinear(u.ux(), h, w, py, px) / rx;
        }
    }
    let [sy, sx] = u.spacing();
    DisplacementField::with_spacing(hf, wf, data, [sy * ry, sx * rx])
}

/// Transpose of [`resample_displacement`] with respect to the field values.
pub fn resample_displacement_adjoint(grad: &[f64], hf: usize, wf: usize, h: usize, w: usize) -> Vec<f64> {
    assert_eq!(grad.len(), 2 * hf * wf);
    if (hf, wf) == (h, w) {
        return grad.to_vec();
    }
    let (ry, rx) = (h as f64 / hf as f64, w as f64 / wf as f64);
    let (n, nf) = (h * w, hf * wf);
    let mut out = vec![0.0; 2 * n];
    for i in 0..hf {
        for j in 0..wf {
            let (py, _) = clamp_coord(i as f64 * ry, h);
            let (px, _) = clamp_coord(j as f64 * rx, w);
            let (y0, y1, fy) = cell(py, h);
            let (x0, x1, fx) = cell(px, w);
            for (comp, r) in [(0, ry), (1, rx)] {
                let g = grad[comp * nf + i * wf + j] / r;
                let plane = &mut out[comp * n..(comp + 1) * n];
                plane[y0 * w + x0] += g * (1.0 - fy) * (1.0 - fx);
                plane[y0 * w + x1] += g * (1.0 - fy) * fx;
                plane[y1 * w + x0] += g * fy * (1.0 - fx);
                plane[y1 * w + x1] += g * fy * fx;
            }
        }
    }
    out
}

/// Channel-wise bilinear warp of a feature map. `u` lives on the image grid
/// and is resampled to the feature grid first.
pub fn warp_features(f: &FeatureMap, u: &DisplacementField) -> Result<FeatureMap> {
    let (c, hf, wf) = f.shape();
    let uf = resample_displacement(u, hf, wf)?;
    let mut data = Vec::with_capacity(c * hf * wf);
    for ch in 0..c {
        data.extend(warp_plane(f.channel(ch), hf, wf, uf.uy(), uf.ux()));
    }
    f.with_data(data)
}

/// Gradient of `sum(upstream * warp_features(f, u))` with respect to the
/// image-grid displacement `u` (`2 x H x W`).
pub fn warp_features_backward(f: &FeatureMap, u: &DisplacementField, upstream: &[f64]) -> Result<Vec<f64>> {
    let (c, hf, wf) = f.shape();
    if upstream.len() != c * hf * wf {
        return Err(Error::shape(format!(
            "upstream gradient has {} values, expected {c}x{hf}x{wf}",
            upstream.len()
        )));
    }
    let uf = resample_displacement(u, hf, wf)?;
    let nf = hf * wf;
    let mut grad_f = vec![0.0; 2 * nf];
    for ch in 0..c {
        warp_plane_backward_into(
            f.channel(ch),
            hf,
            wf,
            uf.uy(),
            uf.ux(),
            &upstream[ch * nf..(ch + 1) * nf],
            &mut grad_f,
        );
    }
    let (h, w) = u.shape();
    Ok(resample_displacement_adjoint(&grad_f, hf, wf, h, w))
}

/// Nearest-neighbour pull warp of a label map (rounding half away from zero,
/// border clamp). The declared label set is kept.
pub fn warp_segmentation(seg: &SegmentationMap, u: &DisplacementField) -> Result<SegmentationMap> {
    check_shapes(seg.shape(), u, "segmentation")?;
    let (h, w) = seg.shape();
    let mut data = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let (dy, dx) = u.at(y, x);
            let (py, _) = clamp_coord((y as f64 + dy).round(), h);
            let (px, _) = clamp_coord((x as f64 + dx).round(), w);
            data.push(seg.get(py as usize, px as usize));
        }
    }
    SegmentationMap::with_label_set(h, w, data, seg.label_set().clone())
}
