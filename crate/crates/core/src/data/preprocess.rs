use super::Image2D;
use crate::error::{Error, Result};

/// Affine rescale to `[0, 1]`. A constant image maps to all zeros.
pub fn normalize_intensity(img: &Image2D) -> Image2D {
    let (lo, hi) = img
        .data()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let data = if hi > lo {
        let range = hi - lo;
        img.data().iter().map(|&v| (v - lo) / range).collect()
    } else {
        vec![0.0; img.data().len()]
    };
    img.with_data(data).expect("normalized values are finite")
}

/// Maps output index `i` to a source coordinate with the align-corners
/// convention: the first and last samples of both grids coincide.
#[inline]
fn align_corners_coord(i: usize, src: usize, dst: usize) -> f64 {
    if dst <= 1 {
        0.0
    } else {
        i as f64 * (src - 1) as f64 / (dst - 1) as f64
    }
}

#[inline]
fn lerp_index(pos: f64, n: usize) -> (usize, usize, f64) {
    if n == 1 {
        return (0, 0, 0.0);
    }
    let i0 = (pos.floor() as usize).min(n - 2);
    (i0, i0 + 1, pos - i0 as f64)
}

/// Bilinear resize of a row-major `h x w` grid to `out_h x out_w`
/// (align-corners).
pub fn resize_bilinear(data: &[f64], h: usize, w: usize, out_h: usize, out_w: usize) -> Vec<f64> {
    assert_eq!(data.len(), h * w);
    let cols: Vec<_> = (0..out_w)
        .map(|j| lerp_index(align_corners_coord(j, w, out_w), w))
        .collect();
    let mut out = Vec::with_capacity(out_h * out_w);
    for i in 0..out_h {
        let (y0, y1, fy) = lerp_index(align_corners_coord(i, h, out_h), h);
        for &(x0, x1, fx) in &cols {
            let top = data[y0 * w + x0] * (1.0 - fx) + data[y0 * w + x1] * fx;
            let bot = data[y1 * w + x0] * (1.0 - fx) + data[y1 * w + x1] * fx;
            out.push(top * (1.0 - fy) + bot * fy);
        }
    }
    out
}

/// Transpose of [`resize_bilinear`]: scatters an `out_h x out_w` gradient
/// back onto the `h x w` source grid.
pub fn resize_bilinear_adjoint(
    grad: &[f64],
    h: usize,
    w: usize,
    out_h: usize,
    out_w: usize,
) -> Vec<f64> {
    assert_eq!(grad.len(), out_h * out_w);
    let cols: Vec<_> = (0..out_w)
        .map(|j| lerp_index(align_corners_coord(j, w, out_w), w))
        .collect();
    let mut out = vec![0.0; h * w];
    for i in 0..out_h {
        let (y0, y1, fy) = lerp_index(align_corners_coord(i, h, out_h), h);
        for (j, &(x0, x1, fx)) in cols.iter().enumerate() {
            let g = grad[i * out_w + j];
            out[y0 * w + x0] += g * (1.0 - fy) * (1.0 - fx);
            out[y0 * w + x1] += g * (1.0 - fy) * fx;
            out[y1 * w + x0] += g * fy * (1.0 - fx);
            out[y1 * w + x1] += g * fy * fx;
        }
    }
    out
}

/// Output side length for a scale factor.
pub(crate) fn scaled_len(n: usize, factor: f64) -> usize {
    (n as f64 * factor).round() as usize
}

/// Bilinear upsampling (align-corners) to `round(H*f) x round(W*f)`;
/// spacing is divided by `f`. A factor of exactly 1 returns the input.
pub fn upscale(img: &Image2D, factor: f64) -> Result<Image2D> {
    if !(factor.is_finite() && factor > 0.0) {
        return Err(Error::invalid(format!("upscale factor must be > 0, got {factor}")));
    }
    if factor == 1.0 {
        return Ok(img.clone());
    }
    let (h, w) = img.shape();
    let (oh, ow) = (scaled_len(h, factor), scaled_len(w, factor));
    if oh < 1 || ow < 1 {
        return Err(Error::shape(format!(
            "upscale by {factor} of {h}x{w} yields an empty image"
        )));
    }
    let data = resize_bilinear(img.data(), h, w, oh, ow);
    let [sy, sx] = img.spacing();
    Image2D::with_geometry(oh, ow, data, [sy / factor, sx / factor], img.origin())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_examples() {
        let img = Image2D::new(4, 4, (0..16).map(|i| 2.0 + 4.0 * ((i % 3) as f64) / 2.0).collect()).unwrap();
        let n = normalize_intensity(&img);
        // {2, 4, 6} -> {0, 0.5, 1}
        for (a, b) in img.data().iter().zip(n.data()) {
            assert_eq!(*b, (a - 2.0) / 4.0);
        }
        assert_eq!(normalize_intensity(&n), n);

        let constant = Image2D::new(4, 4, vec![5.0; 16]).unwrap();
        assert!(normalize_intensity(&constant).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn align_corners_doubling_of_two_columns() {
        let out = resize_bilinear(&[0.0, 1.0, 0.0, 1.0], 2, 2, 4, 4);
        for row in out.chunks(4) {
            let expect = [0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0];
            for (a, b) in row.iter().zip(expect) {
                assert!((a - b).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn upscale_sizes_and_spacing() {
        let img = Image2D::with_geometry(128, 128, vec![0.5; 128 * 128], [1.8, 1.8], [0.0, 0.0]).unwrap();
        let up = upscale(&img, 3.5).unwrap();
        assert_eq!(up.shape(), (448, 448));
        assert!((up.spacing()[0] - 1.8 / 3.5).abs() < 1e-15);
        assert_eq!(upscale(&img, 1.0).unwrap(), img);
        assert!(upscale(&img, 0.0).is_err());
        assert!(upscale(&img, 0.001).is_err());
    }

    #[test]
    fn resize_adjoint_dot_product() {
        let (h, w, oh, ow) = (5, 7, 11, 9);
        let x: Vec<f64> = (0..h * w).map(|i| ((i * 37 % 17) as f64).sin()).collect();
        let g: Vec<f64> = (0..oh * ow).map(|i| ((i * 13 % 23) as f64).cos()).collect();
        let ax = resize_bilinear(&x, h, w, oh, ow);
        let atg = resize_bilinear_adjoint(&g, h, w, oh, ow);
        let lhs: f64 = ax.iter().zip(&g).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&atg).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(1.0));
    }
}
