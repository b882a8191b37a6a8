//! Cubic B-spline free-form deformation.
//!
//! A [`ControlLattice`] of `Ny x Nx` control-point displacements covers an
//! `H x W` image: the `(Ny-3) x (Nx-3)` interior knot cells tile the image
//! exactly, so knot spacing is `((H-1)/(Ny-3), (W-1)/(Nx-3))` and control
//! point `k` sits at knot position `(k-1) * spacing`. The dense field is a
//! fixed linear map of the lattice; [`dense_grad_to_lattice`] is its exact
//! transpose.

use crate::data::DisplacementField;
use crate::error::{Error, Result};

/// Minimum number of control points per axis.
pub const MIN_CONTROL_POINTS: usize = 4;

#[inline]
fn weights_unchecked(u: f64) -> [f64; 4] {
    let u2 = u * u;
    let u3 = u2 * u;
    let v = 1.0 - u;
    [
        v * v * v / 6.0,
        (3.0 * u3 - 6.0 * u2 + 4.0) / 6.0,
        (-3.0 * u3 + 3.0 * u2 + 3.0 * u + 1.0) / 6.0,
        u3 / 6.0,
    ]
}

/// Uniform cubic B-spline basis weights for local coordinate `u` in `[0, 1)`.
pub fn cubic_bspline_weights(u: f64) -> Result<[f64; 4]> {
    if !(0.0..1.0).contains(&u) {
        return Err(Error::invalid(format!("local coordinate {u} outside [0, 1)")));
    }
    Ok(weights_unchecked(u))
}

/// Per-pixel support start and weights along one axis.
#[derive(Debug, Clone)]
struct AxisBasis {
    start: Vec<usize>,
    weights: Vec<[f64; 4]>,
}

impl AxisBasis {
    fn new(pixels: usize, control: usize) -> Self {
        let spacing = knot_spacing(pixels, control);
        let mut start = Vec::with_capacity(pixels);
        let mut weights = Vec::with_capacity(pixels);
        for p in 0..pixels {
            let t = p as f64 / spacing;
            let i = (t.floor() as usize).min(control - MIN_CONTROL_POINTS);
            // u reaches 1 only at the far image edge, where the polynomials
            // still agree with the next cell at u = 0
            let u = t - i as f64;
            start.push(i);
            weights.push(weights_unchecked(u));
        }
        Self { start, weights }
    }
}

fn knot_spacing(pixels: usize, control: usize) -> f64 {
    (pixels - 1) as f64 / (control - 3) as f64
}

/// B-spline FFD parameters: a `2 x Ny x Nx` grid of control-point
/// displacements in pixels (`uy` plane then `ux` plane) over an `H x W` image.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlLattice {
    ny: usize,
    nx: usize,
    grid: (usize, usize),
    params: Vec<f64>,
}

impl ControlLattice {
    pub fn zeros(ny: usize, nx: usize, grid: (usize, usize)) -> Result<Self> {
        Self::from_params(ny, nx, grid, vec![0.0; 2 * ny * nx])
    }

    pub fn from_params(ny: usize, nx: usize, grid: (usize, usize), params: Vec<f64>) -> Result<Self> {
        if ny < MIN_CONTROL_POINTS || nx < MIN_CONTROL_POINTS {
            return Err(Error::invalid(format!(
                "lattice must be at least {MIN_CONTROL_POINTS}x{MIN_CONTROL_POINTS}, got {ny}x{nx}"
            )));
        }
        if grid.0 < 2 || grid.1 < 2 {
            return Err(Error::invalid(format!(
                "grid {grid:?} too small for a positive knot spacing"
            )));
        }
        if params.len() != 2 * ny * nx {
            return Err(Error::shape(format!(
                "lattice has {} parameters, expected 2x{ny}x{nx}",
                params.len()
            )));
        }
        if params.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("control lattice".into()));
        }
        Ok(Self {
            ny,
            nx,
            grid,
            params,
        })
    }

    /// `(Ny, Nx)`
    pub fn shape(&self) -> (usize, usize) {
        (self.ny, self.nx)
    }

    /// `(H, W)` of the image the lattice deforms.
    pub fn grid_shape(&self) -> (usize, usize) {
        self.grid
    }

    /// `(hy, hx)` in pixels.
    pub fn knot_spacing(&self) -> (f64, f64) {
        (
            knot_spacing(self.grid.0, self.ny),
            knot_spacing(self.grid.1, self.nx),
        )
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    /// Mutable parameter access for optimizers; callers keep values finite.
    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn basis(&self) -> LatticeBasis {
        LatticeBasis::new(self.ny, self.nx, self.grid)
    }
}

/// Precomputed separable basis tables for one lattice geometry.
#[derive(Debug, Clone)]
pub struct LatticeBasis {
    ny: usize,
    nx: usize,
    height: usize,
    width: usize,
    rows: AxisBasis,
    cols: AxisBasis,
}

impl LatticeBasis {
    pub fn new(ny: usize, nx: usize, grid: (usize, usize)) -> Self {
        Self {
            ny,
            nx,
            height: grid.0,
            width: grid.1,
            rows: AxisBasis::new(grid.0, ny),
            cols: AxisBasis::new(grid.1, nx),
        }
    }

    pub fn n_params(&self) -> usize {
        2 * self.ny * self.nx
    }

    /// Dense `2 x H x W` displacement values for `params`.
    pub fn dense(&self, params: &[f64]) -> Vec<f64> {
        assert_eq!(params.len(), self.n_params());
        let (h, w, ny, nx) = (self.height, self.width, self.ny, self.nx);
        let mut out = vec![0.0; 2 * h * w];
        let mut tmp = vec![0.0; ny * w];
        for comp in 0..2 {
            let c = &params[comp * ny * nx..(comp + 1) * ny * nx];
            // contract along x for every lattice row
            for k in 0..ny {
                let row = &c[k * nx..(k + 1) * nx];
                for x in 0..w {
                    let j = self.cols.start[x];
                    let wx = &self.cols.weights[x];
                    tmp[k * w + x] =
                        wx[0] * row[j] + wx[1] * row[j + 1] + wx[2] * row[j + 2] + wx[3] * row[j + 3];
                }
            }
            let plane = &mut out[comp * h * w..(comp + 1) * h * w];
            for y in 0..h {
                let i = self.rows.start[y];
                let wy = &self.rows.weights[y];
                for x in 0..w {
                    plane[y * w + x] = wy[0] * tmp[i * w + x]
                        + wy[1] * tmp[(i + 1) * w + x]
                        + wy[2] * tmp[(i + 2) * w + x]
                        + wy[3] * tmp[(i + 3) * w + x];
                }
            }
        }
        out
    }

    /// Transpose of [`LatticeBasis::dense`].
    pub fn adjoint(&self, grad: &[f64]) -> Vec<f64> {
        let (h, w, ny, nx) = (self.height, self.width, self.ny, self.nx);
        assert_eq!(grad.len(), 2 * h * w);
        let mut out = vec![0.0; 2 * ny * nx];
        let mut tmp = vec![0.0; ny * w];
        for comp in 0..2 {
            tmp.fill(0.0);
            let g = &grad[comp * h * w..(comp + 1) * h * w];
            for y in 0..h {
                let i = self.rows.start[y];
                let wy = &self.rows.weights[y];
                for x in 0..w {
                    let v = g[y * w + x];
                    for l in 0..4 {
                        tmp[(i + l) * w + x] += wy[l] * v;
                    }
                }
            }
            let c = &mut out[comp * ny * nx..(comp + 1) * ny * nx];
            for k in 0..ny {
                for x in 0..w {
                    let v = tmp[k * w + x];
                    let j = self.cols.start[x];
                    let wx = &self.cols.weights[x];
                    for m in 0..4 {
                        c[k * nx + j + m] += wx[m] * v;
                    }
                }
            }
        }
        out
    }
}

/// Evaluates the tensor-product cubic B-spline over the full image grid.
pub fn lattice_to_dense(lattice: &ControlLattice) -> DisplacementField {
    let (h, w) = lattice.grid_shape();
    let data = lattice.basis().dense(lattice.params());
    DisplacementField::new(h, w, data).expect("dense field of a finite lattice is finite")
}

/// Gradient with respect to the lattice parameters given a gradient with
/// respect to the dense `2 x H x W` field.
pub fn dense_grad_to_lattice(lattice: &ControlLattice, grad: &[f64]) -> Result<Vec<f64>> {
    let (h, w) = lattice.grid_shape();
    if grad.len() != 2 * h * w {
        return Err(Error::shape(format!(
            "dense gradient has {} values, expected 2x{h}x{w}",
            grad.len()
        )));
    }
    if grad.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("dense gradient".into()));
    }
    Ok(lattice.basis().adjoint(grad))
}

/// Per-pixel `det(I + grad u)`.
#[derive(Debug, Clone, PartialEq)]
pub struct JacobianMap {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl JacobianMap {
    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.width + x]
    }
}

/// Central difference in the interior, one-sided at the borders, zero on a
/// single-sample axis.
#[inline]
fn diff(plane: &[f64], idx: impl Fn(usize) -> usize, p: usize, n: usize) -> f64 {
    if n == 1 {
        0.0
    } else if p == 0 {
        plane[idx(1)] - plane[idx(0)]
    } else if p == n - 1 {
        plane[idx(n - 1)] - plane[idx(n - 2)]
    } else {
        (plane[idx(p + 1)] - plane[idx(p - 1)]) / 2.0
    }
}

/// Jacobian determinant of `x + u(x)` using finite differences in pixel units.
pub fn jacobian_determinant(u: &DisplacementField) -> JacobianMap {
    let (h, w) = u.shape();
    let (uy, ux) = (u.uy(), u.ux());
    let mut data = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let col = |r: usize| r * w + x;
            let row = |c: usize| y * w + c;
            let duy_dy = diff(uy, col, y, h);
            let duy_dx = diff(uy, row, x, w);
            let dux_dy = diff(ux, col, y, h);
            let dux_dx = diff(ux, row, x, w);
            data.push((1.0 + duy_dy) * (1.0 + dux_dx) - duy_dx * dux_dy);
        }
    }
    JacobianMap {
        height: h,
        width: w,
        data,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_at_zero_and_half() {
        let w0 = cubic_bspline_weights(0.0).unwrap();
        let expect0 = [1.0 / 6.0, 4.0 / 6.0, 1.0 / 6.0, 0.0];
        for (a, b) in w0.iter().zip(expect0) {
            assert!((a - b).abs() < 1e-15);
        }
        // (1/48, 23/48, 23/48, 1/48)
        let w = cubic_bspline_weights(0.5).unwrap();
        let expect = [0.0208333, 0.4791667, 0.4791667, 0.0208333];
        for (a, b) in w.iter().zip(expect) {
            assert!((a - b).abs() < 1e-7);
        }
        assert!(cubic_bspline_weights(1.0).is_err());
        assert!(cubic_bspline_weights(-0.1).is_err());
    }

    #[test]
    fn weights_partition_of_unity() {
        for i in 0..1000 {
            let u = i as f64 / 1000.0;
            let s: f64 = cubic_bspline_weights(u).unwrap().iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_and_constant_lattices() {
        let lat = ControlLattice::zeros(6, 7, (20, 25)).unwrap();
        assert!(lattice_to_dense(&lat).data().iter().all(|&v| v == 0.0));

        let mut params = vec![3.0; 6 * 7];
        params.extend(vec![-2.0; 6 * 7]);
        let lat = ControlLattice::from_params(6, 7, (20, 25), params).unwrap();
        let u = lattice_to_dense(&lat);
        assert!(u.uy().iter().all(|v| (v - 3.0).abs() < 1e-12));
        assert!(u.ux().iter().all(|v| (v + 2.0).abs() < 1e-12));
    }

    #[test]
    fn single_control_point_gives_separable_kernel() {
        // 33 px with 7 control points -> knot spacing 8; control point k sits at (k-1)*8
        let (ny, nx) = (7, 7);
        let mut lat = ControlLattice::zeros(ny, nx, (33, 33)).unwrap();
        assert_eq!(lat.knot_spacing(), (8.0, 8.0));
        let (k, j) = (3, 4);
        lat.params_mut()[k * nx + j] = 1.0;
        let u = lattice_to_dense(&lat);
        let (py, px) = ((k - 1) * 8, (j - 1) * 8);
        let peak = u.uy()[py * 33 + px];
        assert!((peak - 4.0 / 9.0).abs() < 1e-15);
        let max = u.uy().iter().cloned().fold(f64::MIN, f64::max);
        assert_eq!(max, peak);
        assert!(u.ux().iter().all(|&v| v == 0.0));
        // separable: value at (py, px + 4) = B1(0) * kernel(0.5 knot)
        let half = weights_unchecked(0.5);
        let v = u.uy()[py * 33 + px + 4];
        assert!((v - (2.0 / 3.0) * half[1]).abs() < 1e-15);
    }

    #[test]
    fn delta_gradient_maps_to_weight_stencil() {
        let lat = ControlLattice::zeros(6, 6, (21, 21)).unwrap();
        let (h, w) = (21, 21);
        let (py, px) = (7, 11);
        let mut g = vec![0.0; 2 * h * w];
        g[h * w + py * w + px] = 1.0;
        let grad = dense_grad_to_lattice(&lat, &g).unwrap();
        let basis = lat.basis();
        let (i, j) = (basis.rows.start[py], basis.cols.start[px]);
        let (wy, wx) = (basis.rows.weights[py], basis.cols.weights[px]);
        for k in 0..6 {
            for m in 0..6 {
                assert_eq!(grad[k * 6 + m], 0.0);
                let expect = if (i..i + 4).contains(&k) && (j..j + 4).contains(&m) {
                    wy[k - i] * wx[m - j]
                } else {
                    0.0
                };
                assert!((grad[36 + k * 6 + m] - expect).abs() < 1e-15);
            }
        }
        assert!(dense_grad_to_lattice(&lat, &g[1..]).is_err());
    }

    #[test]
    fn jacobian_examples() {
        let zero = DisplacementField::zeros(8, 9);
        assert!(jacobian_determinant(&zero).data().iter().all(|&d| d == 1.0));
        let shift = DisplacementField::uniform(8, 9, 1.5, -2.0).unwrap();
        assert!(jacobian_determinant(&shift).data().iter().all(|&d| d == 1.0));
        let lin = DisplacementField::from_fn(8, 9, |_, x| (0.0, 0.1 * x as f64)).unwrap();
        let j = jacobian_determinant(&lin);
        for y in 1..7 {
            for x in 1..8 {
                assert!((j.get(y, x) - 1.1).abs() < 1e-12);
            }
        }
    }
}
