//! Uniform Cartesian grids, scalar field storage, and the finite-difference
//! primitives shared by the solver and the measurement code.
//!
//! Sign convention used throughout: a scalar field `u` is a "reached-ness"
//! function, high inside the region a front has covered. The front expands
//! outward, so `u` grows in time at every fixed point as the front approaches.

use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use thiserror::Error;

/// Magic bytes opening a field snapshot file.
pub const SNAPSHOT_MAGIC: &[u8; 7] = b"GFRONT1";

#[derive(Debug, Error)]
pub enum GridError {
    #[error("point ({0}, {1}) lies outside the grid hull")]
    OutOfHull(f64, f64),
    #[error("grid extent must be at least 8 nodes per axis, got {0}x{1}")]
    ExtentTooSmall(usize, usize),
    #[error("grid spacing must be positive, got {0}")]
    BadSpacing(f64),
    #[error("snapshot header is not GFRONT1")]
    BadMagic,
    #[error("snapshot declares dim {0}, only 2 is supported")]
    BadDim(u32),
    #[error("snapshot truncated or malformed")]
    Malformed,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Uniform 2-D node grid. Node `(i, j)` sits at
/// `(origin[0] + i*h, origin[1] + j*h)`; values are stored row-major with
/// `i` (the x index) fastest.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub nx: usize,
    pub ny: usize,
    pub h: f64,
    pub origin: [f64; 2],
}

impl Grid {
    pub fn new(nx: usize, ny: usize, h: f64, origin: [f64; 2]) -> Result<Self, GridError> {
        if nx < 8 || ny < 8 {
            return Err(GridError::ExtentTooSmall(nx, ny));
        }
        if !(h > 0.0) || !h.is_finite() {
            return Err(GridError::BadSpacing(h));
        }
        Ok(Grid { nx, ny, h, origin })
    }

    /// Square grid covering `[center-half_width, center+half_width]^2` with
    /// `n` nodes per axis.
    pub fn centered_square(center: [f64; 2], half_width: f64, n: usize) -> Result<Self, GridError> {
        let h = 2.0 * half_width / (n as f64 - 1.0);
        Grid::new(n, n, h, [center[0] - half_width, center[1] - half_width])
    }

    /// Rectangle `[x0,x1] x [y0,y1]` with spacing as close to `h_target` as
    /// possible (node counts rounded up, spacing kept uniform across axes by
    /// widening the box slightly when needed).
    pub fn covering(x0: f64, x1: f64, y0: f64, y1: f64, h_target: f64) -> Result<Self, GridError> {
        let nx = ((x1 - x0) / h_target).ceil() as usize + 1;
        let ny = ((y1 - y0) / h_target).ceil() as usize + 1;
        Grid::new(nx.max(8), ny.max(8), h_target, [x0, y0])
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    #[inline]
    pub fn node_x(&self, i: usize) -> f64 {
        self.origin[0] + i as f64 * self.h
    }

    #[inline]
    pub fn node_y(&self, j: usize) -> f64 {
        self.origin[1] + j as f64 * self.h
    }

    pub fn n_nodes(&self) -> usize {
        self.nx * self.ny
    }

    pub fn x_max(&self) -> f64 {
        self.node_x(self.nx - 1)
    }

    pub fn y_max(&self) -> f64 {
        self.node_y(self.ny - 1)
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        p[0] >= self.origin[0]
            && p[0] <= self.x_max()
            && p[1] >= self.origin[1]
            && p[1] <= self.y_max()
    }

    /// Cell containing `p` plus the fractional offset inside it, clamped so
    /// that points on the far hull edge fall into the last cell.
    pub fn locate(&self, p: [f64; 2]) -> Result<(usize, usize, f64, f64), GridError> {
        if !self.contains(p) {
            return Err(GridError::OutOfHull(p[0], p[1]));
        }
        let fx = (p[0] - self.origin[0]) / self.h;
        let fy = (p[1] - self.origin[1]) / self.h;
        let i = (fx.floor() as usize).min(self.nx - 2);
        let j = (fy.floor() as usize).min(self.ny - 2);
        Ok((i, j, fx - i as f64, fy - j as f64))
    }
}

/// Grid-sampled scalar field at a fixed time.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    pub grid: Grid,
    pub values: Vec<f64>,
    pub time_stamp: f64,
}

impl ScalarField {
    pub fn zeros(grid: Grid, time_stamp: f64) -> Self {
        ScalarField { grid, values: vec![0.0; grid.n_nodes()], time_stamp }
    }

    pub fn from_fn(grid: Grid, time_stamp: f64, f: impl Fn(f64, f64) -> f64) -> Self {
        let mut values = Vec::with_capacity(grid.n_nodes());
        for j in 0..grid.ny {
            let y = grid.node_y(j);
            for i in 0..grid.nx {
                values.push(f(grid.node_x(i), y));
            }
        }
        ScalarField { grid, values, time_stamp }
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[self.grid.idx(i, j)]
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Multilinear interpolation; exact on bilinear functions.
    pub fn interpolate(&self, p: [f64; 2]) -> Result<f64, GridError> {
        let (i, j, sx, sy) = self.grid.locate(p)?;
        let v00 = self.at(i, j);
        let v10 = self.at(i + 1, j);
        let v01 = self.at(i, j + 1);
        let v11 = self.at(i + 1, j + 1);
        Ok(v00 * (1.0 - sx) * (1.0 - sy)
            + v10 * sx * (1.0 - sy)
            + v01 * (1.0 - sx) * sy
            + v11 * sx * sy)
    }
}

/// One-sided differences at node `(i, j)`. Missing sides at the boundary use
/// a constant-extension (zero-gradient) ghost, which keeps the discrete max
/// principle intact at outflow boundaries; the containment policy keeps
/// boundary treatment non-load-bearing anyway.
#[inline]
pub fn one_sided_diffs(f: &ScalarField, i: usize, j: usize) -> ([f64; 2], [f64; 2]) {
    let g = f.grid;
    let inv_h = 1.0 / g.h;
    let c = f.at(i, j);
    let dxm = if i > 0 { (c - f.at(i - 1, j)) * inv_h } else { 0.0 };
    let dxp = if i + 1 < g.nx { (f.at(i + 1, j) - c) * inv_h } else { 0.0 };
    let dym = if j > 0 { (c - f.at(i, j - 1)) * inv_h } else { 0.0 };
    let dyp = if j + 1 < g.ny { (f.at(i, j + 1) - c) * inv_h } else { 0.0 };
    ([dxm, dxp], [dym, dyp])
}

/// Godunov numerical Hamiltonian for `|grad u|` with `u` high inside the
/// expanding region (the source term `+|grad u|` grows `u` outward):
///
/// ```text
/// sqrt( sum_axis max( min(D^-, 0)^2, max(D^+, 0)^2 ) )
/// ```
///
/// On a plateau both one-sided differences vanish and the value is 0.
#[inline]
pub fn godunov_norm(dm: f64, dp: f64) -> f64 {
    let a = dm.min(0.0);
    let b = dp.max(0.0);
    (a * a).max(b * b)
}

/// Godunov discretization of `|grad u|` at a node (see [`godunov_norm`]).
pub fn upwind_gradient_norm(f: &ScalarField, i: usize, j: usize) -> f64 {
    let ([dxm, dxp], [dym, dyp]) = one_sided_diffs(f, i, j);
    (godunov_norm(dxm, dxp) + godunov_norm(dym, dyp)).sqrt()
}

/// First-order upwind approximation of `V . grad u` at a node, stencil chosen
/// against the flow direction per axis.
pub fn upwind_advection(f: &ScalarField, vx: f64, vy: f64, i: usize, j: usize) -> f64 {
    let ([dxm, dxp], [dym, dyp]) = one_sided_diffs(f, i, j);
    let du_dx = if vx >= 0.0 { dxm } else { dxp };
    let du_dy = if vy >= 0.0 { dym } else { dyp };
    vx * du_dx + vy * du_dy
}

fn put_u64(w: &mut impl Write, v: u64) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn put_f64(w: &mut impl Write, v: f64) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn get_u64(r: &mut impl Read) -> Result<u64, GridError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(|_| GridError::Malformed)?;
    Ok(u64::from_le_bytes(b))
}

fn get_f64(r: &mut impl Read) -> Result<f64, GridError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(|_| GridError::Malformed)?;
    Ok(f64::from_le_bytes(b))
}

/// Write a field snapshot in the GFRONT1 format: magic `GFRONT1`, then dim,
/// extent per axis, origin, spacing, time stamp, then node values as
/// little-endian 64-bit floats, row-major. Round-trips bit-exactly.
pub fn write_snapshot(f: &ScalarField, path: &Path) -> Result<(), GridError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(SNAPSHOT_MAGIC)?;
    w.write_all(&2u32.to_le_bytes())?;
    put_u64(&mut w, f.grid.nx as u64)?;
    put_u64(&mut w, f.grid.ny as u64)?;
    put_f64(&mut w, f.grid.origin[0])?;
    put_f64(&mut w, f.grid.origin[1])?;
    put_f64(&mut w, f.grid.h)?;
    put_f64(&mut w, f.time_stamp)?;
    for v in &f.values {
        put_f64(&mut w, *v)?;
    }
    w.flush()?;
    Ok(())
}

/// Read a GFRONT1 snapshot back. See [`write_snapshot`].
pub fn read_snapshot(path: &Path) -> Result<ScalarField, GridError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 7];
    r.read_exact(&mut magic).map_err(|_| GridError::Malformed)?;
    if &magic != SNAPSHOT_MAGIC {
        return Err(GridError::BadMagic);
    }
    let mut dim_bytes = [0u8; 4];
    r.read_exact(&mut dim_bytes).map_err(|_| GridError::Malformed)?;
    let dim = u32::from_le_bytes(dim_bytes);
    if dim != 2 {
        return Err(GridError::BadDim(dim));
    }
    let nx = get_u64(&mut r)? as usize;
    let ny = get_u64(&mut r)? as usize;
    let origin = [get_f64(&mut r)?, get_f64(&mut r)?];
    let h = get_f64(&mut r)?;
    let time_stamp = get_f64(&mut r)?;
    let grid = Grid::new(nx, ny, h, origin)?;
    let mut values = Vec::with_capacity(nx * ny);
    for _ in 0..nx * ny {
        values.push(get_f64(&mut r)?);
    }
    Ok(ScalarField { grid, values, time_stamp })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn unit_grid(n: usize) -> Grid {
        Grid::new(n, n, 1.0 / (n as f64 - 1.0), [0.0, 0.0]).unwrap()
    }

    #[test]
    fn rejects_tiny_extent() {
        assert!(matches!(Grid::new(4, 12, 0.1, [0.0, 0.0]), Err(GridError::ExtentTooSmall(4, 12))));
    }

    #[test]
    fn gradient_norm_of_linear_field_is_one() {
        let g = unit_grid(17);
        let f = ScalarField::from_fn(g, 0.0, |x, _| x);
        for j in 1..16 {
            for i in 1..16 {
                assert_abs_diff_eq!(upwind_gradient_norm(&f, i, j), 1.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn gradient_norm_of_constant_field_is_zero() {
        let g = unit_grid(9);
        let f = ScalarField::from_fn(g, 0.0, |_, _| 3.5);
        for j in 0..9 {
            for i in 0..9 {
                assert_eq!(upwind_gradient_norm(&f, i, j), 0.0);
            }
        }
    }

    #[test]
    fn gradient_norm_of_cone() {
        // u = |x - x0| sampled on h = 1/64: 1 + O(h) away from the apex,
        // apex value in [0, sqrt(2)].
        let n = 129;
        let g = Grid::new(n, n, 1.0 / 64.0, [-1.0, -1.0]).unwrap();
        let f = ScalarField::from_fn(g, 0.0, |x, y| (x * x + y * y).sqrt());
        let apex = upwind_gradient_norm(&f, 64, 64);
        assert!((0.0..=2.0f64.sqrt() + 1e-12).contains(&apex), "apex {apex}");
        // One-sided differences of |x| carry error ~ h/(2r); check away from
        // the apex at fixed physical radius.
        for j in 1..n - 1 {
            for i in 1..n - 1 {
                let (x, y) = (g.node_x(i), g.node_y(j));
                if (x * x + y * y).sqrt() < 0.25 {
                    continue;
                }
                let v = upwind_gradient_norm(&f, i, j);
                assert!((v - 1.0).abs() < 3.0 / 64.0, "({i},{j}): {v}");
            }
        }
    }

    #[test]
    fn advection_zero_velocity() {
        let g = unit_grid(9);
        let f = ScalarField::from_fn(g, 0.0, |x, y| x * y + 0.3);
        for j in 0..9 {
            for i in 0..9 {
                assert_eq!(upwind_advection(&f, 0.0, 0.0, i, j), 0.0);
            }
        }
    }

    #[test]
    fn advection_linear_exact() {
        // u = x, V = (c, 0) -> c at interior nodes, exact.
        let g = unit_grid(9);
        let f = ScalarField::from_fn(g, 0.0, |x, _| x);
        for j in 1..8 {
            for i in 1..8 {
                assert_abs_diff_eq!(upwind_advection(&f, 2.25, 0.0, i, j), 2.25, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn advection_one_sided_stencil_value() {
        // u = x^2, V = (1, 0), node x = 0.5, h = 0.25: backward difference
        // (0.25 - 0.0625) / 0.25 = 0.75.
        let g = Grid::new(9, 9, 0.25, [0.0, 0.0]).unwrap();
        let f = ScalarField::from_fn(g, 0.0, |x, _| x * x);
        assert_abs_diff_eq!(upwind_advection(&f, 1.0, 0.0, 2, 4), 0.75, epsilon = 1e-12);
    }

    #[test]
    fn interpolation_at_nodes_and_midpoints() {
        let g = unit_grid(9);
        let f = ScalarField::from_fn(g, 0.0, |x, y| x + y);
        assert_abs_diff_eq!(f.interpolate([0.25, 0.5]).unwrap(), 0.75, epsilon = 1e-12);
        // Midpoint of a cell equals the mean of its corners for linear data.
        let h = g.h;
        let mid = f.interpolate([h / 2.0, h / 2.0]).unwrap();
        assert_abs_diff_eq!(mid, h, epsilon = 1e-12);
    }

    #[test]
    fn interpolation_reproduces_bilinear() {
        // u = x*y is itself bilinear, so interpolation is exact everywhere.
        let g = unit_grid(9);
        let f = ScalarField::from_fn(g, 0.0, |x, y| x * y);
        let h = g.h;
        let c = f.interpolate([1.5 * h, 2.5 * h]).unwrap();
        assert_abs_diff_eq!(c, 1.5 * h * 2.5 * h, epsilon = 1e-13);
    }

    #[test]
    fn interpolation_out_of_hull_errors() {
        let g = unit_grid(9);
        let f = ScalarField::zeros(g, 0.0);
        assert!(f.interpolate([1.5, 0.2]).is_err());
        assert!(f.interpolate([0.2, -0.01]).is_err());
    }

    #[test]
    fn gradient_consistency_refinement() {
        // First-order convergence on u = sin(x) + cos(y): the refinement
        // slope of the max interior error should be at least 0.9.
        let mut errs = Vec::new();
        for n in [65usize, 129, 257] {
            let g = Grid::new(n, n, 2.0 / (n as f64 - 1.0), [-1.0, -1.0]).unwrap();
            let f = ScalarField::from_fn(g, 0.0, |x, y| x.sin() + y.cos());
            let mut worst: f64 = 0.0;
            for j in 1..n - 1 {
                for i in 1..n - 1 {
                    let x = g.node_x(i);
                    let y = g.node_y(j);
                    let exact = (x.cos().powi(2) + y.sin().powi(2)).sqrt();
                    if exact < 0.3 {
                        continue;
                    }
                    worst = worst.max((upwind_gradient_norm(&f, i, j) - exact).abs());
                }
            }
            errs.push(worst);
        }
        let slope1 = (errs[0] / errs[1]).log2();
        let slope2 = (errs[1] / errs[2]).log2();
        assert!(slope1 > 0.9 && slope2 > 0.9, "slopes {slope1} {slope2}");
    }
}
