//! Time-stepping of the G-equation  du/dt + V_t . grad u = |grad u|
//! from given initial data, producing field snapshots and a first-arrival
//! time field.
//!
//! The scheme is the first-order monotone one: Godunov discretization of
//! |grad u|, componentwise upwinding of the advection term, forward Euler or
//! two-stage TVD Runge-Kutta in time with velocities frozen per stage.

use crate::flow::{PreparedVelocity, StageVelocity, VelocityField};
use crate::grid::{Grid, ScalarField};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Values below this are flushed to exact zero each step (see
/// `InitialData::ExpCone`): keeps the kernel out of subnormal territory.
const VALUE_FLOOR: f64 = 1e-30;

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("grid too small: {0}")]
    GridTooSmall(String),
    #[error("front reached the boundary margin at t = {0}; measurements would be corrupted")]
    FrontHitBoundary(f64),
    #[error("max-norm stability violated at t = {t}: drift {drift:e}")]
    Unstable { t: f64, drift: f64 },
    #[error("non-finite field value at t = {0}")]
    NonFinite(f64),
    #[error("bad solve configuration: {0}")]
    BadConfig(String),
}

/// Initial data for the level-set function; values in [0, 1], high inside.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum InitialData {
    /// `u0(x) = exp(-|x - center| / eps)`, values in (0, 1].
    ExpCone { eps: f64, center: [f64; 2] },
    /// Clamped ramp: 1 inside the ball of `radius`, 0 outside, linear over a
    /// band of half-width `2h` so the `reach_level = 0.5` contour starts
    /// exactly on the sphere.
    SignedProfile { radius: f64, center: [f64; 2] },
    /// Caller-provided node values (must match the solve grid).
    CustomGrid(Vec<f64>),
}

impl InitialData {
    pub fn center(&self) -> [f64; 2] {
        match self {
            InitialData::ExpCone { center, .. } | InitialData::SignedProfile { center, .. } => {
                *center
            }
            InitialData::CustomGrid(_) => [0.0, 0.0],
        }
    }

    pub fn discretize(&self, grid: &Grid) -> Result<Vec<f64>, SolveError> {
        match self {
            InitialData::ExpCone { eps, center } => {
                if !(*eps > 0.0) {
                    return Err(SolveError::BadConfig(format!("exp_cone eps {eps} must be > 0")));
                }
                let mut v = Vec::with_capacity(grid.n_nodes());
                for j in 0..grid.ny {
                    let dy = grid.node_y(j) - center[1];
                    for i in 0..grid.nx {
                        let dx = grid.node_x(i) - center[0];
                        let u = (-(dx * dx + dy * dy).sqrt() / eps).exp();
                        // Far tail floored to 0: subnormal values cost
                        // microcode assists in the kernel and sit 60+ e-folds
                        // below every measured level.
                        v.push(if u < VALUE_FLOOR { 0.0 } else { u });
                    }
                }
                Ok(v)
            }
            InitialData::SignedProfile { radius, center } => {
                let band = 2.0 * grid.h;
                let mut v = Vec::with_capacity(grid.n_nodes());
                for j in 0..grid.ny {
                    let dy = grid.node_y(j) - center[1];
                    for i in 0..grid.nx {
                        let dx = grid.node_x(i) - center[0];
                        let sd = (dx * dx + dy * dy).sqrt() - radius;
                        v.push((0.5 - sd / (2.0 * band)).clamp(0.0, 1.0));
                    }
                }
                Ok(v)
            }
            InitialData::CustomGrid(values) => {
                if values.len() != grid.n_nodes() {
                    return Err(SolveError::BadConfig(format!(
                        "custom initial data has {} values, grid has {} nodes",
                        values.len(),
                        grid.n_nodes()
                    )));
                }
                if !values.iter().all(|v| v.is_finite()) {
                    return Err(SolveError::BadConfig("non-finite initial data".into()));
                }
                Ok(values.clone())
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TimeIntegrator {
    Euler,
    TvdRk2,
}

/// What to do when the front approaches the computational boundary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BoundaryPolicy {
    /// Abort the solve: silent clipping would corrupt set measurements.
    Refuse,
    /// Keep going. The computed reachable set is then an inner approximation
    /// and arrival times are biased upward only; used by travel-time runs on
    /// corridor grids.
    AllowTruncation,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveConfig {
    /// CFL number in (0, 1]; `dt = cfl * h / (M + 1)`.
    pub cfl: f64,
    pub t_final: f64,
    /// Sorted times at which field snapshots are captured.
    pub snapshot_times: Vec<f64>,
    /// Level in (0, 1) whose first crossing defines the numeric reachable set.
    pub reach_level: f64,
    /// Start time (the field is evaluated at absolute times).
    pub t_start: f64,
    pub integrator: TimeIntegrator,
    pub boundary: BoundaryPolicy,
    /// Stop early once every listed point has a secured (interpolatable)
    /// arrival time.
    pub early_stop: Vec<[f64; 2]>,
    /// Replace the CFL time step by the sharper provably monotone bound
    /// `0.95 h / (sqrt(2) M)` when that is larger. Worth it for weak flows on
    /// long travel-time runs.
    pub sharper_dt: bool,
}

impl Default for SolveConfig {
    fn default() -> Self {
        SolveConfig {
            cfl: 0.5,
            t_final: 1.0,
            snapshot_times: Vec::new(),
            reach_level: 0.5,
            t_start: 0.0,
            integrator: TimeIntegrator::TvdRk2,
            boundary: BoundaryPolicy::Refuse,
            early_stop: Vec::new(),
            sharper_dt: false,
        }
    }
}

/// Snapshots plus the first time each node's value crossed `reach_level`
/// (+inf where that never happened).
#[derive(Debug, Clone)]
pub struct ScalarFieldSeries {
    pub snapshots: Vec<ScalarField>,
    pub arrival_time: ScalarField,
    /// Reach level that produced `arrival_time`.
    pub reach_level: f64,
    /// `M = 1 + sup |V|` of the flow that produced the series.
    pub big_m: f64,
}

impl ScalarFieldSeries {
    /// Node mask of the numeric reachable set at time `t` (relative to the
    /// start). Threshold ties count as inside.
    pub fn mask_at(&self, t: f64) -> Vec<bool> {
        self.arrival_time.values.iter().map(|&a| a <= t).collect()
    }
}

trait StageVel: Copy {
    /// Row-scoped view; `at` indices are then row-local.
    fn row(&self, base: usize, nx: usize) -> Self;
    fn at(&self, i: usize) -> (f64, f64);
}

#[derive(Clone, Copy)]
struct UniformVel(f64, f64);
impl StageVel for UniformVel {
    #[inline(always)]
    fn row(&self, _: usize, _: usize) -> Self {
        *self
    }
    #[inline(always)]
    fn at(&self, _: usize) -> (f64, f64) {
        (self.0, self.1)
    }
}

#[derive(Clone, Copy)]
struct PatternVel<'a> {
    f: f64,
    px: &'a [f64],
    py: &'a [f64],
}
impl StageVel for PatternVel<'_> {
    #[inline(always)]
    fn row(&self, base: usize, nx: usize) -> Self {
        PatternVel { f: self.f, px: &self.px[base..base + nx], py: &self.py[base..base + nx] }
    }
    #[inline(always)]
    fn at(&self, i: usize) -> (f64, f64) {
        (self.f * self.px[i], self.f * self.py[i])
    }
}

#[derive(Clone, Copy)]
struct DenseVel<'a> {
    vx: &'a [f64],
    vy: &'a [f64],
}
impl StageVel for DenseVel<'_> {
    #[inline(always)]
    fn row(&self, base: usize, nx: usize) -> Self {
        DenseVel { vx: &self.vx[base..base + nx], vy: &self.vy[base..base + nx] }
    }
    #[inline(always)]
    fn at(&self, i: usize) -> (f64, f64) {
        (self.vx[i], self.vy[i])
    }
}

/// Update increment at one node. Branch-free: the upwind selections are
/// expressed through max/min so the row loop vectorizes.
#[inline(always)]
fn node_update<V: StageVel>(c: f64, w: f64, e: f64, s: f64, n: f64, inv_h: f64, vel: &V, i: usize) -> f64 {
    let dxm = (c - w) * inv_h;
    let dxp = (e - c) * inv_h;
    let dym = (c - s) * inv_h;
    let dyp = (n - c) * inv_h;
    let ax = dxm.min(0.0);
    let bx = dxp.max(0.0);
    let ay = dym.min(0.0);
    let by = dyp.max(0.0);
    let g = ((ax * ax).max(bx * bx) + (ay * ay).max(by * by)).sqrt();
    let (vx, vy) = vel.at(i);
    let adv = vx.max(0.0) * dxm + vx.min(0.0) * dxp + vy.max(0.0) * dym + vy.min(0.0) * dyp;
    g - adv
}

/// One explicit Euler stage: `out = u + dt * L(u)` over the whole grid.
/// Missing one-sided differences at the boundary are zero (constant-extension
/// ghost), realized by feeding the center value for the missing neighbor.
fn apply_stage<V: StageVel>(u: &[f64], out: &mut [f64], nx: usize, ny: usize, inv_h: f64, dt: f64, vel: V) {
    debug_assert!(nx >= 3 && ny >= 3);
    for j in 0..ny {
        let base = j * nx;
        let south = if j > 0 { &u[base - nx..base] } else { &u[base..base + nx] };
        let north = if j + 1 < ny { &u[base + nx..base + 2 * nx] } else { &u[base..base + nx] };
        let row = &u[base..base + nx];
        let orow = &mut out[base..base + nx];
        let vrow = vel.row(base, nx);
        assert!(south.len() == nx && north.len() == nx && orow.len() == nx);
        orow[0] = row[0] + dt * node_update(row[0], row[0], row[1], south[0], north[0], inv_h, &vrow, 0);
        for i in 1..nx - 1 {
            let c = row[i];
            orow[i] =
                c + dt * node_update(c, row[i - 1], row[i + 1], south[i], north[i], inv_h, &vrow, i);
        }
        let l = nx - 1;
        orow[l] =
            row[l] + dt * node_update(row[l], row[l - 1], row[l], south[l], north[l], inv_h, &vrow, l);
    }
}

/// Outputs of the fused final stage + scan.
struct ScanOut {
    max_new: f64,
    min_new: f64,
}

/// Final stage of a step fused with the per-row scan:
///
/// `out = prev_w * u_prev + (1 - prev_w) * (src + dt L(src))`
///
/// (Euler: `prev_w = 0`, `src = u_prev`; TVD-RK2 second stage:
/// `prev_w = 0.5`, `src` = first-stage result), followed in the same row by
/// the value floor, max/min accumulation and arrival-crossing interpolation.
/// Fusing keeps the row in L1 and avoids a second full-array pass.
#[allow(clippy::too_many_arguments)]
fn final_stage_scanned<V: StageVel>(
    u_prev: &[f64],
    src: &[f64],
    out: &mut [f64],
    arrival: &mut [f64],
    nx: usize,
    ny: usize,
    inv_h: f64,
    dt: f64,
    vel: V,
    prev_w: f64,
    level: f64,
    t_abs: f64,
) -> ScanOut {
    debug_assert!(nx >= 3 && ny >= 3);
    let stage_w = 1.0 - prev_w;
    let mut max_new = f64::NEG_INFINITY;
    let mut min_new = f64::INFINITY;
    for j in 0..ny {
        let base = j * nx;
        let south = if j > 0 { &src[base - nx..base] } else { &src[base..base + nx] };
        let north = if j + 1 < ny { &src[base + nx..base + 2 * nx] } else { &src[base..base + nx] };
        let row = &src[base..base + nx];
        let prow = &u_prev[base..base + nx];
        let orow = &mut out[base..base + nx];
        let arow = &mut arrival[base..base + nx];
        let vrow = vel.row(base, nx);
        assert!(south.len() == nx && north.len() == nx && orow.len() == nx && prow.len() == nx);
        orow[0] = prev_w * prow[0]
            + stage_w
                * (row[0] + dt * node_update(row[0], row[0], row[1], south[0], north[0], inv_h, &vrow, 0));
        for i in 1..nx - 1 {
            let c = row[i];
            orow[i] = prev_w * prow[i]
                + stage_w
                    * (c + dt * node_update(c, row[i - 1], row[i + 1], south[i], north[i], inv_h, &vrow, i));
        }
        let l = nx - 1;
        orow[l] = prev_w * prow[l]
            + stage_w
                * (row[l] + dt * node_update(row[l], row[l - 1], row[l], south[l], north[l], inv_h, &vrow, l));

        // Row scan while it is still cache-hot.
        for i in 0..nx {
            let vo = prow[i];
            let mut vn = orow[i];
            if vn > 0.0 && vn < VALUE_FLOOR {
                vn = 0.0;
                orow[i] = 0.0;
            }
            if !(vn <= max_new) {
                max_new = vn;
            }
            if !(vn >= min_new) {
                min_new = vn;
            }
            if vn >= level && vo < level && arow[i].is_infinite() {
                arow[i] = t_abs + dt * (level - vo) / (vn - vo);
            }
        }
    }
    ScanOut { max_new, min_new }
}

fn dispatch_stage(
    prep: &mut PreparedVelocity,
    dense: Option<(&[f64], &[f64])>,
    u: &[f64],
    out: &mut [f64],
    nx: usize,
    ny: usize,
    inv_h: f64,
    dt: f64,
    t: f64,
) {
    if let Some((vx, vy)) = dense {
        apply_stage(u, out, nx, ny, inv_h, dt, DenseVel { vx, vy });
        return;
    }
    match prep.stage(t) {
        StageVelocity::Zero => apply_stage(u, out, nx, ny, inv_h, dt, UniformVel(0.0, 0.0)),
        StageVelocity::Uniform(v) => apply_stage(u, out, nx, ny, inv_h, dt, UniformVel(v[0], v[1])),
        StageVelocity::Pattern { factor, px, py } => {
            apply_stage(u, out, nx, ny, inv_h, dt, PatternVel { f: factor, px, py })
        }
        StageVelocity::Dense { vx, vy } => apply_stage(u, out, nx, ny, inv_h, dt, DenseVel { vx, vy }),
    }
}

#[allow(clippy::too_many_arguments)]
fn dispatch_final(
    prep: &mut PreparedVelocity,
    dense: Option<(&[f64], &[f64])>,
    u_prev: &[f64],
    src: &[f64],
    out: &mut [f64],
    arrival: &mut [f64],
    nx: usize,
    ny: usize,
    inv_h: f64,
    dt: f64,
    t_stage: f64,
    prev_w: f64,
    level: f64,
    t_abs: f64,
) -> ScanOut {
    if let Some((vx, vy)) = dense {
        return final_stage_scanned(
            u_prev, src, out, arrival, nx, ny, inv_h, dt, DenseVel { vx, vy }, prev_w, level, t_abs,
        );
    }
    match prep.stage(t_stage) {
        StageVelocity::Zero => final_stage_scanned(
            u_prev, src, out, arrival, nx, ny, inv_h, dt, UniformVel(0.0, 0.0), prev_w, level, t_abs,
        ),
        StageVelocity::Uniform(v) => final_stage_scanned(
            u_prev, src, out, arrival, nx, ny, inv_h, dt, UniformVel(v[0], v[1]), prev_w, level, t_abs,
        ),
        StageVelocity::Pattern { factor, px, py } => final_stage_scanned(
            u_prev,
            src,
            out,
            arrival,
            nx,
            ny,
            inv_h,
            dt,
            PatternVel { f: factor, px, py },
            prev_w,
            level,
            t_abs,
        ),
        StageVelocity::Dense { vx, vy } => final_stage_scanned(
            u_prev, src, out, arrival, nx, ny, inv_h, dt, DenseVel { vx, vy }, prev_w, level, t_abs,
        ),
    }
}

struct StepScratch {
    ua: Vec<f64>,
    ub: Vec<f64>,
    dense_vx: Option<Vec<f64>>,
    dense_vy: Option<Vec<f64>>,
}

/// Time-step the G-equation for `f` from `init`, recording snapshots and the
/// arrival-time field.
pub fn evolve(
    f: &VelocityField,
    init: &InitialData,
    cfg: &SolveConfig,
    grid: &Grid,
) -> Result<ScalarFieldSeries, SolveError> {
    if !(cfg.cfl > 0.0 && cfg.cfl <= 1.0) {
        return Err(SolveError::BadConfig(format!("cfl {} outside (0, 1]", cfg.cfl)));
    }
    if !(cfg.reach_level > 0.0 && cfg.reach_level < 1.0) {
        return Err(SolveError::BadConfig(format!("reach_level {} outside (0, 1)", cfg.reach_level)));
    }
    if cfg.t_final <= 0.0 {
        return Err(SolveError::BadConfig("t_final must be positive".into()));
    }
    let center = init.center();
    if !grid.contains(center) {
        return Err(SolveError::GridTooSmall("initial center outside the grid".into()));
    }

    let big_m = f.big_m();
    let mut dt_nominal = cfg.cfl * grid.h / (big_m + 1.0);
    if cfg.sharper_dt {
        dt_nominal = dt_nominal.max(0.95 * grid.h / (std::f64::consts::SQRT_2 * big_m));
    }

    // If the grid provably contains the whole journey, the boundary can never
    // see the front; otherwise it must be watched (or explicitly waived).
    let margin = 4.0 * grid.h;
    let statically_contained = {
        let r = big_m * cfg.t_final + margin;
        center[0] - r >= grid.origin[0]
            && center[0] + r <= grid.x_max()
            && center[1] - r >= grid.origin[1]
            && center[1] + r <= grid.y_max()
    };
    let monitor_boundary = !statically_contained && cfg.boundary == BoundaryPolicy::Refuse;

    let mut u = init.discretize(grid)?;
    let n = grid.n_nodes();
    let (max_init, min_init) = u
        .iter()
        .fold((f64::NEG_INFINITY, f64::INFINITY), |(mx, mn), &v| (mx.max(v), mn.min(v)));

    let mut arrival = vec![f64::INFINITY; n];
    for i in 0..n {
        if u[i] >= cfg.reach_level {
            arrival[i] = cfg.t_start;
        }
    }

    let mut prep = PreparedVelocity::new(f, *grid);
    let single = prep.is_single_part();
    let mut scratch = StepScratch {
        ua: vec![0.0; n],
        ub: if cfg.integrator == TimeIntegrator::TvdRk2 { vec![0.0; n] } else { Vec::new() },
        dense_vx: if single { None } else { Some(vec![0.0; n]) },
        dense_vy: if single { None } else { Some(vec![0.0; n]) },
    };

    let mut snapshot_times: Vec<f64> = cfg
        .snapshot_times
        .iter()
        .copied()
        .filter(|&t| t > 0.0 && t <= cfg.t_final + 1e-12)
        .collect();
    snapshot_times.sort_by(|a, b| a.partial_cmp(b).unwrap());
    snapshot_times.dedup();
    let mut snapshots: Vec<ScalarField> = Vec::with_capacity(snapshot_times.len());
    let mut next_snap = 0usize;
    // Capture t = 0 snapshots (if requested exactly at 0, skip: filtered).

    let inv_h = 1.0 / grid.h;
    let nx = grid.nx;
    let ny = grid.ny;
    let mut t_rel = 0.0f64; // time since t_start
    let mut step: u64 = 0;
    let eps_t = 1e-12 * cfg.t_final.max(1.0);

    // Early-stop bookkeeping: the cell corners needed per target.
    let stop_cells: Vec<[usize; 4]> = cfg
        .early_stop
        .iter()
        .filter_map(|p| {
            grid.locate(*p).ok().map(|(i, j, _, _)| {
                [grid.idx(i, j), grid.idx(i + 1, j), grid.idx(i, j + 1), grid.idx(i + 1, j + 1)]
            })
        })
        .collect();

    while t_rel < cfg.t_final - eps_t {
        let mut dt = dt_nominal.min(cfg.t_final - t_rel);
        let mut hit_snapshot = false;
        if next_snap < snapshot_times.len() {
            let ts = snapshot_times[next_snap];
            if t_rel + dt >= ts - eps_t {
                dt = ts - t_rel;
                hit_snapshot = true;
            }
        }
        let t_abs = cfg.t_start + t_rel;

        let dense0 = if single {
            None
        } else {
            let (vx, vy) = (scratch.dense_vx.as_mut().unwrap(), scratch.dense_vy.as_mut().unwrap());
            prep.materialize(t_abs, vx, vy);
            Some(())
        };

        let level = cfg.reach_level;
        let t_next_abs = t_abs + dt;
        let scan = match cfg.integrator {
            TimeIntegrator::Euler => {
                let dense = dense0
                    .map(|_| (scratch.dense_vx.as_deref().unwrap(), scratch.dense_vy.as_deref().unwrap()));
                dispatch_final(
                    &mut prep, dense, &u, &u, &mut scratch.ua, &mut arrival, nx, ny, inv_h, dt,
                    t_abs, 0.0, level, t_abs,
                )
            }
            TimeIntegrator::TvdRk2 => {
                {
                    let dense = dense0
                        .map(|_| (scratch.dense_vx.as_deref().unwrap(), scratch.dense_vy.as_deref().unwrap()));
                    dispatch_stage(&mut prep, dense, &u, &mut scratch.ub, nx, ny, inv_h, dt, t_abs);
                }
                if !single {
                    let (vx, vy) =
                        (scratch.dense_vx.as_mut().unwrap(), scratch.dense_vy.as_mut().unwrap());
                    prep.materialize(t_abs + dt, vx, vy);
                }
                let dense = dense0
                    .map(|_| (scratch.dense_vx.as_deref().unwrap(), scratch.dense_vy.as_deref().unwrap()));
                dispatch_final(
                    &mut prep, dense, &u, &scratch.ub, &mut scratch.ua, &mut arrival, nx, ny, inv_h,
                    dt, t_abs + dt, 0.5, level, t_abs,
                )
            }
        };
        if !(scan.max_new.is_finite() && scan.min_new.is_finite()) {
            return Err(SolveError::NonFinite(t_next_abs));
        }
        let drift = (scan.max_new - max_init).max(min_init - scan.min_new);
        if drift > 1e-12 {
            return Err(SolveError::Unstable { t: t_next_abs, drift });
        }
        let max_new = scan.max_new;

        std::mem::swap(&mut u, &mut scratch.ua);
        t_rel += dt;
        if hit_snapshot {
            t_rel = snapshot_times[next_snap];
        }
        step += 1;

        if monitor_boundary && step % 4 == 0 && boundary_active(&u, nx, ny, 4) {
            return Err(SolveError::FrontHitBoundary(cfg.t_start + t_rel));
        }

        if hit_snapshot {
            snapshots.push(ScalarField {
                grid: *grid,
                values: u.clone(),
                time_stamp: cfg.t_start + t_rel,
            });
            next_snap += 1;
        }

        if !stop_cells.is_empty()
            && stop_cells.iter().all(|c| c.iter().all(|&idx| arrival[idx].is_finite()))
        {
            log::debug!("early stop at t = {:.6} after {} steps", t_rel, step);
            break;
        }

        if step % 256 == 0 {
            log::debug!(
                "step {:>7}  t = {:>10.5}  max|u| drift = {:+.3e}",
                step,
                t_rel,
                max_new - max_init
            );
        }
    }

    Ok(ScalarFieldSeries {
        snapshots,
        arrival_time: ScalarField { grid: *grid, values: arrival, time_stamp: cfg.t_start + t_rel },
        reach_level: cfg.reach_level,
        big_m,
    })
}

/// True if any node within `ring` cells of the boundary shows front activity.
fn boundary_active(u: &[f64], nx: usize, ny: usize, ring: usize) -> bool {
    const FRONT_EPS: f64 = 1e-3;
    let ring = ring.min(nx / 2).min(ny / 2);
    for j in 0..ny {
        if j < ring || j >= ny - ring {
            let base = j * nx;
            if u[base..base + nx].iter().any(|&v| v >= FRONT_EPS) {
                return true;
            }
        } else {
            let base = j * nx;
            for i in (0..ring).chain(nx - ring..nx) {
                if u[base + i] >= FRONT_EPS {
                    return true;
                }
            }
        }
    }
    false
}

/// Solve the oscillatory problem at scale `eps`: same numerics with the field
/// `(t, x) -> f(t/eps, x/eps)` and macroscopic initial data.
pub fn solve_scaled(
    f: &VelocityField,
    eps: f64,
    init_macro: &InitialData,
    cfg: &SolveConfig,
    grid: &Grid,
) -> Result<ScalarFieldSeries, SolveError> {
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(SolveError::BadConfig(format!("eps {eps} outside (0, 1]")));
    }
    let scaled = crate::flow::scaled(f, eps);
    evolve(&scaled, init_macro, cfg, grid)
}

/// Integrate admissible paths  gamma' = V_t(gamma) + c(t),  |c| = 1, with
/// piecewise-constant random (bang-bang) controls, RK4 with step <= max_step.
/// Endpoints are reachable up to ODE tolerance: a certified inner sample of
/// the reachable set.
pub fn sample_admissible_paths(
    f: &VelocityField,
    start: [f64; 2],
    t_final: f64,
    n_paths: usize,
    rng_seed: u64,
    max_step: f64,
) -> Vec<[f64; 2]> {
    use rand::Rng;
    use rand::SeedableRng;
    assert!(n_paths >= 1 && t_final > 0.0 && max_step > 0.0);
    let mut endpoints = Vec::with_capacity(n_paths);
    for p in 0..n_paths {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(rng_seed ^ (p as u64).wrapping_mul(0x9e3779b97f4a7c15));
        let n_seg = rng.gen_range(1..=4usize);
        let mut switch: Vec<f64> = (0..n_seg - 1).map(|_| rng.gen_range(0.0..t_final)).collect();
        switch.sort_by(|a, b| a.partial_cmp(b).unwrap());
        switch.push(t_final);
        let mut x = start;
        let mut t = 0.0;
        for &t_end in &switch {
            let theta: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            let c = [theta.cos(), theta.sin()];
            while t < t_end - 1e-15 {
                let dt = max_step.min(t_end - t);
                x = rk4_step(f, t, x, c, dt);
                t += dt;
            }
            t = t_end;
        }
        endpoints.push(x);
    }
    endpoints
}

fn rk4_step(f: &VelocityField, t: f64, x: [f64; 2], c: [f64; 2], dt: f64) -> [f64; 2] {
    let deriv = |t: f64, p: [f64; 2]| {
        let v = f.evaluate(t, p);
        [v[0] + c[0], v[1] + c[1]]
    };
    let k1 = deriv(t, x);
    let k2 = deriv(t + 0.5 * dt, [x[0] + 0.5 * dt * k1[0], x[1] + 0.5 * dt * k1[1]]);
    let k3 = deriv(t + 0.5 * dt, [x[0] + 0.5 * dt * k2[0], x[1] + 0.5 * dt * k2[1]]);
    let k4 = deriv(t + dt, [x[0] + dt * k3[0], x[1] + dt * k3[1]]);
    [
        x[0] + dt / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
        x[1] + dt / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
    ]
}

/// Closed-form first arrival at offset `v` under constant drift `c` with unit
/// control: the positive root of `|v - t c| = t`.
pub fn constant_drift_arrival(v: [f64; 2], c: [f64; 2]) -> f64 {
    let c2 = c[0] * c[0] + c[1] * c[1];
    assert!(c2 < 1.0, "drift must be subcritical");
    let vd = v[0] * c[0] + v[1] * c[1];
    let v2 = v[0] * v[0] + v[1] * v[1];
    (-vd + (vd * vd + (1.0 - c2) * v2).sqrt()) / (1.0 - c2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::{make_cellular, TimeModulation};

    #[test]
    #[ignore]
    fn stage_and_scan_timing() {
        let f = crate::flow::make_default_bernoulli(0.05, 7);
        let grid = Grid::new(2432, 384, 1.0 / 128.0, [-1.5, -1.5]).unwrap();
        let n = grid.n_nodes();
        let mut prep = PreparedVelocity::new(&f, grid);
        let u: Vec<f64> = (0..n).map(|i| ((i % 97) as f64) / 97.0).collect();
        let mut out = vec![0.0; n];
        let reps = 60;
        let t0 = std::time::Instant::now();
        for r in 0..reps {
            match prep.stage(0.4 + r as f64 * 1e-9) {
                StageVelocity::Pattern { factor, px, py } => {
                    apply_stage(&u, &mut out, grid.nx, grid.ny, 128.0, 1e-4, PatternVel { f: factor, px, py })
                }
                _ => unreachable!(),
            }
        }
        let el = t0.elapsed().as_secs_f64();
        eprintln!("apply_stage: {:.3e} nodes/s", (reps * n) as f64 / el);

        let mut arrival = vec![f64::INFINITY; n];
        let t0 = std::time::Instant::now();
        for _ in 0..reps {
            let mut max_new = f64::NEG_INFINITY;
            let mut min_new = f64::INFINITY;
            for i in 0..n {
                let vo = u[i];
                let vn = out[i];
                if !(vn <= max_new) {
                    max_new = vn;
                }
                if !(vn >= min_new) {
                    min_new = vn;
                }
                if vn >= 0.5 && vo < 0.5 && arrival[i].is_infinite() {
                    arrival[i] = vn;
                }
            }
            std::hint::black_box((max_new, min_new));
        }
        let el = t0.elapsed().as_secs_f64();
        eprintln!("arrival/minmax scan: {:.3e} nodes/s", (reps * n) as f64 / el);
    }

    fn point_cfg(t_final: f64, snaps: Vec<f64>) -> SolveConfig {
        SolveConfig { t_final, snapshot_times: snaps, ..SolveConfig::default() }
    }

    /// Radius of the numeric set {arrival <= t} along a ray, by bisection on
    /// the interpolated arrival field.
    fn set_radius(series: &ScalarFieldSeries, dir: [f64; 2], t: f64) -> f64 {
        let mut lo = 0.0;
        let mut hi = 3.0;
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            let p = [mid * dir[0], mid * dir[1]];
            let a = series.arrival_time.interpolate(p).unwrap_or(f64::INFINITY);
            if a <= t {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn zero_flow_ball_radius() {
        // V = 0, signed profile r0 = 0.25: the set at time t is the ball of
        // radius 0.25 + t within 2h.
        let grid = Grid::centered_square([0.0, 0.0], 1.75, 225).unwrap();
        let h = grid.h;
        let init = InitialData::SignedProfile { radius: 0.25, center: [0.0, 0.0] };
        let series = evolve(&VelocityField::Zero, &init, &point_cfg(1.0, vec![0.5, 1.0]), &grid).unwrap();
        for dir in [[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.7071067811865476, 0.7071067811865476]] {
            for t in [0.5, 1.0] {
                let r = set_radius(&series, dir, t);
                assert!((r - (0.25 + t)).abs() < 2.0 * h, "dir {dir:?} t {t}: r = {r}");
            }
        }
    }

    #[test]
    fn constant_drift_arrival_matches_closed_form() {
        let c = [0.5, 0.0];
        let f = VelocityField::Constant { c };
        let grid = Grid::centered_square([0.0, 0.0], 3.5, 449).unwrap();
        let h = grid.h;
        let init = InitialData::ExpCone { eps: 2.0 * h, center: [0.0, 0.0] };
        let series = evolve(&f, &init, &point_cfg(2.2, vec![]), &grid).unwrap();
        for v in [[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [-0.5, 0.5]] {
            let expect = constant_drift_arrival(v, c);
            let got = series.arrival_time.interpolate(v).unwrap();
            let rel = (got - expect).abs() / expect;
            assert!(rel < 0.03, "v {v:?}: got {got}, expect {expect}, rel {rel}");
        }
    }

    #[test]
    fn eps_cone_ordering_preserved() {
        // u^eps1 <= u^eps2 pointwise for eps1 < eps2 (ordered data stays
        // ordered under the monotone scheme), at every node and snapshot.
        let f = make_cellular(0.1, 0.5, TimeModulation::Sinusoidal { freq: 1.0 }).unwrap();
        let grid = Grid::centered_square([0.0, 0.0], 1.5, 129).unwrap();
        let h = grid.h;
        let cfg = point_cfg(0.4, vec![0.2, 0.4]);
        let s1 = evolve(&f, &InitialData::ExpCone { eps: 2.0 * h, center: [0.0, 0.0] }, &cfg, &grid).unwrap();
        let s2 = evolve(&f, &InitialData::ExpCone { eps: 4.0 * h, center: [0.0, 0.0] }, &cfg, &grid).unwrap();
        for (a, b) in s1.snapshots.iter().zip(&s2.snapshots) {
            for i in 0..a.values.len() {
                assert!(a.values[i] <= b.values[i] + 1e-12);
            }
        }
    }

    #[test]
    fn scaled_with_unit_eps_is_identity() {
        let f = make_cellular(0.1, 1.0, TimeModulation::Steady).unwrap();
        let grid = Grid::centered_square([0.0, 0.0], 1.2, 97).unwrap();
        let init = InitialData::SignedProfile { radius: 0.2, center: [0.0, 0.0] };
        let cfg = point_cfg(0.25, vec![0.25]);
        let a = evolve(&f, &init, &cfg, &grid).unwrap();
        let b = solve_scaled(&f, 1.0, &init, &cfg, &grid).unwrap();
        assert_eq!(a.snapshots[0].values, b.snapshots[0].values);
    }

    #[test]
    fn zero_flow_scale_invariant() {
        let grid = Grid::centered_square([0.0, 0.0], 1.2, 97).unwrap();
        let init = InitialData::SignedProfile { radius: 0.2, center: [0.0, 0.0] };
        let cfg = point_cfg(0.25, vec![0.25]);
        let a = evolve(&VelocityField::Zero, &init, &cfg, &grid).unwrap();
        let b = solve_scaled(&VelocityField::Zero, 0.25, &init, &cfg, &grid).unwrap();
        assert_eq!(a.snapshots[0].values, b.snapshots[0].values);
    }

    #[test]
    fn refuses_undersized_grid() {
        // Front reaches the boundary well before t_final: the strict policy
        // must abort instead of silently clipping.
        let grid = Grid::centered_square([0.0, 0.0], 0.5, 65).unwrap();
        let init = InitialData::SignedProfile { radius: 0.2, center: [0.0, 0.0] };
        let r = evolve(&VelocityField::Zero, &init, &point_cfg(2.0, vec![]), &grid);
        assert!(matches!(r, Err(SolveError::FrontHitBoundary(_))), "{r:?}");
    }

    #[test]
    fn no_overshoot_and_finite_over_long_run() {
        let f = make_cellular(2.0, 1.0, TimeModulation::Sinusoidal { freq: 1.0 }).unwrap();
        let grid = Grid::centered_square([0.0, 0.0], 4.0, 257).unwrap();
        let h = grid.h;
        let mut cfg = point_cfg(10.0, vec![]);
        cfg.boundary = BoundaryPolicy::AllowTruncation; // stress the boundary on purpose
        let init = InitialData::ExpCone { eps: 2.0 * h, center: [0.0, 0.0] };
        // evolve() errors out on NaN or max-norm drift; 1000+ steps succeed.
        let series = evolve(&f, &init, &cfg, &grid).unwrap();
        assert!(series.arrival_time.values.iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn straight_line_path_with_unit_control() {
        // V = 0 and a single control segment: gamma(t) = start + t * c.
        let pts = sample_admissible_paths(&VelocityField::Zero, [0.3, -0.2], 1.0, 64, 9, 1e-3);
        for p in &pts {
            let d = ((p[0] - 0.3).powi(2) + (p[1] + 0.2).powi(2)).sqrt();
            assert!(d <= 1.0 + 1e-6, "endpoint {p:?} escaped the unit ball");
        }
    }

    #[test]
    fn paths_stay_in_speed_ball() {
        let f = make_cellular(2.0, 1.0, TimeModulation::Sinusoidal { freq: 1.0 }).unwrap();
        let m = f.big_m();
        let pts = sample_admissible_paths(&f, [0.0, 0.0], 1.0, 128, 3, 5e-4);
        for p in &pts {
            let d = (p[0] * p[0] + p[1] * p[1]).sqrt();
            assert!(d <= m * 1.0 + 1e-6, "endpoint {p:?} outside B_Mt");
        }
    }

    #[test]
    fn arrival_monotone_under_longer_horizon() {
        // More time never un-reaches a node.
        let f = make_cellular(0.1, 0.5, TimeModulation::Steady).unwrap();
        let grid = Grid::centered_square([0.0, 0.0], 2.0, 129).unwrap();
        let h = grid.h;
        let init = InitialData::ExpCone { eps: 2.0 * h, center: [0.0, 0.0] };
        let s1 = evolve(&f, &init, &point_cfg(0.3, vec![]), &grid).unwrap();
        let s2 = evolve(&f, &init, &point_cfg(0.6, vec![]), &grid).unwrap();
        // The short run clips its final step to land on t_final, so crossings
        // in that window may interpolate within a different step; agreement is
        // up to one nominal step.
        let dt = 0.5 * grid.h / (f.big_m() + 1.0);
        for (a, b) in s1.arrival_time.values.iter().zip(&s2.arrival_time.values) {
            if a.is_finite() {
                assert!(b.is_finite() && (b - a).abs() <= 2.0 * dt, "a {a} b {b}");
            }
        }
    }
}
