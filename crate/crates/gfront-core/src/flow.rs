//! Time-dependent incompressible velocity fields.
//!
//! All shipped fields are built from stream functions, so they are
//! divergence-free by construction. A field is a pure function of `(t, x)`;
//! wrappers (reversal, space-time scaling, frame rotation, sums) compose
//! without breaking that.

use crate::grid::Grid;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FlowError {
    #[error("bernoulli block support ({0}, {1}) must lie strictly inside the unit cell")]
    SupportLeak(f64, f64),
    #[error("negative amplitude scale parameter: {0}")]
    BadParameter(f64),
}

/// Tag identifying the construction of a field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FlowKind {
    Zero,
    Constant,
    Cellular,
    Shear,
    BernoulliTiling,
    Composite,
}

/// Time modulation `m(t)` applied to stream-function fields;
/// `Sinusoidal { freq }` is `m(t) = cos(2 pi freq t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum TimeModulation {
    Steady,
    Sinusoidal { freq: f64 },
}

impl TimeModulation {
    #[inline]
    pub fn at(&self, t: f64) -> f64 {
        match self {
            TimeModulation::Steady => 1.0,
            TimeModulation::Sinusoidal { freq } => (2.0 * PI * freq * t).cos(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        1.0
    }
}

/// One incompressible building block for the Bernoulli tiling, given as the
/// stream function `psi = amplitude * b(t) b(x) b(y)` with `b` a C^3 bump
/// supported strictly inside `(support.0, support.1) ⊂ (0, 1)`.
///
/// Compact support plus incompressibility forces zero spatial mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlockSpec {
    pub amplitude: f64,
    pub support: (f64, f64),
}

impl BlockSpec {
    pub fn new(amplitude: f64, support: (f64, f64)) -> Result<Self, FlowError> {
        let (lo, hi) = support;
        if !(lo > 0.0 && hi < 1.0 && lo < hi) {
            // A block leaking outside the unit cell would break
            // incompressibility at cell seams.
            return Err(FlowError::SupportLeak(lo, hi));
        }
        Ok(BlockSpec { amplitude, support })
    }

    /// Default block: amplitude `a`, bump supported in (0.1, 0.9).
    pub fn with_amplitude(a: f64) -> Self {
        BlockSpec { amplitude: a, support: (0.1, 0.9) }
    }

    /// `b(s) = sin^4(pi (s-lo)/w)` inside the support, 0 outside. C^3 at the
    /// seams, which keeps central-difference divergence at O(h^2) there.
    #[inline]
    pub fn bump(&self, s: f64) -> f64 {
        let (lo, hi) = self.support;
        let xi = (s - lo) / (hi - lo);
        if xi <= 0.0 || xi >= 1.0 {
            0.0
        } else {
            let v = (PI * xi).sin();
            v * v * v * v
        }
    }

    #[inline]
    pub fn bump_deriv(&self, s: f64) -> f64 {
        let (lo, hi) = self.support;
        let w = hi - lo;
        let xi = (s - lo) / w;
        if xi <= 0.0 || xi >= 1.0 {
            0.0
        } else {
            let (sn, cs) = (PI * xi).sin_cos();
            (4.0 * PI / w) * sn * sn * sn * cs
        }
    }

    /// Analytic speed bound: `max b = 1` and
    /// `max |b'| = (4 pi / w) max(sin^3 cos) = 3 sqrt(3) pi / (4 w)`, so
    /// `sup |V| = |amplitude| * 3 sqrt(3) pi / (4 w)`.
    pub fn speed_bound(&self) -> f64 {
        let (lo, hi) = self.support;
        self.amplitude.abs() * 3.0 * 3.0f64.sqrt() * PI / (4.0 * (hi - lo))
    }
}

/// Random field tiling space-time by unit cells, each carrying block `v1` or
/// `v2` selected by an i.i.d. fair coin. Evaluation is a pure function of
/// `(seed, cell)`: the coin of cell `(jx, jy, k)` is a stateless hash of the
/// seed and the cell index, which behaves exactly like an eagerly filled
/// coin table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BernoulliTilingFlow {
    pub v1: BlockSpec,
    pub v2: BlockSpec,
    pub seed: u64,
}

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

impl BernoulliTilingFlow {
    /// Fair coin of space-time cell `(jx, jy, k)`.
    #[inline]
    pub fn coin(&self, jx: i64, jy: i64, k: i64) -> bool {
        let h1 = mix64(k as u64 ^ 0x9e3779b97f4a7c15);
        let h2 = mix64(jy as u64 ^ h1 ^ 0xd1b54a32d192ed03);
        let h3 = mix64(jx as u64 ^ h2 ^ 0x8cb92ba72f3d8dd7);
        mix64(self.seed ^ h3) & 1 == 1
    }

    #[inline]
    pub fn block(&self, jx: i64, jy: i64, k: i64) -> &BlockSpec {
        if self.coin(jx, jy, k) {
            &self.v1
        } else {
            &self.v2
        }
    }

    #[inline]
    pub fn evaluate(&self, t: f64, x: f64, y: f64) -> [f64; 2] {
        let k = t.floor();
        let jx = x.floor();
        let jy = y.floor();
        let block = self.block(jx as i64, jy as i64, k as i64);
        let bt = block.bump(t - k);
        if bt == 0.0 {
            return [0.0, 0.0];
        }
        let fx = x - jx;
        let fy = y - jy;
        let a = block.amplitude * bt;
        [a * block.bump(fx) * block.bump_deriv(fy), -a * block.bump_deriv(fx) * block.bump(fy)]
    }

    pub fn speed_bound(&self) -> f64 {
        self.v1.speed_bound().max(self.v2.speed_bound())
    }
}

/// Evaluable time-dependent velocity field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum VelocityField {
    Zero,
    Constant { c: [f64; 2] },
    /// Stream function `psi = A sin(2 pi x/P) sin(2 pi y/P) m(t)`,
    /// velocity `(d psi/dy, -d psi/dx)`.
    Cellular { amplitude: f64, period: f64, modulation: TimeModulation },
    /// Stream function `psi = -(A P / 2 pi) cos(2 pi y/P) m(t)`, so
    /// `V = (A sin(2 pi y/P) m(t), 0)`.
    Shear { amplitude: f64, period: f64, modulation: TimeModulation },
    BernoulliTiling(BernoulliTilingFlow),
    Composite(Vec<VelocityField>),
    /// Time reversal anchored at `t_end`: `V'(t, x) = -V(t_end - t, x)`.
    Reversed { inner: Box<VelocityField>, t_end: f64 },
    /// Oscillatory rescaling `V'(t, x) = V(t/eps, x/eps)`.
    Scaled { inner: Box<VelocityField>, eps: f64 },
    /// Rotated frame: `V'(t, x) = R^T V(t, R x)` with `R` the rotation taking
    /// the frame x-axis to direction `(cos_a, sin_a)`.
    Rotated { inner: Box<VelocityField>, cos_a: f64, sin_a: f64 },
    /// Shifted origin: `V'(t, x) = V(t, x + dx)`.
    Shifted { inner: Box<VelocityField>, dx: [f64; 2] },
}

/// Cellular test flow. Amplitude 0 yields the zero field.
pub fn make_cellular(
    amplitude: f64,
    spatial_period: f64,
    modulation: TimeModulation,
) -> Result<VelocityField, FlowError> {
    if amplitude < 0.0 || spatial_period <= 0.0 {
        return Err(FlowError::BadParameter(amplitude.min(spatial_period)));
    }
    Ok(VelocityField::Cellular { amplitude, period: spatial_period, modulation })
}

pub fn make_shear(
    amplitude: f64,
    spatial_period: f64,
    modulation: TimeModulation,
) -> Result<VelocityField, FlowError> {
    if amplitude < 0.0 || spatial_period <= 0.0 {
        return Err(FlowError::BadParameter(amplitude.min(spatial_period)));
    }
    Ok(VelocityField::Shear { amplitude, period: spatial_period, modulation })
}

pub fn make_bernoulli_tiling(
    v1: BlockSpec,
    v2: BlockSpec,
    seed: u64,
) -> Result<VelocityField, FlowError> {
    // Re-validate supports: BlockSpec values built directly are checked here.
    BlockSpec::new(1.0, v1.support)?;
    BlockSpec::new(1.0, v2.support)?;
    Ok(VelocityField::BernoulliTiling(BernoulliTilingFlow { v1, v2, seed }))
}

/// Default random flow: `v2 = -v1`, bump amplitude `a`.
pub fn make_default_bernoulli(a: f64, seed: u64) -> VelocityField {
    VelocityField::BernoulliTiling(BernoulliTilingFlow {
        v1: BlockSpec::with_amplitude(a),
        v2: BlockSpec::with_amplitude(-a),
        seed,
    })
}

/// Reversed flow `V'(t, x) = -V(t2 - t, x)`. Reversing twice at the same
/// anchor returns the original field.
pub fn reverse(f: &VelocityField, t2: f64) -> VelocityField {
    match f {
        VelocityField::Zero => VelocityField::Zero,
        VelocityField::Reversed { inner, t_end } if *t_end == t2 => (**inner).clone(),
        other => VelocityField::Reversed { inner: Box::new(other.clone()), t_end: t2 },
    }
}

/// Oscillatory field `V(t/eps, x/eps)` for the scaled problem.
pub fn scaled(f: &VelocityField, eps: f64) -> VelocityField {
    if eps == 1.0 {
        f.clone()
    } else {
        VelocityField::Scaled { inner: Box::new(f.clone()), eps }
    }
}

/// Field seen from a frame whose x-axis points along the unit vector `e`.
pub fn rotated_to(f: &VelocityField, e: [f64; 2]) -> VelocityField {
    if e == [1.0, 0.0] {
        f.clone()
    } else {
        VelocityField::Rotated { inner: Box::new(f.clone()), cos_a: e[0], sin_a: e[1] }
    }
}

/// Field with its origin moved to `dx`: `V'(t, x) = V(t, x + dx)`.
pub fn shifted(f: &VelocityField, dx: [f64; 2]) -> VelocityField {
    if dx == [0.0, 0.0] {
        f.clone()
    } else {
        VelocityField::Shifted { inner: Box::new(f.clone()), dx }
    }
}

impl VelocityField {
    pub fn kind(&self) -> FlowKind {
        match self {
            VelocityField::Zero => FlowKind::Zero,
            VelocityField::Constant { .. } => FlowKind::Constant,
            VelocityField::Cellular { .. } => FlowKind::Cellular,
            VelocityField::Shear { .. } => FlowKind::Shear,
            VelocityField::BernoulliTiling(_) => FlowKind::BernoulliTiling,
            VelocityField::Composite(_) => FlowKind::Composite,
            VelocityField::Reversed { inner, .. }
            | VelocityField::Scaled { inner, .. }
            | VelocityField::Rotated { inner, .. }
            | VelocityField::Shifted { inner, .. } => inner.kind(),
        }
    }

    pub fn evaluate(&self, t: f64, x: [f64; 2]) -> [f64; 2] {
        match self {
            VelocityField::Zero => [0.0, 0.0],
            VelocityField::Constant { c } => *c,
            VelocityField::Cellular { amplitude, period, modulation } => {
                let k = 2.0 * PI / period;
                let m = amplitude * k * modulation.at(t);
                let (sx, cx) = (k * x[0]).sin_cos();
                let (sy, cy) = (k * x[1]).sin_cos();
                [m * sx * cy, -m * cx * sy]
            }
            VelocityField::Shear { amplitude, period, modulation } => {
                let k = 2.0 * PI / period;
                [amplitude * (k * x[1]).sin() * modulation.at(t), 0.0]
            }
            VelocityField::BernoulliTiling(b) => b.evaluate(t, x[0], x[1]),
            VelocityField::Composite(parts) => {
                let mut v = [0.0, 0.0];
                for p in parts {
                    let w = p.evaluate(t, x);
                    v[0] += w[0];
                    v[1] += w[1];
                }
                v
            }
            VelocityField::Reversed { inner, t_end } => {
                let v = inner.evaluate(t_end - t, x);
                [-v[0], -v[1]]
            }
            VelocityField::Scaled { inner, eps } => {
                inner.evaluate(t / eps, [x[0] / eps, x[1] / eps])
            }
            VelocityField::Rotated { inner, cos_a, sin_a } => {
                let xp = [cos_a * x[0] - sin_a * x[1], sin_a * x[0] + cos_a * x[1]];
                let v = inner.evaluate(t, xp);
                [cos_a * v[0] + sin_a * v[1], -sin_a * v[0] + cos_a * v[1]]
            }
            VelocityField::Shifted { inner, dx } => inner.evaluate(t, [x[0] + dx[0], x[1] + dx[1]]),
        }
    }

    /// Certified upper bound on `|V|` (`M - 1` in the paper convention).
    pub fn speed_bound(&self) -> f64 {
        match self {
            VelocityField::Zero => 0.0,
            VelocityField::Constant { c } => (c[0] * c[0] + c[1] * c[1]).sqrt(),
            // |V|^2 = (A k m)^2 (sin^2 cos^2 + cos^2 sin^2) <= (A k)^2 since
            // a(1-b) + (1-a)b <= 1 for a, b in [0, 1].
            VelocityField::Cellular { amplitude, period, modulation } => {
                amplitude * 2.0 * PI / period * modulation.max_abs()
            }
            VelocityField::Shear { amplitude, modulation, .. } => {
                amplitude * modulation.max_abs()
            }
            VelocityField::BernoulliTiling(b) => b.speed_bound(),
            VelocityField::Composite(parts) => parts.iter().map(|p| p.speed_bound()).sum(),
            VelocityField::Reversed { inner, .. }
            | VelocityField::Scaled { inner, .. }
            | VelocityField::Rotated { inner, .. }
            | VelocityField::Shifted { inner, .. } => inner.speed_bound(),
        }
    }

    /// `M = 1 + sup |V|`.
    pub fn big_m(&self) -> f64 {
        1.0 + self.speed_bound()
    }

    /// Recorded upper bound on the spatial Lipschitz constant.
    pub fn lipschitz_bound(&self) -> f64 {
        match self {
            VelocityField::Zero | VelocityField::Constant { .. } => 0.0,
            VelocityField::Cellular { amplitude, period, .. } => {
                let k = 2.0 * PI / period;
                2.0 * amplitude * k * k
            }
            VelocityField::Shear { amplitude, period, .. } => {
                amplitude * 2.0 * PI / period
            }
            VelocityField::BernoulliTiling(b) => {
                let w1 = b.v1.support.1 - b.v1.support.0;
                let w2 = b.v2.support.1 - b.v2.support.0;
                let a = b.v1.amplitude.abs().max(b.v2.amplitude.abs());
                let w = w1.min(w2);
                // |grad V| entries <= a * max(b |b''|, b'^2) <= 4 a pi^2 / w^2,
                // doubled for the operator norm.
                8.0 * a * PI * PI / (w * w)
            }
            VelocityField::Composite(parts) => parts.iter().map(|p| p.lipschitz_bound()).sum(),
            VelocityField::Reversed { inner, .. }
            | VelocityField::Rotated { inner, .. }
            | VelocityField::Shifted { inner, .. } => inner.lipschitz_bound(),
            VelocityField::Scaled { inner, eps } => inner.lipschitz_bound() / eps,
        }
    }
}

/// Serializable flow family: a seeded constructor realizing one random field
/// per seed (deterministic flows ignore the seed). This is the stationarity
/// action used by the estimators: re-sampling from the seeded constructor
/// rather than shifting one realization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FlowSpec {
    Zero,
    Constant { cx: f64, cy: f64 },
    /// `time_freq = 0` means steady.
    Cellular { amplitude: f64, period: f64, time_freq: f64 },
    Shear { amplitude: f64, period: f64, time_freq: f64 },
    /// Default Bernoulli tiling: blocks `±amplitude`, bump support (0.1, 0.9).
    Bernoulli { amplitude: f64 },
}

impl FlowSpec {
    pub fn realize(&self, seed: u64) -> VelocityField {
        fn modulation(freq: f64) -> TimeModulation {
            if freq == 0.0 {
                TimeModulation::Steady
            } else {
                TimeModulation::Sinusoidal { freq }
            }
        }
        match self {
            FlowSpec::Zero => VelocityField::Zero,
            FlowSpec::Constant { cx, cy } => VelocityField::Constant { c: [*cx, *cy] },
            FlowSpec::Cellular { amplitude, period, time_freq } => VelocityField::Cellular {
                amplitude: *amplitude,
                period: *period,
                modulation: modulation(*time_freq),
            },
            FlowSpec::Shear { amplitude, period, time_freq } => VelocityField::Shear {
                amplitude: *amplitude,
                period: *period,
                modulation: modulation(*time_freq),
            },
            FlowSpec::Bernoulli { amplitude } => make_default_bernoulli(*amplitude, seed),
        }
    }

    /// Range of time dependence: 1 space-time cell for the Bernoulli tiling,
    /// 0 for deterministic flows.
    pub fn dependence_range(&self) -> f64 {
        match self {
            FlowSpec::Bernoulli { .. } => 1.0,
            _ => 0.0,
        }
    }

    pub fn is_random(&self) -> bool {
        matches!(self, FlowSpec::Bernoulli { .. })
    }
}

/// Certified field metadata: `M`, estimated mean-drift infimum and the cube
/// side attaining it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowBounds {
    pub m: f64,
    pub delta_hat: f64,
    pub l0_hat: f64,
}

const DRIFT_QUAD_POINTS: usize = 64;

/// Sampled value of the mean-drift functional at cube side `L`:
/// `sup` over `samples` probe points `(t, x)` of
/// `| L^{-2} \int_{[0,L]^2} V_t(x + y) dy |`, tensor-product midpoint rule
/// with 64 points per axis. Probes are drawn from a fixed internal seed, so
/// the functional is a pure function of `(f, L, samples)`; being a finite
/// sample, it is a lower bound of the true sup.
pub fn estimate_mean_drift(f: &VelocityField, l: f64, samples: usize) -> f64 {
    assert!(l > 0.0 && samples >= 1);
    let mut rng = ChaCha8Rng::seed_from_u64(0x6d65616e64726966);
    let mut sup = 0.0f64;
    let nq = DRIFT_QUAD_POINTS;
    let step = l / nq as f64;
    for _ in 0..samples {
        let t = rng.gen_range(-2.0..6.0);
        let x0 = rng.gen_range(-4.0..4.0);
        let y0 = rng.gen_range(-4.0..4.0);
        let mut sx = 0.0;
        let mut sy = 0.0;
        for iy in 0..nq {
            let y = y0 + (iy as f64 + 0.5) * step;
            for ix in 0..nq {
                let x = x0 + (ix as f64 + 0.5) * step;
                let v = f.evaluate(t, [x, y]);
                sx += v[0];
                sy += v[1];
            }
        }
        let inv = 1.0 / (nq * nq) as f64;
        sup = sup.max(((sx * inv).powi(2) + (sy * inv).powi(2)).sqrt());
    }
    sup
}

/// Populate [`FlowBounds`]: `delta_hat` is the minimum of the sampled drift
/// functional over the tried cube sides.
pub fn estimate_flow_bounds(f: &VelocityField, l_ladder: &[f64], samples: usize) -> FlowBounds {
    let mut best = f64::INFINITY;
    let mut l0 = l_ladder[0];
    for &l in l_ladder {
        let d = estimate_mean_drift(f, l, samples);
        if d < best {
            best = d;
            l0 = l;
        }
    }
    FlowBounds { m: f.big_m(), delta_hat: best, l0_hat: l0 }
}

#[derive(Debug, Clone, Copy)]
pub struct DivergenceReport {
    pub max_abs_div: f64,
    pub at_time: f64,
}

/// Central-difference divergence at all interior nodes and listed times.
pub fn check_divergence_free(f: &VelocityField, grid: &Grid, t_samples: &[f64]) -> DivergenceReport {
    let mut worst = 0.0f64;
    let mut at_time = t_samples.first().copied().unwrap_or(0.0);
    let inv2h = 1.0 / (2.0 * grid.h);
    for &t in t_samples {
        for j in 1..grid.ny - 1 {
            let y = grid.node_y(j);
            for i in 1..grid.nx - 1 {
                let x = grid.node_x(i);
                let vxe = f.evaluate(t, [x + grid.h, y])[0];
                let vxw = f.evaluate(t, [x - grid.h, y])[0];
                let vyn = f.evaluate(t, [x, y + grid.h])[1];
                let vys = f.evaluate(t, [x, y - grid.h])[1];
                let div = ((vxe - vxw) + (vyn - vys)) * inv2h;
                if div.abs() > worst {
                    worst = div.abs();
                    at_time = t;
                }
            }
        }
    }
    DivergenceReport { max_abs_div: worst, at_time }
}

// ---------------------------------------------------------------------------
// Prepared node sampler for the solver.
//
// Every shipped field factors as V(t, x) = m(t) * S(x) on each unit time
// slab, with S static per slab. The sampler caches S on the solve grid and
// hands the kernel a scalar factor plus pattern rows, so velocity costs one
// multiply per node per stage. Wrappers are normalized into an affine time
// map, a 2x2 coordinate map and a 2x2 output map before pattern building.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
struct WrapMaps {
    // t_core = t_scale * t + t_offset
    t_scale: f64,
    t_offset: f64,
    // x_core = A x + b  (row-major 2x2)
    a: [f64; 4],
    b: [f64; 2],
    // V = O v_core
    o: [f64; 4],
}

impl WrapMaps {
    fn identity() -> Self {
        WrapMaps {
            t_scale: 1.0,
            t_offset: 0.0,
            a: [1.0, 0.0, 0.0, 1.0],
            b: [0.0, 0.0],
            o: [1.0, 0.0, 0.0, 1.0],
        }
    }
}

fn mat_mul(a: &[f64; 4], b: &[f64; 4]) -> [f64; 4] {
    [
        a[0] * b[0] + a[1] * b[2],
        a[0] * b[1] + a[1] * b[3],
        a[2] * b[0] + a[3] * b[2],
        a[2] * b[1] + a[3] * b[3],
    ]
}

#[derive(Debug, Clone)]
enum CoreField {
    Uniform([f64; 2]),
    Cellular { amplitude: f64, period: f64, modulation: TimeModulation },
    Shear { amplitude: f64, period: f64, modulation: TimeModulation },
    Bernoulli(BernoulliTilingFlow),
}

#[derive(Debug, Clone)]
struct NormalizedPart {
    core: CoreField,
    maps: WrapMaps,
}

fn normalize_into(f: &VelocityField, maps: WrapMaps, out: &mut Vec<NormalizedPart>) {
    match f {
        VelocityField::Zero => {}
        VelocityField::Constant { c } => {
            let v = [maps.o[0] * c[0] + maps.o[1] * c[1], maps.o[2] * c[0] + maps.o[3] * c[1]];
            out.push(NormalizedPart { core: CoreField::Uniform(v), maps });
        }
        VelocityField::Cellular { amplitude, period, modulation } => out.push(NormalizedPart {
            core: CoreField::Cellular { amplitude: *amplitude, period: *period, modulation: *modulation },
            maps,
        }),
        VelocityField::Shear { amplitude, period, modulation } => out.push(NormalizedPart {
            core: CoreField::Shear { amplitude: *amplitude, period: *period, modulation: *modulation },
            maps,
        }),
        VelocityField::BernoulliTiling(b) => {
            out.push(NormalizedPart { core: CoreField::Bernoulli(b.clone()), maps })
        }
        VelocityField::Composite(parts) => {
            for p in parts {
                normalize_into(p, maps, out);
            }
        }
        VelocityField::Reversed { inner, t_end } => {
            // Contribution of this subtree is O * f(ts*t + to, A x); the
            // reversal turns the inner argument into -ts*t + (t_end - to).
            let m = WrapMaps {
                t_scale: -maps.t_scale,
                t_offset: t_end - maps.t_offset,
                a: maps.a,
                b: maps.b,
                o: [-maps.o[0], -maps.o[1], -maps.o[2], -maps.o[3]],
            };
            normalize_into(inner, m, out);
        }
        VelocityField::Scaled { inner, eps } => {
            let inv = 1.0 / eps;
            let m = WrapMaps {
                t_scale: maps.t_scale * inv,
                t_offset: maps.t_offset * inv,
                a: [maps.a[0] * inv, maps.a[1] * inv, maps.a[2] * inv, maps.a[3] * inv],
                b: [maps.b[0] * inv, maps.b[1] * inv],
                o: maps.o,
            };
            normalize_into(inner, m, out);
        }
        VelocityField::Rotated { inner, cos_a, sin_a } => {
            // x_phys = R x_frame; V_frame = R^T V_phys, so the inner subtree
            // sees coordinates R * (A x) and output O * R^T.
            let r = [*cos_a, -*sin_a, *sin_a, *cos_a];
            let rt = [*cos_a, *sin_a, -*sin_a, *cos_a];
            let m = WrapMaps {
                t_scale: maps.t_scale,
                t_offset: maps.t_offset,
                a: mat_mul(&r, &maps.a),
                b: [
                    r[0] * maps.b[0] + r[1] * maps.b[1],
                    r[2] * maps.b[0] + r[3] * maps.b[1],
                ],
                o: mat_mul(&maps.o, &rt),
            };
            normalize_into(inner, m, out);
        }
        VelocityField::Shifted { inner, dx } => {
            let m = WrapMaps {
                b: [maps.b[0] + dx[0], maps.b[1] + dx[1]],
                ..maps
            };
            normalize_into(inner, m, out);
        }
    }
}

#[derive(Debug)]
enum PartSampler {
    Uniform([f64; 2]),
    /// Static pattern with scalar time factor `cos(w t + phi)` (w = 0 for
    /// steady flows).
    Modulated { px: Vec<f64>, py: Vec<f64>, w: f64, phi: f64 },
    /// Bernoulli tiling: pattern rebuilt when the core time enters a new
    /// unit slab; the scalar factor is the temporal bump value.
    Slab {
        px: Vec<f64>,
        py: Vec<f64>,
        flow: BernoulliTilingFlow,
        maps: WrapMaps,
        grid: Grid,
        slab: Option<i64>,
    },
}

/// Node-velocity sampler bound to one grid, owned by a single solve.
#[derive(Debug)]
pub struct PreparedVelocity {
    parts: Vec<PartSampler>,
    grid: Grid,
}

/// Scalar factor plus pattern rows handed to the kernel for one time stage.
pub enum StageVelocity<'a> {
    Zero,
    Uniform([f64; 2]),
    Pattern { factor: f64, px: &'a [f64], py: &'a [f64] },
    /// Fallback: fully materialized node velocities.
    Dense { vx: &'a [f64], vy: &'a [f64] },
}

fn build_static_pattern(
    grid: &Grid,
    maps: &WrapMaps,
    core_v: impl Fn(f64, f64) -> [f64; 2],
) -> (Vec<f64>, Vec<f64>) {
    let n = grid.n_nodes();
    let mut px = vec![0.0; n];
    let mut py = vec![0.0; n];
    for j in 0..grid.ny {
        let y = grid.node_y(j);
        for i in 0..grid.nx {
            let x = grid.node_x(i);
            let xc = maps.a[0] * x + maps.a[1] * y + maps.b[0];
            let yc = maps.a[2] * x + maps.a[3] * y + maps.b[1];
            let v = core_v(xc, yc);
            let idx = grid.idx(i, j);
            px[idx] = maps.o[0] * v[0] + maps.o[1] * v[1];
            py[idx] = maps.o[2] * v[0] + maps.o[3] * v[1];
        }
    }
    (px, py)
}

impl PreparedVelocity {
    pub fn new(f: &VelocityField, grid: Grid) -> Self {
        let mut normalized = Vec::new();
        normalize_into(f, WrapMaps::identity(), &mut normalized);
        let parts = normalized
            .into_iter()
            .map(|p| match p.core {
                CoreField::Uniform(v) => PartSampler::Uniform(v),
                CoreField::Cellular { amplitude, period, modulation } => {
                    let k = 2.0 * PI / period;
                    let (px, py) = build_static_pattern(&grid, &p.maps, |x, y| {
                        let (sx, cx) = (k * x).sin_cos();
                        let (sy, cy) = (k * y).sin_cos();
                        [amplitude * k * sx * cy, -amplitude * k * cx * sy]
                    });
                    let (w, phi) = match modulation {
                        TimeModulation::Steady => (0.0, 0.0),
                        TimeModulation::Sinusoidal { freq } => {
                            (2.0 * PI * freq * p.maps.t_scale, 2.0 * PI * freq * p.maps.t_offset)
                        }
                    };
                    PartSampler::Modulated { px, py, w, phi }
                }
                CoreField::Shear { amplitude, period, modulation } => {
                    let k = 2.0 * PI / period;
                    let (px, py) =
                        build_static_pattern(&grid, &p.maps, |_, y| [amplitude * (k * y).sin(), 0.0]);
                    let (w, phi) = match modulation {
                        TimeModulation::Steady => (0.0, 0.0),
                        TimeModulation::Sinusoidal { freq } => {
                            (2.0 * PI * freq * p.maps.t_scale, 2.0 * PI * freq * p.maps.t_offset)
                        }
                    };
                    PartSampler::Modulated { px, py, w, phi }
                }
                CoreField::Bernoulli(flow) => PartSampler::Slab {
                    px: vec![0.0; grid.n_nodes()],
                    py: vec![0.0; grid.n_nodes()],
                    flow,
                    maps: p.maps,
                    grid,
                    slab: None,
                },
            })
            .collect();
        PreparedVelocity { parts, grid }
    }

    pub fn n_parts(&self) -> usize {
        self.parts.len()
    }

    /// Velocity description for the stage at time `t`. May rebuild slab
    /// patterns; the result is a pure function of `(field, grid, t)`.
    pub fn stage(&mut self, t: f64) -> StageVelocity<'_> {
        if self.parts.is_empty() {
            return StageVelocity::Zero;
        }
        assert_eq!(self.parts.len(), 1, "dense path must be used for composites");
        match &mut self.parts[0] {
            PartSampler::Uniform(v) => StageVelocity::Uniform(*v),
            PartSampler::Modulated { px, py, w, phi } => {
                let factor = if *w == 0.0 && *phi == 0.0 { 1.0 } else { (*w * t + *phi).cos() };
                StageVelocity::Pattern { factor, px, py }
            }
            PartSampler::Slab { px, py, flow, maps, grid, slab } => {
                let tc = maps.t_scale * t + maps.t_offset;
                let k = tc.floor();
                let ki = k as i64;
                if *slab != Some(ki) {
                    rebuild_slab(px, py, flow, maps, grid, ki);
                    *slab = Some(ki);
                }
                // Both blocks share the bump shape; the temporal factor uses
                // v1's support (equal to v2's by construction of the shipped
                // flows; `make_bernoulli_tiling` keeps amplitudes per cell in
                // the pattern).
                let factor = flow.v1.bump(tc - k);
                StageVelocity::Pattern { factor, px, py }
            }
        }
    }

    /// True when the single-part fast path applies.
    pub fn is_single_part(&self) -> bool {
        self.parts.len() <= 1
    }

    /// Materialize node velocities at time `t` (fallback for composites, and
    /// the reference path for tests).
    pub fn materialize(&mut self, t: f64, vx: &mut [f64], vy: &mut [f64]) {
        vx.fill(0.0);
        vy.fill(0.0);
        let grid = self.grid;
        for part in &mut self.parts {
            match part {
                PartSampler::Uniform(v) => {
                    for (a, b) in vx.iter_mut().zip(vy.iter_mut()) {
                        *a += v[0];
                        *b += v[1];
                    }
                }
                PartSampler::Modulated { px, py, w, phi } => {
                    let factor = if *w == 0.0 && *phi == 0.0 { 1.0 } else { (*w * t + *phi).cos() };
                    for i in 0..vx.len() {
                        vx[i] += factor * px[i];
                        vy[i] += factor * py[i];
                    }
                }
                PartSampler::Slab { px, py, flow, maps, slab, .. } => {
                    let tc = maps.t_scale * t + maps.t_offset;
                    let k = tc.floor();
                    let ki = k as i64;
                    if *slab != Some(ki) {
                        rebuild_slab(px, py, flow, maps, &grid, ki);
                        *slab = Some(ki);
                    }
                    let factor = flow.v1.bump(tc - k);
                    for i in 0..vx.len() {
                        vx[i] += factor * px[i];
                        vy[i] += factor * py[i];
                    }
                }
            }
        }
    }
}

fn rebuild_slab(
    px: &mut [f64],
    py: &mut [f64],
    flow: &BernoulliTilingFlow,
    maps: &WrapMaps,
    grid: &Grid,
    k: i64,
) {
    for j in 0..grid.ny {
        let y = grid.node_y(j);
        for i in 0..grid.nx {
            let x = grid.node_x(i);
            let xc = maps.a[0] * x + maps.a[1] * y + maps.b[0];
            let yc = maps.a[2] * x + maps.a[3] * y + maps.b[1];
            let jx = xc.floor();
            let jy = yc.floor();
            let block = flow.block(jx as i64, jy as i64, k);
            let fx = xc - jx;
            let fy = yc - jy;
            let vx = block.amplitude * block.bump(fx) * block.bump_deriv(fy);
            let vy = -block.amplitude * block.bump_deriv(fx) * block.bump(fy);
            let idx = grid.idx(i, j);
            px[idx] = maps.o[0] * vx + maps.o[1] * vy;
            py[idx] = maps.o[2] * vx + maps.o[3] * vy;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn zero_amplitude_cellular_is_zero_field() {
        let f = make_cellular(0.0, 1.0, TimeModulation::Steady).unwrap();
        for p in [[0.1, 0.2], [0.7, -0.3], [2.0, 5.0]] {
            assert_eq!(f.evaluate(0.3, p), [0.0, 0.0]);
        }
    }

    #[test]
    fn cellular_frozen_probe_values() {
        // Symbolic stream-function differentiation, values frozen before the
        // build. A=2, P=1, sinusoidal freq 1.
        let f = make_cellular(2.0, 1.0, TimeModulation::Sinusoidal { freq: 1.0 }).unwrap();
        let v = f.evaluate(0.25, [0.25, 0.25]);
        assert_abs_diff_eq!(v[0], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(v[1], 0.0, epsilon = 1e-15);
        let v = f.evaluate(0.125, [0.125, 0.1]);
        assert_abs_diff_eq!(v[0], 5.0832036923152604, epsilon = 1e-12);
        assert_abs_diff_eq!(v[1], -3.6931636609809138, epsilon = 1e-12);
        // Steady probe, A=1.5, P=0.5.
        let f = make_cellular(1.5, 0.5, TimeModulation::Steady).unwrap();
        let v = f.evaluate(9.0, [0.3, 0.7]);
        assert_abs_diff_eq!(v[0], 8.963496494224664, epsilon = 1e-12);
        assert_abs_diff_eq!(v[1], 8.963496494224673, epsilon = 1e-12);
    }

    #[test]
    fn cellular_mean_over_period_cell_vanishes() {
        let f = make_cellular(1.3, 0.7, TimeModulation::Steady).unwrap();
        assert!(estimate_mean_drift(&f, 0.7, 32) < 1e-10);
    }

    #[test]
    fn mean_drift_zero_and_constant() {
        assert_eq!(estimate_mean_drift(&VelocityField::Zero, 2.0, 16), 0.0);
        let c = VelocityField::Constant { c: [0.3, -0.4] };
        assert_abs_diff_eq!(estimate_mean_drift(&c, 5.0, 16), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn mean_drift_below_speed_bound() {
        for f in [
            make_cellular(2.0, 1.0, TimeModulation::Sinusoidal { freq: 1.0 }).unwrap(),
            make_shear(0.8, 1.0, TimeModulation::Steady).unwrap(),
            make_default_bernoulli(0.0625, 7),
        ] {
            for l in [0.5, 1.0, 3.0] {
                assert!(estimate_mean_drift(&f, l, 16) <= f.speed_bound() + 1e-12);
            }
        }
    }

    #[test]
    fn bernoulli_degenerate_coin_is_seed_independent() {
        let b = BlockSpec::with_amplitude(0.1);
        let f1 = make_bernoulli_tiling(b, b, 1).unwrap();
        let f2 = make_bernoulli_tiling(b, b, 999).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..256 {
            let t = rng.gen_range(-5.0..5.0);
            let p = [rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)];
            assert_eq!(f1.evaluate(t, p), f2.evaluate(t, p));
        }
    }

    #[test]
    fn bernoulli_same_seed_reproduces_bit_exactly() {
        let f1 = make_default_bernoulli(0.0625, 42);
        let f2 = make_default_bernoulli(0.0625, 42);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10_000 {
            let t = rng.gen_range(-20.0..20.0);
            let p = [rng.gen_range(-20.0..20.0), rng.gen_range(-20.0..20.0)];
            let a = f1.evaluate(t, p);
            let b = f2.evaluate(t, p);
            assert_eq!(a[0].to_bits(), b[0].to_bits());
            assert_eq!(a[1].to_bits(), b[1].to_bits());
        }
    }

    #[test]
    fn bernoulli_distinct_seeds_differ() {
        let f1 = make_default_bernoulli(0.0625, 1);
        let f2 = make_default_bernoulli(0.0625, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut differ = false;
        for _ in 0..64 {
            let t = rng.gen_range(0.0..8.0);
            let p = [rng.gen_range(0.0..8.0), rng.gen_range(0.0..8.0)];
            if f1.evaluate(t, p) != f2.evaluate(t, p) {
                differ = true;
                break;
            }
        }
        assert!(differ);
    }

    #[test]
    fn bernoulli_block_zero_mean() {
        // Direct quadrature of one block over its cell.
        let b = BlockSpec::with_amplitude(0.25);
        let f = BernoulliTilingFlow { v1: b, v2: b, seed: 0 };
        let n = 160;
        let (mut sx, mut sy) = (0.0, 0.0);
        for iy in 0..n {
            for ix in 0..n {
                let v = f.evaluate(0.5, (ix as f64 + 0.5) / n as f64, (iy as f64 + 0.5) / n as f64);
                sx += v[0];
                sy += v[1];
            }
        }
        assert!(sx.abs() / ((n * n) as f64) < 1e-12);
        assert!(sy.abs() / ((n * n) as f64) < 1e-12);
    }

    #[test]
    fn bernoulli_cell_mean_decays_with_window() {
        // Tabulated decay of the empirical window mean toward zero.
        let f = make_default_bernoulli(0.0625, 17);
        let d1 = estimate_mean_drift(&f, 1.0, 24);
        let d16 = estimate_mean_drift(&f, 16.0, 24);
        assert!(d16 < 0.5 * d1, "d1={d1} d16={d16}");
        assert!(d16 < 0.05 * f.speed_bound().max(1e-9), "d16={d16}");
    }

    #[test]
    fn bernoulli_support_leak_rejected() {
        assert!(BlockSpec::new(1.0, (0.0, 0.9)).is_err());
        assert!(BlockSpec::new(1.0, (0.1, 1.0)).is_err());
        assert!(BlockSpec::new(1.0, (0.6, 0.4)).is_err());
    }

    #[test]
    fn reverse_basics() {
        assert_eq!(reverse(&VelocityField::Zero, 3.0), VelocityField::Zero);
        let c = VelocityField::Constant { c: [0.7, -0.1] };
        let r = reverse(&c, 2.0);
        assert_eq!(r.evaluate(0.5, [0.0, 0.0]), [-0.7, 0.1]);
        assert_eq!(r.speed_bound(), c.speed_bound());
    }

    #[test]
    fn reverse_is_involution() {
        let f = make_cellular(1.0, 1.0, TimeModulation::Sinusoidal { freq: 2.0 }).unwrap();
        let rr = reverse(&reverse(&f, 4.0), 4.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..64 {
            let t = rng.gen_range(0.0..4.0);
            let p = [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
            let a = f.evaluate(t, p);
            let b = rr.evaluate(t, p);
            assert_abs_diff_eq!(a[0], b[0], epsilon = 1e-15);
            assert_abs_diff_eq!(a[1], b[1], epsilon = 1e-15);
        }
    }

    #[test]
    fn divergence_reports() {
        let grid = Grid::new(65, 65, 1.0 / 64.0, [-0.5, -0.5]).unwrap();
        let zero = check_divergence_free(&VelocityField::Zero, &grid, &[0.0]);
        assert_eq!(zero.max_abs_div, 0.0);

        // Hand-built compressible field V = (x, 0): div = 1 exactly.
        // Emulate with a composite of shears? Not expressible; check the
        // stream-function fields instead and the reporting of a known value
        // via a synthetic closure is covered in gsolve tests.
        let cell = make_cellular(2.0, 1.0, TimeModulation::Steady).unwrap();
        let rep = check_divergence_free(&cell, &grid, &[0.0, 0.3]);
        // Truncation bound from third derivatives: |div_h| <= A k^3 * 2/3 * h^2,
        // k = 2 pi / P.
        let h = grid.h;
        let bound = 2.0 * 2.0 / 3.0 * (2.0 * PI).powi(3) * h * h;
        assert!(rep.max_abs_div <= bound, "div {} bound {}", rep.max_abs_div, bound);
    }

    #[test]
    fn divergence_second_order_refinement() {
        // The cellular field is an eigenfunction whose central-difference
        // divergence cancels exactly; the bump tiling exercises the O(h^2)
        // truncation for real.
        let f = make_default_bernoulli(0.5, 3);
        let mut errs = Vec::new();
        for n in [65usize, 129, 257] {
            let grid = Grid::new(n, n, 1.0 / (n as f64 - 1.0), [0.0, 0.0]).unwrap();
            errs.push(check_divergence_free(&f, &grid, &[0.5]).max_abs_div);
        }
        let s1 = (errs[0] / errs[1]).log2();
        let s2 = (errs[1] / errs[2]).log2();
        assert!(s1 > 1.8 && s2 > 1.8, "errs {errs:?} slopes {s1} {s2}");
    }

    #[test]
    fn prepared_matches_evaluate() {
        let grid = Grid::new(33, 29, 0.11, [-1.3, -0.9]).unwrap();
        let base = make_default_bernoulli(0.0625, 5);
        let cell = make_cellular(1.2, 0.8, TimeModulation::Sinusoidal { freq: 1.0 }).unwrap();
        let fields: Vec<VelocityField> = vec![
            VelocityField::Zero,
            VelocityField::Constant { c: [0.4, -0.2] },
            cell.clone(),
            make_shear(0.5, 1.3, TimeModulation::Sinusoidal { freq: 0.5 }).unwrap(),
            base.clone(),
            scaled(&cell, 0.25),
            scaled(&base, 0.5),
            reverse(&base, 3.7),
            rotated_to(&base, [3.0 / 5.0, 4.0 / 5.0]),
            reverse(&scaled(&rotated_to(&base, [0.6, 0.8]), 0.5), 2.0),
            shifted(&base, [2.3, -1.1]),
            rotated_to(&shifted(&base, [2.3, -1.1]), [0.28, 0.96]),
            scaled(&shifted(&cell, [0.4, 0.7]), 0.5),
            VelocityField::Composite(vec![cell.clone(), VelocityField::Constant { c: [0.1, 0.0] }]),
        ];
        let n = grid.n_nodes();
        for f in &fields {
            let mut prep = PreparedVelocity::new(f, grid);
            let mut vx = vec![0.0; n];
            let mut vy = vec![0.0; n];
            for &t in &[0.0, 0.37, 1.9, 2.44, -0.8] {
                prep.materialize(t, &mut vx, &mut vy);
                for j in 0..grid.ny {
                    for i in 0..grid.nx {
                        let p = [grid.node_x(i), grid.node_y(j)];
                        let v = f.evaluate(t, p);
                        let idx = grid.idx(i, j);
                        assert_abs_diff_eq!(vx[idx], v[0], epsilon = 1e-12);
                        assert_abs_diff_eq!(vy[idx], v[1], epsilon = 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn rotated_frame_preserves_speed() {
        let f = make_default_bernoulli(0.0625, 3);
        let r = rotated_to(&f, [0.6, 0.8]);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..128 {
            let t = rng.gen_range(0.0..4.0);
            let p = [rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)];
            let v = r.evaluate(t, p);
            assert!((v[0] * v[0] + v[1] * v[1]).sqrt() <= f.speed_bound() + 1e-12);
        }
    }
}
