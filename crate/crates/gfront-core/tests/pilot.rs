// Calibration probes (run explicitly with --ignored). These informed the
// frozen constants in the acceptance suite; they are kept runnable.
use gfront_core::flow::{make_cellular, make_default_bernoulli, FlowSpec, TimeModulation};
use gfront_core::grid::Grid;
use gfront_core::gsolve::{evolve, BoundaryPolicy, InitialData, SolveConfig, TimeIntegrator};
use gfront_core::homog::{estimate_tbar, HomogConfig, TravelTimeNumerics};
use gfront_core::reach::{check_volume_growth, measure, CubeWindow};
use gfront_core::VelocityField;
use std::time::Instant;

fn ball_cfg(t_final: f64, snaps: Vec<f64>) -> SolveConfig {
    SolveConfig { t_final, snapshot_times: snaps, ..SolveConfig::default() }
}

#[test]
#[ignore]
fn pilot_zero_flow_ball_bias() {
    // Criterion-1 configuration: 256^2 on [-2,2]^2, t = 1.5.
    let grid = Grid::centered_square([0.0, 0.0], 2.0, 256).unwrap();
    let h = grid.h;
    for (name, init) in [
        ("exp_cone(2h)", InitialData::ExpCone { eps: 2.0 * h, center: [0.0, 0.0] }),
        ("profile(0)", InitialData::SignedProfile { radius: 0.0, center: [0.0, 0.0] }),
    ] {
        let t0 = Instant::now();
        let series = evolve(&VelocityField::Zero, &init, &ball_cfg(1.5, vec![0.5, 1.0, 1.5]), &grid).unwrap();
        let m = measure(&series, &VelocityField::Zero, None, 1.5).unwrap();
        let exact = std::f64::consts::PI * 1.5 * 1.5;
        eprintln!(
            "{name}: w = {:.5} exact {:.5} rel err {:+.4}%  s = {:.5} (2 pi t = {:.5})  [{:?}]",
            m.w,
            exact,
            100.0 * (m.w - exact) / exact,
            m.s,
            2.0 * std::f64::consts::PI * 1.5,
            t0.elapsed()
        );
    }
}

#[test]
#[ignore]
fn pilot_growth_slack_calibration() {
    // Worst (rhs - lhs) / (h * 2r * dt) over the V=0 run: the slack
    // coefficient must dominate this with margin.
    let grid = Grid::centered_square([0.0, 0.0], 2.0, 256).unwrap();
    let init = InitialData::SignedProfile { radius: 0.0, center: [0.0, 0.0] };
    let series = evolve(&VelocityField::Zero, &init, &ball_cfg(1.5, vec![]), &grid).unwrap();
    let ts: Vec<f64> = (0..=40).map(|k| 0.05 + k as f64 * (1.45 / 40.0)).collect();
    let rep = check_volume_growth(&series, &VelocityField::Zero, CubeWindow::new(1.0), &ts, 1e9).unwrap();
    let h = grid.h;
    let mut worst = f64::NEG_INFINITY;
    for r in &rep.rows {
        let coeff = (r.rhs - r.lhs) / (h * 2.0 * (r.t1 - r.t0));
        worst = worst.max(coeff);
    }
    eprintln!("V=0 growth: worst needed coeff = {worst:.3}");
}

#[test]
#[ignore]
fn pilot_cellular_front_speed() {
    // How fast does the criterion-3 cellular flow (A=2, P=1, sinusoidal 1)
    // actually spread? Sets the box for the 256^2 measurement runs.
    let f = make_cellular(2.0, 1.0, TimeModulation::Sinusoidal { freq: 1.0 }).unwrap();
    let grid = Grid::centered_square([0.0, 0.0], 10.0, 640).unwrap();
    let h = grid.h;
    let mut cfg = ball_cfg(2.0, vec![0.5, 1.0, 1.5, 2.0]);
    cfg.boundary = BoundaryPolicy::AllowTruncation;
    let init = InitialData::ExpCone { eps: 2.0 * h, center: [0.0, 0.0] };
    let t0 = Instant::now();
    let series = evolve(&f, &init, &cfg, &grid).unwrap();
    for t in [0.5, 1.0, 1.5, 2.0] {
        let r = gfront_core::reach::max_set_radius(&series, [0.0, 0.0], t).unwrap();
        eprintln!("t = {t}: max radius {r:.3} (speed {:.3})", r / t);
    }
    eprintln!("elapsed {:?}", t0.elapsed());
}

#[test]
#[ignore]
fn pilot_bernoulli_tbar_and_corridor() {
    // T-bar along e1 for the default random flow at acceptance resolution,
    // with two corridor widths (truncation-bias check), plus timing.
    let spec = FlowSpec::Bernoulli { amplitude: 0.05 };
    for halfwidth in [1.25, 2.0] {
        let cfg = HomogConfig {
            tau0: 2,
            delta_hat: 0.02,
            dependence_range: 1.0,
            numerics: TravelTimeNumerics { halfwidth, ..TravelTimeNumerics::default() },
        };
        let t0 = Instant::now();
        let est = estimate_tbar(&spec, [1.0, 0.0], &[4.0, 8.0, 16.0], &[1, 2, 3], &cfg).unwrap();
        eprintln!("halfwidth {halfwidth}: elapsed {:?}", t0.elapsed());
        for r in &est.rows {
            eprintln!(
                "  lambda {:>4}: raw {:.5} +- {:.5}   paper {:.5}",
                r.lambda, r.mean_raw, r.se_raw, r.mean_paper
            );
        }
    }
}

#[test]
#[ignore]
fn pilot_bernoulli_drift_and_bounds() {
    let f = make_default_bernoulli(0.05, 9);
    let t0 = Instant::now();
    let b = gfront_core::flow::estimate_flow_bounds(&f, &[1.0, 2.0, 4.0, 8.0], 48);
    eprintln!(
        "bernoulli a=0.05: M = {:.4}, delta_hat = {:.5} at L = {}  [{:?}]",
        b.m,
        b.delta_hat,
        b.l0_hat,
        t0.elapsed()
    );
}

#[test]
#[ignore]
fn pilot_front_bias_by_scheme() {
    // Radius of the numeric V=0 ball along axis/diagonal at several times,
    // per integrator choice, h = 1/64.
    let grid = Grid::centered_square([0.0, 0.0], 2.0, 257).unwrap();
    let h = grid.h;
    let radius = |series: &gfront_core::gsolve::ScalarFieldSeries, dir: [f64; 2], t: f64| -> f64 {
        let mut lo = 0.0;
        let mut hi = 1.95;
        for _ in 0..50 {
            let mid = 0.5 * (lo + hi);
            let a = series.arrival_time.interpolate([mid * dir[0], mid * dir[1]]).unwrap();
            if a <= t {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    };
    let d = std::f64::consts::FRAC_1_SQRT_2;
    for (name, integ, cfl, sharper) in [
        ("rk2 cfl0.5", TimeIntegrator::TvdRk2, 0.5, false),
        ("rk2 cfl0.9", TimeIntegrator::TvdRk2, 0.9, false),
        ("euler cfl1", TimeIntegrator::Euler, 1.0, false),
        ("euler sharp", TimeIntegrator::Euler, 1.0, true),
    ] {
        for (iname, init) in [
            ("exp2h", InitialData::ExpCone { eps: 2.0 * h, center: [0.0, 0.0] }),
            ("ball4h", InitialData::SignedProfile { radius: 4.0 * h, center: [0.0, 0.0] }),
        ] {
            let cfg = SolveConfig {
                cfl,
                t_final: 1.5,
                integrator: integ,
                sharper_dt: sharper,
                ..SolveConfig::default()
            };
            let series = evolve(&VelocityField::Zero, &init, &cfg, &grid).unwrap();
            let r0 = if iname == "ball4h" { 4.0 * h } else { 0.0 };
            let mut line = format!("{name:<12} {iname:<7}");
            for t in [0.5, 1.0, 1.5] {
                let ra = radius(&series, [1.0, 0.0], t);
                let rd = radius(&series, [d, d], t);
                line += &format!(
                    "  t{t}: ax {:+.2}h diag {:+.2}h",
                    (ra - (t + r0)) / h,
                    (rd - (t + r0)) / h
                );
            }
            eprintln!("{line}");
        }
    }
}
