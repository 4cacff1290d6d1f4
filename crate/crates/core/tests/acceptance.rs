use std::f64::consts::PI;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sepmdo::dynamics::{self, BodyParameters, ControlInput, SpacecraftState, STATE_DIM};
use sepmdo::finite_diff::{self, relative_error, richardson};
use sepmdo::fourier_guess::{self, GuessOptions};
use sepmdo::nlp::NlpProblem;
use sepmdo::power::{PowerConfig, SECONDS_PER_YEAR};
use sepmdo::propulsion::{BlendKernel, EngineCluster, ThrottleTable, SPT140_MODES};
use sepmdo::scenario::{self, Preset, RunSummary, ScenarioConfig};
use sepmdo::sizing::MassConfig;
use sepmdo::transcription::{GridSpec, Mode, Transcription};

const DERIVATIVE_TOL: f64 = 5e-6;
const MIN_POINTS: usize = 100;
const RECOVERY_BANDWIDTH: f64 = 0.25;
const RECOVERY_TOL: f64 = 0.01;
const VIOLATION_TOL: f64 = 1e-6;
const RADIUS_DIVERGENCE_TOL: f64 = 5e-3;
const BOUNDARY_TOL: f64 = 1e-3;
const POWER_EXCESS_TOL: f64 = 1e-6;
const DOMINANCE_SLACK: f64 = 1e-3;
const MASS_AUDIT_TOL: f64 = 1e-4;
const SPOT_MASS_TOL: f64 = 1e-9;

struct Verdict {
    pass: bool,
    detail: String,
}

impl Verdict {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }
}

struct Check {
    id: u32,
    name: &'static str,
    verdict: Verdict,
    seconds: f64,
}

fn check(id: u32, name: &'static str, f: impl FnOnce() -> Verdict) -> Check {
    let start = Instant::now();
    let verdict = f();
    let c = Check {
        id,
        name,
        verdict,
        seconds: start.elapsed().as_secs_f64(),
    };
    println!(
        "{} [{}] {}: {} ({:.1} s)",
        if c.verdict.pass { "PASS" } else { "FAIL" },
        c.id,
        c.name,
        c.verdict.detail,
        c.seconds
    );
    c
}

fn desk(mode: Mode, overrides: &[&str]) -> ScenarioConfig {
    let o: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
    Preset::Desk
        .config(mode)
        .with_overrides(&o)
        .expect("desk preset")
}

fn solve(cfg: &ScenarioConfig) -> Result<RunSummary, String> {
    scenario::run_scenario(cfg)
        .map(|r| r.summary)
        .map_err(|e| e.to_string())
}

fn eom_partials_error(rng: &mut ChaCha8Rng, n: usize) -> f64 {
    let body = BodyParameters::psyche();
    let mut worst: f64 = 0.0;
    for _ in 0..n {
        let r = rng.random_range(200e3..900e3);
        let vc = body.circular_speed(r);
        let x = [
            r,
            rng.random_range(-PI..PI),
            rng.random_range(-0.2..0.2) * vc,
            rng.random_range(0.8..1.2) * vc,
            rng.random_range(300.0..550.0),
            rng.random_range(0.0..0.3),
            rng.random_range(-PI..PI),
            rng.random_range(0.0..2e-5),
        ];
        let split = |x: &[f64]| {
            (
                SpacecraftState::from_array(&x[..STATE_DIM]),
                ControlInput::new(x[5], x[6], x[7]),
            )
        };
        let (s, c) = split(&x);
        let p = dynamics::eom_partials(&s, &c, &body).unwrap();
        let analytic: Vec<Vec<f64>> = (0..STATE_DIM)
            .map(|i| {
                p.d_state[i]
                    .iter()
                    .chain(&p.d_control[i])
                    .copied()
                    .collect()
            })
            .collect();
        let typical = [r, 1.0, vc, vc, x[4], 0.1, 1.0, 1e-5];
        let fd = finite_diff::jacobian(
            |y| {
                let (s, c) = split(y);
                dynamics::eom(&s, &c, &body).unwrap().to_vec()
            },
            &x,
            &typical,
        );
        worst = worst.max(finite_diff::max_relative_error(&analytic, &fd, 1e-6));
    }
    worst
}

fn power_partials_error(rng: &mut ChaCha8Rng, n: usize) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..n {
        let cfg = PowerConfig {
            rho_p: [1.0, 10.0, 100.0][i % 3],
            ..PowerConfig::default()
        };
        let area = rng.random_range(5.0..200.0);
        let t = rng.random_range(0.0..3e7);
        let p = cfg.evaluate(area, t);
        let per_area = cfg.specific_output();
        let fd_a = richardson(|a| cfg.evaluate(a, t).p_avail, area, 1e-3);
        let floor_t = per_area * area * cfg.sigma / SECONDS_PER_YEAR;
        let fd_t = richardson(
            |s| cfg.evaluate(area, s).p_avail,
            t,
            0.01 * cfg.rho_p / floor_t,
        );
        worst = worst
            .max(relative_error(p.dp_avail_darea, fd_a, 1e-3 * per_area))
            .max(relative_error(p.dp_avail_dt, fd_t, 1e-3 * floor_t));
    }
    worst
}

fn propulsion_partials_error(rng: &mut ChaCha8Rng, n: usize) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..n {
        let kernel = [BlendKernel::Gaussian, BlendKernel::MarginSigmoid][i % 2];
        let c = EngineCluster::new(
            1 + (i % 3) as u32,
            ThrottleTable::spt140(rng.random_range(50.0..400.0)).with_kernel(kernel),
        );
        let p = rng.random_range(0.0..6000.0);
        let (dt, dm) = c.propulsion_partials(p);
        let fdt = richardson(|q| c.thrust_and_mdot(q).0, p, 0.1);
        let fdm = richardson(|q| c.thrust_and_mdot(q).1, p, 0.1);
        worst = worst
            .max(relative_error(dt, fdt, 1e-9))
            .max(relative_error(dm, fdm, 1e-12));
    }
    worst
}

fn sizing_partials_error(rng: &mut ChaCha8Rng, n: usize) -> f64 {
    let mut worst: f64 = 0.0;
    for _ in 0..n {
        let cfg = MassConfig {
            rho_sa: rng.random_range(0.5..20.0),
            n_eng: rng.random_range(1..4),
            ..MassConfig::default()
        };
        let area = rng.random_range(5.0..200.0);
        let fd = finite_diff::derivative(|a| cfg.initial_mass(a), area, 1.0);
        worst = worst.max(relative_error(cfg.mass_per_area(), fd, 1e-12));
    }
    worst
}

fn transcription_jacobian_error(rng: &mut ChaCha8Rng, n: usize) -> f64 {
    let mut worst: f64 = 0.0;
    for mode in [Mode::Baseline, Mode::Coupled] {
        let spec = desk(mode, &[]).transfer_spec().unwrap();
        let grid = GridSpec::new(2, 3);
        let (guess, _, _) =
            fourier_guess::generate(&spec, &grid, &GuessOptions::default()).unwrap();
        let t = Transcription::build(spec, grid, &guess).unwrap();
        let x0 = t.pack(&guess).unwrap();
        let (lo, hi) = t.variable_bounds();
        for _ in 0..n.div_ceil(2) {
            let x: Vec<f64> = x0
                .iter()
                .enumerate()
                .map(|(i, v)| {
                    let y = v + 0.05 * v.abs().max(0.1) * rng.random_range(-1.0..1.0);
                    y.clamp(lo[i], hi[i])
                })
                .collect();
            let fd = finite_diff::jacobian(|x| t.eval_constraints(x), &x, &[]);
            worst = worst.max(finite_diff::max_relative_error(
                &t.dense_jacobian(&x),
                &fd,
                1e-6,
            ));
        }
    }
    worst
}

fn derivative_correctness() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let parts = [
        ("dynamics", eom_partials_error(&mut rng, MIN_POINTS)),
        ("power", power_partials_error(&mut rng, MIN_POINTS)),
        (
            "propulsion",
            propulsion_partials_error(&mut rng, MIN_POINTS),
        ),
        ("sizing", sizing_partials_error(&mut rng, MIN_POINTS)),
        (
            "transcription",
            transcription_jacobian_error(&mut rng, MIN_POINTS),
        ),
    ];
    let pass = parts.iter().all(|(_, e)| *e < DERIVATIVE_TOL);
    let detail = parts
        .iter()
        .map(|(n, e)| format!("{n} {e:.1e}"))
        .collect::<Vec<_>>()
        .join(", ");
    Verdict::new(
        pass,
        format!(
            "worst relative error over {MIN_POINTS} points each: {detail} (tol {DERIVATIVE_TOL:e})"
        ),
    )
}

fn worst_recovery(bandwidth: f64) -> (f64, u32, bool) {
    let c = EngineCluster::new(1, ThrottleTable::spt140(bandwidth));
    let cluster: Vec<_> = SPT140_MODES
        .iter()
        .filter(|m| (3850.0..=3937.0).contains(&m.power))
        .collect();
    let hull = |f: fn(&sepmdo::propulsion::ThrottleMode) -> f64, v: f64| {
        let lo = cluster.iter().map(|m| f(m)).fold(f64::INFINITY, f64::min);
        let hi = cluster
            .iter()
            .map(|m| f(m))
            .fold(f64::NEG_INFINITY, f64::max);
        v >= lo * (1.0 - 1e-12) && v <= hi * (1.0 + 1e-12)
    };
    let mut worst = (0.0, 0, true);
    for m in &SPT140_MODES {
        let (t, md) = c.thrust_and_mdot(m.power);
        let (t, md) = (t * 1e3, md * 1e6);
        if (3850.0..=3937.0).contains(&m.power) {
            worst.2 &= hull(|m| m.thrust, t) && hull(|m| m.mass_flow, md);
            continue;
        }
        let e = ((t - m.thrust).abs() / m.thrust).max((md - m.mass_flow).abs() / m.mass_flow);
        if e > worst.0 {
            worst.0 = e;
            worst.1 = m.mode;
        }
    }
    worst
}

fn throttle_recovery() -> Verdict {
    let (err, mode, hull) = worst_recovery(RECOVERY_BANDWIDTH);
    let (err1, mode1, _) = worst_recovery(1.0);
    Verdict::new(
        err < RECOVERY_TOL && hull,
        format!(
            "s = {RECOVERY_BANDWIDTH} W: worst error {:.2e} (mode {mode}), modes 7-9 within their convex hull: {hull}; at s = 1 W worst is {:.2}% (mode {mode1})",
            err,
            100.0 * err1
        ),
    )
}

fn smooth_min_fidelity() -> Verdict {
    let mut worst_raw: f64 = 0.0;
    let mut worst_clamped: f64 = 0.0;
    for rho_p in [1.0, 10.0, 100.0] {
        let cfg = PowerConfig {
            rho_p,
            ..PowerConfig::default()
        };
        let span = 2.0 * (cfg.p_max + cfg.p_bus);
        let n = 200_000;
        let bound = cfg.eta_d * rho_p;
        for i in 0..=n {
            let p_sa = span * i as f64 / n as f64;
            let exact = cfg.eta_d * cfg.p_max.min(p_sa - cfg.p_bus);
            worst_raw = worst_raw.max((cfg.smooth_min_power(p_sa).0 - exact).abs() / bound);
            worst_clamped =
                worst_clamped.max((cfg.available_power(p_sa) - exact.max(0.0)).abs() / bound);
        }
    }
    Verdict::new(
        worst_raw <= 1.0 && worst_clamped <= 1.0,
        format!(
            "max |error| / (eta_d rho_p): smooth min {worst_raw:.3}, with zero clamp vs eta_d max(0, min) {worst_clamped:.3}"
        ),
    )
}

fn desk_transfer(b: &Result<RunSummary, String>) -> Verdict {
    let s = match b {
        Ok(s) => s,
        Err(e) => return Verdict::new(false, format!("run failed: {e}")),
    };
    let Some(d) = &s.divergence else {
        return Verdict::new(false, format!("no propagation: {:?}", s.propagation_error));
    };
    let pass = s.converged()
        && s.max_violation < VIOLATION_TOL
        && d.max_radius_fraction < RADIUS_DIVERGENCE_TOL
        && s.boundary_error < BOUNDARY_TOL
        && s.max_power_excess <= POWER_EXCESS_TOL;
    Verdict::new(
        pass,
        format!(
            "{} segments, status {:?}, violation {:.1e}, radius divergence {:.2e} rf, boundary {:.1e}, max P_E - P_avail {:.1e} W, t_f {:.1} s",
            s.n_segments, s.status, s.max_violation, d.max_radius_fraction, s.boundary_error, s.max_power_excess, s.t_f
        ),
    )
}

fn coupled_dominance(b: &Result<RunSummary, String>, c: &Result<RunSummary, String>) -> Verdict {
    match (b, c) {
        (Ok(b), Ok(c)) if b.converged() && c.converged() => Verdict::new(
            c.t_f <= b.t_f * (1.0 + DOMINANCE_SLACK),
            format!(
                "coupled t_f {:.1} s (A = {:.2} m^2) vs baseline {:.1} s ({:+.2}%)",
                c.t_f,
                c.area,
                b.t_f,
                100.0 * (c.t_f - b.t_f) / b.t_f
            ),
        ),
        (b, c) => Verdict::new(
            false,
            format!(
                "baseline {:?}, coupled {:?}",
                b.as_ref().map(|s| s.status),
                c.as_ref().map(|s| s.status)
            ),
        ),
    }
}

fn grid_study(coarse: &Result<RunSummary, String>, fine: &Result<RunSummary, String>) -> Verdict {
    let div = |r: &Result<RunSummary, String>| {
        let s = r.as_ref().ok().filter(|s| s.converged())?;
        s.divergence.as_ref().map(|d| d.max_radius_fraction * s.rf)
    };
    match (div(coarse), div(fine)) {
        (Some(a), Some(b)) => Verdict::new(
            a > b,
            format!("max radius divergence {a:.3e} m at 10 segments vs {b:.3e} m at 40"),
        ),
        _ => Verdict::new(false, "a grid-study run did not converge"),
    }
}

fn mass_bookkeeping(runs: &[(&str, &Result<RunSummary, String>)]) -> Verdict {
    let mut worst: f64 = 0.0;
    let mut audited = 0;
    let mut missing = Vec::new();
    for (name, r) in runs {
        let Ok(s) = r else { continue };
        if !s.converged() {
            continue;
        }
        match s.mass_audit {
            Some(a) => {
                worst = worst.max(a.residual);
                audited += 1;
            }
            None => missing.push(*name),
        }
    }
    Verdict::new(
        audited > 0 && missing.is_empty() && worst < MASS_AUDIT_TOL,
        format!("{audited} converged runs, worst residual {worst:.2e} kg, unaudited {missing:?}"),
    )
}

fn psyche_attempt() -> Verdict {
    let b = solve(&Preset::Psyche.config(Mode::Baseline));
    let c = solve(&Preset::Psyche.config(Mode::Coupled));
    let describe = |r: &Result<RunSummary, String>| match r {
        Ok(s) => format!("{:?} t_f {:.1} s A {:.2} m^2", s.status, s.t_f, s.area),
        Err(e) => format!("error {e}"),
    };
    let gate = match (&b, &c) {
        (Ok(b), Ok(c)) if b.converged() && c.converged() => Some(c.t_f < b.t_f && c.area > 50.0),
        _ => None,
    };
    Verdict::new(
        gate.unwrap_or(true),
        format!(
            "baseline {}; coupled {}; plausibility gate {}",
            describe(&b),
            describe(&c),
            match gate {
                Some(true) => "met",
                Some(false) => "violated",
                None => "not applicable",
            }
        ),
    )
}

fn spot_masses() -> Verdict {
    let cfg = MassConfig::default();
    let a = cfg.initial_mass(50.0);
    let b = cfg.initial_mass(79.79);
    Verdict::new(
        (a - 404.5).abs() <= SPOT_MASS_TOL && (b - 464.08).abs() <= SPOT_MASS_TOL,
        format!("initial_mass(50) = {a} kg, initial_mass(79.79) = {b} kg"),
    )
}

fn main() {
    let mut checks = vec![
        check(1, "derivative correctness", derivative_correctness),
        check(2, "throttle-table recovery", throttle_recovery),
        check(3, "smooth-min fidelity", smooth_min_fidelity),
    ];

    let baseline = solve(&desk(Mode::Baseline, &[]));
    let coupled = solve(&desk(Mode::Coupled, &[]));
    let coarse = solve(&desk(Mode::Baseline, &["grid.n_segments=10"]));
    let fine = solve(&desk(Mode::Baseline, &["grid.n_segments=40"]));

    checks.push(check(4, "verified desk-scale transfer", || {
        desk_transfer(&baseline)
    }));
    checks.push(check(5, "coupled dominance", || {
        coupled_dominance(&baseline, &coupled)
    }));
    checks.push(check(6, "defect versus grid", || {
        grid_study(&coarse, &fine)
    }));
    checks.push(check(7, "mass bookkeeping", || {
        mass_bookkeeping(&[
            ("desk baseline", &baseline),
            ("desk coupled", &coupled),
            ("desk 10 segments", &coarse),
            ("desk 40 segments", &fine),
        ])
    }));
    checks.push(check(8, "full-scale attempt", psyche_attempt));
    checks.push(check(9, "mass-coupling spot values", spot_masses));

    let failed = checks.iter().filter(|c| !c.verdict.pass).count();
    println!(
        "{} of {} criteria passed",
        checks.len() - failed,
        checks.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
