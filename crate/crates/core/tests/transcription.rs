use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sepmdo::dynamics::{idx, BodyParameters, SpacecraftState, STATE_DIM};
use sepmdo::finite_diff;
use sepmdo::fourier_guess::{self, GuessOptions};
use sepmdo::nlp::NlpProblem;
use sepmdo::power::PowerConfig;
use sepmdo::propulsion::{EngineCluster, ThrottleMode, ThrottleTable};
use sepmdo::sizing::MassConfig;
use sepmdo::transcription::{Bounds, GridSpec, Mode, Trajectory, Transcription, TransferSpec};

fn desk(mode: Mode) -> TransferSpec {
    TransferSpec {
        body: BodyParameters::psyche(),
        r0: 300e3,
        rf: 250e3,
        power: PowerConfig::default(),
        mass: MassConfig::default(),
        engine: EngineCluster::default(),
        mode,
        bounds: Bounds::default(),
        baseline_initial_mass: None,
        scaled: true,
    }
}

fn build(mode: Mode, segments: usize) -> (Transcription, Vec<f64>) {
    let spec = desk(mode);
    let grid = GridSpec::new(segments, 3);
    let (guess, _, _) = fourier_guess::generate(&spec, &grid, &GuessOptions::default()).unwrap();
    let t = Transcription::build(spec, grid, &guess).unwrap();
    let x = t.pack(&guess).unwrap();
    (t, x)
}

/// Random point near `x`, kept inside the variable bounds.
fn jitter(t: &Transcription, x: &[f64], rng: &mut ChaCha8Rng, scale: f64) -> Vec<f64> {
    let (lo, hi) = t.variable_bounds();
    x.iter()
        .enumerate()
        .map(|(i, v)| {
            let y = v + scale * v.abs().max(0.1) * rng.random_range(-1.0..1.0);
            y.clamp(lo[i], hi[i])
        })
        .collect()
}

fn fd_jacobian(t: &Transcription, x: &[f64]) -> Vec<Vec<f64>> {
    finite_diff::jacobian(|x| t.eval_constraints(x), x, &[])
}

#[test]
fn analytic_jacobian_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    for mode in [Mode::Baseline, Mode::Coupled] {
        let (t, x0) = build(mode, 2);
        for _ in 0..60 {
            let x = jitter(&t, &x0, &mut rng, 0.05);
            let e =
                finite_diff::max_relative_error(&t.dense_jacobian(&x), &fd_jacobian(&t, &x), 1e-6);
            worst = worst.max(e);
        }
    }
    assert!(worst < 5e-6, "worst relative error {worst:e}");
}

#[test]
fn reported_pattern_covers_realized_pattern() {
    let (t, x0) = build(Mode::Coupled, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x = jitter(&t, &x0, &mut rng, 0.05);
    let fd = fd_jacobian(&t, &x);
    let p = t.jacobian_pattern();
    for (r, row) in fd.iter().enumerate() {
        assert!(!p.row_range(r).is_empty(), "row {r} has no entries");
        for (c, v) in row.iter().enumerate() {
            if v.abs() > 1e-9 {
                assert!(p.contains(r, c), "FD nonzero ({r},{c}) outside pattern");
            }
        }
    }
}

#[test]
fn defects_couple_only_to_own_segment_and_statics() {
    let (t, x) = build(Mode::Coupled, 3);
    let kk = t.grid().order;
    let own = |k: usize, col: usize| {
        let s = k / kk;
        let state_cols = t.state_index(s * kk, 0)..t.state_index((s + 1) * kk, STATE_DIM - 1) + 1;
        state_cols.contains(&col)
            || col == t.power_index(k)
            || col == t.alpha_index(k)
            || col == t.tf_index()
            || Some(col) == t.area_index()
    };
    let dense = t.dense_jacobian(&x);
    for k in 0..t.grid().n_nodes() {
        for i in 0..STATE_DIM {
            let row = t.defect_row(k, i);
            for (c, v) in dense[row].iter().enumerate() {
                if *v != 0.0 {
                    assert!(own(k, c), "defect ({k},{i}) touches column {c}");
                }
            }
            assert_ne!(dense[row][t.tf_index()], 0.0, "t_f column of ({k},{i})");
        }
    }
}

#[test]
fn perturbing_a_state_node_changes_only_its_segment() {
    let (t, x) = build(Mode::Baseline, 4);
    let base = t.eval_constraints(&x);
    let kk = t.grid().order;
    let node = 5; // interior node of segment 1
    let mut y = x.clone();
    y[t.state_index(node, idx::V_THETA)] *= 1.001;
    let c = t.eval_constraints(&y);
    for k in 0..t.grid().n_nodes() {
        for i in 0..STATE_DIM {
            let row = t.defect_row(k, i);
            if k / kk != node / kk {
                assert_eq!(c[row], base[row], "defect ({k},{i}) changed");
            }
        }
    }
}

#[test]
fn area_column_absent_in_baseline() {
    let (t, x) = build(Mode::Baseline, 2);
    assert!(t.area_index().is_none());
    assert_eq!(t.num_variables(), t.grid().num_variables(Mode::Baseline));
    let dense = t.dense_jacobian(&x);
    assert_eq!(dense[0].len(), t.num_variables());
}

#[test]
fn coasting_circular_orbit_has_zero_defects() {
    // A table whose thrust and flow are negligible makes every command a coast.
    let modes: Vec<ThrottleMode> = ThrottleTable::default()
        .modes
        .iter()
        .map(|m| ThrottleMode {
            thrust: 1e-20,
            mass_flow: 1e-20,
            ..*m
        })
        .collect();
    let mut spec = desk(Mode::Baseline);
    spec.engine = EngineCluster::new(
        1,
        ThrottleTable {
            modes,
            ..ThrottleTable::default()
        },
    );
    let body = spec.body;
    let grid = GridSpec::new(5, 3);
    let r = spec.r0;
    let t_f = 2.0 * body.period(r);
    let states = grid
        .node_fractions()
        .iter()
        .map(|f| {
            SpacecraftState::new(
                r,
                body.mean_motion(r) * f * t_f,
                0.0,
                body.circular_speed(r),
                404.5,
            )
        })
        .collect();
    let traj = Trajectory {
        t_f,
        area: 50.0,
        states,
        power: vec![2000.0; grid.n_nodes()],
        alpha: vec![std::f64::consts::PI; grid.n_nodes()],
    };
    let t = Transcription::build(spec, grid, &traj).unwrap();
    let report = t.defect_report(&t.pack(&traj).unwrap());
    assert!(report.max_defect < 1e-10, "{}", report.max_defect);
    for s in &report.segments {
        assert!(s.norms.iter().all(|v| *v < 1e-10));
    }
}

#[test]
fn sequential_and_parallel_evaluation_agree_bitwise() {
    use sepmdo::par::Execution;
    let (t, x) = build(Mode::Coupled, 6);
    let seq = t.clone().with_execution(Execution::Sequential);
    let par = t.with_execution(Execution::Parallel);
    assert_eq!(seq.eval_constraints(&x), par.eval_constraints(&x));
    assert_eq!(seq.eval_jacobian(&x), par.eval_jacobian(&x));
}

#[test]
fn guess_satisfies_boundary_conditions() {
    let (t, x) = build(Mode::Coupled, 8);
    let report = t.defect_report(&x);
    assert!(report.max_boundary < 1e-9, "{}", report.max_boundary);
    let traj = t.unpack(&x);
    for p in &traj.power {
        assert!((1514.0..=4989.0).contains(p));
    }
}

#[test]
fn non_finite_states_flag_rows_instead_of_panicking() {
    let (t, mut x) = build(Mode::Coupled, 2);
    x[t.state_index(2, idx::R)] = -1.0;
    let c = t.eval_constraints(&x);
    assert!(c[t.defect_row(2, idx::V_R)].is_nan());
    let report = t.defect_report(&x);
    assert!(report.max_violation.is_infinite());
}

#[test]
fn colored_hessian_matches_dense_differences() {
    use sepmdo::nlp::DifferenceHessian;
    let (t, x0) = build(Mode::Coupled, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = jitter(&t, &x0, &mut rng, 0.02);
    let y: Vec<f64> = (0..t.num_constraints())
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    let p = t.jacobian_pattern();
    let dh = DifferenceHessian::new(p, t.objective_gradient_pattern());
    let mut jac = vec![0.0; p.nnz()];
    t.jacobian_values(&x, &mut jac);
    let mut g = vec![0.0; x.len()];
    t.objective_gradient(&x, &mut g);
    let values = dh.evaluate(&t, p, &x, &jac, &g, &y);
    // oracle: central differences of J^T y
    let lagrangian_gradient = |x: &[f64]| {
        let d = t.dense_jacobian(x);
        (0..x.len())
            .map(|j| d.iter().zip(&y).map(|(row, yi)| row[j] * yi).sum::<f64>())
            .collect::<Vec<f64>>()
    };
    let oracle = finite_diff::jacobian(lagrangian_gradient, &x, &[]);
    let mut worst: f64 = 0.0;
    let mut seen = std::collections::HashSet::new();
    for (&(a, b), v) in dh.entries().iter().zip(&values) {
        seen.insert((a, b));
        let exact = 0.5 * (oracle[a][b] + oracle[b][a]);
        worst = worst.max((v - exact).abs() / exact.abs().max(1.0));
    }
    assert!(worst < 1e-5, "worst relative error {worst:e}");
    for (a, row) in oracle.iter().enumerate() {
        for (b, v) in row.iter().enumerate().take(a + 1) {
            if !seen.contains(&(a, b)) {
                assert!(v.abs() < 1e-7, "missing entry ({a},{b}) = {v}");
            }
        }
    }
}
