use sepmdo::finite_diff;
use sepmdo::nlp::{
    self, ConstraintKind, NlpProblem, NlpSolver, SolveResult, SolveStatus, SolverOptions,
    SolverRegistry, SparsityPattern,
};
use sepmdo::Error;

/// min x^2  s.t.  x - 3 = 0
struct ToyQp {
    pattern: SparsityPattern,
}

impl ToyQp {
    fn new() -> Self {
        Self {
            pattern: SparsityPattern::dense(1, 1),
        }
    }
}

impl NlpProblem for ToyQp {
    fn num_variables(&self) -> usize {
        1
    }
    fn num_constraints(&self) -> usize {
        1
    }
    fn variable_bounds(&self) -> (Vec<f64>, Vec<f64>) {
        (vec![f64::NEG_INFINITY], vec![f64::INFINITY])
    }
    fn constraint_kinds(&self) -> Vec<ConstraintKind> {
        vec![ConstraintKind::Equality]
    }
    fn objective(&self, x: &[f64]) -> f64 {
        x[0] * x[0]
    }
    fn objective_gradient(&self, x: &[f64], g: &mut [f64]) {
        g[0] = 2.0 * x[0];
    }
    fn constraints(&self, x: &[f64], c: &mut [f64]) {
        c[0] = x[0] - 3.0;
    }
    fn jacobian_pattern(&self) -> &SparsityPattern {
        &self.pattern
    }
    fn jacobian_values(&self, _x: &[f64], v: &mut [f64]) {
        v[0] = 1.0;
    }
}

/// Rosenbrock in the box [-2, 2]^2 with `x + y <= 1` and an unrelated
/// inactive row `x - 5 <= 0` (sparse: touches only x).
struct Rosenbrock {
    pattern: SparsityPattern,
}

impl Rosenbrock {
    fn new() -> Self {
        let (pattern, _) = SparsityPattern::from_entries(2, 2, &[(0, 0), (0, 1), (1, 0)]);
        Self { pattern }
    }
}

fn rosen(x: f64, y: f64) -> f64 {
    (1.0 - x).powi(2) + 100.0 * (y - x * x).powi(2)
}

impl NlpProblem for Rosenbrock {
    fn num_variables(&self) -> usize {
        2
    }
    fn num_constraints(&self) -> usize {
        2
    }
    fn variable_bounds(&self) -> (Vec<f64>, Vec<f64>) {
        (vec![-2.0, -2.0], vec![2.0, 2.0])
    }
    fn constraint_kinds(&self) -> Vec<ConstraintKind> {
        vec![ConstraintKind::Inequality, ConstraintKind::Inequality]
    }
    fn objective(&self, x: &[f64]) -> f64 {
        rosen(x[0], x[1])
    }
    fn objective_gradient(&self, x: &[f64], g: &mut [f64]) {
        let (a, b) = (x[0], x[1]);
        g[0] = -2.0 * (1.0 - a) - 400.0 * a * (b - a * a);
        g[1] = 200.0 * (b - a * a);
    }
    fn constraints(&self, x: &[f64], c: &mut [f64]) {
        c[0] = x[0] + x[1] - 1.0;
        c[1] = x[0] - 5.0;
    }
    fn jacobian_pattern(&self) -> &SparsityPattern {
        &self.pattern
    }
    fn jacobian_values(&self, _x: &[f64], v: &mut [f64]) {
        v.copy_from_slice(&[1.0, 1.0, 1.0]);
    }
}

/// Dense Newton iteration on the KKT system of an equality-constrained
/// problem, standing in for an externally attached engine.
struct KktNewton;

impl NlpSolver for KktNewton {
    fn name(&self) -> &str {
        "kkt-newton"
    }

    fn solve(
        &self,
        problem: &dyn NlpProblem,
        x0: &[f64],
        opts: &SolverOptions,
    ) -> sepmdo::Result<SolveResult> {
        let n = problem.num_variables();
        let m = problem.num_constraints();
        let mut x = x0.to_vec();
        let mut lam = vec![0.0; m];
        let mut iterations = 0;
        let grad = |x: &[f64]| {
            let mut g = vec![0.0; n];
            problem.objective_gradient(x, &mut g);
            g
        };
        for it in 0..opts.max_iterations {
            iterations = it + 1;
            let hess = finite_diff::jacobian(|x| grad(x), &x, &[]);
            let mut vals = vec![0.0; problem.jacobian_pattern().nnz()];
            problem.jacobian_values(&x, &mut vals);
            let jac = problem.jacobian_pattern().to_dense(&vals);
            let mut c = vec![0.0; m];
            problem.constraints(&x, &mut c);
            let g = grad(&x);
            let mut kkt = nalgebra::DMatrix::<f64>::zeros(n + m, n + m);
            let mut rhs = nalgebra::DVector::<f64>::zeros(n + m);
            for i in 0..n {
                for j in 0..n {
                    kkt[(i, j)] = hess[i][j];
                }
                rhs[i] = -g[i];
            }
            for r in 0..m {
                for j in 0..n {
                    kkt[(n + r, j)] = jac[r][j];
                    kkt[(j, n + r)] = jac[r][j];
                }
                rhs[n + r] = -c[r];
            }
            let sol = kkt.lu().solve(&rhs).expect("singular KKT");
            for i in 0..n {
                x[i] += sol[i];
            }
            lam.copy_from_slice(&sol.as_slice()[n..]);
            if sol.iter().take(n).map(|v| v.abs()).fold(0.0, f64::max) < 1e-12 {
                break;
            }
        }
        let mut c = vec![0.0; m];
        problem.constraints(&x, &mut c);
        let kinds = problem.constraint_kinds();
        Ok(SolveResult {
            status: SolveStatus::Converged,
            objective: problem.objective(&x),
            max_violation: nlp::max_violation(&c, &kinds),
            stationarity: 0.0,
            iterations,
            inner_iterations: iterations,
            multipliers: lam,
            wall_time_s: 0.0,
            log: Vec::new(),
            x,
        })
    }
}

fn tight() -> SolverOptions {
    SolverOptions {
        feasibility_tol: 1e-10,
        optimality_tol: 1e-9,
        ..SolverOptions::default()
    }
}

fn each_backend() -> [SolverOptions; 2] {
    [nlp::AUGMENTED_LAGRANGIAN, nlp::INTERIOR_POINT].map(|b| SolverOptions {
        backend: b.into(),
        ..tight()
    })
}

#[test]
fn equality_quadratic() {
    for opts in each_backend() {
        let r = nlp::solve(&ToyQp::new(), &[0.0], &opts).unwrap();
        assert_eq!(r.status, SolveStatus::Converged, "{}", opts.backend);
        assert!((r.x[0] - 3.0).abs() < 1e-8, "{:?}", r.x);
        // multiplier of x^2 + l (x - 3): 2x + l = 0 -> l = -6
        assert!((r.multipliers[0] + 6.0).abs() < 1e-6, "{}", opts.backend);
    }
}

/// Golden-section-free brute force: nested grid refinement along the active
/// boundary y = 1 - x, checked against the interior by a coarse 2-D scan.
fn rosenbrock_oracle() -> (f64, f64) {
    let mut best = (0.0, f64::INFINITY);
    let (mut lo, mut hi) = (-1.0, 2.0);
    for _ in 0..8 {
        let n = 2000;
        for i in 0..=n {
            let x = lo + (hi - lo) * i as f64 / n as f64;
            let y = 1.0 - x;
            if !(-2.0..=2.0).contains(&y) {
                continue;
            }
            let f = rosen(x, y);
            if f < best.1 {
                best = (x, f);
            }
        }
        let w = (hi - lo) / 200.0;
        lo = best.0 - w;
        hi = best.0 + w;
    }
    // Interior scan cannot beat the boundary optimum.
    for i in 0..=400 {
        for j in 0..=400 {
            let x = -2.0 + 4.0 * i as f64 / 400.0;
            let y = -2.0 + 4.0 * j as f64 / 400.0;
            if x + y <= 1.0 {
                assert!(rosen(x, y) >= best.1 - 1e-9);
            }
        }
    }
    (best.0, 1.0 - best.0)
}

#[test]
fn constrained_rosenbrock_matches_grid_oracle() {
    let (xo, yo) = rosenbrock_oracle();
    for opts in each_backend() {
        let r = nlp::solve(&Rosenbrock::new(), &[-1.2, 1.0], &opts).unwrap();
        assert_eq!(r.status, SolveStatus::Converged, "{r:?}");
        assert!(
            (r.x[0] - xo).abs() < 1e-4 && (r.x[1] - yo).abs() < 1e-4,
            "{}: {:?} vs {xo},{yo}",
            opts.backend,
            r.x
        );
    }
}

#[test]
fn external_engine_agrees_with_builtin() {
    let mut reg = SolverRegistry::default();
    reg.register(Box::new(KktNewton));
    let ext = SolverOptions {
        backend: "kkt-newton".into(),
        max_iterations: 10,
        ..tight()
    };
    let a = reg.solve(&ToyQp::new(), &[10.0], &tight()).unwrap();
    let b = reg.solve(&ToyQp::new(), &[10.0], &ext).unwrap();
    assert!((a.x[0] - b.x[0]).abs() < 1e-6);
    assert!(b.status.is_converged());
}

#[test]
fn missing_backend_is_config_error() {
    let opts = SolverOptions {
        backend: "ipopt".into(),
        ..SolverOptions::default()
    };
    let err = nlp::solve(&ToyQp::new(), &[0.0], &opts).unwrap_err();
    assert!(matches!(err, Error::MissingBackend(ref n) if n == "ipopt"));
    assert!(err.is_config_error());
}

#[test]
fn dimension_mismatch_raises() {
    let err = nlp::solve(&ToyQp::new(), &[0.0, 1.0], &SolverOptions::default()).unwrap_err();
    assert!(matches!(err, Error::Dimension { .. }));
}

#[test]
fn reported_sparsity_matches_finite_differences() {
    let p = Rosenbrock::new();
    for x in [[0.3, -0.7], [1.5, 0.2], [-1.0, 1.9]] {
        let fd = finite_diff::jacobian(
            |x| {
                let mut c = vec![0.0; 2];
                p.constraints(x, &mut c);
                c
            },
            &x,
            &[],
        );
        for (r, row) in fd.iter().enumerate() {
            for (c, v) in row.iter().enumerate() {
                assert_eq!(
                    v.abs() > 1e-12,
                    p.jacobian_pattern().contains(r, c),
                    "({r},{c})"
                );
            }
        }
    }
}

#[test]
fn callback_counts_are_logged_and_monotone() {
    let r = nlp::solve(&Rosenbrock::new(), &[-1.2, 1.0], &tight()).unwrap();
    assert!(!r.log.is_empty());
    for w in r.log.windows(2) {
        assert!(w[1].constraint_evals >= w[0].constraint_evals);
        assert!(w[1].jacobian_evals >= w[0].jacobian_evals);
        assert!(w[1].inner_iterations >= w[0].inner_iterations);
        assert!(w[1].iteration == w[0].iteration + 1);
    }
    let mut buf = Vec::new();
    r.write_log_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.starts_with("iteration,objective,max_violation,step_norm,penalty"));
    assert_eq!(text.lines().count(), r.log.len() + 1);
}

#[test]
fn repeated_solves_are_bitwise_identical() {
    let a = nlp::solve(&Rosenbrock::new(), &[-1.2, 1.0], &tight()).unwrap();
    let b = nlp::solve(&Rosenbrock::new(), &[-1.2, 1.0], &tight()).unwrap();
    assert_eq!(a.x, b.x);
    assert_eq!(a.log, b.log);
}

#[test]
fn infeasible_box_is_reported_not_raised() {
    // x in [0, 1] but x = 3 required
    struct Boxed(ToyQp);
    impl NlpProblem for Boxed {
        fn num_variables(&self) -> usize {
            1
        }
        fn num_constraints(&self) -> usize {
            1
        }
        fn variable_bounds(&self) -> (Vec<f64>, Vec<f64>) {
            (vec![0.0], vec![1.0])
        }
        fn constraint_kinds(&self) -> Vec<ConstraintKind> {
            self.0.constraint_kinds()
        }
        fn objective(&self, x: &[f64]) -> f64 {
            self.0.objective(x)
        }
        fn objective_gradient(&self, x: &[f64], g: &mut [f64]) {
            self.0.objective_gradient(x, g)
        }
        fn constraints(&self, x: &[f64], c: &mut [f64]) {
            self.0.constraints(x, c)
        }
        fn jacobian_pattern(&self) -> &SparsityPattern {
            self.0.jacobian_pattern()
        }
        fn jacobian_values(&self, x: &[f64], v: &mut [f64]) {
            self.0.jacobian_values(x, v)
        }
    }
    for backend in [nlp::AUGMENTED_LAGRANGIAN, nlp::INTERIOR_POINT] {
        let opts = SolverOptions {
            backend: backend.into(),
            ..SolverOptions::default()
        };
        let r = nlp::solve(&Boxed(ToyQp::new()), &[0.5], &opts).unwrap();
        assert!(!r.status.is_converged(), "{backend}");
        assert!((r.x[0] - 1.0).abs() < 1e-3, "{backend}: x = {}", r.x[0]);
    }
}
