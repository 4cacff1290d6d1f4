//! Augmented-Lagrangian outer loop with a projected quasi-Newton inner solve.
//!
//! Inner subproblems minimize the PHR augmented Lagrangian subject to simple
//! bounds. Each inner step uses the model Hessian `B + rho J^T W J`, where
//! `J^T W J` is the Gauss-Newton curvature of the penalty term over the
//! equality and currently active inequality rows and `B` is a
//! limited-memory BFGS approximation of the remaining Lagrangian curvature.
//! Steps follow Bertsekas' projected Newton scheme: variables in the
//! epsilon-active set take a scaled gradient step and the rest a Newton step
//! on the reduced system, followed by an Armijo search along the projection
//! arc.

use std::time::Instant;

use log::{debug, info};
use nalgebra::DMatrix;

use super::hessian::DifferenceHessian;
use super::lbfgs::{dot, LbfgsMatrix};
use super::{
    check_dimensions, max_violation, ConstraintKind, Counted, HessianMode, IterationRecord,
    NlpProblem, NlpSolver, SolveResult, SolveStatus, SolverOptions, SparsityPattern,
    AUGMENTED_LAGRANGIAN,
};
use crate::error::Result;

const ARMIJO: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 40;
const MULTIPLIER_CAP: f64 = 1e12;

#[derive(Debug, Default, Clone, Copy)]
pub struct AugmentedLagrangian;

impl NlpSolver for AugmentedLagrangian {
    fn name(&self) -> &str {
        AUGMENTED_LAGRANGIAN
    }

    fn solve(
        &self,
        problem: &dyn NlpProblem,
        x0: &[f64],
        opts: &SolverOptions,
    ) -> Result<SolveResult> {
        check_dimensions(problem, x0)?;
        opts.validate()?;
        let start = Instant::now();
        let counted = Counted::new(problem);
        let mut run = Run::new(&counted, opts);
        let mut result = run.execute(x0);
        result.wall_time_s = start.elapsed().as_secs_f64();
        Ok(result)
    }
}

/// Everything known about the merit function at one point.
#[derive(Clone)]
struct Point {
    x: Vec<f64>,
    f: f64,
    c: Vec<f64>,
    phi: f64,
    /// Multiplier estimates `y(x)` implied by the current lambda and rho.
    y: Vec<f64>,
    grad_f: Vec<f64>,
    jac: Vec<f64>,
    /// Gradient of the augmented Lagrangian.
    g: Vec<f64>,
}

struct Run<'a> {
    problem: &'a Counted<'a>,
    opts: &'a SolverOptions,
    n: usize,
    m: usize,
    lo: Vec<f64>,
    hi: Vec<f64>,
    kinds: Vec<ConstraintKind>,
    pattern: SparsityPattern,
    lambda: Vec<f64>,
    rho: f64,
    qn: LbfgsMatrix,
    curvature: Option<DifferenceHessian>,
    inner_used: usize,
}

enum InnerEnd {
    Converged,
    Budget,
    Stalled,
}

impl<'a> Run<'a> {
    fn new(problem: &'a Counted<'a>, opts: &'a SolverOptions) -> Self {
        let (lo, hi) = problem.variable_bounds();
        Self {
            n: problem.num_variables(),
            m: problem.num_constraints(),
            kinds: problem.constraint_kinds(),
            pattern: problem.jacobian_pattern().clone(),
            lambda: vec![0.0; problem.num_constraints()],
            rho: opts.initial_penalty,
            qn: LbfgsMatrix::new(opts.lbfgs_memory, 1.0),
            curvature: match opts.hessian {
                HessianMode::FiniteDifference => Some(DifferenceHessian::new(
                    problem.jacobian_pattern(),
                    problem.objective_gradient_pattern(),
                )),
                HessianMode::Lbfgs => None,
            },
            inner_used: 0,
            problem,
            opts,
            lo,
            hi,
        }
    }

    fn project(&self, x: &mut [f64]) {
        for i in 0..self.n {
            x[i] = x[i].max(self.lo[i]).min(self.hi[i]);
        }
    }

    /// Multiplier estimate for row `i` at constraint value `c`.
    fn estimate(&self, i: usize, c: f64) -> f64 {
        let v = self.lambda[i] + self.rho * c;
        match self.kinds[i] {
            ConstraintKind::Equality => v,
            ConstraintKind::Inequality => v.max(0.0),
        }
    }

    fn merit_terms(&self, f: f64, c: &[f64]) -> f64 {
        let mut phi = f;
        for (i, &ci) in c.iter().enumerate() {
            let l = self.lambda[i];
            match self.kinds[i] {
                ConstraintKind::Equality => phi += l * ci + 0.5 * self.rho * ci * ci,
                ConstraintKind::Inequality => {
                    let v = (l + self.rho * ci).max(0.0);
                    phi += (v * v - l * l) / (2.0 * self.rho);
                }
            }
        }
        phi
    }

    /// Objective, constraints and merit value (no derivatives).
    fn merit(&self, x: &[f64]) -> (f64, Vec<f64>, f64) {
        let f = self.problem.objective(x);
        let mut c = vec![0.0; self.m];
        self.problem.constraints(x, &mut c);
        let phi = self.merit_terms(f, &c);
        let phi = if phi.is_finite() { phi } else { f64::INFINITY };
        (f, c, phi)
    }

    fn complete(&self, x: Vec<f64>, f: f64, c: Vec<f64>, phi: f64) -> Point {
        let mut grad_f = vec![0.0; self.n];
        self.problem.objective_gradient(&x, &mut grad_f);
        let mut jac = vec![0.0; self.pattern.nnz()];
        self.problem.jacobian_values(&x, &mut jac);
        let y: Vec<f64> = c
            .iter()
            .enumerate()
            .map(|(i, &ci)| self.estimate(i, ci))
            .collect();
        let mut g = vec![0.0; self.n];
        self.pattern.mul_transpose_vec(&jac, &y, &mut g);
        for (gi, gf) in g.iter_mut().zip(&grad_f) {
            *gi += gf;
        }
        Point {
            x,
            f,
            c,
            phi,
            y,
            grad_f,
            jac,
            g,
        }
    }

    fn evaluate(&self, x: Vec<f64>) -> Point {
        let (f, c, phi) = self.merit(&x);
        self.complete(x, f, c, phi)
    }

    /// Recomputes multiplier estimates and merit after lambda or rho change.
    fn refresh(&self, p: &mut Point) {
        p.phi = self.merit_terms(p.f, &p.c);
        p.y =
            p.c.iter()
                .enumerate()
                .map(|(i, &ci)| self.estimate(i, ci))
                .collect();
        self.pattern.mul_transpose_vec(&p.jac, &p.y, &mut p.g);
        for (gi, gf) in p.g.iter_mut().zip(&p.grad_f) {
            *gi += gf;
        }
    }

    fn projected_gradient_norm(&self, p: &Point) -> f64 {
        (0..self.n)
            .map(|i| {
                let t = (p.x[i] - p.g[i]).max(self.lo[i]).min(self.hi[i]);
                (t - p.x[i]).abs()
            })
            .fold(0.0, f64::max)
    }

    /// Dense model Hessian `B + rho J^T W J`.
    fn model_hessian(&self, p: &Point) -> DMatrix<f64> {
        let n = self.n;
        let mut h = DMatrix::<f64>::zeros(n, n);
        if let Some(dh) = &self.curvature {
            let v = dh.evaluate(self.problem, &self.pattern, &p.x, &p.jac, &p.grad_f, &p.y);
            dh.add_to_dense(&v, &mut h);
        }
        let cols = self.pattern.col_indices();
        for r in 0..self.m {
            let active = match self.kinds[r] {
                ConstraintKind::Equality => true,
                ConstraintKind::Inequality => self.lambda[r] + self.rho * p.c[r] > 0.0,
            };
            if !active {
                continue;
            }
            let range = self.pattern.row_range(r);
            for a in range.clone() {
                let va = self.rho * p.jac[a];
                if va == 0.0 {
                    continue;
                }
                for b in range.clone() {
                    h[(cols[a], cols[b])] += va * p.jac[b];
                }
            }
        }
        if self.curvature.is_none() {
            self.qn.add_to(&mut h);
        }
        h
    }

    fn newton_direction(&self, p: &Point) -> Vec<f64> {
        let n = self.n;
        let pg = self.projected_gradient_norm(p);
        let eps = pg.min(1e-3);
        let mut free = Vec::with_capacity(n);
        let mut active = vec![false; n];
        for i in 0..n {
            let at_lo = p.x[i] - self.lo[i] <= eps && p.g[i] > 0.0;
            let at_hi = self.hi[i] - p.x[i] <= eps && p.g[i] < 0.0;
            if self.lo[i] == self.hi[i] || at_lo || at_hi {
                active[i] = true;
            } else {
                free.push(i);
            }
        }
        let h = self.model_hessian(p);
        let mut d = vec![0.0; n];
        for i in 0..n {
            if active[i] && self.lo[i] != self.hi[i] {
                d[i] = -p.g[i] / h[(i, i)].max(1e-12);
            }
        }
        if free.is_empty() {
            return d;
        }
        let nf = free.len();
        let mut hff = DMatrix::<f64>::zeros(nf, nf);
        for (a, &i) in free.iter().enumerate() {
            for (b, &j) in free.iter().enumerate() {
                hff[(a, b)] = h[(i, j)];
            }
        }
        let rhs = nalgebra::DVector::from_iterator(nf, free.iter().map(|&i| -p.g[i]));
        let max_diag = (0..nf).map(|a| hff[(a, a)].abs()).fold(1e-12, f64::max);
        let mut shift = 0.0;
        for _ in 0..12 {
            let mut trial = hff.clone();
            for a in 0..nf {
                trial[(a, a)] += shift;
            }
            if let Some(chol) = trial.cholesky() {
                let sol = chol.solve(&rhs);
                if sol.iter().all(|v| v.is_finite()) {
                    for (a, &i) in free.iter().enumerate() {
                        d[i] = sol[a];
                    }
                    return d;
                }
            }
            shift = if shift == 0.0 {
                1e-10 * max_diag
            } else {
                shift * 100.0
            };
        }
        for &i in &free {
            d[i] = -p.g[i] / h[(i, i)].max(1e-12);
        }
        d
    }

    /// Armijo search along the projection arc `P(x + t d)`.
    fn line_search(&self, p: &Point, d: &[f64]) -> Option<(Vec<f64>, f64, Vec<f64>, f64)> {
        let mut t = 1.0;
        for _ in 0..MAX_BACKTRACKS {
            let mut xt: Vec<f64> = p.x.iter().zip(d).map(|(x, di)| x + t * di).collect();
            self.project(&mut xt);
            let decrease: f64 =
                p.g.iter()
                    .zip(xt.iter().zip(&p.x))
                    .map(|(g, (a, b))| g * (a - b))
                    .sum();
            if decrease >= 0.0 {
                t *= 0.5;
                continue;
            }
            let (f, c, phi) = self.merit(&xt);
            if phi <= p.phi + ARMIJO * decrease {
                return Some((xt, f, c, phi));
            }
            t *= 0.5;
        }
        None
    }

    fn inner(&mut self, mut p: Point, tol: f64, budget: usize) -> (Point, InnerEnd, f64) {
        let mut used = 0;
        loop {
            let pg = self.projected_gradient_norm(&p);
            if pg <= tol {
                return (p, InnerEnd::Converged, pg);
            }
            if used >= budget {
                return (p, InnerEnd::Budget, pg);
            }
            used += 1;
            self.inner_used += 1;

            let d = self.newton_direction(&p);
            let step = self.line_search(&p, &d).or_else(|| {
                let grad_step: Vec<f64> = p.g.iter().map(|g| -g).collect();
                self.line_search(&p, &grad_step)
            });
            let Some((xn, f, c, phi)) = step else {
                return (p, InnerEnd::Stalled, pg);
            };
            let next = self.complete(xn, f, c, phi);

            let s: Vec<f64> = next.x.iter().zip(&p.x).map(|(a, b)| a - b).collect();
            // Lagrangian-gradient difference at fixed multipliers next.y
            let mut jt_new = vec![0.0; self.n];
            let mut jt_old = vec![0.0; self.n];
            self.pattern
                .mul_transpose_vec(&next.jac, &next.y, &mut jt_new);
            self.pattern.mul_transpose_vec(&p.jac, &next.y, &mut jt_old);
            let yv: Vec<f64> = (0..self.n)
                .map(|i| (next.grad_f[i] + jt_new[i]) - (p.grad_f[i] + jt_old[i]))
                .collect();
            if dot(&s, &s) > 0.0 {
                self.qn.update(s, yv);
            }
            p = next;
        }
    }

    fn execute(&mut self, x0: &[f64]) -> SolveResult {
        let opts = self.opts;
        let mut x = x0.to_vec();
        self.project(&mut x);
        let mut p = self.evaluate(x);
        let mut log = Vec::new();
        let mut status = SolveStatus::MaxIterations;
        let mut tol = 1e-1_f64.max(opts.optimality_tol);
        let mut prev_measure = f64::INFINITY;
        let mut stationarity = f64::INFINITY;
        let mut stalls = 0;
        let mut iterations = 0;

        if !p.phi.is_finite() {
            status = SolveStatus::NumericalFailure;
        } else {
            for k in 1..=opts.max_iterations {
                iterations = k;
                let x_prev = p.x.clone();
                let budget = opts.max_inner_iterations.saturating_sub(self.inner_used);
                let (q, end, pg) = self.inner(p, tol, budget);
                p = q;

                let lambda_new: Vec<f64> =
                    p.c.iter()
                        .enumerate()
                        .map(|(i, &ci)| self.estimate(i, ci))
                        .collect();
                let violation = max_violation(&p.c, &self.kinds);
                let mut measure: f64 = 0.0;
                let mut complementarity: f64 = 0.0;
                for i in 0..self.m {
                    match self.kinds[i] {
                        ConstraintKind::Equality => measure = measure.max(p.c[i].abs()),
                        ConstraintKind::Inequality => {
                            measure = measure.max((-p.c[i]).min(self.lambda[i] / self.rho).abs());
                            complementarity =
                                complementarity.max((-p.c[i]).min(lambda_new[i]).abs());
                        }
                    }
                }
                stationarity = pg;
                let step_norm =
                    p.x.iter()
                        .zip(&x_prev)
                        .map(|(a, b)| (a - b).abs())
                        .fold(0.0, f64::max);
                log.push(IterationRecord {
                    iteration: k,
                    objective: p.f,
                    max_violation: violation,
                    stationarity,
                    step_norm,
                    penalty: self.rho,
                    inner_iterations: self.inner_used,
                    constraint_evals: self.problem.constraint_evals(),
                    jacobian_evals: self.problem.jacobian_evals(),
                });
                if opts.verbosity > 0 {
                    info!(
                        "outer {k:3}: f = {:.10e} viol = {violation:.3e} pg = {pg:.3e} rho = {:.1e} inner = {}",
                        p.f, self.rho, self.inner_used
                    );
                } else {
                    debug!(
                        "outer {k:3}: f = {:.10e} viol = {violation:.3e} pg = {pg:.3e} rho = {:.1e}",
                        p.f, self.rho
                    );
                }

                if violation <= opts.feasibility_tol
                    && pg <= opts.optimality_tol
                    && complementarity <= opts.optimality_tol.max(opts.feasibility_tol)
                {
                    self.lambda = lambda_new;
                    status = SolveStatus::Converged;
                    break;
                }
                if matches!(end, InnerEnd::Budget) {
                    status = SolveStatus::MaxIterations;
                    self.lambda = lambda_new;
                    break;
                }
                if matches!(end, InnerEnd::Stalled) {
                    stalls += 1;
                } else {
                    stalls = 0;
                }

                let progressed = measure <= 0.25 * prev_measure;
                if !progressed || stalls > 0 {
                    if self.rho >= opts.max_penalty
                        && (stalls > 2 || violation > opts.feasibility_tol)
                    {
                        status = if stalls > 2 {
                            SolveStatus::NumericalFailure
                        } else {
                            SolveStatus::Infeasible
                        };
                        self.lambda = lambda_new;
                        break;
                    }
                    self.rho = (self.rho * opts.penalty_growth).min(opts.max_penalty);
                }
                prev_measure = measure;
                self.lambda = lambda_new
                    .into_iter()
                    .map(|l| l.clamp(-MULTIPLIER_CAP, MULTIPLIER_CAP))
                    .collect();
                tol = (tol * 0.1).max(opts.optimality_tol);
                self.refresh(&mut p);
                if !p.phi.is_finite() {
                    status = SolveStatus::NumericalFailure;
                    break;
                }
            }
        }

        let violation = max_violation(&p.c, &self.kinds);
        SolveResult {
            status,
            objective: p.f,
            max_violation: violation,
            stationarity,
            iterations,
            inner_iterations: self.inner_used,
            multipliers: self.lambda.clone(),
            wall_time_s: 0.0,
            log,
            x: p.x,
        }
    }
}
