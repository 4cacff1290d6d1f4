//! Primal-dual interior-point method with a filter-free l1 merit search.
//!
//! Inequality rows `c_i(x) <= 0` become `c_i(x) + s_i = 0` with `s_i >= 0`;
//! finite variable bounds and slacks carry log-barrier terms. Each iteration
//! solves the regularized primal-dual system
//!
//! ```text
//! [ W + Sigma + dw I    J^T ] [dx]   [ -(grad phi + J^T lambda) ]
//! [ J                  -D   ] [dl] = [ -c~                      ]
//! ```
//!
//! with the slack block eliminated into `D`. `W` is the Lagrangian Hessian
//! from colored Jacobian differences. The diagonal shift `dw` is raised until
//! the factorization has exactly as many positive pivots as free variables.

use std::time::Instant;

use log::{debug, info};

use super::hessian::DifferenceHessian;
use super::ldl::EnvelopeLdl;
use super::{
    check_dimensions, max_violation, ConstraintKind, Counted, IterationRecord, NlpProblem,
    NlpSolver, SolveResult, SolveStatus, SolverOptions,
};
use crate::error::Result;

pub const INTERIOR_POINT: &str = "interior_point";

const BOUND_PUSH: f64 = 1e-2;
const KAPPA_EPS: f64 = 10.0;
const KAPPA_SIGMA: f64 = 1e10;
const TAU_MIN: f64 = 0.99;
const ARMIJO: f64 = 1e-4;
const MIN_STEP: f64 = 1e-14;
const GAMMA_THETA: f64 = 1e-5;
const GAMMA_PHI: f64 = 1e-8;
const GAMMA_ALPHA: f64 = 0.05;
const SWITCH_DELTA: f64 = 1.0;
const S_THETA: f64 = 1.1;
const S_PHI: f64 = 2.3;
const KAPPA_SOC: f64 = 0.99;
const MAX_SOC: usize = 4;
const MAX_RESTORATION: usize = 100;
const DELTA_C: f64 = 1e-9;
const MAX_MULTIPLIER_INIT: f64 = 1e3;

#[derive(Debug, Default, Clone, Copy)]
pub struct InteriorPoint;

impl NlpSolver for InteriorPoint {
    fn name(&self) -> &str {
        INTERIOR_POINT
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

struct Run<'a> {
    problem: &'a Counted<'a>,
    opts: &'a SolverOptions,
    n: usize,
    m: usize,
    lo: Vec<f64>,
    hi: Vec<f64>,
    kinds: Vec<ConstraintKind>,
    /// Indices of variables with distinct bounds.
    free: Vec<usize>,
    /// Slack index of each row (inequalities only).
    slack_of: Vec<Option<usize>>,
    hessian: DifferenceHessian,
    kkt: EnvelopeLdl,
    /// KKT entry count taken by the Hessian; Jacobian entries follow.
    n_hess_entries: usize,
    hess_map: Vec<Option<usize>>,
    jac_map: Vec<Option<usize>>,
    last_shift: f64,
    factorizations: usize,
}

/// Primal-dual iterate with cached function values.
#[derive(Clone)]
struct Iterate {
    x: Vec<f64>,
    s: Vec<f64>,
    lambda: Vec<f64>,
    zl: Vec<f64>,
    zu: Vec<f64>,
    zs: Vec<f64>,
    f: f64,
    c: Vec<f64>,
    grad: Vec<f64>,
    jac: Vec<f64>,
}

/// Pairs of (infeasibility, barrier objective) that later iterates must improve on.
struct Filter {
    entries: Vec<(f64, f64)>,
    theta_max: f64,
    theta_min: f64,
}

impl Filter {
    fn new(theta0: f64) -> Self {
        Self {
            entries: Vec::new(),
            theta_max: 1e4 * theta0.max(1.0),
            theta_min: 1e-4 * theta0.max(1.0),
        }
    }

    fn acceptable(&self, theta: f64, phi: f64) -> bool {
        theta <= self.theta_max && self.entries.iter().all(|&(t, p)| theta < t || phi < p)
    }

    fn add(&mut self, theta: f64, phi: f64) {
        let entry = ((1.0 - GAMMA_THETA) * theta, phi - GAMMA_PHI * theta);
        self.entries.retain(|&(t, p)| t < entry.0 || p < entry.1);
        self.entries.push(entry);
    }
}

type Trial = (Vec<f64>, Vec<f64>, f64, Vec<f64>);

struct Direction {
    dx: Vec<f64>,
    ds: Vec<f64>,
    dl: Vec<f64>,
    dzl: Vec<f64>,
    dzu: Vec<f64>,
    dzs: Vec<f64>,
}

impl<'a> Run<'a> {
    fn new(problem: &'a Counted<'a>, opts: &'a SolverOptions) -> Self {
        let n = problem.num_variables();
        let m = problem.num_constraints();
        let (lo, hi) = problem.variable_bounds();
        let kinds = problem.constraint_kinds();
        let free: Vec<usize> = (0..n).filter(|&i| lo[i] < hi[i]).collect();
        let mut position = vec![None; n];
        for (k, &i) in free.iter().enumerate() {
            position[i] = Some(k);
        }
        let mut slack_of = vec![None; m];
        let mut ns = 0;
        for (r, k) in kinds.iter().enumerate() {
            if *k == ConstraintKind::Inequality {
                slack_of[r] = Some(ns);
                ns += 1;
            }
        }
        let pattern = problem.jacobian_pattern();
        let hessian = DifferenceHessian::new(pattern, problem.objective_gradient_pattern());
        let nf = free.len();
        let mut entries = Vec::new();
        let mut hess_map = Vec::with_capacity(hessian.entries().len());
        for &(a, b) in hessian.entries() {
            match (position[a], position[b]) {
                (Some(pa), Some(pb)) => {
                    hess_map.push(Some(entries.len()));
                    entries.push((pa, pb));
                }
                _ => hess_map.push(None),
            }
        }
        let n_hess_entries = entries.len();
        let mut jac_map = Vec::with_capacity(pattern.nnz());
        for (r, c) in pattern.entries() {
            match position[c] {
                Some(pc) => {
                    jac_map.push(Some(entries.len()));
                    entries.push((nf + r, pc));
                }
                None => jac_map.push(None),
            }
        }
        let kkt = EnvelopeLdl::new(nf + m, &entries);
        debug!(
            "interior point: {nf} free variables, {m} rows, envelope {}",
            kkt.envelope_size()
        );
        Self {
            problem,
            opts,
            n,
            m,
            lo,
            hi,
            kinds,
            free,
            slack_of,
            hessian,
            kkt,
            n_hess_entries,
            hess_map,
            jac_map,
            last_shift: 0.0,
            factorizations: 0,
        }
    }

    fn n_slack(&self) -> usize {
        self.slack_of.iter().flatten().count()
    }

    fn has_lo(&self, i: usize) -> bool {
        self.lo[i].is_finite() && self.lo[i] < self.hi[i]
    }

    fn has_hi(&self, i: usize) -> bool {
        self.hi[i].is_finite() && self.lo[i] < self.hi[i]
    }

    /// Moves `x` strictly inside its bounds.
    fn push_inside(&self, x: &mut [f64]) {
        for i in 0..self.n {
            let (l, u) = (self.lo[i], self.hi[i]);
            if l == u {
                x[i] = l;
                continue;
            }
            let width = u - l;
            if l.is_finite() {
                let p = (BOUND_PUSH * l.abs().max(1.0)).min(BOUND_PUSH * width);
                x[i] = x[i].max(l + p);
            }
            if u.is_finite() {
                let p = (BOUND_PUSH * u.abs().max(1.0)).min(BOUND_PUSH * width);
                x[i] = x[i].min(u - p);
            }
        }
    }

    fn evaluate(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let f = self.problem.objective(x);
        let mut c = vec![0.0; self.m];
        self.problem.constraints(x, &mut c);
        (f, c)
    }

    fn derivatives(&self, it: &mut Iterate) {
        self.problem.objective_gradient(&it.x, &mut it.grad);
        self.problem.jacobian_values(&it.x, &mut it.jac);
    }

    /// Constraint residual including slacks.
    fn residual(&self, c: &[f64], s: &[f64]) -> Vec<f64> {
        (0..self.m)
            .map(|r| match self.slack_of[r] {
                Some(k) => c[r] + s[k],
                None => c[r],
            })
            .collect()
    }

    fn barrier(&self, f: f64, x: &[f64], s: &[f64], mu: f64) -> f64 {
        let mut phi = f;
        for i in 0..self.n {
            if self.has_lo(i) {
                phi -= mu * (x[i] - self.lo[i]).ln();
            }
            if self.has_hi(i) {
                phi -= mu * (self.hi[i] - x[i]).ln();
            }
        }
        for &v in s {
            phi -= mu * v.ln();
        }
        phi
    }

    /// `grad f + J^T lambda` over all variables.
    fn lagrangian_gradient(&self, it: &Iterate) -> Vec<f64> {
        let mut g = vec![0.0; self.n];
        self.problem
            .jacobian_pattern()
            .mul_transpose_vec(&it.jac, &it.lambda, &mut g);
        for (gi, fi) in g.iter_mut().zip(&it.grad) {
            *gi += fi;
        }
        g
    }

    /// Scaled optimality error at barrier parameter `mu` and its components
    /// (dual, primal, complementarity).
    fn error(&self, it: &Iterate, mu: f64) -> (f64, f64, f64, f64) {
        let gl = self.lagrangian_gradient(it);
        let mut dual: f64 = 0.0;
        for &i in &self.free {
            dual = dual.max((gl[i] - it.zl[i] + it.zu[i]).abs());
        }
        for r in 0..self.m {
            if let Some(k) = self.slack_of[r] {
                dual = dual.max((it.lambda[r] - it.zs[k]).abs());
            }
        }
        let primal = self
            .residual(&it.c, &it.s)
            .iter()
            .fold(0.0_f64, |a, v| a.max(v.abs()));
        let mut compl: f64 = 0.0;
        let mut z_sum = 0.0;
        let mut z_count = 0usize;
        for i in 0..self.n {
            if self.has_lo(i) {
                compl = compl.max((it.zl[i] * (it.x[i] - self.lo[i]) - mu).abs());
                z_sum += it.zl[i].abs();
                z_count += 1;
            }
            if self.has_hi(i) {
                compl = compl.max((it.zu[i] * (self.hi[i] - it.x[i]) - mu).abs());
                z_sum += it.zu[i].abs();
                z_count += 1;
            }
        }
        for k in 0..it.s.len() {
            compl = compl.max((it.zs[k] * it.s[k] - mu).abs());
            z_sum += it.zs[k].abs();
            z_count += 1;
        }
        let l_sum: f64 = it.lambda.iter().map(|v| v.abs()).sum();
        let s_max = 100.0;
        let sd = ((l_sum + z_sum) / (self.m + z_count).max(1) as f64).max(s_max) / s_max;
        let sc = (z_sum / z_count.max(1) as f64).max(s_max) / s_max;
        let e = (dual / sd).max(primal).max(compl / sc);
        (e, dual / sd, primal, compl / sc)
    }

    /// Factorizes the primal-dual matrix, correcting the inertia.
    /// Returns the diagonal shift used on the variable block.
    fn factor(&mut self, it: &Iterate, h: &[f64], mu: f64, extra: f64) -> Option<f64> {
        let nf = self.free.len();
        let mut values = vec![0.0; self.n_hess_entries + self.jac_map.iter().flatten().count()];
        for (v, slot) in h.iter().zip(&self.hess_map) {
            if let Some(s) = slot {
                values[*s] += v;
            }
        }
        for (v, slot) in it.jac.iter().zip(&self.jac_map) {
            if let Some(s) = slot {
                values[*s] += v;
            }
        }
        let sigma = self.sigma_x(it);
        let sigma_s = self.sigma_s(it);
        let mut dc = DELTA_C;
        let mut dw = 0.0;
        for attempt in 0..60 {
            let shift = self.shifts(&sigma, &sigma_s, dw + extra, dc);
            self.factorizations += 1;
            let inertia = self.kkt.factor(&values, &shift, 1e-30);
            if inertia.positive == nf && inertia.negative == self.m && inertia.zero == 0 {
                if dw > 0.0 {
                    self.last_shift = dw;
                }
                return Some(dw);
            }
            if inertia.zero > 0 && attempt == 0 {
                dc = 1e-8 * mu.powf(0.25).max(1e-2);
            }
            dw = if dw == 0.0 {
                if self.last_shift == 0.0 {
                    1e-4
                } else {
                    (self.last_shift / 3.0).max(1e-20)
                }
            } else if self.last_shift == 0.0 {
                dw * 100.0
            } else {
                dw * 8.0
            };
            if dw > 1e40 {
                return None;
            }
        }
        None
    }

    fn sigma_x(&self, it: &Iterate) -> Vec<f64> {
        (0..self.n)
            .map(|i| {
                let mut s = 0.0;
                if self.has_lo(i) {
                    s += it.zl[i] / (it.x[i] - self.lo[i]);
                }
                if self.has_hi(i) {
                    s += it.zu[i] / (self.hi[i] - it.x[i]);
                }
                s
            })
            .collect()
    }

    fn sigma_s(&self, it: &Iterate) -> Vec<f64> {
        it.zs.iter().zip(&it.s).map(|(z, s)| z / s).collect()
    }

    fn shifts(&self, sigma: &[f64], sigma_s: &[f64], dw: f64, dc: f64) -> Vec<f64> {
        let mut shift = Vec::with_capacity(self.free.len() + self.m);
        for &i in &self.free {
            shift.push(sigma[i] + dw);
        }
        for r in 0..self.m {
            let d = match self.slack_of[r] {
                Some(k) => dc + 1.0 / (sigma_s[k] + dw),
                None => dc,
            };
            shift.push(-d);
        }
        shift
    }

    /// Newton direction with the current factorization.
    /// With `objective == false` the objective and multipliers are dropped,
    /// giving a minimum-norm feasibility step.
    fn direction(&self, it: &Iterate, mu: f64, dw: f64, rc: &[f64], objective: bool) -> Direction {
        let nf = self.free.len();
        let gl = if objective {
            self.lagrangian_gradient(it)
        } else {
            vec![0.0; self.n]
        };
        let lambda = |r: usize| if objective { it.lambda[r] } else { 0.0 };
        let sigma_s = self.sigma_s(it);
        let mut rhs = vec![0.0; nf + self.m];
        for (k, &i) in self.free.iter().enumerate() {
            let mut g = gl[i];
            if self.has_lo(i) {
                g -= mu / (it.x[i] - self.lo[i]);
            }
            if self.has_hi(i) {
                g += mu / (self.hi[i] - it.x[i]);
            }
            rhs[k] = -g;
        }
        for r in 0..self.m {
            rhs[nf + r] = match self.slack_of[r] {
                Some(k) => -rc[r] + (lambda(r) - mu / it.s[k]) / (sigma_s[k] + dw),
                None => -rc[r],
            };
        }
        let sol = self.kkt.solve(&rhs);
        let mut dx = vec![0.0; self.n];
        for (k, &i) in self.free.iter().enumerate() {
            dx[i] = sol[k];
        }
        let dl: Vec<f64> = sol[nf..].to_vec();
        let mut ds = vec![0.0; it.s.len()];
        for r in 0..self.m {
            if let Some(k) = self.slack_of[r] {
                ds[k] = (-(lambda(r) - mu / it.s[k]) - dl[r]) / (sigma_s[k] + dw);
            }
        }
        let mut dzl = vec![0.0; self.n];
        let mut dzu = vec![0.0; self.n];
        for i in 0..self.n {
            if self.has_lo(i) {
                let d = it.x[i] - self.lo[i];
                dzl[i] = mu / d - it.zl[i] - it.zl[i] / d * dx[i];
            }
            if self.has_hi(i) {
                let d = self.hi[i] - it.x[i];
                dzu[i] = mu / d - it.zu[i] + it.zu[i] / d * dx[i];
            }
        }
        let dzs = (0..it.s.len())
            .map(|k| mu / it.s[k] - it.zs[k] - it.zs[k] / it.s[k] * ds[k])
            .collect();
        Direction {
            dx,
            ds,
            dl,
            dzl,
            dzu,
            dzs,
        }
    }

    /// Largest step in (0, 1] keeping primal slacks above `1 - tau` of their value.
    fn primal_max_step(&self, it: &Iterate, d: &Direction, tau: f64) -> f64 {
        let mut a: f64 = 1.0;
        for i in 0..self.n {
            if self.has_lo(i) && d.dx[i] < 0.0 {
                a = a.min(-tau * (it.x[i] - self.lo[i]) / d.dx[i]);
            }
            if self.has_hi(i) && d.dx[i] > 0.0 {
                a = a.min(tau * (self.hi[i] - it.x[i]) / d.dx[i]);
            }
        }
        for k in 0..it.s.len() {
            if d.ds[k] < 0.0 {
                a = a.min(-tau * it.s[k] / d.ds[k]);
            }
        }
        a
    }

    fn dual_max_step(&self, it: &Iterate, d: &Direction, tau: f64) -> f64 {
        let mut a: f64 = 1.0;
        let mut limit = |z: f64, dz: f64| {
            if dz < 0.0 {
                a = a.min(-tau * z / dz);
            }
        };
        for i in 0..self.n {
            if self.has_lo(i) {
                limit(it.zl[i], d.dzl[i]);
            }
            if self.has_hi(i) {
                limit(it.zu[i], d.dzu[i]);
            }
        }
        for k in 0..it.s.len() {
            limit(it.zs[k], d.dzs[k]);
        }
        a
    }

    /// Keeps bound multipliers within a factor of their barrier-implied values.
    fn safeguard_duals(&self, it: &mut Iterate, mu: f64) {
        let clip = |z: f64, dist: f64| {
            let t = mu / dist;
            z.clamp(t / KAPPA_SIGMA, t * KAPPA_SIGMA)
        };
        for i in 0..self.n {
            if self.has_lo(i) {
                it.zl[i] = clip(it.zl[i], it.x[i] - self.lo[i]);
            }
            if self.has_hi(i) {
                it.zu[i] = clip(it.zu[i], self.hi[i] - it.x[i]);
            }
        }
        for k in 0..it.s.len() {
            it.zs[k] = clip(it.zs[k], it.s[k]);
        }
    }

    /// Least-squares multiplier estimate, discarded when too large.
    fn initial_multipliers(&mut self, it: &Iterate) -> Vec<f64> {
        let nf = self.free.len();
        let h = vec![0.0; self.hessian.entries().len()];
        let mut values = vec![0.0; self.n_hess_entries + self.jac_map.iter().flatten().count()];
        for (v, slot) in h.iter().zip(&self.hess_map) {
            if let Some(s) = slot {
                values[*s] += v;
            }
        }
        for (v, slot) in it.jac.iter().zip(&self.jac_map) {
            if let Some(s) = slot {
                values[*s] += v;
            }
        }
        let mut shift = vec![1.0; nf];
        shift.extend(std::iter::repeat_n(-DELTA_C, self.m));
        self.factorizations += 1;
        let inertia = self.kkt.factor(&values, &shift, 1e-30);
        if inertia.zero > 0 {
            return vec![0.0; self.m];
        }
        let mut rhs = vec![0.0; nf + self.m];
        for (k, &i) in self.free.iter().enumerate() {
            rhs[k] = -(it.grad[i] - it.zl[i] + it.zu[i]);
        }
        let sol = self.kkt.solve(&rhs);
        let lambda: Vec<f64> = sol[nf..].to_vec();
        let too_big = lambda
            .iter()
            .any(|v| !v.is_finite() || v.abs() > MAX_MULTIPLIER_INIT);
        let wrong_sign = (0..self.m).any(|r| self.slack_of[r].is_some() && lambda[r] < 0.0);
        if too_big {
            vec![0.0; self.m]
        } else if wrong_sign {
            (0..self.m)
                .map(|r| match self.slack_of[r] {
                    Some(_) => lambda[r].max(0.0),
                    None => lambda[r],
                })
                .collect()
        } else {
            lambda
        }
    }

    fn execute(&mut self, x0: &[f64]) -> SolveResult {
        let opts = self.opts;
        let tol = opts.optimality_tol;
        let mut x = x0.to_vec();
        self.push_inside(&mut x);
        let (f, c) = self.evaluate(&x);
        let ns = self.n_slack();
        let nnz = self.problem.jacobian_pattern().nnz();
        let mut s = vec![0.0; ns];
        for r in 0..self.m {
            if let Some(k) = self.slack_of[r] {
                s[k] = (-c[r]).max(BOUND_PUSH * c[r].abs().max(1.0));
            }
        }
        let mut it = Iterate {
            x,
            s,
            lambda: vec![0.0; self.m],
            zl: (0..self.n)
                .map(|i| if self.has_lo(i) { 1.0 } else { 0.0 })
                .collect(),
            zu: (0..self.n)
                .map(|i| if self.has_hi(i) { 1.0 } else { 0.0 })
                .collect(),
            zs: vec![1.0; ns],
            f,
            c,
            grad: vec![0.0; self.n],
            jac: vec![0.0; nnz],
        };
        let mut log = Vec::new();
        if !it.f.is_finite() || it.c.iter().any(|v| !v.is_finite()) {
            return self.finish(it, SolveStatus::NumericalFailure, 0, f64::INFINITY, log);
        }
        self.derivatives(&mut it);
        it.lambda = self.initial_multipliers(&it);

        let mut mu = opts.initial_barrier;
        let theta_init: f64 = self.residual(&it.c, &it.s).iter().map(|v| v.abs()).sum();
        let mut filter = Filter::new(theta_init);
        let mut status = SolveStatus::MaxIterations;
        let mut iterations = 0;
        let mut stationarity = f64::INFINITY;
        let mut step_norm = 0.0;
        for k in 0..=opts.max_iterations {
            let (e0, dual, _, compl) = self.error(&it, 0.0);
            let viol = max_violation(&it.c, &self.kinds);
            stationarity = dual;
            log.push(IterationRecord {
                iteration: k,
                objective: it.f,
                max_violation: viol,
                stationarity: dual,
                step_norm,
                penalty: mu,
                inner_iterations: self.factorizations,
                constraint_evals: self.problem.constraint_evals(),
                jacobian_evals: self.problem.jacobian_evals(),
            });
            let line = format!(
                "iter {k:3}: f = {:.10e} viol = {viol:.3e} dual = {dual:.3e} compl = {compl:.3e} mu = {mu:.1e}",
                it.f
            );
            if opts.verbosity > 0 {
                info!("{line}");
            } else {
                debug!("{line}");
            }
            if viol <= opts.feasibility_tol && dual <= tol && compl <= tol && e0.is_finite() {
                status = SolveStatus::Converged;
                break;
            }
            if k == opts.max_iterations {
                break;
            }
            iterations = k + 1;

            // barrier update
            loop {
                let (e_mu, ..) = self.error(&it, mu);
                if e_mu > KAPPA_EPS * mu || mu <= tol / 10.0 {
                    break;
                }
                mu = (tol / 10.0).max((0.2 * mu).min(mu.powf(1.5)));
                filter.entries.clear();
            }

            let h = self.hessian.evaluate(
                self.problem,
                self.problem.jacobian_pattern(),
                &it.x,
                &it.jac,
                &it.grad,
                &it.lambda,
            );
            let Some(dw) = self.factor(&it, &h, mu, 0.0) else {
                status = SolveStatus::NumericalFailure;
                break;
            };
            let rc = self.residual(&it.c, &it.s);
            let d = self.direction(&it, mu, dw, &rc, true);
            if d.dx.iter().chain(&d.dl).any(|v| !v.is_finite()) {
                status = SolveStatus::NumericalFailure;
                break;
            }

            let tau = TAU_MIN.max(1.0 - mu);
            let search = self.filter_search(&it, d, &rc, mu, dw, tau, &mut filter);
            let (alpha, trial, d) = match search {
                Some(v) => v,
                None => {
                    debug!("iteration {k}: entering feasibility restoration");
                    match self.restore(&it, mu, &mut filter) {
                        Ok(next) => {
                            step_norm = next
                                .x
                                .iter()
                                .zip(&it.x)
                                .fold(0.0_f64, |a, (u, v)| a.max((u - v).abs()));
                            it = next;
                            self.derivatives(&mut it);
                            it.lambda = self.initial_multipliers(&it);
                            continue;
                        }
                        Err(failure) => {
                            status = failure;
                            debug!("restoration failed at iteration {k}: {failure:?}");
                            break;
                        }
                    }
                }
            };
            let (xt, st, ft, ct) = trial;
            let a_dual = self.dual_max_step(&it, &d, tau);
            step_norm = xt
                .iter()
                .zip(&it.x)
                .fold(0.0_f64, |a, (u, v)| a.max((u - v).abs()));
            it.x = xt;
            it.s = st;
            it.f = ft;
            it.c = ct;
            for r in 0..self.m {
                it.lambda[r] += alpha * d.dl[r];
            }
            for i in 0..self.n {
                it.zl[i] += a_dual * d.dzl[i];
                it.zu[i] += a_dual * d.dzu[i];
            }
            for k in 0..ns {
                it.zs[k] += a_dual * d.dzs[k];
            }
            self.safeguard_duals(&mut it, mu);
            self.derivatives(&mut it);
        }
        self.finish(it, status, iterations, stationarity, log)
    }

    fn theta(&self, c: &[f64], s: &[f64]) -> f64 {
        self.residual(c, s).iter().map(|v| v.abs()).sum()
    }

    /// Directional derivative of the barrier objective along `d`.
    fn barrier_slope(&self, it: &Iterate, d: &Direction, mu: f64) -> f64 {
        let mut slope = 0.0;
        for i in 0..self.n {
            let mut g = it.grad[i];
            if self.has_lo(i) {
                g -= mu / (it.x[i] - self.lo[i]);
            }
            if self.has_hi(i) {
                g += mu / (self.hi[i] - it.x[i]);
            }
            slope += g * d.dx[i];
        }
        for k in 0..it.s.len() {
            slope -= mu / it.s[k] * d.ds[k];
        }
        slope
    }

    fn trial(&self, it: &Iterate, d: &Direction, alpha: f64) -> Option<Trial> {
        let xt: Vec<f64> =
            it.x.iter()
                .zip(&d.dx)
                .map(|(x, dx)| x + alpha * dx)
                .collect();
        let st: Vec<f64> =
            it.s.iter()
                .zip(&d.ds)
                .map(|(s, ds)| s + alpha * ds)
                .collect();
        let (ft, ct) = self.evaluate(&xt);
        (ft.is_finite() && ct.iter().all(|v| v.is_finite())).then_some((xt, st, ft, ct))
    }

    /// Backtracking filter search with second-order corrections.
    #[allow(clippy::too_many_arguments)]
    fn filter_search(
        &self,
        it: &Iterate,
        d: Direction,
        rc: &[f64],
        mu: f64,
        dw: f64,
        tau: f64,
        filter: &mut Filter,
    ) -> Option<(f64, Trial, Direction)> {
        let theta0: f64 = rc.iter().map(|v| v.abs()).sum();
        let phi0 = self.barrier(it.f, &it.x, &it.s, mu);
        let slope = self.barrier_slope(it, &d, mu);
        let alpha_min = if slope < 0.0 {
            GAMMA_ALPHA
                * GAMMA_THETA
                    .min(GAMMA_PHI * theta0 / -slope)
                    .min(SWITCH_DELTA * theta0.powf(S_THETA) / (-slope).powf(S_PHI))
        } else {
            GAMMA_ALPHA * GAMMA_THETA
        }
        .max(MIN_STEP);
        // Some(f_type) when accepted
        let check = |theta: f64, phi: f64, alpha: f64| -> Option<bool> {
            if !phi.is_finite() || !filter.acceptable(theta, phi) {
                return None;
            }
            let switching =
                slope < 0.0 && alpha * (-slope).powf(S_PHI) > SWITCH_DELTA * theta0.powf(S_THETA);
            if theta0 <= filter.theta_min && switching {
                return (phi <= phi0 + ARMIJO * alpha * slope).then_some(true);
            }
            (theta <= (1.0 - GAMMA_THETA) * theta0 || phi <= phi0 - GAMMA_PHI * theta0)
                .then_some(false)
        };
        let mut alpha = self.primal_max_step(it, &d, tau);
        let mut first = true;
        while alpha >= alpha_min {
            if let Some(t) = self.trial(it, &d, alpha) {
                let theta = self.theta(&t.3, &t.1);
                let phi = self.barrier(t.2, &t.0, &t.1, mu);
                if let Some(f_type) = check(theta, phi, alpha) {
                    if !f_type {
                        filter.add(theta0, phi0);
                    }
                    return Some((alpha, t, d));
                }
                if first && theta >= theta0 {
                    let mut c_soc: Vec<f64> = rc
                        .iter()
                        .zip(self.residual(&t.3, &t.1))
                        .map(|(a, b)| alpha * a + b)
                        .collect();
                    let mut theta_old = theta;
                    for _ in 0..MAX_SOC {
                        let ds = self.direction(it, mu, dw, &c_soc, true);
                        let a_soc = self.primal_max_step(it, &ds, tau);
                        let Some(ts) = self.trial(it, &ds, a_soc) else {
                            break;
                        };
                        let theta_soc = self.theta(&ts.3, &ts.1);
                        let phi_soc = self.barrier(ts.2, &ts.0, &ts.1, mu);
                        if let Some(f_type) = check(theta_soc, phi_soc, alpha) {
                            if !f_type {
                                filter.add(theta0, phi0);
                            }
                            return Some((a_soc, ts, ds));
                        }
                        if theta_soc > KAPPA_SOC * theta_old {
                            break;
                        }
                        theta_old = theta_soc;
                        c_soc = c_soc
                            .iter()
                            .zip(self.residual(&ts.3, &ts.1))
                            .map(|(a, b)| a_soc * a + b)
                            .collect();
                    }
                }
            }
            first = false;
            alpha *= 0.5;
        }
        None
    }

    /// Reduces infeasibility with damped minimum-norm steps until the point
    /// is acceptable to the filter.
    /// Fails with `Infeasible` when no step reduces the infeasibility.
    fn restore(
        &mut self,
        start: &Iterate,
        mu: f64,
        filter: &mut Filter,
    ) -> std::result::Result<Iterate, SolveStatus> {
        let theta_start = self.theta(&start.c, &start.s);
        let phi_start = self.barrier(start.f, &start.x, &start.s, mu);
        filter.add(theta_start, phi_start);
        let zeta = mu.sqrt();
        let zero_h = vec![0.0; self.hessian.entries().len()];
        let mut it = start.clone();
        for _ in 0..MAX_RESTORATION {
            let theta = self.theta(&it.c, &it.s);
            let dw = self
                .factor(&it, &zero_h, mu, zeta)
                .ok_or(SolveStatus::NumericalFailure)?;
            let rc = self.residual(&it.c, &it.s);
            let d = self.direction(&it, mu, dw + zeta, &rc, false);
            let tau = TAU_MIN.max(1.0 - mu);
            let mut alpha = self.primal_max_step(&it, &d, tau);
            let mut next = None;
            while alpha >= MIN_STEP {
                if let Some(t) = self.trial(&it, &d, alpha) {
                    if self.theta(&t.3, &t.1) <= (1.0 - 1e-4 * alpha) * theta {
                        next = Some(t);
                        break;
                    }
                }
                alpha *= 0.5;
            }
            let (xt, st, ft, ct) = next.ok_or(SolveStatus::Infeasible)?;
            let a_dual = self.dual_max_step(&it, &d, tau);
            it.x = xt;
            it.s = st;
            it.f = ft;
            it.c = ct;
            for i in 0..self.n {
                it.zl[i] += a_dual * d.dzl[i];
                it.zu[i] += a_dual * d.dzu[i];
            }
            for k in 0..it.s.len() {
                it.zs[k] += a_dual * d.dzs[k];
            }
            self.safeguard_duals(&mut it, mu);
            self.derivatives(&mut it);
            let theta = self.theta(&it.c, &it.s);
            let phi = self.barrier(it.f, &it.x, &it.s, mu);
            if theta <= 0.9 * theta_start && filter.acceptable(theta, phi) {
                return Ok(it);
            }
        }
        Err(SolveStatus::Infeasible)
    }

    fn finish(
        &self,
        it: Iterate,
        status: SolveStatus,
        iterations: usize,
        stationarity: f64,
        log: Vec<IterationRecord>,
    ) -> SolveResult {
        SolveResult {
            status,
            objective: it.f,
            max_violation: max_violation(&it.c, &self.kinds),
            stationarity,
            iterations,
            inner_iterations: self.factorizations,
            multipliers: it.lambda,
            wall_time_s: 0.0,
            x: it.x,
            log,
        }
    }
}
