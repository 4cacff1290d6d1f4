//! Nonlinear-programming interface and the built-in solvers.
//!
//! A problem exposes dimensions, bounds, sparsity and pure callbacks through
//! [`NlpProblem`]. Any engine implementing [`NlpSolver`] can be registered
//! in a [`SolverRegistry`] and selected by name from [`SolverOptions`].

mod auglag;
mod hessian;
mod ipm;
mod lbfgs;
mod ldl;
mod sparse;

use std::collections::BTreeMap;
use std::io::Write;
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use auglag::AugmentedLagrangian;
pub use hessian::DifferenceHessian;
pub use ipm::{InteriorPoint, INTERIOR_POINT};
pub use sparse::SparsityPattern;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConstraintKind {
    /// `c(x) = 0`
    Equality,
    /// `c(x) <= 0`
    Inequality,
}

/// Callbacks describing `min f(x)` subject to constraints and simple bounds.
///
/// Every callback must be a pure function of `x`.
pub trait NlpProblem: Sync {
    fn num_variables(&self) -> usize;
    fn num_constraints(&self) -> usize;
    /// Lower and upper variable bounds (infinite entries allowed).
    fn variable_bounds(&self) -> (Vec<f64>, Vec<f64>);
    fn constraint_kinds(&self) -> Vec<ConstraintKind>;
    fn objective(&self, x: &[f64]) -> f64;
    fn objective_gradient(&self, x: &[f64], grad: &mut [f64]);
    fn constraints(&self, x: &[f64], out: &mut [f64]);
    fn jacobian_pattern(&self) -> &SparsityPattern;
    /// Values in the storage order of [`NlpProblem::jacobian_pattern`].
    fn jacobian_values(&self, x: &[f64], values: &mut [f64]);
    /// Variables the objective depends on, if fewer than all.
    fn objective_gradient_pattern(&self) -> Option<Vec<usize>> {
        None
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverOptions {
    /// Outer (multiplier update) iterations.
    pub max_iterations: usize,
    /// Total inner iterations across the whole solve.
    pub max_inner_iterations: usize,
    pub feasibility_tol: f64,
    pub optimality_tol: f64,
    pub initial_penalty: f64,
    pub penalty_growth: f64,
    pub max_penalty: f64,
    pub lbfgs_memory: usize,
    pub hessian: HessianMode,
    /// Starting barrier parameter of the interior-point backend; small
    /// values suit warm starts.
    pub initial_barrier: f64,
    pub verbosity: u8,
    /// Name of the registered engine.
    pub backend: String,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            max_inner_iterations: 4000,
            feasibility_tol: 1e-6,
            optimality_tol: 1e-5,
            initial_penalty: 10.0,
            penalty_growth: 10.0,
            max_penalty: 1e10,
            lbfgs_memory: 8,
            hessian: HessianMode::FiniteDifference,
            initial_barrier: 0.1,
            verbosity: 0,
            backend: INTERIOR_POINT.to_string(),
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations < 1 {
            return Err(Error::validation("solver.max_iterations", "must be >= 1"));
        }
        if self.max_inner_iterations < 1 {
            return Err(Error::validation(
                "solver.max_inner_iterations",
                "must be >= 1",
            ));
        }
        for (f, v) in [
            ("solver.feasibility_tol", self.feasibility_tol),
            ("solver.optimality_tol", self.optimality_tol),
            ("solver.initial_penalty", self.initial_penalty),
            ("solver.max_penalty", self.max_penalty),
            ("solver.initial_barrier", self.initial_barrier),
        ] {
            if !(v > 0.0) {
                return Err(Error::validation(f, "must be > 0"));
            }
        }
        if !(self.penalty_growth > 1.0) {
            return Err(Error::validation("solver.penalty_growth", "must be > 1"));
        }
        if self.lbfgs_memory < 1 {
            return Err(Error::validation("solver.lbfgs_memory", "must be >= 1"));
        }
        Ok(())
    }
}

/// Source of the Lagrangian curvature in the inner model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HessianMode {
    /// Forward differences of the sparse Jacobian, columns grouped by a
    /// structural coloring.
    FiniteDifference,
    /// Limited-memory BFGS from Lagrangian-gradient secants.
    Lbfgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Converged,
    MaxIterations,
    Infeasible,
    NumericalFailure,
}

impl SolveStatus {
    pub fn is_converged(self) -> bool {
        self == SolveStatus::Converged
    }
}

/// One row of the iteration log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub objective: f64,
    pub max_violation: f64,
    pub stationarity: f64,
    pub step_norm: f64,
    pub penalty: f64,
    pub inner_iterations: usize,
    pub constraint_evals: usize,
    pub jacobian_evals: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveResult {
    pub status: SolveStatus,
    pub x: Vec<f64>,
    pub objective: f64,
    pub max_violation: f64,
    pub stationarity: f64,
    /// Outer iterations performed.
    pub iterations: usize,
    pub inner_iterations: usize,
    pub multipliers: Vec<f64>,
    pub wall_time_s: f64,
    pub log: Vec<IterationRecord>,
}

impl SolveResult {
    pub fn write_log_csv(&self, writer: impl Write) -> Result<()> {
        write_iteration_log(&self.log, writer)
    }
}

pub fn write_iteration_log(log: &[IterationRecord], writer: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "iteration",
        "objective",
        "max_violation",
        "step_norm",
        "penalty",
        "stationarity",
        "inner_iterations",
        "constraint_evals",
        "jacobian_evals",
    ])?;
    for r in log {
        w.write_record([
            r.iteration.to_string(),
            format!("{:.17e}", r.objective),
            format!("{:.17e}", r.max_violation),
            format!("{:.17e}", r.step_norm),
            format!("{:.17e}", r.penalty),
            format!("{:.17e}", r.stationarity),
            r.inner_iterations.to_string(),
            r.constraint_evals.to_string(),
            r.jacobian_evals.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<iteration log>", e))?;
    Ok(())
}

/// Maximum constraint violation of `c` given the row kinds.
pub fn max_violation(c: &[f64], kinds: &[ConstraintKind]) -> f64 {
    c.iter()
        .zip(kinds)
        .map(|(v, k)| match k {
            ConstraintKind::Equality => v.abs(),
            ConstraintKind::Inequality => v.max(0.0),
        })
        .fold(
            0.0,
            |a: f64, b| if b.is_nan() { f64::INFINITY } else { a.max(b) },
        )
}

pub trait NlpSolver: Send + Sync {
    fn name(&self) -> &str;
    fn solve(
        &self,
        problem: &dyn NlpProblem,
        x0: &[f64],
        opts: &SolverOptions,
    ) -> Result<SolveResult>;
}

pub const AUGMENTED_LAGRANGIAN: &str = "augmented_lagrangian";

/// Named collection of NLP engines.
pub struct SolverRegistry {
    solvers: BTreeMap<String, Box<dyn NlpSolver>>,
}

impl Default for SolverRegistry {
    fn default() -> Self {
        let mut r = Self {
            solvers: BTreeMap::new(),
        };
        r.register(Box::new(AugmentedLagrangian));
        r.register(Box::new(InteriorPoint));
        r
    }
}

impl SolverRegistry {
    pub fn register(&mut self, solver: Box<dyn NlpSolver>) {
        self.solvers.insert(solver.name().to_string(), solver);
    }

    pub fn get(&self, name: &str) -> Result<&dyn NlpSolver> {
        self.solvers
            .get(name)
            .map(|b| b.as_ref())
            .ok_or_else(|| Error::MissingBackend(name.to_string()))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.solvers.keys().map(String::as_str)
    }

    pub fn solve(
        &self,
        problem: &dyn NlpProblem,
        x0: &[f64],
        opts: &SolverOptions,
    ) -> Result<SolveResult> {
        opts.validate()?;
        check_dimensions(problem, x0)?;
        self.get(&opts.backend)?.solve(problem, x0, opts)
    }
}

/// Solves with the engine named in `opts.backend` from the default registry.
pub fn solve(problem: &dyn NlpProblem, x0: &[f64], opts: &SolverOptions) -> Result<SolveResult> {
    SolverRegistry::default().solve(problem, x0, opts)
}

pub fn check_dimensions(problem: &dyn NlpProblem, x0: &[f64]) -> Result<()> {
    let n = problem.num_variables();
    if x0.len() != n {
        return Err(Error::Dimension {
            expected: n,
            got: x0.len(),
            context: "initial point",
        });
    }
    let p = problem.jacobian_pattern();
    if p.n_cols() != n || p.n_rows() != problem.num_constraints() {
        return Err(Error::Dimension {
            expected: problem.num_constraints(),
            got: p.n_rows(),
            context: "jacobian pattern rows",
        });
    }
    if problem.constraint_kinds().len() != problem.num_constraints() {
        return Err(Error::Dimension {
            expected: problem.num_constraints(),
            got: problem.constraint_kinds().len(),
            context: "constraint kinds",
        });
    }
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("initial point has non-finite entries".into()));
    }
    Ok(())
}

/// Wraps a problem and counts callback invocations.
pub struct Counted<'a> {
    inner: &'a dyn NlpProblem,
    constraint_evals: AtomicUsize,
    jacobian_evals: AtomicUsize,
}

impl<'a> Counted<'a> {
    pub fn new(inner: &'a dyn NlpProblem) -> Self {
        Self {
            inner,
            constraint_evals: AtomicUsize::new(0),
            jacobian_evals: AtomicUsize::new(0),
        }
    }

    pub fn constraint_evals(&self) -> usize {
        self.constraint_evals.load(Ordering::Relaxed)
    }

    pub fn jacobian_evals(&self) -> usize {
        self.jacobian_evals.load(Ordering::Relaxed)
    }
}

impl NlpProblem for Counted<'_> {
    fn num_variables(&self) -> usize {
        self.inner.num_variables()
    }
    fn num_constraints(&self) -> usize {
        self.inner.num_constraints()
    }
    fn variable_bounds(&self) -> (Vec<f64>, Vec<f64>) {
        self.inner.variable_bounds()
    }
    fn constraint_kinds(&self) -> Vec<ConstraintKind> {
        self.inner.constraint_kinds()
    }
    fn objective(&self, x: &[f64]) -> f64 {
        self.inner.objective(x)
    }
    fn objective_gradient(&self, x: &[f64], grad: &mut [f64]) {
        self.inner.objective_gradient(x, grad)
    }
    fn constraints(&self, x: &[f64], out: &mut [f64]) {
        self.constraint_evals.fetch_add(1, Ordering::Relaxed);
        self.inner.constraints(x, out)
    }
    fn jacobian_pattern(&self) -> &SparsityPattern {
        self.inner.jacobian_pattern()
    }
    fn jacobian_values(&self, x: &[f64], values: &mut [f64]) {
        self.jacobian_evals.fetch_add(1, Ordering::Relaxed);
        self.inner.jacobian_values(x, values)
    }
    fn objective_gradient_pattern(&self) -> Option<Vec<usize>> {
        self.inner.objective_gradient_pattern()
    }
}
