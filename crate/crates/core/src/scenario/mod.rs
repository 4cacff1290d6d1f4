//! Mission configuration, the end-to-end pipeline and run comparison.

mod compare;
mod config;
pub mod output;

pub use compare::{compare, ComparisonReport, ComparisonRow};
pub use config::{
    ContinuationConfig, OrbitConfig, Preset, PropulsionConfig, ScenarioConfig, COMPAT_BASELINE_MASS,
};

use serde::{Deserialize, Serialize};

use crate::dynamics::idx;
use crate::error::Result;
use crate::fourier_guess::{self, GuessSummary};
use crate::nlp::{self, IterationRecord, SolveResult, SolveStatus, SolverOptions};
use crate::propagate::{self, Divergence, MassAudit, PropagationResult, SegmentControls};
use crate::transcription::{DefectReport, Mode, Trajectory, Transcription, TransferSpec};

/// One bandwidth stage of the continuation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: usize,
    pub bandwidth: f64,
    pub status: SolveStatus,
    /// Warm start failed and the stage was solved again cold.
    pub retried: bool,
    pub iterations: usize,
    pub objective: f64,
    pub max_violation: f64,
    pub wall_time_s: f64,
}

/// Machine-readable result of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub status: SolveStatus,
    pub mode: Mode,
    pub mu: f64,
    pub r0: f64,
    pub rf: f64,
    pub n_segments: usize,
    pub order: usize,
    pub t_f: f64,
    pub t_f_guess: f64,
    /// Array area used [m^2].
    pub area: f64,
    /// True when the area was a design variable.
    pub area_optimized: bool,
    pub initial_mass: f64,
    pub final_mass: f64,
    pub propellant: f64,
    pub max_violation: f64,
    pub max_defect: f64,
    pub rms_defect: f64,
    /// Largest relative terminal-condition error of the node solution.
    pub boundary_error: f64,
    /// Largest `P_E - P_avail` over nodes [W].
    pub max_power_excess: f64,
    pub iterations: usize,
    pub wall_time_s: f64,
    pub stages: Vec<StageRecord>,
    /// Absent when the propagation failed.
    pub divergence: Option<Divergence>,
    pub propagated_boundary_error: Option<f64>,
    pub mass_audit: Option<MassAudit>,
    pub propagation_error: Option<String>,
}

impl RunSummary {
    pub fn converged(&self) -> bool {
        self.status.is_converged()
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub config: ScenarioConfig,
    pub spec: TransferSpec,
    pub guess_summary: GuessSummary,
    pub guess: Trajectory,
    pub solve: SolveResult,
    /// Iteration logs of every stage, in order.
    pub logs: Vec<Vec<IterationRecord>>,
    pub trajectory: Trajectory,
    pub defects: DefectReport,
    pub propagation: Option<PropagationResult>,
    pub summary: RunSummary,
}

/// Guess and transcription for a config.
pub fn prepare(cfg: &ScenarioConfig) -> Result<(TransferSpec, Trajectory, GuessSummary)> {
    cfg.validate()?;
    let spec = cfg.transfer_spec()?;
    let (guess, _, summary) = fourier_guess::generate(&spec, &cfg.grid, &cfg.guess)?;
    Ok((spec, guess, summary))
}

/// Guess, continuation solve, propagation and reports. Non-convergence is
/// reported through the summary status.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<RunOutcome> {
    let (spec, guess, guess_summary) = prepare(cfg)?;
    let schedule = cfg.bandwidth_schedule();
    let mut x = None;
    let mut stages = Vec::with_capacity(schedule.len());
    let mut logs = Vec::with_capacity(schedule.len());
    let mut last = None;
    for (stage, &bw) in schedule.iter().enumerate() {
        let mut stage_spec = spec.clone();
        stage_spec.engine.table = stage_spec.engine.table.clone().with_bandwidth(bw);
        // warm stages are anchored on the previous solution
        let anchor = x.as_ref().unwrap_or(&guess);
        let t = Transcription::build(stage_spec, cfg.grid, anchor)?.with_execution(cfg.execution);
        let x0 = t.pack(anchor)?;
        let mut r = nlp::solve(&t, &x0, &stage_options(cfg, stage > 0))?;
        let mut retried = false;
        let mut wall = r.wall_time_s;
        if stage > 0 && !r.status.is_converged() {
            log::info!(
                "stage {stage}: warm start gave {:?}, retrying cold",
                r.status
            );
            let cold = nlp::solve(&t, &x0, &stage_options(cfg, false))?;
            retried = true;
            wall += cold.wall_time_s;
            if cold.status.is_converged()
                || !r.status.is_converged() && cold.max_violation < r.max_violation
            {
                r = cold;
            }
        }
        log::info!(
            "stage {stage} (s = {bw} W): {:?} after {} iterations, t_f = {:.3} s",
            r.status,
            r.iterations,
            r.x[t.tf_index()] * t.scales().time
        );
        stages.push(StageRecord {
            stage,
            bandwidth: bw,
            status: r.status,
            retried,
            iterations: r.iterations,
            objective: r.objective,
            max_violation: r.max_violation,
            wall_time_s: wall,
        });
        logs.push(r.log.clone());
        if r.status.is_converged() {
            x = Some(t.unpack(&r.x));
        }
        last = Some((t, r));
    }
    let (t, solve) = last.expect("schedule is never empty");
    let trajectory = t.unpack(&solve.x);
    let defects = t.defect_report(&solve.x);
    let grid = cfg.grid;

    let (propagation, divergence, audit, prop_boundary, prop_error) =
        match propagate::propagate(&spec, &grid, &trajectory, &cfg.propagation) {
            Ok(p) => {
                let law = SegmentControls::new(&spec, &grid, &trajectory)?;
                let audit = propagate::mass_audit(&p, &law);
                let div = propagate::divergence(&p, &trajectory, spec.rf)?;
                let be = boundary_error(&spec, &p.final_state());
                (Some(p), Some(div), Some(audit), Some(be), None)
            }
            Err(e) => (None, None, None, None, Some(e.to_string())),
        };

    let n = grid.n_nodes();
    let times = t.node_times(trajectory.t_f);
    let max_power_excess = (0..n)
        .map(|k| trajectory.power[k] - spec.power.evaluate(trajectory.area, times[k]).p_avail)
        .fold(f64::NEG_INFINITY, f64::max);
    let m0 = spec.initial_mass(trajectory.area);
    let mf = trajectory.states[n].m;
    let summary = RunSummary {
        status: solve.status,
        mode: spec.mode,
        mu: spec.body.mu,
        r0: spec.r0,
        rf: spec.rf,
        n_segments: grid.n_segments,
        order: grid.order,
        t_f: trajectory.t_f,
        t_f_guess: guess.t_f,
        area: trajectory.area,
        area_optimized: spec.mode == Mode::Coupled,
        initial_mass: m0,
        final_mass: mf,
        propellant: m0 - mf,
        max_violation: solve.max_violation,
        max_defect: defects.max_defect,
        rms_defect: defects.rms_defect,
        boundary_error: boundary_error(&spec, &trajectory.states[n]),
        max_power_excess,
        iterations: stages.iter().map(|s| s.iterations).sum(),
        wall_time_s: stages.iter().map(|s| s.wall_time_s).sum(),
        stages,
        divergence,
        propagated_boundary_error: prop_boundary,
        mass_audit: audit,
        propagation_error: prop_error,
    };
    Ok(RunOutcome {
        config: cfg.clone(),
        spec,
        guess_summary,
        guess,
        solve,
        logs,
        trajectory,
        defects,
        propagation,
        summary,
    })
}

fn stage_options(cfg: &ScenarioConfig, warm: bool) -> SolverOptions {
    SolverOptions {
        initial_barrier: if warm {
            cfg.continuation.warm_barrier
        } else {
            cfg.solver.initial_barrier
        },
        ..cfg.solver.clone()
    }
}

/// Largest relative error of the terminal circular-orbit conditions.
pub fn boundary_error(spec: &TransferSpec, s: &crate::dynamics::SpacecraftState) -> f64 {
    let v = spec.body.circular_speed(spec.rf);
    let x = s.to_array();
    [
        (x[idx::R] - spec.rf).abs() / spec.rf,
        x[idx::V_R].abs() / v,
        (x[idx::V_THETA] - v).abs() / v,
    ]
    .into_iter()
    .fold(0.0, f64::max)
}
