//! Explicit re-propagation of a solved control history.
//!
//! Controls are interpolated per segment with the same Lagrange family the
//! transcription uses, and the equations of motion are integrated with an
//! adaptive Dormand-Prince 5(4) pair in canonical units. Integration restarts
//! at every node so the propagated state can be compared with the node values.

use serde::{Deserialize, Serialize};

use crate::dynamics::{eom, idx, ControlInput, ScaleSet, SpacecraftState, StateVector, STATE_DIM};
use crate::error::{Error, Result};
use crate::quadrature::{gauss_legendre, gauss_radau, lagrange_basis};
use crate::transcription::{GridSpec, Trajectory, TransferSpec};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RkTolerances {
    /// Absolute tolerance on canonical-unit states.
    pub atol: f64,
    pub rtol: f64,
    /// Maximum accepted plus rejected steps per run.
    pub max_steps: usize,
}

impl Default for RkTolerances {
    fn default() -> Self {
        Self {
            atol: 1e-10,
            rtol: 1e-10,
            max_steps: 5_000_000,
        }
    }
}

impl RkTolerances {
    pub fn validate(&self) -> Result<()> {
        for (f, v) in [
            ("propagation.atol", self.atol),
            ("propagation.rtol", self.rtol),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::validation(f, "must be positive"));
            }
        }
        if self.max_steps == 0 {
            return Err(Error::validation("propagation.max_steps", "must be >= 1"));
        }
        Ok(())
    }
}

/// Commanded power and steering together with the resulting propulsion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlSample {
    pub power: f64,
    pub alpha: f64,
    pub thrust: f64,
    pub mdot: f64,
}

impl ControlSample {
    pub fn input(&self) -> ControlInput {
        ControlInput::new(self.thrust, self.alpha, self.mdot)
    }
}

/// A control law over `[0, t_f]`.
pub trait ControlHistory: Sync {
    fn sample(&self, t: f64) -> ControlSample;
    /// Times at which the law may lose smoothness; integration stops there.
    fn breakpoints(&self) -> Vec<f64>;
}

/// Zero thrust throughout.
#[derive(Debug, Clone)]
pub struct Coast {
    pub t_f: f64,
}

impl ControlHistory for Coast {
    fn sample(&self, _t: f64) -> ControlSample {
        ControlSample {
            power: 0.0,
            alpha: std::f64::consts::PI,
            thrust: 0.0,
            mdot: 0.0,
        }
    }

    fn breakpoints(&self) -> Vec<f64> {
        vec![0.0, self.t_f]
    }
}

/// Per-segment Lagrange interpolation of the node controls.
#[derive(Debug, Clone)]
pub struct SegmentControls {
    /// Segment boundary times (n_segments + 1).
    edges: Vec<f64>,
    /// Node times (N + 1), used as breakpoints.
    node_times: Vec<f64>,
    support: Vec<f64>,
    power: Vec<Vec<f64>>,
    alpha: Vec<Vec<f64>>,
    engine: crate::propulsion::EngineCluster,
}

impl SegmentControls {
    pub fn new(spec: &TransferSpec, grid: &GridSpec, traj: &Trajectory) -> Result<Self> {
        grid.validate()?;
        let n = grid.n_nodes();
        if traj.power.len() != n || traj.alpha.len() != n || traj.states.len() != n + 1 {
            return Err(Error::Dimension {
                expected: n,
                got: traj.power.len(),
                context: "trajectory controls",
            });
        }
        let k = grid.order;
        let (support, _) = gauss_radau(k);
        let edges = (0..=grid.n_segments)
            .map(|s| traj.t_f * s as f64 / grid.n_segments as f64)
            .collect();
        let node_times = grid.node_fractions().iter().map(|f| f * traj.t_f).collect();
        Ok(Self {
            edges,
            node_times,
            support,
            power: traj.power.chunks(k).map(<[f64]>::to_vec).collect(),
            alpha: traj.alpha.chunks(k).map(<[f64]>::to_vec).collect(),
            engine: spec.engine.clone(),
        })
    }

    fn segment(&self, t: f64) -> usize {
        let n = self.edges.len() - 1;
        self.edges[1..n].partition_point(|e| *e <= t)
    }
}

impl ControlHistory for SegmentControls {
    fn sample(&self, t: f64) -> ControlSample {
        let s = self.segment(t);
        let (a, b) = (self.edges[s], self.edges[s + 1]);
        let tau = 2.0 * (t - a) / (b - a) - 1.0;
        let (w, _) = lagrange_basis(&self.support, tau);
        let dot = |v: &[f64]| w.iter().zip(v).map(|(wi, vi)| wi * vi).sum::<f64>();
        let power = dot(&self.power[s]);
        let alpha = dot(&self.alpha[s]);
        let (thrust, mdot) = self.engine.thrust_and_mdot(power);
        ControlSample {
            power,
            alpha,
            thrust,
            mdot,
        }
    }

    fn breakpoints(&self) -> Vec<f64> {
        self.node_times.clone()
    }
}

/// Per-state comparison of propagated and node states (SI units).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Divergence {
    pub max: [f64; STATE_DIM],
    pub rms: [f64; STATE_DIM],
    /// Maximum radius divergence divided by the target radius.
    pub max_radius_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropagationResult {
    pub times: Vec<f64>,
    pub states: Vec<SpacecraftState>,
    pub controls: Vec<ControlSample>,
    /// Propagated states at each breakpoint.
    pub breakpoint_times: Vec<f64>,
    pub breakpoint_states: Vec<SpacecraftState>,
    pub accepted_steps: usize,
    pub rejected_steps: usize,
}

impl PropagationResult {
    pub fn final_state(&self) -> SpacecraftState {
        *self.states.last().expect("non-empty history")
    }

    /// Writes the dense history with power diagnostics.
    pub fn write_csv(
        &self,
        spec: &TransferSpec,
        area: f64,
        writer: impl std::io::Write,
    ) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record([
            "t", "r", "theta", "v_r", "v_theta", "m", "P_E", "alpha", "T", "mdot", "P_SA",
            "P_avail",
        ])?;
        for ((t, s), c) in self.times.iter().zip(&self.states).zip(&self.controls) {
            let p = spec.power.evaluate(area, *t);
            w.write_record(
                [
                    *t, s.r, s.theta, s.v_r, s.v_theta, s.m, c.power, c.alpha, c.thrust, c.mdot,
                    p.p_sa, p.p_avail,
                ]
                .iter()
                .map(|v| format!("{v:.17e}")),
            )?;
        }
        w.flush().map_err(|e| Error::io("<propagation csv>", e))?;
        Ok(())
    }
}

// Dormand-Prince 5(4) tableau.
const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
const B: [f64; 7] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
    0.0,
];
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

/// Integrates from `initial` (SI) over the control law, stopping at every
/// breakpoint.
pub fn propagate_controls(
    spec: &TransferSpec,
    initial: SpacecraftState,
    controls: &dyn ControlHistory,
    tol: &RkTolerances,
) -> Result<PropagationResult> {
    tol.validate()?;
    let sc = ScaleSet::canonical(spec.r0, spec.body.mu, initial.m)?;
    let body = sc.scale_body(&spec.body);
    let refs = sc.state_refs();
    let rhs = |t: f64, y: &StateVector| -> Result<StateVector> {
        let u = controls.sample(t * sc.time);
        let uc = sc.scale_control(&u.input());
        let mut s = SpacecraftState::from_array(y);
        s.theta = y[idx::THETA];
        eom(&s, &uc, &body).map_err(|e| Error::Integration {
            time: t * sc.time,
            reason: e.to_string(),
        })
    };
    let breaks = controls.breakpoints();
    if breaks.len() < 2 || breaks.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::validation(
            "controls.breakpoints",
            "must be strictly increasing",
        ));
    }
    let to_si = |y: &StateVector| {
        let mut s = [0.0; STATE_DIM];
        for i in 0..STATE_DIM {
            s[i] = y[i] * refs[i];
        }
        SpacecraftState::from_array(&s)
    };

    let mut y = sc.scale_state(&initial).to_array();
    let mut t = breaks[0] / sc.time;
    let mut out = PropagationResult {
        times: vec![breaks[0]],
        states: vec![initial],
        controls: vec![controls.sample(breaks[0])],
        breakpoint_times: vec![breaks[0]],
        breakpoint_states: vec![initial],
        accepted_steps: 0,
        rejected_steps: 0,
    };
    let mut h = (breaks[1] - breaks[0]) / sc.time * 0.01;
    let mut k = [[0.0; STATE_DIM]; 7];
    k[0] = rhs(t, &y)?;
    for &stop_si in &breaks[1..] {
        let stop = stop_si / sc.time;
        while t < stop {
            if out.accepted_steps + out.rejected_steps >= tol.max_steps {
                return Err(Error::Integration {
                    time: t * sc.time,
                    reason: format!("step budget of {} exhausted", tol.max_steps),
                });
            }
            let last = t + h >= stop;
            let step = if last { stop - t } else { h };
            if step <= 1e-14 * t.abs().max(1.0) {
                return Err(Error::Integration {
                    time: t * sc.time,
                    reason: format!("step size underflow (h = {:.3e} s)", step * sc.time),
                });
            }
            for s in 1..7 {
                let mut yi = y;
                for (j, kj) in k.iter().enumerate().take(s) {
                    let a = A[s][j];
                    if a != 0.0 {
                        for i in 0..STATE_DIM {
                            yi[i] += step * a * kj[i];
                        }
                    }
                }
                k[s] = rhs(t + C[s] * step, &yi)?;
            }
            let mut y_new = y;
            let mut err = 0.0;
            for i in 0..STATE_DIM {
                let mut inc = 0.0;
                let mut e = 0.0;
                for s in 0..7 {
                    inc += B[s] * k[s][i];
                    e += E[s] * k[s][i];
                }
                y_new[i] = y[i] + step * inc;
                let scale = tol.atol + tol.rtol * y[i].abs().max(y_new[i].abs());
                err += (step * e / scale).powi(2);
            }
            let err = (err / STATE_DIM as f64).sqrt();
            if !err.is_finite() {
                return Err(Error::Integration {
                    time: t * sc.time,
                    reason: "non-finite error estimate".into(),
                });
            }
            let factor = if err == 0.0 {
                5.0
            } else {
                (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
            };
            if err <= 1.0 {
                t = if last { stop } else { t + step };
                y = y_new;
                k[0] = k[6];
                out.accepted_steps += 1;
                let t_si = t * sc.time;
                out.times.push(if last { stop_si } else { t_si });
                out.states.push(to_si(&y));
                out.controls.push(controls.sample(t_si));
                if !last {
                    h = step * factor;
                }
            } else {
                out.rejected_steps += 1;
                h = step * factor.min(1.0);
            }
        }
        out.breakpoint_times.push(stop_si);
        out.breakpoint_states.push(to_si(&y));
        // the control law may jump across a breakpoint
        k[0] = rhs(t, &y)?;
    }
    Ok(out)
}

/// Propagates the solved controls from the imposed initial state.
pub fn propagate(
    spec: &TransferSpec,
    grid: &GridSpec,
    traj: &Trajectory,
    tol: &RkTolerances,
) -> Result<PropagationResult> {
    let controls = SegmentControls::new(spec, grid, traj)?;
    let initial = SpacecraftState::circular(&spec.body, spec.r0, spec.initial_mass(traj.area));
    propagate_controls(spec, initial, &controls, tol)
}

/// Compares propagated breakpoint states with the trajectory node states.
pub fn divergence(result: &PropagationResult, traj: &Trajectory, rf: f64) -> Result<Divergence> {
    if result.breakpoint_states.len() != traj.states.len() {
        return Err(Error::Dimension {
            expected: traj.states.len(),
            got: result.breakpoint_states.len(),
            context: "propagated node states",
        });
    }
    let mut max = [0.0_f64; STATE_DIM];
    let mut sum = [0.0_f64; STATE_DIM];
    for (p, s) in result.breakpoint_states.iter().zip(&traj.states) {
        let (a, b) = (p.to_array(), s.to_array());
        for i in 0..STATE_DIM {
            let d = (a[i] - b[i]).abs();
            max[i] = max[i].max(d);
            sum[i] += d * d;
        }
    }
    let n = traj.states.len() as f64;
    let rms = sum.map(|v| (v / n).sqrt());
    Ok(Divergence {
        max,
        rms,
        max_radius_fraction: max[idx::R] / rf,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MassAudit {
    /// m(0) - m(t_f) of the propagated history [kg].
    pub consumed: f64,
    /// Quadrature of the mass flow over the control law [kg].
    pub quadrature: f64,
    pub residual: f64,
}

/// Gauss-Legendre points per breakpoint interval, after splitting each
/// interval into `MASS_AUDIT_PIECES` pieces.
const MASS_AUDIT_POINTS: usize = 8;
const MASS_AUDIT_PIECES: usize = 4;

pub fn mass_audit(result: &PropagationResult, controls: &dyn ControlHistory) -> MassAudit {
    let consumed = result.states[0].m - result.final_state().m;
    let (x, w) = gauss_legendre(MASS_AUDIT_POINTS);
    let mut quadrature = 0.0;
    for pair in result.breakpoint_times.windows(2) {
        let width = (pair[1] - pair[0]) / MASS_AUDIT_PIECES as f64;
        for p in 0..MASS_AUDIT_PIECES {
            let a = pair[0] + p as f64 * width;
            for (xi, wi) in x.iter().zip(&w) {
                let t = a + 0.5 * width * (xi + 1.0);
                quadrature += 0.5 * width * wi * controls.sample(t).mdot;
            }
        }
    }
    MassAudit {
        consumed,
        quadrature,
        residual: (consumed - quadrature).abs(),
    }
}
