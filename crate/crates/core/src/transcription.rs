//! Radau collocation of the spiral-transfer optimal control problem.
//!
//! Each of `n_segments` equal segments of normalized time carries `order`
//! Legendre-Gauss-Radau collocation points. States live at every collocation
//! point plus the final time; controls (commanded power and steering angle)
//! live at collocation points. Static variables are the time of flight and,
//! in coupled mode, the solar-array area. All decision variables are scaled.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::dynamics::{
    eom, eom_partials, idx, BodyParameters, ControlInput, ScaleSet, SpacecraftState, STATE_DIM,
};
use crate::error::{Error, Result};
use crate::nlp::{ConstraintKind, NlpProblem, SparsityPattern};
use crate::par::{self, Execution};
use crate::power::PowerConfig;
use crate::propulsion::EngineCluster;
use crate::quadrature;
use crate::sizing::MassConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Array area and initial mass fixed.
    Baseline,
    /// Array area is a design variable feeding power and mass.
    Coupled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSpec {
    pub n_segments: usize,
    /// Radau points per segment.
    pub order: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            n_segments: 50,
            order: 3,
        }
    }
}

impl GridSpec {
    pub fn new(n_segments: usize, order: usize) -> Self {
        Self { n_segments, order }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_segments < 1 {
            return Err(Error::validation("grid.n_segments", "must be at least 1"));
        }
        if self.order < 2 {
            return Err(Error::validation("grid.order", "must be at least 2"));
        }
        Ok(())
    }

    /// Number of collocation nodes.
    pub fn n_nodes(&self) -> usize {
        self.n_segments * self.order
    }

    pub fn segment_width(&self) -> f64 {
        1.0 / self.n_segments as f64
    }

    /// Normalized times in [0, 1] of the collocation nodes followed by the
    /// final point.
    pub fn node_fractions(&self) -> Vec<f64> {
        let (tau, _) = quadrature::gauss_radau(self.order);
        let w = self.segment_width();
        let mut out = Vec::with_capacity(self.n_nodes() + 1);
        for s in 0..self.n_segments {
            for t in &tau {
                out.push(w * (s as f64 + 0.5 * (t + 1.0)));
            }
        }
        out.push(1.0);
        out
    }

    /// Number of decision variables for the given mode.
    pub fn num_variables(&self, mode: Mode) -> usize {
        let n = self.n_nodes();
        STATE_DIM * (n + 1) + 2 * n + 1 + usize::from(mode == Mode::Coupled)
    }

    /// Number of constraint rows (independent of the mode).
    pub fn num_constraints(&self) -> usize {
        let n = self.n_nodes();
        STATE_DIM * n + N_BOUNDARY + n + (n + 1) + 3 * (self.n_segments - 1)
    }
}

/// Box limits for controls and static design variables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Bounds {
    /// Array area window in coupled mode [m^2].
    pub area_min: f64,
    pub area_max: f64,
    /// Time-of-flight window as multiples of the guess.
    pub tf_min_factor: f64,
    pub tf_max_factor: f64,
    /// |v_r| limit [m/s].
    pub v_r_max: f64,
    /// Steering-angle window [rad].
    pub alpha_min: f64,
    pub alpha_max: f64,
}

impl Default for Bounds {
    fn default() -> Self {
        Self {
            area_min: 5.0,
            area_max: 200.0,
            tf_min_factor: 0.1,
            tf_max_factor: 10.0,
            v_r_max: 10.0,
            alpha_min: 0.5 * PI,
            alpha_max: 1.5 * PI,
        }
    }
}

impl Bounds {
    pub fn validate(&self) -> Result<()> {
        if !(self.area_min > 0.0 && self.area_max > self.area_min) {
            return Err(Error::validation(
                "bounds.area_min",
                "need 0 < area_min < area_max",
            ));
        }
        if !(self.tf_min_factor > 0.0 && self.tf_max_factor > self.tf_min_factor) {
            return Err(Error::validation(
                "bounds.tf_min_factor",
                "need 0 < tf_min_factor < tf_max_factor",
            ));
        }
        if !(self.v_r_max > 0.0) {
            return Err(Error::validation("bounds.v_r_max", "must be > 0"));
        }
        if !(self.alpha_max > self.alpha_min) {
            return Err(Error::validation(
                "bounds.alpha_min",
                "must be below alpha_max",
            ));
        }
        Ok(())
    }
}

/// Physical definition of one transfer.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferSpec {
    pub body: BodyParameters,
    pub r0: f64,
    pub rf: f64,
    pub power: PowerConfig,
    pub mass: MassConfig,
    pub engine: EngineCluster,
    pub mode: Mode,
    pub bounds: Bounds,
    /// Replaces the sizing-model initial mass in baseline mode.
    pub baseline_initial_mass: Option<f64>,
    /// Nondimensionalize the decision variables.
    pub scaled: bool,
}

impl TransferSpec {
    /// Initial mass for a given area in this mode.
    pub fn initial_mass(&self, area: f64) -> f64 {
        match (self.mode, self.baseline_initial_mass) {
            (Mode::Baseline, Some(m)) => m,
            _ => self.mass.initial_mass(area),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.body.validate()?;
        for (field, v) in [("orbit.r0", self.r0), ("orbit.rf", self.rf)] {
            if !(v > self.body.r_min && v.is_finite()) {
                return Err(Error::validation(
                    field,
                    format!("must exceed r_min (got {v})"),
                ));
            }
        }
        if self.r0 == self.rf {
            return Err(Error::validation("orbit.rf", "must differ from orbit.r0"));
        }
        self.power.validate()?;
        self.mass.validate()?;
        self.engine.validate()?;
        self.bounds.validate()?;
        if let Some(m) = self.baseline_initial_mass {
            if !(m > self.mass.dry_mass(self.power.area)) {
                return Err(Error::validation(
                    "mass.baseline_initial_mass",
                    "must exceed the dry mass",
                ));
            }
        }
        Ok(())
    }
}

/// Node-wise physical values of a trajectory on a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub t_f: f64,
    pub area: f64,
    /// States at the collocation nodes followed by the final point.
    pub states: Vec<SpacecraftState>,
    /// Commanded power at collocation nodes [W].
    pub power: Vec<f64>,
    /// Steering angle at collocation nodes [rad].
    pub alpha: Vec<f64>,
}

/// Collocation-residual diagnostics in scaled units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefectReport {
    pub segments: Vec<SegmentDefect>,
    pub max_defect: f64,
    pub rms_defect: f64,
    pub max_boundary: f64,
    pub max_power_path: f64,
    pub max_mass_path: f64,
    pub max_continuity: f64,
    /// Largest violation over all constraint rows.
    pub max_violation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentDefect {
    pub segment: usize,
    pub start_time: f64,
    /// Max-abs defect per state component.
    pub norms: [f64; STATE_DIM],
}

impl DefectReport {
    pub fn write_csv(&self, writer: impl std::io::Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record([
            "segment",
            "start_time",
            "defect_r",
            "defect_theta",
            "defect_v_r",
            "defect_v_theta",
            "defect_m",
        ])?;
        for s in &self.segments {
            let mut rec = vec![s.segment.to_string(), format!("{:.17e}", s.start_time)];
            rec.extend(s.norms.iter().map(|v| format!("{v:.17e}")));
            w.write_record(rec)?;
        }
        w.flush().map_err(|e| Error::io("<defects>", e))?;
        Ok(())
    }
}

const N_BOUNDARY: usize = 7;

/// Structurally nonzero state partials of each rate component.
const RATE_DEPENDS_ON: [&[usize]; STATE_DIM] = [
    &[idx::V_R],
    &[idx::R, idx::V_THETA],
    &[idx::R, idx::V_THETA, idx::M],
    &[idx::R, idx::V_R, idx::V_THETA, idx::M],
    &[],
];

type Terms = Vec<(usize, usize, f64)>;

/// The discretized problem; immutable after construction.
#[derive(Debug, Clone)]
pub struct Transcription {
    spec: TransferSpec,
    grid: GridSpec,
    scales: ScaleSet,
    body: BodyParameters,
    power_scale: f64,
    area_scale: f64,
    fractions: Vec<f64>,
    /// Differentiation matrix: collocation points by state support.
    diff: Vec<Vec<f64>>,
    ctrl_end: Vec<f64>,
    ctrl_end_rate: Vec<f64>,
    ctrl_start_rate: Vec<f64>,
    t_f_guess: f64,
    lower: Vec<f64>,
    upper: Vec<f64>,
    kinds: Vec<ConstraintKind>,
    pattern: SparsityPattern,
    slots: Vec<usize>,
    exec: Execution,
}

impl Transcription {
    /// Builds the problem around `guess`, whose time of flight anchors the
    /// time-of-flight bounds.
    pub fn build(spec: TransferSpec, grid: GridSpec, guess: &Trajectory) -> Result<Self> {
        spec.validate()?;
        grid.validate()?;
        if !(guess.t_f > 0.0 && guess.t_f.is_finite()) {
            return Err(Error::Domain(format!("guess time of flight {}", guess.t_f)));
        }
        let t_f_guess = guess.t_f;
        spec.power
            .check_horizon(spec.bounds.tf_max_factor * t_f_guess)?;
        let scales = if spec.scaled {
            ScaleSet::canonical(spec.r0, spec.body.mu, spec.initial_mass(spec.power.area))?
        } else {
            ScaleSet::unit()
        };
        let area_scale = if spec.scaled { spec.power.area } else { 1.0 };
        let (tau, _) = quadrature::gauss_radau(grid.order);
        let mut support = tau.clone();
        support.push(1.0);
        let diff = quadrature::differentiation_matrix(&support, &tau);
        let (ctrl_end, ctrl_end_rate) = quadrature::lagrange_basis(&tau, 1.0);
        let (_, ctrl_start_rate) = quadrature::lagrange_basis(&tau, -1.0);
        let mut t = Self {
            body: scales.scale_body(&spec.body),
            power_scale: scales.power(),
            area_scale,
            fractions: grid.node_fractions(),
            diff,
            ctrl_end,
            ctrl_end_rate,
            ctrl_start_rate,
            t_f_guess,
            lower: Vec::new(),
            upper: Vec::new(),
            kinds: Vec::new(),
            pattern: SparsityPattern::dense(0, 0),
            slots: Vec::new(),
            exec: Execution::default(),
            scales,
            spec,
            grid,
        };
        let x0 = t.pack(guess)?;
        t.set_bounds();
        t.set_kinds();
        let entries: Vec<(usize, usize)> = (0..=t.grid.n_nodes())
            .flat_map(|u| t.unit_jacobian(u, &x0))
            .map(|(r, c, _)| (r, c))
            .collect();
        let (pattern, slots) =
            SparsityPattern::from_entries(t.num_constraints(), t.num_variables(), &entries);
        t.pattern = pattern;
        t.slots = slots;
        Ok(t)
    }

    /// Selects sequential or data-parallel node evaluation.
    pub fn with_execution(mut self, exec: Execution) -> Self {
        self.exec = exec;
        self
    }

    pub fn spec(&self) -> &TransferSpec {
        &self.spec
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn scales(&self) -> &ScaleSet {
        &self.scales
    }

    pub fn power_scale(&self) -> f64 {
        self.power_scale
    }

    pub fn area_scale(&self) -> f64 {
        self.area_scale
    }

    pub fn t_f_guess(&self) -> f64 {
        self.t_f_guess
    }

    fn n(&self) -> usize {
        self.grid.n_nodes()
    }

    fn coupled(&self) -> bool {
        self.spec.mode == Mode::Coupled
    }

    // Variable layout.

    pub fn state_index(&self, node: usize, comp: usize) -> usize {
        STATE_DIM * node + comp
    }

    pub fn power_index(&self, node: usize) -> usize {
        STATE_DIM * (self.n() + 1) + 2 * node
    }

    pub fn alpha_index(&self, node: usize) -> usize {
        self.power_index(node) + 1
    }

    pub fn tf_index(&self) -> usize {
        STATE_DIM * (self.n() + 1) + 2 * self.n()
    }

    pub fn area_index(&self) -> Option<usize> {
        self.coupled().then(|| self.tf_index() + 1)
    }

    // Row layout.

    pub fn defect_row(&self, node: usize, comp: usize) -> usize {
        STATE_DIM * node + comp
    }

    pub fn boundary_row(&self, k: usize) -> usize {
        STATE_DIM * self.n() + k
    }

    pub fn power_row(&self, node: usize) -> usize {
        STATE_DIM * self.n() + N_BOUNDARY + node
    }

    pub fn mass_row(&self, node: usize) -> usize {
        STATE_DIM * self.n() + N_BOUNDARY + self.n() + node
    }

    pub fn continuity_row(&self, boundary: usize, k: usize) -> usize {
        STATE_DIM * self.n() + N_BOUNDARY + 2 * self.n() + 1 + 3 * boundary + k
    }

    /// Physical node times for a time of flight.
    pub fn node_times(&self, t_f: f64) -> Vec<f64> {
        self.fractions.iter().map(|f| f * t_f).collect()
    }

    pub fn node_fractions(&self) -> &[f64] {
        &self.fractions
    }

    /// Scaled decision vector from physical node values.
    pub fn pack(&self, traj: &Trajectory) -> Result<Vec<f64>> {
        let n = self.n();
        for (len, want, ctx) in [
            (traj.states.len(), n + 1, "trajectory states"),
            (traj.power.len(), n, "trajectory power"),
            (traj.alpha.len(), n, "trajectory alpha"),
        ] {
            if len != want {
                return Err(Error::Dimension {
                    expected: want,
                    got: len,
                    context: ctx,
                });
            }
        }
        let mut x = vec![0.0; self.num_variables()];
        for (k, s) in traj.states.iter().enumerate() {
            let sc = self.scales.scale_state(s).to_array();
            x[STATE_DIM * k..STATE_DIM * (k + 1)].copy_from_slice(&sc);
        }
        for k in 0..n {
            x[self.power_index(k)] = traj.power[k] / self.power_scale;
            x[self.alpha_index(k)] = traj.alpha[k];
        }
        x[self.tf_index()] = traj.t_f / self.scales.time;
        if let Some(a) = self.area_index() {
            x[a] = traj.area / self.area_scale;
        }
        Ok(x)
    }

    /// Physical node values from a scaled decision vector.
    pub fn unpack(&self, x: &[f64]) -> Trajectory {
        let n = self.n();
        let states = (0..=n)
            .map(|k| {
                self.scales
                    .unscale_state(&SpacecraftState::from_array(&x[STATE_DIM * k..]))
            })
            .collect();
        Trajectory {
            t_f: x[self.tf_index()] * self.scales.time,
            area: self.area(x),
            states,
            power: (0..n)
                .map(|k| x[self.power_index(k)] * self.power_scale)
                .collect(),
            alpha: (0..n).map(|k| x[self.alpha_index(k)]).collect(),
        }
    }

    /// Physical array area encoded in (or fixed for) `x`.
    pub fn area(&self, x: &[f64]) -> f64 {
        match self.area_index() {
            Some(a) => x[a] * self.area_scale,
            None => self.spec.power.area,
        }
    }

    fn set_bounds(&mut self) {
        let nv = self.num_variables();
        let (mut lo, mut hi) = (vec![f64::NEG_INFINITY; nv], vec![f64::INFINITY; nv]);
        let sc = self.scales;
        let b = &self.spec.bounds;
        let v_r_max = b.v_r_max / sc.velocity();
        for k in 0..=self.n() {
            lo[self.state_index(k, idx::R)] = self.spec.body.r_min / sc.length;
            lo[self.state_index(k, idx::V_R)] = -v_r_max;
            hi[self.state_index(k, idx::V_R)] = v_r_max;
            lo[self.state_index(k, idx::M)] = 1e-3 * self.spec.mass.m_bus / sc.mass;
        }
        lo[self.state_index(0, idx::THETA)] = 0.0;
        hi[self.state_index(0, idx::THETA)] = 0.0;
        let table = &self.spec.engine.table;
        for k in 0..self.n() {
            lo[self.power_index(k)] = table.min_power() / self.power_scale;
            hi[self.power_index(k)] = table.max_power() / self.power_scale;
            lo[self.alpha_index(k)] = b.alpha_min;
            hi[self.alpha_index(k)] = b.alpha_max;
        }
        lo[self.tf_index()] = b.tf_min_factor * self.t_f_guess / sc.time;
        hi[self.tf_index()] = b.tf_max_factor * self.t_f_guess / sc.time;
        if let Some(a) = self.area_index() {
            lo[a] = b.area_min / self.area_scale;
            hi[a] = b.area_max / self.area_scale;
        }
        self.lower = lo;
        self.upper = hi;
    }

    fn set_kinds(&mut self) {
        let mut kinds = vec![ConstraintKind::Equality; self.num_constraints()];
        for k in 0..self.n() {
            kinds[self.power_row(k)] = ConstraintKind::Inequality;
        }
        for k in 0..=self.n() {
            kinds[self.mass_row(k)] = ConstraintKind::Inequality;
        }
        self.kinds = kinds;
    }

    /// Scaled thrust, mass flow and their power slopes at a scaled command.
    fn propulsion(&self, p_scaled: f64) -> (f64, f64, f64, f64) {
        let b = self.spec.engine.blend(p_scaled * self.power_scale);
        let f = self.scales.force();
        let q = self.scales.mass_rate();
        (
            b.thrust / f,
            b.mdot / q,
            b.dthrust_dp * self.power_scale / f,
            b.dmdot_dp * self.power_scale / q,
        )
    }

    fn node_state(&self, x: &[f64], k: usize) -> SpacecraftState {
        SpacecraftState::from_array(&x[STATE_DIM * k..STATE_DIM * (k + 1)])
    }

    fn segment_of(&self, k: usize) -> (usize, usize) {
        (k / self.grid.order, k % self.grid.order)
    }

    /// Elapsed physical time at node `k`.
    fn node_time(&self, x: &[f64], k: usize) -> f64 {
        x[self.tf_index()] * self.scales.time * self.fractions[k]
    }

    /// Scaled EOM at collocation node `k`.
    fn node_rate(&self, x: &[f64], k: usize) -> Result<[f64; STATE_DIM]> {
        let (thrust, mdot, _, _) = self.propulsion(x[self.power_index(k)]);
        let u = ControlInput::new(thrust, x[self.alpha_index(k)], mdot);
        eom(&self.node_state(x, k), &u, &self.body)
    }

    /// Residual rows owned by evaluation unit `u`: units below `N` are
    /// collocation nodes, unit `N` holds the remaining bookkeeping rows.
    fn unit_residuals(&self, u: usize, x: &[f64]) -> Vec<(usize, f64)> {
        let n = self.n();
        let mut out = Vec::with_capacity(STATE_DIM + 2);
        let area = self.area(x);
        if u < n {
            let k = u;
            let (s, j) = self.segment_of(k);
            let h = 0.5 * x[self.tf_index()] * self.grid.segment_width();
            let rate = self.node_rate(x, k).unwrap_or([f64::NAN; STATE_DIM]);
            for (i, fi) in rate.iter().enumerate() {
                let mut d = 0.0;
                for (l, dl) in self.diff[j].iter().enumerate() {
                    d += dl * x[self.state_index(s * self.grid.order + l, i)];
                }
                out.push((self.defect_row(k, i), d - h * fi));
            }
            let pp = self.spec.power.evaluate(area, self.node_time(x, k));
            out.push((
                self.power_row(k),
                x[self.power_index(k)] - pp.p_avail / self.power_scale,
            ));
            out.push((self.mass_row(k), self.mass_gap(x, k, area)));
            return out;
        }
        out.push((self.mass_row(n), self.mass_gap(x, n, area)));
        for (k, v) in self.boundary_residuals(x, area).into_iter().enumerate() {
            out.push((self.boundary_row(k), v));
        }
        for b in 0..self.grid.n_segments - 1 {
            let [dp, da, dr] = self.continuity(x, b);
            out.push((self.continuity_row(b, 0), dp));
            out.push((self.continuity_row(b, 1), da));
            out.push((self.continuity_row(b, 2), dr));
        }
        out
    }

    fn mass_gap(&self, x: &[f64], k: usize, area: f64) -> f64 {
        self.spec.mass.dry_mass(area) / self.scales.mass - x[self.state_index(k, idx::M)]
    }

    fn boundary_residuals(&self, x: &[f64], area: f64) -> [f64; N_BOUNDARY] {
        let sc = self.scales;
        let n = self.n();
        let v = sc.velocity();
        let at = |k, c| x[self.state_index(k, c)];
        [
            at(0, idx::R) - self.spec.r0 / sc.length,
            at(0, idx::V_R),
            at(0, idx::V_THETA) - self.spec.body.circular_speed(self.spec.r0) / v,
            at(0, idx::M) - self.spec.initial_mass(area) / sc.mass,
            at(n, idx::R) - self.spec.rf / sc.length,
            at(n, idx::V_R),
            at(n, idx::V_THETA) - self.spec.body.circular_speed(self.spec.rf) / v,
        ]
    }

    /// Power value, angle value and angle rate jumps across the boundary
    /// after segment `b`, rates taken per unit segment coordinate.
    fn continuity(&self, x: &[f64], b: usize) -> [f64; 3] {
        let kk = self.grid.order;
        let (cur, next) = (b * kk, (b + 1) * kk);
        let mut out = [-x[self.power_index(next)], -x[self.alpha_index(next)], 0.0];
        for j in 0..kk {
            out[0] += self.ctrl_end[j] * x[self.power_index(cur + j)];
            out[1] += self.ctrl_end[j] * x[self.alpha_index(cur + j)];
            out[2] += self.ctrl_end_rate[j] * x[self.alpha_index(cur + j)]
                - self.ctrl_start_rate[j] * x[self.alpha_index(next + j)];
        }
        out
    }

    /// Jacobian terms of unit `u`, emitted in a fixed order that does not
    /// depend on the values.
    fn unit_jacobian(&self, u: usize, x: &[f64]) -> Terms {
        let n = self.n();
        let kk = self.grid.order;
        let mut t = Terms::with_capacity(64);
        let area = self.area(x);
        let tf = self.tf_index();
        let area_col = self.area_index();
        let mass_slope = self.spec.mass.mass_per_area() * self.area_scale / self.scales.mass;
        if u < n {
            let k = u;
            let (s, j) = self.segment_of(k);
            let w = self.grid.segment_width();
            let h = 0.5 * x[tf] * w;
            let state = self.node_state(x, k);
            let (thrust, mdot, dthrust, dmdot) = self.propulsion(x[self.power_index(k)]);
            let ctrl = ControlInput::new(thrust, x[self.alpha_index(k)], mdot);
            let (rate, parts) = match (
                eom(&state, &ctrl, &self.body),
                eom_partials(&state, &ctrl, &self.body),
            ) {
                (Ok(r), Ok(p)) => (r, Some(p)),
                _ => ([f64::NAN; STATE_DIM], None),
            };
            let ds = |i: usize, c: usize| parts.map_or(f64::NAN, |p| p.d_state[i][c]);
            let du = |i: usize, c: usize| parts.map_or(f64::NAN, |p| p.d_control[i][c]);
            for i in 0..STATE_DIM {
                let row = self.defect_row(k, i);
                for l in 0..=kk {
                    t.push((row, self.state_index(s * kk + l, i), self.diff[j][l]));
                }
                for &c in RATE_DEPENDS_ON[i] {
                    t.push((row, self.state_index(k, c), -h * ds(i, c)));
                }
                if i != idx::R && i != idx::THETA {
                    let dfdp = du(i, 0) * dthrust + du(i, 2) * dmdot;
                    t.push((row, self.power_index(k), -h * dfdp));
                }
                if i == idx::V_R || i == idx::V_THETA {
                    t.push((row, self.alpha_index(k), -h * du(i, 1)));
                }
                t.push((row, tf, -0.5 * w * rate[i]));
            }
            let time = self.node_time(x, k);
            let pp = self.spec.power.evaluate(area, time);
            let row = self.power_row(k);
            t.push((row, self.power_index(k), 1.0));
            t.push((
                row,
                tf,
                -pp.dp_avail_dt * self.scales.time * self.fractions[k] / self.power_scale,
            ));
            if let Some(a) = area_col {
                t.push((
                    row,
                    a,
                    -pp.dp_avail_darea * self.area_scale / self.power_scale,
                ));
            }
            let row = self.mass_row(k);
            t.push((row, self.state_index(k, idx::M), -1.0));
            if let Some(a) = area_col {
                t.push((row, a, mass_slope));
            }
            return t;
        }
        let row = self.mass_row(n);
        t.push((row, self.state_index(n, idx::M), -1.0));
        if let Some(a) = area_col {
            t.push((row, a, mass_slope));
        }
        let bc = [
            (0, idx::R),
            (0, idx::V_R),
            (0, idx::V_THETA),
            (0, idx::M),
            (n, idx::R),
            (n, idx::V_R),
            (n, idx::V_THETA),
        ];
        for (r, &(node, c)) in bc.iter().enumerate() {
            t.push((self.boundary_row(r), self.state_index(node, c), 1.0));
        }
        if let Some(a) = area_col {
            t.push((self.boundary_row(3), a, -mass_slope));
        }
        for b in 0..self.grid.n_segments - 1 {
            let (cur, next) = (b * kk, (b + 1) * kk);
            for j in 0..kk {
                t.push((
                    self.continuity_row(b, 0),
                    self.power_index(cur + j),
                    self.ctrl_end[j],
                ));
            }
            t.push((self.continuity_row(b, 0), self.power_index(next), -1.0));
            for j in 0..kk {
                t.push((
                    self.continuity_row(b, 1),
                    self.alpha_index(cur + j),
                    self.ctrl_end[j],
                ));
            }
            t.push((self.continuity_row(b, 1), self.alpha_index(next), -1.0));
            for j in 0..kk {
                t.push((
                    self.continuity_row(b, 2),
                    self.alpha_index(cur + j),
                    self.ctrl_end_rate[j],
                ));
                t.push((
                    self.continuity_row(b, 2),
                    self.alpha_index(next + j),
                    -self.ctrl_start_rate[j],
                ));
            }
        }
        t
    }

    /// Full constraint vector.
    pub fn eval_constraints(&self, x: &[f64]) -> Vec<f64> {
        let parts = par::map_indexed(self.n() + 1, self.exec, |u| self.unit_residuals(u, x));
        let mut c = vec![0.0; self.num_constraints()];
        for (row, v) in parts.into_iter().flatten() {
            c[row] = v;
        }
        c
    }

    /// Jacobian values in pattern storage order.
    pub fn eval_jacobian(&self, x: &[f64]) -> Vec<f64> {
        let parts = par::map_indexed(self.n() + 1, self.exec, |u| self.unit_jacobian(u, x));
        let mut vals = vec![0.0; self.pattern.nnz()];
        for ((_, _, v), &slot) in parts.into_iter().flatten().zip(&self.slots) {
            vals[slot] += v;
        }
        vals
    }

    /// Dense Jacobian, for diagnostics and tests.
    pub fn dense_jacobian(&self, x: &[f64]) -> Vec<Vec<f64>> {
        self.pattern.to_dense(&self.eval_jacobian(x))
    }

    pub fn defect_report(&self, x: &[f64]) -> DefectReport {
        let c = self.eval_constraints(x);
        let n = self.n();
        let kk = self.grid.order;
        let t_f = x[self.tf_index()] * self.scales.time;
        let mut segments = Vec::with_capacity(self.grid.n_segments);
        let (mut max_defect, mut sq) = (0.0f64, 0.0);
        for s in 0..self.grid.n_segments {
            let mut norms = [0.0f64; STATE_DIM];
            for k in s * kk..(s + 1) * kk {
                for (i, norm) in norms.iter_mut().enumerate() {
                    let v = c[self.defect_row(k, i)];
                    *norm = abs_max(*norm, v);
                    max_defect = abs_max(max_defect, v);
                    sq += v * v;
                }
            }
            segments.push(SegmentDefect {
                segment: s,
                start_time: t_f * s as f64 * self.grid.segment_width(),
                norms,
            });
        }
        let span_max = |rows: std::ops::Range<usize>, ineq: bool| {
            rows.map(|r| if ineq { c[r].max(0.0) } else { c[r] })
                .fold(0.0, abs_max)
        };
        let max_boundary = span_max(
            self.boundary_row(0)..self.boundary_row(0) + N_BOUNDARY,
            false,
        );
        let max_power_path = span_max(self.power_row(0)..self.power_row(0) + n, true);
        let max_mass_path = span_max(self.mass_row(0)..self.mass_row(0) + n + 1, true);
        let cont_start = self.continuity_row(0, 0);
        let max_continuity = span_max(cont_start..self.num_constraints(), false);
        DefectReport {
            segments,
            max_defect,
            rms_defect: (sq / (STATE_DIM * n) as f64).sqrt(),
            max_boundary,
            max_power_path,
            max_mass_path,
            max_continuity,
            max_violation: crate::nlp::max_violation(&c, &self.kinds),
        }
    }
}

/// Running max of absolute values that propagates NaN as infinity.
fn abs_max(acc: f64, v: f64) -> f64 {
    if v.is_nan() {
        f64::INFINITY
    } else {
        acc.max(v.abs())
    }
}

impl NlpProblem for Transcription {
    fn num_variables(&self) -> usize {
        self.grid.num_variables(self.spec.mode)
    }

    fn num_constraints(&self) -> usize {
        self.grid.num_constraints()
    }

    fn variable_bounds(&self) -> (Vec<f64>, Vec<f64>) {
        (self.lower.clone(), self.upper.clone())
    }

    fn constraint_kinds(&self) -> Vec<ConstraintKind> {
        self.kinds.clone()
    }

    fn objective(&self, x: &[f64]) -> f64 {
        x[self.tf_index()]
    }

    fn objective_gradient(&self, _x: &[f64], grad: &mut [f64]) {
        grad.iter_mut().for_each(|g| *g = 0.0);
        grad[self.tf_index()] = 1.0;
    }

    fn constraints(&self, x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.eval_constraints(x));
    }

    fn jacobian_pattern(&self) -> &SparsityPattern {
        &self.pattern
    }

    fn jacobian_values(&self, x: &[f64], values: &mut [f64]) {
        values.copy_from_slice(&self.eval_jacobian(x));
    }

    fn objective_gradient_pattern(&self) -> Option<Vec<usize>> {
        Some(vec![self.tf_index()])
    }
}
