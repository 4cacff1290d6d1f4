//! Planar two-body dynamics in polar coordinates with a steerable thrust
//! vector and variable mass.
//!
//! State ordering everywhere in the crate is `[r, theta, v_r, v_theta, m]`
//! and control ordering is `[thrust, alpha, mdot]`. The steering angle
//! `alpha` is measured from the local tangential direction, so
//! `cos(alpha) < 0` decelerates the spacecraft along-track.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const STATE_DIM: usize = 5;
pub const CONTROL_DIM: usize = 3;

/// Index constants for state vectors.
pub mod idx {
    pub const R: usize = 0;
    pub const THETA: usize = 1;
    pub const V_R: usize = 2;
    pub const V_THETA: usize = 3;
    pub const M: usize = 4;
}

pub type StateVector = [f64; STATE_DIM];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpacecraftState {
    pub r: f64,
    pub theta: f64,
    pub v_r: f64,
    pub v_theta: f64,
    pub m: f64,
}

impl SpacecraftState {
    pub fn new(r: f64, theta: f64, v_r: f64, v_theta: f64, m: f64) -> Self {
        Self {
            r,
            theta,
            v_r,
            v_theta,
            m,
        }
    }

    /// Circular orbit of radius `r` at angle zero.
    pub fn circular(body: &BodyParameters, r: f64, m: f64) -> Self {
        Self::new(r, 0.0, 0.0, body.circular_speed(r), m)
    }

    pub fn to_array(&self) -> StateVector {
        [self.r, self.theta, self.v_r, self.v_theta, self.m]
    }

    pub fn from_array(x: &[f64]) -> Self {
        Self::new(x[0], x[1], x[2], x[3], x[4])
    }

    /// Specific orbital energy (per unit mass).
    pub fn specific_energy(&self, body: &BodyParameters) -> f64 {
        0.5 * (self.v_r * self.v_r + self.v_theta * self.v_theta) - body.mu / self.r
    }

    /// Specific angular momentum.
    pub fn angular_momentum(&self) -> f64 {
        self.r * self.v_theta
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BodyParameters {
    /// Gravitational parameter [m^3/s^2].
    pub mu: f64,
    /// Radius below which the dynamics report a domain error [m].
    pub r_min: f64,
}

impl Default for BodyParameters {
    fn default() -> Self {
        Self::psyche()
    }
}

impl BodyParameters {
    pub const PSYCHE_MU: f64 = 1.601e9;

    pub fn psyche() -> Self {
        Self {
            mu: Self::PSYCHE_MU,
            r_min: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return Err(Error::validation("body.mu", "must be positive and finite"));
        }
        if !(self.r_min > 0.0) {
            return Err(Error::validation("body.r_min", "must be positive"));
        }
        Ok(())
    }

    pub fn circular_speed(&self, r: f64) -> f64 {
        (self.mu / r).sqrt()
    }

    /// Mean motion of a circular orbit [rad/s].
    pub fn mean_motion(&self, r: f64) -> f64 {
        (self.mu / (r * r * r)).sqrt()
    }

    pub fn period(&self, r: f64) -> f64 {
        2.0 * std::f64::consts::PI / self.mean_motion(r)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ControlInput {
    /// Thrust magnitude [N].
    pub thrust: f64,
    /// Steering angle from the local tangential direction [rad], unwrapped.
    pub alpha: f64,
    /// Propellant mass flow rate [kg/s].
    pub mdot: f64,
}

impl ControlInput {
    pub fn new(thrust: f64, alpha: f64, mdot: f64) -> Self {
        Self {
            thrust,
            alpha,
            mdot,
        }
    }

    pub fn coast() -> Self {
        Self::new(0.0, std::f64::consts::PI, 0.0)
    }
}

fn check_domain(state: &SpacecraftState, body: &BodyParameters) -> Result<()> {
    if !(state.r > body.r_min) {
        return Err(Error::Domain(format!(
            "radius {} is not above r_min = {}",
            state.r, body.r_min
        )));
    }
    if !(state.m > 0.0) {
        return Err(Error::Domain(format!("mass {} is not positive", state.m)));
    }
    Ok(())
}

/// Time derivative of the state.
pub fn eom(
    state: &SpacecraftState,
    control: &ControlInput,
    body: &BodyParameters,
) -> Result<StateVector> {
    check_domain(state, body)?;
    let SpacecraftState {
        r, v_r, v_theta, m, ..
    } = *state;
    let (sa, ca) = control.alpha.sin_cos();
    let accel = control.thrust / m;
    Ok([
        v_r,
        v_theta / r,
        v_theta * v_theta / r - body.mu / (r * r) + accel * sa,
        -v_r * v_theta / r + accel * ca,
        -control.mdot,
    ])
}

/// Jacobian of [`eom`] with respect to the state and the control.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EomPartials {
    /// `d_state[i][j]` = d(rate_i)/d(state_j).
    pub d_state: [[f64; STATE_DIM]; STATE_DIM],
    /// `d_control[i][j]` = d(rate_i)/d(control_j), control = [thrust, alpha, mdot].
    pub d_control: [[f64; CONTROL_DIM]; STATE_DIM],
}

pub fn eom_partials(
    state: &SpacecraftState,
    control: &ControlInput,
    body: &BodyParameters,
) -> Result<EomPartials> {
    check_domain(state, body)?;
    let SpacecraftState {
        r, v_r, v_theta, m, ..
    } = *state;
    let (sa, ca) = control.alpha.sin_cos();
    let thrust = control.thrust;
    let r2 = r * r;
    let r3 = r2 * r;

    let mut p = EomPartials::default();
    use idx::*;

    p.d_state[R][V_R] = 1.0;

    p.d_state[THETA][R] = -v_theta / r2;
    p.d_state[THETA][V_THETA] = 1.0 / r;

    p.d_state[V_R][R] = -v_theta * v_theta / r2 + 2.0 * body.mu / r3;
    p.d_state[V_R][V_THETA] = 2.0 * v_theta / r;
    p.d_state[V_R][M] = -thrust * sa / (m * m);
    p.d_control[V_R][0] = sa / m;
    p.d_control[V_R][1] = thrust * ca / m;

    p.d_state[V_THETA][R] = v_r * v_theta / r2;
    p.d_state[V_THETA][V_R] = -v_theta / r;
    p.d_state[V_THETA][V_THETA] = -v_r / r;
    p.d_state[V_THETA][M] = -thrust * ca / (m * m);
    p.d_control[V_THETA][0] = ca / m;
    p.d_control[V_THETA][1] = -thrust * sa / m;

    p.d_control[M][2] = -1.0;
    Ok(p)
}

/// Reference quantities used to nondimensionalize the problem.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleSet {
    pub length: f64,
    pub time: f64,
    pub mass: f64,
}

impl ScaleSet {
    pub fn new(length: f64, time: f64, mass: f64) -> Result<Self> {
        let s = Self { length, time, mass };
        s.validate()?;
        Ok(s)
    }

    /// Identity scaling (physical SI units).
    pub fn unit() -> Self {
        Self {
            length: 1.0,
            time: 1.0,
            mass: 1.0,
        }
    }

    /// Canonical units: unit length `r0`, unit gravitational parameter.
    pub fn canonical(r0: f64, mu: f64, mass: f64) -> Result<Self> {
        Self::new(r0, (r0 * r0 * r0 / mu).sqrt(), mass)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("length", self.length),
            ("time", self.time),
            ("mass", self.mass),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::validation(
                    format!("scales.{name}"),
                    "must be positive and finite",
                ));
            }
        }
        Ok(())
    }

    pub fn velocity(&self) -> f64 {
        self.length / self.time
    }

    pub fn acceleration(&self) -> f64 {
        self.length / (self.time * self.time)
    }

    pub fn force(&self) -> f64 {
        self.mass * self.acceleration()
    }

    pub fn power(&self) -> f64 {
        self.force() * self.velocity()
    }

    pub fn mass_rate(&self) -> f64 {
        self.mass / self.time
    }

    pub fn mu(&self) -> f64 {
        self.length * self.length * self.length / (self.time * self.time)
    }

    /// Per-component reference for states.
    pub fn state_refs(&self) -> StateVector {
        let v = self.velocity();
        [self.length, 1.0, v, v, self.mass]
    }

    /// Per-component reference for state time-derivatives.
    pub fn rate_refs(&self) -> StateVector {
        let v = self.velocity();
        let a = self.acceleration();
        [v, 1.0 / self.time, a, a, self.mass_rate()]
    }

    pub fn scale_state(&self, s: &SpacecraftState) -> SpacecraftState {
        let refs = self.state_refs();
        let x = s.to_array();
        SpacecraftState::from_array(&std::array::from_fn::<f64, 5, _>(|i| x[i] / refs[i]))
    }

    pub fn unscale_state(&self, s: &SpacecraftState) -> SpacecraftState {
        let refs = self.state_refs();
        let x = s.to_array();
        SpacecraftState::from_array(&std::array::from_fn::<f64, 5, _>(|i| x[i] * refs[i]))
    }

    pub fn scale_rate(&self, rate: &StateVector) -> StateVector {
        let refs = self.rate_refs();
        std::array::from_fn(|i| rate[i] / refs[i])
    }

    pub fn unscale_rate(&self, rate: &StateVector) -> StateVector {
        let refs = self.rate_refs();
        std::array::from_fn(|i| rate[i] * refs[i])
    }

    pub fn scale_control(&self, c: &ControlInput) -> ControlInput {
        ControlInput::new(c.thrust / self.force(), c.alpha, c.mdot / self.mass_rate())
    }

    pub fn unscale_control(&self, c: &ControlInput) -> ControlInput {
        ControlInput::new(c.thrust * self.force(), c.alpha, c.mdot * self.mass_rate())
    }

    pub fn scale_body(&self, body: &BodyParameters) -> BodyParameters {
        BodyParameters {
            mu: body.mu / self.mu(),
            r_min: body.r_min / self.length,
        }
    }

    pub fn unscale_body(&self, body: &BodyParameters) -> BodyParameters {
        BodyParameters {
            mu: body.mu * self.mu(),
            r_min: body.r_min * self.length,
        }
    }
}
