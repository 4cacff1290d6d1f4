//! Solar-array output and the power budget available to the thruster.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Seconds per Julian year, used to convert elapsed time for degradation.
pub const SECONDS_PER_YEAR: f64 = 365.25 * 86_400.0;

/// How the PPU saturation is smoothed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Smoothing {
    /// Switch `chi = (1 - g/sqrt(g^2 + rho^2))/2` applied as
    /// `chi*P_max + (1 - chi)*net`, with `g = P_max - net`. Equals the cap
    /// where the two meet; overshoots it by at most 0.151*rho just past the
    /// knee, so it is not monotone there.
    #[default]
    Switch,
    /// `(net + P_max - sqrt(g^2 + rho^2))/2`: monotone and never above
    /// either argument, but rho/2 below the cap at the knee.
    Min,
    /// The switch with the opposite sign, which blends toward the larger of
    /// the two quantities. Kept for comparison only.
    Max,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PowerConfig {
    /// Solar-array area [m^2]. Fixed in baseline mode, initial value in coupled mode.
    #[serde(rename = "A_SA")]
    pub area: f64,
    #[serde(rename = "eta_SA")]
    pub eta_sa: f64,
    /// Solar constant at 1 AU [W/m^2].
    #[serde(rename = "S0")]
    pub s0: f64,
    /// Heliocentric distance [AU], held constant.
    pub r_s: f64,
    /// Polynomial correction coefficients d1..d5.
    pub d: [f64; 5],
    /// Linear degradation rate [1/yr].
    pub sigma: f64,
    #[serde(rename = "P_bus")]
    pub p_bus: f64,
    #[serde(rename = "P_max")]
    pub p_max: f64,
    pub eta_d: f64,
    /// Smoothing constant of the saturation switch [W].
    pub rho_p: f64,
    pub smoothing: Smoothing,
}

impl Default for PowerConfig {
    fn default() -> Self {
        Self {
            area: 50.0,
            eta_sa: 0.3,
            s0: 1367.0,
            r_s: 2.9,
            d: [1.0, 0.0, 0.0, 0.0, 0.0],
            sigma: 0.03,
            p_bus: 590.0,
            p_max: 4863.0,
            eta_d: 0.95,
            rho_p: 10.0,
            smoothing: Smoothing::Switch,
        }
    }
}

/// Power quantities at one instant, with the sensitivities the NLP needs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerPoint {
    pub p_sa: f64,
    pub p_avail: f64,
    pub dp_avail_darea: f64,
    pub dp_avail_dt: f64,
}

impl PowerConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("power.A_SA", self.area),
            ("power.S0", self.s0),
            ("power.r_s", self.r_s),
            ("power.rho_p", self.rho_p),
            ("power.P_max", self.p_max),
        ];
        for (field, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::validation(field, format!("must be > 0 (got {v})")));
            }
        }
        for (field, v) in [("power.eta_SA", self.eta_sa), ("power.eta_d", self.eta_d)] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::validation(
                    field,
                    format!("must lie in (0, 1] (got {v})"),
                ));
            }
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::validation("power.sigma", "must be >= 0"));
        }
        if !(self.p_bus >= 0.0 && self.p_bus.is_finite()) {
            return Err(Error::validation("power.P_bus", "must be >= 0"));
        }
        if self.d.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation("power.d", "coefficients must be finite"));
        }
        let denom = 1.0 + self.d[3] * self.r_s + self.d[4] * self.r_s * self.r_s;
        if denom.abs() < 1e-12 {
            return Err(Error::validation(
                "power.d",
                "correction denominator vanishes at the configured r_s",
            ));
        }
        Ok(())
    }

    /// Fails if the degradation factor reaches zero before `t_max` seconds.
    pub fn check_horizon(&self, t_max: f64) -> Result<()> {
        if self.degradation(t_max) <= 0.0 {
            return Err(Error::validation(
                "power.sigma",
                format!("array degrades to zero output before the horizon of {t_max:.3e} s"),
            ));
        }
        Ok(())
    }

    /// Empirical polynomial correction at the configured distance.
    pub fn correction_factor(&self) -> f64 {
        let [d1, d2, d3, d4, d5] = self.d;
        let r = self.r_s;
        (d1 + d2 / r + d3 / (r * r)) / (1.0 + d4 * r + d5 * r * r)
    }

    pub fn degradation(&self, t: f64) -> f64 {
        1.0 - self.sigma * t / SECONDS_PER_YEAR
    }

    /// Array output per unit area at `t = 0` [W/m^2].
    pub fn specific_output(&self) -> f64 {
        self.eta_sa * self.s0 / (self.r_s * self.r_s) * self.correction_factor()
    }

    /// Array output for an arbitrary area, without horizon checks.
    pub fn array_power(&self, area: f64, t: f64) -> f64 {
        area * self.specific_output() * self.degradation(t)
    }

    /// Array output for the configured area.
    pub fn solar_array_power(&self, t: f64) -> Result<f64> {
        if t < 0.0 {
            return Err(Error::Domain(format!("negative elapsed time {t}")));
        }
        self.check_horizon(t)?;
        Ok(self.array_power(self.area, t))
    }

    /// The smoothed PPU-saturation blend without the nonnegativity clamp.
    /// Returns the value and its derivative with respect to `p_sa`.
    pub fn smooth_min_power(&self, p_sa: f64) -> (f64, f64) {
        let net = p_sa - self.p_bus;
        let g = self.p_max - net;
        let s = (g * g + self.rho_p * self.rho_p).sqrt();
        let rho2 = self.rho_p * self.rho_p;
        let (blend, dblend) = match self.smoothing {
            Smoothing::Min => (0.5 * (net + self.p_max - s), 0.5 * (1.0 + g / s)),
            Smoothing::Switch => {
                let chi = 0.5 * (1.0 - g / s);
                (
                    chi * self.p_max + (1.0 - chi) * net,
                    1.0 - chi + g * rho2 / (2.0 * s * s * s),
                )
            }
            Smoothing::Max => {
                let chi = 0.5 * (1.0 + g / s);
                (
                    chi * self.p_max + (1.0 - chi) * net,
                    1.0 - chi - g * rho2 / (2.0 * s * s * s),
                )
            }
        };
        (self.eta_d * blend, self.eta_d * dblend)
    }

    fn clamp_width(&self) -> f64 {
        self.eta_d * self.rho_p
    }

    /// Power available for propulsion given the array output, with a smooth
    /// clamp at zero when the array cannot cover the bus load.
    pub fn available_power(&self, p_sa: f64) -> f64 {
        self.available_power_with_slope(p_sa).0
    }

    /// Available power and its derivative with respect to `p_sa`.
    pub fn available_power_with_slope(&self, p_sa: f64) -> (f64, f64) {
        let (raw, draw) = self.smooth_min_power(p_sa);
        let k = self.clamp_width();
        let root = (raw * raw + k * k).sqrt();
        (0.5 * (raw + root), 0.5 * (1.0 + raw / root) * draw)
    }

    /// Full power evaluation for a given array area and elapsed time.
    pub fn evaluate(&self, area: f64, t: f64) -> PowerPoint {
        let per_area = self.specific_output();
        let deg = self.degradation(t);
        let p_sa = area * per_area * deg;
        let (p_avail, slope) = self.available_power_with_slope(p_sa);
        PowerPoint {
            p_sa,
            p_avail,
            dp_avail_darea: slope * per_area * deg,
            dp_avail_dt: slope * area * per_area * (-self.sigma / SECONDS_PER_YEAR),
        }
    }

    /// (dP_avail/dA_SA, dP_avail/dt) at the configured area.
    pub fn power_partials(&self, t: f64) -> Result<(f64, f64)> {
        self.check_horizon(t)?;
        let p = self.evaluate(self.area, t);
        Ok((p.dp_avail_darea, p.dp_avail_dt))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::finite_diff::{relative_error, richardson};

    fn identity_cfg() -> PowerConfig {
        PowerConfig {
            eta_d: 1.0,
            ..PowerConfig::default()
        }
    }

    #[test]
    fn array_power_hand_value() {
        let p = identity_cfg().solar_array_power(0.0).unwrap();
        let expect = 50.0 * 0.3 * 1367.0 / 8.41;
        assert!((p - expect).abs() < 1e-9);
        assert!((p - 2438.0).abs() < 1.0);
    }

    #[test]
    fn one_year_degradation() {
        let cfg = identity_cfg();
        let p0 = cfg.solar_array_power(0.0).unwrap();
        let p1 = cfg.solar_array_power(SECONDS_PER_YEAR).unwrap();
        assert!((p1 / p0 - 0.97).abs() < 1e-15);
    }

    #[test]
    fn linear_in_area() {
        let cfg = identity_cfg();
        let doubled = PowerConfig {
            area: 100.0,
            ..cfg.clone()
        };
        let t = 1e6;
        assert!(
            (doubled.solar_array_power(t).unwrap() - 2.0 * cfg.solar_array_power(t).unwrap()).abs()
                < 1e-9
        );
    }

    #[test]
    fn horizon_error() {
        let cfg = PowerConfig {
            sigma: 1.0,
            ..PowerConfig::default()
        };
        assert!(cfg.solar_array_power(2.0 * SECONDS_PER_YEAR).is_err());
        assert!(cfg.solar_array_power(-1.0).is_err());
    }

    #[test]
    fn midpoint_gives_half_blend() {
        let cfg = identity_cfg();
        let (v, _) = cfg.smooth_min_power(cfg.p_max + cfg.p_bus);
        assert!((v - cfg.p_max).abs() < 1e-9);
    }

    #[test]
    fn limits_against_hard_min() {
        let mut cfg = identity_cfg();
        // Shrinking rho_p must approach the hard minimum on both sides.
        let mut last_low = f64::INFINITY;
        let mut last_high = f64::INFINITY;
        for rho in [100.0, 10.0, 1.0, 0.1, 0.01, 1e-3] {
            cfg.rho_p = rho;
            let low = (cfg.available_power(2000.0 + cfg.p_bus) - 2000.0).abs();
            let high = (cfg.available_power(8000.0 + cfg.p_bus) - 4863.0).abs();
            assert!(low <= last_low && high <= last_high);
            last_low = low;
            last_high = high;
        }
        assert!(last_low < 1e-6 && last_high < 1e-6);
    }

    #[test]
    fn opposite_sign_is_a_smooth_max() {
        let cfg = PowerConfig {
            smoothing: Smoothing::Max,
            rho_p: 1e-3,
            ..identity_cfg()
        };
        let (v, _) = cfg.smooth_min_power(2000.0 + cfg.p_bus);
        assert!((v - cfg.p_max).abs() < 1e-3);
    }

    #[test]
    fn only_the_plain_min_is_monotone() {
        let slopes = |smoothing| {
            let cfg = PowerConfig {
                smoothing,
                ..PowerConfig::default()
            };
            (0..20_000)
                .map(|i| cfg.available_power_with_slope(i as f64).1)
                .fold(f64::INFINITY, f64::min)
        };
        assert!(slopes(Smoothing::Min) >= 0.0);
        assert!(slopes(Smoothing::Switch) < 0.0);
        let cfg = PowerConfig::default();
        let cap = cfg.eta_d * cfg.p_max;
        let peak = (0..20_000)
            .map(|i| cfg.available_power(i as f64))
            .fold(0.0, f64::max);
        assert!(peak > cap && peak - cap < 0.151 * cfg.eta_d * cfg.rho_p);
    }

    #[test]
    fn clamp_keeps_power_nonnegative() {
        let cfg = PowerConfig::default();
        for p_sa in [0.0, 100.0, 500.0, 590.0] {
            assert!(cfg.available_power(p_sa) > 0.0);
            assert!(cfg.available_power(p_sa) < 10.0 * cfg.eta_d * cfg.rho_p);
        }
    }

    #[test]
    fn slope_matches_finite_differences() {
        for smoothing in [Smoothing::Min, Smoothing::Switch, Smoothing::Max] {
            let cfg = PowerConfig {
                smoothing,
                ..PowerConfig::default()
            };
            for p_sa in [0.0, 300.0, 590.0, 2500.0, 5400.0, 5453.0, 5460.0, 9000.0] {
                let (_, slope) = cfg.available_power_with_slope(p_sa);
                let fd = richardson(|p| cfg.available_power(p), p_sa, 0.1);
                assert!(
                    relative_error(slope, fd, 1e-4) < 1e-6,
                    "{p_sa}: {slope} vs {fd}"
                );
            }
        }
    }

    #[test]
    fn saturated_area_sensitivity_vanishes() {
        let cfg = PowerConfig {
            rho_p: 1e-3,
            area: 500.0,
            ..PowerConfig::default()
        };
        let (da, _) = cfg.power_partials(0.0).unwrap();
        assert!(da.abs() < 1e-9, "{da}");
    }

    #[test]
    fn area_partial_identity_polynomial() {
        let cfg = identity_cfg();
        let t = 3.0e7;
        let p = cfg.evaluate(cfg.area, t);
        let (_, slope) = cfg.available_power_with_slope(p.p_sa);
        let expect = 0.3 * 1367.0 / (2.9 * 2.9) * cfg.degradation(t) * slope;
        assert!((p.dp_avail_darea - expect).abs() < 1e-12 * expect.abs());
    }

    #[test]
    fn validation_names_fields() {
        let cfg = PowerConfig {
            area: -1.0,
            ..PowerConfig::default()
        };
        match cfg.validate() {
            Err(Error::Validation { field, .. }) => assert_eq!(field, "power.A_SA"),
            other => panic!("{other:?}"),
        }
        let cfg = PowerConfig {
            d: [1.0, 0.0, 0.0, -1.0 / 2.9, 0.0],
            ..PowerConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
