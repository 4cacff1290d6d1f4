//! Mass budget as a function of solar-array area.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MassConfig {
    /// Core bus structure [kg].
    pub m_bus: f64,
    /// Mass of one thruster [kg].
    pub m_eng: f64,
    pub n_eng: u32,
    /// Array areal density [kg/m^2].
    #[serde(rename = "rho_SA")]
    pub rho_sa: f64,
    pub m_propellant: f64,
}

impl Default for MassConfig {
    fn default() -> Self {
        Self {
            m_bus: 200.0,
            m_eng: 4.5,
            n_eng: 1,
            rho_sa: 2.0,
            m_propellant: 100.0,
        }
    }
}

impl MassConfig {
    pub fn validate(&self) -> Result<()> {
        for (field, v) in [
            ("mass.m_bus", self.m_bus),
            ("mass.m_eng", self.m_eng),
            ("mass.rho_SA", self.rho_sa),
            ("mass.m_propellant", self.m_propellant),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::validation(field, format!("must be > 0 (got {v})")));
            }
        }
        if self.n_eng < 1 {
            return Err(Error::validation("mass.n_eng", "must be at least 1"));
        }
        Ok(())
    }

    pub fn dry_mass(&self, area: f64) -> f64 {
        self.m_bus + f64::from(self.n_eng) * self.m_eng + self.rho_sa * area
    }

    pub fn initial_mass(&self, area: f64) -> f64 {
        self.dry_mass(area) + self.m_propellant
    }

    /// d(m_dry)/d(A_SA); identical for the initial mass.
    pub fn mass_per_area(&self) -> f64 {
        self.rho_sa
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn baseline_masses() {
        let cfg = MassConfig::default();
        assert_eq!(cfg.dry_mass(50.0), 304.5);
        assert_eq!(cfg.initial_mass(50.0), 404.5);
        assert_eq!(cfg.dry_mass(0.0), 204.5);
    }

    #[test]
    fn coupled_optimum_masses() {
        let cfg = MassConfig::default();
        assert!((cfg.dry_mass(79.79) - 364.08).abs() < 1e-9);
        assert!((cfg.initial_mass(79.79) - 464.08).abs() < 1e-9);
    }

    #[test]
    fn slope_is_areal_density() {
        let cfg = MassConfig::default();
        assert_eq!(cfg.mass_per_area(), 2.0);
        let fd = (cfg.initial_mass(60.0) - cfg.initial_mass(40.0)) / 20.0;
        assert!((fd - 2.0).abs() < 1e-12);
    }

    #[test]
    fn invalid_fields() {
        let cfg = MassConfig {
            n_eng: 0,
            ..MassConfig::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = MassConfig {
            rho_sa: -1.0,
            ..MassConfig::default()
        };
        assert!(
            matches!(cfg.validate(), Err(Error::Validation { field, .. }) if field == "mass.rho_SA")
        );
    }
}
