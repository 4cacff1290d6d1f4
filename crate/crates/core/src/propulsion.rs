//! Throttle-table electric propulsion with a differentiable mode blend.
//!
//! A continuous commanded power is mapped onto the discrete operating points
//! through normalized kernel weights (a softmax over per-mode log-weights),
//! and thrust and mass flow are the weighted averages of the table columns.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Standard gravity used for specific impulse [m/s^2].
pub const G0: f64 = 9.80665;

const MN_TO_N: f64 = 1e-3;
const MG_TO_KG: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThrottleMode {
    pub mode: u32,
    #[serde(rename = "power_w")]
    pub power: f64,
    /// Thrust [mN].
    #[serde(rename = "thrust_mn")]
    pub thrust: f64,
    /// Mass flow [mg/s].
    #[serde(rename = "mdot_mg_s")]
    pub mass_flow: f64,
    #[serde(rename = "isp_s")]
    pub isp: f64,
    pub efficiency: f64,
}

const fn row(
    mode: u32,
    power: f64,
    thrust: f64,
    mass_flow: f64,
    isp: f64,
    eff: f64,
) -> ThrottleMode {
    ThrottleMode {
        mode,
        power,
        thrust,
        mass_flow,
        isp,
        efficiency: eff,
    }
}

/// SPT-140 operating points.
pub const SPT140_MODES: [ThrottleMode; 21] = [
    row(1, 4989.0, 263.0, 13.9, 1929.0, 0.50),
    row(2, 4620.0, 270.0, 16.5, 1670.0, 0.48),
    row(3, 4589.0, 287.0, 17.8, 1647.0, 0.50),
    row(4, 4561.0, 264.0, 16.4, 1645.0, 0.47),
    row(5, 4502.0, 260.0, 16.2, 1641.0, 0.46),
    row(6, 4375.0, 246.0, 14.0, 1790.0, 0.49),
    row(7, 3937.0, 251.0, 17.5, 1461.0, 0.46),
    row(8, 3894.0, 251.0, 17.5, 1464.0, 0.46),
    row(9, 3850.0, 251.0, 17.5, 1464.0, 0.47),
    row(10, 3758.0, 217.0, 13.9, 1597.0, 0.45),
    row(11, 3752.0, 221.0, 13.9, 1617.0, 0.47),
    row(12, 3750.0, 215.0, 13.6, 1614.0, 0.45),
    row(13, 3460.0, 184.0, 17.1, 1099.0, 0.29),
    row(14, 3446.0, 185.0, 20.4, 925.0, 0.24),
    row(15, 3402.0, 189.0, 16.3, 1181.0, 0.32),
    row(16, 3377.0, 201.0, 15.8, 1302.0, 0.38),
    row(17, 3376.0, 175.0, 18.2, 979.0, 0.25),
    row(18, 3360.0, 198.0, 14.7, 1371.0, 0.40),
    row(19, 3142.0, 191.0, 13.8, 1409.0, 0.42),
    row(20, 3008.0, 177.0, 11.4, 1579.0, 0.46),
    row(21, 1514.0, 87.0, 6.1, 1449.0, 0.41),
];

/// Shape of the per-mode activation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlendKernel {
    /// `exp(-(P - P_i)^2 / (2 s^2))`, normalized.
    #[default]
    Gaussian,
    /// Product of two logistic functions of the power margin
    /// `(P - P_i)/s`, one per side, normalized.
    MarginSigmoid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThrottleTable {
    pub modes: Vec<ThrottleMode>,
    /// Blend bandwidth `s` [W].
    pub bandwidth: f64,
    pub kernel: BlendKernel,
}

impl Default for ThrottleTable {
    fn default() -> Self {
        Self::spt140(100.0)
    }
}

/// Blended outputs for a single engine and their power sensitivities (SI).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Blend {
    pub thrust: f64,
    pub mdot: f64,
    pub dthrust_dp: f64,
    pub dmdot_dp: f64,
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl ThrottleTable {
    pub fn spt140(bandwidth: f64) -> Self {
        Self {
            modes: SPT140_MODES.to_vec(),
            bandwidth,
            kernel: BlendKernel::Gaussian,
        }
    }

    pub fn with_bandwidth(mut self, bandwidth: f64) -> Self {
        self.bandwidth = bandwidth;
        self
    }

    pub fn with_kernel(mut self, kernel: BlendKernel) -> Self {
        self.kernel = kernel;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.modes.is_empty() {
            return Err(Error::validation("propulsion.table", "no throttle modes"));
        }
        if !(self.bandwidth > 0.0 && self.bandwidth.is_finite()) {
            return Err(Error::validation("propulsion.bandwidth", "must be > 0"));
        }
        for m in &self.modes {
            let ok = m.power > 0.0
                && m.thrust > 0.0
                && m.mass_flow > 0.0
                && m.isp > 0.0
                && m.efficiency > 0.0
                && m.efficiency < 1.0;
            if !ok {
                return Err(Error::validation(
                    "propulsion.table",
                    format!(
                        "mode {} has a non-positive entry or efficiency outside (0,1)",
                        m.mode
                    ),
                ));
            }
        }
        Ok(())
    }

    /// Loads a table from CSV with header
    /// `mode,power_w,thrust_mn,mdot_mg_s,isp_s,efficiency`.
    pub fn from_csv_path(path: &Path, bandwidth: f64) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let table = Self::from_csv_reader(file, bandwidth).map_err(|e| match e {
            Error::Csv(c) => Error::Parse {
                path: path.to_path_buf(),
                message: c.to_string(),
            },
            other => other,
        })?;
        Ok(table)
    }

    pub fn from_csv_reader(reader: impl std::io::Read, bandwidth: f64) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(reader);
        let expected = [
            "mode",
            "power_w",
            "thrust_mn",
            "mdot_mg_s",
            "isp_s",
            "efficiency",
        ];
        let headers = rdr.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != expected {
            return Err(Error::validation(
                "propulsion.table_csv",
                format!("header must be `{}`", expected.join(",")),
            ));
        }
        let modes = rdr
            .deserialize()
            .collect::<std::result::Result<Vec<ThrottleMode>, _>>()?;
        let table = Self {
            modes,
            bandwidth,
            kernel: BlendKernel::Gaussian,
        };
        table.validate()?;
        Ok(table)
    }

    pub fn write_csv(&self, writer: impl std::io::Write) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        for m in &self.modes {
            wtr.serialize(m)?;
        }
        wtr.flush().map_err(|e| Error::io("<throttle table>", e))?;
        Ok(())
    }

    pub fn min_power(&self) -> f64 {
        self.modes
            .iter()
            .map(|m| m.power)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn max_power(&self) -> f64 {
        self.modes
            .iter()
            .map(|m| m.power)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Largest single-engine thrust in the table [N].
    pub fn max_thrust(&self) -> f64 {
        self.modes.iter().map(|m| m.thrust).fold(0.0, f64::max) * MN_TO_N
    }

    pub fn min_thrust(&self) -> f64 {
        self.modes
            .iter()
            .map(|m| m.thrust)
            .fold(f64::INFINITY, f64::min)
            * MN_TO_N
    }

    /// Log-weight of each mode and its derivative with respect to power.
    fn log_weights(&self, p: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let s = self.bandwidth;
        self.modes.iter().map(move |m| {
            let z = (p - m.power) / s;
            match self.kernel {
                BlendKernel::Gaussian => (-0.5 * z * z, -z / s),
                BlendKernel::MarginSigmoid => (
                    -softplus(z - 1.0) - softplus(-z - 1.0),
                    (logistic(-z - 1.0) - logistic(z - 1.0)) / s,
                ),
            }
        })
    }

    /// Normalized activation weights for commanded power `p` [W].
    pub fn mode_weights(&self, p: f64) -> Vec<f64> {
        self.weights_and_slopes(p).0
    }

    /// Weights and d(weight)/dP.
    pub fn weights_and_slopes(&self, p: f64) -> (Vec<f64>, Vec<f64>) {
        let logs: Vec<(f64, f64)> = self.log_weights(p).collect();
        let peak = logs.iter().map(|l| l.0).fold(f64::NEG_INFINITY, f64::max);
        let mut w: Vec<f64> = logs.iter().map(|l| (l.0 - peak).exp()).collect();
        let total: f64 = w.iter().sum();
        w.iter_mut().for_each(|v| *v /= total);
        let mean_slope: f64 = w.iter().zip(&logs).map(|(wi, l)| wi * l.1).sum();
        let dw = w
            .iter()
            .zip(&logs)
            .map(|(wi, l)| wi * (l.1 - mean_slope))
            .collect();
        (w, dw)
    }

    /// Single-engine blended thrust and mass flow in SI units.
    pub fn blend(&self, p: f64) -> Blend {
        let (w, dw) = self.weights_and_slopes(p);
        let mut out = Blend {
            thrust: 0.0,
            mdot: 0.0,
            dthrust_dp: 0.0,
            dmdot_dp: 0.0,
        };
        for ((m, wi), dwi) in self.modes.iter().zip(&w).zip(&dw) {
            out.thrust += wi * m.thrust;
            out.mdot += wi * m.mass_flow;
            out.dthrust_dp += dwi * m.thrust;
            out.dmdot_dp += dwi * m.mass_flow;
        }
        out.thrust *= MN_TO_N;
        out.dthrust_dp *= MN_TO_N;
        out.mdot *= MG_TO_KG;
        out.dmdot_dp *= MG_TO_KG;
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineCluster {
    pub n_eng: u32,
    pub table: ThrottleTable,
}

impl Default for EngineCluster {
    fn default() -> Self {
        Self {
            n_eng: 1,
            table: ThrottleTable::default(),
        }
    }
}

impl EngineCluster {
    pub fn new(n_eng: u32, table: ThrottleTable) -> Self {
        Self { n_eng, table }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_eng < 1 {
            return Err(Error::validation("propulsion.n_eng", "must be at least 1"));
        }
        self.table.validate()
    }

    /// Total thrust [N] and mass flow [kg/s] for commanded power `p` [W].
    pub fn thrust_and_mdot(&self, p: f64) -> (f64, f64) {
        let b = self.blend(p);
        (b.thrust, b.mdot)
    }

    /// (dT/dP, dmdot/dP) for the whole cluster.
    pub fn propulsion_partials(&self, p: f64) -> (f64, f64) {
        let b = self.blend(p);
        (b.dthrust_dp, b.dmdot_dp)
    }

    /// Blend for the whole cluster.
    pub fn blend(&self, p: f64) -> Blend {
        let n = f64::from(self.n_eng);
        let b = self.table.blend(p);
        Blend {
            thrust: n * b.thrust,
            mdot: n * b.mdot,
            dthrust_dp: n * b.dthrust_dp,
            dmdot_dp: n * b.dmdot_dp,
        }
    }

    pub fn max_thrust(&self) -> f64 {
        f64::from(self.n_eng) * self.table.max_thrust()
    }

    /// Smallest commanded power in `[lo, hi]` whose blended thrust reaches
    /// `target` [N], searching on the running maximum of the blended curve.
    /// Returns `lo` or `hi` when the target is out of reach.
    pub fn power_for_thrust(&self, target: f64, lo: f64, hi: f64) -> f64 {
        let thrust = |p: f64| self.blend(p).thrust;
        if thrust(lo) >= target {
            return lo;
        }
        let step = (self.table.bandwidth * 0.25).max((hi - lo) * 1e-4);
        let mut prev = lo;
        let mut p = lo;
        while p < hi {
            p = (p + step).min(hi);
            if thrust(p) >= target {
                // thrust(prev) < target <= thrust(p)
                let (mut a, mut b) = (prev, p);
                for _ in 0..80 {
                    let mid = 0.5 * (a + b);
                    if thrust(mid) >= target {
                        b = mid;
                    } else {
                        a = mid;
                    }
                }
                return b;
            }
            prev = p;
        }
        hi
    }
}
