use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dynamics::BodyParameters;
use crate::error::{Error, Result};
use crate::fourier_guess::GuessOptions;
use crate::nlp::SolverOptions;
use crate::par::Execution;
use crate::power::PowerConfig;
use crate::propagate::RkTolerances;
use crate::propulsion::{BlendKernel, EngineCluster, ThrottleTable};
use crate::sizing::MassConfig;
use crate::transcription::{Bounds, GridSpec, Mode, TransferSpec};

/// Initial mass used by the baseline when `table3_compat` is set [kg].
pub const COMPAT_BASELINE_MASS: f64 = 418.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OrbitConfig {
    /// Initial circular radius [m].
    pub r0: f64,
    /// Target circular radius [m].
    pub rf: f64,
}

impl Default for OrbitConfig {
    fn default() -> Self {
        Self {
            r0: 750e3,
            rf: 200e3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PropulsionConfig {
    pub n_eng: u32,
    /// Blend bandwidth of the final solve [W].
    pub bandwidth: f64,
    pub kernel: BlendKernel,
    /// Throttle table CSV; the built-in table when absent. Relative paths
    /// resolve against the config file.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub table_csv: Option<PathBuf>,
}

impl Default for PropulsionConfig {
    fn default() -> Self {
        let t = ThrottleTable::default();
        Self {
            n_eng: 1,
            bandwidth: t.bandwidth,
            kernel: t.kernel,
            table_csv: None,
        }
    }
}

/// Blend-bandwidth continuation ahead of the final solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ContinuationConfig {
    /// Bandwidths [W] solved in order before the final one; entries not
    /// above the final bandwidth are skipped.
    pub bandwidths: Vec<f64>,
    /// Barrier parameter for warm-started stages.
    pub warm_barrier: f64,
}

impl Default for ContinuationConfig {
    fn default() -> Self {
        Self {
            bandwidths: vec![400.0, 200.0],
            warm_barrier: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub mode: Mode,
    /// Nondimensionalize the decision variables.
    pub scaling: bool,
    /// Baseline initial mass of 418 kg instead of the sizing model.
    pub table3_compat: bool,
    /// Evaluation of node blocks.
    pub execution: Execution,
    pub body: BodyParameters,
    pub orbit: OrbitConfig,
    pub power: PowerConfig,
    pub mass: MassConfig,
    pub propulsion: PropulsionConfig,
    pub grid: GridSpec,
    pub bounds: Bounds,
    pub guess: GuessOptions,
    pub solver: SolverOptions,
    pub continuation: ContinuationConfig,
    pub propagation: RkTolerances,
    /// Directory that relative paths resolve against.
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Baseline,
            scaling: true,
            table3_compat: false,
            execution: Execution::Parallel,
            body: BodyParameters::psyche(),
            orbit: OrbitConfig::default(),
            power: PowerConfig::default(),
            mass: MassConfig::default(),
            propulsion: PropulsionConfig::default(),
            grid: GridSpec::default(),
            bounds: Bounds::default(),
            guess: GuessOptions::default(),
            solver: SolverOptions::default(),
            continuation: ContinuationConfig::default(),
            propagation: RkTolerances::default(),
            base_dir: None,
        }
    }
}

/// Named starting points for configuration files.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// 750 km to 200 km, 50 segments.
    Psyche,
    /// 300 km to 250 km, 16 segments.
    Desk,
}

impl Preset {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "psyche" => Ok(Preset::Psyche),
            "desk" => Ok(Preset::Desk),
            other => Err(Error::validation(
                "preset",
                format!("unknown preset `{other}` (psyche, desk)"),
            )),
        }
    }

    pub fn config(self, mode: Mode) -> ScenarioConfig {
        let mut cfg = ScenarioConfig {
            mode,
            ..ScenarioConfig::default()
        };
        if self == Preset::Desk {
            cfg.orbit = OrbitConfig {
                r0: 300e3,
                rf: 250e3,
            };
            cfg.grid = GridSpec::new(16, 3);
        }
        cfg
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        self.body.validate()?;
        for (field, v) in [("orbit.r0", self.orbit.r0), ("orbit.rf", self.orbit.rf)] {
            if !(v > self.body.r_min && v.is_finite()) {
                return Err(Error::validation(
                    field,
                    format!("must exceed body.r_min (got {v})"),
                ));
            }
        }
        if self.orbit.r0 == self.orbit.rf {
            return Err(Error::validation("orbit.rf", "must differ from orbit.r0"));
        }
        self.power.validate()?;
        self.mass.validate()?;
        if self.propulsion.n_eng == 0 {
            return Err(Error::validation("propulsion.n_eng", "must be >= 1"));
        }
        if self.propulsion.n_eng != self.mass.n_eng {
            return Err(Error::validation(
                "propulsion.n_eng",
                format!("must equal mass.n_eng ({})", self.mass.n_eng),
            ));
        }
        if !(self.propulsion.bandwidth > 0.0 && self.propulsion.bandwidth.is_finite()) {
            return Err(Error::validation("propulsion.bandwidth", "must be > 0"));
        }
        if let Some(p) = &self.propulsion.table_csv {
            let path = self.resolve(p);
            if !path.is_file() {
                return Err(Error::validation(
                    "propulsion.table_csv",
                    format!("file not found: {}", path.display()),
                ));
            }
        }
        self.grid.validate()?;
        self.bounds.validate()?;
        if self.mode == Mode::Coupled
            && !(self.bounds.area_min..=self.bounds.area_max).contains(&self.power.area)
        {
            return Err(Error::validation(
                "power.A_SA",
                "initial area must lie within [bounds.area_min, bounds.area_max]",
            ));
        }
        self.guess.validate()?;
        self.solver.validate()?;
        if self
            .continuation
            .bandwidths
            .iter()
            .any(|b| !(*b > 0.0 && b.is_finite()))
        {
            return Err(Error::validation(
                "continuation.bandwidths",
                "entries must be > 0",
            ));
        }
        if !(self.continuation.warm_barrier > 0.0 && self.continuation.warm_barrier.is_finite()) {
            return Err(Error::validation(
                "continuation.warm_barrier",
                "must be > 0",
            ));
        }
        self.propagation.validate()?;
        Ok(())
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        match &self.base_dir {
            Some(dir) if p.is_relative() => dir.join(p),
            _ => p.to_path_buf(),
        }
    }

    pub fn engine(&self) -> Result<EngineCluster> {
        let table = match &self.propulsion.table_csv {
            Some(p) => ThrottleTable::from_csv_path(&self.resolve(p), self.propulsion.bandwidth)?,
            None => ThrottleTable::default().with_bandwidth(self.propulsion.bandwidth),
        }
        .with_kernel(self.propulsion.kernel);
        Ok(EngineCluster {
            n_eng: self.propulsion.n_eng,
            table,
        })
    }

    pub fn transfer_spec(&self) -> Result<TransferSpec> {
        let spec = TransferSpec {
            body: self.body,
            r0: self.orbit.r0,
            rf: self.orbit.rf,
            power: self.power.clone(),
            mass: self.mass.clone(),
            engine: self.engine()?,
            mode: self.mode,
            bounds: self.bounds.clone(),
            baseline_initial_mass: self.table3_compat.then_some(COMPAT_BASELINE_MASS),
            scaled: self.scaling,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Bandwidths of every solve stage, the configured one last.
    pub fn bandwidth_schedule(&self) -> Vec<f64> {
        let last = self.propulsion.bandwidth;
        let mut out: Vec<f64> = self
            .continuation
            .bandwidths
            .iter()
            .copied()
            .filter(|b| *b > last)
            .collect();
        out.push(last);
        out
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::validation("config", e.to_string()))
    }

    /// Parses TOML text with optional `dotted.key=value` overrides and validates.
    pub fn from_toml_str(text: &str, origin: &Path, overrides: &[String]) -> Result<Self> {
        let parse_err = |e: toml::de::Error| Error::Parse {
            path: origin.to_path_buf(),
            message: e.to_string(),
        };
        // direct deserialization keeps line information in errors
        let mut cfg: ScenarioConfig = toml::from_str(text).map_err(parse_err)?;
        if !overrides.is_empty() {
            let mut root: toml::Table = text.parse().map_err(parse_err)?;
            for o in overrides {
                apply_override(&mut root, o)?;
            }
            cfg = root.try_into().map_err(|e: toml::de::Error| Error::Parse {
                path: origin.to_path_buf(),
                message: format!("after overrides: {e}"),
            })?;
        }
        cfg.base_dir = origin.parent().map(Path::to_path_buf);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text, path, overrides)
    }

    /// Applies overrides to an already loaded config.
    pub fn with_overrides(&self, overrides: &[String]) -> Result<Self> {
        let text = self.to_toml()?;
        let origin = match &self.base_dir {
            Some(d) => d.join("<resolved>"),
            None => PathBuf::from("<resolved>"),
        };
        Self::from_toml_str(&text, &origin, overrides)
    }
}

/// Sets `a.b.c=value` in `root`; the value is read as TOML, falling back to a
/// bare string. Unknown keys are rejected later by deserialization.
fn apply_override(root: &mut toml::Table, spec: &str) -> Result<()> {
    let (path, raw) = spec.split_once('=').ok_or_else(|| {
        Error::validation("override", format!("expected key=value, got `{spec}`"))
    })?;
    let path = path.trim();
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(Error::validation(
            "override",
            format!("malformed key `{path}`"),
        ));
    }
    let value = parse_value(raw.trim());
    let mut table = root;
    for k in &keys[..keys.len() - 1] {
        let entry = table
            .entry(k.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| Error::validation(path, format!("`{k}` is not a table")))?;
    }
    table.insert(keys[keys.len() - 1].to_string(), value);
    Ok(())
}

fn parse_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}
