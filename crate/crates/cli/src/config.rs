//! Run configuration: JSON file, then `OFO_*` environment overrides, then flags.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use ofo_core::powergrid::{self, GridModel, GridSpec};
use ofo_core::{
    ConstantConvention, ControllerConfig, ControllerMode, DMatrix, DVector, LtiPlant, PlantKind,
    SensitivityModel, SeparableObjective,
};

use crate::error::CliError;

/// Top-level keys, each overridable by `OFO_<KEY>` (upper case).
pub const KEYS: [&str; 17] = [
    "mode",
    "eta",
    "gamma1",
    "gamma2",
    "y_ref",
    "plant",
    "grid",
    "sensitivity",
    "steps",
    "x0",
    "u0",
    "decimation",
    "seed",
    "loop",
    "convention",
    "eta_grid",
    "parallel",
];

pub const DEFAULT_ETA_GRID: [f64; 6] = [0.01, 0.02, 0.05, 0.1, 0.2, 0.5];

/// Initial condition: explicit vector or a seeded draw from `[-1, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Init {
    Vector(Vec<f64>),
    Named(InitKind),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitKind {
    Zero,
    Random,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub mode: Option<ControllerMode>,
    pub eta: Option<f64>,
    pub gamma1: Option<f64>,
    pub gamma2: Option<f64>,
    pub y_ref: Option<Vec<f64>>,
    /// Plant JSON object or path to one.
    pub plant: Option<Value>,
    /// Partial grid spec merged onto the default topology (with optional
    /// uniform conductance `g`), or path to a full spec.
    pub grid: Option<Value>,
    /// `{"H": [[..]], "d": [..]}` for algebraic-only runs.
    pub sensitivity: Option<Value>,
    pub steps: Option<usize>,
    pub x0: Option<Init>,
    pub u0: Option<Init>,
    pub decimation: Option<usize>,
    pub seed: Option<u64>,
    #[serde(rename = "loop")]
    pub loop_kind: Option<PlantKind>,
    pub convention: Option<ConstantConvention>,
    pub eta_grid: Option<Vec<f64>>,
    pub parallel: Option<bool>,
}

/// Global flag values that override the file and environment.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub convention: Option<ConstantConvention>,
}

pub struct Loaded {
    pub config: RunConfig,
    /// Resolved configuration as recorded in manifests.
    pub resolved: Value,
    base_dir: PathBuf,
}

fn parse_env_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

pub fn load(path: Option<&Path>, overrides: &Overrides) -> Result<Loaded, CliError> {
    let (mut map, base_dir) = match path {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| CliError::Config(format!("cannot read {}: {e}", p.display())))?;
            let value: Value = serde_json::from_str(&text)
                .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
            let Value::Object(map) = value else {
                return Err(CliError::Config(format!("{}: top level must be an object", p.display())));
            };
            (map, p.parent().map(Path::to_path_buf).unwrap_or_default())
        }
        None => (Map::new(), PathBuf::new()),
    };
    for key in KEYS {
        if let Ok(raw) = std::env::var(format!("OFO_{}", key.to_ascii_uppercase())) {
            map.insert(key.to_string(), parse_env_value(&raw));
        }
    }
    if let Some(seed) = overrides.seed {
        map.insert("seed".into(), seed.into());
    }
    if let Some(c) = overrides.convention {
        map.insert("convention".into(), serde_json::to_value(c).expect("enum serializes"));
    }
    let resolved = Value::Object(map);
    let config: RunConfig =
        serde_json::from_value(resolved.clone()).map_err(|e| CliError::Config(format!("config: {e}")))?;
    config.validate()?;
    Ok(Loaded { config, resolved, base_dir })
}

impl RunConfig {
    fn validate(&self) -> Result<(), CliError> {
        let sources = [&self.plant, &self.grid, &self.sensitivity].iter().filter(|s| s.is_some()).count();
        if sources > 1 {
            return Err(CliError::Config("config: give exactly one of `plant`, `grid`, `sensitivity`".into()));
        }
        if let Some(eta) = self.eta {
            if !(eta > 0.0 && eta.is_finite()) {
                return Err(CliError::Config(format!("config: `eta` must be positive, got {eta}")));
            }
        }
        if self.steps == Some(0) {
            return Err(CliError::Config("config: `steps` must be at least 1".into()));
        }
        if self.decimation == Some(0) {
            return Err(CliError::Config("config: `decimation` must be at least 1".into()));
        }
        Ok(())
    }

    pub fn require_eta(&self) -> Result<f64, CliError> {
        self.eta.ok_or_else(|| CliError::Config("config: missing required key `eta`".into()))
    }

    pub fn require_source(&self) -> Result<(), CliError> {
        if self.plant.is_none() && self.grid.is_none() && self.sensitivity.is_none() {
            return Err(CliError::Config("config: missing plant source; give one of `plant`, `grid`, `sensitivity`".into()));
        }
        Ok(())
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn steps(&self) -> usize {
        self.steps.unwrap_or(ofo_core::sim::DEFAULT_MAX_STEPS)
    }

    pub fn decimation(&self) -> usize {
        self.decimation.unwrap_or(1)
    }

    pub fn convention(&self) -> ConstantConvention {
        self.convention.unwrap_or(ConstantConvention::Tight)
    }

    pub fn eta_grid(&self) -> Vec<f64> {
        self.eta_grid.clone().unwrap_or_else(|| DEFAULT_ETA_GRID.to_vec())
    }

    pub fn mode(&self) -> ControllerMode {
        self.mode.unwrap_or(ControllerMode::Decentralized)
    }

    pub fn controller(&self) -> Result<ControllerConfig, CliError> {
        Ok(ControllerConfig::new(self.mode(), self.require_eta()?)?)
    }
}

/// Everything a command needs about the controlled system.
pub struct Problem {
    pub obj: SeparableObjective,
    pub model: SensitivityModel,
    pub d: DVector<f64>,
    pub plant: Option<LtiPlant>,
    pub grid: Option<GridModel>,
}

impl Problem {
    pub fn n(&self) -> usize {
        self.model.n()
    }
}

fn read_json(base: &Path, key: &str, rel: &str) -> Result<Value, CliError> {
    let path = base.join(rel);
    let text = fs::read_to_string(&path).map_err(|e| CliError::Config(format!("`{key}`: cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("`{key}`: {}: {e}", path.display())))
}

fn resolve(base: &Path, key: &str, v: &Value) -> Result<Value, CliError> {
    match v {
        Value::String(p) => read_json(base, key, p),
        other => Ok(other.clone()),
    }
}

/// Grid spec from a `grid` value: a path to a full spec, or a partial object
/// merged onto the default topology. A `g` entry sets a uniform conductance.
pub fn grid_spec(base: &Path, value: Option<&Value>) -> Result<GridSpec, CliError> {
    let Some(value) = value else {
        return Ok(powergrid::default_topology());
    };
    if let Value::String(_) = value {
        let full = resolve(base, "grid", value)?;
        return Ok(GridSpec::from_json_str(&full.to_string())?);
    }
    let Value::Object(partial) = value else {
        return Err(CliError::Config("config: `grid` must be an object or a path".into()));
    };
    let mut partial = partial.clone();
    let g = match partial.remove("g") {
        Some(v) => Some(v.as_f64().ok_or_else(|| CliError::Config("config: `grid.g` must be a number".into()))?),
        None => None,
    };
    let Value::Object(mut merged) = serde_json::to_value(powergrid::default_topology()).expect("spec serializes") else {
        unreachable!("grid spec is an object")
    };
    merged.extend(partial);
    let mut spec: GridSpec = serde_json::from_value(Value::Object(merged)).map_err(|e| CliError::Config(format!("config: grid: {e}")))?;
    if let Some(g) = g {
        spec = spec.with_conductance(g);
    }
    spec.validate()?;
    Ok(spec)
}

fn matrix(v: &Value, key: &str) -> Result<DMatrix<f64>, CliError> {
    let rows: Vec<Vec<f64>> = serde_json::from_value(v.clone()).map_err(|e| CliError::Config(format!("config: `{key}`: {e}")))?;
    ofo_core::linalg::matrix_from_rows(&rows).map_err(|e| CliError::Config(format!("config: `{key}`: {e}")))
}

impl Loaded {
    pub fn grid_spec(&self) -> Result<GridSpec, CliError> {
        let mut spec = grid_spec(&self.base_dir, self.config.grid.as_ref())?;
        if let Some(g1) = self.config.gamma1 {
            spec.gamma1 = g1;
        }
        if let Some(g2) = self.config.gamma2 {
            spec.gamma2 = g2;
        }
        spec.validate()?;
        Ok(spec)
    }

    /// Builds the problem; `force_grid` ignores other sources and uses the
    /// (possibly default) grid.
    pub fn problem(&self, force_grid: bool) -> Result<Problem, CliError> {
        let cfg = &self.config;
        if force_grid || cfg.grid.is_some() {
            if force_grid && (cfg.plant.is_some() || cfg.sensitivity.is_some()) {
                return Err(CliError::Config("config: grid commands need a `grid` source".into()));
            }
            let grid = powergrid::assemble_plant(&self.grid_spec()?)?;
            let y_ref = match &cfg.y_ref {
                Some(v) => DVector::from_column_slice(v),
                None => grid.y_ref.clone(),
            };
            let obj = SeparableObjective::quadratic(grid.spec.gamma1, grid.spec.gamma2, y_ref)?;
            return Ok(Problem {
                obj,
                model: grid.model.clone(),
                d: grid.disturbance.clone(),
                plant: Some(grid.plant.clone()),
                grid: Some(grid),
            });
        }
        cfg.require_source()?;
        let (model, d, plant) = if let Some(p) = &cfg.plant {
            let value = resolve(&self.base_dir, "plant", p)?;
            let plant = LtiPlant::from_json_str(&value.to_string())?;
            let model = ofo_core::plant::compute_sensitivity(&plant)?;
            (model, plant.disturbance().clone(), Some(plant))
        } else {
            let value = resolve(&self.base_dir, "sensitivity", cfg.sensitivity.as_ref().expect("source checked"))?;
            let h = matrix(value.get("H").ok_or_else(|| CliError::Config("config: `sensitivity.H` is missing".into()))?, "sensitivity.H")?;
            let n = h.nrows();
            let d = match value.get("d") {
                Some(v) => DVector::from_vec(
                    serde_json::from_value(v.clone()).map_err(|e| CliError::Config(format!("config: `sensitivity.d`: {e}")))?,
                ),
                None => DVector::zeros(n),
            };
            (SensitivityModel::from_h(h)?, d, None)
        };
        let n = model.n();
        let y_ref = cfg.y_ref.clone().map(DVector::from_vec).unwrap_or_else(|| DVector::zeros(n));
        if y_ref.len() != n || d.len() != n {
            return Err(CliError::Config(format!("config: `y_ref` and `d` need {n} entries")));
        }
        let obj = SeparableObjective::quadratic(cfg.gamma1.unwrap_or(1.0), cfg.gamma2.unwrap_or(1.0), y_ref)?;
        Ok(Problem { obj, model, d, plant, grid: None })
    }

    pub fn loop_kind(&self, problem: &Problem) -> Result<PlantKind, CliError> {
        match (self.config.loop_kind, &problem.plant) {
            (Some(PlantKind::Lti), None) => Err(CliError::Config(
                "config: `loop` = lti needs a `plant` or `grid` source".into(),
            )),
            (Some(kind), _) => Ok(kind),
            (None, Some(_)) => Ok(PlantKind::Lti),
            (None, None) => Ok(PlantKind::Algebraic),
        }
    }

    pub fn initial(&self, key: &str, init: Option<&Init>, n: usize, rng: &mut ChaCha8Rng) -> Result<DVector<f64>, CliError> {
        match init {
            None | Some(Init::Named(InitKind::Zero)) => Ok(DVector::zeros(n)),
            Some(Init::Named(InitKind::Random)) => Ok(DVector::from_fn(n, |_, _| rng.random_range(-1.0..=1.0))),
            Some(Init::Vector(v)) if v.len() == n => Ok(DVector::from_column_slice(v)),
            Some(Init::Vector(v)) => Err(CliError::Config(format!("config: `{key}` needs {n} entries, found {}", v.len()))),
        }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.config.seed())
    }
}
