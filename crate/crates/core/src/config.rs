//! Run configuration read from a TOML file.
//!
//! ```toml
//! model = "full"          # or "perturb"
//! T_end = 0.5
//! dt = 2e-4
//!
//! [grid]
//! dim = 2
//! n = 32                  # or one entry per axis, e.g. [32, 64]
//! ```
//!
//! Optional top-level keys: `sample_every`, `snapshot_every`, `s_order`, `M_e`, `out`,
//! `deterministic`. Optional sections: `[params]`, `[step]`, `[initial]`, `[h_ext]`,
//! `[coeffs]`. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;

use crate::energetics::CoeffChoice;
use crate::grid::{Field, Grid, Rank};
use crate::io::{read_snapshot, read_vector_field, Snapshot};
use crate::mms::{Manufactured, Model};
use crate::state::{equilibrium_state, make_compatible, random_full_state, random_perturbation, validate_params, ExternalField, Params, PerturbState};
use crate::stepper::{Scheme, StepConfig};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{0}")]
    Parse(String),
    #[error("{key}: {message}")]
    Invalid { key: String, message: String },
    #[error("{0}")]
    Load(String),
}

fn invalid(key: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { key: key.to_string(), message: message.into() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Full,
    Perturb,
}

impl From<ModelKind> for Model {
    fn from(m: ModelKind) -> Self {
        match m {
            ModelKind::Full => Model::Full,
            ModelKind::Perturb => Model::Perturb,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum PointCount {
    Uniform(usize),
    PerAxis(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub dim: usize,
    pub n: PointCount,
}

impl GridSpec {
    pub fn build(&self) -> Result<Grid, ConfigError> {
        let n = match &self.n {
            PointCount::Uniform(n) => vec![*n; self.dim],
            PointCount::PerAxis(v) => {
                if v.len() != self.dim {
                    return Err(invalid("grid.n", format!("{} entries for dim = {}", v.len(), self.dim)));
                }
                v.clone()
            }
        };
        if !(1..=3).contains(&self.dim) {
            return Err(invalid("grid.dim", "must be 1, 2 or 3"));
        }
        Grid::new(&n).map_err(|e| invalid("grid.n", e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StepSpec {
    pub scheme: SchemeKind,
    pub cfl_safety: f64,
    pub picard_tol: f64,
    pub picard_max_iters: usize,
    #[serde(rename = "renormalize_M")]
    pub renormalize_m: bool,
}

impl Default for StepSpec {
    fn default() -> Self {
        let d = StepConfig::rk4(1.0);
        Self {
            scheme: SchemeKind::Rk4,
            cfl_safety: d.cfl_safety,
            picard_tol: d.picard_tol,
            picard_max_iters: d.picard_max_iters,
            renormalize_m: d.renormalize_m,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SchemeKind {
    #[default]
    Rk4,
    Picard,
}

#[derive(Debug, Clone, PartialEq, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum InitialSpec {
    #[default]
    Equilibrium,
    Random {
        amplitude: f64,
        #[serde(default)]
        seed: u64,
    },
    Manufactured {
        name: String,
    },
    Snapshot {
        path: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum HExtSpec {
    #[default]
    Zero,
    Constant {
        value: [f64; 3],
    },
    File {
        path: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoeffSpec {
    pub delta: f64,
    pub eta: f64,
    pub epsilon: f64,
}

fn default_sample_every() -> usize {
    1
}

fn default_s_order() -> usize {
    3
}

fn default_m_e() -> [f64; 3] {
    [0.0, 0.0, 1.0]
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelKind,
    pub grid: GridSpec,
    #[serde(rename = "T_end")]
    pub t_end: f64,
    pub dt: f64,
    #[serde(default)]
    pub params: Params,
    #[serde(default)]
    pub step: StepSpec,
    #[serde(default)]
    pub initial: InitialSpec,
    #[serde(default)]
    pub h_ext: HExtSpec,
    #[serde(default)]
    pub coeffs: Option<CoeffSpec>,
    #[serde(default = "default_sample_every")]
    pub sample_every: usize,
    #[serde(default)]
    pub snapshot_every: Option<usize>,
    #[serde(default = "default_s_order")]
    pub s_order: usize,
    #[serde(rename = "M_e", default = "default_m_e")]
    pub m_e: [f64; 3],
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub deterministic: bool,
}

/// The key a parameter condition such as `"mu+xi>0"` refers to.
fn condition_key(cond: &str) -> String {
    let name: String = cond.chars().take_while(|c| c.is_alphanumeric() || *c == '_').collect();
    match name.as_str() {
        "A" => "params.A".into(),
        "finite" => "params".into(),
        other => format!("params.{other}"),
    }
}

pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let cfg: RunConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string().trim_end().to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Load(format!("{}: {e}", path.display())))?;
    parse_config(&text)
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if let Some(cond) = validate_params(&self.params).first() {
            return Err(invalid(&condition_key(cond), format!("violates {cond}")));
        }
        self.grid.build()?;
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return Err(invalid("T_end", "must be positive"));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(invalid("dt", "must be positive"));
        }
        if self.sample_every == 0 {
            return Err(invalid("sample_every", "must be at least 1"));
        }
        if self.snapshot_every == Some(0) {
            return Err(invalid("snapshot_every", "must be at least 1"));
        }
        if self.s_order > crate::grid::MAX_SOBOLEV_ORDER {
            return Err(invalid("s_order", format!("at most {}", crate::grid::MAX_SOBOLEV_ORDER)));
        }
        let norm = self.m_e.iter().map(|x| x * x).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-12 {
            return Err(invalid("M_e", "must be a unit vector"));
        }
        let s = &self.step;
        if !(s.cfl_safety > 0.0 && s.cfl_safety <= 1.0) {
            return Err(invalid("step.cfl_safety", "must lie in (0, 1]"));
        }
        if !(s.picard_tol > 0.0) {
            return Err(invalid("step.picard_tol", "must be positive"));
        }
        if s.picard_max_iters == 0 {
            return Err(invalid("step.picard_max_iters", "must be at least 1"));
        }
        if self.model == ModelKind::Perturb {
            if s.scheme == SchemeKind::Picard {
                return Err(invalid("step.scheme", "the picard scheme is available for the full model only"));
            }
            if self.h_ext != HExtSpec::Zero {
                return Err(invalid("h_ext", "the perturbation model has no external field"));
            }
        }
        match &self.initial {
            InitialSpec::Random { amplitude, .. } if !(*amplitude > 0.0) => {
                return Err(invalid("initial.amplitude", "must be positive"));
            }
            InitialSpec::Manufactured { name } if name != "full" && name != "perturb" => {
                return Err(invalid("initial.name", format!("unknown manufactured solution {name:?} (full, perturb)")));
            }
            InitialSpec::Manufactured { name } if (name == "full") != (self.model == ModelKind::Full) => {
                return Err(invalid("initial.name", "manufactured solution does not match the model"));
            }
            _ => {}
        }
        if let HExtSpec::Constant { value } = &self.h_ext {
            if value.iter().any(|x| !x.is_finite()) {
                return Err(invalid("h_ext.value", "must be finite"));
            }
        }
        if let Some(c) = &self.coeffs {
            if !(c.delta > 0.0 && c.eta > 0.0 && c.epsilon > 0.0) {
                return Err(invalid("coeffs", "delta, eta and epsilon must be positive"));
            }
        }
        Ok(())
    }

    pub fn step_config(&self) -> StepConfig {
        StepConfig {
            dt: self.dt,
            cfl_safety: self.step.cfl_safety,
            picard_tol: self.step.picard_tol,
            picard_max_iters: self.step.picard_max_iters,
            renormalize_m: self.step.renormalize_m,
            scheme: match self.step.scheme {
                SchemeKind::Rk4 => Scheme::Rk4,
                SchemeKind::Picard => Scheme::Picard,
            },
        }
    }

    pub fn coeff_choice(&self) -> Option<CoeffChoice> {
        self.coeffs.map(|c| CoeffChoice::at_equilibrium(c.delta, c.eta, c.epsilon))
    }

    pub fn manufactured(&self) -> Option<Manufactured> {
        match &self.initial {
            InitialSpec::Manufactured { .. } => Some(Manufactured { m_e: self.m_e, ..Manufactured::default() }),
            _ => None,
        }
    }

    pub fn external_field(&self, grid: &Grid) -> Result<ExternalField, ConfigError> {
        match &self.h_ext {
            HExtSpec::Zero => Ok(ExternalField::Zero),
            HExtSpec::Constant { value } => Ok(ExternalField::Static(Field::constant(grid, Rank::Vector, value))),
            HExtSpec::File { path } => {
                let f = read_vector_field(path).map_err(|e| ConfigError::Load(format!("{}: {e}", path.display())))?;
                if f.grid() != grid {
                    return Err(invalid("h_ext.path", "field grid differs from the run grid"));
                }
                Ok(ExternalField::Static(f))
            }
        }
    }

    /// Builds the initial state.
    pub fn initial_state(&self) -> Result<Snapshot, ConfigError> {
        let grid = self.grid.build()?;
        let wrap = |e: crate::Error| invalid("initial", e.to_string());
        let snap = match (&self.initial, self.model) {
            (InitialSpec::Equilibrium, ModelKind::Full) => Snapshot::Full(equilibrium_state(&grid, self.m_e).map_err(wrap)?),
            (InitialSpec::Equilibrium, ModelKind::Perturb) => Snapshot::Perturb(PerturbState::zero(&grid, self.m_e).map_err(wrap)?),
            (InitialSpec::Random { amplitude, seed }, ModelKind::Full) => {
                Snapshot::Full(random_full_state(&grid, self.m_e, *amplitude, *seed).map_err(wrap)?)
            }
            (InitialSpec::Random { amplitude, seed }, ModelKind::Perturb) => {
                Snapshot::Perturb(make_compatible(&random_perturbation(&grid, self.m_e, *amplitude, *seed).map_err(wrap)?))
            }
            (InitialSpec::Manufactured { .. }, ModelKind::Full) => Snapshot::Full(self.manufactured().unwrap().full(&grid, 0.0).0),
            (InitialSpec::Manufactured { .. }, ModelKind::Perturb) => {
                Snapshot::Perturb(self.manufactured().unwrap().perturb(&grid, 0.0).0)
            }
            (InitialSpec::Snapshot { path }, model) => {
                let snap = read_snapshot(path).map_err(|e| ConfigError::Load(format!("{}: {e}", path.display())))?;
                let matches = matches!((&snap, model), (Snapshot::Full(_), ModelKind::Full) | (Snapshot::Perturb(_), ModelKind::Perturb));
                if !matches {
                    return Err(invalid("initial.path", "snapshot model differs from the configured model"));
                }
                let sg = match &snap {
                    Snapshot::Full(s) => s.grid(),
                    Snapshot::Perturb(s) => s.grid(),
                };
                if sg != &grid {
                    return Err(invalid("initial.path", "snapshot grid differs from the configured grid"));
                }
                snap
            }
        };
        Ok(snap)
    }

    /// Replaces the seed of a random initial condition.
    pub fn set_seed(&mut self, new_seed: u64) {
        if let InitialSpec::Random { seed, .. } = &mut self.initial {
            *seed = new_seed;
        }
    }
}
