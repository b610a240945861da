//! Problem configuration, experiment presets and TOML (de)serialization.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::control::{Bound, Bounds, OptimizerOptions, Weights};
use crate::error::{Error, Result};
use crate::forward::{steps_for, ModelParams, SolverOptions};
use crate::qtensor::{BulkParams, Dim};

/// Which experiment supplies the initial state, targets and initial control.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Preset {
    /// A `+1/2` point defect moved from the center to `(0.25, 0.35)`.
    PointDefect,
    /// A `+1/2`, `-1/2` defect pair kept from annihilating.
    DefectPair,
    /// A straight `+1/2` line defect bent onto a cubic curve.
    LineDefect,
}

impl Preset {
    pub fn id(self) -> u8 {
        match self {
            Preset::PointDefect => 1,
            Preset::DefectPair => 2,
            Preset::LineDefect => 3,
        }
    }

    pub fn dim(self) -> Dim {
        match self {
            Preset::LineDefect => Dim::Three,
            _ => Dim::Two,
        }
    }
}

impl TryFrom<u8> for Preset {
    type Error = String;

    fn try_from(id: u8) -> std::result::Result<Self, String> {
        match id {
            1 => Ok(Preset::PointDefect),
            2 => Ok(Preset::DefectPair),
            3 => Ok(Preset::LineDefect),
            _ => Err(format!("unknown preset {id}, expected 1, 2 or 3")),
        }
    }
}

impl From<Preset> for u8 {
    fn from(p: Preset) -> u8 {
        p.id()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Physics {
    pub eta_dw: f64,
    pub eta_gamma: f64,
    pub lambda: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Stream forward states to disk instead of holding them in memory.
    #[serde(default)]
    pub checkpoint: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub preset: Preset,
    pub dim: Dim,
    pub n_per_side: usize,
    pub dt: f64,
    pub t_final: f64,
    pub bulk: BulkParams,
    pub physics: Physics,
    pub weights: Weights,
    pub bounds: Bounds,
    #[serde(default)]
    pub optimizer: OptimizerOptions,
    #[serde(default)]
    pub solver: SolverOptions,
    pub output: OutputConfig,
}

impl ProblemConfig {
    pub fn preset(preset: Preset) -> Self {
        let weights = Weights {
            beta_domain: 1.0,
            beta_boundary: 0.0,
            beta_final: 1.0,
            alpha_domain: 0.0,
            alpha_boundary: 0.01,
        };
        let physics = Physics {
            eta_dw: 0.2,
            eta_gamma: 100.0,
            lambda: 0.0,
        };
        let output = OutputConfig {
            dir: PathBuf::from(format!("out/preset{}", preset.id())),
            checkpoint: false,
        };
        let bounds = Bounds {
            boundary: Bound::Uniform(if preset == Preset::DefectPair {
                0.6
            } else {
                1.0
            }),
            domain: Bound::Uniform(1.0),
        };
        match preset {
            Preset::PointDefect | Preset::DefectPair => ProblemConfig {
                preset,
                dim: Dim::Two,
                n_per_side: 32,
                dt: 0.004,
                t_final: 0.4,
                bulk: BulkParams::planar(),
                physics,
                weights,
                bounds,
                optimizer: OptimizerOptions {
                    max_iter: 50,
                    ..OptimizerOptions::default()
                },
                solver: SolverOptions::default(),
                output,
            },
            Preset::LineDefect => ProblemConfig {
                preset,
                dim: Dim::Three,
                n_per_side: 12,
                dt: 0.006,
                t_final: 0.3,
                bulk: BulkParams::spatial(),
                physics,
                weights,
                bounds,
                optimizer: OptimizerOptions {
                    max_iter: 20,
                    ..OptimizerOptions::default()
                },
                solver: SolverOptions::default(),
                output,
            },
        }
    }

    pub fn n_steps(&self) -> Result<usize> {
        steps_for(self.dt, self.t_final)
    }

    pub fn model_params(&self) -> Result<ModelParams> {
        let p = ModelParams {
            eta_dw: self.physics.eta_dw,
            eta_gamma: self.physics.eta_gamma,
            lambda: self.physics.lambda,
            dt: self.dt,
            n_steps: self.n_steps()?,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim != self.preset.dim() {
            return Err(Error::Config(format!(
                "preset {} requires dim = {}, got {}",
                self.preset.id(),
                self.preset.dim().get(),
                self.dim.get()
            )));
        }
        if self.n_per_side < 2 {
            return Err(Error::Config(format!(
                "n_per_side must be at least 2, got {}",
                self.n_per_side
            )));
        }
        self.bulk.validate()?;
        self.model_params()?;
        self.weights.validate()?;
        for b in [&self.bounds.boundary, &self.bounds.domain] {
            if let Bound::Uniform(v) = b {
                if !(*v > 0.0 && v.is_finite()) {
                    return Err(Error::Config(format!(
                        "control bounds must be positive, got {v}"
                    )));
                }
            }
        }
        let o = &self.optimizer;
        if !(o.armijo_c > 0.0
            && o.armijo_c < 1.0
            && o.backtrack > 0.0
            && o.backtrack < 1.0
            && o.initial_step > 0.0)
        {
            return Err(Error::Config(
                "optimizer requires 0 < armijo_c, backtrack < 1 and initial_step > 0".into(),
            ));
        }
        let s = &self.solver;
        if !(s.newton_rtol > 0.0 && s.cg_rtol > 0.0 && s.cg_max_factor > 0) {
            return Err(Error::Config(
                "solver tolerances and iteration caps must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: ProblemConfig = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&s)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::output::write_atomic(path, self.to_toml_string()?.as_bytes())
    }
}
