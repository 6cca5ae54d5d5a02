//! The TOML run configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use gnes::builtins::builtin;
use gnes::cournot::{generate, CournotConfig};
use gnes::instance::{Instance, InstanceDoc, NoiseDoc};
use gnes::solver::{RhoRule, SolverParams, Variant};

use crate::error::CliError;

/// Where the game comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProblemSource {
    /// One of [`gnes::builtins::BUILTIN_NAMES`].
    Builtin(String),
    /// Path to an instance JSON document, relative to the config file.
    Instance(PathBuf),
    /// An instance document written out in the config itself.
    Inline(InstanceDoc),
    /// Generate a networked Cournot game.
    Cournot(CournotConfig),
}

impl Default for ProblemSource {
    fn default() -> Self {
        ProblemSource::Builtin("affine-monotone-small".into())
    }
}

/// Families for `gnes compare`. Give either `variants` or `alpha_sweep`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompareSpec {
    pub variants: Vec<Variant>,
    /// RISFBF with these `ᾱ` values and `ρ_k = 1`.
    pub alpha_sweep: Vec<f64>,
}

/// Settings of the noise-free reference run used for diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReferenceSpec {
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for ReferenceSpec {
    fn default() -> Self {
        ReferenceSpec {
            tol: 1e-12,
            max_iters: 1_000_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Base seed; replication `r` uses `seed + r`.
    pub seed: u64,
    pub reps: usize,
    pub out: Option<PathBuf>,
    pub problem: ProblemSource,
    /// Replaces the noise model of the instance.
    pub noise: Option<NoiseDoc>,
    pub solver: SolverParams,
    pub compare: CompareSpec,
    pub reference: ReferenceSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            reps: 1,
            out: None,
            problem: ProblemSource::default(),
            noise: None,
            solver: SolverParams::default(),
            compare: CompareSpec::default(),
            reference: ReferenceSpec::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string(self).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Reads a config file and resolves relative instance paths against its directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut config = Self::from_toml(&text)?;
        if let ProblemSource::Instance(p) = &mut config.problem {
            if p.is_relative() {
                if let Some(dir) = path.parent() {
                    *p = dir.join(&*p);
                }
            }
        }
        Ok(config)
    }

    /// Checks the settings that do not need the instance.
    pub fn validate(&self) -> Result<(), CliError> {
        if self.reps == 0 {
            return Err(CliError::Config("reps must be at least 1".into()));
        }
        self.solver.validate()?;
        for a in &self.compare.alpha_sweep {
            if !(0.0..1.0).contains(a) {
                return Err(CliError::Config(format!("alpha_sweep value {a} outside [0, 1)")));
            }
        }
        if !(self.reference.tol > 0.0 && self.reference.max_iters > 0) {
            return Err(CliError::Config("reference.tol and reference.max_iters must be positive".into()));
        }
        Ok(())
    }

    /// Loads or generates the instance and applies the noise override.
    pub fn instance(&self, allow_nonmonotone: bool) -> Result<Instance, CliError> {
        let doc = match &self.problem {
            ProblemSource::Builtin(name) => builtin(name)?,
            ProblemSource::Instance(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
                InstanceDoc::from_json(&text)?
            }
            ProblemSource::Inline(doc) => doc.clone(),
            ProblemSource::Cournot(c) => {
                let c = CournotConfig {
                    allow_nonmonotone: c.allow_nonmonotone || allow_nonmonotone,
                    ..c.clone()
                };
                let g = generate(&c)?;
                log::info!(
                    "cournot instance: min monotonicity ratio {:.3e} over {} pairs",
                    g.monotonicity.min_ratio,
                    g.monotonicity.trials
                );
                g.doc
            }
        };
        let doc = match &self.noise {
            Some(n) => doc.with_noise(n.clone()),
            None => doc,
        };
        Ok(doc.build()?)
    }

    /// `(label, params)` for every family of a comparison.
    pub fn families(&self) -> Result<Vec<(String, SolverParams)>, CliError> {
        let spec = &self.compare;
        let families: Vec<(String, SolverParams)> = match (spec.variants.is_empty(), spec.alpha_sweep.is_empty()) {
            (false, false) => {
                return Err(CliError::Config("compare takes either variants or alpha_sweep, not both".into()));
            }
            (true, false) => spec
                .alpha_sweep
                .iter()
                .map(|&a| {
                    let params = SolverParams {
                        variant: Variant::Risfbf,
                        alpha_bar: a,
                        rho: RhoRule::Fixed(1.0),
                        ..self.solver.clone()
                    };
                    (format!("alpha={a}"), params)
                })
                .collect(),
            (false, true) => spec
                .variants
                .iter()
                .map(|&v| (v.name().to_string(), SolverParams { variant: v, ..self.solver.clone() }))
                .collect(),
            (true, true) => Variant::ALL
                .iter()
                .map(|&v| (v.name().to_string(), SolverParams { variant: v, ..self.solver.clone() }))
                .collect(),
        };
        if families.len() < 2 {
            return Err(CliError::Config("compare needs at least two variants or sweep points".into()));
        }
        Ok(families)
    }
}
