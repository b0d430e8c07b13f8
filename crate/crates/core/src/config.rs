//! TOML configuration and instance files.

use std::fs;
use std::ops::Range;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use toml::Spanned;

use crate::error::{Error, Result};
use crate::estimator::EstimatorKind;
use crate::generators::{generate_instance, GeneratorSpec};
use crate::linalg::{Matrix, Vector};
use crate::problem::{Mode, ProblemInstance, SmoothnessProfile, SpectralSummary};

fn default_alpha() -> f64 {
    0.5
}
fn default_true() -> bool {
    true
}

/// Solver settings layered over the calibrated configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverOverrides {
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub iterations: Option<usize>,
    #[serde(default)]
    pub epoch: Option<usize>,
    #[serde(default)]
    pub rho: Option<f64>,
    #[serde(default)]
    pub eta: Option<f64>,
    #[serde(default)]
    pub r: Option<f64>,
    /// Stop each run once its tolerance is met.
    #[serde(default = "default_true")]
    pub stop_at_target: bool,
    /// Estimate the profile from this many probe points instead of using the
    /// generator's certified constants.
    #[serde(default)]
    pub profile_probes: Option<usize>,
}

impl Default for SolverOverrides {
    fn default() -> Self {
        Self {
            alpha: default_alpha(),
            iterations: None,
            epoch: None,
            rho: None,
            eta: None,
            r: None,
            stop_at_target: true,
            profile_probes: None,
        }
    }
}

/// One experiment: an instance family, estimators, tolerances and seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub generator: GeneratorSpec,
    pub solver: SolverOverrides,
    pub estimators: Vec<EstimatorKind>,
    /// Sampling regime; derived from the generator's populations when absent.
    pub mode: Option<Mode>,
    pub epsilons: Vec<f64>,
    pub seeds: Vec<u64>,
    pub output: PathBuf,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    generator: GeneratorSpec,
    #[serde(default)]
    solver: SolverOverrides,
    estimators: Spanned<Vec<EstimatorKind>>,
    #[serde(default)]
    mode: Option<Mode>,
    epsilons: Spanned<Vec<f64>>,
    seeds: Spanned<Vec<u64>>,
    output: PathBuf,
}

fn line_of(text: &str, span: Option<Range<usize>>) -> usize {
    span.map_or(0, |s| {
        text[..s.start.min(text.len())].matches('\n').count() + 1
    })
}

fn parse_error(text: &str, e: toml::de::Error) -> Error {
    Error::ConfigParseError {
        line: line_of(text, e.span()),
        message: e.message().to_string(),
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| parse_error(text, e))?;
        let at = |span: Range<usize>, message: String| Error::ConfigParseError {
            line: line_of(text, Some(span)),
            message,
        };
        if raw.seeds.get_ref().is_empty() {
            return Err(at(raw.seeds.span(), "seed list is empty".into()));
        }
        if raw.estimators.get_ref().is_empty() {
            return Err(at(raw.estimators.span(), "estimator list is empty".into()));
        }
        if raw.epsilons.get_ref().is_empty() {
            return Err(at(raw.epsilons.span(), "tolerance list is empty".into()));
        }
        if let Some(e) = raw
            .epsilons
            .get_ref()
            .iter()
            .find(|e| !(**e > 0.0 && e.is_finite()))
        {
            return Err(at(
                raw.epsilons.span(),
                format!("tolerance {e} is not positive"),
            ));
        }
        let cfg = Self {
            generator: raw.generator,
            solver: raw.solver,
            estimators: raw.estimators.into_inner(),
            mode: raw.mode,
            epsilons: raw.epsilons.into_inner(),
            seeds: raw.seeds.into_inner(),
            output: raw.output,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::ConfigError("seed list is empty".into()));
        }
        if self.estimators.is_empty() {
            return Err(Error::ConfigError("estimator list is empty".into()));
        }
        if self.epsilons.is_empty() {
            return Err(Error::ConfigError("tolerance list is empty".into()));
        }
        if let Some(&e) = self.epsilons.iter().find(|e| !(**e > 0.0 && e.is_finite())) {
            return Err(Error::InvalidTolerance(e));
        }
        if !(self.solver.alpha > 0.0 && self.solver.alpha < 1.0) {
            return Err(Error::ConfigError(format!(
                "alpha must lie in (0, 1), got {}",
                self.solver.alpha
            )));
        }
        if self.solver.iterations == Some(0) {
            return Err(Error::EmptyRun);
        }
        self.generator.validate()
    }
}

/// Reads a generator spec, either bare or under a `[generator]` table.
pub fn load_generator_spec(path: &Path) -> Result<GeneratorSpec> {
    let text = fs::read_to_string(path)?;
    parse_generator_spec(&text)
}

pub fn parse_generator_spec(text: &str) -> Result<GeneratorSpec> {
    #[derive(Deserialize)]
    struct Wrapped {
        generator: GeneratorSpec,
    }
    match toml::from_str::<Wrapped>(text) {
        Ok(w) => Ok(w.generator),
        Err(_) => toml::from_str::<GeneratorSpec>(text).map_err(|e| parse_error(text, e)),
    }
}

/// Serialized instance: the generator spec plus the data it produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceFile {
    pub generator: GeneratorSpec,
    pub profile: SmoothnessProfile,
    pub spectral: SpectralSummary,
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<Vec<f64>>>,
    pub c: Vec<f64>,
}

fn rows(m: &Matrix) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

impl InstanceFile {
    pub fn from_instance(inst: &ProblemInstance) -> Result<Self> {
        let generator = inst
            .origin
            .clone()
            .ok_or_else(|| Error::ConfigError("instance has no generator spec".into()))?;
        let profile = inst
            .profile
            .ok_or_else(|| Error::ConfigError("instance has no profile".into()))?;
        Ok(Self {
            generator,
            profile,
            spectral: inst.spectral.clone(),
            a: rows(&inst.a),
            b: inst.b.iter().map(rows).collect(),
            c: inst.c.iter().copied().collect(),
        })
    }

    /// Regenerates the instance and checks it reproduces the stored data.
    pub fn to_instance(&self) -> Result<ProblemInstance> {
        let inst = generate_instance(&self.generator)?;
        let same = rows(&inst.a) == self.a
            && inst.b.iter().map(rows).collect::<Vec<_>>() == self.b
            && inst.c == Vector::from_column_slice(&self.c);
        if !same {
            return Err(Error::GeneratorError(
                "stored matrices differ from the regenerated instance".into(),
            ));
        }
        Ok(inst.with_profile(self.profile))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::ConfigError(e.to_string()))
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| parse_error(text, e))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_toml()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&fs::read_to_string(path)?)
    }
}
