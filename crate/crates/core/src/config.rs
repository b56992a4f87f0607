//! Run configuration: a versioned TOML document, resolved against per-model
//! defaults and written back in full next to every run.
//!
//! ```toml
//! schema_version = 1
//! seed = 0
//!
//! [model]
//! kind = "batch-ab"
//!
//! [[scenarios]]
//! name = "heating-failure"
//! t_start = 0.2
//! t_end = 0.6
//! forced_value = 298.0
//! ```
//!
//! Omitted sections (`sampling`, `engine`, `idp`, `cvp`) and omitted keys
//! inside them take the model's defaults. Unknown keys are rejected.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::approximator::ApproximatorKind;
use crate::baselines::{CvpConfig, IdpConfig};
use crate::dynamics::IntegratorConfig;
use crate::error::{Error, Result};
use crate::fqi::{EngineConfig, EngineMode};
use crate::models::ReactorConfig;
use crate::sampling::SamplingConfig;
use crate::scenario::Disturbance;

pub const SCHEMA_VERSION: u32 = 1;

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

fn default_substeps() -> usize {
    IntegratorConfig::DEFAULT_SUBSTEPS
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_episodes: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_stages: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub init_region: Option<Vec<[f64; 2]>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub action_grid: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EngineSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_iterations: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mode: Option<EngineMode>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub approximator: Option<ApproximatorKind>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub policy_approximator: Option<ApproximatorKind>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub name: String,
    pub t_start: f64,
    pub t_end: f64,
    pub forced_value: f64,
}

impl ScenarioSpec {
    pub fn disturbance(&self) -> Disturbance {
        Disturbance {
            t_start: self.t_start,
            t_end: self.t_end,
            forced_value: self.forced_value,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_substeps")]
    pub substeps: usize,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub model: ReactorConfig,
    #[serde(default)]
    pub sampling: SamplingSection,
    #[serde(default)]
    pub engine: EngineSection,
    #[serde(default)]
    pub idp: IdpConfig,
    #[serde(default)]
    pub cvp: CvpConfig,
    #[serde(default)]
    pub scenarios: Vec<ScenarioSpec>,
}

/// A validated config with every default filled in.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedConfig {
    /// The fully explicit document that is written back.
    pub document: RunConfig,
    pub sampling: SamplingConfig,
    pub engine: EngineConfig,
    pub integrator: IntegratorConfig,
    pub idp: IdpConfig,
    pub cvp: CvpConfig,
}

impl RunConfig {
    pub fn from_toml_str(text: &str, path: &Path) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Schema {
            path: path.display().to_string(),
            message: e.message().to_string(),
        })
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("serializing config: {e}")))
    }

    /// Fills every default and validates the result.
    pub fn resolve(&self) -> Result<ResolvedConfig> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "schema_version: expected {SCHEMA_VERSION}, got {}",
                self.schema_version
            )));
        }
        self.model.validate()?;
        let model = self.model.model();
        let integrator = IntegratorConfig::for_model(model, self.substeps)?;

        let base = SamplingConfig::for_model(model, self.seed);
        let s = &self.sampling;
        let sampling = SamplingConfig {
            n_episodes: s.n_episodes.unwrap_or(base.n_episodes),
            n_stages: s.n_stages.unwrap_or(base.n_stages),
            seed: self.seed,
            init_region: s.init_region.clone().unwrap_or(base.init_region),
            action_grid: s.action_grid.clone().unwrap_or(base.action_grid),
        };
        sampling.validate(model)?;

        let base = EngineConfig::for_model(model);
        let e = &self.engine;
        let engine = EngineConfig {
            n_iterations: e.n_iterations.unwrap_or(base.n_iterations),
            mode: e.mode.unwrap_or(base.mode),
            approximator: e.approximator.unwrap_or(base.approximator),
            policy_approximator: e.policy_approximator.unwrap_or(base.policy_approximator),
        };
        engine.validate()?;
        self.idp.validate()?;
        self.cvp.validate()?;

        let mut names = BTreeSet::new();
        for sc in &self.scenarios {
            if !names.insert(sc.name.as_str()) {
                return Err(Error::Config(format!("scenarios: duplicate name '{}'", sc.name)));
            }
            sc.disturbance()
                .stage_window(integrator.stage_duration, model.n_stages())
                .map_err(|e| Error::Config(format!("scenarios.{}: {e}", sc.name)))?;
        }

        let document = RunConfig {
            sampling: SamplingSection {
                n_episodes: Some(sampling.n_episodes),
                n_stages: Some(sampling.n_stages),
                init_region: Some(sampling.init_region.clone()),
                action_grid: Some(sampling.action_grid.clone()),
            },
            engine: EngineSection {
                n_iterations: Some(engine.n_iterations),
                mode: Some(engine.mode),
                approximator: Some(engine.approximator),
                policy_approximator: Some(engine.policy_approximator),
            },
            ..self.clone()
        };
        Ok(ResolvedConfig {
            document,
            sampling,
            engine,
            integrator,
            idp: self.idp,
            cvp: self.cvp,
        })
    }
}

impl ResolvedConfig {
    pub fn scenario(&self, name: &str) -> Result<&ScenarioSpec> {
        self.document
            .scenarios
            .iter()
            .find(|s| s.name == name)
            .ok_or_else(|| {
                let known: Vec<&str> = self.document.scenarios.iter().map(|s| s.name.as_str()).collect();
                Error::Config(format!("unknown scenario '{name}' (known: {})", known.join(", ")))
            })
    }

    /// SHA-256 of the resolved document, ignoring the output directory.
    pub fn config_hash(&self) -> Result<String> {
        let doc = RunConfig {
            output_dir: PathBuf::new(),
            ..self.document.clone()
        };
        let digest = Sha256::digest(doc.to_toml_string()?.as_bytes());
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }

    /// `output_dir/<first 16 hex digits of the hash>`.
    pub fn run_dir(&self) -> Result<PathBuf> {
        Ok(self.document.output_dir.join(&self.config_hash()?[..16]))
    }
}

/// Reads, parses and resolves a config file.
pub fn load_config(path: &Path) -> Result<ResolvedConfig> {
    load_config_with(path, |_| {})
}

/// Like [`load_config`], applying `adjust` (command-line overrides) before
/// resolution.
pub fn load_config_with(path: &Path, adjust: impl FnOnce(&mut RunConfig)) -> Result<ResolvedConfig> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(Error::NotFound(path.to_path_buf()))
        }
        Err(e) => return Err(Error::io(format!("reading {}", path.display()), e)),
    };
    let mut config = RunConfig::from_toml_str(&text, path)?;
    adjust(&mut config);
    config.resolve()
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "schema_version = 1\n[model]\nkind = \"batch-ab\"\n";

    #[test]
    fn minimal_case1_defaults() {
        let c = RunConfig::from_toml_str(MINIMAL, Path::new("m.toml")).unwrap();
        let r = c.resolve().unwrap();
        assert_eq!(r.sampling.n_episodes, 40);
        assert_eq!(r.sampling.n_stages, 10);
        assert_eq!(r.engine.n_iterations, 30);
        let expected: Vec<f64> = (0..11).map(|i| 298.0 + 10.0 * i as f64).collect();
        assert_eq!(r.sampling.action_grid, expected);
    }

    #[test]
    fn resolved_round_trip() {
        let c = RunConfig::from_toml_str(MINIMAL, Path::new("m.toml")).unwrap();
        let r = c.resolve().unwrap();
        let text = r.document.to_toml_string().unwrap();
        let again = RunConfig::from_toml_str(&text, Path::new("r.toml")).unwrap();
        assert_eq!(again, r.document);
        let r2 = again.resolve().unwrap();
        assert_eq!(r2, r);
        assert_eq!(r2.config_hash().unwrap(), r.config_hash().unwrap());
    }

    #[test]
    fn unknown_key_is_named() {
        let text = format!("{MINIMAL}[engine]\nn_iteratons = 3\n");
        let err = RunConfig::from_toml_str(&text, Path::new("bad.toml")).unwrap_err();
        assert!(err.to_string().contains("n_iteratons"), "{err}");
        let text = "schema_version = 1\n[model]\nkind = \"batch-ab\"\nk_x = 1.0\n";
        let err = RunConfig::from_toml_str(text, Path::new("bad.toml")).unwrap_err();
        assert!(err.to_string().contains("k_x"), "{err}");
    }

    #[test]
    fn missing_file() {
        let err = load_config(Path::new("/nonexistent/run.toml")).unwrap_err();
        assert!(matches!(err, Error::NotFound(_)));
        assert!(err.to_string().contains("/nonexistent/run.toml"));
    }

    #[test]
    fn bad_scenario_window() {
        let text = format!("{MINIMAL}[[scenarios]]\nname = \"x\"\nt_start = 0.5\nt_end = 2.0\nforced_value = 298.0\n");
        let c = RunConfig::from_toml_str(&text, Path::new("m.toml")).unwrap();
        assert!(c.resolve().is_err());
    }

    #[test]
    fn hash_ignores_output_dir() {
        let c = RunConfig::from_toml_str(MINIMAL, Path::new("m.toml")).unwrap();
        let mut d = c.clone();
        d.output_dir = PathBuf::from("elsewhere");
        let (a, b) = (c.resolve().unwrap(), d.resolve().unwrap());
        assert_eq!(a.config_hash().unwrap(), b.config_hash().unwrap());
        let mut e = c.clone();
        e.seed = 1;
        assert_ne!(a.config_hash().unwrap(), e.resolve().unwrap().config_hash().unwrap());
    }
}
