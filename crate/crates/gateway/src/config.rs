use std::path::{Path, PathBuf};

use intentkg_core::mining::BuildConfig;
use intentkg_core::sim::ExperimentConfig;
use serde::{Deserialize, Serialize};

use crate::error::{GatewayError, Result};

/// Environment variables read in place of the matching CLI flags.
pub const ENV_CONFIG: &str = "INTENTKG_CONFIG";
pub const ENV_SEED: &str = "INTENTKG_SEED";
pub const ENV_OUT: &str = "INTENTKG_OUT";
pub const ENV_PORT: &str = "INTENTKG_PORT";

/// Input locations. Unset entries default to the artifact of the same name
/// in the output directory, as written by the earlier pipeline stages.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub world: Option<PathBuf>,
    pub events: Option<PathBuf>,
    pub corpus: Option<PathBuf>,
    pub lexicon: Option<PathBuf>,
    /// Graph consumed by training, evaluation, serving and `validate`.
    pub graph: Option<PathBuf>,
    /// Directory holding the model files.
    pub models: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub host: String,
    pub port: u16,
    /// Defaults for requests that leave them out.
    pub top_k: usize,
    pub beta: f64,
    pub label_top_k: usize,
    pub label_threshold: f64,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            host: "127.0.0.1".into(),
            port: 8080,
            top_k: 5,
            beta: 0.5,
            label_top_k: 5,
            label_threshold: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub paths: Paths,
    /// Graph construction from the query corpus.
    pub build: BuildConfig,
    /// World, mining, model and evaluation settings.
    pub experiment: ExperimentConfig,
    pub service: ServiceConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            out: PathBuf::from("out"),
            paths: Paths::default(),
            build: BuildConfig::default(),
            experiment: ExperimentConfig::default(),
            service: ServiceConfig::default(),
        }
    }
}

/// Command-line and environment values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub port: Option<u16>,
}

impl PipelineConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| GatewayError::config(e.message().replace('\n', " ")))
    }

    /// Read a TOML file (or take the defaults without one), apply overrides
    /// and check the result.
    pub fn load(path: Option<&Path>, overrides: &Overrides) -> Result<Self> {
        let mut config = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| GatewayError::config(format!("cannot read config {}: {e}", p.display())))?;
                Self::parse(&text).map_err(|e| GatewayError::config(format!("{}: {e}", p.display())))?
            }
            None => PipelineConfig::default(),
        };
        if let Some(seed) = overrides.seed {
            config.seed = seed;
        }
        if let Some(out) = &overrides.out {
            config.out = out.clone();
        }
        if let Some(port) = overrides.port {
            config.service.port = port;
        }
        config.check()?;
        Ok(config)
    }

    /// Every explicitly configured input must exist; numeric settings must
    /// be usable.
    pub fn check(&self) -> Result<()> {
        let p = &self.paths;
        let named = [
            ("paths.world", &p.world),
            ("paths.events", &p.events),
            ("paths.corpus", &p.corpus),
            ("paths.lexicon", &p.lexicon),
            ("paths.graph", &p.graph),
            ("paths.models", &p.models),
        ];
        for (key, path) in named {
            if let Some(path) = path {
                if !path.exists() {
                    return Err(GatewayError::config(format!("{key}: {} does not exist", path.display())));
                }
            }
        }
        let e = &self.experiment;
        if e.users == 0 || e.events_per_user < 2 {
            return Err(GatewayError::config(
                "experiment: need users >= 1 and events_per_user >= 2 for a held-out split",
            ));
        }
        if !(0.0..=1.0).contains(&e.label_threshold) {
            return Err(GatewayError::config("experiment.label_threshold must lie in [0, 1]"));
        }
        if !e.beta.is_finite() || e.beta < 0.0 || !self.service.beta.is_finite() || self.service.beta < 0.0 {
            return Err(GatewayError::config("beta must be finite and non-negative"));
        }
        if self.service.top_k == 0 || self.service.label_top_k == 0 {
            return Err(GatewayError::config("service top_k values must be positive"));
        }
        Ok(())
    }

    fn input(&self, set: &Option<PathBuf>, name: &str) -> PathBuf {
        set.clone().unwrap_or_else(|| self.out.join(name))
    }

    pub fn world_path(&self) -> PathBuf {
        self.input(&self.paths.world, "world.json")
    }

    pub fn events_path(&self) -> PathBuf {
        self.input(&self.paths.events, "events.jsonl")
    }

    pub fn corpus_path(&self) -> PathBuf {
        self.input(&self.paths.corpus, "corpus.txt")
    }

    pub fn lexicon_path(&self) -> PathBuf {
        self.input(&self.paths.lexicon, "lexicon.json")
    }

    pub fn graph_path(&self) -> PathBuf {
        self.input(&self.paths.graph, "graph.jsonl")
    }

    /// Graph written by `build-kg` before relations are mined into it.
    pub fn base_graph_path(&self) -> PathBuf {
        self.out.join("graph.base.jsonl")
    }

    pub fn models_dir(&self) -> PathBuf {
        self.input(&self.paths.models, "models")
    }

    pub fn model_path(&self, name: &str) -> PathBuf {
        self.models_dir().join(name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(PipelineConfig::parse("").unwrap(), PipelineConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = PipelineConfig::parse("sed = 3").unwrap_err();
        assert!(matches!(err, GatewayError::Config(_)));
        assert!(err.to_string().contains("sed"), "{err}");
        assert!(PipelineConfig::parse("[experiment]\nusers = 10\nfoo = 1").is_err());
        assert!(PipelineConfig::parse("[experiment.predictor]\nd_modl = 8").is_err());
    }

    #[test]
    fn nested_values_are_read() {
        let c = PipelineConfig::parse("seed = 4\n[experiment]\nusers = 50\n[service]\nport = 9000").unwrap();
        assert_eq!((c.seed, c.experiment.users, c.service.port), (4, 50, 9000));
        assert_eq!(c.experiment.events_per_user, ExperimentConfig::default().events_per_user);
    }

    #[test]
    fn overrides_win_and_missing_inputs_fail() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "seed = 1\nout = \"a\"").unwrap();
        let o = Overrides {
            seed: Some(9),
            out: Some("b".into()),
            port: Some(1),
        };
        let c = PipelineConfig::load(Some(&path), &o).unwrap();
        assert_eq!((c.seed, c.out.as_path(), c.service.port), (9, Path::new("b"), 1));

        std::fs::write(&path, "[paths]\ngraph = \"/definitely/not/here.jsonl\"").unwrap();
        let err = PipelineConfig::load(Some(&path), &Overrides::default()).unwrap_err();
        assert!(err.to_string().contains("paths.graph"), "{err}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn derived_paths_follow_out() {
        let c = PipelineConfig {
            out: "run".into(),
            ..Default::default()
        };
        assert_eq!(c.graph_path(), Path::new("run/graph.jsonl"));
        assert_eq!(c.model_path("matcher.model"), Path::new("run/models/matcher.model"));
    }
}
