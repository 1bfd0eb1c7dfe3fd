use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::consistency::AggregationPolicy;
use crate::evaluation::WorldParams;
use crate::model::{DirectionSource, DomainGroup};
use crate::search::{SearchConfig, SearchError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("{field}: {reason}")]
    Invalid { field: String, reason: String },
}

fn invalid(field: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { field: field.to_string(), reason: reason.into() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetConfig {
    /// A CSV file, or a directory whose `*.csv` files are read in name order.
    Mmlu {
        path: PathBuf,
        #[serde(default)]
        per_subject: Option<usize>,
        #[serde(default)]
        limit: Option<usize>,
        /// Keep only these domain groups; empty keeps every subject.
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        domains: Vec<DomainGroup>,
    },
    Fever {
        path: PathBuf,
        #[serde(default)]
        limit: Option<usize>,
    },
    Synthetic {
        questions: usize,
        #[serde(default)]
        world: WorldParams,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    Http,
    Replay,
    Synthetic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GatewayConfig {
    pub backend: Backend,
    #[serde(default)]
    pub base_url: Option<String>,
    #[serde(default)]
    pub model: Option<String>,
    /// Replay source, or recording target for the other backends.
    #[serde(default)]
    pub store_path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentsConfig {
    pub direction_source: DirectionSource,
    pub templates_dir: Option<PathBuf>,
    pub temperature: f64,
    pub sample: bool,
    pub max_tokens: u32,
}

impl Default for AgentsConfig {
    fn default() -> Self {
        let p = crate::gateway::GenerationParams::default();
        AgentsConfig {
            direction_source: DirectionSource::Generative,
            templates_dir: None,
            temperature: p.temperature,
            sample: p.sample,
            max_tokens: p.max_tokens,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetConfig,
    pub gateway: GatewayConfig,
    #[serde(default)]
    pub search: SearchConfig,
    #[serde(default)]
    pub aggregation: AggregationPolicy,
    #[serde(default)]
    pub agents: AgentsConfig,
    pub output_dir: PathBuf,
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub output_dir: Option<PathBuf>,
    pub store_path: Option<PathBuf>,
    pub backend: Option<Backend>,
    pub consistency_threshold: Option<f64>,
    pub branching: Option<usize>,
    pub max_iterations: Option<usize>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string().trim_end().to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Io { path: path.display().to_string(), message: e.to_string() })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(v) = o.seed {
            self.search.seed = v;
        }
        if let Some(v) = &o.output_dir {
            self.output_dir = v.clone();
        }
        if let Some(v) = &o.store_path {
            self.gateway.store_path = Some(v.clone());
        }
        if let Some(v) = o.backend {
            self.gateway.backend = v;
        }
        if let Some(v) = o.consistency_threshold {
            self.search.consistency_threshold = v;
        }
        if let Some(v) = o.branching {
            self.search.branching = v;
        }
        if let Some(v) = o.max_iterations {
            self.search.max_iterations = v;
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.search.validate().map_err(|e| match e {
            SearchError::InvalidConfig { field, reason } => invalid(&format!("search.{field}"), reason),
            other => invalid("search", other.to_string()),
        })?;
        if let AggregationPolicy::SelfConsistency { k } = self.aggregation {
            if k == 0 {
                return Err(invalid("aggregation.k", "must be at least 1"));
            }
            if k > self.search.intra_samples {
                return Err(invalid("aggregation.k", "cannot exceed search.intra_samples"));
            }
        }
        if self.agents.temperature.is_nan() || self.agents.temperature < 0.0 {
            return Err(invalid("agents.temperature", "must be >= 0"));
        }

        let g = &self.gateway;
        match g.backend {
            Backend::Http => {
                if g.base_url.as_deref().is_none_or(str::is_empty) {
                    return Err(invalid("gateway.base_url", "required for the http backend"));
                }
                if g.model.as_deref().is_none_or(str::is_empty) {
                    return Err(invalid("gateway.model", "required for the http backend"));
                }
            }
            Backend::Replay | Backend::Synthetic => {
                let name = if g.backend == Backend::Replay { "replay" } else { "synthetic" };
                if g.base_url.is_some() {
                    return Err(invalid("gateway.base_url", format!("only valid for the http backend, not {name}")));
                }
                if g.model.is_some() {
                    return Err(invalid("gateway.model", format!("only valid for the http backend, not {name}")));
                }
                if g.backend == Backend::Replay && g.store_path.is_none() {
                    return Err(invalid("gateway.store_path", "required for the replay backend"));
                }
            }
        }

        match &self.dataset {
            DatasetConfig::Synthetic { questions, world } => {
                if *questions == 0 {
                    return Err(invalid("dataset.questions", "must be at least 1"));
                }
                if !(2..=crate::model::MAX_CHOICES).contains(&world.num_choices) {
                    return Err(invalid("dataset.world.num_choices", "must be between 2 and 26"));
                }
                for (name, v) in [
                    ("base_accuracy", world.base_accuracy),
                    ("refusal_rate", world.refusal_rate),
                    ("direction_persistence", world.direction_persistence),
                    ("distractor_share", world.distractor_share),
                    ("good_quality", world.good_quality),
                ] {
                    if !(0.0..=1.0).contains(&v) {
                        return Err(invalid(&format!("dataset.world.{name}"), "must lie in [0, 1]"));
                    }
                }
                if world.good_directions > world.pool_size {
                    return Err(invalid("dataset.world.good_directions", "cannot exceed pool_size"));
                }
                if g.backend == Backend::Http {
                    return Err(invalid("gateway.backend", "synthetic datasets need the synthetic or replay backend"));
                }
            }
            DatasetConfig::Mmlu { per_subject, .. } => {
                if *per_subject == Some(0) {
                    return Err(invalid("dataset.per_subject", "must be at least 1"));
                }
                if g.backend == Backend::Synthetic {
                    return Err(invalid("gateway.backend", "the synthetic backend only serves synthetic datasets"));
                }
            }
            DatasetConfig::Fever { .. } => {
                if g.backend == Backend::Synthetic {
                    return Err(invalid("gateway.backend", "the synthetic backend only serves synthetic datasets"));
                }
            }
        }
        Ok(())
    }
}
