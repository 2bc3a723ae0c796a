//! Named hyperparameter profiles, with TOML overrides.
//!
//! A config file holds `[profiles.<name>]` tables. Each table is merged over
//! a built-in profile: the one of the same name, or the one named by its
//! `base` key, or `desk`. Only the keys that differ need to be given:
//!
//! ```toml
//! [profiles.desk.train]
//! max_steps = 500
//!
//! [profiles.wide]
//! base = "desk"
//! model = { hidden_dim = 128, memory_dim = 256 }
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::curation::{Quotas, DEFAULT_DELTA};
use crate::decoding::{BeamConfig, MertConfig};
use crate::error::{Error, Result};
use crate::facts::DEFAULT_TOP_K;
use crate::model::{Combine, ModelConfig};
use crate::text::DEFAULT_CAPACITY;
use crate::training::TrainConfig;

/// Environment variable naming the config file.
pub const CONFIG_ENV: &str = "GROUNDCHAT_CONFIG";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSettings {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub layers: usize,
    pub memory_dim: usize,
    pub combine: Combine,
}

impl ModelSettings {
    /// Model config for a vocabulary; facts are read iff `grounded`.
    pub fn model_config(&self, vocab_size: usize, grounded: bool) -> ModelConfig {
        ModelConfig {
            vocab_size,
            embed_dim: self.embed_dim,
            hidden_dim: self.hidden_dim,
            layers: self.layers,
            memory_dim: self.memory_dim,
            combine: self.combine,
            grounded,
        }
    }
}

impl From<&ModelConfig> for ModelSettings {
    fn from(c: &ModelConfig) -> Self {
        Self {
            embed_dim: c.embed_dim,
            hidden_dim: c.hidden_dim,
            layers: c.layers,
            memory_dim: c.memory_dim,
            combine: c.combine,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Profile {
    pub name: String,
    pub vocab_capacity: usize,
    /// Facts kept per turn after tf-idf filtering.
    pub top_k: usize,
    pub model: ModelSettings,
    pub train: TrainConfig,
    pub beam: BeamConfig,
    pub mert: MertConfig,
    pub curation: Quotas,
    /// Add-δ constant of the curation language models.
    pub delta: f64,
}

impl Profile {
    pub fn desk() -> Self {
        Self {
            name: "desk".into(),
            vocab_capacity: 2000,
            top_k: DEFAULT_TOP_K,
            model: (&ModelConfig::desk(0)).into(),
            train: TrainConfig::desk(),
            beam: BeamConfig::desk(),
            mert: MertConfig::default(),
            curation: Quotas::desk(),
            delta: DEFAULT_DELTA,
        }
    }

    pub fn paper() -> Self {
        Self {
            name: "paper".into(),
            vocab_capacity: DEFAULT_CAPACITY,
            model: (&ModelConfig::paper(0)).into(),
            train: TrainConfig::paper(),
            beam: BeamConfig::paper(),
            curation: Quotas::paper(),
            ..Self::desk()
        }
    }

    pub fn builtin(name: &str) -> Option<Self> {
        match name {
            "desk" => Some(Self::desk()),
            "paper" => Some(Self::paper()),
            _ => None,
        }
    }

    /// Resolve `name` against the profiles of a TOML document.
    pub fn from_toml(text: &str, name: &str) -> Result<Self> {
        let doc: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let profiles = match doc.get("profiles") {
            Some(toml::Value::Table(t)) => t.clone(),
            Some(_) => return Err(Error::Config("`profiles` must be a table".into())),
            None => toml::Table::new(),
        };
        if let Some(k) = doc.keys().find(|k| *k != "profiles") {
            return Err(Error::Config(format!("unknown top-level key `{k}`")));
        }
        let Some(overrides) = profiles.get(name) else {
            return Self::builtin(name).ok_or_else(|| Error::Config(format!("unknown profile `{name}`")));
        };
        let mut overrides = match overrides {
            toml::Value::Table(t) => t.clone(),
            _ => return Err(Error::Config(format!("profile `{name}` must be a table"))),
        };
        let base_name = match overrides.remove("base") {
            Some(toml::Value::String(b)) => b,
            Some(_) => return Err(Error::Config("`base` must be a string".into())),
            None if Self::builtin(name).is_some() => name.to_string(),
            None => "desk".to_string(),
        };
        let mut base = Self::builtin(&base_name).ok_or_else(|| Error::Config(format!("unknown base profile `{base_name}`")))?;
        base.name = name.to_string();
        let mut merged = toml::Table::try_from(&base).map_err(|e| Error::Config(e.to_string()))?;
        merge(&mut merged, overrides);
        let p: Profile = toml::Value::Table(merged)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(format!("profile `{name}`: {e}")))?;
        p.validate()?;
        Ok(p)
    }

    /// Load `name` from `path`, or from the file named by [`CONFIG_ENV`],
    /// or fall back to the built-in profile.
    pub fn load(name: &str, path: Option<&Path>) -> Result<Self> {
        let path: Option<PathBuf> = path
            .map(Path::to_path_buf)
            .or_else(|| std::env::var_os(CONFIG_ENV).map(PathBuf::from));
        match path {
            Some(p) => Self::from_toml(&std::fs::read_to_string(&p)?, name),
            None => Self::builtin(name).ok_or_else(|| Error::Config(format!("unknown profile `{name}`"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.model_config(5, true).validate()?;
        if self.train.batch_size == 0 || self.top_k == 0 || self.vocab_capacity == 0 {
            return Err(Error::Config("batch size, top-k and vocabulary capacity must be positive".into()));
        }
        if self.beam.n_best > self.beam.beam {
            return Err(Error::Config("n-best exceeds beam".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        let mut profiles = BTreeMap::new();
        profiles.insert(self.name.clone(), self);
        let mut doc = BTreeMap::new();
        doc.insert("profiles", profiles);
        toml::to_string(&doc).map_err(|e| Error::Config(e.to_string()))
    }
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}
