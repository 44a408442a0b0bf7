//! Settings resolution: command-line flags over the TOML file named by
//! `UNIDS_CONFIG` over built-in defaults.

use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::{Deserialize, Serialize};
use unids::corpus::CorpusConfig;
use unids::model::{ModelConfig, TrainConfig};
use unids::pipeline::PipelineConfig;

pub const CONFIG_ENV: &str = "UNIDS_CONFIG";

/// Raised when `UNIDS_CONFIG` names a file that does not exist.
#[derive(Debug, thiserror::Error)]
#[error("config file {0} not found")]
pub struct ConfigNotFound(pub PathBuf);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceSettings {
    pub host: String,
    pub port: u16,
    pub ttl_minutes: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub static_dir: Option<PathBuf>,
}

impl Default for ServiceSettings {
    fn default() -> Self {
        ServiceSettings {
            host: "127.0.0.1".into(),
            port: 8080,
            ttl_minutes: 30,
            static_dir: None,
        }
    }
}

/// Model shape without the vocabulary size, which comes from the corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSettings {
    pub layers: usize,
    pub heads: usize,
    pub embed_dim: usize,
    pub ffn_dim: usize,
    pub max_seq_len: usize,
    pub dropout: f32,
}

impl Default for ModelSettings {
    fn default() -> Self {
        let t = ModelConfig::tiny(0);
        ModelSettings {
            layers: t.layers,
            heads: t.heads,
            embed_dim: t.embed_dim,
            ffn_dim: t.ffn_dim,
            max_seq_len: t.max_seq_len,
            dropout: t.dropout,
        }
    }
}

impl ModelSettings {
    pub fn with_vocab(&self, vocab_size: usize) -> ModelConfig {
        ModelConfig {
            layers: self.layers,
            heads: self.heads,
            embed_dim: self.embed_dim,
            ffn_dim: self.ffn_dim,
            max_seq_len: self.max_seq_len,
            dropout: self.dropout,
            vocab_size,
        }
    }
}

/// The fully resolved configuration; embedded in every run manifest.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Settings {
    pub corpus: CorpusConfig,
    pub model: ModelSettings,
    pub train: TrainConfig,
    pub pipeline: PipelineConfig,
    pub service: ServiceSettings,
}

/// Flag values that override the file, as `(section, key, value)`.
pub type Overrides = Vec<(&'static str, &'static str, toml::Value)>;

/// Pushes an override when the flag was given.
pub fn set<T: Into<toml::Value>>(out: &mut Overrides, section: &'static str, key: &'static str, v: Option<T>) {
    if let Some(v) = v {
        out.push((section, key, v.into()));
    }
}

fn merge(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Resolves settings from an optional file and flag overrides.
pub fn resolve_with(file: Option<&Path>, overrides: Overrides) -> anyhow::Result<Settings> {
    let mut value = toml::Value::try_from(Settings::default()).context("serializing defaults")?;
    if let Some(path) = file {
        if !path.exists() {
            return Err(ConfigNotFound(path.to_path_buf()).into());
        }
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let parsed: toml::Value = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        merge(&mut value, parsed);
    }
    for (section, key, v) in overrides {
        let mut t = toml::map::Map::new();
        t.insert(key.to_string(), v);
        let mut outer = toml::map::Map::new();
        outer.insert(section.to_string(), toml::Value::Table(t));
        merge(&mut value, toml::Value::Table(outer));
    }
    let settings: Settings = value.try_into().context("invalid configuration")?;
    settings.corpus.validate()?;
    settings.train.validate()?;
    settings.pipeline.buckets.validate()?;
    Ok(settings)
}

/// Resolves settings using the file named by `UNIDS_CONFIG`, if set.
pub fn resolve(overrides: Overrides) -> anyhow::Result<Settings> {
    let file = std::env::var_os(CONFIG_ENV).map(PathBuf::from);
    resolve_with(file.as_deref(), overrides)
}
