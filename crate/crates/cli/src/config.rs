//! Layered configuration: defaults, then the config file, then command-line
//! flags, then `SHOPSIM_*` environment variables. Later layers win.
//!
//! Environment keys use `__` between path segments:
//! `SHOPSIM_REWARD__DARS_FACTOR=5000` sets `reward.dars_factor`. Variables
//! without `__` are ignored, so credentials such as `SHOPSIM_API_KEY` never
//! enter the configuration.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use shopsim::annotate::{AnnotateSettings, ProviderConfig};
use shopsim::eval::EvalConfig;
use shopsim::pipeline::PipelineConfig;
use shopsim::matching::MatcherConfig;
use shopsim::{ParseMode, RewardConfig};
use shopsim_service::ServiceConfig;

pub const ENV_PREFIX: &str = "SHOPSIM_";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LogConfig {
    /// `tracing` filter directive, e.g. `info` or `shopsim=debug`.
    pub level: String,
}

impl Default for LogConfig {
    fn default() -> Self {
        LogConfig { level: "info".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnnotateSection {
    pub provider: ProviderConfig,
    pub concurrency: usize,
    pub excerpt_chars: usize,
    /// File holding the few-shot example; the built-in example when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub few_shot_file: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cache_dir: Option<PathBuf>,
}

impl Default for AnnotateSection {
    fn default() -> Self {
        let s = AnnotateSettings::default();
        AnnotateSection {
            provider: ProviderConfig::default(),
            concurrency: s.concurrency,
            excerpt_chars: s.excerpt_chars,
            few_shot_file: None,
            cache_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub parse_mode: ParseMode,
    pub matcher: MatcherConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min_exact: Option<f64>,
}

/// Listener settings; the reward weights come from `[reward]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServeSection {
    pub host: String,
    pub port: u16,
    pub max_batch: usize,
    pub max_body_bytes: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
}

impl Default for ServeSection {
    fn default() -> Self {
        let s = ServiceConfig::default();
        ServeSection {
            host: s.host,
            port: s.port,
            max_batch: s.max_batch,
            max_body_bytes: s.max_body_bytes,
            workers: s.workers,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CliConfig {
    pub log: LogConfig,
    pub prepare: PipelineConfig,
    pub annotate: AnnotateSection,
    pub reward: RewardConfig,
    pub eval: EvalSection,
    pub serve: ServeSection,
}

impl Default for CliConfig {
    fn default() -> Self {
        CliConfig {
            log: LogConfig::default(),
            prepare: PipelineConfig::default(),
            annotate: AnnotateSection::default(),
            reward: RewardConfig::default(),
            eval: EvalSection::default(),
            serve: ServeSection::default(),
        }
    }
}

impl EvalSection {
    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig {
            parse_mode: self.parse_mode,
            matcher: self.matcher.clone(),
        }
    }
}

impl CliConfig {
    pub fn service_config(&self) -> ServiceConfig {
        ServiceConfig {
            host: self.serve.host.clone(),
            port: self.serve.port,
            max_batch: self.serve.max_batch,
            max_body_bytes: self.serve.max_body_bytes,
            workers: self.serve.workers,
            reward: self.reward.clone(),
        }
    }

    pub fn annotate_settings(&self) -> Result<AnnotateSettings> {
        let few_shot = match &self.annotate.few_shot_file {
            Some(p) => std::fs::read_to_string(p).with_context(|| format!("reading few-shot file {}", p.display()))?,
            None => AnnotateSettings::default().few_shot,
        };
        Ok(AnnotateSettings {
            few_shot,
            excerpt_chars: self.annotate.excerpt_chars,
            concurrency: self.annotate.concurrency,
            max_attempts: self.annotate.provider.max_attempts,
            backoff_base_ms: self.annotate.provider.backoff_base_ms,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes to TOML")
    }
}

/// A flag value destined for `path` (dot-separated).
pub type Override = (String, Value);

/// Recursively overlays `top` onto `base`; tables merge, everything else replaces.
fn merge(base: &mut Value, top: Value) {
    match (base, top) {
        (Value::Object(b), Value::Object(t)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, top) => *slot = top,
    }
}

fn set_path(root: &mut Value, path: &[&str], value: Value) {
    let mut layer = Map::new();
    let mut current = value;
    for key in path.iter().rev() {
        layer.insert(key.to_string(), current);
        current = Value::Object(std::mem::take(&mut layer));
    }
    merge(root, current);
}

/// Environment values are parsed as JSON when possible (numbers, booleans,
/// arrays, objects) and taken as plain strings otherwise.
fn env_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

pub fn env_overrides(vars: impl IntoIterator<Item = (String, String)>) -> Vec<Override> {
    let mut out: Vec<Override> = vars
        .into_iter()
        .filter_map(|(k, v)| {
            let rest = k.strip_prefix(ENV_PREFIX)?;
            rest.contains("__").then(|| {
                let path = rest.split("__").map(str::to_ascii_lowercase).collect::<Vec<_>>().join(".");
                (path, env_value(&v))
            })
        })
        .collect();
    out.sort_by(|a, b| a.0.cmp(&b.0));
    out
}

/// Builds the effective configuration from all layers.
pub fn load(file: Option<&Path>, flags: Vec<Override>, env: Vec<Override>) -> Result<CliConfig> {
    let mut merged = serde_json::to_value(CliConfig::default()).expect("defaults serialize");
    if let Some(path) = file {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config file {}", path.display()))?;
        let parsed: Value = toml::from_str(&text).with_context(|| format!("parsing config file {}", path.display()))?;
        merge(&mut merged, parsed);
    }
    for (path, value) in flags.into_iter().chain(env) {
        let parts: Vec<&str> = path.split('.').collect();
        set_path(&mut merged, &parts, value);
    }
    let cfg: CliConfig = serde_json::from_value(merged).context("invalid configuration")?;
    cfg.prepare.validate().context("invalid [prepare] configuration")?;
    cfg.reward.validate().context("invalid [reward] configuration")?;
    cfg.service_config().validate().context("invalid [serve] configuration")?;
    Ok(cfg)
}
