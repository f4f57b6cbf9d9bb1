//! Run configuration: defaults, then a TOML or JSON file, then `key=value`
//! overrides. The effective configuration is hashed and the hash is
//! embedded in every artifact.

use std::fs;
use std::path::{Path, PathBuf};

use halluguard::classifier::StackingConfig;
use halluguard::features::FeatureConfig;
use halluguard::judge::Granularity;
use halluguard::planner::Action;
use halluguard::providers::{ProviderConfig, RetryPolicy};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::AppError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_factual: usize,
    pub n_confused: usize,
    pub n_confabulated: usize,
    pub n_contaminated: usize,
    pub n_models: usize,
    pub k: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_factual: 1000,
            n_confused: 500,
            n_confabulated: 500,
            n_contaminated: 0,
            n_models: 3,
            k: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub train_fraction: f64,
    pub stacking: StackingConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            train_fraction: 0.8,
            stacking: StackingConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JudgeBackend {
    /// Registered fact and negation sets from `judge.mock_facts`.
    Mock,
    /// The chat endpoint from `[provider]`.
    Llm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JudgeSection {
    pub backend: JudgeBackend,
    pub granularity: Granularity,
    pub concurrency: usize,
    pub retry: RetryPolicy,
    pub mock_facts: Option<PathBuf>,
    pub contexts: Option<PathBuf>,
    /// Fall back to keyword overlap when a context key is absent.
    pub fallback: bool,
}

impl Default for JudgeSection {
    fn default() -> Self {
        Self {
            backend: JudgeBackend::Mock,
            granularity: Granularity::Sentence,
            concurrency: 4,
            retry: RetryPolicy::default(),
            mock_facts: None,
            contexts: None,
            fallback: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlanSection {
    pub fraction: f64,
    pub action: Action,
    pub bins: usize,
}

impl Default for PlanSection {
    fn default() -> Self {
        Self {
            fraction: 0.4,
            action: Action::MajorityVote { samples: 12 },
            bins: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReviewSection {
    pub queue: PathBuf,
}

impl Default for ReviewSection {
    fn default() -> Self {
        Self {
            queue: PathBuf::from("review_queue.jsonl"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServeSection {
    pub addr: String,
    pub model: Option<PathBuf>,
}

impl Default for ServeSection {
    fn default() -> Self {
        Self {
            addr: "127.0.0.1:8080".into(),
            model: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    /// Seeds synthesis, the train/test split and every learner.
    pub seed: u64,
    /// Probability at or above which an answer counts as hallucinated.
    pub threshold: f64,
    pub synth: SynthConfig,
    pub features: FeatureConfig,
    pub train: TrainConfig,
    pub judge: JudgeSection,
    pub provider: ProviderConfig,
    pub plan: PlanSection,
    pub review: ReviewSection,
    pub serve: ServeSection,
}

impl Default for AppConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            threshold: 0.5,
            synth: SynthConfig::default(),
            features: FeatureConfig::default(),
            train: TrainConfig::default(),
            judge: JudgeSection::default(),
            provider: ProviderConfig::default(),
            plan: PlanSection::default(),
            review: ReviewSection::default(),
            serve: ServeSection::default(),
        }
    }
}

impl AppConfig {
    pub fn stacking(&self) -> StackingConfig {
        StackingConfig {
            seed: self.seed,
            ..self.train.stacking.clone()
        }
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let body = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&body))
    }
}

fn merge(base: &mut Value, overlay: Value) {
    match (base, overlay) {
        (Value::Object(b), Value::Object(o)) => {
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

fn read_file(path: &Path) -> Result<Value, AppError> {
    let text = fs::read_to_string(path).map_err(|source| AppError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let is_json = path.extension().and_then(|e| e.to_str()) == Some("json");
    if is_json {
        serde_json::from_str(&text)
            .map_err(|e| AppError::Config(format!("{}: {e}", path.display())))
    } else {
        let v: toml::Value = toml::from_str(&text)
            .map_err(|e| AppError::Config(format!("{}: {e}", path.display())))?;
        serde_json::to_value(v).map_err(|e| AppError::Config(e.to_string()))
    }
}

/// Parses `a.b.c=value`; the value is read as JSON when it parses,
/// otherwise as a string.
pub fn parse_override(raw: &str) -> Result<(Vec<String>, Value), AppError> {
    let (key, value) = raw
        .split_once('=')
        .ok_or_else(|| AppError::Usage(format!("override {raw:?} is not key=value")))?;
    if key.is_empty() {
        return Err(AppError::Usage(format!(
            "override {raw:?} has an empty key"
        )));
    }
    let value = serde_json::from_str(value).unwrap_or_else(|_| Value::String(value.to_string()));
    Ok((key.split('.').map(str::to_string).collect(), value))
}

fn set_path(root: &mut Value, path: &[String], value: Value) {
    let mut cur = root;
    for key in &path[..path.len() - 1] {
        if !cur.get(key).is_some_and(Value::is_object) {
            cur[key.as_str()] = Value::Object(Default::default());
        }
        cur = &mut cur[key.as_str()];
    }
    cur[path[path.len() - 1].as_str()] = value;
}

pub fn load_config(file: Option<&Path>, overrides: &[String]) -> Result<AppConfig, AppError> {
    let mut value = serde_json::to_value(AppConfig::default()).expect("defaults serialize");
    if let Some(path) = file {
        merge(&mut value, read_file(path)?);
    }
    for raw in overrides {
        let (path, v) = parse_override(raw)?;
        set_path(&mut value, &path, v);
    }
    let config: AppConfig = serde_path_to_error::deserialize(value)
        .map_err(|e| AppError::Config(format!("at `{}`: {}", e.path(), e.inner())))?;
    if !(0.0..=1.0).contains(&config.threshold) {
        return Err(AppError::Config(format!(
            "threshold {} outside [0, 1]",
            config.threshold
        )));
    }
    Ok(config)
}
