use std::path::{Path, PathBuf};

use kgfuse::ingest::{FilterConfig, KnowledgeCounts, SyntheticSpec};
use kgfuse::model::ModelConfig;
use kgfuse::numerics::GradCheckConfig;
use kgfuse::train::TrainConfig;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{io, CliError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub synthetic: SyntheticSpec,
    pub split_seed: u64,
    pub train_fraction: f64,
    pub val_fraction: f64,
    /// Directory holding train.jsonl, val.jsonl and test.jsonl.
    pub dir: PathBuf,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            synthetic: SyntheticSpec::default(),
            split_seed: 0,
            train_fraction: 0.8,
            val_fraction: 0.1,
            dir: PathBuf::from("runs/generate"),
        }
    }
}

impl DataSection {
    pub fn split_path(&self, split: &str) -> PathBuf {
        self.dir.join(format!("{split}.jsonl"))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GradCheckSection {
    pub step: f64,
    pub tol: f64,
    pub abs_floor: f64,
    pub max_samples_per_tensor: usize,
    pub seed: u64,
    pub retry_second_step: bool,
    /// Seed of the random record the check runs on.
    pub record_seed: u64,
    pub knowledge_counts: KnowledgeCounts,
}

impl Default for GradCheckSection {
    fn default() -> Self {
        let check = GradCheckConfig::default();
        Self {
            step: check.step,
            tol: check.tol,
            abs_floor: check.abs_floor,
            max_samples_per_tensor: check.max_samples_per_tensor,
            seed: check.seed,
            retry_second_step: check.retry_second_step,
            record_seed: 0,
            knowledge_counts: KnowledgeCounts {
                text_entities: 3,
                key_phrases: 2,
                visual_objects: 2,
            },
        }
    }
}

impl GradCheckSection {
    pub fn check_config(&self) -> GradCheckConfig {
        GradCheckConfig {
            step: self.step,
            tol: self.tol,
            abs_floor: self.abs_floor,
            max_samples_per_tensor: self.max_samples_per_tensor,
            seed: self.seed,
            retry_second_step: self.retry_second_step,
            corrupt: None,
        }
    }
}

/// Everything a command needs; every field has a default.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub data: DataSection,
    pub filter: FilterConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub gradcheck: GradCheckSection,
    /// Checkpoint read by `eval`; defaults to `runs/train/checkpoint.json`.
    pub checkpoint: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text).map_err(kgfuse::Error::from)?)
    }

    /// Parses `text`, applies `key=value` overrides, then deserializes.
    pub fn from_json_with_overrides(text: &str, overrides: &[String]) -> Result<Self> {
        let mut value: Value = serde_json::from_str(text).map_err(kgfuse::Error::from)?;
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        Ok(serde_json::from_value(value).map_err(kgfuse::Error::from)?)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io(path))?;
        Self::from_json_with_overrides(&text, overrides)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self).map_err(kgfuse::Error::from)?)
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.checkpoint
            .clone()
            .unwrap_or_else(|| PathBuf::from("runs/train/checkpoint.json"))
    }
}

/// Sets a dotted `key=value` path inside a JSON document.
///
/// The value is parsed as JSON when possible and taken as a string otherwise,
/// so `train.epochs=5` sets a number and `data.dir=runs/x` a string.
pub fn apply_override(root: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::Override(format!("{assignment:?} is not KEY=VALUE")))?;
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::Override(format!("malformed key {key:?}")));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = root;
    for part in &parts[..parts.len() - 1] {
        let map = node
            .as_object_mut()
            .ok_or_else(|| CliError::Override(format!("{key:?} descends into a non-object")))?;
        node = map
            .entry(part.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    node.as_object_mut()
        .ok_or_else(|| CliError::Override(format!("{key:?} descends into a non-object")))?
        .insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}
