use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::record::{KnowledgeItem, KnowledgeRecord};
use crate::error::{Error, Result};

/// Confidence thresholds and per-source cap applied before graph construction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FilterConfig {
    /// Applies to text entities and key phrases.
    pub text_threshold: f64,
    pub visual_threshold: f64,
    pub max_per_source: usize,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            text_threshold: 0.3,
            visual_threshold: 0.8,
            max_per_source: 16,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, t) in [
            ("text_threshold", self.text_threshold),
            ("visual_threshold", self.visual_threshold),
        ] {
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::Validation(format!("{name} {t} outside [0, 1]")));
            }
        }
        Ok(())
    }

    /// Keeps every item: zero thresholds and no cap.
    pub fn pass_through() -> Self {
        Self {
            text_threshold: 0.0,
            visual_threshold: 0.0,
            max_per_source: usize::MAX,
        }
    }
}

fn filter_list(items: &[KnowledgeItem], threshold: f64, cap: usize) -> Vec<KnowledgeItem> {
    let mut seen = HashSet::new();
    items
        .iter()
        .filter(|item| item.score >= threshold)
        .filter(|item| seen.insert(item.dedup_key.as_str()))
        .take(cap)
        .cloned()
        .collect()
}

/// Drops low-confidence items, keeps the first occurrence of each dedup key
/// per source list, then truncates each list. Survivors keep their order.
pub fn filter_and_dedup(record: &KnowledgeRecord, config: &FilterConfig) -> KnowledgeRecord {
    KnowledgeRecord {
        text_entities: filter_list(
            &record.text_entities,
            config.text_threshold,
            config.max_per_source,
        ),
        key_phrases: filter_list(
            &record.key_phrases,
            config.text_threshold,
            config.max_per_source,
        ),
        visual_objects: filter_list(
            &record.visual_objects,
            config.visual_threshold,
            config.max_per_source,
        ),
        ..record.clone()
    }
}
