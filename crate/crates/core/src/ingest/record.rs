use std::collections::HashSet;
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KnowledgeSource {
    TextEntity,
    KeyPhrase,
    VisualObject,
}

impl KnowledgeSource {
    pub fn is_textual(self) -> bool {
        !matches!(self, KnowledgeSource::VisualObject)
    }
}

impl fmt::Display for KnowledgeSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            KnowledgeSource::TextEntity => "text_entity",
            KnowledgeSource::KeyPhrase => "key_phrase",
            KnowledgeSource::VisualObject => "visual_object",
        })
    }
}

/// One extracted piece of knowledge with its precomputed embedding.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KnowledgeItem {
    pub embedding: Vec<f64>,
    pub score: f64,
    pub dedup_key: String,
    pub source: KnowledgeSource,
}

/// A claim–evidence pair: four global embeddings plus the extracted knowledge.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KnowledgeRecord {
    pub id: String,
    pub claim_text_emb: Vec<f64>,
    pub claim_image_emb: Vec<f64>,
    pub evidence_text_emb: Vec<f64>,
    pub evidence_image_emb: Vec<f64>,
    pub text_entities: Vec<KnowledgeItem>,
    pub key_phrases: Vec<KnowledgeItem>,
    pub visual_objects: Vec<KnowledgeItem>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<usize>,
}

impl KnowledgeRecord {
    pub fn knowledge_len(&self) -> usize {
        self.text_entities.len() + self.key_phrases.len() + self.visual_objects.len()
    }

    /// Copy of the record with every knowledge list emptied.
    pub fn without_knowledge(&self) -> Self {
        Self {
            text_entities: Vec::new(),
            key_phrases: Vec::new(),
            visual_objects: Vec::new(),
            ..self.clone()
        }
    }

    /// Checks dimensions, scores, source tags, and label range against a header.
    pub fn validate(&self, header: &DatasetHeader) -> Result<()> {
        let globals = [
            ("claim_text_emb", &self.claim_text_emb, header.d_t),
            ("evidence_text_emb", &self.evidence_text_emb, header.d_t),
            ("claim_image_emb", &self.claim_image_emb, header.d_v),
            ("evidence_image_emb", &self.evidence_image_emb, header.d_v),
        ];
        for (field, emb, dim) in globals {
            check_embedding(field, emb, dim)?;
        }
        let lists = [
            (
                "text_entities",
                &self.text_entities,
                KnowledgeSource::TextEntity,
            ),
            ("key_phrases", &self.key_phrases, KnowledgeSource::KeyPhrase),
            (
                "visual_objects",
                &self.visual_objects,
                KnowledgeSource::VisualObject,
            ),
        ];
        for (field, items, expected) in lists {
            for (i, item) in items.iter().enumerate() {
                if item.source != expected {
                    return Err(Error::Validation(format!(
                        "{field}[{i}] has source {} but belongs to {expected}",
                        item.source
                    )));
                }
                if !(0.0..=1.0).contains(&item.score) {
                    return Err(Error::Validation(format!(
                        "{field}[{i}] score {} outside [0, 1]",
                        item.score
                    )));
                }
                let dim = if expected.is_textual() {
                    header.d_t
                } else {
                    header.d_v
                };
                check_embedding(&format!("{field}[{i}].embedding"), &item.embedding, dim)?;
            }
        }
        if let Some(label) = self.label {
            if label >= header.num_classes {
                return Err(Error::Validation(format!(
                    "label {label} outside [0, {})",
                    header.num_classes
                )));
            }
        }
        Ok(())
    }
}

fn check_embedding(field: &str, emb: &[f64], dim: usize) -> Result<()> {
    if emb.len() != dim {
        return Err(Error::Validation(format!(
            "{field} has {} values, expected {dim}",
            emb.len()
        )));
    }
    if emb.iter().any(|v| !v.is_finite()) {
        return Err(Error::Validation(format!(
            "{field} contains a non-finite value"
        )));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetHeader {
    pub num_classes: usize,
    pub d_t: usize,
    pub d_v: usize,
    pub class_names: Vec<String>,
}

impl DatasetHeader {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::Validation(format!(
                "num_classes must be at least 2, got {}",
                self.num_classes
            )));
        }
        if self.class_names.len() != self.num_classes {
            return Err(Error::Validation(format!(
                "{} class names for {} classes",
                self.class_names.len(),
                self.num_classes
            )));
        }
        if self.d_t == 0 || self.d_v == 0 {
            return Err(Error::Validation(
                "embedding dimensions must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub records: Vec<KnowledgeRecord>,
}

impl Dataset {
    pub fn new(header: DatasetHeader, records: Vec<KnowledgeRecord>) -> Result<Self> {
        header.validate()?;
        let mut seen = HashSet::new();
        for r in &records {
            r.validate(&header)?;
            if !seen.insert(r.id.as_str()) {
                return Err(Error::Validation(format!("duplicate record id {}", r.id)));
            }
        }
        Ok(Self { header, records })
    }

    pub fn num_classes(&self) -> usize {
        self.header.num_classes
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Same header, a subset of records (indices into `self.records`).
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            header: self.header.clone(),
            records: indices.iter().map(|&i| self.records[i].clone()).collect(),
        }
    }

    pub fn labels(&self) -> Result<Vec<usize>> {
        self.records
            .iter()
            .map(|r| {
                r.label
                    .ok_or_else(|| Error::Validation(format!("record {} has no label", r.id)))
            })
            .collect()
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = serde_json::to_string(&self.header)?;
        out.push('\n');
        for r in &self.records {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn from_reader(reader: impl BufRead) -> Result<Self> {
        let mut lines = reader.lines().enumerate();
        let header: DatasetHeader = loop {
            match lines.next() {
                None => {
                    return Err(Error::Parse {
                        line: 1,
                        msg: "missing header line".into(),
                    })
                }
                Some((i, line)) => {
                    let line = line.map_err(|e| Error::Parse {
                        line: i + 1,
                        msg: e.to_string(),
                    })?;
                    if line.trim().is_empty() {
                        continue;
                    }
                    let header: DatasetHeader =
                        serde_json::from_str(&line).map_err(|e| Error::Parse {
                            line: i + 1,
                            msg: e.to_string(),
                        })?;
                    header.validate().map_err(|e| Error::Parse {
                        line: i + 1,
                        msg: e.to_string(),
                    })?;
                    break header;
                }
            }
        };

        let mut records = Vec::new();
        let mut seen = HashSet::new();
        for (i, line) in lines {
            let line_no = i + 1;
            let line = line.map_err(|e| Error::Parse {
                line: line_no,
                msg: e.to_string(),
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let record: KnowledgeRecord =
                serde_json::from_str(&line).map_err(|e| Error::Parse {
                    line: line_no,
                    msg: e.to_string(),
                })?;
            record.validate(&header).map_err(|e| Error::Parse {
                line: line_no,
                msg: e.to_string(),
            })?;
            if !seen.insert(record.id.clone()) {
                return Err(Error::Validation(format!(
                    "line {line_no}: duplicate record id {}",
                    record.id
                )));
            }
            records.push(record);
        }
        Ok(Self { header, records })
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        Self::from_reader(text.as_bytes())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        file.write_all(self.to_jsonl()?.as_bytes())
            .map_err(|e| Error::io(path, e))
    }
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Dataset::from_reader(BufReader::new(file))
}
