//! Seeded synthetic claim–evidence data with class prototypes per modality.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::record::{Dataset, DatasetHeader, KnowledgeItem, KnowledgeRecord, KnowledgeSource};
use crate::error::{Error, Result};

/// Standard deviation of the Gaussian perturbation around a class prototype.
pub const PROTOTYPE_NOISE: f64 = 0.3;
/// Signal-carrying items draw their confidence from this range, above both default thresholds.
pub const SIGNAL_SCORE_RANGE: (f64, f64) = (0.85, 1.0);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelSignal {
    /// Globals and knowledge items all carry the class prototype.
    Globals,
    /// Globals are class-independent noise; only knowledge items carry the class.
    KnowledgeOnly,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KnowledgeCounts {
    pub text_entities: usize,
    pub key_phrases: usize,
    pub visual_objects: usize,
}

impl Default for KnowledgeCounts {
    fn default() -> Self {
        Self {
            text_entities: 3,
            key_phrases: 2,
            visual_objects: 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub seed: u64,
    pub num_classes: usize,
    pub records_per_class: usize,
    pub d_t: usize,
    pub d_v: usize,
    pub knowledge_counts: KnowledgeCounts,
    pub noise_items_per_record: usize,
    pub label_signal: LabelSignal,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            seed: 7,
            num_classes: 5,
            records_per_class: 50,
            d_t: 16,
            d_v: 16,
            knowledge_counts: KnowledgeCounts::default(),
            noise_items_per_record: 2,
            label_signal: LabelSignal::Globals,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::Validation("num_classes must be at least 2".into()));
        }
        if self.records_per_class == 0 {
            return Err(Error::Validation(
                "records_per_class must be positive".into(),
            ));
        }
        if self.d_t == 0 || self.d_v == 0 {
            return Err(Error::Validation(
                "embedding dimensions must be positive".into(),
            ));
        }
        Ok(())
    }
}

fn unit_vector(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-9 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

fn perturbed(rng: &mut ChaCha8Rng, prototype: &[f64]) -> Vec<f64> {
    let v: Vec<f64> = prototype
        .iter()
        .map(|p| {
            let n: f64 = StandardNormal.sample(rng);
            p + PROTOTYPE_NOISE * n
        })
        .collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    v.into_iter().map(|x| x / norm).collect()
}

pub fn class_names(num_classes: usize) -> Vec<String> {
    (0..num_classes).map(|c| format!("class_{c}")).collect()
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let text_protos: Vec<Vec<f64>> = (0..spec.num_classes)
        .map(|_| unit_vector(&mut rng, spec.d_t))
        .collect();
    let visual_protos: Vec<Vec<f64>> = (0..spec.num_classes)
        .map(|_| unit_vector(&mut rng, spec.d_v))
        .collect();

    let mut records = Vec::with_capacity(spec.num_classes * spec.records_per_class);
    for class in 0..spec.num_classes {
        let (tp, vp) = (&text_protos[class], &visual_protos[class]);
        for n in 0..spec.records_per_class {
            let id = format!("syn-{class}-{n:04}");
            let global = |rng: &mut ChaCha8Rng, proto: &[f64]| match spec.label_signal {
                LabelSignal::Globals => perturbed(rng, proto),
                LabelSignal::KnowledgeOnly => unit_vector(rng, proto.len()),
            };
            let claim_text_emb = global(&mut rng, tp);
            let evidence_text_emb = global(&mut rng, tp);
            let claim_image_emb = global(&mut rng, vp);
            let evidence_image_emb = global(&mut rng, vp);

            let mut counter = 0usize;
            let mut next_key = |source: KnowledgeSource| {
                counter += 1;
                format!("{id}/{source}/{counter}")
            };
            let mut signal = |rng: &mut ChaCha8Rng, source: KnowledgeSource, count: usize| {
                let proto = if source.is_textual() { tp } else { vp };
                (0..count)
                    .map(|_| KnowledgeItem {
                        embedding: perturbed(rng, proto),
                        score: rng.gen_range(SIGNAL_SCORE_RANGE.0..=SIGNAL_SCORE_RANGE.1),
                        dedup_key: next_key(source),
                        source,
                    })
                    .collect::<Vec<_>>()
            };
            let mut text_entities = signal(
                &mut rng,
                KnowledgeSource::TextEntity,
                spec.knowledge_counts.text_entities,
            );
            let mut key_phrases = signal(
                &mut rng,
                KnowledgeSource::KeyPhrase,
                spec.knowledge_counts.key_phrases,
            );
            let mut visual_objects = signal(
                &mut rng,
                KnowledgeSource::VisualObject,
                spec.knowledge_counts.visual_objects,
            );

            for _ in 0..spec.noise_items_per_record {
                let source = [
                    KnowledgeSource::TextEntity,
                    KnowledgeSource::KeyPhrase,
                    KnowledgeSource::VisualObject,
                ][rng.gen_range(0..3)];
                let dim = if source.is_textual() {
                    spec.d_t
                } else {
                    spec.d_v
                };
                let item = KnowledgeItem {
                    embedding: unit_vector(&mut rng, dim),
                    score: rng.gen_range(0.0..=1.0),
                    dedup_key: format!("{id}/noise/{}", counter),
                    source,
                };
                counter += 1;
                match source {
                    KnowledgeSource::TextEntity => text_entities.push(item),
                    KnowledgeSource::KeyPhrase => key_phrases.push(item),
                    KnowledgeSource::VisualObject => visual_objects.push(item),
                }
            }
            text_entities.shuffle(&mut rng);
            key_phrases.shuffle(&mut rng);
            visual_objects.shuffle(&mut rng);

            records.push(KnowledgeRecord {
                id,
                claim_text_emb,
                claim_image_emb,
                evidence_text_emb,
                evidence_image_emb,
                text_entities,
                key_phrases,
                visual_objects,
                label: Some(class),
            });
        }
    }

    Dataset::new(
        DatasetHeader {
            num_classes: spec.num_classes,
            d_t: spec.d_t,
            d_v: spec.d_v,
            class_names: class_names(spec.num_classes),
        },
        records,
    )
}

/// Seeded record-level split into train/val/test by fractions of the total.
///
/// Train and validation sizes are floored; the test split takes the remainder.
pub fn split_dataset(
    dataset: &Dataset,
    train_fraction: f64,
    val_fraction: f64,
    seed: u64,
) -> Result<(Dataset, Dataset, Dataset)> {
    if train_fraction < 0.0 || val_fraction < 0.0 || train_fraction + val_fraction > 1.0 {
        return Err(Error::Validation(format!(
            "invalid split fractions {train_fraction}/{val_fraction}"
        )));
    }
    let n = dataset.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = (n as f64 * train_fraction + 1e-9).floor() as usize;
    let n_val = (n as f64 * val_fraction + 1e-9).floor() as usize;
    let (train, rest) = order.split_at(n_train);
    let (val, test) = rest.split_at(n_val.min(rest.len()));
    Ok((
        dataset.subset(train),
        dataset.subset(val),
        dataset.subset(test),
    ))
}

/// A single random labeled record with Gaussian embeddings, used by gradient checks.
pub fn random_record(
    seed: u64,
    d_t: usize,
    d_v: usize,
    counts: &KnowledgeCounts,
    num_classes: usize,
) -> KnowledgeRecord {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gauss = |rng: &mut ChaCha8Rng, dim: usize| -> Vec<f64> {
        (0..dim).map(|_| StandardNormal.sample(rng)).collect()
    };
    let claim_text_emb = gauss(&mut rng, d_t);
    let claim_image_emb = gauss(&mut rng, d_v);
    let evidence_text_emb = gauss(&mut rng, d_t);
    let evidence_image_emb = gauss(&mut rng, d_v);
    let items = |rng: &mut ChaCha8Rng, source: KnowledgeSource, count: usize| {
        let dim = if source.is_textual() { d_t } else { d_v };
        (0..count)
            .map(|i| KnowledgeItem {
                embedding: gauss(rng, dim),
                score: 1.0,
                dedup_key: format!("{source}-{i}"),
                source,
            })
            .collect::<Vec<_>>()
    };
    let text_entities = items(&mut rng, KnowledgeSource::TextEntity, counts.text_entities);
    let key_phrases = items(&mut rng, KnowledgeSource::KeyPhrase, counts.key_phrases);
    let visual_objects = items(
        &mut rng,
        KnowledgeSource::VisualObject,
        counts.visual_objects,
    );
    KnowledgeRecord {
        id: format!("random-{seed}"),
        claim_text_emb,
        claim_image_emb,
        evidence_text_emb,
        evidence_image_emb,
        text_entities,
        key_phrases,
        visual_objects,
        label: Some(rng.gen_range(0..num_classes)),
    }
}
