//! Mini-batch training, evaluation, and classification metrics.

mod metrics;

pub use metrics::MetricsReport;

use std::fmt::Write as _;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{build_graph, HeteroGraph};
use crate::ingest::Dataset;
use crate::model::Model;
use crate::numerics::{Adam, AdamConfig, ParamStore, Tape};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub shuffle: bool,
    /// Stop after this many epochs without a validation weighted-F1 improvement
    /// and restore the best parameters.
    pub early_stop_patience: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 2e-5,
            batch_size: 8,
            epochs: 10,
            seed: 0,
            shuffle: true,
            early_stop_patience: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate must be finite and non-negative, got {}",
                self.learning_rate
            )));
        }
        if self.early_stop_patience == Some(0) {
            return Err(Error::Config(
                "early_stop_patience must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub val_accuracy: Option<f64>,
    pub val_weighted_f1: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub epochs: Vec<EpochRecord>,
}

impl TrainTrace {
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut out = String::from("epoch,mean_loss,val_accuracy,val_weighted_f1\n");
        for e in &self.epochs {
            let _ = writeln!(
                out,
                "{},{},{},{}",
                e.epoch,
                e.mean_loss,
                opt(e.val_accuracy),
                opt(e.val_weighted_f1)
            );
        }
        out
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.mean_loss)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub trace: TrainTrace,
    pub steps: u64,
    /// Epoch whose parameters were kept when early stopping is enabled.
    pub best_epoch: Option<usize>,
    pub stopped_early: bool,
}

fn labeled_graphs(dataset: &Dataset) -> Result<Vec<(HeteroGraph, usize)>> {
    if dataset.is_empty() {
        return Err(Error::Validation("dataset is empty".into()));
    }
    let labels = dataset.labels()?;
    dataset
        .records
        .iter()
        .zip(labels)
        .map(|(r, y)| Ok((build_graph(r)?, y)))
        .collect()
}

fn check_classes(model: &Model, dataset: &Dataset) -> Result<()> {
    if dataset.num_classes() != model.config.num_classes {
        return Err(Error::Config(format!(
            "dataset has {} classes, model expects {}",
            dataset.num_classes(),
            model.config.num_classes
        )));
    }
    Ok(())
}

/// Trains `store` in place with Adam on the mean cross-entropy of each mini-batch.
///
/// Records in a batch are processed one graph at a time and their gradients
/// accumulated, so graphs of different sizes need no padding.
pub fn train(
    model: &Model,
    store: &mut ParamStore,
    train_set: &Dataset,
    val_set: Option<&Dataset>,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    check_classes(model, train_set)?;
    if config.early_stop_patience.is_some() && val_set.is_none() {
        return Err(Error::Config(
            "early stopping needs a validation split".into(),
        ));
    }
    let examples = labeled_graphs(train_set)?;
    let val_examples = match val_set {
        Some(v) => {
            check_classes(model, v)?;
            Some(labeled_graphs(v)?)
        }
        None => None,
    };

    let mut optimizer = Adam::new(AdamConfig::with_lr(config.learning_rate), store);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut trace = TrainTrace::default();
    let mut best: Option<(f64, usize, ParamStore)> = None;
    let mut stopped_early = false;

    for epoch in 1..=config.epochs {
        if config.shuffle {
            order.shuffle(&mut rng);
        }
        let mut total = 0.0;
        for (b, batch) in order.chunks(config.batch_size).enumerate() {
            store.zero_grads();
            let mut batch_loss = 0.0;
            for &i in batch {
                let (graph, label) = &examples[i];
                let mut tape = Tape::new();
                let at = || {
                    format!(
                        "epoch {epoch}, batch {}, record {}",
                        b + 1,
                        train_set.records[i].id
                    )
                };
                let loss = model
                    .loss(store, &mut tape, graph, *label)
                    .map_err(|e| match e {
                        Error::NonFinite(what) => Error::NonFinite(format!("{what} at {}", at())),
                        other => other,
                    })?;
                let value = tape.value(loss).values()[0];
                if !value.is_finite() {
                    return Err(Error::NonFinite(format!("loss {value} at {}", at())));
                }
                batch_loss += value;
                store.accumulate(&tape.backward(loss)?);
            }
            store.scale_grads(1.0 / batch.len() as f64);
            optimizer.step(store)?;
            debug!(
                "epoch {epoch} batch {} loss {}",
                b + 1,
                batch_loss / batch.len() as f64
            );
            total += batch_loss;
        }
        let mean_loss = total / examples.len() as f64;

        let val = match &val_examples {
            Some(v) => Some(evaluate_graphs(model, store, v, model.config.num_classes)?),
            None => None,
        };
        info!(
            "epoch {epoch}: loss {mean_loss:.6}{}",
            val.as_ref()
                .map(|m| format!(", val acc {:.4}, val w-F1 {:.4}", m.accuracy, m.weighted_f1))
                .unwrap_or_default()
        );
        trace.epochs.push(EpochRecord {
            epoch,
            mean_loss,
            val_accuracy: val.as_ref().map(|m| m.accuracy),
            val_weighted_f1: val.as_ref().map(|m| m.weighted_f1),
        });

        if let (Some(patience), Some(m)) = (config.early_stop_patience, &val) {
            let improved = best.as_ref().is_none_or(|(f1, _, _)| m.weighted_f1 > *f1);
            if improved {
                best = Some((m.weighted_f1, epoch, store.clone()));
            } else if epoch - best.as_ref().map_or(0, |(_, e, _)| *e) >= patience {
                stopped_early = true;
                break;
            }
        }
    }

    let best_epoch = best.map(|(_, epoch, params)| {
        *store = params;
        epoch
    });
    Ok(TrainOutcome {
        trace,
        steps: optimizer.steps_taken(),
        best_epoch,
        stopped_early,
    })
}

fn evaluate_graphs(
    model: &Model,
    store: &ParamStore,
    examples: &[(HeteroGraph, usize)],
    num_classes: usize,
) -> Result<MetricsReport> {
    let mut truth = Vec::with_capacity(examples.len());
    let mut predicted = Vec::with_capacity(examples.len());
    for (graph, label) in examples {
        truth.push(*label);
        predicted.push(model.forward(store, graph)?.label);
    }
    MetricsReport::from_predictions(&truth, &predicted, num_classes)
}

/// Argmax predictions of the model over a labeled dataset.
pub fn evaluate(model: &Model, store: &ParamStore, dataset: &Dataset) -> Result<MetricsReport> {
    check_classes(model, dataset)?;
    evaluate_graphs(
        model,
        store,
        &labeled_graphs(dataset)?,
        dataset.num_classes(),
    )
}

/// Mean cross-entropy of the model over a labeled dataset, without updating anything.
pub fn mean_loss(model: &Model, store: &ParamStore, dataset: &Dataset) -> Result<f64> {
    let examples = labeled_graphs(dataset)?;
    let mut total = 0.0;
    for (graph, label) in &examples {
        let mut tape = Tape::new();
        let loss = model.loss(store, &mut tape, graph, *label)?;
        total += tape.value(loss).values()[0];
    }
    Ok(total / examples.len() as f64)
}
