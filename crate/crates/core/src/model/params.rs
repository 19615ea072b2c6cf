use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{FusionVariant, ModelConfig};
use crate::error::{Error, Result};
use crate::numerics::{ParamId, ParamStore, Tensor};

#[derive(Clone, Copy, Debug)]
pub struct Affine {
    pub weight: ParamId,
    pub bias: ParamId,
}

#[derive(Clone, Copy, Debug)]
pub struct HeadParams {
    pub theta: ParamId,
    /// Absent for the GCN variant, which has no learned attention.
    pub attn: Option<ParamId>,
}

#[derive(Clone, Copy, Debug)]
pub struct SelfAttParams {
    pub query: ParamId,
    pub key: ParamId,
    pub value: ParamId,
}

/// Where each architectural parameter lives in the [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Layout {
    pub proj_text: Affine,
    pub proj_key: Affine,
    pub proj_visual: Affine,
    /// `layers[l][h]`
    pub layers: Vec<Vec<HeadParams>>,
    pub self_att: Option<SelfAttParams>,
    pub hidden: Affine,
    pub output: Affine,
}

pub fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

struct Init<'a> {
    rng: ChaCha8Rng,
    store: &'a mut ParamStore,
}

impl Init<'_> {
    fn glorot(&mut self, name: String, rows: usize, cols: usize) -> Result<ParamId> {
        let bound = glorot_bound(rows, cols);
        let values = (0..rows * cols)
            .map(|_| self.rng.gen_range(-bound..=bound))
            .collect();
        self.store.insert(name, Tensor::matrix(rows, cols, values)?)
    }

    fn affine(&mut self, name: &str, input: usize, output: usize) -> Result<Affine> {
        Ok(Affine {
            weight: self.glorot(format!("{name}.weight"), input, output)?,
            bias: self
                .store
                .insert(format!("{name}.bias"), Tensor::zeros(&[output]))?,
        })
    }
}

/// Allocates and Glorot-initialises every parameter the configuration needs.
///
/// Weights are stored `input × output` and applied as `x · W + b`.
pub fn init_params(config: &ModelConfig, seed: u64) -> Result<(Layout, ParamStore)> {
    config.validate()?;
    let mut store = ParamStore::new();
    let mut init = Init {
        rng: ChaCha8Rng::seed_from_u64(seed),
        store: &mut store,
    };
    let proj_text = init.affine("proj_text", config.d_t, config.d)?;
    let proj_key = init.affine("proj_key", config.d_t, config.d)?;
    let proj_visual = init.affine("proj_visual", config.d_v, config.d)?;

    let mut layers = Vec::new();
    let mut self_att = None;
    if config.fusion.is_graph() {
        for (l, (input, output)) in config.layer_dims().into_iter().enumerate() {
            let mut heads = Vec::with_capacity(config.num_heads);
            for h in 0..config.num_heads {
                let theta = init.glorot(format!("gat.{l}.{h}.theta"), input, output)?;
                let attn = if config.fusion == FusionVariant::Gcn {
                    None
                } else {
                    Some(init.glorot(format!("gat.{l}.{h}.attn"), 2 * output, 1)?)
                };
                heads.push(HeadParams { theta, attn });
            }
            layers.push(heads);
        }
    } else if config.fusion == FusionVariant::SelfAttFusion {
        self_att = Some(SelfAttParams {
            query: init.glorot("self_att.query".into(), config.d, config.d)?,
            key: init.glorot("self_att.key".into(), config.d, config.d)?,
            value: init.glorot("self_att.value".into(), config.d, config.d)?,
        });
    }
    let hidden = init.affine(
        "classifier.hidden",
        config.pooled_dim(),
        config.d_classifier,
    )?;
    let output = init.affine("classifier.output", config.d_classifier, config.num_classes)?;
    Ok((
        Layout {
            proj_text,
            proj_key,
            proj_visual,
            layers,
            self_att,
            hidden,
            output,
        },
        store,
    ))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    shape: Vec<usize>,
    values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointFile {
    config: ModelConfig,
    tensors: BTreeMap<String, TensorEntry>,
}

pub fn checkpoint_to_json(config: &ModelConfig, store: &ParamStore) -> Result<String> {
    let tensors = store
        .iter()
        .map(|p| {
            (
                p.name.clone(),
                TensorEntry {
                    shape: p.value.shape().to_vec(),
                    values: p.value.values().to_vec(),
                },
            )
        })
        .collect();
    let file = CheckpointFile {
        config: config.clone(),
        tensors,
    };
    Ok(serde_json::to_string_pretty(&file)?)
}

/// Parses a checkpoint and checks every tensor against the layout its config implies.
pub fn checkpoint_from_json(text: &str) -> Result<(ModelConfig, Layout, ParamStore)> {
    let file: CheckpointFile = serde_json::from_str(text)?;
    let (layout, mut store) = init_params(&file.config, 0)?;
    if file.tensors.len() != store.len() {
        return Err(Error::Config(format!(
            "checkpoint holds {} tensors, configuration needs {}",
            file.tensors.len(),
            store.len()
        )));
    }
    for id in store.ids().collect::<Vec<_>>() {
        let name = store.get(id).name.clone();
        let entry = file
            .tensors
            .get(&name)
            .ok_or_else(|| Error::Config(format!("checkpoint is missing tensor {name}")))?;
        let expected = store.get(id).value.shape().to_vec();
        if entry.shape != expected {
            return Err(Error::Config(format!(
                "tensor {name} has shape {:?}, configuration needs {expected:?}",
                entry.shape
            )));
        }
        let value = Tensor::new(entry.shape.clone(), entry.values.clone())?;
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("checkpoint tensor {name}")));
        }
        store.get_mut(id).value = value;
    }
    Ok((file.config, layout, store))
}

pub fn save_checkpoint(
    path: impl AsRef<Path>,
    config: &ModelConfig,
    store: &ParamStore,
) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, checkpoint_to_json(config, store)?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(ModelConfig, Layout, ParamStore)> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    checkpoint_from_json(&text)
}
