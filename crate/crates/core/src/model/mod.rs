//! Knowledge-guided graph fusion network, its ablations, and baseline fusions.

mod config;
mod layers;
mod params;

pub use config::{FusionVariant, ModelConfig};
pub use layers::{
    gat_layer, gcn_layer, global_concat, project_nodes, propagation_matrix, AttentionMap,
};
pub use params::{
    checkpoint_from_json, checkpoint_to_json, glorot_bound, init_params, load_checkpoint,
    save_checkpoint, Affine, HeadParams, Layout, SelfAttParams,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::HeteroGraph;
use crate::numerics::{argmax, softmax, ParamStore, Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub probs: Vec<f64>,
    pub label: usize,
    /// Pooled representation handed to the classifier.
    pub pooled: Vec<f64>,
}

/// Intermediate values captured during a forward pass.
#[derive(Clone, Debug, Default)]
pub struct ForwardTrace {
    pub num_nodes: usize,
    pub attention: Vec<AttentionMap>,
}

/// Architecture definition; weights live in a separate [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub layout: Layout,
}

impl Model {
    /// Builds the layout and freshly initialised parameters from `config.seed`.
    pub fn new(config: ModelConfig) -> Result<(Self, ParamStore)> {
        let (layout, store) = init_params(&config, config.seed)?;
        Ok((Self { config, layout }, store))
    }

    pub fn from_parts(config: ModelConfig, layout: Layout) -> Self {
        Self { config, layout }
    }

    /// Records the network on `tape` and returns `(pooled, logits)`.
    pub fn record(
        &self,
        store: &ParamStore,
        tape: &mut Tape,
        graph: &HeteroGraph,
        mut trace: Option<&mut ForwardTrace>,
    ) -> Result<(Var, Var)> {
        let cfg = &self.config;
        let reduced;
        let graph = if cfg.use_knowledge {
            graph
        } else {
            reduced = graph.globals_only();
            &reduced
        };
        if let Some(t) = trace.as_deref_mut() {
            t.num_nodes = graph.len();
        }
        let projected = project_nodes(tape, store, &self.layout, graph)?;

        let pooled = match cfg.fusion {
            FusionVariant::Kgf | FusionVariant::IndependentGat => {
                let log_factors = tape.constant(graph.edge_factors().map(f64::ln));
                let mut states = projected;
                for (l, heads) in self.layout.layers.iter().enumerate() {
                    let input = if cfg.global_concat_active() {
                        global_concat(tape, states, &graph.global_index)?
                    } else {
                        states
                    };
                    states = gat_layer(
                        tape,
                        store,
                        input,
                        log_factors,
                        heads,
                        l,
                        cfg.leaky_slope,
                        l + 1 == self.layout.layers.len(),
                        trace.as_deref_mut().map(|t| &mut t.attention),
                    )?;
                }
                tape.mean_rows(states)?
            }
            FusionVariant::Gcn => {
                let propagation = tape.constant(propagation_matrix(&graph.edge_factors()));
                let mut states = projected;
                for (l, heads) in self.layout.layers.iter().enumerate() {
                    let last = l + 1 == self.layout.layers.len();
                    states = gcn_layer(tape, store, states, propagation, heads, last)?;
                }
                tape.mean_rows(states)?
            }
            FusionVariant::SelfAttFusion => {
                let p = self
                    .layout
                    .self_att
                    .ok_or_else(|| Error::Config("self-attention parameters missing".into()))?;
                let (wq, wk, wv) = (
                    tape.param(store, p.query),
                    tape.param(store, p.key),
                    tape.param(store, p.value),
                );
                let q = tape.matmul(projected, wq)?;
                let k = tape.matmul(projected, wk)?;
                let v = tape.matmul(projected, wv)?;
                let kt = tape.transpose(k);
                let scores = tape.matmul(q, kt)?;
                let scaled = tape.scale(scores, 1.0 / (cfg.d as f64).sqrt());
                let attn = tape.row_softmax(scaled);
                let mixed = tape.matmul(attn, v)?;
                tape.mean_rows(mixed)?
            }
            FusionVariant::ConcatFusion => {
                let mut blocks = Vec::with_capacity(5);
                for g in graph.global_index.as_array() {
                    blocks.push(tape.gather_rows(projected, &[g])?);
                }
                if cfg.use_knowledge {
                    let knowledge: Vec<usize> = (0..graph.len())
                        .filter(|&i| !graph.nodes[i].kind.is_global())
                        .collect();
                    let block = if knowledge.is_empty() {
                        tape.constant(Tensor::zeros(&[1, cfg.d]))
                    } else {
                        let rows = tape.gather_rows(projected, &knowledge)?;
                        tape.mean_rows(rows)?
                    };
                    blocks.push(block);
                }
                tape.concat_cols(&blocks)?
            }
        };

        let hidden = layers::affine(tape, store, pooled, self.layout.hidden)?;
        let hidden = tape.relu(hidden);
        let logits = layers::affine(tape, store, hidden, self.layout.output)?;
        Ok((pooled, logits))
    }

    /// Cross-entropy of the prediction against `label`, recorded on `tape`.
    pub fn loss(
        &self,
        store: &ParamStore,
        tape: &mut Tape,
        graph: &HeteroGraph,
        label: usize,
    ) -> Result<Var> {
        let (_, logits) = self.record(store, tape, graph, None)?;
        tape.softmax_cross_entropy(logits, label)
    }

    pub fn forward(&self, store: &ParamStore, graph: &HeteroGraph) -> Result<Prediction> {
        self.forward_traced(store, graph).map(|(p, _)| p)
    }

    pub fn forward_traced(
        &self,
        store: &ParamStore,
        graph: &HeteroGraph,
    ) -> Result<(Prediction, ForwardTrace)> {
        let mut tape = Tape::new();
        let mut trace = ForwardTrace::default();
        let (pooled, logits) = self.record(store, &mut tape, graph, Some(&mut trace))?;
        let probs = softmax(tape.value(logits).values(), None)?;
        if probs.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("class probabilities".into()));
        }
        Ok((
            Prediction {
                label: argmax(&probs),
                probs,
                pooled: tape.value(pooled).values().to_vec(),
            },
            trace,
        ))
    }
}

/// Finite-difference check of the cross-entropy gradient for one labeled graph.
pub fn check_model_gradients(
    model: &Model,
    store: &mut ParamStore,
    graph: &HeteroGraph,
    label: usize,
    config: &crate::numerics::GradCheckConfig,
) -> Result<crate::numerics::GradCheckReport> {
    crate::numerics::grad_check(store, |s, t| model.loss(s, t, graph, label), config)
}
