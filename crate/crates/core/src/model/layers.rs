//! Recorded building blocks of the fusion network.

use super::params::{Affine, HeadParams, Layout};
use crate::error::{Error, Result};
use crate::graph::{GlobalIndex, HeteroGraph, NodeKind};
use crate::numerics::{ParamStore, Tape, Tensor, Var};

/// Attention coefficients of one head at one layer, rows summing to one.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionMap {
    pub layer: usize,
    pub head: usize,
    pub weights: Tensor,
}

pub(crate) fn affine(tape: &mut Tape, store: &ParamStore, x: Var, p: Affine) -> Result<Var> {
    let w = tape.param(store, p.weight);
    let b = tape.param(store, p.bias);
    let xw = tape.matmul(x, w)?;
    tape.add_row(xw, b)
}

/// Shared-space projection: `ReLU(x·W + b)` with one affine map per source
/// (text globals and entities, key phrases, visual globals and objects).
pub fn project_nodes(
    tape: &mut Tape,
    store: &ParamStore,
    layout: &Layout,
    graph: &HeteroGraph,
) -> Result<Var> {
    let group = |kind: NodeKind| match kind {
        NodeKind::GlobalTextClaim | NodeKind::GlobalTextEvidence | NodeKind::TextEntity => 0,
        NodeKind::KeyPhrase => 1,
        NodeKind::GlobalImageClaim | NodeKind::GlobalImageEvidence | NodeKind::VisualObject => 2,
    };
    let maps = [layout.proj_text, layout.proj_key, layout.proj_visual];
    let mut blocks = Vec::new();
    // position of every node inside the stacked block output
    let mut placement = vec![0usize; graph.len()];
    let mut offset = 0;
    for (g, map) in maps.iter().enumerate() {
        let members: Vec<usize> = (0..graph.len())
            .filter(|&i| group(graph.nodes[i].kind) == g)
            .collect();
        if members.is_empty() {
            continue;
        }
        let expected = store.value(map.weight).rows();
        let mut values = Vec::with_capacity(members.len() * expected);
        for &i in &members {
            let emb = &graph.nodes[i].embedding;
            if emb.len() != expected {
                return Err(Error::Config(format!(
                    "{:?} node {i} has dimension {}, projection expects {expected}",
                    graph.nodes[i].kind,
                    emb.len()
                )));
            }
            values.extend_from_slice(emb);
        }
        let x = tape.constant(Tensor::matrix(members.len(), expected, values)?);
        let pre = affine(tape, store, x, *map)?;
        blocks.push(tape.relu(pre));
        for (k, &i) in members.iter().enumerate() {
            placement[i] = offset + k;
        }
        offset += members.len();
    }
    let stacked = tape.concat_rows(&blocks)?;
    tape.gather_rows(stacked, &placement)
}

/// `[m_i ‖ m_tc ‖ m_te ‖ m_oc ‖ m_oe]` for every node, globals included.
pub fn global_concat(tape: &mut Tape, states: Var, globals: &GlobalIndex) -> Result<Var> {
    let n = tape.value(states).rows();
    let mut parts = vec![states];
    for g in globals.as_array() {
        parts.push(tape.gather_rows(states, &vec![g; n])?);
    }
    tape.concat_cols(&parts)
}

/// One multi-head graph attention layer over a fully connected graph.
///
/// `log_factors` holds `ln(edge_factor(i, j))`; adding it to the logits
/// before the row softmax multiplies each exponential by its edge factor.
/// Hidden layers concatenate head outputs, the final layer averages them.
#[allow(clippy::too_many_arguments)]
pub fn gat_layer(
    tape: &mut Tape,
    store: &ParamStore,
    states: Var,
    log_factors: Var,
    heads: &[HeadParams],
    layer: usize,
    slope: f64,
    is_final: bool,
    mut trace: Option<&mut Vec<AttentionMap>>,
) -> Result<Var> {
    let mut outputs = Vec::with_capacity(heads.len());
    for (h, head) in heads.iter().enumerate() {
        let attn_id = head.attn.ok_or_else(|| {
            Error::Config(format!(
                "attention head {layer}/{h} has no attention vector"
            ))
        })?;
        let theta = tape.param(store, head.theta);
        let z = tape.matmul(states, theta)?;
        let width = tape.value(z).cols();
        let a = tape.param(store, attn_id);
        // aᵀ·LeakyReLU([z_i ‖ z_j]) = a_srcᵀ·LeakyReLU(z_i) + a_dstᵀ·LeakyReLU(z_j)
        let a_src = tape.gather_rows(a, &(0..width).collect::<Vec<_>>())?;
        let a_dst = tape.gather_rows(a, &(width..2 * width).collect::<Vec<_>>())?;
        let lz = tape.leaky_relu(z, slope);
        let src = tape.matmul(lz, a_src)?;
        let dst = tape.matmul(lz, a_dst)?;
        let logits = tape.outer_sum(src, dst)?;
        if !tape.value(logits).is_finite() {
            return Err(Error::NonFinite(format!(
                "attention logits at layer {layer}, head {h}"
            )));
        }
        let biased = tape.add(logits, log_factors)?;
        let gamma = tape.row_softmax(biased);
        if let Some(t) = trace.as_deref_mut() {
            t.push(AttentionMap {
                layer,
                head: h,
                weights: tape.value(gamma).clone(),
            });
        }
        outputs.push(tape.matmul(gamma, z)?);
    }
    combine_heads(tape, &outputs, is_final)
}

/// Graph convolution with fixed coefficients `factor(i,j) / Σ_k factor(i,k)`.
pub fn gcn_layer(
    tape: &mut Tape,
    store: &ParamStore,
    states: Var,
    propagation: Var,
    heads: &[HeadParams],
    is_final: bool,
) -> Result<Var> {
    let mut outputs = Vec::with_capacity(heads.len());
    for head in heads {
        let theta = tape.param(store, head.theta);
        let z = tape.matmul(states, theta)?;
        outputs.push(tape.matmul(propagation, z)?);
    }
    combine_heads(tape, &outputs, is_final)
}

fn combine_heads(tape: &mut Tape, outputs: &[Var], is_final: bool) -> Result<Var> {
    if !is_final {
        return tape.concat_cols(outputs);
    }
    let mut acc = outputs[0];
    for &o in &outputs[1..] {
        acc = tape.add(acc, o)?;
    }
    Ok(tape.scale(acc, 1.0 / outputs.len() as f64))
}

/// Row-normalised edge factors.
pub fn propagation_matrix(factors: &Tensor) -> Tensor {
    let n = factors.cols();
    let mut out = factors.values().to_vec();
    for row in out.chunks_mut(n) {
        let total: f64 = row.iter().sum();
        row.iter_mut().for_each(|v| *v /= total);
    }
    Tensor::new(factors.shape().to_vec(), out).expect("same shape")
}
