//! Fully connected heterogeneous graph over one claim–evidence record.
//!
//! Node order is fixed: claim text, evidence text, text entities, key
//! phrases, claim image, evidence image, visual objects. Every pair of
//! nodes is connected and weighted by the cosine similarity of their raw
//! embeddings.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::ingest::{KnowledgeItem, KnowledgeRecord};
use crate::numerics::{cosine_similarity, Tensor};

/// Floor of [`edge_transform`], keeping every pair connected.
pub const EDGE_FLOOR: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NodeKind {
    GlobalTextClaim,
    GlobalTextEvidence,
    TextEntity,
    KeyPhrase,
    GlobalImageClaim,
    GlobalImageEvidence,
    VisualObject,
}

impl NodeKind {
    pub fn is_global(self) -> bool {
        matches!(
            self,
            NodeKind::GlobalTextClaim
                | NodeKind::GlobalTextEvidence
                | NodeKind::GlobalImageClaim
                | NodeKind::GlobalImageEvidence
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GraphNode {
    pub kind: NodeKind,
    pub embedding: Vec<f64>,
}

/// Positions of the four global nodes: claim text, evidence text, claim image, evidence image.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GlobalIndex {
    pub text_claim: usize,
    pub text_evidence: usize,
    pub image_claim: usize,
    pub image_evidence: usize,
}

impl GlobalIndex {
    pub fn as_array(&self) -> [usize; 4] {
        [
            self.text_claim,
            self.text_evidence,
            self.image_claim,
            self.image_evidence,
        ]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeteroGraph {
    pub nodes: Vec<GraphNode>,
    /// Symmetric `|V|×|V|` cosine similarities with unit diagonal.
    pub edge_weights: Tensor,
    pub global_index: GlobalIndex,
}

/// Maps a cosine weight in `[-1, 1]` to a positive attention factor in `(0, 1]`.
pub fn edge_transform(w: f64) -> f64 {
    ((1.0 + w) / 2.0).max(EDGE_FLOOR)
}

fn pair_weight(u: &[f64], v: &[f64]) -> Result<f64> {
    let n = u.len().min(v.len());
    cosine_similarity(&u[..n], &v[..n])
}

fn from_nodes(nodes: Vec<GraphNode>) -> Result<HeteroGraph> {
    let n = nodes.len();
    let mut w = vec![0.0; n * n];
    for i in 0..n {
        w[i * n + i] = 1.0;
        for j in i + 1..n {
            let c = pair_weight(&nodes[i].embedding, &nodes[j].embedding)?;
            w[i * n + j] = c;
            w[j * n + i] = c;
        }
    }
    let find = |kind: NodeKind| {
        nodes
            .iter()
            .position(|nd| nd.kind == kind)
            .expect("global node")
    };
    let global_index = GlobalIndex {
        text_claim: find(NodeKind::GlobalTextClaim),
        text_evidence: find(NodeKind::GlobalTextEvidence),
        image_claim: find(NodeKind::GlobalImageClaim),
        image_evidence: find(NodeKind::GlobalImageEvidence),
    };
    Ok(HeteroGraph {
        edge_weights: Tensor::matrix(n, n, w)?,
        nodes,
        global_index,
    })
}

/// Builds the graph for a record that has already been filtered and deduplicated.
pub fn build_graph(record: &KnowledgeRecord) -> Result<HeteroGraph> {
    let node = |kind, emb: &Vec<f64>| GraphNode {
        kind,
        embedding: emb.clone(),
    };
    let items = |kind, list: &[KnowledgeItem]| {
        list.iter()
            .map(move |it| GraphNode {
                kind,
                embedding: it.embedding.clone(),
            })
            .collect::<Vec<_>>()
    };
    let mut nodes = Vec::with_capacity(record.knowledge_len() + 4);
    nodes.push(node(NodeKind::GlobalTextClaim, &record.claim_text_emb));
    nodes.push(node(
        NodeKind::GlobalTextEvidence,
        &record.evidence_text_emb,
    ));
    nodes.extend(items(NodeKind::TextEntity, &record.text_entities));
    nodes.extend(items(NodeKind::KeyPhrase, &record.key_phrases));
    nodes.push(node(NodeKind::GlobalImageClaim, &record.claim_image_emb));
    nodes.push(node(
        NodeKind::GlobalImageEvidence,
        &record.evidence_image_emb,
    ));
    nodes.extend(items(NodeKind::VisualObject, &record.visual_objects));
    from_nodes(nodes)
}

impl HeteroGraph {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn count(&self, kind: NodeKind) -> usize {
        self.nodes.iter().filter(|n| n.kind == kind).count()
    }

    /// Edge weights passed through [`edge_transform`].
    pub fn edge_factors(&self) -> Tensor {
        self.edge_weights.map(edge_transform)
    }

    /// Subgraph of the four global nodes, in canonical order.
    pub fn globals_only(&self) -> HeteroGraph {
        let keep: Vec<usize> = (0..self.len())
            .filter(|&i| self.nodes[i].kind.is_global())
            .collect();
        let n = self.len();
        let mut w = Vec::with_capacity(keep.len() * keep.len());
        for &i in &keep {
            for &j in &keep {
                w.push(self.edge_weights.values()[i * n + j]);
            }
        }
        let nodes: Vec<GraphNode> = keep.iter().map(|&i| self.nodes[i].clone()).collect();
        let pos = |kind| {
            nodes
                .iter()
                .position(|nd: &GraphNode| nd.kind == kind)
                .unwrap()
        };
        HeteroGraph {
            global_index: GlobalIndex {
                text_claim: pos(NodeKind::GlobalTextClaim),
                text_evidence: pos(NodeKind::GlobalTextEvidence),
                image_claim: pos(NodeKind::GlobalImageClaim),
                image_evidence: pos(NodeKind::GlobalImageEvidence),
            },
            edge_weights: Tensor::matrix(keep.len(), keep.len(), w).expect("square"),
            nodes,
        }
    }

    /// Debug dump: `{nodes: [{kind, dim}], edge_weights: [[...]]}`.
    pub fn to_debug_json(&self) -> serde_json::Value {
        let n = self.len();
        serde_json::json!({
            "nodes": self.nodes.iter().map(|nd| serde_json::json!({
                "kind": nd.kind,
                "dim": nd.embedding.len(),
            })).collect::<Vec<_>>(),
            "edge_weights": (0..n).map(|i| self.edge_weights.row(i).to_vec()).collect::<Vec<_>>(),
        })
    }
}
