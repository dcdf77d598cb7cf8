use std::collections::BTreeSet;
use std::io::{BufRead, Write};

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{DenseMatrix, ReprError, TextEncoder};
use crate::graph::{ConceptGraph, EdgeKind, NodeId, NodeKind};
use crate::util;

/// Symmetrically normalized adjacency `D^-1/2 (A + I) D^-1/2` over the
/// intent nodes, in ascending id order. Edges of the given kinds between
/// intents are treated as undirected and unweighted.
pub fn normalized_adjacency(
    graph: &ConceptGraph,
    kinds: &BTreeSet<EdgeKind>,
) -> Result<(DenseMatrix, Vec<NodeId>), ReprError> {
    let order = graph.ids_of_kind(NodeKind::Intent);
    if order.is_empty() {
        return Err(ReprError::NoIntents);
    }
    let index: std::collections::HashMap<NodeId, usize> =
        order.iter().enumerate().map(|(i, &id)| (id, i)).collect();
    let n = order.len();
    let mut a = Array2::<f64>::eye(n);
    for e in graph.edges() {
        if !kinds.contains(&e.kind) {
            continue;
        }
        if let (Some(&i), Some(&j)) = (index.get(&e.src), index.get(&e.dst)) {
            if i != j {
                a[[i, j]] = 1.0;
                a[[j, i]] = 1.0;
            }
        }
    }
    let deg: Vec<f64> = a.rows().into_iter().map(|r| r.sum()).collect();
    for i in 0..n {
        for j in 0..n {
            if a[[i, j]] != 0.0 {
                a[[i, j]] /= (deg[i] * deg[j]).sqrt();
            }
        }
    }
    Ok((DenseMatrix::from_array(a), order))
}

/// `H <- relu(A H W)` for every layer but the last, which stays linear.
pub fn gcn_forward(adj: &DenseMatrix, features: &DenseMatrix, weights: &[DenseMatrix]) -> Result<DenseMatrix, ReprError> {
    if adj.rows() != adj.cols() || adj.cols() != features.rows() {
        return Err(ReprError::Dimension {
            context: "adjacency vs features".into(),
            expected: adj.cols(),
            found: features.rows(),
        });
    }
    let mut h = features.as_array().clone();
    for (layer, w) in weights.iter().enumerate() {
        if h.ncols() != w.rows() {
            return Err(ReprError::Dimension {
                context: format!("GCN layer {layer}"),
                expected: h.ncols(),
                found: w.rows(),
            });
        }
        let mut next = adj.as_array().dot(&h).dot(w.as_array());
        if layer + 1 < weights.len() {
            next.mapv_inplace(|v| v.max(0.0));
        }
        h = next;
    }
    Ok(DenseMatrix::from_array(h))
}

/// Glorot-uniform weight stack for the given layer widths, e.g. `[64, 64, 64]`
/// gives two 64x64 layers.
pub fn glorot_weights(widths: &[usize], seed: u64) -> Vec<DenseMatrix> {
    let mut rng = util::rng(seed, 11);
    widths
        .windows(2)
        .map(|w| {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let mut m = Array2::zeros((fan_in, fan_out));
            m.iter_mut().for_each(|v| *v = rng.gen_range(-limit..limit));
            DenseMatrix::from_array(m)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GcnConfig {
    /// Hidden and output widths; the input width is the encoder dimension.
    pub layer_dims: Vec<usize>,
    pub seed: u64,
}

impl Default for GcnConfig {
    fn default() -> Self {
        GcnConfig {
            layer_dims: vec![64, 64],
            seed: 7,
        }
    }
}

/// One embedding row per intent node, in ascending node-id order.
#[derive(Debug, Clone, PartialEq)]
pub struct IntentEmbeddingTable {
    pub ids: Vec<NodeId>,
    pub labels: Vec<String>,
    pub vectors: DenseMatrix,
    pub layers: usize,
    pub graph_fingerprint: String,
}

impl IntentEmbeddingTable {
    pub fn dim(&self) -> usize {
        self.vectors.cols()
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn index_of_label(&self, label: &str) -> Option<usize> {
        let canonical = crate::graph::canonicalize(label);
        self.labels.iter().position(|l| *l == canonical)
    }

    pub fn vector(&self, label: &str) -> Option<Vec<f64>> {
        self.index_of_label(label).map(|i| self.vectors.row_vec(i))
    }
}

/// Encode every intent label, then propagate through the GCN over the
/// undirected union of IsA and Consequent intent edges.
pub fn build_intent_embeddings(
    graph: &ConceptGraph,
    encoder: &TextEncoder,
    config: &GcnConfig,
) -> Result<IntentEmbeddingTable, ReprError> {
    let kinds = BTreeSet::from([EdgeKind::IsA, EdgeKind::Consequent]);
    let (adj, order) = normalized_adjacency(graph, &kinds)?;
    let dim = encoder.dim();
    let mut feats = Array2::zeros((order.len(), dim));
    for (i, id) in order.iter().enumerate() {
        let v = encoder.encode(graph.label(*id));
        feats.row_mut(i).assign(&ndarray::ArrayView1::from(&v));
    }
    let mut widths = vec![dim];
    widths.extend(&config.layer_dims);
    let weights = glorot_weights(&widths, config.seed);
    let out = gcn_forward(&adj, &DenseMatrix::from_array(feats), &weights)?;
    if !out.is_finite() {
        return Err(ReprError::NonFinite("GCN output".into()));
    }
    Ok(IntentEmbeddingTable {
        labels: order.iter().map(|id| graph.label(*id).to_string()).collect(),
        ids: order,
        vectors: out,
        layers: weights.len(),
        graph_fingerprint: graph.fingerprint(),
    })
}

/// `dim=<d>` header, then `intent_id \t v1 \t ... \t vd` per row.
pub fn write_embedding_table<W: Write>(table: &IntentEmbeddingTable, mut out: W) -> Result<(), ReprError> {
    writeln!(out, "dim={}", table.dim())?;
    for (i, id) in table.ids.iter().enumerate() {
        let row = table.vectors.row(i);
        let vals: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(out, "{}\t{}", id.0, vals.join("\t"))?;
    }
    Ok(())
}

/// Read an exported table; labels are resolved against `graph`.
pub fn read_embedding_table<R: BufRead>(input: R, graph: &ConceptGraph) -> Result<IntentEmbeddingTable, ReprError> {
    let mut lines = input.lines().enumerate();
    let dim = match lines.next() {
        Some((_, line)) => {
            let line = line?;
            line.strip_prefix("dim=")
                .and_then(|d| d.trim().parse::<usize>().ok())
                .ok_or(ReprError::Parse {
                    line: 1,
                    message: "expected dim=<d> header".into(),
                })?
        }
        None => {
            return Err(ReprError::Parse {
                line: 1,
                message: "empty embedding file".into(),
            })
        }
    };
    let mut ids = Vec::new();
    let mut labels = Vec::new();
    let mut data = Vec::new();
    for (i, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |m: String| ReprError::Parse {
            line: i + 1,
            message: m,
        };
        let mut fields = line.split('\t');
        let id: u64 = fields
            .next()
            .and_then(|f| f.parse().ok())
            .ok_or_else(|| parse_err("bad intent id".into()))?;
        let id = NodeId(id);
        let node = graph
            .expect_kind(id, NodeKind::Intent)
            .map_err(|e| parse_err(e.to_string()))?;
        let vals: Vec<f64> = fields
            .map(|f| f.parse::<f64>().map_err(|e| parse_err(e.to_string())))
            .collect::<Result<_, _>>()?;
        if vals.len() != dim {
            return Err(parse_err(format!("expected {dim} values, found {}", vals.len())));
        }
        ids.push(id);
        labels.push(node.label.clone());
        data.extend(vals);
    }
    let n = ids.len();
    Ok(IntentEmbeddingTable {
        ids,
        labels,
        vectors: DenseMatrix::from_vec(n, dim, data)?,
        layers: 0,
        graph_fingerprint: graph.fingerprint(),
    })
}
