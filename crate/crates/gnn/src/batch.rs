//! Disjoint union of rewired graphs, laid out for the network.

use jobshop_core::{NodeFeatures, RewiredGraph};

use crate::GnnError;

/// Version of the node-feature layout consumed by the network. Checkpoints
/// record it so that a stale model is rejected instead of misread.
pub const FEATURE_SCHEMA: u32 = 1;

/// Continuous features per node.
pub const FEATURE_WIDTH: usize = NodeFeatures::WIDTH;

#[derive(Debug, Clone, PartialEq)]
pub struct GraphSpan {
    pub node_start: usize,
    pub n_ops: usize,
    /// Absolute index of the global node.
    pub global: Option<usize>,
    pub logit_start: usize,
}

/// Edges are grouped by destination node (`dst_offsets`), keeping their
/// original order inside each group.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphBatch {
    pub n_nodes: usize,
    pub features: Vec<f64>,
    pub machine: Vec<usize>,
    pub edge_src: Vec<usize>,
    pub edge_ty: Vec<usize>,
    pub dst_offsets: Vec<usize>,
    pub graphs: Vec<GraphSpan>,
    /// Node of each logit (one logit per operation node).
    pub op_node: Vec<usize>,
    pub mask: Vec<bool>,
}

impl GraphBatch {
    pub fn new(graphs: &[&RewiredGraph]) -> Result<Self, GnnError> {
        let n_nodes: usize = graphs.iter().map(|g| g.n_nodes).sum();
        let n_edges: usize = graphs.iter().map(|g| g.edges.len()).sum();
        let mut features = vec![0.0; n_nodes * FEATURE_WIDTH];
        let mut machine = vec![0; n_nodes];
        let mut spans = Vec::with_capacity(graphs.len());
        let mut op_node = Vec::new();
        let mut mask = Vec::new();
        let mut dst = Vec::with_capacity(n_edges);
        let mut src = Vec::with_capacity(n_edges);
        let mut ty = Vec::with_capacity(n_edges);
        let mut node_start = 0;
        for (gi, g) in graphs.iter().enumerate() {
            if g.n_ops == 0 || g.n_nodes < g.n_ops || g.n_nodes > g.n_ops + 1 {
                return Err(GnnError::BadGraph(format!(
                    "graph {gi}: {} nodes for {} operations",
                    g.n_nodes, g.n_ops
                )));
            }
            if g.features.len() != g.n_ops || g.mask.len() != g.n_ops {
                return Err(GnnError::BadGraph(format!(
                    "graph {gi}: features/mask must have one entry per operation"
                )));
            }
            for (k, f) in g.features.iter().enumerate() {
                let row = &mut features[(node_start + k) * FEATURE_WIDTH..][..FEATURE_WIDTH];
                row.copy_from_slice(&f.continuous());
                if row.iter().any(|v| !v.is_finite()) {
                    return Err(GnnError::BadGraph(format!("graph {gi}: non-finite feature at node {k}")));
                }
                machine[node_start + k] = f.machine_id;
            }
            for e in &g.edges {
                if e.src >= g.n_nodes || e.dst >= g.n_nodes {
                    return Err(GnnError::BadGraph(format!(
                        "graph {gi}: edge {} -> {} out of range",
                        e.src, e.dst
                    )));
                }
                src.push(node_start + e.src);
                dst.push(node_start + e.dst);
                ty.push(e.ty.index());
            }
            spans.push(GraphSpan {
                node_start,
                n_ops: g.n_ops,
                global: g.global_node().map(|k| node_start + k),
                logit_start: op_node.len(),
            });
            op_node.extend(node_start..node_start + g.n_ops);
            mask.extend_from_slice(&g.mask);
            node_start += g.n_nodes;
        }

        let mut dst_offsets = vec![0; n_nodes + 1];
        for &d in &dst {
            dst_offsets[d + 1] += 1;
        }
        for i in 0..n_nodes {
            dst_offsets[i + 1] += dst_offsets[i];
        }
        let mut fill = dst_offsets.clone();
        let mut edge_src = vec![0; dst.len()];
        let mut edge_ty = vec![0; dst.len()];
        for e in 0..dst.len() {
            let slot = fill[dst[e]];
            fill[dst[e]] += 1;
            edge_src[slot] = src[e];
            edge_ty[slot] = ty[e];
        }

        Ok(Self {
            n_nodes,
            features,
            machine,
            edge_src,
            edge_ty,
            dst_offsets,
            graphs: spans,
            op_node,
            mask,
        })
    }

    pub fn n_graphs(&self) -> usize {
        self.graphs.len()
    }

    pub fn n_edges(&self) -> usize {
        self.edge_src.len()
    }

    pub fn n_logits(&self) -> usize {
        self.op_node.len()
    }

    /// Logit index range of graph `g`.
    pub fn logit_range(&self, g: usize) -> std::ops::Range<usize> {
        let s = &self.graphs[g];
        s.logit_start..s.logit_start + s.n_ops
    }
}
