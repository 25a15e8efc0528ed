use jobshop_core::RewireOptions;
use serde::{Deserialize, Serialize};

use crate::GnnError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    /// Elementwise sum of the mean and the max over operation nodes.
    MeanMax,
    /// Embedding of an extra node connected to every operation.
    LearnedNode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub hidden_dim: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub pooling: Pooling,
    pub residual: bool,
    /// Number of linear layers in the node embedder.
    pub embedder_depth: usize,
    /// Size of the machine-index embedding table.
    pub max_machines: usize,
    pub machine_dim: usize,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            hidden_dim: 64,
            n_layers: 10,
            n_heads: 4,
            pooling: Pooling::MeanMax,
            residual: true,
            embedder_depth: 2,
            max_machines: 64,
            machine_dim: 8,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<(), GnnError> {
        let positive = [
            ("hidden_dim", self.hidden_dim),
            ("n_layers", self.n_layers),
            ("n_heads", self.n_heads),
            ("embedder_depth", self.embedder_depth),
            ("max_machines", self.max_machines),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(GnnError::InvalidConfig(format!("{name} must be at least 1")));
            }
        }
        Ok(())
    }

    pub fn rewire_options(&self) -> RewireOptions {
        RewireOptions {
            global_node: self.pooling == Pooling::LearnedNode,
        }
    }

    /// Width of the concatenated per-layer node and graph embeddings read by
    /// the action head.
    pub fn action_input_width(&self) -> usize {
        2 * (self.n_layers + 1) * self.hidden_dim
    }
}
