//! Actor-critic graph network over rewired scheduling states.
//!
//! Node embeddings come from an MLP over the operation features and a learned
//! machine embedding. Each message-passing layer runs multi-head attention in
//! which both the score and the message depend on an edge-type embedding,
//! reduces the concatenated heads back to the hidden width with a small
//! feed-forward block, and adds a residual. Every layer's embeddings (the
//! input embedding included) feed the action head; the pooled graph summaries
//! feed the value head.
//!
//! Gradients are written by hand and checked against finite differences in
//! double precision; training runs in single precision.

pub mod batch;
pub mod config;
pub mod net;
pub mod params;
pub mod policy;
pub mod scalar;

pub use batch::{GraphBatch, FEATURE_SCHEMA};
pub use config::{NetworkConfig, Pooling};
pub use net::{backward, forward, Forward};
pub use params::{Params, Tensor};
pub use policy::{
    entropy, entropy_grad, log_prob_grad, masked_log_softmax, select, ActMode, Action, Policy,
    PolicyOutput,
};
pub use scalar::Scalar;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GnnError {
    #[error("invalid network config: {0}")]
    InvalidConfig(String),
    #[error("non-finite activation in layer {layer}")]
    NonFinite { layer: usize },
    #[error("machine index {machine} exceeds the embedding table ({max} machines); raise max_machines")]
    MachineOutOfRange { machine: usize, max: usize },
    #[error("graph {graph} has no legal action")]
    NoLegalAction { graph: usize },
    #[error("malformed graph: {0}")]
    BadGraph(String),
    #[error("checkpoint line {line}: {message}")]
    Checkpoint { line: usize, message: String },
    #[error("checkpoint uses feature schema {found}, this build expects {expected}")]
    SchemaMismatch { found: u32, expected: u32 },
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for GnnError {
    fn from(e: std::io::Error) -> Self {
        GnnError::Io(e.to_string())
    }
}
