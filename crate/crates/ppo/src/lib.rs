//! Proximal policy optimization for the dispatch policy.
//!
//! Each iteration generates fresh instances, rolls the current policy out on
//! them with sampled actions, scores every finished schedule on one sampled
//! duration scenario and trains on the resulting terminal-reward episodes
//! with the clipped surrogate objective. A fixed validation set scored with
//! greedy actions picks the best checkpoint.

pub mod config;
pub mod optim;
pub mod rollout;
pub mod train;
pub mod update;

pub use config::{PpoConfig, ProblemConfig, TrainConfig, ValidationConfig};
pub use optim::Adam;
pub use rollout::{advantages, collect, EpisodeSpec, Estimates, Trajectory};
pub use train::{metrics_csv, train, IterationRecord, Timing, Trainer, ValidationSet};
pub use update::{build_samples, update, Sample, UpdateStats};

#[derive(Debug, thiserror::Error)]
pub enum PpoError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error(transparent)]
    Network(#[from] jobshop_gnn::GnnError),
    #[error(transparent)]
    Instance(#[from] jobshop_core::InstanceError),
    #[error("cannot resume: {0}")]
    Resume(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}
