//! Job-shop scheduling with uncertain operation durations.
//!
//! This crate holds everything that does not involve learning:
//!
//! * [`instance`]: instances with deterministic or triangular durations,
//!   Taillard-style generation, scenario sampling and the text file formats.
//! * [`env`]: the dispatch decision process (partial selections stored as
//!   per-machine chains), the schedule generation scheme and terminal costs.
//! * [`rewire`]: the message-passing graph and node features consumed by the
//!   policy network.
//! * [`rules`] and [`exact`]: priority dispatching rules and a branch and
//!   bound oracle for small instances.

pub mod env;
pub mod exact;
pub mod format;
pub mod instance;
pub mod problem;
pub mod rewire;
pub mod rules;
pub mod seed;

pub use env::{sgs_starts, terminal_cost, validate_schedule, EnvError, Schedule, State, Violation};
pub use instance::{
    generate_taillard, sample_scenario, stochasticize, DurationKind, DurationModel, Instance,
    InstanceError, OpId, Operation, Scenario,
};
pub use problem::{parse_sizes, Family, Size};
pub use rewire::{EdgeType, NodeFeatures, RewireOptions, RewiredGraph};
pub use rules::Rule;
