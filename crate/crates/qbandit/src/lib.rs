//! Discrete-time queueing-bandit simulation and analysis.
//!
//! A bandit scheduler assigns servers to queues each slot and observes
//! service outcomes only on the links it schedules; a genie playing every
//! queue's best server runs on the same randomness. The crate estimates
//! the queue-regret series (mean bandit queue length minus genie queue
//! length) by coupled Monte Carlo, checks the pathwise structure those
//! estimates rely on, and evaluates the closed-form bound expressions for
//! overlay curves.
//!
//! Modules:
//! - [`instance`]: validated problem instances and the queue recursion
//! - [`matching`]: exploration matchings and Hamming projection
//! - [`policies`]: gated and plain Thompson/UCB schedulers
//! - [`sim`]: the coupled episode engine and regret estimator
//! - [`bounds`]: closed-form bound evaluation
//! - [`accept`]: the runnable acceptance checks
//! - [`report`]: CSV, config sidecar, and plot-script emission

pub mod accept;
pub mod bounds;
pub mod instance;
pub mod matching;
pub mod policies;
pub mod report;
pub mod sim;

pub use instance::{lindley_step, DerivedParams, InstanceError, ProblemInstance, TraceRecord};
pub use matching::{
    exploration_matchings, min_hamming_bruteforce, project_to_matching, Matching, MatchingError,
};
pub use policies::{
    explore_probability, policy_decide, policy_update, thompson_sample, ucb_index, CountStats,
    PolicyError, PolicyKind,
};
pub use sim::{
    estimate_regret, run_episode, sample_stationary_queue, CouplingMode, InitMode, RecordGrid,
    RegretSeries, SimConfig, SimError,
};
