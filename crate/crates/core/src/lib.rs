//! Training-free routing of tasks across a pool of heterogeneous agents.
//!
//! Each agent's competence is tracked as a Beta posterior. A controller picks
//! agents by Thompson sampling with cooldown masking, judges each attempt
//! through a programmatic check or a noisy judge channel, updates beliefs,
//! refines the task on failure and returns the best-evidenced candidate.
//! Past outcomes stored with task embeddings can seed the priors of new
//! tasks. The [`simulation`] module provides a synthetic world of Bernoulli
//! agents for experiments, and [`experiment`] drives them from config files.

pub mod aggregation;
pub mod beliefs;
pub mod controller;
pub mod delegation;
pub mod error;
pub mod events;
pub mod experiment;
pub mod judge;
pub mod memory;
pub mod rng;
pub mod simulation;

pub use aggregation::{
    aggregate_select, fuse_structured, AtomicValue, Candidate, StructuredCandidate,
};
pub use beliefs::{AgentId, BeliefState, BeliefTable};
pub use controller::{
    run_episode, Agent, AgentFault, AgentOutput, ControllerConfig, EpisodeContext, EpisodeResult,
    EpisodeRunner, TaskEnvelope,
};
pub use delegation::{
    apply_cooldown, select_agent, ForcedRelease, SelectionOutcome, Selector, ThompsonSelector,
};
pub use error::{Error, Result};
pub use events::{replay, EpisodeStatus, Event, EventSink, ReplayReport};
pub use experiment::{ExperimentConfig, ExperimentKind, ExperimentOutput};
pub use judge::{judge, ChannelJudge, Judge, JudgeChannel, Outcome, Verdict};
pub use memory::{init_priors, MemoryRecord, MemoryStore, PriorConfig};
pub use rng::{DrawSource, RngStream};
