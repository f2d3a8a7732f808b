//! Synthetic world: Bernoulli agents, task streams, the uniform-random
//! delegation baseline, regret accounting and the experiment protocols.

pub mod experiments;
pub mod regret;
pub mod stats;
pub mod world;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::beliefs::{AgentId, BeliefTable};
use crate::controller::{
    Agent, AppendCritique, ControllerConfig, EpisodeContext, EpisodeResult, EpisodeRunner,
    TaskEnvelope, STREAM_JUDGE, STREAM_SELECT,
};
use crate::delegation::{
    argmax_with_tiebreak, release_if_all_cooling, ForcedRelease, SelectionOutcome, Selector,
    ThompsonSelector,
};
use crate::error::Result;
use crate::events::{Event, EventSink};
use crate::judge::ChannelJudge;
use crate::memory::MemoryStore;
use crate::rng::{DrawSource, RngStream};

pub use regret::{run_bandit_regret, RegretLedger, RegretReport};
pub use world::{
    generate_tasks, simulate_agent_call, SimAgent, SimAgentSpec, SimTaskSpec, TaskStreamConfig,
};

/// Uniform choice among eligible agents. Shares the cooldown masking and
/// forced-release rules of Thompson selection but ignores beliefs: each
/// eligible agent gets an independent Uniform(0, 1) score.
#[derive(Clone, Copy, Debug, Default)]
pub struct UniformSelector {
    pub forced_release: ForcedRelease,
}

impl Selector for UniformSelector {
    fn select(
        &mut self,
        beliefs: &mut BeliefTable,
        draws: &mut dyn DrawSource,
    ) -> Result<SelectionOutcome> {
        let forced = release_if_all_cooling(beliefs, self.forced_release)?;
        let sampled_values: BTreeMap<AgentId, f64> = beliefs
            .iter()
            .map(|(id, b)| {
                (
                    id.clone(),
                    if b.cooldown == 0 {
                        draws.uniform()
                    } else {
                        f64::NEG_INFINITY
                    },
                )
            })
            .collect();
        // Posterior means only break exact ties of continuous draws.
        let chosen = argmax_with_tiebreak(beliefs, &sampled_values);
        Ok(SelectionOutcome {
            chosen,
            sampled_values,
            forced_exploration: forced,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    Thompson,
    Random,
}

impl Policy {
    pub fn name(self) -> &'static str {
        match self {
            Policy::Thompson => "thompson",
            Policy::Random => "random",
        }
    }
}

/// Runs one episode under `policy`, with selection and judge streams derived
/// from `rng` exactly as [`crate::controller::run_episode`] does.
#[allow(clippy::too_many_arguments)]
pub fn run_with_policy(
    policy: Policy,
    task: TaskEnvelope,
    roster: &mut [Box<dyn Agent + '_>],
    persistent: &mut BeliefTable,
    store: &mut MemoryStore,
    cfg: &ControllerConfig,
    rng: &RngStream,
    ctx: EpisodeContext,
    sink: &mut dyn EventSink,
) -> Result<EpisodeResult> {
    let mut thompson = ThompsonSelector {
        forced_release: cfg.forced_release,
    };
    let mut uniform = UniformSelector {
        forced_release: cfg.forced_release,
    };
    let selector: &mut dyn Selector = match policy {
        Policy::Thompson => &mut thompson,
        Policy::Random => &mut uniform,
    };
    let mut draws = rng.substream(STREAM_SELECT);
    let mut judge = ChannelJudge::new(
        cfg.channel,
        cfg.judge_threshold,
        cfg.ensemble,
        &rng.substream(STREAM_JUDGE),
    )?;
    EpisodeRunner {
        cfg,
        policy_name: policy.name(),
        selector,
        draws: &mut draws,
        judge: &mut judge,
        refiner: &AppendCritique,
        sink,
    }
    .run(task, roster, persistent, store, ctx)
}

/// The Random Delegation baseline: the full loop with uniform selection.
/// Beliefs are still updated and logged but never consulted for routing.
#[allow(clippy::too_many_arguments)]
pub fn run_random_baseline(
    task: TaskEnvelope,
    roster: &mut [Box<dyn Agent + '_>],
    persistent: &mut BeliefTable,
    store: &mut MemoryStore,
    cfg: &ControllerConfig,
    rng: &RngStream,
    ctx: EpisodeContext,
    sink: &mut dyn EventSink,
) -> Result<EpisodeResult> {
    run_with_policy(
        Policy::Random,
        task,
        roster,
        persistent,
        store,
        cfg,
        rng,
        ctx,
        sink,
    )
}

const STREAM_AGENT: u64 = 0xA6E47;

/// Learned state carried from task to task.
#[derive(Clone, Debug, Default)]
pub struct StreamState {
    pub beliefs: BeliefTable,
    pub memory: MemoryStore,
}

pub struct StreamRun {
    pub episodes: Vec<EpisodeResult>,
    pub events: Vec<Event>,
}

/// Feeds `tasks` through the controller one after another, carrying beliefs
/// and memory. Task `i` runs at time `i` with stream `root.substream(i)`;
/// agent `j`'s randomness for that task comes from a private substream, so
/// both policies face the same world draws.
pub fn run_stream(
    roster: &[SimAgentSpec],
    tasks: &[SimTaskSpec],
    cfg: &ControllerConfig,
    policy: Policy,
    root: &RngStream,
    episode_base: u64,
    state: &mut StreamState,
) -> Result<StreamRun> {
    let mut episodes = Vec::with_capacity(tasks.len());
    let mut events = Vec::new();
    for task in tasks {
        let ep_rng = root.substream(task.index);
        let mut agents: Vec<Box<dyn Agent>> = roster
            .iter()
            .enumerate()
            .map(|(j, spec)| {
                Box::new(SimAgent::new(
                    spec.clone(),
                    task.clone(),
                    ep_rng.substream2(STREAM_AGENT, j as u64),
                )) as Box<dyn Agent>
            })
            .collect();
        let envelope = TaskEnvelope::new(format!("task-{}", task.index), task.embedding.clone());
        let ctx = EpisodeContext {
            episode: episode_base + task.index,
            now: task.index as f64,
        };
        let result = run_with_policy(
            policy,
            envelope,
            &mut agents,
            &mut state.beliefs,
            &mut state.memory,
            cfg,
            &ep_rng,
            ctx,
            &mut events,
        )?;
        episodes.push(result);
    }
    Ok(StreamRun { episodes, events })
}
