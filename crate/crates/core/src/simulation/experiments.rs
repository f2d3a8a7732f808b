//! Experiment protocols built on [`run_stream`]: routing efficiency against
//! Random Delegation, adaptation to an impaired agent, specialization on a
//! domain stream, memory-seeded cold start, and regret under judge noise.
//!
//! Replications are independent and run in parallel; results are collected
//! in seed order so every report is deterministic.

use rayon::prelude::*;

use crate::beliefs::{AgentId, BeliefTable};
use crate::controller::{ControllerConfig, EpisodeResult};
use crate::error::{Error, Result};
use crate::events::{EpisodeStatus, Event};
use crate::judge::JudgeChannel;
use crate::rng::RngStream;

use super::regret::{run_bandit_regret, RegretReport};
use super::world::{generate_tasks, SimAgentSpec, SimTaskSpec, TaskStreamConfig};
use super::{run_stream, Policy, StreamState};

/// Shared inputs of every controller-level experiment.
#[derive(Clone, Copy, Debug)]
pub struct Setup<'a> {
    pub roster: &'a [SimAgentSpec],
    pub tasks: &'a TaskStreamConfig,
    pub controller: &'a ControllerConfig,
    pub seeds: usize,
    pub seed: u64,
}

impl Setup<'_> {
    fn root(&self, s: usize) -> RngStream {
        RngStream::new(self.seed, 0).substream(s as u64)
    }

    /// Replication `s` gets its own task stream.
    fn tasks_for(&self, s: usize) -> Result<Vec<SimTaskSpec>> {
        let cfg = TaskStreamConfig {
            seed: self.tasks.seed.wrapping_add(s as u64),
            ..self.tasks.clone()
        };
        generate_tasks(&cfg)
    }

    fn count(&self) -> u64 {
        self.tasks.count
    }

    fn agent(&self, id: &AgentId) -> Result<&SimAgentSpec> {
        self.roster
            .iter()
            .find(|a| &a.id == id)
            .ok_or_else(|| Error::config("analysis", format!("agent `{id}` is not in the roster")))
    }
}

/// Per-episode routing metrics.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeMetrics {
    pub task: u64,
    pub status: EpisodeStatus,
    pub agent_calls: u32,
    /// Completed rounds routed to agents whose competence on this task is
    /// below the cutoff.
    pub low_calls: u32,
    pub first_success_round: Option<u32>,
    pub cost: f64,
    /// Combined score of the returned answer, 0 when none.
    pub quality: f64,
}

pub fn episode_metrics(
    res: &EpisodeResult,
    roster: &[SimAgentSpec],
    task: &SimTaskSpec,
    low_cutoff: f64,
) -> EpisodeMetrics {
    let theta = |id: &AgentId| {
        roster
            .iter()
            .find(|a| &a.id == id)
            .map_or(1.0, |a| a.effective_theta(task))
    };
    EpisodeMetrics {
        task: task.index,
        status: res.status,
        agent_calls: res.agent_calls,
        low_calls: res
            .selections
            .iter()
            .filter(|s| theta(&s.agent) < low_cutoff)
            .count() as u32,
        first_success_round: res
            .selections
            .iter()
            .find(|s| s.verdict.y())
            .map(|s| s.round),
        cost: res.cost_spent,
        quality: res
            .answer
            .as_ref()
            .and_then(|a| a.score().ok())
            .unwrap_or(0.0),
    }
}

#[derive(Clone, Debug)]
pub struct EfficiencyReport {
    /// `[seed][task]`.
    pub thompson: Vec<Vec<EpisodeMetrics>>,
    pub random: Vec<Vec<EpisodeMetrics>>,
    pub events: Vec<Event>,
    pub final_beliefs: BeliefTable,
}

impl EfficiencyReport {
    /// Per-episode `random - thompson` differences of `f`, flattened over
    /// seeds and tasks.
    pub fn paired_diffs(&self, f: impl Fn(&EpisodeMetrics) -> f64) -> Vec<f64> {
        self.thompson
            .iter()
            .flatten()
            .zip(self.random.iter().flatten())
            .map(|(t, r)| f(r) - f(t))
            .collect()
    }
}

/// Thompson routing and Random Delegation on identical worlds: the same task
/// streams and per-agent outcome streams, paired episode by episode.
pub fn efficiency(setup: &Setup<'_>, low_cutoff: f64) -> Result<EfficiencyReport> {
    let n = setup.count();
    let per_seed = (0..setup.seeds)
        .into_par_iter()
        .map(|s| {
            let tasks = setup.tasks_for(s)?;
            let root = setup.root(s);
            let mut out = Vec::with_capacity(2);
            for (k, policy) in [Policy::Thompson, Policy::Random].into_iter().enumerate() {
                let mut state = StreamState::default();
                let base = ((k * setup.seeds + s) as u64) * n;
                let run = run_stream(
                    setup.roster,
                    &tasks,
                    setup.controller,
                    policy,
                    &root,
                    base,
                    &mut state,
                )?;
                let metrics = run
                    .episodes
                    .iter()
                    .zip(&tasks)
                    .map(|(e, t)| episode_metrics(e, setup.roster, t, low_cutoff))
                    .collect::<Vec<_>>();
                out.push((metrics, run.events, state.beliefs));
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut report = EfficiencyReport {
        thompson: Vec::new(),
        random: Vec::new(),
        events: Vec::new(),
        final_beliefs: BeliefTable::new(),
    };
    let mut random_events = Vec::new();
    for (s, mut pair) in per_seed.into_iter().enumerate() {
        let (rm, re, _) = pair.pop().expect("random run");
        let (tm, te, tb) = pair.pop().expect("thompson run");
        if s == 0 {
            report.final_beliefs = tb;
        }
        report.thompson.push(tm);
        report.random.push(rm);
        report.events.extend(te);
        random_events.extend(re);
    }
    report.events.extend(random_events);
    Ok(report)
}

#[derive(Clone, Debug)]
pub struct SingleEpisodeReport {
    /// One Thompson-routed episode per seed, on the first task of that seed's
    /// stream.
    pub episodes: Vec<EpisodeResult>,
    pub events: Vec<Event>,
    pub final_beliefs: BeliefTable,
}

pub fn single_episode(setup: &Setup<'_>) -> Result<SingleEpisodeReport> {
    let runs = (0..setup.seeds)
        .into_par_iter()
        .map(|s| {
            let tasks = setup.tasks_for(s)?;
            let first = tasks
                .first()
                .ok_or_else(|| Error::config("task_stream.count", "must be at least 1"))?;
            let mut state = StreamState::default();
            let mut run = run_stream(
                setup.roster,
                std::slice::from_ref(first),
                setup.controller,
                Policy::Thompson,
                &setup.root(s),
                s as u64,
                &mut state,
            )?;
            Ok((run.episodes.remove(0), run.events, state.beliefs))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut report = SingleEpisodeReport {
        episodes: Vec::new(),
        events: Vec::new(),
        final_beliefs: BeliefTable::new(),
    };
    for (s, (ep, events, beliefs)) in runs.into_iter().enumerate() {
        if s == 0 {
            report.final_beliefs = beliefs;
        }
        report.episodes.push(ep);
        report.events.extend(events);
    }
    Ok(report)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImpairmentSeed {
    /// Impaired agent's posterior mean at the end of each task.
    pub belief_trajectory: Vec<f64>,
    /// Completed rounds routed to the impaired agent before / after the flip.
    pub phase_selections: [u32; 2],
    /// Mean answer quality before / after the flip.
    pub phase_quality: [f64; 2],
    /// Post-flip selections of the impaired agent until its posterior mean
    /// first falls below 0.5; `None` if it never does.
    pub selections_to_drop: Option<u32>,
}

#[derive(Clone, Debug)]
pub struct ImpairmentReport {
    pub impaired: AgentId,
    pub flip_at: u64,
    pub seeds: Vec<ImpairmentSeed>,
    pub events: Vec<Event>,
    pub final_beliefs: BeliefTable,
}

/// Thompson routing over a stream where `impaired`'s competence schedule
/// changes at its first switch point.
pub fn impairment(setup: &Setup<'_>, impaired: &AgentId) -> Result<ImpairmentReport> {
    let spec = setup.agent(impaired)?;
    let flip_at = spec.first_switch().ok_or_else(|| {
        Error::config(
            "analysis.impaired",
            format!("agent `{impaired}` has a constant schedule"),
        )
    })?;
    if flip_at >= setup.count() {
        return Err(Error::config(
            "task_stream.count",
            "stream ends before the impairment switch",
        ));
    }
    let n = setup.count();
    let runs = (0..setup.seeds)
        .into_par_iter()
        .map(|s| {
            let tasks = setup.tasks_for(s)?;
            let mut state = StreamState::default();
            let base = s as u64 * n;
            let run = run_stream(
                setup.roster,
                &tasks,
                setup.controller,
                Policy::Thompson,
                &setup.root(s),
                base,
                &mut state,
            )?;

            let mut phase_selections = [0u32; 2];
            let mut quality = [Vec::new(), Vec::new()];
            let mut belief_trajectory = Vec::with_capacity(tasks.len());
            for (ep, t) in run.episodes.iter().zip(&tasks) {
                let phase = usize::from(t.index >= flip_at);
                phase_selections[phase] += ep
                    .selections
                    .iter()
                    .filter(|x| &x.agent == impaired)
                    .count() as u32;
                quality[phase].push(episode_metrics(ep, setup.roster, t, 0.0).quality);
                belief_trajectory.push(ep.final_beliefs[impaired].posterior_mean());
            }
            let mut count = 0u32;
            let mut selections_to_drop = None;
            for e in &run.events {
                if let Event::Round {
                    episode,
                    agent,
                    alpha_after,
                    beta_after,
                    ..
                } = e
                {
                    if *episode >= base + flip_at && agent == impaired {
                        count += 1;
                        if alpha_after / (alpha_after + beta_after) < 0.5 {
                            selections_to_drop = Some(count);
                            break;
                        }
                    }
                }
            }
            let seed = ImpairmentSeed {
                belief_trajectory,
                phase_selections,
                phase_quality: [
                    super::stats::mean(&quality[0]),
                    super::stats::mean(&quality[1]),
                ],
                selections_to_drop,
            };
            Ok((seed, run.events, state.beliefs))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut report = ImpairmentReport {
        impaired: impaired.clone(),
        flip_at,
        seeds: Vec::new(),
        events: Vec::new(),
        final_beliefs: BeliefTable::new(),
    };
    for (s, (seed, events, beliefs)) in runs.into_iter().enumerate() {
        if s == 0 {
            report.final_beliefs = beliefs;
        }
        report.seeds.push(seed);
        report.events.extend(events);
    }
    Ok(report)
}

#[derive(Clone, Debug)]
pub struct SpecializationReport {
    pub expert: AgentId,
    /// `[seed][task]`: round at which the expert was first selected, or
    /// `rounds_used + 1` when the episode ended without selecting it.
    pub rounds_to_expert: Vec<Vec<f64>>,
    pub events: Vec<Event>,
    pub final_beliefs: BeliefTable,
}

impl SpecializationReport {
    /// Per-seed means over the first and second halves of the stream.
    pub fn half_means(&self) -> (Vec<f64>, Vec<f64>) {
        self.rounds_to_expert
            .iter()
            .map(|series| {
                let mid = series.len() / 2;
                (
                    super::stats::mean(&series[..mid]),
                    super::stats::mean(&series[mid..]),
                )
            })
            .unzip()
    }
}

pub fn rounds_to_expert(ep: &EpisodeResult, expert: &AgentId) -> f64 {
    ep.selections
        .iter()
        .find(|s| &s.agent == expert)
        .map_or(f64::from(ep.rounds_used + 1), |s| f64::from(s.round))
}

pub fn specialization(setup: &Setup<'_>, expert: &AgentId) -> Result<SpecializationReport> {
    setup.agent(expert)?;
    let n = setup.count();
    let runs = (0..setup.seeds)
        .into_par_iter()
        .map(|s| {
            let tasks = setup.tasks_for(s)?;
            let mut state = StreamState::default();
            let run = run_stream(
                setup.roster,
                &tasks,
                setup.controller,
                Policy::Thompson,
                &setup.root(s),
                s as u64 * n,
                &mut state,
            )?;
            let series = run
                .episodes
                .iter()
                .map(|e| rounds_to_expert(e, expert))
                .collect::<Vec<_>>();
            Ok((series, run.events, state.beliefs))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut report = SpecializationReport {
        expert: expert.clone(),
        rounds_to_expert: Vec::new(),
        events: Vec::new(),
        final_beliefs: BeliefTable::new(),
    };
    for (s, (series, events, beliefs)) in runs.into_iter().enumerate() {
        if s == 0 {
            report.final_beliefs = beliefs;
        }
        report.rounds_to_expert.push(series);
        report.events.extend(events);
    }
    Ok(report)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MemoryPriorSeed {
    pub memory_first_pick_reliable: bool,
    pub uniform_first_pick_reliable: bool,
}

#[derive(Clone, Debug)]
pub struct MemoryPriorReport {
    pub reliable: AgentId,
    pub seeds: Vec<MemoryPriorSeed>,
    pub events: Vec<Event>,
    pub final_beliefs: BeliefTable,
}

/// Phase 1 routes the first `count - 1` tasks of the stream with memory
/// priors, building memory. Phase 2 runs the final task twice from the same
/// random streams: once with priors seeded from that memory, once from
/// uninformative priors, recording whether the first pick is `reliable`.
pub fn memory_priors(setup: &Setup<'_>, reliable: &AgentId) -> Result<MemoryPriorReport> {
    setup.agent(reliable)?;
    let n = setup.count();
    if n < 2 {
        return Err(Error::config(
            "task_stream.count",
            "memory experiment needs at least 2 tasks",
        ));
    }
    let with_memory = ControllerConfig {
        prior: crate::memory::PriorConfig {
            use_memory: true,
            ..setup.controller.prior.clone()
        },
        ..setup.controller.clone()
    };
    let without_memory = ControllerConfig {
        prior: crate::memory::PriorConfig {
            use_memory: false,
            ..setup.controller.prior.clone()
        },
        ..setup.controller.clone()
    };
    let runs = (0..setup.seeds)
        .into_par_iter()
        .map(|s| {
            let tasks = setup.tasks_for(s)?;
            let (history, probe) = tasks.split_at(tasks.len() - 1);
            let root = setup.root(s);
            let base = s as u64 * (n + 1);
            let mut state = StreamState::default();
            let phase1 = run_stream(
                setup.roster,
                history,
                &with_memory,
                Policy::Thompson,
                &root,
                base,
                &mut state,
            )?;

            let mut fresh = StreamState {
                beliefs: BeliefTable::new(),
                memory: state.memory.clone(),
            };
            let seeded = run_stream(
                setup.roster,
                probe,
                &with_memory,
                Policy::Thompson,
                &root,
                base,
                &mut fresh,
            )?;
            let mut blank = StreamState::default();
            let uniform = run_stream(
                setup.roster,
                probe,
                &without_memory,
                Policy::Thompson,
                &root,
                base + 1,
                &mut blank,
            )?;

            let first_is = |r: &super::StreamRun| {
                r.episodes[0]
                    .selections
                    .first()
                    .is_some_and(|x| &x.agent == reliable)
            };
            let seed = MemoryPriorSeed {
                memory_first_pick_reliable: first_is(&seeded),
                uniform_first_pick_reliable: first_is(&uniform),
            };
            let mut events = phase1.events;
            events.extend(seeded.events);
            events.extend(uniform.events);
            Ok((seed, events, fresh.beliefs))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut report = MemoryPriorReport {
        reliable: reliable.clone(),
        seeds: Vec::new(),
        events: Vec::new(),
        final_beliefs: BeliefTable::new(),
    };
    for (s, (seed, events, beliefs)) in runs.into_iter().enumerate() {
        if s == 0 {
            report.final_beliefs = beliefs;
        }
        report.seeds.push(seed);
        report.events.extend(events);
    }
    Ok(report)
}

/// Regret of plain Thompson sampling for each judge channel, with arm
/// competences taken from the roster at task 0.
pub fn regret_sweep(
    roster: &[SimAgentSpec],
    channels: &[JudgeChannel],
    horizon: usize,
    seeds: usize,
    seed: u64,
) -> Result<Vec<(JudgeChannel, RegretReport)>> {
    let thetas: Vec<f64> = roster.iter().map(|a| a.theta_at(0)).collect();
    channels
        .iter()
        .enumerate()
        .map(|(k, ch)| {
            let root = RngStream::new(seed, 0).substream(k as u64);
            Ok((*ch, run_bandit_regret(&thetas, ch, horizon, seeds, &root)?))
        })
        .collect()
}
