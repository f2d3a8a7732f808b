//! The recursive delegate, judge, update loop.
//!
//! One call to [`EpisodeRunner::run`] handles one task: seed priors, then per
//! round select an agent, invoke it, charge its usage, judge the output,
//! update the chosen agent's posterior, append to memory and the candidate
//! ledger, and either return (on success) or cool the agent down, refine the
//! query and go again. Depth, budget and plateau bound the recursion.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::aggregation::{aggregate_select, Candidate, DEFAULT_TRUST_FLOOR};
use crate::beliefs::{trust_weights, AgentId, BeliefState, BeliefTable};
use crate::delegation::{apply_cooldown, ForcedRelease, Selector, ThompsonSelector};
use crate::error::{Error, Result};
use crate::events::{EpisodeStatus, Event, EventSink, PriorEntry};
use crate::judge::{ChannelJudge, Judge, JudgeChannel, Outcome, Verdict, VerdictSource};
use crate::memory::{init_priors, MemoryRecord, MemoryStore, PriorConfig};
use crate::rng::{DrawSource, RngStream};

/// Rationale recorded when an agent invocation fails.
pub const AGENT_FAULT: &str = "agent fault";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskEnvelope {
    pub query: String,
    pub embedding: Vec<f64>,
    /// Current round, 1-based. Zero before the first round.
    pub depth: u32,
    pub refinement_count: u32,
    /// Judge critiques attached by refinement, oldest first.
    pub critiques: Vec<String>,
}

impl TaskEnvelope {
    pub fn new(query: impl Into<String>, embedding: Vec<f64>) -> Self {
        Self {
            query: query.into(),
            embedding,
            depth: 0,
            refinement_count: 0,
            critiques: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AgentOutput {
    pub payload: String,
    /// Non-negative cost charged against the budget.
    pub usage: f64,
    pub prog_score: Option<f64>,
    /// Simulation ground truth consumed by channel judges.
    pub ground_truth: Option<bool>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AgentFault {
    pub message: String,
    pub usage: f64,
}

pub trait Agent {
    fn id(&self) -> &AgentId;
    fn invoke(&mut self, task: &TaskEnvelope) -> std::result::Result<AgentOutput, AgentFault>;
}

/// Rewrites the task after a failed round.
pub trait Refiner {
    fn refine(
        &self,
        task: &TaskEnvelope,
        candidate: Option<&Candidate>,
        rationale: &str,
    ) -> TaskEnvelope;
}

/// Appends the critique and bumps the refinement counter; leaves the
/// embedding alone.
#[derive(Clone, Copy, Debug, Default)]
pub struct AppendCritique;

impl Refiner for AppendCritique {
    fn refine(
        &self,
        task: &TaskEnvelope,
        _candidate: Option<&Candidate>,
        rationale: &str,
    ) -> TaskEnvelope {
        refine(task, rationale)
    }
}

pub fn refine(task: &TaskEnvelope, rationale: &str) -> TaskEnvelope {
    let mut next = task.clone();
    next.refinement_count += 1;
    next.critiques.push(rationale.to_owned());
    next
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerConfig {
    pub max_depth: u32,
    pub budget: f64,
    pub cooldown: u32,
    pub plateau_window: u32,
    pub prior: PriorConfig,
    pub judge_threshold: f64,
    pub channel: JudgeChannel,
    pub ensemble: bool,
    pub forced_release: ForcedRelease,
    pub trust_floor: f64,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            max_depth: 8,
            budget: 100.0,
            cooldown: 1,
            plateau_window: 4,
            prior: PriorConfig::default(),
            judge_threshold: 85.0,
            channel: JudgeChannel::perfect(),
            ensemble: false,
            forced_release: ForcedRelease::MinCooldown,
            trust_floor: DEFAULT_TRUST_FLOOR,
        }
    }
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_depth == 0 {
            return Err(Error::config("controller.max_depth", "must be at least 1"));
        }
        if self.budget.is_nan() || self.budget < 0.0 {
            return Err(Error::config("controller.budget", "must be non-negative"));
        }
        if self.plateau_window == 0 {
            return Err(Error::config(
                "controller.plateau_window",
                "must be at least 1",
            ));
        }
        if !(0.0..=100.0).contains(&self.judge_threshold) {
            return Err(Error::config(
                "controller.judge_threshold",
                "must lie in [0, 100]",
            ));
        }
        if !(0.0..=1.0).contains(&self.trust_floor) {
            return Err(Error::config(
                "controller.trust_floor",
                "must lie in [0, 1]",
            ));
        }
        self.prior.validate()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SelectionRecord {
    pub round: u32,
    pub agent: AgentId,
    pub verdict: Verdict,
    pub forced_exploration: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeResult {
    pub status: EpisodeStatus,
    pub answer: Option<Candidate>,
    /// Completed rounds (charged within budget and judged).
    pub rounds_used: u32,
    /// All agent invocations, including a final over-budget one.
    pub agent_calls: u32,
    pub cost_spent: f64,
    pub selections: Vec<SelectionRecord>,
    pub seeded_beliefs: BeliefTable,
    pub final_beliefs: BeliefTable,
    pub best_score: Option<f64>,
    pub ledger: Vec<Candidate>,
}

/// True when at least `k + 1` candidates exist and none of the last `k`
/// beats the best score achieved before them.
pub fn plateau(candidates: &[Candidate], k: usize) -> bool {
    if k == 0 || candidates.len() < k + 1 {
        return false;
    }
    let score = |c: &Candidate| c.score().unwrap_or(f64::NEG_INFINITY);
    let split = candidates.len() - k;
    let before = candidates[..split]
        .iter()
        .map(score)
        .fold(f64::NEG_INFINITY, f64::max);
    let recent = candidates[split..]
        .iter()
        .map(score)
        .fold(f64::NEG_INFINITY, f64::max);
    recent <= before
}

/// Per-episode context supplied by the caller.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpisodeContext {
    pub episode: u64,
    /// Wall-clock stand-in stamped on memory records and used for decay.
    pub now: f64,
}

/// The moving parts of one episode, borrowed so callers can swap in scripted
/// draws, judges or baselines.
pub struct EpisodeRunner<'a> {
    pub cfg: &'a ControllerConfig,
    pub policy_name: &'a str,
    pub selector: &'a mut dyn Selector,
    pub draws: &'a mut dyn DrawSource,
    pub judge: &'a mut dyn Judge,
    pub refiner: &'a dyn Refiner,
    pub sink: &'a mut dyn EventSink,
}

fn roster_ids(roster: &[Box<dyn Agent + '_>]) -> Result<Vec<AgentId>> {
    if roster.is_empty() {
        return Err(Error::config("roster", "agent roster is empty"));
    }
    let ids: Vec<AgentId> = roster.iter().map(|a| a.id().clone()).collect();
    let unique: BTreeSet<&AgentId> = ids.iter().collect();
    if unique.len() != ids.len() {
        return Err(Error::config("roster", "agent ids must be unique"));
    }
    Ok(ids)
}

impl EpisodeRunner<'_> {
    /// Runs one task to completion.
    ///
    /// `persistent` supplies the starting beliefs unless memory priors are
    /// enabled, and receives the final beliefs either way. Cooldowns are
    /// episode-local. Memory records are appended to `store`.
    pub fn run(
        &mut self,
        task: TaskEnvelope,
        roster: &mut [Box<dyn Agent + '_>],
        persistent: &mut BeliefTable,
        store: &mut MemoryStore,
        ctx: EpisodeContext,
    ) -> Result<EpisodeResult> {
        let cfg = self.cfg;
        cfg.validate()?;
        let ids = roster_ids(roster)?;
        let index: BTreeMap<AgentId, usize> = ids.iter().cloned().zip(0..).collect();
        let embedding = task.embedding.clone();

        let mut beliefs: BeliefTable = if cfg.prior.use_memory {
            init_priors(&embedding, store.records(), ctx.now, &cfg.prior, &ids)?
        } else {
            let base = BeliefState::new(cfg.prior.alpha0, cfg.prior.beta0)?;
            ids.iter()
                .map(|id| (id.clone(), persistent.get(id).copied().unwrap_or(base)))
                .collect()
        };
        for b in beliefs.values_mut() {
            b.cooldown = 0;
        }
        let seeded = beliefs.clone();
        let clock = persistent.values().map(|b| b.updated_at).max().unwrap_or(0);

        self.sink.emit(Event::Start {
            episode: ctx.episode,
            policy: self.policy_name.to_owned(),
            budget: cfg.budget,
            priors: beliefs
                .iter()
                .map(|(id, b)| {
                    (
                        id.clone(),
                        PriorEntry {
                            alpha: b.alpha,
                            beta: b.beta,
                        },
                    )
                })
                .collect(),
        });

        let mut task = task;
        let mut spent = 0.0;
        let mut ledger: Vec<Candidate> = Vec::new();
        let mut best_score: Option<f64> = None;
        let mut selections = Vec::new();
        let mut rounds_used = 0u32;
        let mut agent_calls = 0u32;
        let mut succeeded = false;

        for depth in 1..=cfg.max_depth {
            if spent >= cfg.budget {
                break;
            }
            task.depth = depth;
            let pick = self.selector.select(&mut beliefs, self.draws)?;
            let chosen = pick.chosen.clone();
            let agent = &mut roster[index[&chosen]];

            let invoked = agent.invoke(&task);
            agent_calls += 1;
            let usage = match &invoked {
                Ok(out) => out.usage,
                Err(fault) => fault.usage,
            };
            spent += usage;
            if spent > cfg.budget {
                self.sink.emit(Event::OverBudget {
                    episode: ctx.episode,
                    round: depth,
                    agent: chosen,
                    usage,
                    spent,
                });
                break;
            }

            let (verdict, candidate) = match invoked {
                Ok(out) => {
                    let verdict = self.judge.evaluate(out.prog_score, out.ground_truth)?;
                    let candidate = Candidate {
                        payload: out.payload,
                        prog_score: out.prog_score,
                        judge_score: verdict.judge_score,
                        producer: chosen.clone(),
                        round: depth,
                        evidence_ok: true,
                    };
                    (verdict, Some(candidate))
                }
                Err(_) => (
                    Verdict {
                        outcome: Outcome::Failure,
                        rationale: AGENT_FAULT.to_owned(),
                        prog_score: None,
                        judge_score: Some(0.0),
                        source: VerdictSource::External,
                    },
                    None,
                ),
            };
            let y = verdict.y();
            rounds_used += 1;

            let belief = beliefs.get_mut(&chosen).expect("selected from roster");
            *belief = belief.update(y, clock + u64::from(depth));
            let (alpha_after, beta_after) = (belief.alpha, belief.beta);

            store.append(MemoryRecord {
                embedding: embedding.clone(),
                agent: chosen.clone(),
                outcome: y,
                rationale: verdict.rationale.clone(),
                timestamp: ctx.now,
            })?;

            if let Some(c) = &candidate {
                let s = c.score()?;
                if best_score.is_none_or(|b| s > b) {
                    best_score = Some(s);
                }
                ledger.push(c.clone());
            }
            selections.push(SelectionRecord {
                round: depth,
                agent: chosen.clone(),
                verdict: verdict.clone(),
                forced_exploration: pick.forced_exploration,
            });

            if !y {
                apply_cooldown(&mut beliefs, &chosen, cfg.cooldown)?;
            }
            self.sink.emit(Event::Round {
                episode: ctx.episode,
                round: depth,
                agent: chosen.clone(),
                sampled_values: pick
                    .sampled_values
                    .iter()
                    .map(|(id, &v)| (id.clone(), v.is_finite().then_some(v)))
                    .collect(),
                forced_exploration: pick.forced_exploration,
                fault: candidate.is_none(),
                usage,
                verdict: verdict.clone(),
                y: u8::from(y),
                alpha_after,
                beta_after,
                spent,
                cooldowns: beliefs
                    .iter()
                    .map(|(id, b)| (id.clone(), b.cooldown))
                    .collect(),
            });

            if y && candidate.is_some() {
                succeeded = true;
                break;
            }
            task = self
                .refiner
                .refine(&task, candidate.as_ref(), &verdict.rationale);
            if plateau(&ledger, cfg.plateau_window as usize) {
                break;
            }
        }

        let answer = if ledger.is_empty() {
            None
        } else {
            Some(aggregate_select(
                &ledger,
                &trust_weights(&beliefs),
                cfg.trust_floor,
            )?)
        };
        let status = match (&answer, succeeded) {
            (None, _) => EpisodeStatus::Failure,
            (Some(_), true) => EpisodeStatus::Success,
            (Some(_), false) => EpisodeStatus::BestEffort,
        };
        self.sink.emit(Event::End {
            episode: ctx.episode,
            status,
            rounds_used,
            agent_calls,
            spent,
        });

        for (id, b) in &beliefs {
            let mut b = *b;
            b.cooldown = 0;
            persistent.insert(id.clone(), b);
        }
        Ok(EpisodeResult {
            status,
            answer,
            rounds_used,
            agent_calls,
            cost_spent: spent,
            selections,
            seeded_beliefs: seeded,
            final_beliefs: beliefs,
            best_score,
            ledger,
        })
    }
}

/// Runs one episode with Thompson selection and the configured channel
/// judge, deriving independent selection and judge streams from `rng`.
#[allow(clippy::too_many_arguments)]
pub fn run_episode(
    task: TaskEnvelope,
    roster: &mut [Box<dyn Agent + '_>],
    persistent: &mut BeliefTable,
    store: &mut MemoryStore,
    cfg: &ControllerConfig,
    rng: &RngStream,
    ctx: EpisodeContext,
    sink: &mut dyn EventSink,
) -> Result<EpisodeResult> {
    let mut selector = ThompsonSelector {
        forced_release: cfg.forced_release,
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
        policy_name: "thompson",
        selector: &mut selector,
        draws: &mut draws,
        judge: &mut judge,
        refiner: &AppendCritique,
        sink,
    }
    .run(task, roster, persistent, store, ctx)
}

pub(crate) const STREAM_SELECT: u64 = 0x005E_1EC7;
pub(crate) const STREAM_JUDGE: u64 = 0x10D6E;
