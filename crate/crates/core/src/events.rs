//! Structured per-round event log and its replay checker.
//!
//! The log is JSONL. Each episode is framed by `start` and `end` events with
//! one `round` event per completed round, plus an `over_budget` event when
//! the final call overran the budget. Replay recomputes the belief trajectory
//! and spend from the logged verdicts and reports every disagreement.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::beliefs::{AgentId, BeliefState, BeliefTable};
use crate::error::{Error, Result};
use crate::judge::Verdict;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpisodeStatus {
    Success,
    BestEffort,
    Failure,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriorEntry {
    pub alpha: f64,
    pub beta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    Start {
        episode: u64,
        policy: String,
        budget: f64,
        priors: BTreeMap<AgentId, PriorEntry>,
    },
    Round {
        episode: u64,
        round: u32,
        agent: AgentId,
        /// `null` marks a masked agent.
        sampled_values: BTreeMap<AgentId, Option<f64>>,
        forced_exploration: bool,
        /// The agent faulted; no candidate entered the ledger.
        fault: bool,
        usage: f64,
        verdict: Verdict,
        y: u8,
        alpha_after: f64,
        beta_after: f64,
        spent: f64,
        cooldowns: BTreeMap<AgentId, u32>,
    },
    OverBudget {
        episode: u64,
        round: u32,
        agent: AgentId,
        usage: f64,
        spent: f64,
    },
    End {
        episode: u64,
        status: EpisodeStatus,
        rounds_used: u32,
        agent_calls: u32,
        spent: f64,
    },
}

/// Receiver for controller events.
pub trait EventSink {
    fn emit(&mut self, event: Event);
}

impl EventSink for Vec<Event> {
    fn emit(&mut self, event: Event) {
        self.push(event);
    }
}

/// Discards everything.
#[derive(Default)]
pub struct NullSink;

impl EventSink for NullSink {
    fn emit(&mut self, _event: Event) {}
}

pub fn write_events(events: &[Event], mut w: impl Write) -> Result<()> {
    for e in events {
        serde_json::to_writer(&mut w, e)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_events(r: impl BufRead) -> Result<Vec<Event>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let e = serde_json::from_str(&line).map_err(|e| Error::Corrupt {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(e);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mismatch {
    pub episode: u64,
    pub round: u32,
    pub field: &'static str,
    pub logged: String,
    pub recomputed: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReplayedEpisode {
    pub episode: u64,
    pub status: EpisodeStatus,
    pub rounds_used: u32,
    pub agent_calls: u32,
    pub spent: f64,
    pub final_beliefs: BeliefTable,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ReplayReport {
    pub episodes: Vec<ReplayedEpisode>,
    pub mismatches: Vec<Mismatch>,
}

impl ReplayReport {
    pub fn is_clean(&self) -> bool {
        self.mismatches.is_empty()
    }
}

struct Open {
    episode: u64,
    beliefs: BeliefTable,
    spent: f64,
    rounds: u32,
    calls: u32,
    candidates: u32,
    last_y: Option<bool>,
}

impl Open {
    fn status(&self) -> EpisodeStatus {
        if self.candidates == 0 {
            EpisodeStatus::Failure
        } else if self.last_y == Some(true) {
            EpisodeStatus::Success
        } else {
            EpisodeStatus::BestEffort
        }
    }

    fn close(self) -> ReplayedEpisode {
        ReplayedEpisode {
            episode: self.episode,
            status: self.status(),
            rounds_used: self.rounds,
            agent_calls: self.calls,
            spent: self.spent,
            final_beliefs: self.beliefs,
        }
    }
}

fn check<T: PartialEq + std::fmt::Debug>(
    out: &mut Vec<Mismatch>,
    episode: u64,
    round: u32,
    field: &'static str,
    logged: T,
    recomputed: T,
) {
    if logged != recomputed {
        out.push(Mismatch {
            episode,
            round,
            field,
            logged: format!("{logged:?}"),
            recomputed: format!("{recomputed:?}"),
        });
    }
}

/// Recomputes every episode in `events` and compares against the logged
/// values. Floating-point fields must match exactly.
///
/// An empty log replays to a single failed episode with no rounds.
pub fn replay(events: &[Event]) -> Result<ReplayReport> {
    let mut report = ReplayReport::default();
    let mut open: Option<Open> = None;
    let framing = |what: &str| Error::contract(format!("malformed event log: {what}"));

    for e in events {
        match e {
            Event::Start {
                episode, priors, ..
            } => {
                if let Some(o) = open.take() {
                    return Err(framing(&format!("episode {} has no end event", o.episode)));
                }
                let beliefs = priors
                    .iter()
                    .map(|(id, p)| Ok((id.clone(), BeliefState::new(p.alpha, p.beta)?)))
                    .collect::<Result<_>>()?;
                open = Some(Open {
                    episode: *episode,
                    beliefs,
                    spent: 0.0,
                    rounds: 0,
                    calls: 0,
                    candidates: 0,
                    last_y: None,
                });
            }
            Event::Round {
                episode,
                round,
                agent,
                fault,
                usage,
                verdict,
                y,
                alpha_after,
                beta_after,
                spent,
                ..
            } => {
                let o = open.as_mut().ok_or_else(|| framing("round before start"))?;
                let m = &mut report.mismatches;
                check(m, *episode, *round, "episode", *episode, o.episode);
                o.rounds += 1;
                o.calls += 1;
                check(m, o.episode, *round, "round", *round, o.rounds);
                let success = verdict.y();
                check(m, o.episode, *round, "y", *y, u8::from(success));
                let Some(b) = o.beliefs.get_mut(agent) else {
                    return Err(framing(&format!(
                        "unknown agent `{agent}` in round {round}"
                    )));
                };
                *b = b.update(success, 0);
                check(m, o.episode, *round, "alpha_after", *alpha_after, b.alpha);
                check(m, o.episode, *round, "beta_after", *beta_after, b.beta);
                o.spent += usage;
                check(m, o.episode, *round, "spent", *spent, o.spent);
                if !fault {
                    o.candidates += 1;
                }
                o.last_y = Some(success);
            }
            Event::OverBudget {
                episode,
                round,
                usage,
                spent,
                ..
            } => {
                let o = open
                    .as_mut()
                    .ok_or_else(|| framing("over_budget before start"))?;
                check(
                    &mut report.mismatches,
                    *episode,
                    *round,
                    "episode",
                    *episode,
                    o.episode,
                );
                o.calls += 1;
                o.spent += usage;
                check(
                    &mut report.mismatches,
                    o.episode,
                    *round,
                    "spent",
                    *spent,
                    o.spent,
                );
            }
            Event::End {
                episode,
                status,
                rounds_used,
                agent_calls,
                spent,
            } => {
                let o = open.take().ok_or_else(|| framing("end before start"))?;
                let m = &mut report.mismatches;
                let r = o.rounds;
                check(m, *episode, r, "episode", *episode, o.episode);
                check(m, o.episode, r, "status", *status, o.status());
                check(m, o.episode, r, "rounds_used", *rounds_used, o.rounds);
                check(m, o.episode, r, "agent_calls", *agent_calls, o.calls);
                check(m, o.episode, r, "spent", *spent, o.spent);
                report.episodes.push(o.close());
            }
        }
    }
    if let Some(o) = open {
        return Err(framing(&format!("episode {} has no end event", o.episode)));
    }
    if report.episodes.is_empty() {
        report.episodes.push(ReplayedEpisode {
            episode: 0,
            status: EpisodeStatus::Failure,
            rounds_used: 0,
            agent_calls: 0,
            spent: 0.0,
            final_beliefs: BeliefTable::new(),
        });
    }
    Ok(report)
}
