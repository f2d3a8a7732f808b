//! Thompson-sampling agent selection with cooldown masking.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::beliefs::{AgentId, BeliefTable};
use crate::error::{Error, Result};
use crate::rng::DrawSource;

/// Which agent to release when every agent is cooling down.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForcedRelease {
    /// Release the agent closest to natural eligibility.
    #[default]
    MinCooldown,
    /// Release the agent with the largest remaining cooldown.
    MaxCooldown,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SelectionOutcome {
    pub chosen: AgentId,
    /// Per-agent draw; `f64::NEG_INFINITY` for masked agents.
    pub sampled_values: BTreeMap<AgentId, f64>,
    pub forced_exploration: bool,
}

/// A policy that picks the next agent to delegate to.
///
/// Implementations may clear cooldowns in `beliefs` (forced exploration) but
/// must not touch alpha/beta.
pub trait Selector {
    fn select(
        &mut self,
        beliefs: &mut BeliefTable,
        draws: &mut dyn DrawSource,
    ) -> Result<SelectionOutcome>;
}

/// Belief-guided selection: argmax of one posterior draw per eligible agent.
#[derive(Clone, Copy, Debug, Default)]
pub struct ThompsonSelector {
    pub forced_release: ForcedRelease,
}

impl Selector for ThompsonSelector {
    fn select(
        &mut self,
        beliefs: &mut BeliefTable,
        draws: &mut dyn DrawSource,
    ) -> Result<SelectionOutcome> {
        select_agent(beliefs, draws, self.forced_release)
    }
}

/// Clears the cooldown of one agent when all are masked. Returns true if a
/// release happened.
pub fn release_if_all_cooling(beliefs: &mut BeliefTable, release: ForcedRelease) -> Result<bool> {
    if beliefs.is_empty() {
        return Err(Error::config("roster", "agent roster is empty"));
    }
    if beliefs.values().any(|b| b.cooldown == 0) {
        return Ok(false);
    }
    // BTreeMap iterates in id order, so the first extremum found wins ties.
    let mut pick: Option<(&AgentId, u32)> = None;
    for (id, b) in beliefs.iter() {
        let better = match pick {
            None => true,
            Some((_, c)) => match release {
                ForcedRelease::MinCooldown => b.cooldown < c,
                ForcedRelease::MaxCooldown => b.cooldown > c,
            },
        };
        if better {
            pick = Some((id, b.cooldown));
        }
    }
    let id = pick.map(|(id, _)| id.clone()).expect("non-empty roster");
    beliefs.get_mut(&id).expect("present").cooldown = 0;
    Ok(true)
}

/// Chooses the eligible agent with the largest value, breaking ties by larger
/// posterior mean and then by smaller id. `values` must have an entry for
/// every agent; masked agents carry `NEG_INFINITY`.
pub(crate) fn argmax_with_tiebreak(
    beliefs: &BeliefTable,
    values: &BTreeMap<AgentId, f64>,
) -> AgentId {
    let mut best: Option<(&AgentId, f64, f64)> = None;
    for (id, b) in beliefs.iter() {
        if b.cooldown > 0 {
            continue;
        }
        let v = values[id];
        let mean = b.posterior_mean();
        let wins = match best {
            None => true,
            Some((_, bv, bm)) => match v.partial_cmp(&bv).unwrap_or(Ordering::Less) {
                Ordering::Greater => true,
                Ordering::Less => false,
                // Iteration is in id order, so an equal mean keeps the earlier id.
                Ordering::Equal => mean > bm,
            },
        };
        if wins {
            best = Some((id, v, mean));
        }
    }
    best.map(|(id, _, _)| id.clone())
        .expect("at least one eligible agent")
}

/// Thompson-sampling selection over the eligible (cooldown = 0) agents.
///
/// If every agent is masked, one agent is released according to `release`
/// and the selection is retried in the same call; the outcome is then
/// flagged as forced exploration. Draws are taken in id order, one per
/// eligible agent.
pub fn select_agent(
    beliefs: &mut BeliefTable,
    draws: &mut dyn DrawSource,
    release: ForcedRelease,
) -> Result<SelectionOutcome> {
    let forced = release_if_all_cooling(beliefs, release)?;
    let mut sampled_values = BTreeMap::new();
    for (id, b) in beliefs.iter() {
        let v = if b.cooldown == 0 {
            b.sample(draws)?
        } else {
            f64::NEG_INFINITY
        };
        sampled_values.insert(id.clone(), v);
    }
    let chosen = argmax_with_tiebreak(beliefs, &sampled_values);
    Ok(SelectionOutcome {
        chosen,
        sampled_values,
        forced_exploration: forced,
    })
}

/// Decrements every cooldown (saturating at zero), then sets the chosen
/// agent's cooldown to `r`.
pub fn apply_cooldown(beliefs: &mut BeliefTable, chosen: &AgentId, r: u32) -> Result<()> {
    if !beliefs.contains_key(chosen) {
        return Err(Error::contract(format!(
            "agent `{chosen}` is not in the roster"
        )));
    }
    for b in beliefs.values_mut() {
        b.cooldown = b.cooldown.saturating_sub(1);
    }
    beliefs.get_mut(chosen).expect("checked").cooldown = r;
    Ok(())
}

/// Current cooldowns in id order.
pub fn cooldowns(beliefs: &BeliefTable) -> Vec<u32> {
    beliefs.values().map(|b| b.cooldown).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::beliefs::BeliefState;
    use crate::rng::{RngStream, ScriptedDraws};

    fn table(params: &[(f64, f64, u32)]) -> BeliefTable {
        params
            .iter()
            .enumerate()
            .map(|(i, &(a, b, c))| {
                let mut s = BeliefState::new(a, b).unwrap();
                s.cooldown = c;
                (AgentId(format!("a{}", i + 1)), s)
            })
            .collect()
    }

    #[test]
    fn argmax_of_injected_draws() {
        let mut t = table(&[(1.0, 1.0, 0); 3]);
        let mut d = ScriptedDraws::new([0.2, 0.9, 0.4]);
        let out = select_agent(&mut t, &mut d, ForcedRelease::MinCooldown).unwrap();
        assert_eq!(out.chosen, AgentId::new("a2"));
        assert!(!out.forced_exploration);
    }

    #[test]
    fn equal_draws_break_on_posterior_mean() {
        // means 0.50, 0.80, 0.33
        let mut t = table(&[(1.0, 1.0, 0), (4.0, 1.0, 0), (1.0, 2.0, 0)]);
        let mut d = ScriptedDraws::new([0.7, 0.7, 0.1]);
        let out = select_agent(&mut t, &mut d, ForcedRelease::MinCooldown).unwrap();
        assert_eq!(out.chosen, AgentId::new("a2"));
    }

    #[test]
    fn equal_draws_and_means_break_on_id() {
        let mut t = table(&[(2.0, 2.0, 0), (1.0, 1.0, 0)]);
        let mut d = ScriptedDraws::new([0.5, 0.5]);
        let out = select_agent(&mut t, &mut d, ForcedRelease::MinCooldown).unwrap();
        assert_eq!(out.chosen, AgentId::new("a1"));
    }

    #[test]
    fn all_masked_releases_smallest_cooldown() {
        let mut t = table(&[(1.0, 1.0, 2), (1.0, 1.0, 1), (1.0, 1.0, 3)]);
        let mut d = ScriptedDraws::new([0.3]);
        let out = select_agent(&mut t, &mut d, ForcedRelease::MinCooldown).unwrap();
        assert!(out.forced_exploration);
        assert_eq!(out.chosen, AgentId::new("a2"));
        assert_eq!(cooldowns(&t), vec![2, 0, 3]);
        assert_eq!(out.sampled_values[&AgentId::new("a1")], f64::NEG_INFINITY);
        assert_eq!(d.remaining(), 0);
    }

    #[test]
    fn max_release_switch() {
        let mut t = table(&[(1.0, 1.0, 2), (1.0, 1.0, 1), (1.0, 1.0, 3)]);
        let mut d = ScriptedDraws::new([0.3]);
        let out = select_agent(&mut t, &mut d, ForcedRelease::MaxCooldown).unwrap();
        assert_eq!(out.chosen, AgentId::new("a3"));
    }

    #[test]
    fn release_tie_goes_to_smaller_id() {
        let mut t = table(&[(1.0, 1.0, 2), (1.0, 1.0, 1), (1.0, 1.0, 1)]);
        assert!(release_if_all_cooling(&mut t, ForcedRelease::MinCooldown).unwrap());
        assert_eq!(cooldowns(&t), vec![2, 0, 1]);
    }

    #[test]
    fn masked_agents_are_never_drawn() {
        let mut t = table(&[(1.0, 1.0, 1), (1.0, 1.0, 0), (1.0, 1.0, 4)]);
        let mut rng = RngStream::new(1, 1);
        for _ in 0..100 {
            let out = select_agent(&mut t, &mut rng, ForcedRelease::MinCooldown).unwrap();
            assert_eq!(out.chosen, AgentId::new("a2"));
            assert!(!out.forced_exploration);
        }
    }

    #[test]
    fn empty_roster_is_config_error() {
        let mut t = BeliefTable::new();
        let mut rng = RngStream::new(0, 0);
        assert!(matches!(
            select_agent(&mut t, &mut rng, ForcedRelease::MinCooldown),
            Err(Error::Config { .. })
        ));
    }

    #[test]
    fn cooldown_decrement_then_set() {
        let mut t = table(&[(1.0, 1.0, 0), (1.0, 1.0, 3), (1.0, 1.0, 1)]);
        apply_cooldown(&mut t, &AgentId::new("a1"), 2).unwrap();
        assert_eq!(cooldowns(&t), vec![2, 2, 0]);
    }

    #[test]
    fn zero_cooldown_keeps_agent_eligible() {
        let mut t = table(&[(1.0, 1.0, 0), (1.0, 1.0, 0)]);
        apply_cooldown(&mut t, &AgentId::new("a1"), 0).unwrap();
        assert_eq!(cooldowns(&t), vec![0, 0]);
    }

    #[test]
    fn unit_cooldown_forces_alternation() {
        // a1 is far better, yet r = 1 with two agents forces alternation.
        let mut t = table(&[(100.0, 1.0, 0), (1.0, 100.0, 0)]);
        let mut rng = RngStream::new(4, 2);
        let mut picks = Vec::new();
        for _ in 0..6 {
            let out = select_agent(&mut t, &mut rng, ForcedRelease::MinCooldown).unwrap();
            apply_cooldown(&mut t, &out.chosen, 1).unwrap();
            picks.push(out.chosen.0.clone());
        }
        assert_eq!(picks, ["a1", "a2", "a1", "a2", "a1", "a2"]);
    }

    #[test]
    fn cooldown_unknown_agent() {
        let mut t = table(&[(1.0, 1.0, 0)]);
        assert!(apply_cooldown(&mut t, &AgentId::new("zz"), 1).is_err());
    }

    #[test]
    fn uniform_priors_give_uniform_choices() {
        let n_agents = 4;
        let trials = 10_000;
        let mut counts = vec![0usize; n_agents];
        let root = RngStream::new(31337, 0);
        for e in 0..trials {
            let mut t = table(&vec![(1.0, 1.0, 0); n_agents]);
            let mut rng = root.substream(e as u64);
            let out = select_agent(&mut t, &mut rng, ForcedRelease::MinCooldown).unwrap();
            let idx: usize = out.chosen.0[1..].parse::<usize>().unwrap() - 1;
            counts[idx] += 1;
        }
        let p = 1.0 / n_agents as f64;
        let sigma = (trials as f64 * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((c as f64 - trials as f64 * p).abs() < 3.0 * sigma, "{c}");
        }
    }

    #[test]
    fn selection_is_deterministic() {
        let base = table(&[(3.0, 1.0, 0), (2.0, 2.0, 0), (1.0, 4.0, 1)]);
        let mut t1 = base.clone();
        let mut t2 = base.clone();
        let a = select_agent(
            &mut t1,
            &mut RngStream::new(8, 8),
            ForcedRelease::MinCooldown,
        )
        .unwrap();
        let b = select_agent(
            &mut t2,
            &mut RngStream::new(8, 8),
            ForcedRelease::MinCooldown,
        )
        .unwrap();
        assert_eq!(a, b);
    }
}
