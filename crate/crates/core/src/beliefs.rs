//! Beta-Bernoulli competence beliefs.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{check_beta_params, DrawSource};

/// Stable agent identifier. Ordering is lexicographic and is used as the final
/// deterministic tie-break everywhere.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AgentId(pub String);

impl AgentId {
    pub fn new(id: impl Into<String>) -> Self {
        AgentId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for AgentId {
    fn from(s: &str) -> Self {
        AgentId(s.to_owned())
    }
}

/// Beta(alpha, beta) posterior over one agent's success probability, plus
/// the cooldown counter the delegation loop uses to mask it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BeliefState {
    pub alpha: f64,
    pub beta: f64,
    pub cooldown: u32,
    pub updated_at: u64,
}

impl BeliefState {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        check_beta_params(alpha, beta)?;
        Ok(Self {
            alpha,
            beta,
            cooldown: 0,
            updated_at: 0,
        })
    }

    /// Beta(1, 1).
    pub fn uniform() -> Self {
        Self {
            alpha: 1.0,
            beta: 1.0,
            cooldown: 0,
            updated_at: 0,
        }
    }

    /// One posterior draw. Does not mutate the belief.
    pub fn sample(&self, draws: &mut dyn DrawSource) -> Result<f64> {
        draws.beta(self.alpha, self.beta)
    }

    /// Conjugate update with a binary outcome observed at round `at`.
    pub fn update(&self, success: bool, at: u64) -> Self {
        let y = if success { 1.0 } else { 0.0 };
        Self {
            alpha: self.alpha + y,
            beta: self.beta + (1.0 - y),
            cooldown: self.cooldown,
            updated_at: at,
        }
    }

    pub fn posterior_mean(&self) -> f64 {
        self.alpha / (self.alpha + self.beta)
    }

    pub fn evidence(&self) -> f64 {
        self.alpha + self.beta
    }
}

impl Default for BeliefState {
    fn default() -> Self {
        Self::uniform()
    }
}

/// Beliefs for a whole roster, keyed and iterated in [`AgentId`] order.
pub type BeliefTable = BTreeMap<AgentId, BeliefState>;

/// Uniform Beta(alpha0, beta0) priors for every agent in `ids`.
pub fn uniform_table<'a>(
    ids: impl IntoIterator<Item = &'a AgentId>,
    alpha0: f64,
    beta0: f64,
) -> Result<BeliefTable> {
    let prior = BeliefState::new(alpha0, beta0)?;
    Ok(ids.into_iter().map(|id| (id.clone(), prior)).collect())
}

/// Posterior means, the trust weights used by aggregation.
pub fn trust_weights(table: &BeliefTable) -> BTreeMap<AgentId, f64> {
    table
        .iter()
        .map(|(id, b)| (id.clone(), b.posterior_mean()))
        .collect()
}

#[derive(Serialize, Deserialize)]
struct PersistedBelief {
    alpha: f64,
    beta: f64,
    updated_at: u64,
}

/// Serializes beliefs as `{"agent": {"alpha": .., "beta": .., "updated_at": ..}}`.
/// Cooldowns are episode-local and are not persisted.
pub fn beliefs_to_json(table: &BeliefTable) -> Result<String> {
    let out: BTreeMap<&str, PersistedBelief> = table
        .iter()
        .map(|(id, b)| {
            (
                id.as_str(),
                PersistedBelief {
                    alpha: b.alpha,
                    beta: b.beta,
                    updated_at: b.updated_at,
                },
            )
        })
        .collect();
    Ok(serde_json::to_string_pretty(&out)?)
}

pub fn beliefs_from_json(text: &str) -> Result<BeliefTable> {
    let raw: BTreeMap<String, PersistedBelief> = serde_json::from_str(text)?;
    raw.into_iter()
        .map(|(id, p)| {
            let mut b = BeliefState::new(p.alpha, p.beta)
                .map_err(|e| Error::InvalidParameter(format!("agent `{id}`: {e}")))?;
            b.updated_at = p.updated_at;
            Ok((AgentId(id), b))
        })
        .collect()
}

pub fn save_beliefs(path: &Path, table: &BeliefTable) -> Result<()> {
    std::fs::write(path, beliefs_to_json(table)?)?;
    Ok(())
}

pub fn load_beliefs(path: &Path) -> Result<BeliefTable> {
    beliefs_from_json(&std::fs::read_to_string(path)?)
}
