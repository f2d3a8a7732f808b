//! Plain Thompson sampling on Bernoulli arms with judge-noised feedback, and
//! true-gap regret accounting.

use rayon::prelude::*;

use crate::beliefs::BeliefState;
use crate::error::{Error, Result};
use crate::judge::JudgeChannel;
use crate::rng::{DrawSource, RngStream};

/// Pull counts and cumulative regret against the true best arm.
#[derive(Clone, Debug, PartialEq)]
pub struct RegretLedger {
    pulls: Vec<u64>,
    gaps: Vec<f64>,
    cumulative: f64,
}

impl RegretLedger {
    pub fn new(thetas: &[f64]) -> Self {
        let best = thetas.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Self {
            pulls: vec![0; thetas.len()],
            gaps: thetas.iter().map(|t| best - t).collect(),
            cumulative: 0.0,
        }
    }

    pub fn record(&mut self, arm: usize) {
        self.pulls[arm] += 1;
        self.cumulative += self.gaps[arm];
    }

    pub fn pulls(&self) -> &[u64] {
        &self.pulls
    }

    pub fn gaps(&self) -> &[f64] {
        &self.gaps
    }

    pub fn cumulative_regret(&self) -> f64 {
        self.cumulative
    }

    /// `sum_j gaps[j] * pulls[j]`, recomputed from the counts.
    pub fn decomposed_regret(&self) -> f64 {
        self.gaps
            .iter()
            .zip(&self.pulls)
            .map(|(g, &n)| g * n as f64)
            .sum()
    }
}

/// One seeded run.
#[derive(Clone, Debug)]
pub struct RegretRun {
    /// `R(t)` after each round `t = 1..=T`.
    pub trajectory: Vec<f64>,
    pub pulls: Vec<u64>,
    /// Share of the last 10% of rounds spent on a true-best arm.
    pub late_optimal_fraction: f64,
    pub final_beliefs: Vec<BeliefState>,
}

#[derive(Clone, Debug)]
pub struct RegretReport {
    pub runs: Vec<RegretRun>,
    pub mean_trajectory: Vec<f64>,
}

impl RegretReport {
    /// Mean `R(t)` at 1-based round `t`.
    pub fn mean_at(&self, t: usize) -> f64 {
        self.mean_trajectory[t - 1]
    }

    pub fn mean_final(&self) -> f64 {
        *self.mean_trajectory.last().unwrap_or(&0.0)
    }

    pub fn finals(&self) -> Vec<f64> {
        self.runs
            .iter()
            .map(|r| *r.trajectory.last().unwrap_or(&0.0))
            .collect()
    }

    /// Mean pulls per arm across runs.
    pub fn mean_pulls(&self) -> Vec<f64> {
        let n = self.runs.len() as f64;
        let arms = self.runs.first().map_or(0, |r| r.pulls.len());
        (0..arms)
            .map(|j| self.runs.iter().map(|r| r.pulls[j] as f64).sum::<f64>() / n)
            .collect()
    }
}

fn validate(thetas: &[f64], horizon: usize) -> Result<()> {
    if thetas.is_empty() {
        return Err(Error::config("roster", "need at least one arm"));
    }
    if thetas.iter().any(|t| !(0.0..=1.0).contains(t)) {
        return Err(Error::config("roster", "theta must lie in [0, 1]"));
    }
    if horizon == 0 {
        return Err(Error::config("horizon", "must be at least 1"));
    }
    Ok(())
}

/// Runs Thompson sampling for `horizon` rounds. The true outcome of the
/// pulled arm passes through `channel` before updating its Beta(1, 1) prior.
pub fn run_single(
    thetas: &[f64],
    channel: &JudgeChannel,
    horizon: usize,
    rng: &RngStream,
) -> Result<RegretRun> {
    validate(thetas, horizon)?;
    let mut draws = rng.substream(1);
    let mut world = rng.substream(2);
    let mut judge = rng.substream(3);
    let best = thetas.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut beliefs = vec![BeliefState::uniform(); thetas.len()];
    let mut ledger = RegretLedger::new(thetas);
    let mut trajectory = Vec::with_capacity(horizon);
    let late_start = horizon - horizon / 10;
    let mut late_optimal = 0usize;

    for t in 0..horizon {
        let mut arm = 0;
        let mut top = f64::NEG_INFINITY;
        let mut top_mean = f64::NEG_INFINITY;
        for (j, b) in beliefs.iter().enumerate() {
            let v = draws.beta(b.alpha, b.beta)?;
            let m = b.posterior_mean();
            if v > top || (v == top && m > top_mean) {
                arm = j;
                top = v;
                top_mean = m;
            }
        }
        let truth = world.bernoulli(thetas[arm]);
        let observed = channel.transmit(truth, &mut judge);
        beliefs[arm] = beliefs[arm].update(observed, t as u64 + 1);
        ledger.record(arm);
        trajectory.push(ledger.cumulative_regret());
        if t >= late_start && thetas[arm] == best {
            late_optimal += 1;
        }
    }
    Ok(RegretRun {
        trajectory,
        pulls: ledger.pulls().to_vec(),
        late_optimal_fraction: late_optimal as f64 / (horizon - late_start).max(1) as f64,
        final_beliefs: beliefs,
    })
}

/// Averages [`run_single`] over `seeds` independent replications. Runs are
/// executed in parallel and reduced in seed order.
pub fn run_bandit_regret(
    thetas: &[f64],
    channel: &JudgeChannel,
    horizon: usize,
    seeds: usize,
    root: &RngStream,
) -> Result<RegretReport> {
    validate(thetas, horizon)?;
    let runs = (0..seeds)
        .into_par_iter()
        .map(|s| run_single(thetas, channel, horizon, &root.substream(s as u64)))
        .collect::<Result<Vec<_>>>()?;
    let mut mean_trajectory = vec![0.0; horizon];
    for r in &runs {
        for (m, v) in mean_trajectory.iter_mut().zip(&r.trajectory) {
            *m += v;
        }
    }
    let n = runs.len().max(1) as f64;
    for m in &mut mean_trajectory {
        *m /= n;
    }
    Ok(RegretReport {
        runs,
        mean_trajectory,
    })
}
