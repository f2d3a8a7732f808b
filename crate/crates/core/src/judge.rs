//! Binary verdicts: programmatic short-circuit, a noisy-channel stand-in for
//! an LLM judge, and three-way majority ensembles.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngStream;

/// Rationale attached to verdicts decided by programmatic metrics alone.
pub const PROGRAMMATIC_PASS: &str = "programmatic pass";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Outcome {
    Success,
    Failure,
}

impl Outcome {
    pub fn from_bool(success: bool) -> Self {
        if success {
            Outcome::Success
        } else {
            Outcome::Failure
        }
    }

    pub fn is_success(self) -> bool {
        self == Outcome::Success
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerdictSource {
    Programmatic,
    Channel,
    Ensemble,
    /// Produced by a caller-supplied judge.
    External,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub outcome: Outcome,
    pub rationale: String,
    pub prog_score: Option<f64>,
    pub judge_score: Option<f64>,
    pub source: VerdictSource,
}

impl Verdict {
    pub fn y(&self) -> bool {
        self.outcome.is_success()
    }
}

/// False-positive / false-negative error rates of a binary judge.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct JudgeChannel {
    eps_fp: f64,
    eps_fn: f64,
}

impl JudgeChannel {
    /// Rejects rates outside [0, 1) and any channel whose discrimination
    /// margin `1 - eps_fp - eps_fn` is not strictly positive.
    pub fn new(eps_fp: f64, eps_fn: f64) -> Result<Self> {
        for (name, v) in [("eps_fp", eps_fp), ("eps_fn", eps_fn)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::config(name, format!("must lie in [0, 1), got {v}")));
            }
        }
        let delta = 1.0 - eps_fp - eps_fn;
        if delta <= 0.0 {
            return Err(Error::config(
                "channel",
                format!("discrimination margin must be positive, got delta={delta}"),
            ));
        }
        Ok(Self { eps_fp, eps_fn })
    }

    /// Channel with `eps_fp = eps_fn = (1 - delta) / 2`.
    pub fn symmetric(delta: f64) -> Result<Self> {
        let e = (1.0 - delta) / 2.0;
        Self::new(e, e)
    }

    pub fn perfect() -> Self {
        Self {
            eps_fp: 0.0,
            eps_fn: 0.0,
        }
    }

    pub fn eps_fp(&self) -> f64 {
        self.eps_fp
    }

    pub fn eps_fn(&self) -> f64 {
        self.eps_fn
    }

    pub fn delta(&self) -> f64 {
        1.0 - self.eps_fp - self.eps_fn
    }

    /// Passes a true outcome through the channel. Consumes exactly one RNG
    /// draw, even when the relevant error rate is zero.
    pub fn transmit(&self, truth: bool, rng: &mut RngStream) -> bool {
        if truth {
            !rng.bernoulli(self.eps_fn)
        } else {
            rng.bernoulli(self.eps_fp)
        }
    }

    /// Success probability as seen through the channel.
    pub fn observed_success_prob(&self, theta: f64) -> f64 {
        self.delta() * theta + self.eps_fp
    }
}

impl Default for JudgeChannel {
    fn default() -> Self {
        Self::perfect()
    }
}

impl<'de> Deserialize<'de> for JudgeChannel {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Raw {
            #[serde(default)]
            eps_fp: f64,
            #[serde(default)]
            eps_fn: f64,
        }
        let raw = Raw::deserialize(d)?;
        JudgeChannel::new(raw.eps_fp, raw.eps_fn).map_err(serde::de::Error::custom)
    }
}

pub fn observed_success_prob(theta: f64, channel: &JudgeChannel) -> f64 {
    channel.observed_success_prob(theta)
}

fn check_threshold(threshold: f64) -> Result<()> {
    if !(0.0..=100.0).contains(&threshold) {
        return Err(Error::config(
            "judge_threshold",
            format!("must lie in [0, 100], got {threshold}"),
        ));
    }
    Ok(())
}

/// Judges one candidate.
///
/// A programmatic score at or above `threshold` short-circuits to SUCCESS
/// without touching `rng`. Otherwise the true outcome is reported through
/// the noisy channel.
pub fn judge(
    true_outcome: bool,
    prog_score: Option<f64>,
    channel: &JudgeChannel,
    threshold: f64,
    rng: &mut RngStream,
) -> Result<Verdict> {
    check_threshold(threshold)?;
    if let Some(p) = prog_score {
        if p >= threshold {
            return Ok(Verdict {
                outcome: Outcome::Success,
                rationale: PROGRAMMATIC_PASS.to_owned(),
                prog_score: Some(p),
                judge_score: None,
                source: VerdictSource::Programmatic,
            });
        }
    }
    let reported = channel.transmit(true_outcome, rng);
    let rationale = if reported {
        "judge: requirements satisfied"
    } else {
        "judge: answer incomplete or incorrect"
    };
    Ok(Verdict {
        outcome: Outcome::from_bool(reported),
        rationale: rationale.to_owned(),
        prog_score,
        judge_score: Some(if reported { 100.0 } else { 0.0 }),
        source: VerdictSource::Channel,
    })
}

fn mean_present(xs: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let (sum, n) = xs.flatten().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Majority vote over exactly three verdicts on the same candidate.
pub fn ensemble_judge(verdicts: &[Verdict]) -> Result<Verdict> {
    if verdicts.len() != 3 {
        return Err(Error::contract(format!(
            "ensemble judging needs exactly 3 verdicts, got {}",
            verdicts.len()
        )));
    }
    let successes = verdicts.iter().filter(|v| v.y()).count();
    Ok(Verdict {
        outcome: Outcome::from_bool(successes >= 2),
        rationale: verdicts
            .iter()
            .map(|v| v.rationale.as_str())
            .collect::<Vec<_>>()
            .join(" | "),
        prog_score: mean_present(verdicts.iter().map(|v| v.prog_score)),
        judge_score: mean_present(verdicts.iter().map(|v| v.judge_score)),
        source: VerdictSource::Ensemble,
    })
}

/// Candidate score: the programmatic score when present, else the judge's.
pub fn combine_scores(prog_score: Option<f64>, judge_score: Option<f64>) -> Result<f64> {
    prog_score
        .or(judge_score)
        .ok_or_else(|| Error::contract("combine_scores needs at least one score"))
}

/// Anything that can turn an agent's output into a verdict.
pub trait Judge {
    fn evaluate(&mut self, prog_score: Option<f64>, ground_truth: Option<bool>) -> Result<Verdict>;
}

/// Programmatic short-circuit followed by the noisy channel, optionally as a
/// majority of three independently seeded channel judges.
#[derive(Clone, Debug)]
pub struct ChannelJudge {
    channel: JudgeChannel,
    threshold: f64,
    ensemble: bool,
    streams: [RngStream; 3],
}

impl ChannelJudge {
    pub fn new(
        channel: JudgeChannel,
        threshold: f64,
        ensemble: bool,
        rng: &RngStream,
    ) -> Result<Self> {
        check_threshold(threshold)?;
        Ok(Self {
            channel,
            threshold,
            ensemble,
            streams: [rng.substream(0), rng.substream(1), rng.substream(2)],
        })
    }

    pub fn words_consumed(&self) -> u64 {
        self.streams.iter().map(RngStream::words_consumed).sum()
    }
}

impl Judge for ChannelJudge {
    /// Missing ground truth is judged as a true failure.
    fn evaluate(&mut self, prog_score: Option<f64>, ground_truth: Option<bool>) -> Result<Verdict> {
        let truth = ground_truth.unwrap_or(false);
        if !self.ensemble {
            return judge(
                truth,
                prog_score,
                &self.channel,
                self.threshold,
                &mut self.streams[0],
            );
        }
        if prog_score.is_some_and(|p| p >= self.threshold) {
            return judge(
                truth,
                prog_score,
                &self.channel,
                self.threshold,
                &mut self.streams[0],
            );
        }
        let votes = self
            .streams
            .iter_mut()
            .map(|s| judge(truth, prog_score, &self.channel, self.threshold, s))
            .collect::<Result<Vec<_>>>()?;
        ensemble_judge(&votes)
    }
}
