use std::collections::BTreeSet;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::beliefs::AgentId;
use crate::controller::{Agent, AgentFault, AgentOutput, TaskEnvelope};
use crate::error::{Error, Result};
use crate::rng::RngStream;

/// Competence from task index `from` onward.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Segment {
    pub from: u64,
    pub theta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawAgentSpec")]
pub struct SimAgentSpec {
    pub id: AgentId,
    /// Sorted by `from`; the first segment starts at task 0.
    pub schedule: Vec<Segment>,
    pub domain: String,
    /// Added to theta (then clamped) when the task requires `domain`.
    pub domain_boost: f64,
    pub cost: f64,
    /// Emit a programmatic score: 100 on true success, 0 otherwise.
    pub programmatic: bool,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAgentSpec {
    id: String,
    theta: Option<f64>,
    schedule: Option<Vec<Segment>>,
    #[serde(default)]
    domain: String,
    #[serde(default)]
    domain_boost: f64,
    #[serde(default = "unit_cost")]
    cost: f64,
    #[serde(default)]
    programmatic: bool,
}

fn unit_cost() -> f64 {
    1.0
}

impl TryFrom<RawAgentSpec> for SimAgentSpec {
    type Error = Error;

    fn try_from(raw: RawAgentSpec) -> Result<Self> {
        let schedule = match (raw.theta, raw.schedule) {
            (Some(theta), None) => vec![Segment { from: 0, theta }],
            (None, Some(s)) => s,
            (Some(_), Some(_)) => {
                return Err(Error::config(
                    format!("roster.{}", raw.id),
                    "give either `theta` or `schedule`, not both",
                ))
            }
            (None, None) => {
                return Err(Error::config(
                    format!("roster.{}", raw.id),
                    "missing field `theta` (or `schedule`)",
                ))
            }
        };
        let spec = SimAgentSpec {
            id: AgentId(raw.id),
            schedule,
            domain: raw.domain,
            domain_boost: raw.domain_boost,
            cost: raw.cost,
            programmatic: raw.programmatic,
        };
        spec.validate()?;
        Ok(spec)
    }
}

impl SimAgentSpec {
    pub fn constant(id: impl Into<String>, theta: f64) -> Self {
        Self {
            id: AgentId::new(id),
            schedule: vec![Segment { from: 0, theta }],
            domain: String::new(),
            domain_boost: 0.0,
            cost: 1.0,
            programmatic: false,
        }
    }

    /// `before` for tasks `[0, at)`, `after` from `at` on.
    pub fn switching(id: impl Into<String>, before: f64, after: f64, at: u64) -> Self {
        let mut s = Self::constant(id, before);
        s.schedule.push(Segment {
            from: at,
            theta: after,
        });
        s
    }

    pub fn with_domain(mut self, domain: impl Into<String>, boost: f64) -> Self {
        self.domain = domain.into();
        self.domain_boost = boost;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let field = format!("roster.{}", self.id);
        match self.schedule.first() {
            Some(s) if s.from == 0 => {}
            _ => return Err(Error::config(&field, "schedule must start at task 0")),
        }
        if self.schedule.windows(2).any(|w| w[0].from >= w[1].from) {
            return Err(Error::config(
                &field,
                "schedule segments must be strictly increasing",
            ));
        }
        if self
            .schedule
            .iter()
            .any(|s| !(0.0..=1.0).contains(&s.theta))
        {
            return Err(Error::config(&field, "theta must lie in [0, 1]"));
        }
        if !(self.cost.is_finite() && self.cost > 0.0) {
            return Err(Error::config(&field, "cost must be positive"));
        }
        if !self.domain_boost.is_finite() {
            return Err(Error::config(&field, "domain_boost must be finite"));
        }
        Ok(())
    }

    /// Scheduled competence at a task index.
    pub fn theta_at(&self, index: u64) -> f64 {
        self.schedule
            .iter()
            .take_while(|s| s.from <= index)
            .last()
            .map(|s| s.theta)
            .expect("schedule starts at 0")
    }

    pub fn effective_theta(&self, task: &SimTaskSpec) -> f64 {
        let base = self.theta_at(task.index);
        if !self.domain.is_empty() && task.required_domains.contains(&self.domain) {
            (base + self.domain_boost).clamp(0.0, 1.0)
        } else {
            base
        }
    }

    /// First index at which the schedule changes, if any.
    pub fn first_switch(&self) -> Option<u64> {
        self.schedule.get(1).map(|s| s.from)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimTaskSpec {
    pub index: u64,
    pub embedding: Vec<f64>,
    pub required_domains: BTreeSet<String>,
}

/// One simulated call: Bernoulli(effective theta) success and the agent's
/// per-call cost.
pub fn simulate_agent_call(
    spec: &SimAgentSpec,
    task: &SimTaskSpec,
    rng: &mut RngStream,
) -> (bool, f64) {
    (rng.bernoulli(spec.effective_theta(task)), spec.cost)
}

/// A simulated agent bound to one task.
pub struct SimAgent {
    spec: SimAgentSpec,
    task: SimTaskSpec,
    rng: RngStream,
    calls: u32,
}

impl SimAgent {
    pub fn new(spec: SimAgentSpec, task: SimTaskSpec, rng: RngStream) -> Self {
        Self {
            spec,
            task,
            rng,
            calls: 0,
        }
    }
}

impl Agent for SimAgent {
    fn id(&self) -> &AgentId {
        &self.spec.id
    }

    fn invoke(&mut self, _task: &TaskEnvelope) -> std::result::Result<AgentOutput, AgentFault> {
        self.calls += 1;
        let (ok, usage) = simulate_agent_call(&self.spec, &self.task, &mut self.rng);
        Ok(AgentOutput {
            payload: format!("{}#{}.{}", self.spec.id, self.task.index, self.calls),
            usage,
            prog_score: self
                .spec
                .programmatic
                .then_some(if ok { 100.0 } else { 0.0 }),
            ground_truth: Some(ok),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskStreamConfig {
    pub count: u64,
    pub dim: usize,
    /// Domain labels; each task requires one, drawn with `weights`.
    pub domains: Vec<String>,
    /// Relative domain weights; empty means uniform.
    pub weights: Vec<f64>,
    /// Standard deviation of Gaussian jitter around each domain centre.
    pub noise: f64,
    pub seed: u64,
}

impl Default for TaskStreamConfig {
    fn default() -> Self {
        Self {
            count: 50,
            dim: 8,
            domains: vec!["general".into()],
            weights: Vec::new(),
            noise: 0.1,
            seed: 0,
        }
    }
}

impl TaskStreamConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::config("task_stream.dim", "must be at least 1"));
        }
        if self.domains.is_empty() {
            return Err(Error::config(
                "task_stream.domains",
                "at least one domain is required",
            ));
        }
        if !self.weights.is_empty() {
            if self.weights.len() != self.domains.len() {
                return Err(Error::config(
                    "task_stream.weights",
                    "needs one weight per domain",
                ));
            }
            if self.weights.iter().any(|w| !(w.is_finite() && *w >= 0.0))
                || self.weights.iter().sum::<f64>() <= 0.0
            {
                return Err(Error::config(
                    "task_stream.weights",
                    "weights must be non-negative with a positive sum",
                ));
            }
        }
        if !(self.noise.is_finite() && self.noise >= 0.0) {
            return Err(Error::config("task_stream.noise", "must be non-negative"));
        }
        Ok(())
    }
}

fn gaussian_vec(rng: &mut RngStream, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| StandardNormal.sample(rng)).collect()
}

/// Unit-norm centre for a domain, fixed by `(seed, domain)`.
pub fn domain_centre(seed: u64, domain: &str, dim: usize) -> Vec<f64> {
    let tag = domain.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3)
    });
    let mut rng = RngStream::new(seed, tag);
    loop {
        let v = gaussian_vec(&mut rng, dim);
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-9 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Generates the task stream: each task picks a domain and jitters that
/// domain's centre.
pub fn generate_tasks(cfg: &TaskStreamConfig) -> Result<Vec<SimTaskSpec>> {
    cfg.validate()?;
    let centres: Vec<Vec<f64>> = cfg
        .domains
        .iter()
        .map(|d| domain_centre(cfg.seed, d, cfg.dim))
        .collect();
    let weights = if cfg.weights.is_empty() {
        vec![1.0; cfg.domains.len()]
    } else {
        cfg.weights.clone()
    };
    let total: f64 = weights.iter().sum();
    let mut rng = RngStream::new(cfg.seed, 0x7A5C);
    let mut out = Vec::with_capacity(cfg.count as usize);
    for index in 0..cfg.count {
        let u: f64 = rand::Rng::random::<f64>(&mut rng) * total;
        let mut acc = 0.0;
        let mut pick = weights.len() - 1;
        for (i, w) in weights.iter().enumerate() {
            acc += w;
            if u < acc {
                pick = i;
                break;
            }
        }
        let jitter = gaussian_vec(&mut rng, cfg.dim);
        let mut embedding: Vec<f64> = centres[pick]
            .iter()
            .zip(&jitter)
            .map(|(c, j)| c + cfg.noise * j)
            .collect();
        if embedding.iter().all(|x| *x == 0.0) {
            embedding[0] = 1.0;
        }
        out.push(SimTaskSpec {
            index,
            embedding,
            required_domains: [cfg.domains[pick].clone()].into(),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn task(index: u64) -> SimTaskSpec {
        SimTaskSpec {
            index,
            embedding: vec![1.0],
            required_domains: ["bio".to_string()].into(),
        }
    }

    #[test]
    fn certain_success() {
        let spec = SimAgentSpec::constant("a", 1.0);
        let mut rng = RngStream::new(0, 0);
        for _ in 0..1000 {
            assert_eq!(simulate_agent_call(&spec, &task(0), &mut rng), (true, 1.0));
        }
    }

    #[test]
    fn success_frequency() {
        let spec = SimAgentSpec::constant("a", 0.6);
        let mut rng = RngStream::new(6, 6);
        let n = 100_000;
        let k = (0..n)
            .filter(|_| simulate_agent_call(&spec, &task(0), &mut rng).0)
            .count();
        let f = k as f64 / n as f64;
        assert!((0.595..=0.605).contains(&f), "{f}");
    }

    #[test]
    fn impairment_segments() {
        let spec = SimAgentSpec::switching("a", 0.9, 0.1, 50);
        let mut rng = RngStream::new(9, 9);
        let n = 20_000;
        for (idx, theta) in [(10u64, 0.9), (75u64, 0.1)] {
            let k = (0..n)
                .filter(|_| simulate_agent_call(&spec, &task(idx), &mut rng).0)
                .count() as f64;
            let sigma = (n as f64 * theta * (1.0 - theta)).sqrt();
            assert!((k - n as f64 * theta).abs() < 3.0 * sigma, "{idx}: {k}");
        }
        assert_eq!(spec.theta_at(49), 0.9);
        assert_eq!(spec.theta_at(50), 0.1);
        assert_eq!(spec.first_switch(), Some(50));
    }

    #[test]
    fn domain_boost_clamps() {
        let spec = SimAgentSpec::constant("a", 0.8).with_domain("bio", 0.5);
        assert_eq!(spec.effective_theta(&task(0)), 1.0);
        let other = SimAgentSpec::constant("a", 0.8).with_domain("law", 0.5);
        assert_eq!(other.effective_theta(&task(0)), 0.8);
    }

    #[test]
    fn spec_validation() {
        let mut s = SimAgentSpec::constant("a", 0.5);
        s.schedule[0].from = 1;
        assert!(s.validate().is_err());
        assert!(SimAgentSpec::constant("a", 1.5).validate().is_err());
        let mut s = SimAgentSpec::switching("a", 0.5, 0.4, 10);
        s.schedule.push(Segment {
            from: 10,
            theta: 0.1,
        });
        assert!(s.validate().is_err());
    }

    #[test]
    fn spec_from_toml() {
        let s: SimAgentSpec = toml::from_str("id = \"x\"\ntheta = 0.3\n").unwrap();
        assert_eq!(
            s.schedule,
            vec![Segment {
                from: 0,
                theta: 0.3
            }]
        );
        assert_eq!(s.cost, 1.0);
        let err = toml::from_str::<SimAgentSpec>("id = \"x\"\n")
            .unwrap_err()
            .to_string();
        assert!(err.contains("theta"), "{err}");
    }

    #[test]
    fn task_stream_is_deterministic() {
        let cfg = TaskStreamConfig {
            count: 20,
            domains: vec!["a".into(), "b".into()],
            ..Default::default()
        };
        let x = generate_tasks(&cfg).unwrap();
        let y = generate_tasks(&cfg).unwrap();
        assert_eq!(x, y);
        assert_eq!(x.len(), 20);
        assert!(x
            .iter()
            .all(|t| t.embedding.len() == 8 && t.required_domains.len() == 1));
        let a = domain_centre(0, "a", 8);
        assert!((a.iter().map(|v| v * v).sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
