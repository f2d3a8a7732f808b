//! Config-file driven experiment runs and their on-disk artifacts.
//!
//! A run produces four files in the output directory:
//!
//! * `events.jsonl`: the full event log, replayable with [`crate::events::replay`]
//! * `metrics.csv`: one row per seed and condition
//! * `summary.json`: means and bootstrap 95% CIs as `[lo, hi]`
//! * `beliefs.json`: final beliefs of the first replication
//!
//! Reported numbers carry 6 significant digits. The event log and belief
//! file keep full precision so that replay and reload are exact.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::beliefs::{beliefs_to_json, AgentId, BeliefTable};
use crate::controller::ControllerConfig;
use crate::error::{Error, Result};
use crate::events::{write_events, EpisodeStatus, Event};
use crate::judge::JudgeChannel;
use crate::rng::RngStream;
use crate::simulation::experiments::{self, Setup};
use crate::simulation::stats::{
    bootstrap_ci, mean, median, ols_slope, paired_bootstrap_p, sig6, slope_ci,
};
use crate::simulation::{SimAgentSpec, TaskStreamConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Episode,
    Efficiency,
    RegretSweep,
    Impairment,
    Specialization,
    Memory,
}

/// One judge channel of a regret sweep.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepPoint {
    pub eps_fp: f64,
    pub eps_fn: f64,
}

/// Experiment-specific knobs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    /// Specialization: the domain expert. Defaults to the agent with the
    /// largest domain boost.
    pub expert: Option<AgentId>,
    /// Impairment: the degrading agent. Defaults to the first agent with a
    /// changing schedule.
    pub impaired: Option<AgentId>,
    /// Memory: the agent expected to be picked first. Defaults to the agent
    /// with the highest competence at task 0.
    pub reliable: Option<AgentId>,
    /// Efficiency: agents below this competence count as low-competence.
    pub low_theta_cutoff: f64,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            expert: None,
            impaired: None,
            reliable: None,
            low_theta_cutoff: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub roster: Vec<SimAgentSpec>,
    #[serde(default)]
    pub controller: ControllerConfig,
    #[serde(default)]
    pub task_stream: TaskStreamConfig,
    #[serde(default)]
    pub sweep: Vec<SweepPoint>,
    #[serde(default = "one")]
    pub seeds: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Rounds per regret-sweep run.
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    #[serde(default)]
    pub analysis: AnalysisConfig,
}

fn one() -> usize {
    1
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_horizon() -> usize {
    10_000
}

impl ExperimentConfig {
    /// Parses and validates a TOML document.
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self =
            toml::from_str(text).map_err(|e| Error::config("config", e.message().to_owned()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.roster.is_empty() {
            return Err(Error::config("roster", "at least one agent is required"));
        }
        let mut seen = BTreeSet::new();
        for a in &self.roster {
            if !seen.insert(&a.id) {
                return Err(Error::config(
                    "roster",
                    format!("duplicate agent id `{}`", a.id),
                ));
            }
        }
        for (i, p) in self.sweep.iter().enumerate() {
            JudgeChannel::new(p.eps_fp, p.eps_fn).map_err(|e| match e {
                Error::Config { message, .. } => Error::config(format!("sweep[{i}]"), message),
                other => other,
            })?;
        }
        if self.seeds == 0 {
            return Err(Error::config("seeds", "must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.analysis.low_theta_cutoff) {
            return Err(Error::config(
                "analysis.low_theta_cutoff",
                "must lie in [0, 1]",
            ));
        }
        for (field, id) in [
            ("analysis.expert", &self.analysis.expert),
            ("analysis.impaired", &self.analysis.impaired),
            ("analysis.reliable", &self.analysis.reliable),
        ] {
            if let Some(id) = id {
                if !seen.contains(id) {
                    return Err(Error::config(
                        field,
                        format!("agent `{id}` is not in the roster"),
                    ));
                }
            }
        }
        self.controller.validate()?;
        self.task_stream.validate()?;
        match self.experiment {
            ExperimentKind::RegretSweep => {
                if self.sweep.is_empty() {
                    return Err(Error::config(
                        "sweep",
                        "regret_sweep needs at least one sweep point",
                    ));
                }
                if self.horizon == 0 {
                    return Err(Error::config("horizon", "must be at least 1"));
                }
            }
            ExperimentKind::Impairment => {
                self.impaired()?;
            }
            _ => {}
        }
        Ok(())
    }

    /// Shifts every seed by `offset`, giving fresh replications of the same
    /// design.
    pub fn offset_seeds(&mut self, offset: u64) {
        self.seed = self.seed.wrapping_add(offset);
        self.task_stream.seed = self.task_stream.seed.wrapping_add(offset);
    }

    fn setup(&self) -> Setup<'_> {
        Setup {
            roster: &self.roster,
            tasks: &self.task_stream,
            controller: &self.controller,
            seeds: self.seeds,
            seed: self.seed,
        }
    }

    fn impaired(&self) -> Result<AgentId> {
        if let Some(id) = &self.analysis.impaired {
            return Ok(id.clone());
        }
        self.roster
            .iter()
            .find(|a| a.first_switch().is_some())
            .map(|a| a.id.clone())
            .ok_or_else(|| Error::config("analysis.impaired", "no agent has a changing schedule"))
    }

    fn expert(&self) -> AgentId {
        self.analysis.expert.clone().unwrap_or_else(|| {
            self.roster
                .iter()
                .fold(&self.roster[0], |best, a| {
                    if a.domain_boost > best.domain_boost {
                        a
                    } else {
                        best
                    }
                })
                .id
                .clone()
        })
    }

    fn reliable(&self) -> AgentId {
        self.analysis.reliable.clone().unwrap_or_else(|| {
            self.roster
                .iter()
                .fold(&self.roster[0], |best, a| {
                    if a.theta_at(0) > best.theta_at(0) {
                        a
                    } else {
                        best
                    }
                })
                .id
                .clone()
        })
    }
}

/// Everything a run produces, in memory.
#[derive(Clone, Debug)]
pub struct ExperimentOutput {
    pub events: Vec<Event>,
    pub metrics_csv: String,
    pub summary: Value,
    pub beliefs: BeliefTable,
    /// Human-readable summary table.
    pub report: String,
}

impl ExperimentOutput {
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let log = fs::File::create(dir.join("events.jsonl"))?;
        write_events(&self.events, BufWriter::new(log))?;
        fs::write(dir.join("metrics.csv"), &self.metrics_csv)?;
        fs::write(
            dir.join("summary.json"),
            serde_json::to_string_pretty(&self.summary)? + "\n",
        )?;
        fs::write(
            dir.join("beliefs.json"),
            beliefs_to_json(&self.beliefs)? + "\n",
        )?;
        Ok(())
    }
}

const STREAM_STATS: u64 = 0xB007;

struct Table {
    header: Vec<&'static str>,
    rows: Vec<Vec<String>>,
}

impl Table {
    fn new(header: &[&'static str]) -> Self {
        Self {
            header: header.to_vec(),
            rows: Vec::new(),
        }
    }

    fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    fn csv(&self) -> String {
        let mut out = self.header.join(",");
        out.push('\n');
        for r in &self.rows {
            out.push_str(&r.join(","));
            out.push('\n');
        }
        out
    }
}

fn num(x: f64) -> String {
    if x.is_nan() {
        String::new()
    } else {
        sig6(x).to_string()
    }
}

/// Mean and bootstrap CI of `xs`, rounded for reporting.
fn stat(xs: &[f64], rng: &mut RngStream) -> Value {
    let [lo, hi] = bootstrap_ci(xs, rng);
    json!({ "mean": round(mean(xs)), "ci95": [round(lo), round(hi)] })
}

fn round(x: f64) -> Value {
    if x.is_finite() {
        json!(sig6(x))
    } else {
        Value::Null
    }
}

fn status_name(s: EpisodeStatus) -> &'static str {
    match s {
        EpisodeStatus::Success => "success",
        EpisodeStatus::BestEffort => "best_effort",
        EpisodeStatus::Failure => "failure",
    }
}

/// Runs the configured experiment.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let mut stats_rng = RngStream::new(cfg.seed, STREAM_STATS);
    match cfg.experiment {
        ExperimentKind::Episode => run_single(cfg),
        ExperimentKind::Efficiency => run_efficiency(cfg, &mut stats_rng),
        ExperimentKind::RegretSweep => run_regret_sweep(cfg, &mut stats_rng),
        ExperimentKind::Impairment => run_impairment(cfg, &mut stats_rng),
        ExperimentKind::Specialization => run_specialization(cfg, &mut stats_rng),
        ExperimentKind::Memory => run_memory(cfg, &mut stats_rng),
    }
}

fn run_single(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let r = experiments::single_episode(&cfg.setup())?;
    let mut t = Table::new(&[
        "seed",
        "condition",
        "status",
        "rounds",
        "agent_calls",
        "cost",
        "quality",
    ]);
    let mut report = String::from("seed  status       rounds  calls  cost\n");
    for (s, ep) in r.episodes.iter().enumerate() {
        let quality = ep
            .answer
            .as_ref()
            .and_then(|a| a.score().ok())
            .unwrap_or(0.0);
        t.push(vec![
            s.to_string(),
            "thompson".into(),
            status_name(ep.status).into(),
            ep.rounds_used.to_string(),
            ep.agent_calls.to_string(),
            num(ep.cost_spent),
            num(quality),
        ]);
        let _ = writeln!(
            report,
            "{s:<5} {:<12} {:>6}  {:>5}  {}",
            status_name(ep.status),
            ep.rounds_used,
            ep.agent_calls,
            num(ep.cost_spent)
        );
    }
    let n = r.episodes.len() as f64;
    let summary = json!({
        "experiment": "episode",
        "seeds": cfg.seeds,
        "success_rate": round(r.episodes.iter().filter(|e| e.status == EpisodeStatus::Success).count() as f64 / n),
        "mean_rounds": round(r.episodes.iter().map(|e| f64::from(e.rounds_used)).sum::<f64>() / n),
        "mean_agent_calls": round(r.episodes.iter().map(|e| f64::from(e.agent_calls)).sum::<f64>() / n),
    });
    Ok(ExperimentOutput {
        events: r.events,
        metrics_csv: t.csv(),
        summary,
        beliefs: r.final_beliefs,
        report,
    })
}

fn run_efficiency(cfg: &ExperimentConfig, rng: &mut RngStream) -> Result<ExperimentOutput> {
    let r = experiments::efficiency(&cfg.setup(), cfg.analysis.low_theta_cutoff)?;
    let mut t = Table::new(&[
        "seed",
        "condition",
        "episodes",
        "success_rate",
        "mean_agent_calls",
        "mean_low_calls",
        "mean_cost",
    ]);
    for (name, runs) in [("thompson", &r.thompson), ("random", &r.random)] {
        for (s, eps) in runs.iter().enumerate() {
            let k = eps.len() as f64;
            t.push(vec![
                s.to_string(),
                name.into(),
                eps.len().to_string(),
                num(eps
                    .iter()
                    .filter(|m| m.status == EpisodeStatus::Success)
                    .count() as f64
                    / k),
                num(eps.iter().map(|m| f64::from(m.agent_calls)).sum::<f64>() / k),
                num(eps.iter().map(|m| f64::from(m.low_calls)).sum::<f64>() / k),
                num(eps.iter().map(|m| m.cost).sum::<f64>() / k),
            ]);
        }
    }
    let calls = |runs: &Vec<Vec<experiments::EpisodeMetrics>>| {
        runs.iter()
            .flatten()
            .map(|m| f64::from(m.agent_calls))
            .collect::<Vec<_>>()
    };
    let lows = |runs: &Vec<Vec<experiments::EpisodeMetrics>>| {
        runs.iter()
            .flatten()
            .map(|m| f64::from(m.low_calls))
            .collect::<Vec<_>>()
    };
    let p_calls = paired_bootstrap_p(&r.paired_diffs(|m| f64::from(m.agent_calls)), rng);
    let p_low = paired_bootstrap_p(&r.paired_diffs(|m| f64::from(m.low_calls)), rng);
    let (tc, rc, tl, rl) = (
        calls(&r.thompson),
        calls(&r.random),
        lows(&r.thompson),
        lows(&r.random),
    );
    let summary = json!({
        "experiment": "efficiency",
        "seeds": cfg.seeds,
        "episodes_per_condition": tc.len(),
        "thompson": { "agent_calls": stat(&tc, rng), "low_calls": stat(&tl, rng) },
        "random": { "agent_calls": stat(&rc, rng), "low_calls": stat(&rl, rng) },
        "p_agent_calls": round(p_calls),
        "p_low_calls": round(p_low),
    });
    let report = format!(
        "policy    calls/episode  low-competence calls\n\
         thompson  {:>13}  {:>20}\n\
         random    {:>13}  {:>20}\n\
         paired bootstrap p: calls {}, low-competence calls {}\n",
        num(mean(&tc)),
        num(mean(&tl)),
        num(mean(&rc)),
        num(mean(&rl)),
        num(p_calls),
        num(p_low),
    );
    Ok(ExperimentOutput {
        events: r.events,
        metrics_csv: t.csv(),
        summary,
        beliefs: r.final_beliefs,
        report,
    })
}

fn run_regret_sweep(cfg: &ExperimentConfig, rng: &mut RngStream) -> Result<ExperimentOutput> {
    let channels = cfg
        .sweep
        .iter()
        .map(|p| JudgeChannel::new(p.eps_fp, p.eps_fn))
        .collect::<Result<Vec<_>>>()?;
    let results =
        experiments::regret_sweep(&cfg.roster, &channels, cfg.horizon, cfg.seeds, cfg.seed)?;
    let mut t = Table::new(&[
        "seed",
        "condition",
        "eps_fp",
        "eps_fn",
        "delta",
        "regret",
        "late_optimal_fraction",
    ]);
    let mut conditions = Vec::new();
    let mut report = String::from("eps_fp  eps_fn  delta   mean R(T)\n");
    for (ch, rep) in &results {
        let label = format!("delta={}", num(ch.delta()));
        for (s, run) in rep.runs.iter().enumerate() {
            t.push(vec![
                s.to_string(),
                label.clone(),
                num(ch.eps_fp()),
                num(ch.eps_fn()),
                num(ch.delta()),
                num(*run.trajectory.last().unwrap_or(&0.0)),
                num(run.late_optimal_fraction),
            ]);
        }
        conditions.push(json!({
            "eps_fp": round(ch.eps_fp()),
            "eps_fn": round(ch.eps_fn()),
            "delta": round(ch.delta()),
            "regret": stat(&rep.finals(), rng),
        }));
        let _ = writeln!(
            report,
            "{:<7} {:<7} {:<7} {}",
            num(ch.eps_fp()),
            num(ch.eps_fn()),
            num(ch.delta()),
            num(rep.mean_final())
        );
    }
    let beliefs = results
        .first()
        .and_then(|(_, rep)| rep.runs.first())
        .map(|run| {
            cfg.roster
                .iter()
                .map(|a| a.id.clone())
                .zip(run.final_beliefs.iter().copied())
                .collect()
        })
        .unwrap_or_default();
    let summary = json!({
        "experiment": "regret_sweep",
        "seeds": cfg.seeds,
        "horizon": cfg.horizon,
        "conditions": conditions,
    });
    Ok(ExperimentOutput {
        events: Vec::new(),
        metrics_csv: t.csv(),
        summary,
        beliefs,
        report,
    })
}

fn run_impairment(cfg: &ExperimentConfig, rng: &mut RngStream) -> Result<ExperimentOutput> {
    let impaired = cfg.impaired()?;
    let r = experiments::impairment(&cfg.setup(), &impaired)?;
    let mut t = Table::new(&[
        "seed",
        "condition",
        "phase1_selections",
        "phase2_selections",
        "phase1_quality",
        "phase2_quality",
        "selections_to_drop",
    ]);
    for (s, x) in r.seeds.iter().enumerate() {
        t.push(vec![
            s.to_string(),
            "thompson".into(),
            x.phase_selections[0].to_string(),
            x.phase_selections[1].to_string(),
            num(x.phase_quality[0]),
            num(x.phase_quality[1]),
            x.selections_to_drop
                .map(|d| d.to_string())
                .unwrap_or_default(),
        ]);
    }
    let p1: Vec<f64> = r
        .seeds
        .iter()
        .map(|x| f64::from(x.phase_selections[0]))
        .collect();
    let p2: Vec<f64> = r
        .seeds
        .iter()
        .map(|x| f64::from(x.phase_selections[1]))
        .collect();
    let q1: Vec<f64> = r.seeds.iter().map(|x| x.phase_quality[0]).collect();
    let q2: Vec<f64> = r.seeds.iter().map(|x| x.phase_quality[1]).collect();
    let drops = drop_counts(&r.seeds);
    let len = r.seeds.first().map_or(0, |x| x.belief_trajectory.len());
    let trajectory: Vec<Value> = (0..len)
        .map(|i| {
            round(mean(
                &r.seeds
                    .iter()
                    .map(|x| x.belief_trajectory[i])
                    .collect::<Vec<_>>(),
            ))
        })
        .collect();
    let summary = json!({
        "experiment": "impairment",
        "seeds": cfg.seeds,
        "impaired": impaired,
        "flip_at": r.flip_at,
        "phase1_selections": stat(&p1, rng),
        "phase2_selections": stat(&p2, rng),
        "phase1_quality": stat(&q1, rng),
        "phase2_quality": stat(&q2, rng),
        "median_selections_to_drop": round(median(&drops)),
        "mean_belief_trajectory": trajectory,
    });
    let report = format!(
        "impaired agent {impaired}, flip at task {}\n\
         phase  selections  quality\n\
         1      {:>10}  {}\n\
         2      {:>10}  {}\n\
         median post-flip selections until mean < 0.5: {}\n",
        r.flip_at,
        num(mean(&p1)),
        num(mean(&q1)),
        num(mean(&p2)),
        num(mean(&q2)),
        num(median(&drops)),
    );
    Ok(ExperimentOutput {
        events: r.events,
        metrics_csv: t.csv(),
        summary,
        beliefs: r.final_beliefs,
        report,
    })
}

/// Selections-to-drop per seed; a seed whose belief never dropped counts as
/// infinitely slow.
pub fn drop_counts(seeds: &[experiments::ImpairmentSeed]) -> Vec<f64> {
    seeds
        .iter()
        .map(|x| x.selections_to_drop.map_or(f64::INFINITY, f64::from))
        .collect()
}

fn run_specialization(cfg: &ExperimentConfig, rng: &mut RngStream) -> Result<ExperimentOutput> {
    let expert = cfg.expert();
    let r = experiments::specialization(&cfg.setup(), &expert)?;
    let (first, second) = r.half_means();
    let mut t = Table::new(&[
        "seed",
        "condition",
        "first_half_mean",
        "second_half_mean",
        "slope",
    ]);
    for (s, series) in r.rounds_to_expert.iter().enumerate() {
        t.push(vec![
            s.to_string(),
            "thompson".into(),
            num(first[s]),
            num(second[s]),
            num(ols_slope(series)),
        ]);
    }
    let [slo, shi] = slope_ci(&r.rounds_to_expert, rng);
    let first_stat = stat(&first, rng);
    let second_stat = stat(&second, rng);
    let summary = json!({
        "experiment": "specialization",
        "seeds": cfg.seeds,
        "expert": expert,
        "first_half_rounds": first_stat,
        "second_half_rounds": second_stat,
        "slope_ci95": [round(slo), round(shi)],
    });
    let report = format!(
        "expert {expert}\n\
         half    mean rounds-to-expert\n\
         first   {}\n\
         second  {}\n\
         slope 95% CI [{}, {}]\n",
        num(mean(&first)),
        num(mean(&second)),
        num(slo),
        num(shi),
    );
    Ok(ExperimentOutput {
        events: r.events,
        metrics_csv: t.csv(),
        summary,
        beliefs: r.final_beliefs,
        report,
    })
}

fn run_memory(cfg: &ExperimentConfig, rng: &mut RngStream) -> Result<ExperimentOutput> {
    let reliable = cfg.reliable();
    let r = experiments::memory_priors(&cfg.setup(), &reliable)?;
    let mut t = Table::new(&["seed", "condition", "first_pick_reliable"]);
    for (s, x) in r.seeds.iter().enumerate() {
        t.push(vec![
            s.to_string(),
            "memory".into(),
            u8::from(x.memory_first_pick_reliable).to_string(),
        ]);
    }
    for (s, x) in r.seeds.iter().enumerate() {
        t.push(vec![
            s.to_string(),
            "uniform".into(),
            u8::from(x.uniform_first_pick_reliable).to_string(),
        ]);
    }
    let mem: Vec<f64> = r
        .seeds
        .iter()
        .map(|x| f64::from(u8::from(x.memory_first_pick_reliable)))
        .collect();
    let uni: Vec<f64> = r
        .seeds
        .iter()
        .map(|x| f64::from(u8::from(x.uniform_first_pick_reliable)))
        .collect();
    let diffs: Vec<f64> = mem.iter().zip(&uni).map(|(m, u)| m - u).collect();
    let p = paired_bootstrap_p(&diffs, rng);
    let summary = json!({
        "experiment": "memory",
        "seeds": cfg.seeds,
        "reliable": reliable,
        "memory_first_pick_rate": stat(&mem, rng),
        "uniform_first_pick_rate": stat(&uni, rng),
        "p": round(p),
    });
    let report = format!(
        "first pick is {reliable}\n\
         priors   rate\n\
         memory   {}\n\
         uniform  {}\n\
         paired bootstrap p: {}\n",
        num(mean(&mem)),
        num(mean(&uni)),
        num(p),
    );
    Ok(ExperimentOutput {
        events: r.events,
        metrics_csv: t.csv(),
        summary,
        beliefs: r.final_beliefs,
        report,
    })
}
