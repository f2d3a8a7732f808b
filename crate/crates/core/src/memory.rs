//! Append-only outcome memory and memory-aware prior initialization.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::beliefs::{AgentId, BeliefState, BeliefTable};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kernel {
    #[default]
    Cosine,
    Dot,
    /// `exp(-gamma * |a - b|^2)` with `gamma` from [`PriorConfig::rbf_gamma`].
    Rbf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorConfig {
    pub alpha0: f64,
    pub beta0: f64,
    /// Temporal decay rate applied as `exp(-lambda * (now - t))`.
    pub lambda: f64,
    pub kernel: Kernel,
    pub rbf_gamma: f64,
    /// Seed each episode's priors from memory instead of the persistent
    /// belief table.
    pub use_memory: bool,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self {
            alpha0: 1.0,
            beta0: 1.0,
            lambda: 0.1,
            kernel: Kernel::Cosine,
            rbf_gamma: 1.0,
            use_memory: false,
        }
    }
}

impl PriorConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("prior.alpha0", self.alpha0), ("prior.beta0", self.beta0)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::config(name, format!("must be positive, got {v}")));
            }
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::config("prior.lambda", "must be non-negative"));
        }
        if !(self.rbf_gamma.is_finite() && self.rbf_gamma > 0.0) {
            return Err(Error::config("prior.rbf_gamma", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemoryRecord {
    pub embedding: Vec<f64>,
    pub agent: AgentId,
    #[serde(with = "outcome_bit")]
    pub outcome: bool,
    pub rationale: String,
    #[serde(rename = "t")]
    pub timestamp: f64,
}

mod outcome_bit {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &bool, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u8(u8::from(*v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<bool, D::Error> {
        match u8::deserialize(d)? {
            0 => Ok(false),
            1 => Ok(true),
            other => Err(serde::de::Error::custom(format!(
                "outcome must be 0 or 1, got {other}"
            ))),
        }
    }
}

/// Kernel similarity, clamped to be non-negative.
pub fn similarity(a: &[f64], b: &[f64], kernel: Kernel, rbf_gamma: f64) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::contract(format!(
            "embedding dimension mismatch: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let raw = match kernel {
        Kernel::Dot => dot,
        Kernel::Cosine => {
            let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
            if na == 0.0 || nb == 0.0 {
                return Err(Error::contract("cosine similarity of a zero vector"));
            }
            (dot / (na * nb)).clamp(-1.0, 1.0)
        }
        Kernel::Rbf => {
            let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
            (-rbf_gamma * d2).exp()
        }
    };
    Ok(raw.max(0.0))
}

/// Outcome memory. Records share one embedding dimension and arrive in
/// non-decreasing time order.
#[derive(Clone, Debug, Default)]
pub struct MemoryStore {
    records: Vec<MemoryRecord>,
}

impl MemoryStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn dim(&self) -> Option<usize> {
        self.records.first().map(|r| r.embedding.len())
    }

    pub fn latest_timestamp(&self) -> Option<f64> {
        self.records.last().map(|r| r.timestamp)
    }

    pub fn records(&self) -> &[MemoryRecord] {
        &self.records
    }

    pub fn append(&mut self, record: MemoryRecord) -> Result<()> {
        if let Some(d) = self.dim() {
            if record.embedding.len() != d {
                return Err(Error::contract(format!(
                    "record dimension {} does not match store dimension {d}",
                    record.embedding.len()
                )));
            }
        }
        if !record.timestamp.is_finite() || record.timestamp < 0.0 {
            return Err(Error::contract(
                "record timestamp must be finite and non-negative",
            ));
        }
        if let Some(t) = self.latest_timestamp() {
            if record.timestamp < t {
                return Err(Error::contract(format!(
                    "timestamp {} precedes latest {t}",
                    record.timestamp
                )));
            }
        }
        self.records.push(record);
        Ok(())
    }

    /// Appends every record of `other` in order.
    pub fn extend(&mut self, other: impl IntoIterator<Item = MemoryRecord>) -> Result<()> {
        for r in other {
            self.append(r)?;
        }
        Ok(())
    }

    pub fn write_jsonl(&self, mut w: impl Write) -> Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl(r: impl BufRead) -> Result<Self> {
        let mut store = MemoryStore::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: MemoryRecord = serde_json::from_str(&line).map_err(|e| Error::Corrupt {
                line: i + 1,
                message: e.to_string(),
            })?;
            store.append(rec).map_err(|e| Error::Corrupt {
                line: i + 1,
                message: e.to_string(),
            })?;
        }
        Ok(store)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_jsonl(f)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_jsonl(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

/// Seeds Beta priors for `roster` from similarity- and recency-weighted
/// memory. Each record contributes weight `K(query, x_m) * exp(-lambda * (now - t_m))`
/// to its own agent's alpha (success) or beta (failure). Records of agents
/// outside the roster are ignored.
pub fn init_priors(
    query: &[f64],
    records: &[MemoryRecord],
    now: f64,
    cfg: &PriorConfig,
    roster: &[AgentId],
) -> Result<BeliefTable> {
    cfg.validate()?;
    let mut table: BeliefTable = roster
        .iter()
        .map(|id| (id.clone(), BeliefState::new(cfg.alpha0, cfg.beta0)))
        .map(|(id, b)| b.map(|b| (id, b)))
        .collect::<Result<_>>()?;
    for m in records {
        if m.timestamp > now {
            return Err(Error::contract(format!(
                "memory record at t={} is later than now={now}",
                m.timestamp
            )));
        }
        let Some(belief) = table.get_mut(&m.agent) else {
            continue;
        };
        let k = similarity(query, &m.embedding, cfg.kernel, cfg.rbf_gamma)?;
        let w = k * (-cfg.lambda * (now - m.timestamp)).exp();
        if m.outcome {
            belief.alpha += w;
        } else {
            belief.beta += w;
        }
    }
    Ok(table)
}
