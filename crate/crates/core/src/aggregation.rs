//! Selection with evidence over the candidate ledger, and trust-weighted
//! field voting for structured outputs.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::beliefs::AgentId;
use crate::error::{Error, Result};
use crate::judge::combine_scores;

pub const DEFAULT_TRUST_FLOOR: f64 = 0.2;

/// Producer id given to the output of [`fuse_structured`].
pub const FUSED_PRODUCER: &str = "fused";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub payload: String,
    pub prog_score: Option<f64>,
    pub judge_score: Option<f64>,
    pub producer: AgentId,
    pub round: u32,
    /// Result of an external grounding check; `false` excludes the
    /// candidate before selection.
    #[serde(default = "yes")]
    pub evidence_ok: bool,
}

fn yes() -> bool {
    true
}

impl Candidate {
    pub fn score(&self) -> Result<f64> {
        combine_scores(self.prog_score, self.judge_score)
    }
}

fn trust_of(trust: &BTreeMap<AgentId, f64>, id: &AgentId) -> Result<f64> {
    trust
        .get(id)
        .copied()
        .ok_or_else(|| Error::contract(format!("no trust weight for producer `{id}`")))
}

/// Returns the highest-scoring candidate.
///
/// Candidates failing their evidence check, and those whose producer's trust
/// is below `trust_floor`, are dropped first; each filter is skipped if it
/// would leave nothing. Ties go to the more trusted producer, then to the
/// earlier round.
pub fn aggregate_select(
    candidates: &[Candidate],
    trust: &BTreeMap<AgentId, f64>,
    trust_floor: f64,
) -> Result<Candidate> {
    if candidates.is_empty() {
        return Err(Error::contract("aggregate_select over an empty ledger"));
    }
    let mut scored = candidates
        .iter()
        .map(|c| Ok((c, c.score()?, trust_of(trust, &c.producer)?)))
        .collect::<Result<Vec<_>>>()?;

    if scored.iter().any(|(c, _, _)| c.evidence_ok) {
        scored.retain(|(c, _, _)| c.evidence_ok);
    }
    if scored.iter().any(|&(_, _, t)| t >= trust_floor) {
        scored.retain(|&(_, _, t)| t >= trust_floor);
    }

    let best = scored
        .into_iter()
        .max_by(|a, b| {
            a.1.total_cmp(&b.1)
                .then(a.2.total_cmp(&b.2))
                .then(b.0.round.cmp(&a.0.round))
        })
        .expect("non-empty");
    Ok(best.0.clone())
}

/// Atomic field value of a structured output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AtomicValue {
    Number(f64),
    Text(String),
}

impl AtomicValue {
    fn total_cmp(&self, other: &Self) -> Ordering {
        match (self, other) {
            (AtomicValue::Number(a), AtomicValue::Number(b)) => a.total_cmp(b),
            (AtomicValue::Number(_), AtomicValue::Text(_)) => Ordering::Less,
            (AtomicValue::Text(_), AtomicValue::Number(_)) => Ordering::Greater,
            (AtomicValue::Text(a), AtomicValue::Text(b)) => a.cmp(b),
        }
    }
}

impl fmt::Display for AtomicValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AtomicValue::Number(x) => write!(f, "{x}"),
            AtomicValue::Text(s) => f.write_str(s),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StructuredCandidate {
    pub fields: BTreeMap<String, AtomicValue>,
    pub producer: AgentId,
}

fn weights_tie(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs())
}

/// Field-wise competence-weighted vote.
///
/// Each distinct value of a field scores the summed trust of the agents that
/// proposed it. Ties go to the value backed by the single most trusted
/// proposer, then to the smaller value.
pub fn fuse_structured(
    candidates: &[StructuredCandidate],
    trust: &BTreeMap<AgentId, f64>,
) -> Result<StructuredCandidate> {
    let first = candidates
        .first()
        .ok_or_else(|| Error::contract("fuse_structured over no candidates"))?;
    let schema: Vec<&String> = first.fields.keys().collect();
    for c in candidates {
        if c.fields.keys().collect::<Vec<_>>() != schema {
            return Err(Error::contract(format!(
                "candidate from `{}` does not match the field schema",
                c.producer
            )));
        }
    }

    let mut fused = BTreeMap::new();
    for field in schema {
        // (value, summed weight, max single-proposer trust)
        let mut tally: Vec<(&AtomicValue, f64, f64)> = Vec::new();
        for c in candidates {
            let v = &c.fields[field];
            let t = trust_of(trust, &c.producer)?;
            match tally.iter_mut().find(|(x, _, _)| *x == v) {
                Some(entry) => {
                    entry.1 += t;
                    entry.2 = entry.2.max(t);
                }
                None => tally.push((v, t, t)),
            }
        }
        let winner = tally
            .into_iter()
            .max_by(|a, b| {
                let by_weight = if weights_tie(a.1, b.1) {
                    Ordering::Equal
                } else {
                    a.1.total_cmp(&b.1)
                };
                by_weight.then(a.2.total_cmp(&b.2)).then(b.0.total_cmp(a.0))
            })
            .expect("at least one proposer");
        fused.insert(field.clone(), winner.0.clone());
    }
    Ok(StructuredCandidate {
        fields: fused,
        producer: AgentId::new(FUSED_PRODUCER),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cand(score: f64, producer: &str, round: u32) -> Candidate {
        Candidate {
            payload: format!("{producer}@{round}"),
            prog_score: Some(score),
            judge_score: None,
            producer: AgentId::new(producer),
            round,
            evidence_ok: true,
        }
    }

    fn trust(pairs: &[(&str, f64)]) -> BTreeMap<AgentId, f64> {
        pairs.iter().map(|&(k, v)| (AgentId::new(k), v)).collect()
    }

    #[test]
    fn score_tie_goes_to_more_trusted() {
        let cs = [cand(80.0, "a", 1), cand(95.0, "b", 2), cand(95.0, "c", 3)];
        let t = trust(&[("a", 0.9), ("b", 0.6), ("c", 0.8)]);
        assert_eq!(
            aggregate_select(&cs, &t, 0.2).unwrap().producer,
            AgentId::new("c")
        );
    }

    #[test]
    fn full_tie_goes_to_earlier_round() {
        let cs = [cand(70.0, "a", 3), cand(70.0, "a", 1), cand(70.0, "a", 2)];
        let t = trust(&[("a", 0.5)]);
        assert_eq!(aggregate_select(&cs, &t, 0.2).unwrap().round, 1);
    }

    #[test]
    fn singleton_is_returned() {
        let cs = [cand(10.0, "a", 1)];
        let t = trust(&[("a", 0.01)]);
        assert_eq!(aggregate_select(&cs, &t, 0.2).unwrap(), cs[0]);
    }

    #[test]
    fn floor_filters_unless_it_would_empty() {
        let cs = [cand(99.0, "bad", 1), cand(60.0, "ok", 2)];
        let t = trust(&[("bad", 0.1), ("ok", 0.5)]);
        assert_eq!(
            aggregate_select(&cs, &t, 0.2).unwrap().producer,
            AgentId::new("ok")
        );
        let t = trust(&[("bad", 0.1), ("ok", 0.15)]);
        assert_eq!(
            aggregate_select(&cs, &t, 0.2).unwrap().producer,
            AgentId::new("bad")
        );
    }

    #[test]
    fn evidence_flag_excludes() {
        let mut top = cand(99.0, "a", 1);
        top.evidence_ok = false;
        let cs = [top, cand(50.0, "b", 2)];
        let t = trust(&[("a", 0.9), ("b", 0.9)]);
        assert_eq!(
            aggregate_select(&cs, &t, 0.2).unwrap().producer,
            AgentId::new("b")
        );
    }

    #[test]
    fn aggregate_errors() {
        assert!(aggregate_select(&[], &trust(&[]), 0.2).is_err());
        assert!(aggregate_select(&[cand(1.0, "x", 1)], &trust(&[]), 0.2).is_err());
    }

    fn sc(fields: &[(&str, AtomicValue)], producer: &str) -> StructuredCandidate {
        StructuredCandidate {
            fields: fields
                .iter()
                .map(|(k, v)| (k.to_string(), v.clone()))
                .collect(),
            producer: AgentId::new(producer),
        }
    }

    #[test]
    fn weighted_vote() {
        let y = |v: f64| [("year", AtomicValue::Number(v))];
        let cs = [
            sc(&y(2021.0), "a"),
            sc(&y(2020.0), "b"),
            sc(&y(2020.0), "c"),
        ];
        let t = trust(&[("a", 0.9), ("b", 0.4), ("c", 0.4)]);
        let out = fuse_structured(&cs, &t).unwrap();
        assert_eq!(out.fields["year"], AtomicValue::Number(2021.0));
        assert_eq!(out.producer, AgentId::new(FUSED_PRODUCER));
    }

    #[test]
    fn unanimity_wins_regardless_of_weight() {
        let f = [("d", AtomicValue::Text("2020-01-01".into()))];
        let cs = [sc(&f, "a"), sc(&f, "b")];
        let t = trust(&[("a", 0.01), ("b", 0.02)]);
        assert_eq!(fuse_structured(&cs, &t).unwrap().fields["d"], f[0].1);
    }

    #[test]
    fn equal_weight_goes_to_strongest_proposer() {
        let v = |s: &str| [("tok", AtomicValue::Text(s.into()))];
        // "zeta" 0.5 from one agent; "alpha" 0.3 + 0.2 from two.
        let cs = [
            sc(&v("alpha"), "b"),
            sc(&v("zeta"), "a"),
            sc(&v("alpha"), "c"),
        ];
        let t = trust(&[("a", 0.5), ("b", 0.3), ("c", 0.2)]);
        assert_eq!(
            fuse_structured(&cs, &t).unwrap().fields["tok"],
            AtomicValue::Text("zeta".into())
        );
    }

    #[test]
    fn full_tie_goes_to_smaller_value() {
        let v = |s: &str| [("tok", AtomicValue::Text(s.into()))];
        let cs = [sc(&v("b"), "x"), sc(&v("a"), "y")];
        let t = trust(&[("x", 0.5), ("y", 0.5)]);
        assert_eq!(
            fuse_structured(&cs, &t).unwrap().fields["tok"],
            AtomicValue::Text("a".into())
        );
    }

    #[test]
    fn schema_mismatch() {
        let cs = [
            sc(&[("a", AtomicValue::Number(1.0))], "x"),
            sc(&[("b", AtomicValue::Number(1.0))], "y"),
        ];
        let t = trust(&[("x", 0.5), ("y", 0.5)]);
        assert!(fuse_structured(&cs, &t).is_err());
        assert!(fuse_structured(&[], &t).is_err());
    }

    fn arb_ledger() -> impl Strategy<Value = (Vec<Candidate>, BTreeMap<AgentId, f64>)> {
        (
            prop::collection::vec((0u32..5, 0usize..4), 1..12),
            prop::collection::vec(0.01f64..0.99, 4),
        )
            .prop_map(|(rows, ts)| {
                let names = ["a", "b", "c", "d"];
                let cands = rows
                    .into_iter()
                    .enumerate()
                    .map(|(i, (s, p))| cand(s as f64 * 20.0, names[p], i as u32 + 1))
                    .collect();
                let t = names
                    .iter()
                    .zip(ts)
                    .map(|(n, t)| (AgentId::new(*n), t))
                    .collect();
                (cands, t)
            })
    }

    proptest! {
        #[test]
        fn never_returns_dominated_candidate((cands, t) in arb_ledger(), floor in 0.0f64..0.5) {
            let best = aggregate_select(&cands, &t, floor).unwrap();
            let any_above = cands.iter().any(|c| t[&c.producer] >= floor);
            for c in &cands {
                if !any_above || t[&c.producer] >= floor {
                    prop_assert!(best.score().unwrap() >= c.score().unwrap());
                }
            }
        }

        #[test]
        fn trust_scaling_is_invariant((cands, t) in arb_ledger(), k in 0.1f64..10.0) {
            let scaled: BTreeMap<_, _> = t.iter().map(|(id, v)| (id.clone(), v * k)).collect();
            prop_assert_eq!(aggregate_select(&cands, &t, 0.0).unwrap(), aggregate_select(&cands, &scaled, 0.0).unwrap());

            let structured: Vec<_> = cands.iter().map(|c| sc(&[("f", AtomicValue::Number(c.prog_score.unwrap()))], c.producer.as_str())).collect();
            prop_assert_eq!(fuse_structured(&structured, &t).unwrap(), fuse_structured(&structured, &scaled).unwrap());
        }

        #[test]
        fn fusion_permutation_invariant(rows in prop::collection::vec((0u32..3, 0usize..4), 1..10), ts in prop::collection::vec(0.01f64..0.99, 4), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let names = ["a", "b", "c", "d"];
            let t: BTreeMap<_, _> = names.iter().zip(ts).map(|(n, t)| (AgentId::new(*n), t)).collect();
            let cs: Vec<_> = rows.iter().map(|&(v, p)| sc(&[("f", AtomicValue::Number(v as f64))], names[p])).collect();
            let mut shuffled = cs.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            prop_assert_eq!(fuse_structured(&cs, &t).unwrap(), fuse_structured(&shuffled, &t).unwrap());
        }
    }
}
