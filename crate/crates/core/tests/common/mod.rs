#![allow(dead_code)]

use std::cell::RefCell;
use std::collections::VecDeque;
use std::rc::Rc;

use beliefroute::controller::{Refiner, SelectionRecord};
use beliefroute::events::Event;
use beliefroute::memory::MemoryStore;
use beliefroute::rng::ScriptedDraws;
use beliefroute::{
    Agent, AgentFault, AgentId, AgentOutput, BeliefTable, Candidate, ChannelJudge,
    ControllerConfig, EpisodeContext, EpisodeResult, EpisodeRunner, JudgeChannel, RngStream,
    TaskEnvelope, ThompsonSelector,
};

/// Answers from a fixed script: `(prog_score, true_outcome)` per call, or a
/// fault for `None`.
pub struct ScriptedAgent {
    pub id: AgentId,
    pub script: VecDeque<Option<(Option<f64>, bool)>>,
    pub cost: f64,
    pub seen: Rc<RefCell<Vec<TaskEnvelope>>>,
}

impl ScriptedAgent {
    pub fn new(id: &str, script: impl IntoIterator<Item = Option<(Option<f64>, bool)>>) -> Self {
        Self {
            id: AgentId::new(id),
            script: script.into_iter().collect(),
            cost: 1.0,
            seen: Rc::default(),
        }
    }
}

impl Agent for ScriptedAgent {
    fn id(&self) -> &AgentId {
        &self.id
    }

    fn invoke(&mut self, task: &TaskEnvelope) -> Result<AgentOutput, AgentFault> {
        self.seen.borrow_mut().push(task.clone());
        match self.script.pop_front().expect("agent script exhausted") {
            Some((prog_score, ok)) => Ok(AgentOutput {
                payload: format!("{}@{}", self.id, task.depth),
                usage: self.cost,
                prog_score,
                ground_truth: Some(ok),
            }),
            None => Err(AgentFault {
                message: "boom".into(),
                usage: self.cost,
            }),
        }
    }
}

/// Records each call and returns a fixed rewrite.
pub struct RecordingRefiner {
    pub calls: RefCell<Vec<(u32, Option<AgentId>, String)>>,
}

impl Refiner for RecordingRefiner {
    fn refine(
        &self,
        task: &TaskEnvelope,
        candidate: Option<&Candidate>,
        rationale: &str,
    ) -> TaskEnvelope {
        self.calls.borrow_mut().push((
            task.depth,
            candidate.map(|c| c.producer.clone()),
            rationale.to_owned(),
        ));
        TaskEnvelope {
            query: format!("rewritten {}", self.calls.borrow().len()),
            embedding: vec![9.0, 9.0],
            depth: task.depth,
            refinement_count: task.refinement_count + 1,
            critiques: vec!["custom".into()],
        }
    }
}

pub struct Scripted {
    pub result: EpisodeResult,
    pub events: Vec<Event>,
    pub store: MemoryStore,
    pub draws_left: usize,
}

/// Runs one Thompson episode with injected Beta draws and a perfect channel.
pub fn run_scripted(
    agents: Vec<ScriptedAgent>,
    draws: Vec<f64>,
    cfg: &ControllerConfig,
    refiner: &dyn Refiner,
) -> beliefroute::Result<Scripted> {
    let mut roster: Vec<Box<dyn Agent>> = agents
        .into_iter()
        .map(|a| Box::new(a) as Box<dyn Agent>)
        .collect();
    let mut draws = ScriptedDraws::new(draws);
    let mut selector = ThompsonSelector::default();
    let mut judge = ChannelJudge::new(
        cfg.channel,
        cfg.judge_threshold,
        cfg.ensemble,
        &RngStream::new(0, 0),
    )?;
    let mut events = Vec::new();
    let mut store = MemoryStore::new();
    let mut persistent = BeliefTable::new();
    let result = EpisodeRunner {
        cfg,
        policy_name: "thompson",
        selector: &mut selector,
        draws: &mut draws,
        judge: &mut judge,
        refiner,
        sink: &mut events,
    }
    .run(
        TaskEnvelope::new("q", vec![1.0, 0.0]),
        &mut roster,
        &mut persistent,
        &mut store,
        EpisodeContext {
            episode: 0,
            now: 0.0,
        },
    )?;
    Ok(Scripted {
        result,
        events,
        store,
        draws_left: draws.remaining(),
    })
}

pub fn trace_config() -> ControllerConfig {
    ControllerConfig {
        max_depth: 5,
        budget: 10.0,
        cooldown: 1,
        plateau_window: 3,
        judge_threshold: 85.0,
        channel: JudgeChannel::perfect(),
        ..ControllerConfig::default()
    }
}

/// The three-round scripted scenario: two failures then a programmatic pass.
pub fn trace_scenario() -> beliefroute::Result<Scripted> {
    let agents = vec![
        ScriptedAgent::new("a1", [Some((Some(55.0), false))]),
        ScriptedAgent::new("a2", [Some((Some(40.0), false))]),
        ScriptedAgent::new("a3", [Some((Some(90.0), true))]),
    ];
    let draws = vec![0.3, 0.6, 0.5, 0.7, 0.2, 0.4, 0.45];
    run_scripted(
        agents,
        draws,
        &trace_config(),
        &beliefroute::controller::AppendCritique,
    )
}

pub fn ids(sel: &[SelectionRecord]) -> Vec<&str> {
    sel.iter().map(|s| s.agent.as_str()).collect()
}

/// Every discrepancy between the scripted trace and the hand-computed one.
pub fn trace_discrepancies(run: &Scripted) -> Vec<String> {
    use beliefroute::events::EpisodeStatus;
    use beliefroute::judge::VerdictSource;

    let mut bad = Vec::new();
    let mut check = |ok: bool, what: String| {
        if !ok {
            bad.push(what);
        }
    };
    let r = &run.result;
    check(
        r.status == EpisodeStatus::Success,
        format!("status {:?}", r.status),
    );
    check(
        ids(&r.selections) == ["a2", "a1", "a3"],
        format!("selections {:?}", ids(&r.selections)),
    );
    let ys: Vec<bool> = r.selections.iter().map(|s| s.verdict.y()).collect();
    check(ys == [false, false, true], format!("verdicts {ys:?}"));
    check(
        r.selections[2].verdict.source == VerdictSource::Programmatic
            && r.selections[2].verdict.rationale == "programmatic pass",
        format!("round 3 verdict {:?}", r.selections[2].verdict),
    );
    check(
        r.rounds_used == 3 && r.agent_calls == 3,
        format!("rounds {} calls {}", r.rounds_used, r.agent_calls),
    );
    check(r.cost_spent == 3.0, format!("spent {}", r.cost_spent));
    let ans = r.answer.as_ref();
    check(
        ans.is_some_and(|a| {
            a.producer.as_str() == "a3" && a.round == 3 && a.prog_score == Some(90.0)
        }),
        format!("answer {ans:?}"),
    );
    check(
        run.store.len() == 3,
        format!("memory records {}", run.store.len()),
    );
    check(
        run.draws_left == 0,
        format!("{} draws unused", run.draws_left),
    );

    let expected = [
        ("a2", 1.0, 2.0, 1.0, [0u32, 1, 0]),
        ("a1", 1.0, 2.0, 2.0, [1, 0, 0]),
        ("a3", 2.0, 1.0, 3.0, [1, 0, 0]),
    ];
    let rounds: Vec<&Event> = run
        .events
        .iter()
        .filter(|e| matches!(e, Event::Round { .. }))
        .collect();
    check(rounds.len() == 3, format!("{} round events", rounds.len()));
    for (i, (e, (agent_id, a, b, spent_after, cds))) in rounds.iter().zip(expected).enumerate() {
        if let Event::Round {
            agent,
            alpha_after,
            beta_after,
            spent,
            cooldowns,
            ..
        } = e
        {
            let got: Vec<u32> = cooldowns.values().copied().collect();
            check(
                agent.as_str() == agent_id && *alpha_after == a && *beta_after == b && *spent == spent_after && got == cds,
                format!("round {}: {agent} ({alpha_after},{beta_after}) spent {spent} cooldowns {got:?}", i + 1),
            );
        }
    }
    let fb = |id: &str| {
        let b = r.final_beliefs[&AgentId::new(id)];
        (b.alpha, b.beta)
    };
    check(
        fb("a1") == (1.0, 2.0) && fb("a2") == (1.0, 2.0) && fb("a3") == (2.0, 1.0),
        format!("final beliefs {:?}", r.final_beliefs),
    );
    bad
}
