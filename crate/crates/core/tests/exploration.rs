mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use capex_core::engine::Engine;
use capex_core::exploration::validate::{CONSTRAINTS_NOT_MET, INVALID_AGENT, SYNTAX_ERROR};
use capex_core::exploration::{
    build_input, candidate_factors, explore, merge_capabilities, parse_output, revoke_capabilities, score_candidates,
    serialize_output, validate, BuiltinPolicy, DecisionPolicy, ExplorationError, ExplorationOutput, ExplorationParams,
    PolicyInput, ScoringConfig,
};
use capex_core::ids::{AgentId, EventId, PartId};
use capex_core::knowledge::{check_constraints, Disruption, KnowledgeSnapshot};
use capex_core::model::{EventKind, ProcessEvent};
use capex_core::resource::ResourceStatus;
use common::*;
use proptest::prelude::*;

/// Answers from a fixed script and records the feedback it was given.
struct Scripted {
    answers: Vec<String>,
    calls: usize,
    feedback: Vec<Option<String>>,
}

impl Scripted {
    fn new(answers: &[String]) -> Self {
        Self { answers: answers.to_vec(), calls: 0, feedback: Vec::new() }
    }
}

impl DecisionPolicy for Scripted {
    fn name(&self) -> &str {
        "scripted"
    }

    fn propose(&mut self, _: &PolicyInput, feedback: Option<&str>) -> Result<String, ExplorationError> {
        self.feedback.push(feedback.map(str::to_string));
        let a = self.answers[self.calls.min(self.answers.len() - 1)].clone();
        self.calls += 1;
        Ok(a)
    }
}

/// Facility with `broken` down and a snapshot taken right after.
fn broken_snapshot(name: &str, broken: &str) -> (Facility, Disruption, KnowledgeSnapshot, ExplorationParams) {
    let s = scenario(name);
    let mut f = facility(&s);
    f.agents.get_mut(&aid(broken)).unwrap().apply_status(ResourceStatus::broken(1, 100));
    let d = disruption_of(&f, broken, 1);
    let snap = KnowledgeSnapshot::capture(
        1,
        f.agents.values(),
        200,
        BTreeMap::new(),
        Arc::new(f.env.clone()),
        Arc::new(s.constraints.clone()),
    );
    let params = ExplorationParams { constraints: s.constraints.clone(), max_iterations: 3 };
    (f, d, snap, params)
}

fn answer(agent: &str, caps: &[ProcessEvent]) -> String {
    serialize_output(&ExplorationOutput {
        exploration_agent: aid(agent),
        explored_capabilities: caps.to_vec(),
        rationale: "scripted".into(),
    })
}

fn robot2_caps(f: &Facility) -> Vec<ProcessEvent> {
    f.agents[&aid("Robot 2")].pristine().events.values().cloned().collect()
}

fn input_for(d: &Disruption, snap: &KnowledgeSnapshot, params: &ExplorationParams) -> PolicyInput {
    let factors = candidate_factors(d, snap);
    let ranking = score_candidates(&factors, &ScoringConfig::default()).unwrap();
    build_input(d, snap, &factors, &ranking, params)
}

#[test]
fn worked_example_selects_robot_one() {
    let (_, d, snap, params) = broken_snapshot("example3robot", "Robot 2");
    let x = explore(&d, &snap, &mut BuiltinPolicy::new(), &params, &ScoringConfig::default()).unwrap();
    assert_eq!(x.output.exploration_agent, aid("Robot 1"));
    let ids: BTreeSet<&str> = x.output.explored_capabilities.iter().map(|c| c.id.as_str()).collect();
    assert!(ids.is_superset(&BTreeSet::from(["σ3", "σ4"])));
    assert_eq!(x.rounds, 1);
    // Robot 3 is the only other robot and ranks below
    assert_eq!(x.ranking.iter().map(|(a, _)| a.as_str()).collect::<Vec<_>>(), ["Robot 1", "Robot 3"]);
}

#[test]
fn builtin_output_is_reproducible() {
    let (_, d, snap, params) = broken_snapshot("example3robot", "Robot 2");
    let input = input_for(&d, &snap, &params);
    let a = BuiltinPolicy::new().propose(&input, None).unwrap();
    let b = BuiltinPolicy::new().propose(&input, None).unwrap();
    assert_eq!(a, b);
    let o = parse_output(&a).unwrap();
    assert_eq!(o.exploration_agent, aid("Robot 1"));
    let d_events: BTreeSet<EventId> = d.affected_events.clone();
    let got: BTreeSet<EventId> = o.explored_capabilities.iter().map(|c| c.id.clone()).collect();
    assert_eq!(got, d_events);
    let x1 = explore(&d, &snap, &mut BuiltinPolicy::new(), &params, &ScoringConfig::default()).unwrap();
    let x2 = explore(&d, &snap, &mut BuiltinPolicy::new(), &params, &ScoringConfig::default()).unwrap();
    assert_eq!(x1, x2);
}

#[test]
fn parse_robot_one_with_two_events() {
    let text = r#"{"exploration_agent": "Robot 1", "explored_capabilities": [
        {"id": "σ3", "kind": "transport", "duration": 10, "params": {"reach": 2.0}},
        {"id": "σ4", "kind": "transport", "duration": 10, "params": {"reach": 2.5}}
    ], "rationale": "closest robot with spare reach"}"#;
    let o = parse_output(text).unwrap();
    assert_eq!(o.exploration_agent, aid("Robot 1"));
    assert_eq!(o.explored_capabilities.iter().map(|c| c.id.as_str()).collect::<Vec<_>>(), ["σ3", "σ4"]);
    assert!(parse_output("").is_err());
    assert!(parse_output("Robot 1 should take over").is_err());
}

#[test]
fn malformed_answers_get_syntax_feedback() {
    let (f, d, snap, params) = broken_snapshot("example3robot", "Robot 2");
    let input = input_for(&d, &snap, &params);
    let mut p = Scripted::new(&["I pick Robot 1".to_string(), answer("Robot 1", &robot2_caps(&f))]);
    let v = validate(&mut p, &input, &params, &snap, &d.disrupted_agent);
    assert!(v.valid);
    assert_eq!(v.rounds, 2);
    assert_eq!(p.feedback, vec![None, Some(SYNTAX_ERROR.to_string())]);
}

#[test]
fn unknown_agent_exhausts_rounds() {
    let (f, d, snap, params) = broken_snapshot("example3robot", "Robot 2");
    let input = input_for(&d, &snap, &params);
    let mut p = Scripted::new(&[answer("Robot 9", &robot2_caps(&f))]);
    let v = validate(&mut p, &input, &params, &snap, &d.disrupted_agent);
    assert!(!v.valid);
    assert_eq!(v.rounds, 3);
    assert_eq!(p.calls, 3);
    assert_eq!(v.feedback.as_deref(), Some(INVALID_AGENT));
    // the disrupted agent itself is not a valid choice either
    let mut p = Scripted::new(&[answer("Robot 2", &robot2_caps(&f))]);
    assert_eq!(validate(&mut p, &input, &params, &snap, &d.disrupted_agent).feedback.as_deref(), Some(INVALID_AGENT));
}

#[test]
fn in_bounds_answer_passes_first_round() {
    let (f, d, snap, params) = broken_snapshot("example3robot", "Robot 2");
    let input = input_for(&d, &snap, &params);
    let mut p = Scripted::new(&[answer("Robot 1", &robot2_caps(&f))]);
    let v = validate(&mut p, &input, &params, &snap, &d.disrupted_agent);
    assert!(v.valid && v.feedback.is_none());
    assert_eq!(v.rounds, 1);
}

/// First proposal puts Robot 3 (reach limit 2.0) on Robot 2's events; the
/// second, after feedback, proposes Robot 1.
#[test]
fn bounds_violation_fixed_on_second_round() {
    let (f, d, snap, params) = broken_snapshot("example3robot", "Robot 2");
    let input = input_for(&d, &snap, &params);
    let caps = robot2_caps(&f);
    let mut p = Scripted::new(&[answer("Robot 3", &caps), answer("Robot 1", &caps)]);
    let v = validate(&mut p, &input, &params, &snap, &d.disrupted_agent);
    assert!(v.valid);
    assert_eq!(v.rounds, 2);
    assert_eq!(p.calls, 2);
    let fb = p.feedback[1].clone().unwrap();
    assert!(fb.starts_with(CONSTRAINTS_NOT_MET), "{fb}");
    assert!(fb.contains("reach (operational)"), "{fb}");
}

#[test]
fn unknown_capability_is_a_syntax_error() {
    let (_, d, snap, params) = broken_snapshot("example3robot", "Robot 2");
    let input = input_for(&d, &snap, &params);
    let bogus = ProcessEvent { id: eid("σ99"), kind: EventKind::Transport, duration: 10, params: BTreeMap::new() };
    let mut p = Scripted::new(&[answer("Robot 1", &[bogus])]);
    let v = validate(&mut p, &input, &params, &snap, &d.disrupted_agent);
    assert!(!v.valid);
    assert!(v.feedback.unwrap().starts_with(SYNTAX_ERROR));
}

#[test]
fn no_candidates_fails() {
    // Machine 1 has no operational machine neighbour able to help once Machine 2 is also down
    let (mut f, d, _, params) = broken_snapshot("example3robot", "Machine 1");
    f.agents.get_mut(&aid("Machine 2")).unwrap().apply_status(ResourceStatus::broken(1, 100));
    let snap = KnowledgeSnapshot::capture(1, f.agents.values(), 200, BTreeMap::new(), Arc::new(f.env.clone()), Arc::new(BTreeMap::new()));
    let err = explore(&d, &snap, &mut BuiltinPolicy::new(), &params, &ScoringConfig::default()).unwrap_err();
    assert!(matches!(err, ExplorationError::ExplorationFailed { rounds: 0, .. }), "{err:?}");
}

/// With M12 down the chosen robot's merged capabilities reconnect cell 1 to
/// every marked state in cell 2, checked by a search that ignores M12.
#[test]
fn m12_takeover_reconnects_cell_two() {
    let s = scenario("waferfab20");
    let (mut f, d, snap, params) = broken_snapshot("waferfab20", "M12");
    let x = explore(&d, &snap, &mut BuiltinPolicy::new(), &params, &ScoringConfig::default()).unwrap();
    let e = x.output.exploration_agent.clone();
    assert_ne!(e, aid("M12"));
    assert!(f.agents[&e].is_operational());
    merge_capabilities(&mut f.agents, &mut f.env, &mut f.tables, &x.output, &d);

    let owner = f.env.event_owner.clone();
    let seen = reachable(&f.env.model.transitions, &sid("ENTRY"), |ev| owner[ev] != aid("M12"));
    let cell2_marked: Vec<_> = s
        .states
        .iter()
        .filter(|st| st.cell == Some(2) && !st.props.is_empty())
        .map(|st| st.id.clone())
        .collect();
    assert!(!cell2_marked.is_empty());
    for m in &cell2_marked {
        assert!(seen.contains(m), "{m} unreachable");
    }
    let merged = f.agents[&e].model();
    assert!(merged.events.contains_key(&eid("M12:T12a>T12b")));
}

#[test]
fn remerging_owned_events_changes_nothing() {
    let s = scenario("example3robot");
    let mut f = facility(&s);
    let d = disruption_of(&f, "Robot 2", 1);
    let out = takeover(&f, "Robot 2", "Robot 1");
    merge_capabilities(&mut f.agents, &mut f.env, &mut f.tables, &out, &d);
    let once = f.agents[&aid("Robot 1")].model().clone();
    let tables = f.tables.clone();
    merge_capabilities(&mut f.agents, &mut f.env, &mut f.tables, &out, &d);
    assert_eq!(f.agents[&aid("Robot 1")].model(), &once);
    assert_eq!(f.tables, tables);
    // the worked-example merge routes Inventory transit to Machine 1
    assert_eq!(once.transitions.get(&(sid("X8"), eid("σ8"))), Some(&sid("X5")));
    assert!(f.tables[&aid("Machine 1")].entries[&sid("X5")].contains(&aid("Robot 1")));
}

/// After M12's repair, B-robot models are back to their originals while the
/// parts they carried keep the history entries they reported.
#[test]
fn revoke_keeps_completed_history() {
    let s = scenario("waferfab20");
    let mut policy = BuiltinPolicy::new();
    let mut engine = Engine::new(&s, 0, &mut policy).unwrap();
    while engine.now() <= 1450 {
        engine.step();
    }
    let e = engine.metrics().explorations[0].exploration_agent.clone().unwrap();
    assert_eq!(engine.agents()[&e].model(), engine.agents()[&e].pristine());
    assert_eq!(engine.agents()[&aid("M12")].model(), engine.agents()[&aid("M12")].pristine());
    let m = {
        while !engine.finished() {
            engine.step();
        }
        engine.into_metrics()
    };
    let carried = m
        .histories
        .values()
        .flat_map(|h| h.reporting_agent.iter())
        .filter(|(st, a)| **a == e && (st.as_str() == "T12a" || st.as_str() == "T12b"))
        .count();
    assert!(carried > 0, "{e} never reported a transfer-buffer arrival");
}

#[test]
fn merged_capabilities_respect_bounds_in_runs() {
    let s = scenario("waferfab20");
    let m = run_named("waferfab20", true, 0);
    assert!(!m.merges.is_empty());
    for audit in &m.merges {
        let c = s.constraints.get(&audit.record.exploration_agent).cloned().unwrap_or_default();
        for ev in &audit.record.events {
            let cap = &audit.environment.model.events[ev];
            assert!(check_constraints(&c, cap).is_empty(), "{ev} on {}", audit.record.exploration_agent);
        }
    }
}

fn arb_output() -> impl Strategy<Value = ExplorationOutput> {
    (
        "[A-Za-z0-9 ]{1,12}",
        prop::collection::vec(
            (
                "[a-zσ0-9:>]{1,8}",
                any::<bool>(),
                1u64..500,
                prop::collection::btree_map("[a-z]{1,6}", -1e6f64..1e6, 0..3),
            ),
            1..4,
        ),
        ".{0,20}",
    )
        .prop_map(|(agent, caps, rationale)| ExplorationOutput {
            exploration_agent: AgentId::new(agent),
            explored_capabilities: caps
                .into_iter()
                .map(|(id, t, duration, params)| ProcessEvent {
                    id: EventId::new(id),
                    kind: if t { EventKind::Transport } else { EventKind::Process },
                    duration,
                    params,
                })
                .collect(),
            rationale,
        })
}

proptest! {
    #[test]
    fn serialize_parse_round_trip(o in arb_output()) {
        let text = serialize_output(&o);
        let back = parse_output(&text).unwrap();
        prop_assert_eq!(&back, &o);
        prop_assert_eq!(serialize_output(&back), text);
    }

    /// Merging any subset of B3's events into any other robot grows the event
    /// set by exactly the events it did not already have.
    #[test]
    fn merge_event_count(mask in prop::collection::vec(any::<bool>(), 64), target in 0usize..8) {
        let s = scenario("waferfab20");
        let mut f = facility(&s);
        let robots: Vec<&str> = vec!["B1", "B2", "B4", "B5", "B6", "M12", "M34", "M56"];
        let to = robots[target];
        let d = disruption_of(&f, "B3", 1);
        let caps: Vec<ProcessEvent> = f.agents[&aid("B3")]
            .pristine()
            .events
            .values()
            .zip(mask.iter().cycle())
            .filter(|(_, keep)| **keep)
            .map(|(c, _)| c.clone())
            .collect();
        prop_assume!(!caps.is_empty());
        let before: BTreeSet<EventId> = f.agents[&aid(to)].model().events.keys().cloned().collect();
        let new: BTreeSet<EventId> = caps.iter().map(|c| c.id.clone()).filter(|e| !before.contains(e)).collect();
        let out = ExplorationOutput { exploration_agent: aid(to), explored_capabilities: caps, rationale: String::new() };
        let rec = merge_capabilities(&mut f.agents, &mut f.env, &mut f.tables, &out, &d);
        prop_assert_eq!(f.agents[&aid(to)].model().events.len(), before.len() + new.len());
        let restored = revoke_capabilities(&mut f.agents, &mut f.env, &mut f.tables, &rec);
        prop_assert!(restored.is_empty());
        prop_assert_eq!(f.agents[&aid(to)].model(), f.agents[&aid(to)].pristine());
    }
}

#[test]
fn revoke_cancels_queued_takeover_work() {
    let s = scenario("example3robot");
    let mut f = facility(&s);
    let d = disruption_of(&f, "Robot 2", 1);
    let out = takeover(&f, "Robot 2", "Robot 1");
    let rec = merge_capabilities(&mut f.agents, &mut f.env, &mut f.tables, &out, &d);
    let r1 = f.agents.get_mut(&aid("Robot 1")).unwrap();
    r1.start_event(PartId(1), &eid("σ7"), &sid("X1"), 0).unwrap();
    r1.enqueue(PartId(1), &eid("σ8"), &sid("X8")).unwrap();
    let cancelled = revoke_capabilities(&mut f.agents, &mut f.env, &mut f.tables, &rec);
    assert_eq!(cancelled, BTreeSet::from([PartId(1)]));
    let r1 = &f.agents[&aid("Robot 1")];
    assert!(r1.queue().is_empty());
    assert_eq!(r1.current().map(|c| c.event.as_str()), Some("σ7"));
}
