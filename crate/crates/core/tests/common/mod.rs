//! Helpers shared by the integration tests.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use capex_core::engine::{run, RunMetrics};
use capex_core::ids::{AgentId, EventId, StateId};
use capex_core::model::{CapabilityModel, EventKind, PartState, ProcessEvent};
use capex_core::scenario::{load_scenario, Scenario};

pub fn scenario(name: &str) -> Scenario {
    load_scenario(name).expect("bundled scenario loads")
}

pub fn run_named(name: &str, exploration: bool, seed: u64) -> RunMetrics {
    let mut s = scenario(name);
    s.options.exploration = exploration;
    run(&s, seed).expect("run succeeds")
}

pub fn sid(s: &str) -> StateId {
    StateId::new(s)
}

pub fn eid(s: &str) -> EventId {
    EventId::new(s)
}

pub fn aid(s: &str) -> AgentId {
    AgentId::new(s)
}

pub fn state(id: &str) -> PartState {
    PartState { id: sid(id), description: id.to_string() }
}

pub fn event(id: &str, duration: u64) -> ProcessEvent {
    ProcessEvent { id: eid(id), kind: EventKind::Transport, duration, params: BTreeMap::new() }
}

/// A model over states `s0..s{n-1}` with the given `(from, event, to)` edges
/// and marked states.
pub fn model(n: usize, edges: &[(usize, &str, usize)], marked: &[usize]) -> CapabilityModel {
    let mut m = CapabilityModel::new(state("s0"));
    for i in 1..n {
        m.add_state(state(&format!("s{i}")));
    }
    for (from, e, to) in edges {
        m.add_event(event(e, 1));
        m.add_transition(sid(&format!("s{from}")), eid(e), sid(&format!("s{to}")));
    }
    for i in marked {
        let s = sid(&format!("s{i}"));
        m.marked_states.insert(s.clone());
        m.physical_props.insert(s, BTreeSet::from(["done".into()]));
    }
    m
}

/// Plain breadth-first distance from `from` to the nearest marked state,
/// written independently of the library's path search.
pub fn bfs_distance(m: &CapabilityModel, from: &StateId) -> Option<usize> {
    let mut adj: BTreeMap<&StateId, Vec<&StateId>> = BTreeMap::new();
    for ((a, e), b) in &m.transitions {
        if m.events.contains_key(e) {
            adj.entry(a).or_default().push(b);
        }
    }
    let mut dist: BTreeMap<&StateId, usize> = BTreeMap::from([(from, 0)]);
    let mut q = VecDeque::from([from]);
    while let Some(s) = q.pop_front() {
        if m.marked_states.contains(s) {
            return Some(dist[s]);
        }
        for n in adj.get(s).into_iter().flatten() {
            if !dist.contains_key(n) {
                dist.insert(n, dist[s] + 1);
                q.push_back(n);
            }
        }
    }
    None
}

/// States reachable from `from` over transitions whose event passes `keep`.
pub fn reachable(
    transitions: &BTreeMap<(StateId, EventId), StateId>,
    from: &StateId,
    keep: impl Fn(&EventId) -> bool,
) -> BTreeSet<StateId> {
    let mut seen = BTreeSet::from([from.clone()]);
    let mut q = VecDeque::from([from.clone()]);
    while let Some(s) = q.pop_front() {
        for ((a, e), b) in transitions {
            if *a == s && keep(e) && seen.insert(b.clone()) {
                q.push_back(b.clone());
            }
        }
    }
    seen
}

pub struct Facility {
    pub agents: BTreeMap<AgentId, capex_core::resource::ResourceAgent>,
    pub env: capex_core::model::EnvironmentModel,
    pub tables: BTreeMap<AgentId, capex_core::model::NeighborTable>,
}

pub fn facility(s: &Scenario) -> Facility {
    let models = s.build_models();
    let tables = Scenario::neighbor_tables(&models);
    let env = s.environment(&models);
    let agents = models
        .into_iter()
        .map(|(id, (k, m))| (id.clone(), capex_core::resource::ResourceAgent::new(id, k, m)))
        .collect();
    Facility { agents, env, tables }
}

/// Disruption of `agent` covering all of its original events.
pub fn disruption_of(f: &Facility, agent: &str, tick: u64) -> capex_core::knowledge::Disruption {
    let a = aid(agent);
    capex_core::knowledge::Disruption {
        affected_states: f.env.states_entered_only_by(&a),
        affected_events: f.agents[&a].pristine().events.keys().cloned().collect(),
        disrupted_agent: a,
        detected_at: tick,
    }
}

/// Output handing every original event of `from` to `to`.
pub fn takeover(f: &Facility, from: &str, to: &str) -> capex_core::exploration::ExplorationOutput {
    capex_core::exploration::ExplorationOutput {
        exploration_agent: aid(to),
        explored_capabilities: f.agents[&aid(from)].pristine().events.values().cloned().collect(),
        rationale: String::new(),
    }
}

/// Route costs where every agent is free now except those listed as down.
pub struct FreeNow(pub BTreeSet<AgentId>);

impl capex_core::route::RouteCosts for FreeNow {
    fn free_at(&self, agent: &AgentId) -> Option<u64> {
        (!self.0.contains(agent)).then_some(0)
    }
}
