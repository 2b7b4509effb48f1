//! Granting explored capabilities to the exploration agent and taking them
//! back once the disrupted agent is repaired.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use crate::ids::{AgentId, EventId, PartId, StateId};
use crate::knowledge::Disruption;
use crate::model::{CapabilityModel, EnvironmentModel, NeighborTable, ProcessEvent};
use crate::resource::ResourceAgent;

use super::ExplorationOutput;

/// Everything needed to undo one merge.
#[derive(Debug, Clone, PartialEq)]
pub struct MergeRecord {
    pub disrupted: AgentId,
    pub exploration_agent: AgentId,
    pub events: BTreeSet<EventId>,
    pub prior_exploration_model: Arc<CapabilityModel>,
    pub prior_disrupted_model: Arc<CapabilityModel>,
    /// Environment event definitions and owners replaced by the merge.
    pub prior_env_events: BTreeMap<EventId, Option<(ProcessEvent, AgentId)>>,
    /// `(table owner, state, inserted agent)` in insertion order.
    pub table_insertions: Vec<(AgentId, StateId, AgentId)>,
    /// States and transitions the environment did not have before.
    pub added_env_states: Vec<StateId>,
    pub added_env_transitions: Vec<(StateId, EventId)>,
}

/// `E' = E ∪ C_e` for the exploration agent. Each explored event keeps the
/// transitions it had under the disrupted agent, so it lands in the same
/// states. The disrupted agent's copies are deactivated and the environment
/// hands ownership of the events to the exploration agent.
///
/// Panics if either agent is missing; callers validate the output first.
pub fn merge_capabilities(
    agents: &mut BTreeMap<AgentId, ResourceAgent>,
    env: &mut EnvironmentModel,
    tables: &mut BTreeMap<AgentId, NeighborTable>,
    output: &ExplorationOutput,
    disruption: &Disruption,
) -> MergeRecord {
    let d = &disruption.disrupted_agent;
    let e = &output.exploration_agent;
    let source = Arc::new(agents[d].pristine().clone());
    let prior_exploration_model = agents[e].model_arc();
    let prior_disrupted_model = agents[d].model_arc();
    let events: BTreeSet<EventId> = output.explored_capabilities.iter().map(|c| c.id.clone()).collect();

    let mut merged = (*prior_exploration_model).clone();
    for cap in &output.explored_capabilities {
        merged.add_event(cap.clone());
        for (from, to) in source.transitions_of(&cap.id) {
            for s in [from, to] {
                if let Some(state) = source.states.get(s) {
                    merged.add_state(state.clone());
                }
                if let Some(props) = source.physical_props.get(s) {
                    merged.physical_props.entry(s.clone()).or_insert_with(|| props.clone());
                }
            }
            merged.add_transition(from.clone(), cap.id.clone(), to.clone());
        }
    }

    let mut table_insertions = Vec::new();
    for s in merged.states.keys() {
        for (b, agent) in agents.iter() {
            if b == e || !agent.model().has_state(s) {
                continue;
            }
            merged.shared_states.insert(s.clone());
            if tables.entry(b.clone()).or_default().insert(s.clone(), e.clone()) {
                table_insertions.push((b.clone(), s.clone(), e.clone()));
            }
            if tables.entry(e.clone()).or_default().insert(s.clone(), b.clone()) {
                table_insertions.push((e.clone(), s.clone(), b.clone()));
            }
        }
    }
    agents.get_mut(e).expect("exploration agent").set_model(merged);

    let mut deactivated = (*prior_disrupted_model).clone();
    deactivated.events.retain(|id, _| !events.contains(id));
    deactivated.transitions.retain(|(_, id), _| !events.contains(id));
    agents.get_mut(d).expect("disrupted agent").set_model(deactivated);

    let mut prior_env_events = BTreeMap::new();
    let mut added_env_states = Vec::new();
    let mut added_env_transitions = Vec::new();
    for cap in &output.explored_capabilities {
        let prior = env
            .model
            .events
            .get(&cap.id)
            .cloned()
            .zip(env.event_owner.get(&cap.id).cloned());
        prior_env_events.insert(cap.id.clone(), prior);
        env.model.add_event(cap.clone());
        env.event_owner.insert(cap.id.clone(), e.clone());
        for (from, to) in source.transitions_of(&cap.id) {
            for s in [from, to] {
                if !env.model.has_state(s) {
                    env.model.add_state(source.states[s].clone());
                    added_env_states.push(s.clone());
                }
            }
            let key = (from.clone(), cap.id.clone());
            if !env.model.transitions.contains_key(&key) {
                env.model.transitions.insert(key.clone(), to.clone());
                added_env_transitions.push(key);
            }
        }
    }

    MergeRecord {
        disrupted: d.clone(),
        exploration_agent: e.clone(),
        events,
        prior_exploration_model,
        prior_disrupted_model,
        prior_env_events,
        table_insertions,
        added_env_states,
        added_env_transitions,
    }
}

/// Restores both agents, the neighbour tables and the environment. Returns
/// the parts whose queued work on revoked events was dropped; running work
/// finishes normally.
pub fn revoke_capabilities(
    agents: &mut BTreeMap<AgentId, ResourceAgent>,
    env: &mut EnvironmentModel,
    tables: &mut BTreeMap<AgentId, NeighborTable>,
    record: &MergeRecord,
) -> BTreeSet<PartId> {
    let mut cancelled = BTreeSet::new();
    if let Some(a) = agents.get_mut(&record.exploration_agent) {
        cancelled = a.cancel_events(&record.events);
        a.set_model((*record.prior_exploration_model).clone());
    }
    if let Some(a) = agents.get_mut(&record.disrupted) {
        a.set_model((*record.prior_disrupted_model).clone());
    }
    for (owner, state, agent) in record.table_insertions.iter().rev() {
        if let Some(t) = tables.get_mut(owner) {
            t.remove(state, agent);
        }
    }
    for key in &record.added_env_transitions {
        env.model.transitions.remove(key);
    }
    for s in &record.added_env_states {
        env.model.states.remove(s);
    }
    for (id, prior) in &record.prior_env_events {
        match prior {
            Some((ev, owner)) => {
                env.model.add_event(ev.clone());
                env.event_owner.insert(id.clone(), owner.clone());
            }
            None => {
                env.model.events.remove(id);
                env.event_owner.remove(id);
            }
        }
    }
    cancelled
}
