//! Finite-state capability models and the product-side domain types built on them.
//!
//! A [`CapabilityModel`] describes what a resource can do to a part: the states
//! a part can be in while the resource handles it, the events the resource can
//! start, and a partial transition function between them. Everything here is a
//! plain value; the simulator owns mutation.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::{AgentId, EventId, PropertyId, StateId};

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum ModelError {
    #[error("state {0} is not declared in the model")]
    UnknownState(StateId),
    #[error("event {0} is not declared in the model")]
    UnknownEvent(EventId),
    #[error("no transition defined for ({state}, {event})")]
    UndefinedTransition { state: StateId, event: EventId },
    #[error("no marked state is reachable from {0}")]
    NotReachable(StateId),
}

/// Whether a property changes the part's composition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PropertyKind {
    Physical,
    NonPhysical,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Property {
    pub id: PropertyId,
    pub kind: PropertyKind,
}

impl Property {
    pub fn physical(id: impl Into<PropertyId>) -> Self {
        Self { id: id.into(), kind: PropertyKind::Physical }
    }

    pub fn non_physical(id: impl Into<PropertyId>) -> Self {
        Self { id: id.into(), kind: PropertyKind::NonPhysical }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartState {
    pub id: StateId,
    pub description: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EventKind {
    Transport,
    Process,
}

/// An event a resource can start. `duration` is in ticks and always >= 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcessEvent {
    pub id: EventId,
    pub kind: EventKind,
    pub duration: u64,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
}

/// `M = (X, E, Tr, Prp_p, x_i, X_m)` plus the shared-state subset `X_s`.
#[derive(Debug, Clone, PartialEq)]
pub struct CapabilityModel {
    pub states: BTreeMap<StateId, PartState>,
    pub events: BTreeMap<EventId, ProcessEvent>,
    pub transitions: BTreeMap<(StateId, EventId), StateId>,
    pub physical_props: BTreeMap<StateId, BTreeSet<PropertyId>>,
    pub initial_state: StateId,
    pub marked_states: BTreeSet<StateId>,
    pub shared_states: BTreeSet<StateId>,
}

impl CapabilityModel {
    /// An empty model whose only state is `initial`.
    pub fn new(initial: PartState) -> Self {
        let initial_id = initial.id.clone();
        let mut states = BTreeMap::new();
        states.insert(initial_id.clone(), initial);
        Self {
            states,
            events: BTreeMap::new(),
            transitions: BTreeMap::new(),
            physical_props: BTreeMap::new(),
            initial_state: initial_id,
            marked_states: BTreeSet::new(),
            shared_states: BTreeSet::new(),
        }
    }

    pub fn add_state(&mut self, state: PartState) {
        self.states.entry(state.id.clone()).or_insert(state);
    }

    pub fn add_event(&mut self, event: ProcessEvent) {
        self.events.insert(event.id.clone(), event);
    }

    pub fn add_transition(&mut self, from: StateId, event: EventId, to: StateId) {
        self.transitions.insert((from, event), to);
    }

    pub fn has_state(&self, state: &StateId) -> bool {
        self.states.contains_key(state)
    }

    pub fn props(&self, state: &StateId) -> Option<&BTreeSet<PropertyId>> {
        self.physical_props.get(state)
    }

    /// Transitions leaving `state`, in event-id order.
    pub fn outgoing<'a>(
        &'a self,
        state: &'a StateId,
    ) -> impl Iterator<Item = (&'a EventId, &'a StateId)> + 'a {
        self.transitions
            .range((state.clone(), EventId::new(String::new()))..)
            .take_while(move |((s, _), _)| s == state)
            .map(|((_, e), to)| (e, to))
    }

    /// All `(from, to)` pairs for one event.
    pub fn transitions_of<'a>(
        &'a self,
        event: &'a EventId,
    ) -> impl Iterator<Item = (&'a StateId, &'a StateId)> + 'a {
        self.transitions
            .iter()
            .filter(move |((_, e), _)| e == event)
            .map(|((from, _), to)| (from, to))
    }

    /// States whose property set contains every property in `required`.
    pub fn states_satisfying(&self, required: &BTreeSet<PropertyId>) -> BTreeSet<StateId> {
        if required.is_empty() {
            return BTreeSet::new();
        }
        self.states
            .keys()
            .filter(|s| {
                self.physical_props
                    .get(*s)
                    .is_some_and(|p| required.is_subset(p))
            })
            .cloned()
            .collect()
    }
}

/// `Tr(state, event)`.
pub fn apply_transition(
    model: &CapabilityModel,
    state: &StateId,
    event: &EventId,
) -> Result<StateId, ModelError> {
    if !model.states.contains_key(state) {
        return Err(ModelError::UnknownState(state.clone()));
    }
    if !model.events.contains_key(event) {
        return Err(ModelError::UnknownEvent(event.clone()));
    }
    model
        .transitions
        .get(&(state.clone(), event.clone()))
        .cloned()
        .ok_or_else(|| ModelError::UndefinedTransition {
            state: state.clone(),
            event: event.clone(),
        })
}

/// Shortest event sequence from `from` into the marked set.
///
/// Among equally short sequences the lexicographically smallest (compared
/// event id by event id) wins. Breadth-first expansion in event-id order
/// yields exactly that sequence.
pub fn path_to_marked(model: &CapabilityModel, from: &StateId) -> Result<Vec<EventId>, ModelError> {
    if !model.states.contains_key(from) {
        return Err(ModelError::UnknownState(from.clone()));
    }
    if model.marked_states.contains(from) {
        return Ok(Vec::new());
    }
    let mut parent: BTreeMap<&StateId, (&StateId, &EventId)> = BTreeMap::new();
    let mut seen: BTreeSet<&StateId> = BTreeSet::from([from]);
    let mut queue: VecDeque<&StateId> = VecDeque::from([from]);
    while let Some(state) = queue.pop_front() {
        for (event, next) in model.outgoing(state) {
            if !model.events.contains_key(event) || !seen.insert(next) {
                continue;
            }
            parent.insert(next, (state, event));
            if model.marked_states.contains(next) {
                let mut path = Vec::new();
                let mut cur = next;
                while let Some((prev, ev)) = parent.get(cur) {
                    path.push((*ev).clone());
                    cur = prev;
                }
                path.reverse();
                return Ok(path);
            }
            queue.push_back(next);
        }
    }
    Err(ModelError::NotReachable(from.clone()))
}

/// One broken invariant of a capability model.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum Violation {
    InitialStateUndeclared(StateId),
    MarkedStateUndeclared(StateId),
    SharedStateUndeclared(StateId),
    TransitionSourceUndeclared { from: StateId, event: EventId },
    TransitionEventUndeclared { from: StateId, event: EventId },
    TransitionTargetUndeclared { from: StateId, event: EventId, to: StateId },
    PropsForUndeclaredState(StateId),
    ZeroDuration(EventId),
}

impl Violation {
    /// Short name of the model element the violation concerns.
    pub fn element(&self) -> &'static str {
        match self {
            Violation::InitialStateUndeclared(_) => "x_i",
            Violation::MarkedStateUndeclared(_) => "X_m",
            Violation::SharedStateUndeclared(_) => "X_s",
            Violation::TransitionSourceUndeclared { .. }
            | Violation::TransitionEventUndeclared { .. }
            | Violation::TransitionTargetUndeclared { .. } => "Tr",
            Violation::PropsForUndeclaredState(_) => "Prp_p",
            Violation::ZeroDuration(_) => "E",
        }
    }
}

/// Every invariant violation in `model`; empty means the model is well formed.
pub fn validate_model(model: &CapabilityModel) -> Vec<Violation> {
    let mut out = Vec::new();
    if !model.states.contains_key(&model.initial_state) {
        out.push(Violation::InitialStateUndeclared(model.initial_state.clone()));
    }
    for s in &model.marked_states {
        if !model.states.contains_key(s) {
            out.push(Violation::MarkedStateUndeclared(s.clone()));
        }
    }
    for s in &model.shared_states {
        if !model.states.contains_key(s) {
            out.push(Violation::SharedStateUndeclared(s.clone()));
        }
    }
    for ((from, event), to) in &model.transitions {
        if !model.states.contains_key(from) {
            out.push(Violation::TransitionSourceUndeclared {
                from: from.clone(),
                event: event.clone(),
            });
        }
        if !model.events.contains_key(event) {
            out.push(Violation::TransitionEventUndeclared {
                from: from.clone(),
                event: event.clone(),
            });
        }
        if !model.states.contains_key(to) {
            out.push(Violation::TransitionTargetUndeclared {
                from: from.clone(),
                event: event.clone(),
                to: to.clone(),
            });
        }
    }
    for s in model.physical_props.keys() {
        if !model.states.contains_key(s) {
            out.push(Violation::PropsForUndeclaredState(s.clone()));
        }
    }
    for e in model.events.values() {
        if e.duration == 0 {
            out.push(Violation::ZeroDuration(e.id.clone()));
        }
    }
    out
}

/// `N: X_s -> 2^RA`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct NeighborTable {
    pub entries: BTreeMap<StateId, BTreeSet<AgentId>>,
}

impl NeighborTable {
    /// Inserts `agent` under `state`; returns true when it was not present.
    pub fn insert(&mut self, state: StateId, agent: AgentId) -> bool {
        self.entries.entry(state).or_default().insert(agent)
    }

    /// Removes `agent` from `state`, dropping the key once its set is empty.
    pub fn remove(&mut self, state: &StateId, agent: &AgentId) -> bool {
        let Some(set) = self.entries.get_mut(state) else {
            return false;
        };
        let removed = set.remove(agent);
        if set.is_empty() {
            self.entries.remove(state);
        }
        removed
    }
}

pub fn neighbor_lookup(table: &NeighborTable, state: &StateId) -> BTreeSet<AgentId> {
    table.entries.get(state).cloned().unwrap_or_default()
}

/// One element `P_dk` of a process plan.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanStep {
    pub props: BTreeSet<Property>,
}

impl PlanStep {
    pub fn physical(ids: &[&str]) -> Self {
        Self { props: ids.iter().map(|id| Property::physical(*id)).collect() }
    }

    pub fn property_ids(&self) -> BTreeSet<PropertyId> {
        self.props.iter().map(|p| p.id.clone()).collect()
    }
}

/// `P_d = (P_d1, ..., P_dn)`; strictly sequential.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProcessPlan {
    pub steps: Vec<PlanStep>,
}

impl ProcessPlan {
    pub fn is_well_formed(&self) -> bool {
        !self.steps.is_empty() && self.steps.iter().all(|s| !s.props.is_empty())
    }
}

/// `PH = (X_v, Prp_v, RA_c)`. Append-only.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProductHistory {
    pub visited_states: Vec<StateId>,
    pub achieved_props: BTreeMap<StateId, BTreeSet<PropertyId>>,
    pub reporting_agent: BTreeMap<StateId, AgentId>,
}

impl ProductHistory {
    /// Union of every property achieved so far.
    pub fn achieved(&self) -> BTreeSet<PropertyId> {
        self.achieved_props.values().flatten().cloned().collect()
    }
}

/// The product agent's merged view `M_e` of the facility.
///
/// `model` holds `X_e, E_e, Tr_e, Prp_p,e`; its marked set is every state that
/// carries at least one property.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvironmentModel {
    pub model: CapabilityModel,
    pub event_owner: BTreeMap<EventId, AgentId>,
    pub current_state: StateId,
}

impl EnvironmentModel {
    /// Composes agent models into one environment view. When two agents
    /// declare the same event, the first in iteration order keeps ownership.
    pub fn compose<'a>(
        models: impl IntoIterator<Item = (&'a AgentId, &'a CapabilityModel)>,
        current_state: StateId,
        state_catalog: &BTreeMap<StateId, PartState>,
    ) -> Self {
        let initial = state_catalog
            .get(&current_state)
            .cloned()
            .unwrap_or(PartState { id: current_state.clone(), description: String::new() });
        let mut model = CapabilityModel::new(initial);
        let mut event_owner = BTreeMap::new();
        for (agent, m) in models {
            for s in m.states.values() {
                model.add_state(s.clone());
            }
            for (s, props) in &m.physical_props {
                model.physical_props.entry(s.clone()).or_default().extend(props.iter().cloned());
            }
            for (e, ev) in &m.events {
                if !event_owner.contains_key(e) {
                    event_owner.insert(e.clone(), agent.clone());
                    model.add_event(ev.clone());
                }
            }
            for ((from, e), to) in &m.transitions {
                model.transitions.entry((from.clone(), e.clone())).or_insert_with(|| to.clone());
            }
        }
        model.marked_states = model
            .physical_props
            .iter()
            .filter(|(s, p)| !p.is_empty() && model.states.contains_key(*s))
            .map(|(s, _)| s.clone())
            .collect();
        Self { model, event_owner, current_state }
    }

    /// The environment restricted to events whose owner passes `is_up`.
    pub fn operational_view(&self, is_up: impl Fn(&AgentId) -> bool) -> CapabilityModel {
        let mut view = self.model.clone();
        view.events.retain(|e, _| self.event_owner.get(e).is_some_and(&is_up));
        let events = &view.events;
        view.transitions.retain(|(_, e), _| events.contains_key(e));
        view
    }

    /// Removes `events`, their owners and their transitions.
    pub fn withdraw_events(&mut self, events: &BTreeSet<EventId>) {
        self.model.events.retain(|e, _| !events.contains(e));
        self.model.transitions.retain(|(_, e), _| !events.contains(e));
        self.event_owner.retain(|e, _| !events.contains(e));
    }

    /// Puts `events` back as `source` defines them, owned by `owner`.
    pub fn reinstate_events(&mut self, owner: &AgentId, source: &CapabilityModel, events: &BTreeSet<EventId>) {
        for e in events {
            let Some(ev) = source.events.get(e) else { continue };
            self.model.add_event(ev.clone());
            self.event_owner.insert(e.clone(), owner.clone());
            for (from, to) in source.transitions_of(e) {
                self.model.transitions.insert((from.clone(), e.clone()), to.clone());
            }
        }
    }

    /// States every incoming transition of which is owned by `agent`.
    pub fn states_entered_only_by(&self, agent: &AgentId) -> BTreeSet<StateId> {
        let mut entered_by: BTreeMap<&StateId, BTreeSet<&AgentId>> = BTreeMap::new();
        for ((_, e), to) in &self.model.transitions {
            if let Some(owner) = self.event_owner.get(e) {
                entered_by.entry(to).or_default().insert(owner);
            }
        }
        entered_by
            .into_iter()
            .filter(|(_, owners)| owners.len() == 1 && owners.contains(agent))
            .map(|(s, _)| s.clone())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn st(id: &str) -> PartState {
        PartState { id: StateId::new(id), description: id.to_string() }
    }

    fn ev(id: &str) -> ProcessEvent {
        ProcessEvent {
            id: EventId::new(id),
            kind: EventKind::Transport,
            duration: 1,
            params: BTreeMap::new(),
        }
    }

    fn chain() -> CapabilityModel {
        let mut m = CapabilityModel::new(st("a"));
        for s in ["b", "c"] {
            m.add_state(st(s));
        }
        for e in ["e1", "e2", "e3"] {
            m.add_event(ev(e));
        }
        m.add_transition("a".into(), "e1".into(), "b".into());
        m.add_transition("b".into(), "e2".into(), "c".into());
        m.add_transition("a".into(), "e3".into(), "c".into());
        m.marked_states.insert("c".into());
        m
    }

    #[test]
    fn apply_transition_errors() {
        let m = chain();
        assert_eq!(apply_transition(&m, &"a".into(), &"e1".into()), Ok("b".into()));
        assert_eq!(
            apply_transition(&m, &"a".into(), &"zz".into()),
            Err(ModelError::UnknownEvent("zz".into()))
        );
        assert_eq!(
            apply_transition(&m, &"q".into(), &"e1".into()),
            Err(ModelError::UnknownState("q".into()))
        );
        assert!(matches!(
            apply_transition(&m, &"b".into(), &"e1".into()),
            Err(ModelError::UndefinedTransition { .. })
        ));
    }

    #[test]
    fn path_prefers_fewer_events() {
        let m = chain();
        assert_eq!(path_to_marked(&m, &"a".into()).unwrap(), vec![EventId::new("e3")]);
        assert!(path_to_marked(&m, &"c".into()).unwrap().is_empty());
    }

    #[test]
    fn path_tie_breaks_lexicographically() {
        let mut m = chain();
        m.add_event(ev("e0"));
        m.add_transition("a".into(), "e0".into(), "c".into());
        assert_eq!(path_to_marked(&m, &"a".into()).unwrap(), vec![EventId::new("e0")]);
    }

    #[test]
    fn unreachable_marked() {
        let mut m = chain();
        m.marked_states = BTreeSet::from(["a".into()]);
        assert_eq!(
            path_to_marked(&m, &"b".into()),
            Err(ModelError::NotReachable("b".into()))
        );
    }

    #[test]
    fn marked_state_removed_from_states() {
        let mut m = chain();
        assert!(validate_model(&m).is_empty());
        m.states.remove(&StateId::new("c"));
        m.transitions.retain(|_, to| to.as_str() != "c");
        let v = validate_model(&m);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].element(), "X_m");
    }

    #[test]
    fn neighbor_lookup_absent_is_empty() {
        let t = NeighborTable::default();
        assert!(neighbor_lookup(&t, &"x".into()).is_empty());
    }

    #[test]
    fn neighbor_remove_drops_empty_key() {
        let mut t = NeighborTable::default();
        t.insert("x".into(), "A".into());
        assert!(t.remove(&"x".into(), &"A".into()));
        assert!(t.entries.is_empty());
    }

    #[test]
    fn states_entered_only_by() {
        let mut a = chain();
        a.events.remove(&EventId::new("e3"));
        a.transitions.retain(|(_, e), _| e.as_str() != "e3");
        let mut b = CapabilityModel::new(st("a"));
        b.add_state(st("c"));
        b.add_event(ev("e3"));
        b.add_transition("a".into(), "e3".into(), "c".into());
        let (ia, ib) = (AgentId::new("A"), AgentId::new("B"));
        let catalog = BTreeMap::new();
        let env = EnvironmentModel::compose([(&ia, &a), (&ib, &b)], "a".into(), &catalog);
        assert_eq!(env.states_entered_only_by(&ia), BTreeSet::from(["b".into()]));
        assert!(env.states_entered_only_by(&ib).is_empty());
    }
}
