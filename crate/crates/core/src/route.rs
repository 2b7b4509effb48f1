//! Earliest-completion routing over the environment model.
//!
//! Bids promise a chain of events that may span several resources: the bidder
//! starts the chain and the request is forwarded through shared states to
//! neighbouring resources. The chain is the one that finishes earliest given
//! when each resource frees up; ties go to fewer events, then to the
//! lexicographically smaller event sequence.

use std::cmp::Reverse;
use std::collections::{BTreeSet, BinaryHeap};

use crate::ids::{AgentId, EventId, StateId, Tick};
use crate::model::{EnvironmentModel, EventKind};

/// Per-resource timing and per-state admission used while routing.
pub trait RouteCosts {
    /// Earliest tick the agent can start new work, or `None` when it is down.
    fn free_at(&self, agent: &AgentId) -> Option<Tick>;

    /// Whether a part may be routed into `state`.
    fn admits(&self, _state: &StateId) -> bool {
        true
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Route {
    pub steps: Vec<(EventId, AgentId)>,
    pub finish: Tick,
}

impl Route {
    pub fn events(&self) -> Vec<EventId> {
        self.steps.iter().map(|(e, _)| e.clone()).collect()
    }
}

/// Earliest-finishing route from `from` into `marked` whose first event is
/// owned by `bidder`. Process events are only taken when they land in
/// `marked`, so a part is never processed on the way to somewhere else.
pub fn cheapest_route(
    env: &EnvironmentModel,
    from: &StateId,
    marked: &BTreeSet<StateId>,
    bidder: &AgentId,
    now: Tick,
    costs: &impl RouteCosts,
) -> Option<Route> {
    if marked.is_empty() || marked.contains(from) {
        return None;
    }
    let model = &env.model;
    type Entry = (Tick, usize, Vec<EventId>, Vec<AgentId>, StateId);
    let mut heap: BinaryHeap<Reverse<Entry>> = BinaryHeap::new();
    let mut settled: BTreeSet<StateId> = BTreeSet::from([from.clone()]);

    let relax = |heap: &mut BinaryHeap<Reverse<Entry>>,
                 at: Tick,
                 path: &[EventId],
                 owners: &[AgentId],
                 state: &StateId,
                 only: Option<&AgentId>,
                 settled: &BTreeSet<StateId>| {
        for (event, next) in model.outgoing(state) {
            let Some(ev) = model.events.get(event) else { continue };
            let Some(owner) = env.event_owner.get(event) else { continue };
            if only.is_some_and(|b| b != owner) || settled.contains(next) {
                continue;
            }
            if ev.kind == EventKind::Process && !marked.contains(next) {
                continue;
            }
            if !costs.admits(next) {
                continue;
            }
            let Some(free) = costs.free_at(owner) else { continue };
            let finish = at.max(free) + ev.duration;
            let mut p = path.to_vec();
            p.push(event.clone());
            let mut o = owners.to_vec();
            o.push(owner.clone());
            heap.push(Reverse((finish, p.len(), p, o, next.clone())));
        }
    };

    relax(&mut heap, now, &[], &[], from, Some(bidder), &settled);
    while let Some(Reverse((finish, _, path, owners, state))) = heap.pop() {
        if !settled.insert(state.clone()) {
            continue;
        }
        if marked.contains(&state) {
            return Some(Route { steps: path.into_iter().zip(owners).collect(), finish });
        }
        relax(&mut heap, finish, &path, &owners, &state, None, &settled);
    }
    None
}
