//! Resource agents: one per robot or machine.
//!
//! An agent owns its capability model, a FIFO of reserved work and at most one
//! running execution. It evaluates bid requests, runs events tick by tick and
//! reports the resulting part states.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::{AgentId, EventId, PartId, PropertyId, StateId, Tick};
use crate::model::{apply_transition, CapabilityModel, EnvironmentModel, ModelError};
use crate::product::{Bid, BidRequest};
use crate::route::{cheapest_route, RouteCosts};

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum ResourceError {
    #[error("agent {0} is broken")]
    AgentBroken(AgentId),
    #[error("agent {agent} has no event {event}")]
    UnknownEvent { agent: AgentId, event: EventId },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AgentKind {
    Robot,
    Machine,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Operational,
    Broken,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResourceStatus {
    pub mode: Mode,
    pub broken_since: Option<Tick>,
    pub repair_at: Option<Tick>,
}

impl ResourceStatus {
    pub const fn operational() -> Self {
        Self { mode: Mode::Operational, broken_since: None, repair_at: None }
    }

    pub const fn broken(since: Tick, mttr: Tick) -> Self {
        Self { mode: Mode::Broken, broken_since: Some(since), repair_at: Some(since + mttr) }
    }

    pub fn is_operational(&self) -> bool {
        self.mode == Mode::Operational
    }
}

/// A running event. `to_state` is resolved when the event starts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskExecution {
    pub part_id: PartId,
    pub event: EventId,
    pub from_state: StateId,
    pub to_state: StateId,
    pub started_at: Tick,
    pub finishes_at: Tick,
}

/// Reserved work waiting in an agent's FIFO.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueuedTask {
    pub part_id: PartId,
    pub event: EventId,
    pub from_state: StateId,
    pub duration: Tick,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Completion {
    pub part_id: PartId,
    pub event: EventId,
    pub new_state: StateId,
    pub props: BTreeSet<PropertyId>,
    pub started_at: Tick,
}

/// Parts affected by a status change.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct StatusEffects {
    /// Parts that were inside the resource when it broke.
    pub failed: Vec<PartId>,
    /// Parts whose reservations were dropped and must bid again.
    pub cancelled: Vec<PartId>,
}

#[derive(Debug, Clone)]
pub struct ResourceAgent {
    pub id: AgentId,
    pub kind: AgentKind,
    model: Arc<CapabilityModel>,
    pristine: Arc<CapabilityModel>,
    status: ResourceStatus,
    current: Option<TaskExecution>,
    queue: VecDeque<QueuedTask>,
    /// `(started_at, finishes_at)` of every finished execution.
    finished: Vec<(Tick, Tick)>,
    /// busy_prefix[t] = busy ticks in [0, t).
    busy_prefix: Vec<u32>,
    bid_start: Option<StateId>,
    bid_marked: BTreeSet<StateId>,
    /// Events withdrawn by a partial disruption.
    lost: BTreeSet<EventId>,
}

impl ResourceAgent {
    /// Takes the immutable pristine snapshot used to revert after repair.
    pub fn new(id: AgentId, kind: AgentKind, model: CapabilityModel) -> Self {
        let model = Arc::new(model);
        Self {
            id,
            kind,
            pristine: Arc::clone(&model),
            model,
            status: ResourceStatus::operational(),
            current: None,
            queue: VecDeque::new(),
            finished: Vec::new(),
            busy_prefix: vec![0],
            bid_start: None,
            bid_marked: BTreeSet::new(),
            lost: BTreeSet::new(),
        }
    }

    pub fn model(&self) -> &CapabilityModel {
        &self.model
    }

    pub fn model_arc(&self) -> Arc<CapabilityModel> {
        Arc::clone(&self.model)
    }

    pub fn pristine(&self) -> &CapabilityModel {
        &self.pristine
    }

    pub fn pristine_arc(&self) -> Arc<CapabilityModel> {
        Arc::clone(&self.pristine)
    }

    pub fn set_model(&mut self, model: CapabilityModel) {
        self.model = Arc::new(model);
    }

    pub fn status(&self) -> ResourceStatus {
        self.status
    }

    pub fn is_operational(&self) -> bool {
        self.status.is_operational()
    }

    pub fn current(&self) -> Option<&TaskExecution> {
        self.current.as_ref()
    }

    pub fn queue(&self) -> &VecDeque<QueuedTask> {
        &self.queue
    }

    pub fn finished(&self) -> &[(Tick, Tick)] {
        &self.finished
    }

    /// The `(x_i, X_m)` pair set by the most recent bid evaluation.
    pub fn bid_context(&self) -> (Option<&StateId>, &BTreeSet<StateId>) {
        (self.bid_start.as_ref(), &self.bid_marked)
    }

    /// Earliest tick this agent could start new work, counting its reserved
    /// backlog. `None` when broken.
    pub fn free_at(&self, now: Tick) -> Option<Tick> {
        if !self.is_operational() {
            return None;
        }
        let base = self.current.as_ref().map_or(now, |c| c.finishes_at.max(now));
        Some(base + self.queue.iter().map(|q| q.duration).sum::<Tick>())
    }

    /// Evaluates a bid request: sets `x_i` to the part's state and `X_m` to
    /// the states satisfying the requirement, then promises the earliest
    /// finishing chain this agent can start.
    pub fn evaluate_bid(
        &mut self,
        req: &BidRequest,
        env: &EnvironmentModel,
        now: Tick,
        costs: &impl RouteCosts,
    ) -> Bid {
        if !self.is_operational() {
            return Bid::invalid(self.id.clone(), "AgentBroken");
        }
        self.bid_start = Some(req.from_state.clone());
        self.bid_marked = env.model.states_satisfying(&req.required_props);
        if !self.model.has_state(&req.from_state) {
            return Bid::invalid(self.id.clone(), "NotReachable");
        }
        match cheapest_route(env, &req.from_state, &self.bid_marked, &self.id, now, costs) {
            Some(route) => Bid {
                bidder: self.id.clone(),
                completion_cost: route.finish.saturating_sub(now).max(1),
                promised_path: route.steps,
                valid: true,
                reason: None,
            },
            None => Bid::invalid(self.id.clone(), "NotReachable"),
        }
    }

    /// Starts `event` now when idle, otherwise queues it behind current work.
    /// Returns the (projected) execution.
    pub fn start_event(
        &mut self,
        part_id: PartId,
        event: &EventId,
        from_state: &StateId,
        now: Tick,
    ) -> Result<TaskExecution, ResourceError> {
        if self.current.is_none() && self.queue.is_empty() {
            return self.begin(part_id, event, from_state, now);
        }
        let start = self.free_at(now).unwrap_or(now);
        self.enqueue(part_id, event, from_state)?;
        let to_state = apply_transition(&self.model, from_state, event)?;
        let duration = self.queue.back().map_or(0, |q| q.duration);
        Ok(TaskExecution {
            part_id,
            event: event.clone(),
            from_state: from_state.clone(),
            to_state,
            started_at: start,
            finishes_at: start + duration,
        })
    }

    fn begin(
        &mut self,
        part_id: PartId,
        event: &EventId,
        from_state: &StateId,
        now: Tick,
    ) -> Result<TaskExecution, ResourceError> {
        if !self.is_operational() {
            return Err(ResourceError::AgentBroken(self.id.clone()));
        }
        let Some(ev) = self.model.events.get(event) else {
            return Err(ResourceError::UnknownEvent { agent: self.id.clone(), event: event.clone() });
        };
        let duration = ev.duration;
        let to_state = apply_transition(&self.model, from_state, event)?;
        let exec = TaskExecution {
            part_id,
            event: event.clone(),
            from_state: from_state.clone(),
            to_state,
            started_at: now,
            finishes_at: now + duration,
        };
        self.current = Some(exec.clone());
        Ok(exec)
    }

    /// Reserves work at the back of the FIFO.
    pub fn enqueue(&mut self, part_id: PartId, event: &EventId, from_state: &StateId) -> Result<(), ResourceError> {
        if !self.is_operational() {
            return Err(ResourceError::AgentBroken(self.id.clone()));
        }
        let Some(ev) = self.model.events.get(event) else {
            return Err(ResourceError::UnknownEvent { agent: self.id.clone(), event: event.clone() });
        };
        self.queue.push_back(QueuedTask {
            part_id,
            event: event.clone(),
            from_state: from_state.clone(),
            duration: ev.duration,
        });
        Ok(())
    }

    /// Starts the head of the FIFO if the agent is idle and `ready` accepts it.
    pub fn try_start(&mut self, now: Tick, ready: impl Fn(&QueuedTask) -> bool) -> Option<TaskExecution> {
        if !self.is_operational() || self.current.is_some() {
            return None;
        }
        let head = self.queue.front()?;
        if !ready(head) {
            return None;
        }
        let head = self.queue.pop_front()?;
        self.begin(head.part_id, &head.event, &head.from_state, now).ok()
    }

    /// Completions finishing exactly at `now`.
    pub fn tick_complete(&mut self, now: Tick) -> Vec<Completion> {
        if !self.is_operational() {
            return Vec::new();
        }
        match self.current.take() {
            Some(exec) if exec.finishes_at == now => {
                self.finished.push((exec.started_at, exec.finishes_at));
                let props = self.model.props(&exec.to_state).cloned().unwrap_or_default();
                vec![Completion {
                    part_id: exec.part_id,
                    event: exec.event,
                    new_state: exec.to_state,
                    props,
                    started_at: exec.started_at,
                }]
            }
            other => {
                self.current = other;
                Vec::new()
            }
        }
    }

    /// Applies a status. Breaking fails the running part and drops every
    /// reservation; repairing restores the pristine capability model.
    pub fn apply_status(&mut self, status: ResourceStatus) -> StatusEffects {
        let mut effects = StatusEffects::default();
        match (self.status.mode, status.mode) {
            (Mode::Operational, Mode::Broken) => {
                if let Some(exec) = self.current.take() {
                    effects.failed.push(exec.part_id);
                }
                let mut seen = BTreeSet::new();
                for q in self.queue.drain(..) {
                    if seen.insert(q.part_id) && !effects.failed.contains(&q.part_id) {
                        effects.cancelled.push(q.part_id);
                    }
                }
            }
            (Mode::Broken, Mode::Operational) => {
                self.model = Arc::clone(&self.pristine);
                self.lost.clear();
            }
            (Mode::Operational, Mode::Operational) if !self.lost.is_empty() => {
                self.model = Arc::clone(&self.pristine);
                self.lost.clear();
            }
            _ => {}
        }
        self.status = status;
        effects
    }

    /// Partial disruption: `events` leave the live model while the agent
    /// stays operational. A part running one of them fails and reservations
    /// for them are dropped. Repair restores the pristine model.
    pub fn lose_events(&mut self, events: &BTreeSet<EventId>) -> StatusEffects {
        let mut effects = StatusEffects::default();
        if self.current.as_ref().is_some_and(|c| events.contains(&c.event)) {
            effects.failed.extend(self.current.take().map(|c| c.part_id));
        }
        effects.cancelled = self.cancel_events(events).into_iter().filter(|p| !effects.failed.contains(p)).collect();
        let mut m = (*self.model).clone();
        m.events.retain(|e, _| !events.contains(e));
        m.transitions.retain(|(_, e), _| !events.contains(e));
        self.model = Arc::new(m);
        self.lost.extend(events.iter().cloned());
        effects
    }

    pub fn lost_events(&self) -> &BTreeSet<EventId> {
        &self.lost
    }

    /// Drops every reservation held for `part`.
    pub fn cancel_part(&mut self, part: PartId) {
        self.queue.retain(|q| q.part_id != part);
    }

    /// Drops reservations for any of `events`; returns the parts affected.
    pub fn cancel_events(&mut self, events: &BTreeSet<EventId>) -> BTreeSet<PartId> {
        let mut parts = BTreeSet::new();
        self.queue.retain(|q| {
            let hit = events.contains(&q.event);
            if hit {
                parts.insert(q.part_id);
            }
            !hit
        });
        parts
    }

    /// Records whether the agent is busy during `[now, now + 1)`.
    pub fn record_tick(&mut self, now: Tick) {
        let busy = self
            .current
            .as_ref()
            .is_some_and(|c| c.started_at <= now && now < c.finishes_at);
        let now = now as usize;
        while self.busy_prefix.len() <= now {
            let last = *self.busy_prefix.last().unwrap_or(&0);
            self.busy_prefix.push(last);
        }
        let base = self.busy_prefix[now];
        self.busy_prefix.truncate(now + 1);
        self.busy_prefix.push(base + u32::from(busy));
    }

    /// Busy ticks within `[from, to)` among ticks already recorded.
    pub fn busy_between(&self, from: Tick, to: Tick) -> u64 {
        let n = self.busy_prefix.len() - 1;
        let to = (to as usize).min(n);
        let from = (from as usize).min(to);
        u64::from(self.busy_prefix[to] - self.busy_prefix[from])
    }

    /// Executions finished within `[from, to)`.
    pub fn completions_between(&self, from: Tick, to: Tick) -> u64 {
        // finish ticks are appended in increasing order
        let lo = self.finished.partition_point(|(_, f)| *f < from);
        let hi = self.finished.partition_point(|(_, f)| *f < to);
        hi.saturating_sub(lo) as u64
    }

    pub fn total_busy(&self) -> u64 {
        u64::from(*self.busy_prefix.last().unwrap_or(&0))
    }

    /// Per-tick busy flags recorded so far.
    pub fn busy_flags(&self) -> Vec<bool> {
        self.busy_prefix.windows(2).map(|w| w[1] > w[0]).collect()
    }

    /// Event ids of the running and queued work.
    pub fn pending_parts(&self) -> BTreeMap<PartId, Vec<EventId>> {
        let mut out: BTreeMap<PartId, Vec<EventId>> = BTreeMap::new();
        for q in &self.queue {
            out.entry(q.part_id).or_default().push(q.event.clone());
        }
        out
    }
}
