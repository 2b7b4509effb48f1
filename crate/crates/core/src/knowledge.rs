//! The central controller's knowledge base: performance sampling, operational
//! and safety bounds, disruption detection and immutable snapshots.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::ids::{AgentId, EventId, PartId, StateId, Tick};
use crate::model::{CapabilityModel, EnvironmentModel, ProcessEvent, ProcessPlan, ProductHistory};
use crate::resource::{AgentKind, ResourceAgent, ResourceStatus, TaskExecution};

/// `PM_i(t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerformanceVector {
    pub agent_id: AgentId,
    pub tick: Tick,
    pub throughput: u64,
    pub utilization: f64,
    pub breakdown: bool,
    pub availability: u8,
}

/// Trailing-window metrics for one agent. Before `window` ticks have passed
/// the window shrinks to `[0, now)`.
pub fn sample_performance(agent: &ResourceAgent, now: Tick, window: Tick) -> PerformanceVector {
    let window = window.max(1);
    let span = window.min(now);
    let from = now - span;
    let utilization = if span == 0 {
        0.0
    } else {
        agent.busy_between(from, now) as f64 / span as f64
    };
    let breakdown = !agent.is_operational();
    PerformanceVector {
        agent_id: agent.id.clone(),
        tick: now,
        throughput: agent.completions_between(from, now),
        utilization,
        breakdown,
        availability: u8::from(!breakdown),
    }
}

/// A closed interval `[min, max]`, written as a two-element array.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval(pub f64, pub f64);

impl Interval {
    pub fn min(&self) -> f64 {
        self.0
    }

    pub fn max(&self) -> f64 {
        self.1
    }

    pub fn contains(&self, v: f64) -> bool {
        self.0 <= v && v <= self.1
    }

    pub fn is_well_formed(&self) -> bool {
        self.0 <= self.1
    }
}

/// `B_i` and `S_i` for one resource.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConstraintSet {
    #[serde(default)]
    pub operation_bounds: BTreeMap<String, Interval>,
    #[serde(default)]
    pub safety_limits: BTreeMap<String, Interval>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundKind {
    Operational,
    Safety,
}

impl fmt::Display for BoundKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BoundKind::Operational => "operational",
            BoundKind::Safety => "safety",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintViolation {
    pub event: EventId,
    pub param: String,
    pub set: BoundKind,
    pub value: f64,
    pub bound: Interval,
}

impl fmt::Display for ConstraintViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ({})", self.param, self.set)
    }
}

/// Checks every parameter of `capability` against both interval sets.
/// Parameters without a declared bound pass.
pub fn check_constraints(constraints: &ConstraintSet, capability: &ProcessEvent) -> Vec<ConstraintViolation> {
    let mut out = Vec::new();
    for (param, &value) in &capability.params {
        for (set, bounds) in [
            (BoundKind::Operational, &constraints.operation_bounds),
            (BoundKind::Safety, &constraints.safety_limits),
        ] {
            if let Some(bound) = bounds.get(param) {
                if !bound.contains(value) {
                    out.push(ConstraintViolation {
                        event: capability.id.clone(),
                        param: param.clone(),
                        set,
                        value,
                        bound: *bound,
                    });
                }
            }
        }
    }
    out
}

/// `(RA_d, X_d, E_d)` plus the detection tick.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Disruption {
    pub disrupted_agent: AgentId,
    pub affected_states: BTreeSet<StateId>,
    pub affected_events: BTreeSet<EventId>,
    pub detected_at: Tick,
}

#[derive(Debug, Clone)]
pub struct AgentSnapshot {
    pub kind: AgentKind,
    pub model: Arc<CapabilityModel>,
    pub pristine: Arc<CapabilityModel>,
    pub status: ResourceStatus,
    pub current_task: Option<TaskExecution>,
    pub performance: PerformanceVector,
    /// Events withdrawn by a partial disruption.
    pub lost_events: BTreeSet<EventId>,
}

#[derive(Debug, Clone)]
pub struct PartSnapshot {
    pub plan: Arc<ProcessPlan>,
    pub history: Arc<ProductHistory>,
    pub current_state: StateId,
}

/// An immutable view of the facility at one tick.
#[derive(Debug, Clone)]
pub struct KnowledgeSnapshot {
    pub tick: Tick,
    pub agents: BTreeMap<AgentId, AgentSnapshot>,
    pub parts: BTreeMap<PartId, PartSnapshot>,
    pub environment: Arc<EnvironmentModel>,
    pub constraints: Arc<BTreeMap<AgentId, ConstraintSet>>,
}

impl KnowledgeSnapshot {
    pub fn capture<'a>(
        tick: Tick,
        agents: impl IntoIterator<Item = &'a ResourceAgent>,
        window: Tick,
        parts: BTreeMap<PartId, PartSnapshot>,
        environment: Arc<EnvironmentModel>,
        constraints: Arc<BTreeMap<AgentId, ConstraintSet>>,
    ) -> Self {
        let agents = agents
            .into_iter()
            .map(|a| {
                (
                    a.id.clone(),
                    AgentSnapshot {
                        kind: a.kind,
                        model: a.model_arc(),
                        pristine: a.pristine_arc(),
                        status: a.status(),
                        current_task: a.current().cloned(),
                        performance: sample_performance(a, tick, window),
                        lost_events: a.lost_events().clone(),
                    },
                )
            })
            .collect();
        Self { tick, agents, parts, environment, constraints }
    }

    pub fn is_operational(&self, agent: &AgentId) -> bool {
        self.agents.get(agent).is_some_and(|a| a.status.is_operational())
    }

    /// Every id referenced by the snapshot resolves.
    pub fn is_consistent(&self) -> bool {
        self.environment.event_owner.values().all(|a| self.agents.contains_key(a))
            && self
                .parts
                .values()
                .all(|p| self.environment.model.states.contains_key(&p.current_state))
    }
}

/// One disruption per agent that went from operational to broken, and one
/// per operational agent that newly lost some of its events.
pub fn detect_disruptions(snapshot: &KnowledgeSnapshot, previous: &KnowledgeSnapshot) -> Vec<Disruption> {
    let mut out = Vec::new();
    for (id, a) in &snapshot.agents {
        let prev = previous.agents.get(id);
        if !a.status.is_operational() {
            if prev.is_none_or(|p| p.status.is_operational()) {
                out.push(Disruption {
                    disrupted_agent: id.clone(),
                    affected_states: snapshot.environment.states_entered_only_by(id),
                    affected_events: a.pristine.events.keys().cloned().collect(),
                    detected_at: snapshot.tick,
                });
            }
        } else if !a.lost_events.is_empty() && prev.is_none_or(|p| p.lost_events.is_empty()) {
            // lost events are already gone from the environment, so a target
            // no remaining transition enters is cut off
            let entered: BTreeSet<&StateId> = snapshot.environment.model.transitions.values().collect();
            let affected_states = a
                .lost_events
                .iter()
                .flat_map(|e| a.pristine.transitions_of(e))
                .map(|(_, to)| to)
                .filter(|to| !entered.contains(to))
                .cloned()
                .collect();
            out.push(Disruption {
                disrupted_agent: id.clone(),
                affected_states,
                affected_events: a.lost_events.clone(),
                detected_at: snapshot.tick,
            });
        }
    }
    out
}
