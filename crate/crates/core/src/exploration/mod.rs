//! Capability exploration: choose an operational agent to take over a broken
//! agent's events, validate the choice and grant the capabilities.

pub mod merge;
pub mod policy;
pub mod scoring;
pub mod validate;
pub mod wire;

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::ids::{AgentId, EventId, StateId};
use crate::knowledge::{ConstraintSet, Disruption, KnowledgeSnapshot};
use crate::model::{path_to_marked, CapabilityModel, ProcessEvent};

pub use merge::{merge_capabilities, revoke_capabilities, MergeRecord};
pub use policy::{BuiltinPolicy, DecisionPolicy, ServicePolicy};
pub use scoring::{score_candidates, Factors, Normalizer, Scale, ScoringConfig};
pub use validate::{check_output, validate, Validation};
pub use wire::{parse_output, serialize_output, SyntaxError};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ExplorationError {
    #[error("unknown agent {0}")]
    UnknownAgent(AgentId),
    #[error("candidate {agent} has no value for factor {factor}")]
    MissingFactor { agent: AgentId, factor: String },
    #[error("invalid scoring config: {0}")]
    InvalidConfig(String),
    #[error("decision policy unavailable: {0}")]
    PolicyUnavailable(String),
    #[error("exploration failed after {rounds} round(s): {reason}")]
    ExplorationFailed { reason: String, rounds: u32 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplorationParams {
    pub constraints: BTreeMap<AgentId, ConstraintSet>,
    pub max_iterations: u32,
}

impl Default for ExplorationParams {
    fn default() -> Self {
        Self { constraints: BTreeMap::new(), max_iterations: 3 }
    }
}

/// `O = (RA_e, C_e)` plus the policy's reasoning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplorationOutput {
    pub exploration_agent: AgentId,
    pub explored_capabilities: Vec<ProcessEvent>,
    pub rationale: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PolicyInput {
    pub instructions: String,
    pub data: Value,
    pub template: String,
}

/// A validated exploration.
#[derive(Debug, Clone, PartialEq)]
pub struct Exploration {
    pub output: ExplorationOutput,
    pub rounds: u32,
    pub ranking: Vec<(AgentId, f64)>,
}

const INSTRUCTIONS: &str = "A resource agent has broken down. Choose one operational candidate \
to take over the listed disrupted capabilities. Prefer agents that are available, close to the \
disrupted agent and well utilized. Every capability parameter must stay within the chosen \
agent's operation bounds and safety limits. Answer with a single JSON document matching the \
template and nothing else.";

/// Hop counts from `from` to every agent in the bipartite graph linking
/// agents to the states their models hold. Two agents sharing a state are two
/// hops apart.
pub fn agent_distances<'a>(
    models: impl IntoIterator<Item = (&'a AgentId, &'a CapabilityModel)>,
    from: &AgentId,
) -> BTreeMap<AgentId, u32> {
    let models: Vec<(&AgentId, &CapabilityModel)> = models.into_iter().collect();
    let mut holders: BTreeMap<&StateId, Vec<&AgentId>> = BTreeMap::new();
    for (id, m) in &models {
        for s in m.states.keys() {
            holders.entry(s).or_default().push(id);
        }
    }
    let by_id: BTreeMap<&AgentId, &CapabilityModel> = models.iter().copied().collect();
    let mut dist: BTreeMap<AgentId, u32> = BTreeMap::new();
    if !by_id.contains_key(from) {
        return dist;
    }
    dist.insert(from.clone(), 0);
    let mut seen_states: BTreeSet<&StateId> = BTreeSet::new();
    let mut queue = VecDeque::from([from]);
    while let Some(a) = queue.pop_front() {
        let d = dist[a];
        for s in by_id[a].states.keys() {
            if !seen_states.insert(s) {
                continue;
            }
            for b in &holders[s] {
                if !dist.contains_key(*b) {
                    dist.insert((*b).clone(), d + 2);
                    queue.push_back(b);
                }
            }
        }
    }
    dist
}

/// Operational agents of the disrupted agent's kind, other than the
/// disrupted agent, with their availability, proximity and utilization.
/// Agents with no topological connection to the disrupted agent are left out.
pub fn candidate_factors(disruption: &Disruption, snapshot: &KnowledgeSnapshot) -> Vec<(AgentId, Factors)> {
    let d = &disruption.disrupted_agent;
    let Some(kind) = snapshot.agents.get(d).map(|a| a.kind) else {
        return Vec::new();
    };
    let dist = agent_distances(snapshot.agents.iter().map(|(id, a)| (id, a.pristine.as_ref())), d);
    snapshot
        .agents
        .iter()
        .filter(|(id, a)| *id != d && a.kind == kind && a.status.is_operational())
        .filter_map(|(id, a)| {
            let p = *dist.get(id)?;
            Some((
                id.clone(),
                Factors::from([
                    (scoring::AVAILABILITY.to_string(), f64::from(a.performance.availability)),
                    (scoring::PROXIMITY.to_string(), f64::from(p)),
                    (scoring::UTILIZATION.to_string(), a.performance.utilization),
                ]),
            ))
        })
        .collect()
}

/// The disrupted agent's original events with their parameters.
pub fn disrupted_capabilities(disruption: &Disruption, snapshot: &KnowledgeSnapshot) -> Vec<ProcessEvent> {
    snapshot
        .agents
        .get(&disruption.disrupted_agent)
        .map(|a| {
            a.pristine
                .events
                .values()
                .filter(|e| disruption.affected_events.contains(&e.id))
                .cloned()
                .collect()
        })
        .unwrap_or_default()
}

pub fn build_input(
    disruption: &Disruption,
    snapshot: &KnowledgeSnapshot,
    factors: &[(AgentId, Factors)],
    ranking: &[(AgentId, f64)],
    params: &ExplorationParams,
) -> PolicyInput {
    let factors: BTreeMap<&AgentId, &Factors> = factors.iter().map(|(a, f)| (a, f)).collect();
    let candidates: Vec<Value> = ranking
        .iter()
        .enumerate()
        .map(|(rank, (id, score))| {
            let a = &snapshot.agents[id];
            json!({
                "id": id,
                "rank": rank + 1,
                "score": score,
                "factors": factors.get(id),
                "performance": a.performance,
                "capabilities": {
                    "events": a.model.events.keys().collect::<Vec<_>>(),
                    "states": a.model.states.keys().collect::<Vec<_>>(),
                },
                "constraints": params.constraints.get(id).cloned().unwrap_or_default(),
            })
        })
        .collect();
    let products: Vec<Value> = snapshot
        .parts
        .iter()
        .map(|(id, p)| {
            json!({
                "part": id.to_string(),
                "current_state": p.current_state,
                "plan": p.plan.as_ref(),
                "history": p.history.as_ref(),
            })
        })
        .collect();
    let env = &snapshot.environment;
    PolicyInput {
        instructions: INSTRUCTIONS.to_string(),
        data: json!({
            "tick": snapshot.tick,
            "disruption": disruption,
            "disrupted_capabilities": disrupted_capabilities(disruption, snapshot),
            "candidates": candidates,
            "products": products,
            "environment": {
                "states": env.model.states.len(),
                "events": env.model.events.len(),
                "marked_states": env.model.marked_states,
                "event_owner": env.event_owner,
            },
        }),
        template: wire::TEMPLATE.to_string(),
    }
}

/// Whether every explored transition, once owned by the exploration agent,
/// leads somewhere a marked state is still reachable from using only
/// operational agents. Returns the first offending event.
pub fn check_reachability(
    output: &ExplorationOutput,
    disruption: &Disruption,
    snapshot: &KnowledgeSnapshot,
) -> Result<(), EventId> {
    let mut env = (*snapshot.environment).clone();
    let source = &snapshot.agents[&disruption.disrupted_agent].pristine;
    for cap in &output.explored_capabilities {
        env.event_owner.insert(cap.id.clone(), output.exploration_agent.clone());
        env.model.add_event(cap.clone());
        for (from, to) in source.transitions_of(&cap.id) {
            env.model.transitions.entry((from.clone(), cap.id.clone())).or_insert_with(|| to.clone());
        }
    }
    let view = env.operational_view(|a| snapshot.is_operational(a));
    for cap in &output.explored_capabilities {
        let mut any = false;
        for (_, to) in source.transitions_of(&cap.id) {
            any = true;
            if path_to_marked(&view, to).is_err() {
                return Err(cap.id.clone());
            }
        }
        if !any {
            return Err(cap.id.clone());
        }
    }
    Ok(())
}

/// Ranks candidates, runs the validation loop and confirms the explored
/// events keep marked states reachable.
pub fn explore(
    disruption: &Disruption,
    snapshot: &KnowledgeSnapshot,
    policy: &mut dyn DecisionPolicy,
    params: &ExplorationParams,
    config: &ScoringConfig,
) -> Result<Exploration, ExplorationError> {
    if !snapshot.agents.contains_key(&disruption.disrupted_agent) {
        return Err(ExplorationError::UnknownAgent(disruption.disrupted_agent.clone()));
    }
    let factors = candidate_factors(disruption, snapshot);
    if factors.is_empty() {
        return Err(ExplorationError::ExplorationFailed { reason: "no candidate agents".into(), rounds: 0 });
    }
    let ranking = score_candidates(&factors, config)?;
    let input = build_input(disruption, snapshot, &factors, &ranking, params);
    let v = validate(policy, &input, params, snapshot, &disruption.disrupted_agent);
    let Some(output) = v.output.filter(|_| v.valid) else {
        let reason = v
            .feedback
            .or_else(|| v.policy_errors.last().cloned())
            .unwrap_or_else(|| "no valid proposal".into());
        return Err(ExplorationError::ExplorationFailed { reason, rounds: v.rounds });
    };
    if let Err(ev) = check_reachability(&output, disruption, snapshot) {
        return Err(ExplorationError::ExplorationFailed {
            reason: format!("explored event {ev} cannot reach a marked state"),
            rounds: v.rounds,
        });
    }
    Ok(Exploration { output, rounds: v.rounds, ranking })
}
