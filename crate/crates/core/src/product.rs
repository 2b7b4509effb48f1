//! Product agents: steer one part through its process plan by bidding.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::{AgentId, PartId, PropertyId, StateId, Tick};
use crate::model::{neighbor_lookup, EnvironmentModel, NeighborTable, ProcessPlan, ProductHistory};
use crate::resource::ResourceAgent;
use crate::route::RouteCosts;

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum ProductError {
    #[error("history achieves step {achieved} while step {missing} is still open")]
    InconsistentHistory { missing: usize, achieved: usize },
    #[error("no resource agent reachable from {0}")]
    NoReachableAgents(StateId),
    #[error("every bid was invalid")]
    AllBidsInvalid,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Requirement {
    /// Index into the plan and the properties that step requires.
    Step(usize, BTreeSet<PropertyId>),
    PlanComplete,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BidRequest {
    pub part_id: PartId,
    pub required_props: BTreeSet<PropertyId>,
    pub from_state: StateId,
    pub deadline_hint: Option<Tick>,
}

/// A sealed bid. The promised path lists each event with the agent that will
/// run it; the bidder runs the first one.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bid {
    pub bidder: AgentId,
    pub promised_path: Vec<(crate::ids::EventId, AgentId)>,
    pub completion_cost: Tick,
    pub valid: bool,
    pub reason: Option<String>,
}

impl Bid {
    pub fn invalid(bidder: AgentId, reason: &str) -> Self {
        Self {
            bidder,
            promised_path: Vec::new(),
            completion_cost: 0,
            valid: false,
            reason: Some(reason.to_string()),
        }
    }
}

/// The first plan step not yet covered by the achieved properties.
pub fn next_requirement(plan: &ProcessPlan, history: &ProductHistory) -> Result<Requirement, ProductError> {
    let achieved = history.achieved();
    let done: Vec<bool> = plan
        .steps
        .iter()
        .map(|s| s.props.iter().all(|p| achieved.contains(&p.id)))
        .collect();
    let Some(first_open) = done.iter().position(|d| !d) else {
        return Ok(Requirement::PlanComplete);
    };
    if let Some(later) = done[first_open..].iter().position(|d| *d) {
        return Err(ProductError::InconsistentHistory {
            missing: first_open,
            achieved: first_open + later,
        });
    }
    Ok(Requirement::Step(first_open, plan.steps[first_open].property_ids()))
}

/// The agents a request is sent to: the neighbours registered for the
/// part's state plus the agent holding that state privately.
pub fn contacted_agents(
    state: &StateId,
    neighbors: &NeighborTable,
    owner: Option<&AgentId>,
) -> BTreeSet<AgentId> {
    let mut set = neighbor_lookup(neighbors, state);
    if let Some(o) = owner {
        set.insert(o.clone());
    }
    set
}

/// Sends the request to every contacted agent and collects one bid each.
pub fn solicit_bids<'a>(
    req: &BidRequest,
    env: &EnvironmentModel,
    neighbors: &NeighborTable,
    owner: Option<&AgentId>,
    agents: impl IntoIterator<Item = &'a mut ResourceAgent>,
    now: Tick,
    costs: &impl RouteCosts,
) -> Result<Vec<Bid>, ProductError> {
    let contacted = contacted_agents(&req.from_state, neighbors, owner);
    if contacted.is_empty() {
        return Err(ProductError::NoReachableAgents(req.from_state.clone()));
    }
    let mut bids = Vec::with_capacity(contacted.len());
    for agent in agents {
        if contacted.contains(&agent.id) {
            bids.push(agent.evaluate_bid(req, env, now, costs));
        }
    }
    // contacted ids with no live agent still answer, as unreachable
    for id in &contacted {
        if !bids.iter().any(|b| &b.bidder == id) {
            bids.push(Bid::invalid(id.clone(), "UnknownAgent"));
        }
    }
    bids.sort_by(|a, b| a.bidder.cmp(&b.bidder));
    Ok(bids)
}

/// Lowest completion cost wins; ties go to the smaller bidder id.
pub fn select_bid(bids: &[Bid]) -> Result<&Bid, ProductError> {
    bids.iter()
        .filter(|b| b.valid)
        .min_by(|a, b| a.completion_cost.cmp(&b.completion_cost).then_with(|| a.bidder.cmp(&b.bidder)))
        .ok_or(ProductError::AllBidsInvalid)
}

/// Appends a reported state to the history.
pub fn record_progress(
    mut history: ProductHistory,
    state: StateId,
    props: BTreeSet<PropertyId>,
    reporter: AgentId,
) -> ProductHistory {
    history.visited_states.push(state.clone());
    if !props.is_empty() {
        history.achieved_props.entry(state.clone()).or_default().extend(props);
    }
    history.reporting_agent.insert(state, reporter);
    history
}
