//! The bounded propose, parse and check loop.

use super::policy::DecisionPolicy;
use super::wire::parse_output;
use super::{ExplorationOutput, ExplorationParams, PolicyInput};
use crate::ids::AgentId;
use crate::knowledge::{check_constraints, KnowledgeSnapshot};

pub const SYNTAX_ERROR: &str = "Syntax error";
pub const INVALID_AGENT: &str = "Invalid agent";
pub const CONSTRAINTS_NOT_MET: &str = "Constraints not met";

#[derive(Debug, Clone, PartialEq)]
pub struct Validation {
    pub valid: bool,
    pub output: Option<ExplorationOutput>,
    /// Feedback of the last rejected round.
    pub feedback: Option<String>,
    pub rounds: u32,
    /// Policy transport failures, one per affected round.
    pub policy_errors: Vec<String>,
}

/// Checks one parsed output. The proposed agent must be known, operational
/// and not the disrupted agent; the capabilities must be events the disrupted
/// agent had; every parameter must sit inside both of the agent's interval
/// sets.
pub fn check_output(
    output: &ExplorationOutput,
    params: &ExplorationParams,
    snapshot: &KnowledgeSnapshot,
    disrupted: &AgentId,
) -> Result<(), String> {
    let agent = &output.exploration_agent;
    if agent == disrupted || !snapshot.is_operational(agent) {
        return Err(INVALID_AGENT.to_string());
    }
    if let Some(d) = snapshot.agents.get(disrupted) {
        if let Some(c) = output.explored_capabilities.iter().find(|c| !d.pristine.events.contains_key(&c.id)) {
            return Err(format!("{SYNTAX_ERROR}: unknown capability {}", c.id));
        }
    }
    let constraints = params.constraints.get(agent).cloned().unwrap_or_default();
    let violations: Vec<String> = output
        .explored_capabilities
        .iter()
        .flat_map(|c| check_constraints(&constraints, c))
        .map(|v| v.to_string())
        .collect();
    if violations.is_empty() {
        Ok(())
    } else {
        let mut names = violations;
        names.dedup();
        Err(format!("{CONSTRAINTS_NOT_MET}: {}", names.join(", ")))
    }
}

/// Runs at most `params.max_iterations` propose rounds. Every rejection is
/// fed back into the next proposal.
pub fn validate(
    policy: &mut dyn DecisionPolicy,
    input: &PolicyInput,
    params: &ExplorationParams,
    snapshot: &KnowledgeSnapshot,
    disrupted: &AgentId,
) -> Validation {
    policy.reset();
    let mut feedback: Option<String> = None;
    let mut policy_errors = Vec::new();
    let n = params.max_iterations.max(1);
    for round in 1..=n {
        let text = match policy.propose(input, feedback.as_deref()) {
            Ok(t) => t,
            Err(e) => {
                policy_errors.push(e.to_string());
                continue;
            }
        };
        let verdict = match parse_output(&text) {
            Err(_) => Err(SYNTAX_ERROR.to_string()),
            Ok(o) => check_output(&o, params, snapshot, disrupted).map(|_| o),
        };
        match verdict {
            Ok(o) => {
                return Validation { valid: true, output: Some(o), feedback: None, rounds: round, policy_errors }
            }
            Err(fb) => feedback = Some(fb),
        }
    }
    Validation { valid: false, output: None, feedback, rounds: n, policy_errors }
}
