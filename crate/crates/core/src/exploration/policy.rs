//! Decision policies that propose an exploration agent and its capabilities.

use std::time::Duration;

use serde::Serialize;
use serde_json::Value;

use super::wire::serialize_output;
use super::{ExplorationError, ExplorationOutput, PolicyInput};
use crate::model::ProcessEvent;

/// Environment variable holding the optional bearer token for the service.
pub const TOKEN_ENV: &str = "CAPEX_SERVICE_TOKEN";

pub trait DecisionPolicy {
    fn name(&self) -> &str;

    /// Called once before the first proposal of an exploration.
    fn reset(&mut self) {}

    /// Returns a response that should match the template. `feedback` is the
    /// rejection reason of the previous proposal, if any.
    fn propose(&mut self, input: &PolicyInput, feedback: Option<&str>) -> Result<String, ExplorationError>;
}

/// Deterministic policy: proposes the best-ranked candidate not yet rejected,
/// taking over every disrupted event with its parameters unchanged.
#[derive(Debug, Default, Clone)]
pub struct BuiltinPolicy {
    rejected: usize,
}

impl BuiltinPolicy {
    pub fn new() -> Self {
        Self::default()
    }
}

impl DecisionPolicy for BuiltinPolicy {
    fn name(&self) -> &str {
        "builtin"
    }

    fn reset(&mut self) {
        self.rejected = 0;
    }

    fn propose(&mut self, input: &PolicyInput, feedback: Option<&str>) -> Result<String, ExplorationError> {
        if feedback.is_some() {
            self.rejected += 1;
        }
        let bad = |what: &str| ExplorationError::PolicyUnavailable(format!("builtin policy: {what}"));
        let candidates = input.data["candidates"].as_array().ok_or_else(|| bad("no candidate list"))?;
        let chosen = candidates
            .get(self.rejected)
            .and_then(|c| c["id"].as_str())
            .ok_or_else(|| bad("no candidate left"))?;
        let caps: Vec<ProcessEvent> = serde_json::from_value(input.data["disrupted_capabilities"].clone())
            .map_err(|e| bad(&e.to_string()))?;
        let score = candidates[self.rejected]["score"].as_f64().unwrap_or(0.0);
        Ok(serialize_output(&ExplorationOutput {
            exploration_agent: chosen.into(),
            explored_capabilities: caps,
            rationale: format!("highest remaining suitability score {score:.4}"),
        }))
    }
}

#[derive(Serialize)]
struct Request<'a> {
    instructions: String,
    data: &'a Value,
    template: &'a str,
}

/// Adapter for an external decision service: POSTs the policy input as JSON
/// and returns the response body verbatim.
#[derive(Debug)]
pub struct ServicePolicy {
    url: String,
    token: Option<String>,
    client: reqwest::blocking::Client,
}

impl ServicePolicy {
    pub fn new(url: impl Into<String>, token: Option<String>, timeout: Duration) -> Result<Self, ExplorationError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| ExplorationError::PolicyUnavailable(e.to_string()))?;
        Ok(Self { url: url.into(), token, client })
    }

    /// Default 30 s timeout, token taken from [`TOKEN_ENV`].
    pub fn from_env(url: impl Into<String>) -> Result<Self, ExplorationError> {
        let token = std::env::var(TOKEN_ENV).ok().filter(|t| !t.is_empty());
        Self::new(url, token, Duration::from_secs(30))
    }
}

impl DecisionPolicy for ServicePolicy {
    fn name(&self) -> &str {
        "service"
    }

    fn propose(&mut self, input: &PolicyInput, feedback: Option<&str>) -> Result<String, ExplorationError> {
        let mut instructions = input.instructions.clone();
        if let Some(fb) = feedback {
            instructions.push_str("\n\nYour previous answer was rejected: ");
            instructions.push_str(fb);
        }
        let body = serde_json::to_string(&Request { instructions, data: &input.data, template: &input.template })
            .map_err(|e| ExplorationError::PolicyUnavailable(e.to_string()))?;
        let mut req = self
            .client
            .post(&self.url)
            .header(reqwest::header::CONTENT_TYPE, "application/json")
            .body(body);
        if let Some(t) = &self.token {
            req = req.bearer_auth(t);
        }
        let resp = req.send().map_err(|e| ExplorationError::PolicyUnavailable(e.to_string()))?;
        let status = resp.status();
        let text = resp.text().map_err(|e| ExplorationError::PolicyUnavailable(e.to_string()))?;
        if !status.is_success() {
            return Err(ExplorationError::PolicyUnavailable(format!("service answered {status}")));
        }
        Ok(text)
    }
}
