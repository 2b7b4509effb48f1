//! Documents exchanged with a decision policy.

use serde::Deserialize;
use thiserror::Error;

use super::ExplorationOutput;

/// Output schema shown to the policy.
pub const TEMPLATE: &str = r#"{
  "exploration_agent": "<resource agent id>",
  "explored_capabilities": [
    { "id": "<event id>", "kind": "transport|process", "duration": <ticks>, "params": { "<name>": <number> } }
  ],
  "rationale": "<text>"
}"#;

#[derive(Debug, Clone, Error, PartialEq, Eq)]
#[error("syntax error at line {line}, column {column}: {reason}")]
pub struct SyntaxError {
    pub line: usize,
    pub column: usize,
    pub reason: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Document {
    exploration_agent: crate::ids::AgentId,
    explored_capabilities: Vec<crate::model::ProcessEvent>,
    #[serde(default)]
    rationale: String,
}

/// Parses a policy response. Agent ids are not resolved here.
pub fn parse_output(text: &str) -> Result<ExplorationOutput, SyntaxError> {
    let doc: Document = serde_json::from_str(text).map_err(|e| SyntaxError {
        line: e.line(),
        column: e.column(),
        reason: e.to_string(),
    })?;
    if doc.explored_capabilities.is_empty() {
        return Err(SyntaxError { line: 0, column: 0, reason: "explored_capabilities is empty".into() });
    }
    if doc.explored_capabilities.iter().any(|c| c.duration == 0) {
        return Err(SyntaxError { line: 0, column: 0, reason: "capability duration must be positive".into() });
    }
    Ok(ExplorationOutput {
        exploration_agent: doc.exploration_agent,
        explored_capabilities: doc.explored_capabilities,
        rationale: doc.rationale,
    })
}

/// Canonical form: pretty JSON with fields in schema order.
pub fn serialize_output(output: &ExplorationOutput) -> String {
    serde_json::to_string_pretty(output).expect("output is always serializable")
}
