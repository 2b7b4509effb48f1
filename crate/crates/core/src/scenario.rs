//! Scenario files: facility layout, parts, constraints, breakdown schedule and
//! run options, stored as TOML.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exploration::ScoringConfig;
use crate::ids::{AgentId, EventId, PropertyId, StateId, Tick};
use crate::knowledge::ConstraintSet;
use crate::model::{
    CapabilityModel, EnvironmentModel, EventKind, NeighborTable, PartState, PlanStep, ProcessEvent, ProcessPlan,
    Property,
};
use crate::resource::AgentKind;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("unsupported schema_version {0} (expected {SCHEMA_VERSION})")]
    UnsupportedSchema(u32),
    #[error("invalid scenario:\n{}", .0.iter().map(|i| format!("  {i}")).collect::<Vec<_>>().join("\n"))]
    Invalid(Vec<Issue>),
}

/// One validation finding, naming the entity at fault.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Issue {
    pub entity: String,
    pub message: String,
}

impl fmt::Display for Issue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.entity, self.message)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateDef {
    pub id: StateId,
    #[serde(default)]
    pub description: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub props: Vec<PropertyId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cell: Option<u32>,
    /// Free-form tag such as `buffer` or `station`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventDef {
    pub id: EventId,
    pub kind: EventKind,
    pub from: StateId,
    pub to: StateId,
    /// Overrides the transport default or the process time.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration: Option<u64>,
    /// Process id looked up in `process_times`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub process: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub params: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentDef {
    pub id: AgentId,
    pub kind: AgentKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cell: Option<u32>,
    #[serde(default)]
    pub events: Vec<EventDef>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartBatch {
    pub release_tick: Tick,
    pub count: u32,
    pub start_state: StateId,
    /// Each step lists the properties it requires.
    pub plan: Vec<Vec<PropertyId>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DisruptionEntry {
    pub agent: AgentId,
    pub breakdown_tick: Tick,
    pub mttr: Tick,
    /// Events lost while the agent keeps running. Empty means the whole
    /// agent breaks down.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub events: Vec<EventId>,
}

impl DisruptionEntry {
    /// A whole-agent breakdown.
    pub fn new(agent: AgentId, breakdown_tick: Tick, mttr: Tick) -> Self {
        Self { agent, breakdown_tick, mttr, events: Vec::new() }
    }

    pub fn is_partial(&self) -> bool {
        !self.events.is_empty()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyKind {
    #[default]
    Builtin,
    Service,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyDef {
    #[serde(default)]
    pub kind: PolicyKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub service_url: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    #[serde(default)]
    pub scoring: ScoringConfig,
}

impl Default for PolicyDef {
    fn default() -> Self {
        Self { kind: PolicyKind::Builtin, service_url: None, timeout_secs: 30, scoring: ScoringConfig::default() }
    }
}

fn default_timeout() -> u64 {
    30
}

/// Seeded random breakdowns appended to the explicit schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomBreakdowns {
    pub count: u32,
    pub earliest: Tick,
    pub latest: Tick,
    pub mttr_min: Tick,
    pub mttr_max: Tick,
    /// Candidate agents; empty means every robot.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub agents: Vec<AgentId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Options {
    pub exploration: bool,
    pub horizon: Tick,
    pub transport_duration: u64,
    pub retry_limit: u32,
    pub window: Tick,
    pub max_iterations: u32,
    /// Row spacing of the metrics CSV.
    pub stride: Tick,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub random_breakdowns: Option<RandomBreakdowns>,
    /// Parts a buffer state may hold, counting parts already on their way
    /// in. Unset means unlimited. Release states are exempt.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub buffer_capacity: Option<u32>,
}

impl Default for Options {
    fn default() -> Self {
        Self {
            exploration: true,
            horizon: 6000,
            transport_duration: 10,
            retry_limit: 3,
            window: 200,
            max_iterations: 3,
            stride: 10,
            random_breakdowns: None,
            buffer_capacity: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub schema_version: u32,
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub process_times: BTreeMap<String, u64>,
    /// Properties that do not change the part's composition.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub non_physical: Vec<PropertyId>,
    pub states: Vec<StateDef>,
    pub agents: Vec<AgentDef>,
    #[serde(default)]
    pub constraints: BTreeMap<AgentId, ConstraintSet>,
    #[serde(default)]
    pub parts: Vec<PartBatch>,
    #[serde(default)]
    pub disruptions: Vec<DisruptionEntry>,
    #[serde(default)]
    pub policy: PolicyDef,
    #[serde(default)]
    pub options: Options,
}

/// Parses and validates TOML text.
pub fn parse_scenario(text: &str) -> Result<Scenario, ScenarioError> {
    let s: Scenario = toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
    if s.schema_version != SCHEMA_VERSION {
        return Err(ScenarioError::UnsupportedSchema(s.schema_version));
    }
    s.validate()?;
    Ok(s)
}

/// Loads a scenario file, or a bundled scenario when `path_or_name` names one
/// and no such file exists.
pub fn load_scenario(path_or_name: &str) -> Result<Scenario, ScenarioError> {
    let path = Path::new(path_or_name);
    if !path.exists() {
        if let Some(text) = crate::bundled::get(path_or_name) {
            return parse_scenario(text);
        }
    }
    let text = std::fs::read_to_string(path)
        .map_err(|source| ScenarioError::Io { path: path_or_name.to_string(), source })?;
    parse_scenario(&text)
}

pub fn save_scenario(s: &Scenario) -> String {
    toml::to_string(s).expect("scenario is always serializable")
}

impl Scenario {
    pub fn state_catalog(&self) -> BTreeMap<StateId, PartState> {
        self.states
            .iter()
            .map(|s| (s.id.clone(), PartState { id: s.id.clone(), description: s.description.clone() }))
            .collect()
    }

    pub fn event_duration(&self, e: &EventDef) -> Option<u64> {
        if let Some(d) = e.duration {
            return Some(d);
        }
        match e.kind {
            EventKind::Transport => Some(self.options.transport_duration),
            EventKind::Process => e.process.as_ref().and_then(|p| self.process_times.get(p)).copied(),
        }
    }

    /// One capability model per agent. The initial state is the source of the
    /// agent's first event; marked states are the agent's states carrying
    /// properties; shared states are those another agent also holds.
    pub fn build_models(&self) -> BTreeMap<AgentId, (AgentKind, CapabilityModel)> {
        let catalog = self.state_catalog();
        let props: BTreeMap<&StateId, &Vec<PropertyId>> = self.states.iter().map(|s| (&s.id, &s.props)).collect();
        let state = |id: &StateId| {
            catalog.get(id).cloned().unwrap_or(PartState { id: id.clone(), description: String::new() })
        };
        let mut out = BTreeMap::new();
        for a in &self.agents {
            let initial = a.events.first().map(|e| e.from.clone()).unwrap_or_else(|| StateId::new(format!("{}:idle", a.id)));
            let mut m = CapabilityModel::new(state(&initial));
            for e in &a.events {
                m.add_state(state(&e.from));
                m.add_state(state(&e.to));
                m.add_event(ProcessEvent {
                    id: e.id.clone(),
                    kind: e.kind,
                    duration: self.event_duration(e).unwrap_or(1),
                    params: e.params.clone(),
                });
                m.add_transition(e.from.clone(), e.id.clone(), e.to.clone());
            }
            for s in m.states.keys().cloned().collect::<Vec<_>>() {
                if let Some(p) = props.get(&s).filter(|p| !p.is_empty()) {
                    m.physical_props.insert(s.clone(), p.iter().cloned().collect());
                    m.marked_states.insert(s);
                }
            }
            out.insert(a.id.clone(), (a.kind, m));
        }
        let mut holders: BTreeMap<StateId, usize> = BTreeMap::new();
        for (_, m) in out.values() {
            for s in m.states.keys() {
                *holders.entry(s.clone()).or_default() += 1;
            }
        }
        for (_, m) in out.values_mut() {
            m.shared_states = m.states.keys().filter(|s| holders[*s] > 1).cloned().collect();
        }
        out
    }

    /// `N_A[s]` = the other agents holding `s`, for every agent `A`.
    pub fn neighbor_tables(models: &BTreeMap<AgentId, (AgentKind, CapabilityModel)>) -> BTreeMap<AgentId, NeighborTable> {
        let mut tables: BTreeMap<AgentId, NeighborTable> =
            models.keys().map(|a| (a.clone(), NeighborTable::default())).collect();
        for (a, (_, ma)) in models {
            for s in &ma.shared_states {
                for (b, (_, mb)) in models {
                    if a != b && mb.has_state(s) {
                        tables.get_mut(a).expect("table").insert(s.clone(), b.clone());
                    }
                }
            }
        }
        tables
    }

    pub fn environment(&self, models: &BTreeMap<AgentId, (AgentKind, CapabilityModel)>) -> EnvironmentModel {
        let start = self.parts.first().map(|p| p.start_state.clone()).unwrap_or_else(|| self.states[0].id.clone());
        EnvironmentModel::compose(models.iter().map(|(a, (_, m))| (a, m)), start, &self.state_catalog())
    }

    pub fn plan(&self, batch: &PartBatch) -> ProcessPlan {
        let non_physical: BTreeSet<&PropertyId> = self.non_physical.iter().collect();
        ProcessPlan {
            steps: batch
                .plan
                .iter()
                .map(|step| PlanStep {
                    props: step
                        .iter()
                        .map(|p| {
                            if non_physical.contains(p) {
                                Property::non_physical(p.clone())
                            } else {
                                Property::physical(p.clone())
                            }
                        })
                        .collect(),
                })
                .collect(),
        }
    }

    /// The explicit schedule plus any seeded random breakdowns, sorted by
    /// breakdown tick. Random entries never overlap each other or the
    /// explicit ones.
    pub fn schedule(&self, seed: u64) -> Vec<DisruptionEntry> {
        let mut out = self.disruptions.clone();
        if let Some(r) = &self.options.random_breakdowns {
            let pool: Vec<AgentId> = if r.agents.is_empty() {
                self.agents.iter().filter(|a| a.kind == AgentKind::Robot).map(|a| a.id.clone()).collect()
            } else {
                r.agents.clone()
            };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut tries = 0;
            let mut added = 0;
            while added < r.count && tries < 1000 && !pool.is_empty() && r.latest >= r.earliest {
                tries += 1;
                let entry = DisruptionEntry::new(
                    pool[rng.random_range(0..pool.len())].clone(),
                    rng.random_range(r.earliest..=r.latest),
                    rng.random_range(r.mttr_min.max(1)..=r.mttr_max.max(r.mttr_min.max(1))),
                );
                if out.iter().all(|o| !overlaps(o, &entry)) {
                    out.push(entry);
                    added += 1;
                }
            }
        }
        out.sort_by(|a, b| a.breakdown_tick.cmp(&b.breakdown_tick).then_with(|| a.agent.cmp(&b.agent)));
        out
    }

    pub fn total_parts(&self) -> u32 {
        self.parts.iter().map(|b| b.count).sum()
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let issues = self.issues();
        if issues.is_empty() {
            Ok(())
        } else {
            Err(ScenarioError::Invalid(issues))
        }
    }

    /// Every problem found, in a stable order.
    pub fn issues(&self) -> Vec<Issue> {
        let mut out = Vec::new();
        let mut issue = |entity: String, message: String| out.push(Issue { entity, message });

        let mut states = BTreeSet::new();
        for s in &self.states {
            if !states.insert(&s.id) {
                issue(format!("state {}", s.id), "declared twice".into());
            }
        }
        let mut agents = BTreeSet::new();
        let mut events = BTreeSet::new();
        for a in &self.agents {
            if !agents.insert(&a.id) {
                issue(format!("agent {}", a.id), "declared twice".into());
            }
            for e in &a.events {
                let ent = format!("event {} of agent {}", e.id, a.id);
                if !events.insert(&e.id) {
                    issue(ent.clone(), "event id already used".into());
                }
                for s in [&e.from, &e.to] {
                    if !states.contains(s) {
                        issue(ent.clone(), format!("undeclared state {s}"));
                    }
                }
                if let (EventKind::Process, Some(p), None) = (e.kind, &e.process, e.duration) {
                    if !self.process_times.contains_key(p) {
                        issue(ent.clone(), format!("unknown process {p}"));
                    }
                }
                match self.event_duration(e) {
                    None => issue(ent, "process event needs a process or a duration".into()),
                    Some(0) => issue(ent, "duration must be at least 1".into()),
                    _ => {}
                }
            }
        }
        for (a, c) in &self.constraints {
            if !agents.contains(a) {
                issue(format!("constraints {a}"), "unknown agent".into());
            }
            for (p, i) in c.operation_bounds.iter().chain(&c.safety_limits) {
                if !i.is_well_formed() {
                    issue(format!("constraints {a}"), format!("interval for {p} has min > max"));
                }
            }
        }
        let o = &self.options;
        for (name, v) in [
            ("horizon", o.horizon),
            ("window", o.window),
            ("stride", o.stride),
            ("transport_duration", o.transport_duration),
            ("retry_limit", u64::from(o.retry_limit)),
            ("max_iterations", u64::from(o.max_iterations)),
        ] {
            if v == 0 {
                issue(format!("options.{name}"), "must be positive".into());
            }
        }
        if o.buffer_capacity == Some(0) {
            issue("options.buffer_capacity".into(), "must be positive".into());
        }
        if self.policy.kind == PolicyKind::Service && self.policy.service_url.is_none() {
            issue("policy".into(), "service policy needs service_url".into());
        }
        if let Err(e) = self.policy.scoring.check() {
            issue("policy.scoring".into(), e.to_string());
        }

        let mut sched: Vec<&DisruptionEntry> = self.disruptions.iter().collect();
        for d in &sched {
            if !agents.contains(&d.agent) {
                issue(format!("disruption of {}", d.agent), "unknown agent".into());
            }
            if d.mttr == 0 {
                issue(format!("disruption of {}", d.agent), "mttr must be at least 1".into());
            }
            if let Some(def) = self.agents.iter().find(|a| a.id == d.agent) {
                for e in d.events.iter().filter(|e| !def.events.iter().any(|x| &x.id == *e)) {
                    issue(format!("disruption of {}", d.agent), format!("event {e} is not one of its events"));
                }
            }
        }
        sched.sort_by_key(|d| d.breakdown_tick);
        for w in sched.windows(2) {
            if overlaps(w[0], w[1]) {
                issue(
                    format!("disruptions of {} and {}", w[0].agent, w[1].agent),
                    format!(
                        "breakdown windows [{}, {}) and [{}, {}) overlap; only one disruption may be active at a time",
                        w[0].breakdown_tick,
                        w[0].breakdown_tick + w[0].mttr,
                        w[1].breakdown_tick,
                        w[1].breakdown_tick + w[1].mttr
                    ),
                );
            }
        }

        if !out.is_empty() {
            return out;
        }
        let models = self.build_models();
        if !topology_connected(&models) {
            out.push(Issue { entity: "topology".into(), message: "agents and states do not form one connected facility".into() });
        }
        let env = self.environment(&models);
        for (i, batch) in self.parts.iter().enumerate() {
            let ent = format!("parts[{i}]");
            if !states.contains(&batch.start_state) {
                out.push(Issue { entity: ent, message: format!("undeclared start state {}", batch.start_state) });
                continue;
            }
            if batch.plan.is_empty() || batch.plan.iter().any(|s| s.is_empty()) {
                out.push(Issue { entity: ent, message: "plan steps must be non-empty".into() });
                continue;
            }
            let mut current = BTreeSet::from([batch.start_state.clone()]);
            for (k, step) in batch.plan.iter().enumerate() {
                let required: BTreeSet<PropertyId> = step.iter().cloned().collect();
                let targets: BTreeSet<StateId> = reachable(&env, &current)
                    .intersection(&env.model.states_satisfying(&required))
                    .cloned()
                    .collect();
                if targets.is_empty() {
                    out.push(Issue {
                        entity: format!("{ent}.plan[{k}]"),
                        message: format!("no reachable state provides {}", step.iter().map(|p| p.as_str()).collect::<Vec<_>>().join("+")),
                    });
                    break;
                }
                current = targets;
            }
        }
        out
    }
}

fn overlaps(a: &DisruptionEntry, b: &DisruptionEntry) -> bool {
    a.breakdown_tick < b.breakdown_tick + b.mttr && b.breakdown_tick < a.breakdown_tick + a.mttr
}

/// States reachable from `from` (excluding `from` unless revisited).
fn reachable(env: &EnvironmentModel, from: &BTreeSet<StateId>) -> BTreeSet<StateId> {
    let mut seen = BTreeSet::new();
    let mut queue: VecDeque<&StateId> = from.iter().collect();
    while let Some(s) = queue.pop_front() {
        for (_, next) in env.model.outgoing(s) {
            if seen.insert(next.clone()) {
                queue.push_back(next);
            }
        }
    }
    seen
}

fn topology_connected(models: &BTreeMap<AgentId, (AgentKind, CapabilityModel)>) -> bool {
    let Some(first) = models.keys().next() else {
        return true;
    };
    let dist = crate::exploration::agent_distances(models.iter().map(|(a, (_, m))| (a, m)), first);
    dist.len() == models.len()
}
