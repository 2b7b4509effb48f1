//! Deterministic tick loop.
//!
//! Each tick runs the same phases in the same order: breakdowns and repairs,
//! controller sampling and disruption detection, exploration and merge,
//! resource completions, part release and bidding, and finally starts. Every
//! collection is ordered, so a run is a pure function of the scenario, the
//! seed and the policy's answers.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exploration::{
    explore, merge_capabilities, revoke_capabilities, BuiltinPolicy, DecisionPolicy, ExplorationError,
    ExplorationParams, MergeRecord, ScoringConfig, ServicePolicy,
};
use crate::ids::{AgentId, EventId, PartId, StateId, Tick};
use crate::knowledge::{detect_disruptions, ConstraintSet, KnowledgeSnapshot, PartSnapshot};
use crate::model::{EnvironmentModel, NeighborTable, ProcessPlan, ProductHistory};
use crate::product::{next_requirement, record_progress, select_bid, solicit_bids, BidRequest, Requirement};
use crate::resource::{ResourceAgent, ResourceStatus};
use crate::route::RouteCosts;
use crate::scenario::{DisruptionEntry, PolicyKind, Scenario, ScenarioError};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    ScenarioInvalid(#[from] ScenarioError),
    #[error("schedule: {0}")]
    Schedule(String),
    #[error(transparent)]
    Policy(#[from] ExplorationError),
}

/// Breakdowns with their repair times. At most one agent is down at a time.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DisruptionSchedule {
    entries: Vec<DisruptionEntry>,
}

impl DisruptionSchedule {
    pub fn new(mut entries: Vec<DisruptionEntry>) -> Result<Self, EngineError> {
        entries.sort_by(|a, b| a.breakdown_tick.cmp(&b.breakdown_tick).then_with(|| a.agent.cmp(&b.agent)));
        for e in &entries {
            if e.mttr == 0 {
                return Err(EngineError::Schedule(format!("{}: mttr must be at least 1", e.agent)));
            }
        }
        for w in entries.windows(2) {
            if w[1].breakdown_tick < w[0].breakdown_tick + w[0].mttr {
                return Err(EngineError::Schedule(format!(
                    "{} breaks at {} while {} is down until {}",
                    w[1].agent,
                    w[1].breakdown_tick,
                    w[0].agent,
                    w[0].breakdown_tick + w[0].mttr
                )));
            }
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[DisruptionEntry] {
        &self.entries
    }

    pub fn breakdowns_at(&self, now: Tick) -> impl Iterator<Item = &DisruptionEntry> {
        self.entries.iter().filter(move |e| e.breakdown_tick == now)
    }

    pub fn repairs_at(&self, now: Tick) -> impl Iterator<Item = &DisruptionEntry> {
        self.entries.iter().filter(move |e| e.breakdown_tick + e.mttr == now)
    }
}

/// A status change applied by [`inject`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StatusChange {
    Broke { agent: AgentId, repair_at: Tick },
    /// Partial disruption: the agent keeps running without `events`.
    Degraded { agent: AgentId, events: BTreeSet<EventId>, repair_at: Tick },
    Repaired { agent: AgentId },
}

/// Applies the breakdowns and repairs due at `now`. Repairs go first.
pub fn inject(
    schedule: &DisruptionSchedule,
    now: Tick,
    agents: &mut BTreeMap<AgentId, ResourceAgent>,
) -> Vec<(StatusChange, crate::resource::StatusEffects)> {
    let mut out = Vec::new();
    for e in schedule.repairs_at(now) {
        if let Some(a) = agents.get_mut(&e.agent) {
            let fx = a.apply_status(ResourceStatus::operational());
            out.push((StatusChange::Repaired { agent: e.agent.clone() }, fx));
        }
    }
    for e in schedule.breakdowns_at(now) {
        let Some(a) = agents.get_mut(&e.agent) else { continue };
        let repair_at = now + e.mttr;
        if e.is_partial() {
            let events: BTreeSet<EventId> = e.events.iter().cloned().collect();
            let fx = a.lose_events(&events);
            out.push((StatusChange::Degraded { agent: e.agent.clone(), events, repair_at }, fx));
        } else {
            let fx = a.apply_status(ResourceStatus::broken(now, e.mttr));
            out.push((StatusChange::Broke { agent: e.agent.clone(), repair_at }, fx));
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LogKind {
    Release,
    Bid,
    Award,
    BidFailed,
    Start,
    Complete,
    PartCompleted,
    PartFailed,
    Cancel,
    Breakdown,
    Repair,
    Explore,
    ExploreFailed,
    Merge,
    Revoke,
}

impl fmt::Display for LogKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default();
        f.write_str(&s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogRecord {
    pub tick: Tick,
    pub kind: LogKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agent: Option<AgentId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub part: Option<String>,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExplorationRecord {
    pub tick: Tick,
    pub disrupted: AgentId,
    pub exploration_agent: Option<AgentId>,
    pub explored: Vec<EventId>,
    pub rounds: u32,
    pub ranking: Vec<(AgentId, f64)>,
    pub error: Option<String>,
}

/// The facility right after a merge, kept for auditing.
#[derive(Debug, Clone)]
pub struct MergeAudit {
    pub tick: Tick,
    pub record: MergeRecord,
    pub environment: EnvironmentModel,
    pub operational: BTreeSet<AgentId>,
}

#[derive(Debug, Clone)]
pub struct RunMetrics {
    pub scenario: String,
    pub seed: u64,
    pub exploration: bool,
    pub horizon: Tick,
    pub window: Tick,
    pub released: u32,
    pub completed_parts: u32,
    pub failed_parts: u32,
    pub completion_ticks: BTreeMap<PartId, Tick>,
    pub failure_ticks: BTreeMap<PartId, Tick>,
    /// Completed parts at the end of each tick.
    pub throughput_series: Vec<u32>,
    /// Trailing-window utilization sampled at each tick.
    pub utilization_series: BTreeMap<AgentId, Vec<f64>>,
    /// Whether each agent was busy during each tick.
    pub busy: BTreeMap<AgentId, Vec<bool>>,
    pub event_log: Vec<LogRecord>,
    pub explorations: Vec<ExplorationRecord>,
    pub merges: Vec<MergeAudit>,
    pub histories: BTreeMap<PartId, ProductHistory>,
    pub final_states: BTreeMap<PartId, StateId>,
    pub schedule: Vec<DisruptionEntry>,
}

impl RunMetrics {
    pub fn in_system(&self) -> u32 {
        self.released - self.completed_parts - self.failed_parts
    }

    /// The event log as line-delimited JSON.
    pub fn event_log_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.event_log {
            out.push_str(&serde_json::to_string(r).expect("log record serializes"));
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Outcome {
    Completed,
    Failed,
}

#[derive(Debug, Clone)]
struct Part {
    plan: Arc<ProcessPlan>,
    history: Arc<ProductHistory>,
    state: StateId,
    /// Remaining awarded events with the agent running each.
    path: VecDeque<(EventId, AgentId)>,
    in_flight: bool,
    attempts: u32,
    outcome: Option<Outcome>,
}

impl Part {
    fn active(&self) -> bool {
        self.outcome.is_none()
    }
}

struct FreeAt(BTreeMap<AgentId, Option<Tick>>);

impl RouteCosts for FreeAt {
    fn free_at(&self, agent: &AgentId) -> Option<Tick> {
        self.0.get(agent).copied().flatten()
    }
}

/// Builds the policy named by the scenario.
pub fn policy_for(scenario: &Scenario) -> Result<Box<dyn DecisionPolicy>, EngineError> {
    Ok(match scenario.policy.kind {
        PolicyKind::Builtin => Box::new(BuiltinPolicy::new()),
        PolicyKind::Service => {
            let url = scenario
                .policy
                .service_url
                .clone()
                .ok_or_else(|| ExplorationError::PolicyUnavailable("service policy needs a url".into()))?;
            let token = std::env::var(crate::exploration::policy::TOKEN_ENV).ok().filter(|t| !t.is_empty());
            Box::new(ServicePolicy::new(url, token, Duration::from_secs(scenario.policy.timeout_secs))?)
        }
    })
}

/// Runs a scenario with its configured policy.
pub fn run(scenario: &Scenario, seed: u64) -> Result<RunMetrics, EngineError> {
    let mut policy = policy_for(scenario)?;
    run_with_policy(scenario, seed, policy.as_mut())
}

pub fn run_with_policy(
    scenario: &Scenario,
    seed: u64,
    policy: &mut dyn DecisionPolicy,
) -> Result<RunMetrics, EngineError> {
    let mut engine = Engine::new(scenario, seed, policy)?;
    while !engine.finished() {
        engine.step();
    }
    Ok(engine.into_metrics())
}

pub struct Engine<'p> {
    now: Tick,
    horizon: Tick,
    window: Tick,
    retry_limit: u32,
    exploration: bool,
    params: ExplorationParams,
    scoring: ScoringConfig,
    agents: BTreeMap<AgentId, ResourceAgent>,
    env: Arc<EnvironmentModel>,
    tables: BTreeMap<AgentId, NeighborTable>,
    directory: NeighborTable,
    owners: BTreeMap<StateId, AgentId>,
    constraints: Arc<BTreeMap<AgentId, ConstraintSet>>,
    parts: BTreeMap<PartId, Part>,
    releases: Vec<(Tick, u32, StateId, Arc<ProcessPlan>)>,
    next_part: u32,
    schedule: DisruptionSchedule,
    active_merges: BTreeMap<AgentId, MergeRecord>,
    previous: Option<KnowledgeSnapshot>,
    /// Capacity-limited buffer states, empty when capacity is unlimited.
    buffers: BTreeSet<StateId>,
    buffer_capacity: u32,
    policy: &'p mut dyn DecisionPolicy,
    metrics: RunMetrics,
}

impl<'p> Engine<'p> {
    pub fn new(scenario: &Scenario, seed: u64, policy: &'p mut dyn DecisionPolicy) -> Result<Self, EngineError> {
        scenario.validate()?;
        let schedule = DisruptionSchedule::new(scenario.schedule(seed))?;
        let models = scenario.build_models();
        let tables = Scenario::neighbor_tables(&models);
        let env = scenario.environment(&models);
        let agents: BTreeMap<AgentId, ResourceAgent> = models
            .into_iter()
            .map(|(id, (kind, m))| (id.clone(), ResourceAgent::new(id, kind, m)))
            .collect();
        let releases = scenario
            .parts
            .iter()
            .map(|b| (b.release_tick, b.count, b.start_state.clone(), Arc::new(scenario.plan(b))))
            .collect();
        let o = &scenario.options;
        let release_states: BTreeSet<&StateId> = scenario.parts.iter().map(|b| &b.start_state).collect();
        let buffers = match o.buffer_capacity {
            Some(_) => scenario
                .states
                .iter()
                .filter(|s| s.kind.as_deref() == Some("buffer") && !release_states.contains(&s.id))
                .map(|s| s.id.clone())
                .collect(),
            None => BTreeSet::new(),
        };
        let metrics = RunMetrics {
            scenario: scenario.name.clone(),
            seed,
            exploration: o.exploration,
            horizon: o.horizon,
            window: o.window,
            released: 0,
            completed_parts: 0,
            failed_parts: 0,
            completion_ticks: BTreeMap::new(),
            failure_ticks: BTreeMap::new(),
            throughput_series: Vec::with_capacity(o.horizon as usize),
            utilization_series: agents.keys().map(|a| (a.clone(), Vec::with_capacity(o.horizon as usize))).collect(),
            busy: BTreeMap::new(),
            event_log: Vec::new(),
            explorations: Vec::new(),
            merges: Vec::new(),
            histories: BTreeMap::new(),
            final_states: BTreeMap::new(),
            schedule: schedule.entries().to_vec(),
        };
        let mut engine = Self {
            now: 0,
            horizon: o.horizon,
            window: o.window,
            retry_limit: o.retry_limit,
            exploration: o.exploration,
            params: ExplorationParams { constraints: scenario.constraints.clone(), max_iterations: o.max_iterations },
            scoring: scenario.policy.scoring.clone(),
            agents,
            env: Arc::new(env),
            tables,
            directory: NeighborTable::default(),
            owners: BTreeMap::new(),
            constraints: Arc::new(scenario.constraints.clone()),
            parts: BTreeMap::new(),
            releases,
            next_part: 1,
            schedule,
            active_merges: BTreeMap::new(),
            previous: None,
            buffers,
            buffer_capacity: o.buffer_capacity.unwrap_or(u32::MAX),
            policy,
            metrics,
        };
        engine.refresh_routing();
        Ok(engine)
    }

    pub fn now(&self) -> Tick {
        self.now
    }

    pub fn finished(&self) -> bool {
        self.now >= self.horizon
    }

    pub fn agents(&self) -> &BTreeMap<AgentId, ResourceAgent> {
        &self.agents
    }

    pub fn environment(&self) -> &EnvironmentModel {
        &self.env
    }

    pub fn neighbor_tables(&self) -> &BTreeMap<AgentId, NeighborTable> {
        &self.tables
    }

    pub fn metrics(&self) -> &RunMetrics {
        &self.metrics
    }

    /// Runs one tick.
    pub fn step(&mut self) {
        let now = self.now;
        self.phase_inject(now);
        let snapshot = self.phase_sample(now);
        self.phase_explore(now, &snapshot);
        self.previous = Some(snapshot);
        self.phase_complete(now);
        self.phase_release(now);
        self.phase_bid(now);
        self.phase_start(now);
        self.metrics.throughput_series.push(self.metrics.completed_parts);
        self.now += 1;
    }

    pub fn into_metrics(mut self) -> RunMetrics {
        for (id, a) in &self.agents {
            self.metrics.busy.insert(id.clone(), a.busy_flags());
        }
        for (id, p) in &self.parts {
            self.metrics.histories.insert(*id, (*p.history).clone());
            self.metrics.final_states.insert(*id, p.state.clone());
        }
        self.metrics
    }

    fn log(&mut self, kind: LogKind, agent: Option<&AgentId>, part: Option<PartId>, detail: impl Into<String>) {
        self.metrics.event_log.push(LogRecord {
            tick: self.now,
            kind,
            agent: agent.cloned(),
            part: part.map(|p| p.to_string()),
            detail: detail.into(),
        });
    }

    /// Rebuilds the shared-state directory and the private-state owners from
    /// the current tables and models.
    fn refresh_routing(&mut self) {
        let mut directory = NeighborTable::default();
        for t in self.tables.values() {
            for (s, set) in &t.entries {
                for a in set {
                    directory.insert(s.clone(), a.clone());
                }
            }
        }
        let mut holders: BTreeMap<&StateId, Vec<&AgentId>> = BTreeMap::new();
        for (id, a) in &self.agents {
            for s in a.model().states.keys() {
                holders.entry(s).or_default().push(id);
            }
        }
        self.owners = holders
            .into_iter()
            .filter(|(_, h)| h.len() == 1)
            .map(|(s, h)| (s.clone(), h[0].clone()))
            .collect();
        self.directory = directory;
    }

    fn cancel_reservations(&mut self, part: PartId) {
        for a in self.agents.values_mut() {
            a.cancel_part(part);
        }
        if let Some(p) = self.parts.get_mut(&part) {
            p.path.clear();
        }
    }

    fn fail_part(&mut self, part: PartId, reason: &str) {
        self.cancel_reservations(part);
        let Some(p) = self.parts.get_mut(&part) else { return };
        if !p.active() {
            return;
        }
        p.outcome = Some(Outcome::Failed);
        self.metrics.failed_parts += 1;
        self.metrics.failure_ticks.insert(part, self.now);
        self.log(LogKind::PartFailed, None, Some(part), reason);
    }

    fn phase_inject(&mut self, now: Tick) {
        // revoke before the repair itself so the exploration agent's queue is
        // cleaned while the disrupted agent is still down
        let repaired: Vec<AgentId> = self.schedule.repairs_at(now).map(|e| e.agent.clone()).collect();
        for agent in &repaired {
            if let Some(record) = self.active_merges.remove(agent) {
                let env = Arc::make_mut(&mut self.env);
                let cancelled = revoke_capabilities(&mut self.agents, env, &mut self.tables, &record);
                let detail = format!(
                    "{} returns {} event(s) to {}",
                    record.exploration_agent,
                    record.events.len(),
                    record.disrupted
                );
                self.log(LogKind::Revoke, Some(&record.exploration_agent), None, detail);
                for p in cancelled {
                    self.cancel_reservations(p);
                    self.log(LogKind::Cancel, Some(&record.exploration_agent), Some(p), "capability revoked");
                }
            }
        }
        let lost: BTreeMap<AgentId, BTreeSet<EventId>> = repaired
            .iter()
            .filter_map(|a| Some((a.clone(), self.agents.get(a)?.lost_events().clone())))
            .filter(|(_, l)| !l.is_empty())
            .collect();
        let changes = inject(&self.schedule, now, &mut self.agents);
        let mut degraded = false;
        for (change, fx) in changes {
            match change {
                StatusChange::Repaired { agent } => {
                    if let Some(events) = lost.get(&agent) {
                        let source = self.agents[&agent].pristine_arc();
                        Arc::make_mut(&mut self.env).reinstate_events(&agent, &source, events);
                    }
                    self.log(LogKind::Repair, Some(&agent), None, "");
                }
                StatusChange::Degraded { agent, events, repair_at } => {
                    Arc::make_mut(&mut self.env).withdraw_events(&events);
                    degraded = true;
                    let names: Vec<&str> = events.iter().map(|e| e.as_str()).collect();
                    self.log(LogKind::Breakdown, Some(&agent), None, format!("loses {}; repair at {repair_at}", names.join(" ")));
                    for p in fx.failed {
                        self.fail_part(p, &format!("inside {agent} when it lost the event"));
                    }
                    for p in fx.cancelled {
                        self.cancel_reservations(p);
                        self.log(LogKind::Cancel, Some(&agent), Some(p), "reservation dropped by partial disruption");
                    }
                }
                StatusChange::Broke { agent, repair_at } => {
                    self.log(LogKind::Breakdown, Some(&agent), None, format!("repair at {repair_at}"));
                    for p in fx.failed {
                        self.fail_part(p, &format!("inside {agent} when it broke"));
                    }
                    for p in fx.cancelled {
                        self.cancel_reservations(p);
                        self.log(LogKind::Cancel, Some(&agent), Some(p), "reservation dropped by breakdown");
                    }
                }
            }
        }
        if !repaired.is_empty() || degraded {
            self.refresh_routing();
        }
    }

    fn phase_sample(&mut self, now: Tick) -> KnowledgeSnapshot {
        let parts = self
            .parts
            .iter()
            .filter(|(_, p)| p.active())
            .map(|(id, p)| {
                (
                    *id,
                    PartSnapshot {
                        plan: Arc::clone(&p.plan),
                        history: Arc::clone(&p.history),
                        current_state: p.state.clone(),
                    },
                )
            })
            .collect();
        let snapshot = KnowledgeSnapshot::capture(
            now,
            self.agents.values(),
            self.window,
            parts,
            Arc::clone(&self.env),
            Arc::clone(&self.constraints),
        );
        for (id, a) in &snapshot.agents {
            if let Some(series) = self.metrics.utilization_series.get_mut(id) {
                series.push(a.performance.utilization);
            }
        }
        snapshot
    }

    fn phase_explore(&mut self, now: Tick, snapshot: &KnowledgeSnapshot) {
        let disruptions = match &self.previous {
            Some(prev) => detect_disruptions(snapshot, prev),
            None => {
                let empty = KnowledgeSnapshot { agents: BTreeMap::new(), ..snapshot.clone() };
                detect_disruptions(snapshot, &empty)
            }
        };
        if !self.exploration {
            return;
        }
        for d in disruptions {
            let result = explore(&d, snapshot, &mut *self.policy, &self.params, &self.scoring);
            match result {
                Ok(x) => {
                    let e = x.output.exploration_agent.clone();
                    self.metrics.explorations.push(ExplorationRecord {
                        tick: now,
                        disrupted: d.disrupted_agent.clone(),
                        exploration_agent: Some(e.clone()),
                        explored: x.output.explored_capabilities.iter().map(|c| c.id.clone()).collect(),
                        rounds: x.rounds,
                        ranking: x.ranking.clone(),
                        error: None,
                    });
                    let detail = format!(
                        "{} selected for {} after {} round(s)",
                        e, d.disrupted_agent, x.rounds
                    );
                    self.log(LogKind::Explore, Some(&d.disrupted_agent), None, detail);
                    let env = Arc::make_mut(&mut self.env);
                    let record = merge_capabilities(&mut self.agents, env, &mut self.tables, &x.output, &d);
                    let detail = format!(
                        "{} event(s) from {}, {} neighbour entries",
                        record.events.len(),
                        record.disrupted,
                        record.table_insertions.len()
                    );
                    self.log(LogKind::Merge, Some(&e), None, detail);
                    self.metrics.merges.push(MergeAudit {
                        tick: now,
                        record: record.clone(),
                        environment: (*self.env).clone(),
                        operational: self.agents.values().filter(|a| a.is_operational()).map(|a| a.id.clone()).collect(),
                    });
                    self.active_merges.insert(d.disrupted_agent.clone(), record);
                    self.refresh_routing();
                }
                Err(err) => {
                    let (rounds, msg) = match &err {
                        ExplorationError::ExplorationFailed { rounds, reason } => (*rounds, reason.clone()),
                        other => (0, other.to_string()),
                    };
                    self.metrics.explorations.push(ExplorationRecord {
                        tick: now,
                        disrupted: d.disrupted_agent.clone(),
                        exploration_agent: None,
                        explored: Vec::new(),
                        rounds,
                        ranking: Vec::new(),
                        error: Some(msg.clone()),
                    });
                    self.log(LogKind::ExploreFailed, Some(&d.disrupted_agent), None, msg);
                }
            }
        }
    }

    fn phase_complete(&mut self, now: Tick) {
        let mut completions = Vec::new();
        for (id, a) in self.agents.iter_mut() {
            for c in a.tick_complete(now) {
                completions.push((id.clone(), c));
            }
        }
        for (agent, c) in completions {
            let Some(p) = self.parts.get_mut(&c.part_id) else { continue };
            p.in_flight = false;
            if !p.active() {
                continue;
            }
            p.state = c.new_state.clone();
            let props = self.env.model.props(&c.new_state).cloned().unwrap_or(c.props);
            let history = Arc::make_mut(&mut p.history);
            *history = record_progress(std::mem::take(history), c.new_state.clone(), props, agent.clone());
            if p.path.front().is_some_and(|(e, _)| *e == c.event) {
                p.path.pop_front();
            }
            let requirement = next_requirement(&p.plan, &p.history);
            self.log(LogKind::Complete, Some(&agent), Some(c.part_id), format!("{} -> {}", c.event, c.new_state));
            match requirement {
                Ok(Requirement::PlanComplete) => {
                    let p = self.parts.get_mut(&c.part_id).expect("part");
                    p.outcome = Some(Outcome::Completed);
                    self.metrics.completed_parts += 1;
                    self.metrics.completion_ticks.insert(c.part_id, now);
                    self.cancel_reservations(c.part_id);
                    self.log(LogKind::PartCompleted, None, Some(c.part_id), c.new_state.to_string());
                }
                Ok(Requirement::Step(..)) => {}
                Err(e) => self.fail_part(c.part_id, &e.to_string()),
            }
        }
    }

    fn phase_release(&mut self, now: Tick) {
        let due: Vec<(u32, StateId, Arc<ProcessPlan>)> = self
            .releases
            .iter()
            .filter(|(t, ..)| *t == now)
            .map(|(_, n, s, p)| (*n, s.clone(), Arc::clone(p)))
            .collect();
        for (count, start, plan) in due {
            for _ in 0..count {
                let id = PartId(self.next_part);
                self.next_part += 1;
                self.parts.insert(
                    id,
                    Part {
                        plan: Arc::clone(&plan),
                        history: Arc::new(ProductHistory::default()),
                        state: start.clone(),
                        path: VecDeque::new(),
                        in_flight: false,
                        attempts: 0,
                        outcome: None,
                    },
                );
                self.metrics.released += 1;
                self.log(LogKind::Release, None, Some(id), start.to_string());
            }
        }
    }

    fn phase_bid(&mut self, now: Tick) {
        let waiting: Vec<PartId> = self
            .parts
            .iter()
            .filter(|(_, p)| p.active() && !p.in_flight && p.path.is_empty())
            .map(|(id, _)| *id)
            .collect();
        for id in waiting {
            let p = &self.parts[&id];
            let required = match next_requirement(&p.plan, &p.history) {
                Ok(Requirement::Step(_, props)) => props,
                Ok(Requirement::PlanComplete) => continue,
                Err(e) => {
                    self.fail_part(id, &e.to_string());
                    continue;
                }
            };
            let req = BidRequest { part_id: id, required_props: required, from_state: p.state.clone(), deadline_hint: None };
            let costs = FreeAt(self.agents.iter().map(|(a, ra)| (a.clone(), ra.free_at(now))).collect());
            let owner = self.owners.get(&req.from_state).cloned();
            let bids = solicit_bids(
                &req,
                &self.env,
                &self.directory,
                owner.as_ref(),
                self.agents.values_mut(),
                now,
                &costs,
            );
            if let Ok(bids) = &bids {
                for b in bids {
                    let detail = if b.valid {
                        format!("cost {} via {} event(s)", b.completion_cost, b.promised_path.len())
                    } else {
                        format!("invalid: {}", b.reason.as_deref().unwrap_or(""))
                    };
                    self.log(LogKind::Bid, Some(&b.bidder), Some(id), detail);
                }
            }
            let winner = bids.and_then(|b| select_bid(&b).cloned());
            match winner {
                Ok(bid) => {
                    if let Err(e) = self.award(id, &bid.promised_path) {
                        self.cancel_reservations(id);
                        self.bid_failed(id, &e);
                    } else {
                        let path: Vec<&str> = bid.promised_path.iter().map(|(e, _)| e.as_str()).collect();
                        self.log(LogKind::Award, Some(&bid.bidder), Some(id), path.join(" "));
                    }
                }
                Err(e) => self.bid_failed(id, &e.to_string()),
            }
        }
    }

    fn bid_failed(&mut self, id: PartId, reason: &str) {
        let Some(p) = self.parts.get_mut(&id) else { return };
        p.attempts += 1;
        let attempts = p.attempts;
        self.log(LogKind::BidFailed, None, Some(id), format!("attempt {attempts}: {reason}"));
        if attempts >= self.retry_limit {
            self.fail_part(id, &format!("no valid bid after {attempts} attempts"));
        }
    }

    /// Reserves every event of the path with its agent.
    fn award(&mut self, id: PartId, path: &[(EventId, AgentId)]) -> Result<(), String> {
        let mut state = self.parts[&id].state.clone();
        for (e, a) in path {
            let agent = self.agents.get_mut(a).ok_or_else(|| format!("unknown agent {a}"))?;
            agent.enqueue(id, e, &state).map_err(|err| err.to_string())?;
            state = self
                .env
                .model
                .transitions
                .get(&(state.clone(), e.clone()))
                .cloned()
                .ok_or_else(|| format!("no transition for {e} from {state}"))?;
        }
        let p = self.parts.get_mut(&id).expect("part");
        p.path = path.iter().cloned().collect();
        p.attempts = 0;
        Ok(())
    }

    fn phase_start(&mut self, now: Tick) {
        // occupancy counts parts resting in a buffer plus parts moving into one
        let mut occupancy: BTreeMap<StateId, u32> = BTreeMap::new();
        if !self.buffers.is_empty() {
            for p in self.parts.values().filter(|p| p.active() && !p.in_flight) {
                if self.buffers.contains(&p.state) {
                    *occupancy.entry(p.state.clone()).or_default() += 1;
                }
            }
            for c in self.agents.values().filter_map(|a| a.current()) {
                if self.buffers.contains(&c.to_state) {
                    *occupancy.entry(c.to_state.clone()).or_default() += 1;
                }
            }
        }
        let ids: Vec<AgentId> = self.agents.keys().cloned().collect();
        for id in ids {
            let parts = &self.parts;
            let env = &self.env;
            let buffers = &self.buffers;
            let cap = self.buffer_capacity;
            let agent = self.agents.get_mut(&id).expect("agent");
            let started = agent.try_start(now, |q| {
                let room = || match env.model.transitions.get(&(q.from_state.clone(), q.event.clone())) {
                    Some(to) if buffers.contains(to) => occupancy.get(to).copied().unwrap_or(0) < cap,
                    _ => true,
                };
                parts
                    .get(&q.part_id)
                    .is_some_and(|p| p.active() && !p.in_flight && p.state == q.from_state)
                    && room()
            });
            if let Some(exec) = started {
                if self.buffers.contains(&exec.from_state) {
                    occupancy.entry(exec.from_state.clone()).and_modify(|n| *n = n.saturating_sub(1));
                }
                if self.buffers.contains(&exec.to_state) {
                    *occupancy.entry(exec.to_state.clone()).or_default() += 1;
                }
                if let Some(p) = self.parts.get_mut(&exec.part_id) {
                    p.in_flight = true;
                }
                self.log(LogKind::Start, Some(&id), Some(exec.part_id), format!("{} until {}", exec.event, exec.finishes_at));
            }
        }
        for a in self.agents.values_mut() {
            a.record_tick(now);
        }
    }
}

/// One row of the summary tables.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub tick: Tick,
    pub completed_cum: u32,
    pub utilization: BTreeMap<AgentId, f64>,
}

/// Cumulative completions and trailing-window utilization every `stride`
/// ticks, recomputed from the per-tick busy flags.
pub fn summarize(metrics: &RunMetrics, window: Tick, stride: Tick) -> Vec<SummaryRow> {
    let stride = stride.max(1) as usize;
    let window = window.max(1) as usize;
    let prefix: BTreeMap<&AgentId, Vec<u64>> = metrics
        .busy
        .iter()
        .map(|(a, flags)| {
            let mut p = Vec::with_capacity(flags.len() + 1);
            p.push(0);
            for f in flags {
                p.push(p.last().copied().unwrap_or(0) + u64::from(*f));
            }
            (a, p)
        })
        .collect();
    (0..metrics.throughput_series.len())
        .step_by(stride)
        .map(|t| {
            let span = window.min(t);
            let utilization = prefix
                .iter()
                .map(|(a, p)| {
                    let hi = t.min(p.len() - 1);
                    let lo = (t - span).min(hi);
                    let u = if span == 0 { 0.0 } else { (p[hi] - p[lo]) as f64 / span as f64 };
                    ((*a).clone(), u)
                })
                .collect();
            SummaryRow { tick: t as Tick, completed_cum: metrics.throughput_series[t], utilization }
        })
        .collect()
}
