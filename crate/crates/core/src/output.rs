//! Run artifacts on disk and the side-by-side comparison of two runs.
//!
//! A run directory holds `metrics.csv`, `events.log` (one JSON record per
//! line), `summary.txt`, `run.json` with the run's identity and `plot.gp`
//! for gnuplot. Comparisons recount completions from the event logs rather
//! than trusting the summaries.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{summarize, LogKind, LogRecord, RunMetrics, SummaryRow};
use crate::ids::{AgentId, Tick};
use crate::scenario::{DisruptionEntry, Scenario};

pub const METRICS_CSV: &str = "metrics.csv";
pub const EVENTS_LOG: &str = "events.log";
pub const SUMMARY_TXT: &str = "summary.txt";
pub const RUN_JSON: &str = "run.json";
pub const PLOT_GP: &str = "plot.gp";

#[derive(Debug, Error)]
pub enum OutputError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("{path}: {reason}")]
    Malformed { path: PathBuf, reason: String },
    #[error("runs are not comparable: {0}")]
    IncompatibleRuns(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> OutputError + '_ {
    move |source| OutputError::Io { path: path.to_path_buf(), source }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplorationSummary {
    pub tick: Tick,
    pub disrupted: AgentId,
    pub exploration_agent: Option<AgentId>,
    pub rounds: u32,
    pub error: Option<String>,
}

/// Identity and headline numbers of one run, stored as `run.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunInfo {
    pub scenario: String,
    pub topology: String,
    pub seed: u64,
    pub exploration: bool,
    pub horizon: Tick,
    pub window: Tick,
    pub stride: Tick,
    pub released: u32,
    pub completed_parts: u32,
    pub failed_parts: u32,
    pub schedule: Vec<DisruptionEntry>,
    pub explorations: Vec<ExplorationSummary>,
}

/// Counts that identify a facility layout. Two runs are comparable only if
/// their signatures match.
pub fn topology_signature(scenario: &Scenario) -> String {
    let events: usize = scenario.agents.iter().map(|a| a.events.len()).sum();
    format!("{} states, {} agents, {} events", scenario.states.len(), scenario.agents.len(), events)
}

impl RunInfo {
    pub fn new(scenario: &Scenario, metrics: &RunMetrics) -> Self {
        Self {
            scenario: metrics.scenario.clone(),
            topology: topology_signature(scenario),
            seed: metrics.seed,
            exploration: metrics.exploration,
            horizon: metrics.horizon,
            window: metrics.window,
            stride: scenario.options.stride.max(1),
            released: metrics.released,
            completed_parts: metrics.completed_parts,
            failed_parts: metrics.failed_parts,
            schedule: metrics.schedule.clone(),
            explorations: metrics
                .explorations
                .iter()
                .map(|x| ExplorationSummary {
                    tick: x.tick,
                    disrupted: x.disrupted.clone(),
                    exploration_agent: x.exploration_agent.clone(),
                    rounds: x.rounds,
                    error: x.error.clone(),
                })
                .collect(),
        }
    }
}

/// The parsed contents of `metrics.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsTable {
    pub agents: Vec<AgentId>,
    pub rows: Vec<SummaryRow>,
}

impl MetricsTable {
    /// Mean utilization of `agent` over rows with `from <= tick < to`.
    pub fn mean_utilization(&self, agent: &AgentId, from: Tick, to: Tick) -> Option<f64> {
        let vals: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.tick >= from && r.tick < to)
            .filter_map(|r| r.utilization.get(agent).copied())
            .collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }
}

pub fn write_metrics_csv(rows: &[SummaryRow], agents: &[AgentId], out: impl std::io::Write) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["tick".to_string(), "completed_cum".to_string()];
    header.extend(agents.iter().map(|a| a.to_string()));
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![r.tick.to_string(), r.completed_cum.to_string()];
        rec.extend(agents.iter().map(|a| format!("{:.6}", r.utilization.get(a).copied().unwrap_or(0.0))));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_metrics_csv(path: &Path) -> Result<MetricsTable, OutputError> {
    let csv_err = |source| OutputError::Csv { path: path.to_path_buf(), source };
    let malformed = |reason: String| OutputError::Malformed { path: path.to_path_buf(), reason };
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let header = r.headers().map_err(csv_err)?.clone();
    if header.get(0) != Some("tick") || header.get(1) != Some("completed_cum") {
        return Err(malformed("header must start with tick,completed_cum".into()));
    }
    let agents: Vec<AgentId> = header.iter().skip(2).map(AgentId::new).collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_err)?;
        let num = |i: usize| -> Result<&str, OutputError> {
            rec.get(i).ok_or_else(|| malformed(format!("short row {:?}", rec.position())))
        };
        let tick = num(0)?.parse().map_err(|e| malformed(format!("tick: {e}")))?;
        let completed_cum = num(1)?.parse().map_err(|e| malformed(format!("completed_cum: {e}")))?;
        let mut utilization = BTreeMap::new();
        for (i, a) in agents.iter().enumerate() {
            let u: f64 = num(i + 2)?.parse().map_err(|e| malformed(format!("{a}: {e}")))?;
            utilization.insert(a.clone(), u);
        }
        rows.push(SummaryRow { tick, completed_cum, utilization });
    }
    Ok(MetricsTable { agents, rows })
}

pub fn read_events(path: &Path) -> Result<Vec<LogRecord>, OutputError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|source| OutputError::Json { path: path.to_path_buf(), source }))
        .collect()
}

pub fn summary_text(info: &RunInfo, metrics: &RunMetrics) -> String {
    use std::fmt::Write;
    let mut s = String::new();
    let _ = writeln!(s, "scenario      {}", info.scenario);
    let _ = writeln!(s, "topology      {}", info.topology);
    let _ = writeln!(s, "seed          {}", info.seed);
    let _ = writeln!(s, "exploration   {}", if info.exploration { "on" } else { "off" });
    let _ = writeln!(s, "horizon       {}", info.horizon);
    let _ = writeln!(s, "released      {}", info.released);
    let _ = writeln!(s, "completed     {}", info.completed_parts);
    let _ = writeln!(s, "failed        {}", info.failed_parts);
    let _ = writeln!(s, "in system     {}", metrics.in_system());
    if let Some(last) = metrics.completion_ticks.values().max() {
        let _ = writeln!(s, "last done     tick {last}");
    }
    let _ = writeln!(s);
    let _ = writeln!(s, "disruptions");
    for e in &info.schedule {
        let _ = writeln!(s, "  {:<8} down {:>6}  repaired {:>6}", e.agent, e.breakdown_tick, e.breakdown_tick + e.mttr);
    }
    if !info.explorations.is_empty() {
        let _ = writeln!(s);
        let _ = writeln!(s, "explorations");
        for x in &info.explorations {
            match (&x.exploration_agent, &x.error) {
                (Some(a), _) => {
                    let _ = writeln!(s, "  tick {:>6}  {} -> {} ({} round(s))", x.tick, x.disrupted, a, x.rounds);
                }
                (None, err) => {
                    let _ = writeln!(
                        s,
                        "  tick {:>6}  {} failed: {}",
                        x.tick,
                        x.disrupted,
                        err.as_deref().unwrap_or("no proposal")
                    );
                }
            }
        }
    }
    s
}

/// Gnuplot script plotting cumulative completions and the disrupted agents'
/// utilization from `metrics.csv`.
pub fn plot_script(info: &RunInfo, agents: &[AgentId]) -> String {
    let mut s = String::from("set datafile separator ','\nset key autotitle columnhead\nset xlabel 'tick'\n");
    s.push_str("set multiplot layout 2,1\nset ylabel 'completed parts'\n");
    s.push_str("plot 'metrics.csv' using 1:2 with steps\n");
    s.push_str("set ylabel 'utilization'\nset yrange [0:1]\n");
    let disrupted: BTreeSet<&AgentId> = info
        .schedule
        .iter()
        .map(|e| &e.agent)
        .chain(info.explorations.iter().filter_map(|x| x.exploration_agent.as_ref()))
        .collect();
    let cols: Vec<String> = agents
        .iter()
        .enumerate()
        .filter(|(_, a)| disrupted.contains(a))
        .map(|(i, _)| format!("'metrics.csv' using 1:{} with lines", i + 3))
        .collect();
    if cols.is_empty() {
        s.push_str("plot 'metrics.csv' using 1:3 with lines\n");
    } else {
        s.push_str(&format!("plot {}\n", cols.join(", ")));
    }
    s.push_str("unset multiplot\n");
    s
}

/// Writes every artifact of `metrics` into `dir`, creating it if needed.
pub fn write_run(dir: &Path, scenario: &Scenario, metrics: &RunMetrics) -> Result<RunInfo, OutputError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let info = RunInfo::new(scenario, metrics);
    let agents: Vec<AgentId> = metrics.busy.keys().cloned().collect();
    let rows = summarize(metrics, metrics.window, info.stride);

    let path = dir.join(METRICS_CSV);
    let file = fs::File::create(&path).map_err(io_err(&path))?;
    write_metrics_csv(&rows, &agents, std::io::BufWriter::new(file))
        .map_err(|source| OutputError::Csv { path: path.clone(), source })?;

    let path = dir.join(EVENTS_LOG);
    fs::write(&path, metrics.event_log_jsonl()).map_err(io_err(&path))?;

    let path = dir.join(SUMMARY_TXT);
    fs::write(&path, summary_text(&info, metrics)).map_err(io_err(&path))?;

    let path = dir.join(RUN_JSON);
    let json = serde_json::to_string_pretty(&info).map_err(|source| OutputError::Json { path: path.clone(), source })?;
    fs::write(&path, json + "\n").map_err(io_err(&path))?;

    let path = dir.join(PLOT_GP);
    fs::write(&path, plot_script(&info, &agents)).map_err(io_err(&path))?;
    Ok(info)
}

/// A run directory read back from disk.
#[derive(Debug, Clone)]
pub struct RunDir {
    pub info: RunInfo,
    pub events: Vec<LogRecord>,
    pub metrics: MetricsTable,
}

pub fn load_run(dir: &Path) -> Result<RunDir, OutputError> {
    let path = dir.join(RUN_JSON);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let info = serde_json::from_str(&text).map_err(|source| OutputError::Json { path: path.clone(), source })?;
    Ok(RunDir { info, events: read_events(&dir.join(EVENTS_LOG))?, metrics: read_metrics_csv(&dir.join(METRICS_CSV))? })
}

/// Completed and failed part counts recounted from an event log.
pub fn recount(events: &[LogRecord]) -> (u32, u32) {
    let n = |k| events.iter().filter(|r| r.kind == k).count() as u32;
    (n(LogKind::PartCompleted), n(LogKind::PartFailed))
}

/// Cumulative completions at each of `ticks`, from an event log.
pub fn completions_at(events: &[LogRecord], ticks: &[Tick]) -> Vec<u32> {
    let mut done: Vec<Tick> = events.iter().filter(|r| r.kind == LogKind::PartCompleted).map(|r| r.tick).collect();
    done.sort_unstable();
    ticks.iter().map(|t| done.partition_point(|d| d <= t) as u32).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WindowDelta {
    pub agent: AgentId,
    pub from: Tick,
    pub to: Tick,
    /// Mean utilization in each run, for every agent.
    pub utilization: BTreeMap<AgentId, (f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub scenario: String,
    pub labels: (String, String),
    pub completed: (u32, u32),
    pub failed: (u32, u32),
    /// `(tick, completed in a, completed in b)` every stride.
    pub throughput: Vec<(Tick, u32, u32)>,
    pub windows: Vec<WindowDelta>,
}

impl Comparison {
    pub fn completed_delta(&self) -> i64 {
        i64::from(self.completed.1) - i64::from(self.completed.0)
    }
}

fn label(info: &RunInfo) -> String {
    format!("exploration {} seed {}", if info.exploration { "on" } else { "off" }, info.seed)
}

pub fn compare(a: &RunDir, b: &RunDir) -> Result<Comparison, OutputError> {
    if a.info.scenario != b.info.scenario {
        return Err(OutputError::IncompatibleRuns(format!(
            "scenario {} vs {}",
            a.info.scenario, b.info.scenario
        )));
    }
    if a.info.topology != b.info.topology {
        return Err(OutputError::IncompatibleRuns(format!(
            "topology {} vs {}",
            a.info.topology, b.info.topology
        )));
    }
    if a.metrics.agents != b.metrics.agents {
        return Err(OutputError::IncompatibleRuns("different agent columns".into()));
    }
    let horizon = a.info.horizon.min(b.info.horizon);
    let stride = a.info.stride.max(1);
    let ticks: Vec<Tick> = (0..horizon).step_by(stride as usize).collect();
    let ca = completions_at(&a.events, &ticks);
    let cb = completions_at(&b.events, &ticks);
    let throughput = ticks.iter().zip(ca.iter().zip(&cb)).map(|(t, (x, y))| (*t, *x, *y)).collect();

    let mut entries: Vec<&DisruptionEntry> = a.info.schedule.iter().chain(&b.info.schedule).collect();
    entries.sort_by_key(|e| (e.breakdown_tick, e.agent.clone()));
    entries.dedup();
    let windows = entries
        .into_iter()
        .map(|e| {
            let (from, to) = (e.breakdown_tick, e.breakdown_tick + e.mttr);
            let utilization = a
                .metrics
                .agents
                .iter()
                .map(|ag| {
                    let ua = a.metrics.mean_utilization(ag, from, to).unwrap_or(0.0);
                    let ub = b.metrics.mean_utilization(ag, from, to).unwrap_or(0.0);
                    (ag.clone(), (ua, ub))
                })
                .collect();
            WindowDelta { agent: e.agent.clone(), from, to, utilization }
        })
        .collect();

    let (comp_a, fail_a) = recount(&a.events);
    let (comp_b, fail_b) = recount(&b.events);
    Ok(Comparison {
        scenario: a.info.scenario.clone(),
        labels: (label(&a.info), label(&b.info)),
        completed: (comp_a, comp_b),
        failed: (fail_a, fail_b),
        throughput,
        windows,
    })
}

pub fn compare_dirs(a: &Path, b: &Path) -> Result<Comparison, OutputError> {
    compare(&load_run(a)?, &load_run(b)?)
}

impl fmt::Display for Comparison {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "scenario {}", self.scenario)?;
        writeln!(f, "{:<16}{:>24}{:>24}{:>8}", "", "A", "B", "delta")?;
        writeln!(f, "{:<16}{:>24}{:>24}", "run", self.labels.0, self.labels.1)?;
        let row = |f: &mut fmt::Formatter<'_>, name: &str, (x, y): (u32, u32)| {
            writeln!(f, "{:<16}{:>24}{:>24}{:>+8}", name, x, y, i64::from(y) - i64::from(x))
        };
        row(f, "completed", self.completed)?;
        row(f, "failed", self.failed)?;
        writeln!(f)?;
        writeln!(f, "completed parts over time")?;
        let step = (self.throughput.len() / 12).max(1);
        let mut last_diff = None;
        for (i, (t, x, y)) in self.throughput.iter().enumerate() {
            let diff = i64::from(*y) - i64::from(*x);
            if i % step == 0 || last_diff != Some(diff) {
                writeln!(f, "  tick {t:>6}  {x:>4} {y:>4}  {diff:>+4}")?;
            }
            last_diff = Some(diff);
        }
        for w in &self.windows {
            writeln!(f)?;
            writeln!(f, "utilization while {} is down [{}, {})", w.agent, w.from, w.to)?;
            for (ag, (x, y)) in &w.utilization {
                if (y - x).abs() >= 0.005 || *ag == w.agent {
                    writeln!(f, "  {:<8} {:>7.3} {:>7.3}  {:>+7.3}", ag, x, y, y - x)?;
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(tick: Tick, kind: LogKind) -> LogRecord {
        LogRecord { tick, kind, agent: None, part: Some("p".into()), detail: String::new() }
    }

    #[test]
    fn recount_and_cumulative() {
        let ev = vec![
            rec(5, LogKind::PartCompleted),
            rec(7, LogKind::PartFailed),
            rec(9, LogKind::PartCompleted),
            rec(9, LogKind::Start),
        ];
        assert_eq!(recount(&ev), (2, 1));
        assert_eq!(completions_at(&ev, &[0, 5, 8, 9, 100]), vec![0, 1, 1, 2, 2]);
    }

    #[test]
    fn csv_round_trip() {
        let agents = vec![AgentId::new("B1"), AgentId::new("M12")];
        let rows = vec![
            SummaryRow {
                tick: 0,
                completed_cum: 0,
                utilization: BTreeMap::from([(agents[0].clone(), 0.0), (agents[1].clone(), 0.0)]),
            },
            SummaryRow {
                tick: 10,
                completed_cum: 2,
                utilization: BTreeMap::from([(agents[0].clone(), 0.5), (agents[1].clone(), 0.125)]),
            },
        ];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(METRICS_CSV);
        write_metrics_csv(&rows, &agents, fs::File::create(&path).unwrap()).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("tick,completed_cum,B1,M12\n"));
        let table = read_metrics_csv(&path).unwrap();
        assert_eq!(table.agents, agents);
        assert_eq!(table.rows, rows);
        assert_eq!(table.mean_utilization(&agents[0], 0, 20), Some(0.25));
        assert_eq!(table.mean_utilization(&agents[0], 20, 30), None);
    }

    #[test]
    fn bad_header_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(METRICS_CSV);
        fs::write(&path, "time,done\n0,0\n").unwrap();
        assert!(matches!(read_metrics_csv(&path), Err(OutputError::Malformed { .. })));
    }
}
