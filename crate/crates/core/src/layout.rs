//! Generator for the bundled 20-station wafer-fab layout.
//!
//! Six cells in a line. Each cell has a robot `B<c>` and a cell buffer
//! `CB<c>`. Transfer robots `M12`, `M34` and `M56` bridge cells 1-2, 3-4 and
//! 5-6 through one buffer on each side; cells 2-3 and 4-5 share a buffer
//! directly between their cell robots. Parts enter at `ENTRY` in cell 1 and
//! leave through `EXIT` in cell 6.
//!
//! Every station is a machine agent with an input state `S<nn>` and one
//! output state `S<nn>/<P>` per process it runs. The cell robot can carry a
//! part from any buffer or station output in its cell to any buffer or
//! station input in its cell.

use std::collections::BTreeMap;

use crate::ids::{AgentId, EventId, PropertyId, StateId};
use crate::knowledge::{ConstraintSet, Interval};
use crate::model::EventKind;
use crate::resource::AgentKind;
use crate::scenario::{
    AgentDef, DisruptionEntry, EventDef, Options, PartBatch, PolicyDef, Scenario, StateDef, SCHEMA_VERSION,
};

/// `(cell, processes)` per station, in station-number order.
pub const STATIONS: [(u32, &[&str]); 20] = [
    (1, &["P2"]),
    (1, &["P4"]),
    (1, &["P6"]),
    (1, &["P2"]),
    (1, &["P4"]),
    (2, &["P1", "P3", "P5"]),
    (3, &["P4"]),
    (3, &["P6"]),
    (3, &["P4"]),
    (4, &["P1", "P3", "P5"]),
    (4, &["P6"]),
    (5, &["P2"]),
    (5, &["P4"]),
    (5, &["P6"]),
    (5, &["P2"]),
    (6, &["P6"]),
    (6, &["P2"]),
    (6, &["P4"]),
    (6, &["P6"]),
    (6, &["P4"]),
];

pub const PROCESS_TIMES: [(&str, u64); 6] =
    [("P1", 150), ("P2", 60), ("P3", 110), ("P4", 100), ("P5", 170), ("P6", 20)];

/// `(agent, breakdown tick, ticks to repair)`.
pub const BREAKDOWNS: [(&str, u64, u64); 4] = [("M12", 1000, 450), ("B3", 2500, 450), ("B4", 3000, 340), ("B6", 4500, 390)];

const CELLS: u32 = 6;
const CELL_REACH: f64 = 3.0;
const TRANSFER_REACH: f64 = 1.5;

fn sid(s: &str) -> StateId {
    StateId::new(s)
}

fn buffer(id: &str, description: String, cell: u32) -> StateDef {
    StateDef { id: sid(id), description, props: Vec::new(), cell: Some(cell), kind: Some("buffer".into()) }
}

/// Buffers each cell robot touches, in a fixed order.
fn cell_buffers(c: u32) -> Vec<String> {
    let mut b = vec![format!("CB{c}")];
    if c == 1 {
        b.insert(0, "ENTRY".into());
    }
    // transfer-robot side buffers
    match c {
        1 | 3 | 5 => b.push(format!("T{}{}a", c, c + 1)),
        _ => b.push(format!("T{}{}b", c - 1, c)),
    }
    // buffers shared directly with the neighbouring cell robot
    match c {
        2 => b.push("X23".into()),
        3 => b.push("X23".into()),
        4 => b.push("X45".into()),
        5 => b.push("X45".into()),
        _ => {}
    }
    b
}

fn transport(robot: &str, from: &str, to: &str, reach: f64) -> EventDef {
    EventDef {
        id: EventId::new(format!("{robot}:{from}>{to}")),
        kind: EventKind::Transport,
        from: sid(from),
        to: sid(to),
        duration: None,
        process: None,
        params: BTreeMap::from([("reach".to_string(), reach), ("payload".to_string(), 1.0)]),
    }
}

pub fn waferfab20() -> Scenario {
    let mut states = vec![buffer("ENTRY", "part arrival".into(), 1)];
    for c in 1..=CELLS {
        states.push(buffer(&format!("CB{c}"), format!("cell {c} buffer"), c));
    }
    for c in [1, 3, 5] {
        states.push(buffer(&format!("T{}{}a", c, c + 1), format!("transfer buffer cell {c} side"), c));
        states.push(buffer(&format!("T{}{}b", c, c + 1), format!("transfer buffer cell {} side", c + 1), c + 1));
    }
    states.push(buffer("X23", "buffer shared by cells 2 and 3".into(), 2));
    states.push(buffer("X45", "buffer shared by cells 4 and 5".into(), 4));
    states.push(StateDef {
        id: sid("EXIT"),
        description: "part departure".into(),
        props: vec![PropertyId::new("exit")],
        cell: Some(CELLS),
        kind: Some("sink".into()),
    });

    let mut agents = Vec::new();
    let mut inputs: BTreeMap<u32, Vec<String>> = BTreeMap::new();
    let mut outputs: BTreeMap<u32, Vec<String>> = BTreeMap::new();
    for (i, (cell, procs)) in STATIONS.iter().enumerate() {
        let name = format!("S{:02}", i + 1);
        states.push(StateDef {
            id: sid(&name),
            description: format!("at station {name} input"),
            props: Vec::new(),
            cell: Some(*cell),
            kind: Some("station".into()),
        });
        inputs.entry(*cell).or_default().push(name.clone());
        let mut events = Vec::new();
        for p in *procs {
            let out = format!("{name}/{p}");
            states.push(StateDef {
                id: sid(&out),
                description: format!("{p} done at {name}"),
                props: vec![PropertyId::new(*p)],
                cell: Some(*cell),
                kind: Some("station".into()),
            });
            outputs.entry(*cell).or_default().push(out.clone());
            events.push(EventDef {
                id: EventId::new(format!("{name}:{p}")),
                kind: EventKind::Process,
                from: sid(&name),
                to: sid(&out),
                duration: None,
                process: Some((*p).to_string()),
                params: BTreeMap::new(),
            });
        }
        agents.push(AgentDef { id: AgentId::new(name), kind: AgentKind::Machine, cell: Some(*cell), events });
    }

    let mut constraints = BTreeMap::new();
    for c in 1..=CELLS {
        let robot = format!("B{c}");
        let buffers = cell_buffers(c);
        let mut pickups = buffers.clone();
        pickups.extend(outputs.get(&c).cloned().unwrap_or_default());
        pickups.retain(|p| p != "EXIT");
        let mut drops = buffers.clone();
        drops.retain(|d| d != "ENTRY");
        drops.extend(inputs.get(&c).cloned().unwrap_or_default());
        if c == CELLS {
            drops.push("EXIT".into());
        }
        let mut events = Vec::new();
        for p in &pickups {
            for d in &drops {
                if p != d {
                    events.push(transport(&robot, p, d, CELL_REACH));
                }
            }
        }
        agents.push(AgentDef { id: AgentId::new(&robot), kind: AgentKind::Robot, cell: Some(c), events });
        constraints.insert(AgentId::new(robot), robot_bounds(4.0));
    }
    for c in [1, 3, 5] {
        let robot = format!("M{}{}", c, c + 1);
        let a = format!("T{}{}a", c, c + 1);
        let b = format!("T{}{}b", c, c + 1);
        agents.push(AgentDef {
            id: AgentId::new(&robot),
            kind: AgentKind::Robot,
            cell: Some(c),
            events: vec![transport(&robot, &a, &b, TRANSFER_REACH), transport(&robot, &b, &a, TRANSFER_REACH)],
        });
        constraints.insert(AgentId::new(robot), robot_bounds(2.0));
    }

    Scenario {
        schema_version: SCHEMA_VERSION,
        name: "waferfab20".into(),
        description: "20 stations in 6 cells served by 9 robots; one batch of 25 parts".into(),
        process_times: PROCESS_TIMES.iter().map(|(p, t)| (p.to_string(), *t)).collect(),
        non_physical: vec![PropertyId::new("exit")],
        states,
        agents,
        constraints,
        parts: vec![PartBatch {
            release_tick: 10,
            count: 25,
            start_state: sid("ENTRY"),
            plan: ["P1", "P2", "P3", "P4", "P5", "P6", "exit"].iter().map(|p| vec![PropertyId::new(*p)]).collect(),
        }],
        disruptions: BREAKDOWNS
            .iter()
            .map(|(a, t, m)| DisruptionEntry::new(AgentId::new(*a), *t, *m))
            .collect(),
        policy: PolicyDef::default(),
        options: Options::default(),
    }
}

fn robot_bounds(max_reach: f64) -> ConstraintSet {
    ConstraintSet {
        operation_bounds: BTreeMap::from([("reach".to_string(), Interval(0.0, max_reach))]),
        safety_limits: BTreeMap::from([("payload".to_string(), Interval(0.0, 5.0))]),
    }
}
