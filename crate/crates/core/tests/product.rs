mod common;

use std::collections::{BTreeMap, BTreeSet};

use capex_core::exploration::merge_capabilities;
use capex_core::ids::{AgentId, PartId, PropertyId};
use capex_core::model::{
    CapabilityModel, EnvironmentModel, NeighborTable, PlanStep, ProcessPlan, ProductHistory,
};
use capex_core::product::{
    contacted_agents, next_requirement, record_progress, select_bid, solicit_bids, Bid, BidRequest, ProductError,
    Requirement,
};
use capex_core::resource::{AgentKind, ResourceAgent, ResourceStatus};
use common::*;
use proptest::prelude::*;

fn props(p: &[&str]) -> BTreeSet<PropertyId> {
    p.iter().map(|s| PropertyId::new(*s)).collect()
}

#[test]
fn waferfab_plan_after_five_steps_needs_p6() {
    let s = scenario("waferfab20");
    let plan = s.plan(&s.parts[0]);
    assert_eq!(
        next_requirement(&plan, &ProductHistory::default()).unwrap(),
        Requirement::Step(0, props(&["P1"]))
    );
    let mut h = ProductHistory::default();
    for p in ["P1", "P2", "P3", "P4", "P5"] {
        h = record_progress(h, sid(&format!("at/{p}")), props(&[p]), aid("S"));
    }
    assert_eq!(next_requirement(&plan, &h).unwrap(), Requirement::Step(5, props(&["P6"])));
}

fn directory(tables: &BTreeMap<AgentId, NeighborTable>) -> NeighborTable {
    let mut d = NeighborTable::default();
    for t in tables.values() {
        for (s, set) in &t.entries {
            for a in set {
                d.insert(s.clone(), a.clone());
            }
        }
    }
    d
}

#[test]
fn robot_one_bids_from_inventory_after_merge() {
    let s = scenario("example3robot");
    let mut f = facility(&s);
    let d = disruption_of(&f, "Robot 2", 1);
    f.agents.get_mut(&aid("Robot 2")).unwrap().apply_status(ResourceStatus::broken(1, 1000));
    let out = takeover(&f, "Robot 2", "Robot 1");
    merge_capabilities(&mut f.agents, &mut f.env, &mut f.tables, &out, &d);

    let req = BidRequest { part_id: PartId(1), required_props: props(&["machined-a"]), from_state: sid("X1"), deadline_hint: None };
    let costs = FreeNow(BTreeSet::from([aid("Robot 2")]));
    let dir = directory(&f.tables);
    let bids = solicit_bids(&req, &f.env, &dir, None, f.agents.values_mut(), 5, &costs).unwrap();
    let win = select_bid(&bids).unwrap();
    assert_eq!(win.bidder, aid("Robot 1"));
    let path: Vec<_> = win.promised_path.iter().map(|(e, _)| e.as_str()).collect();
    assert_eq!(path, ["σ7", "σ8", "σ6"]);
    assert_eq!(win.promised_path[1].1, aid("Robot 1"));
    let r2 = bids.iter().find(|b| b.bidder == aid("Robot 2")).unwrap();
    assert!(!r2.valid);
    assert_eq!(r2.reason.as_deref(), Some("AgentBroken"));
}

#[test]
fn no_neighbor_and_no_owner_is_unreachable() {
    let s = scenario("example3robot");
    let mut f = facility(&s);
    let req = BidRequest { part_id: PartId(1), required_props: props(&["machined-a"]), from_state: sid("X9"), deadline_hint: None };
    let res = solicit_bids(&req, &f.env, &NeighborTable::default(), None, f.agents.values_mut(), 0, &FreeNow(BTreeSet::new()));
    assert_eq!(res, Err(ProductError::NoReachableAgents(sid("X9"))));
}

#[test]
fn worked_example_history_credits_robot_one_with_machine_arrival() {
    let m = run_named("example3robot", true, 0);
    let h = &m.histories[&PartId(1)];
    assert_eq!(h.visited_states, vec![sid("X8"), sid("X5"), sid("X7")]);
    assert_eq!(h.reporting_agent[&sid("X5")], aid("Robot 1"));
    assert_eq!(h.reporting_agent[&sid("X7")], aid("Machine 1"));
}

/// Replays every part history of a full run: the requirement index never
/// moves backwards and completed parts hold every plan property.
#[test]
fn plan_progress_is_monotone_and_complete() {
    let s = scenario("waferfab20");
    let plan = s.plan(&s.parts[0]);
    let m = run_named("waferfab20", true, 0);
    for (id, h) in &m.histories {
        let mut replay = ProductHistory::default();
        let mut last = 0;
        for st in &h.visited_states {
            let p = h.achieved_props.get(st).cloned().unwrap_or_default();
            replay = record_progress(replay, st.clone(), p, h.reporting_agent[st].clone());
            let idx = match next_requirement(&plan, &replay).unwrap() {
                Requirement::Step(i, _) => i,
                Requirement::PlanComplete => plan.steps.len(),
            };
            assert!(idx >= last, "{id}: requirement went from {last} to {idx}");
            last = idx;
        }
        if m.completion_ticks.contains_key(id) {
            let union: BTreeSet<PropertyId> = plan.steps.iter().flat_map(|s| s.property_ids()).collect();
            assert!(union.is_subset(&h.achieved()), "{id}");
        }
    }
}

fn linear_scan(plan: &ProcessPlan, achieved: &BTreeSet<PropertyId>) -> Option<usize> {
    for (i, step) in plan.steps.iter().enumerate() {
        if !step.property_ids().is_subset(achieved) {
            return Some(i);
        }
    }
    None
}

fn bid(who: usize, cost: u64, valid: bool) -> Bid {
    Bid {
        bidder: aid(&format!("R{who:02}")),
        promised_path: Vec::new(),
        completion_cost: cost,
        valid,
        reason: None,
    }
}

proptest! {
    #[test]
    fn next_requirement_matches_linear_scan(len in 1usize..8, done in 0usize..9) {
        let plan = ProcessPlan { steps: (0..len).map(|i| PlanStep::physical(&[&format!("Q{i}")])).collect() };
        let done = done.min(len);
        let mut h = ProductHistory::default();
        for i in 0..done {
            h = record_progress(h, sid(&format!("x{i}")), props(&[&format!("Q{i}")]), aid("R"));
        }
        let got = match next_requirement(&plan, &h).unwrap() {
            Requirement::Step(i, _) => Some(i),
            Requirement::PlanComplete => None,
        };
        prop_assert_eq!(got, linear_scan(&plan, &h.achieved()));
    }

    #[test]
    fn select_bid_is_min_scan(raw in prop::collection::vec((0usize..6, 0u64..50, any::<bool>()), 1..12)) {
        let bids: Vec<Bid> = raw.iter().map(|(w, c, v)| bid(*w, *c, *v)).collect();
        let mut best: Option<&Bid> = None;
        for b in bids.iter().filter(|b| b.valid) {
            best = match best {
                Some(x) if (x.completion_cost, &x.bidder) <= (b.completion_cost, &b.bidder) => Some(x),
                _ => Some(b),
            };
        }
        match select_bid(&bids) {
            Ok(w) => {
                prop_assert!(w.valid);
                prop_assert_eq!(Some(w), best);
            }
            Err(e) => {
                prop_assert_eq!(e, ProductError::AllBidsInvalid);
                prop_assert!(best.is_none());
            }
        }
    }

    #[test]
    fn history_prefix_is_preserved(steps in prop::collection::vec((0usize..5, any::<bool>()), 0..20)) {
        let mut h = ProductHistory::default();
        let mut prefix: Vec<capex_core::ids::StateId> = Vec::new();
        for (k, (s, with_prop)) in steps.iter().enumerate() {
            let p = if *with_prop { props(&["p"]) } else { BTreeSet::new() };
            h = record_progress(h, sid(&format!("x{s}")), p, aid("R"));
            prop_assert_eq!(&h.visited_states[..prefix.len()], &prefix[..]);
            prop_assert_eq!(h.visited_states.len(), k + 1);
            prefix = h.visited_states.clone();
            prop_assert!(h.visited_states.iter().all(|v| h.reporting_agent.contains_key(v)));
        }
    }

    /// Random agents over random state sets: one bid per contacted agent.
    #[test]
    fn one_bid_per_contacted_agent(
        holdings in prop::collection::vec(prop::collection::btree_set(0usize..6, 1..4), 1..6),
        from in 0usize..6,
        owner in prop::option::of(0usize..6),
    ) {
        let mut agents: Vec<ResourceAgent> = Vec::new();
        let mut tables = NeighborTable::default();
        for (i, states) in holdings.iter().enumerate() {
            let first = *states.iter().next().unwrap();
            let mut m = CapabilityModel::new(state(&format!("x{first}")));
            for s in states {
                m.add_state(state(&format!("x{s}")));
                tables.insert(sid(&format!("x{s}")), aid(&format!("A{i}")));
            }
            agents.push(ResourceAgent::new(aid(&format!("A{i}")), AgentKind::Robot, m));
        }
        let env = EnvironmentModel::compose(
            agents.iter().map(|a| (&a.id, a.model())),
            sid("x0"),
            &Default::default(),
        );
        let owner = owner.map(|o| aid(&format!("A{o}")));
        let req = BidRequest { part_id: PartId(0), required_props: props(&["p"]), from_state: sid(&format!("x{from}")), deadline_hint: None };
        let contacted = contacted_agents(&req.from_state, &tables, owner.as_ref());
        let res = solicit_bids(&req, &env, &tables, owner.as_ref(), agents.iter_mut(), 0, &FreeNow(BTreeSet::new()));
        match res {
            Ok(bids) => {
                prop_assert_eq!(bids.len(), contacted.len());
                let who: BTreeSet<AgentId> = bids.iter().map(|b| b.bidder.clone()).collect();
                prop_assert_eq!(who, contacted);
            }
            Err(ProductError::NoReachableAgents(_)) => prop_assert!(contacted.is_empty()),
            Err(e) => prop_assert!(false, "unexpected {e:?}"),
        }
    }
}
