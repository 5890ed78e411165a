//! End-to-end simulator behavior on small hand-built worlds.

mod common;

use std::collections::{BTreeMap, BTreeSet};

use common::id;
use pbn_core::identity::DeviceId;
use pbn_core::sim::{AppMessage, EventKind, Message, SimConfig, SimError, UserAction, World};
use pbn_core::trace::parse_trace;

fn world(config: SimConfig, names: &[&str], edges: &[(&str, &str)]) -> World {
    let mut w = World::new(config).with_invariant_checks();
    for n in names {
        w.schedule(0, EventKind::AddNode(id(n))).unwrap();
    }
    for (a, b) in edges {
        w.schedule(0, EventKind::AddEdge(id(a), id(b))).unwrap();
    }
    w.run_until_quiescent(1_000).unwrap();
    w
}

fn table(w: &World, node: &str) -> BTreeMap<String, String> {
    w.table(&id(node))
        .unwrap()
        .entries()
        .iter()
        .map(|(k, v)| (k.social_name().to_owned(), v.social_name().to_owned()))
        .collect()
}

fn pairs(entries: &[(&str, &str)]) -> BTreeMap<String, String> {
    entries.iter().map(|(k, v)| ((*k).to_owned(), (*v).to_owned())).collect()
}

fn lines_of(w: &World, kind: &str) -> Vec<pbn_core::trace::TraceLine> {
    parse_trace(&w.trace_text()).unwrap().into_iter().filter(|l| l.kind() == Some(kind)).collect()
}

#[test]
fn empty_world_is_quiescent_at_once() {
    let mut w = World::new(SimConfig::default());
    let r = w.run_until_quiescent(5).unwrap();
    assert!(r.quiescent);
    assert_eq!(r.ticks_elapsed, 0);
    assert_eq!(r.counters.messages_sent, 0);
}

#[test]
fn scheduling_errors() {
    let mut w = World::new(SimConfig::default());
    assert_eq!(w.run_until_quiescent(0), Err(SimError::ZeroMaxTicks));
    w.schedule(3, EventKind::AddNode(id("A"))).unwrap();
    w.run_until_quiescent(10).unwrap();
    assert_eq!(w.schedule(1, EventKind::AddNode(id("B"))), Err(SimError::PastEvent { event: 1, now: 3 }));
}

#[test]
fn star_tables() {
    let w = world(SimConfig::default(), &["A", "B", "C", "D"], &[("A", "B"), ("C", "B"), ("D", "B")]);
    assert_eq!(table(&w, "A"), pairs(&[("B", "B"), ("C", "B"), ("D", "B")]));
    assert_eq!(table(&w, "B"), pairs(&[("A", "A"), ("C", "C"), ("D", "D")]));
    assert_eq!(table(&w, "C"), pairs(&[("A", "B"), ("B", "B"), ("D", "B")]));
    assert_eq!(table(&w, "D"), pairs(&[("A", "B"), ("B", "B"), ("C", "B")]));
}

#[test]
fn isolated_node_has_an_empty_table() {
    let w = world(SimConfig::default(), &["A"], &[]);
    assert!(table(&w, "A").is_empty());
    assert_eq!(w.counters().routing_updates, 0);
}

#[test]
fn triangle_reroutes_around_a_lost_edge() {
    let mut w = world(SimConfig::default(), &["S", "R", "M"], &[("S", "R"), ("R", "M"), ("S", "M")]);
    assert_eq!(table(&w, "M"), pairs(&[("R", "R"), ("S", "S")]));
    w.schedule(w.now() + 1, EventKind::RemoveEdge(id("S"), id("M"))).unwrap();
    w.run_until_quiescent(100).unwrap();
    assert_eq!(table(&w, "M"), pairs(&[("R", "R"), ("S", "R")]));
    assert_eq!(table(&w, "S"), pairs(&[("M", "R"), ("R", "R")]));
    assert!(w.violations().is_empty());
}

#[test]
fn line_splits_when_its_middle_edge_drops() {
    let names = ["A", "B", "C", "D"];
    let mut w = world(SimConfig::default(), &names, &[("A", "B"), ("B", "C"), ("C", "D")]);
    assert_eq!(table(&w, "A"), pairs(&[("B", "B"), ("C", "B"), ("D", "B")]));
    w.schedule(w.now() + 1, EventKind::RemoveEdge(id("B"), id("C"))).unwrap();
    w.run_until_quiescent(100).unwrap();
    assert_eq!(table(&w, "A"), pairs(&[("B", "B")]));
    assert_eq!(table(&w, "D"), pairs(&[("C", "C")]));
}

#[test]
fn removed_node_is_lost_by_exactly_its_neighbors() {
    let edges = [("X", "A"), ("X", "B"), ("A", "C"), ("B", "C"), ("C", "D")];
    let mut w = world(SimConfig::default(), &["X", "A", "B", "C", "D"], &edges);
    let x = id("X");
    let neighbors: BTreeSet<String> = w.topology().neighbors(&x).iter().map(|n| n.canonical().to_owned()).collect();
    let at = w.now() + 1;
    w.schedule(at, EventKind::RemoveNode(x.clone())).unwrap();
    w.run_until_quiescent(100).unwrap();
    let lost: BTreeSet<String> = lines_of(&w, "discovery")
        .iter()
        .filter(|l| l.t == at && l.raw("discovery") == Some("lost") && l.get("peer").as_deref() == Some(x.canonical()))
        .map(|l| l.node())
        .collect();
    assert_eq!(lost, neighbors);
    for n in ["A", "B", "C", "D"] {
        assert!(!table(&w, n).contains_key("X"), "{n} still lists X");
    }
}

#[test]
fn one_tick_latency_to_a_neighbor() {
    let mut w = world(SimConfig::default(), &["A", "B"], &[("A", "B")]);
    let t = w.now() + 1;
    w.schedule(t, EventKind::UserAction(UserAction::Send { src: id("A"), dst: id("B"), text: "hi".into() })).unwrap();
    w.run_until_quiescent(10).unwrap();
    let d = w.deliveries().last().unwrap();
    assert_eq!((d.time, d.hops, d.app.as_str()), (t + 1, 1, "text"));
}

#[test]
fn latency_scales_with_hops() {
    let config = SimConfig { latency_ticks: 3, ..Default::default() };
    let mut w = world(config, &["A", "B", "C"], &[("A", "B"), ("B", "C")]);
    let t = w.now() + 1;
    w.schedule(t, EventKind::UserAction(UserAction::Probe { src: id("A"), dst: id("C"), tag: 7 })).unwrap();
    w.run_until_quiescent(50).unwrap();
    let d = w.deliveries().last().unwrap();
    assert_eq!((d.time, d.hops), (t + 6, 2));
}

#[test]
fn packet_in_flight_is_lost_with_its_link() {
    let mut w = world(SimConfig::default(), &["A", "B"], &[("A", "B")]);
    let t = w.now() + 1;
    let send = UserAction::Send { src: id("A"), dst: id("B"), text: "x".into() };
    w.schedule(t, EventKind::UserAction(send)).unwrap();
    // Flapping the link still invalidates what was sent before.
    w.schedule(t, EventKind::RemoveEdge(id("A"), id("B"))).unwrap();
    w.schedule(t, EventKind::AddEdge(id("A"), id("B"))).unwrap();
    w.run_until_quiescent(50).unwrap();
    assert!(w.deliveries().is_empty());
    assert_eq!(w.counters().packets_dropped.get("link_down"), Some(&1));
    let drops = lines_of(&w, "drop");
    assert_eq!(drops.len(), 1);
    assert_eq!(drops[0].t, t + 1);
}

#[test]
fn unicast_needs_adjacency() {
    let mut w = world(SimConfig::default(), &["A", "B", "C"], &[("A", "B"), ("B", "C")]);
    let err =
        w.send_message(&id("A"), &id("C"), Message::Update(w.table(&id("A")).unwrap().clone().build_update(None)));
    assert!(matches!(err, Err(SimError::NotAdjacent { .. })));
    assert!(w
        .send_message(&id("A"), &id("B"), Message::Update(w.table(&id("A")).unwrap().clone().build_update(None)))
        .is_ok());
}

#[test]
fn ttl_bounds_the_path() {
    let config = SimConfig { ttl: Some(1), ..Default::default() };
    let mut w = world(config, &["A", "B", "C"], &[("A", "B"), ("B", "C")]);
    w.originate(&id("A"), &id("C"), AppMessage::Probe { tag: 0 });
    w.run_until_quiescent(10).unwrap();
    assert!(w.deliveries().is_empty());
    assert_eq!(w.counters().packets_dropped.get("ttl_expired"), Some(&1));
}

#[test]
fn forwarding_off_reaches_only_neighbors() {
    let config = SimConfig { forwarding: false, ..Default::default() };
    let mut w = world(config, &["A", "B", "C"], &[("A", "B"), ("B", "C")]);
    w.originate(&id("A"), &id("B"), AppMessage::Probe { tag: 0 });
    w.originate(&id("A"), &id("C"), AppMessage::Probe { tag: 1 });
    w.run_until_quiescent(10).unwrap();
    let reached: Vec<&DeviceId> = w.deliveries().iter().map(|d| &d.dst).collect();
    assert_eq!(reached, vec![&id("B")]);
    assert_eq!(w.counters().packets_dropped.values().sum::<u64>(), 1);
}

/// X-A-B, then X leaves A and Y appears next to B. Returns whether the world
/// settled within `budget` ticks.
fn count_to_infinity(config: SimConfig, budget: u64) -> (World, bool) {
    let mut w = world(config, &["X", "A", "B", "Y"], &[("X", "A"), ("A", "B")]);
    let t = w.now() + 1;
    w.schedule(t, EventKind::RemoveEdge(id("X"), id("A"))).unwrap();
    w.schedule(t, EventKind::AddEdge(id("Y"), id("B"))).unwrap();
    let settled = match w.run_until_quiescent(budget) {
        Ok(_) => true,
        Err(SimError::NonQuiescent(r)) => {
            assert!(r.in_flight > 0);
            false
        }
        Err(e) => panic!("{e}"),
    };
    (w, settled)
}

#[test]
fn literal_rules_without_split_horizon_never_settle() {
    let config = SimConfig { faithful_routing: true, split_horizon: false, ..Default::default() };
    let (short, settled) = count_to_infinity(config, 100);
    assert!(!settled);
    let (long, settled) = count_to_infinity(config, 200);
    assert!(!settled);
    assert!(long.counters().routing_updates > short.counters().routing_updates);
}

#[test]
fn default_rules_forget_a_departed_node() {
    let (w, settled) = count_to_infinity(SimConfig::default(), 200);
    assert!(settled);
    assert!(!table(&w, "A").contains_key("X"));
    assert!(!table(&w, "B").contains_key("X"));
    assert_eq!(table(&w, "A"), pairs(&[("B", "B"), ("Y", "B")]));
}

#[test]
fn broadcasts_only_follow_key_set_changes() {
    let mut w = world(SimConfig::default(), &["A", "B", "C"], &[("A", "B"), ("B", "C")]);
    let before = w.counters().broadcasts;
    // A second edge between the same pair changes nothing.
    w.schedule(w.now() + 1, EventKind::AddEdge(id("A"), id("B"))).unwrap();
    w.run_until_quiescent(10).unwrap();
    assert_eq!(w.counters().broadcasts, before);
    assert_eq!(lines_of(&w, "topology").last().unwrap().raw("topology"), Some("duplicate_edge"));
}
