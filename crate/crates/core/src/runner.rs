//! Scenario execution, assertion verdicts and run summaries.
//!
//! Assertions are judged against an [`Observed`] snapshot. The runner builds
//! one from the live world; [`audit`] rebuilds one from the trace text alone
//! and judges it with the same code, so the two sets of verdicts must agree.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::identity::DeviceId;
use crate::mom::MoMDocument;
use crate::scenario::{Assertion, RoleName, Scenario, ScenarioError};
use crate::sim::{AppMessage, EventKind, QuiescenceReport, SimConfig, SimError, World};
use crate::trace::{decode_list, decode_table, parse_trace, TraceError};

pub const SUMMARY_SCHEMA_VERSION: u32 = 1;

/// Exit code for usage, parse and validation errors.
pub const EXIT_USAGE: i32 = 2;

/// Command-line overrides on top of a scenario's own config.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub ttl: Option<u32>,
    pub latency_ticks: Option<u64>,
    pub split_horizon: Option<bool>,
    pub faithful_routing: bool,
    pub max_ticks: Option<u64>,
}

impl Overrides {
    pub fn apply(&self, mut config: SimConfig) -> SimConfig {
        if let Some(s) = self.seed {
            config.seed = s;
        }
        if let Some(t) = self.ttl {
            config.ttl = Some(t);
        }
        if let Some(l) = self.latency_ticks {
            config.latency_ticks = l;
        }
        if let Some(sh) = self.split_horizon {
            config.split_horizon = sh;
        }
        if self.faithful_routing {
            config.faithful_routing = true;
        }
        if let Some(m) = self.max_ticks {
            config.max_ticks = m;
        }
        config
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Passed,
    AssertionFailed,
    NonQuiescent,
}

impl Outcome {
    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::Passed => "passed",
            Outcome::AssertionFailed => "assertion_failed",
            Outcome::NonQuiescent => "non_quiescent",
        }
    }

    pub fn exit_code(self) -> i32 {
        match self {
            Outcome::Passed => 0,
            Outcome::AssertionFailed => 1,
            Outcome::NonQuiescent => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Verdict {
    pub index: usize,
    pub kind: String,
    pub label: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DocSummary {
    pub doc_id: String,
    pub title: String,
    pub content: String,
    pub revision: u64,
    pub owned_by: String,
    pub shared_with: Vec<String>,
}

impl From<&MoMDocument> for DocSummary {
    fn from(d: &MoMDocument) -> Self {
        DocSummary {
            doc_id: d.doc_id.to_string(),
            title: d.title.clone(),
            content: d.content.clone(),
            revision: d.revision,
            owned_by: d.owned_by.to_string(),
            shared_with: d.shared_with.iter().map(DeviceId::to_string).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct NodeSummary {
    pub device_id: String,
    pub present: bool,
    pub role: String,
    pub session: Option<String>,
    /// Peer -> via, by canonical id.
    pub table: BTreeMap<String, String>,
    pub my_moms: Vec<DocSummary>,
    pub shared_moms: Vec<DocSummary>,
    pub live_views: Vec<DocSummary>,
}

/// Machine-readable result of one run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Summary {
    pub schema_version: u32,
    pub scenario: String,
    pub config: SimConfig,
    pub outcome: Outcome,
    pub exit_code: i32,
    /// Report of the scripted phase, before assertion probes.
    pub report: QuiescenceReport,
    /// By social name.
    pub nodes: BTreeMap<String, NodeSummary>,
    /// Empty when the run did not reach quiescence.
    pub assertions: Vec<Verdict>,
}

impl Summary {
    pub fn failed(&self) -> impl Iterator<Item = &Verdict> {
        self.assertions.iter().filter(|v| !v.passed)
    }
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub summary: Summary,
    pub trace: String,
}

/// Validates `scenario` under `config`, then runs it.
///
/// The scripted events run to quiescence first. Each `delivered_within`
/// assertion then injects a probe, tagged with the assertion index, and runs
/// to quiescence again. Everything else is judged on the final state.
pub fn run(scenario: &Scenario, config: SimConfig) -> Result<RunResult, ScenarioError> {
    let mut checked = scenario.clone();
    checked.config = config;
    let violations = checked.validate();
    if !violations.is_empty() {
        return Err(ScenarioError::Schema(violations));
    }
    let ids = scenario.device_ids();

    let mut world = World::new(config);
    for n in scenario.nodes.iter().filter(|n| n.present) {
        world.schedule(0, EventKind::AddNode(ids[&n.social_name].clone())).expect("t=0 is never past");
    }
    for ev in &scenario.events {
        world.schedule(ev.t, ev.action.to_event(&ids)).expect("times are validated");
    }

    let report = match world.run_until_quiescent(config.max_ticks) {
        Ok(r) => r,
        Err(SimError::NonQuiescent(r)) => return Ok(finish(scenario, &world, *r, None)),
        Err(e) => unreachable!("validated scenario failed to run: {e}"),
    };

    for (i, a) in scenario.assertions.iter().enumerate() {
        let Assertion::DeliveredWithin { src, dst, .. } = a else { continue };
        if world.node(&ids[src]).is_none() {
            continue;
        }
        world.originate(&ids[src], &ids[dst], AppMessage::Probe { tag: i as u64 });
        if let Err(SimError::NonQuiescent(_)) = world.run_until_quiescent(config.max_ticks) {
            return Ok(finish(scenario, &world, report, None));
        }
    }

    let observed = Observed::from_world(&world, scenario);
    let verdicts = judge_all(scenario, &observed);
    Ok(finish(scenario, &world, report, Some(verdicts)))
}

fn finish(scenario: &Scenario, world: &World, report: QuiescenceReport, verdicts: Option<Vec<Verdict>>) -> RunResult {
    let outcome = match &verdicts {
        None => Outcome::NonQuiescent,
        Some(v) if v.iter().all(|v| v.passed) => Outcome::Passed,
        Some(_) => Outcome::AssertionFailed,
    };
    let ids = scenario.device_ids();
    let docs = |it: &mut dyn Iterator<Item = &MoMDocument>| it.map(DocSummary::from).collect::<Vec<_>>();
    let nodes = ids
        .iter()
        .map(|(name, id)| {
            let role = world.sessions().role(id);
            let summary = match world.node(id) {
                Some(n) => NodeSummary {
                    device_id: id.to_string(),
                    present: true,
                    role: role.label().to_owned(),
                    session: role.session().map(str::to_owned),
                    table: n.table.entries().iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
                    my_moms: docs(&mut n.store.my_moms()),
                    shared_moms: docs(&mut n.store.shared_moms()),
                    live_views: docs(&mut n.store.live_views()),
                },
                None => NodeSummary {
                    device_id: id.to_string(),
                    present: false,
                    role: role.label().to_owned(),
                    session: None,
                    table: BTreeMap::new(),
                    my_moms: Vec::new(),
                    shared_moms: Vec::new(),
                    live_views: Vec::new(),
                },
            };
            (name.clone(), summary)
        })
        .collect();
    RunResult {
        summary: Summary {
            schema_version: SUMMARY_SCHEMA_VERSION,
            scenario: scenario.name.clone(),
            config: *world.config(),
            outcome,
            exit_code: outcome.exit_code(),
            report,
            nodes,
            assertions: verdicts.unwrap_or_default(),
        },
        trace: world.trace_text(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct OwnDoc {
    id: String,
    title: String,
    content: String,
    shared_with: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum ProbeResult {
    NotSent,
    Lost,
    Delivered(usize),
}

/// Final state as far as assertions care, keyed by canonical id.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Observed {
    tables: BTreeMap<String, BTreeMap<String, String>>,
    /// Role label and, for a member, its host.
    roles: BTreeMap<String, (RoleName, Option<String>)>,
    my_docs: BTreeMap<String, Vec<OwnDoc>>,
    shared_titles: BTreeMap<String, Vec<String>>,
    /// (node, doc id) -> live view content.
    live: BTreeMap<(String, String), String>,
    probes: BTreeMap<usize, ProbeResult>,
}

impl Observed {
    fn from_world(world: &World, scenario: &Scenario) -> Self {
        let ids = scenario.device_ids();
        let mut o = Observed::default();
        for (id, node) in world.nodes() {
            let c = id.to_string();
            o.tables
                .insert(c.clone(), node.table.entries().iter().map(|(k, v)| (k.to_string(), v.to_string())).collect());
            let own = node
                .store
                .my_moms()
                .map(|d| OwnDoc {
                    id: d.doc_id.to_string(),
                    title: d.title.clone(),
                    content: d.content.clone(),
                    shared_with: d.shared_with.iter().map(DeviceId::to_string).collect(),
                })
                .collect();
            o.my_docs.insert(c.clone(), own);
            let mut shared: Vec<String> = node.store.shared_moms().map(|d| d.title.clone()).collect();
            shared.sort();
            o.shared_titles.insert(c.clone(), shared);
            for d in node.store.live_views() {
                o.live.insert((c.clone(), d.doc_id.to_string()), d.content.clone());
            }
            let role = world.sessions().role(id);
            let entry = match role.label() {
                "scribe" => (RoleName::Scribe, Some(c.clone())),
                "member" => (RoleName::Member, world.sessions().host_of(id).map(DeviceId::to_string)),
                _ => (RoleName::Idle, None),
            };
            o.roles.insert(c, entry);
        }
        let deliveries: BTreeMap<u64, usize> = world.deliveries().iter().map(|d| (d.packet, d.hops)).collect();
        let sends = probe_sends(world.trace().iter().map(String::as_str));
        for (i, a) in scenario.assertions.iter().enumerate() {
            if let Assertion::DeliveredWithin { src, dst, .. } = a {
                let key = (ids[src].to_string(), ids[dst].to_string(), i as u64);
                let r = match sends.get(&key) {
                    None => ProbeResult::NotSent,
                    Some(p) => deliveries.get(p).map_or(ProbeResult::Lost, |h| ProbeResult::Delivered(*h)),
                };
                o.probes.insert(i, r);
            }
        }
        o
    }

    /// Rebuilds the final state by replaying trace records.
    pub fn from_trace(text: &str, scenario: &Scenario) -> Result<Self, TraceError> {
        let ids = scenario.device_ids();
        let lines = parse_trace(text)?;
        let mut o = Observed::default();
        let mut hosted: BTreeMap<String, String> = BTreeMap::new();
        let mut offered: BTreeMap<(String, String), String> = BTreeMap::new();
        let mut shared: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
        let mut delivered: BTreeMap<u64, usize> = BTreeMap::new();
        let field = |l: &crate::trace::TraceLine, k: &str| l.get(k).unwrap_or_default();

        for l in &lines {
            let node = l.node();
            match l.kind() {
                Some("topology") => match field(l, "topology").as_str() {
                    "add_node" => {
                        o.roles.insert(node.clone(), (RoleName::Idle, None));
                        o.my_docs.insert(node.clone(), Vec::new());
                        shared.insert(node.clone(), BTreeMap::new());
                    }
                    "remove_node" => {
                        o.tables.remove(&node);
                        o.roles.remove(&node);
                        o.my_docs.remove(&node);
                        shared.remove(&node);
                        o.live.retain(|(n, _), _| *n != node);
                    }
                    _ => {}
                },
                Some("table") => {
                    let t = l.raw("table").and_then(decode_table).unwrap_or_default();
                    o.tables.insert(node, t);
                }
                Some("session_event") => {
                    let session = field(l, "session");
                    let role = match field(l, "session_event").as_str() {
                        "host" => {
                            hosted.insert(session, node.clone());
                            (RoleName::Scribe, Some(node.clone()))
                        }
                        "join" => (RoleName::Member, hosted.get(&session).cloned()),
                        _ => {
                            if hosted.get(&session) == Some(&node) {
                                hosted.remove(&session);
                            }
                            (RoleName::Idle, None)
                        }
                    };
                    if o.roles.contains_key(&node) {
                        o.roles.insert(node, role);
                    }
                }
                Some("doc") => {
                    let id = field(l, "id");
                    match field(l, "doc").as_str() {
                        "create" => o.my_docs.entry(node).or_default().push(OwnDoc {
                            id,
                            title: field(l, "title"),
                            content: String::new(),
                            shared_with: BTreeSet::new(),
                        }),
                        "edit" => {
                            if let Some(d) = own_doc(&mut o.my_docs, &node, &id) {
                                d.content = field(l, "content");
                            }
                        }
                        "apply" => {
                            o.live.insert((node, id), field(l, "content"));
                        }
                        "offered" => {
                            offered.insert((node, id), field(l, "title"));
                        }
                        "accept" => {
                            let title = offered.get(&(node.clone(), id.clone())).cloned().unwrap_or_default();
                            shared.entry(node).or_default().entry(id).or_insert(title);
                        }
                        "shared_with" => {
                            let list = l.raw("list").map(decode_list).unwrap_or_default();
                            if let Some(d) = own_doc(&mut o.my_docs, &node, &id) {
                                d.shared_with = list.into_iter().collect();
                            }
                        }
                        "rename" => {
                            let title = field(l, "title");
                            if let Some(d) = own_doc(&mut o.my_docs, &node, &id) {
                                d.title = title;
                            } else if let Some(t) = shared.get_mut(&node).and_then(|s| s.get_mut(&id)) {
                                *t = title;
                            }
                        }
                        "delete" => {
                            if let Some(docs) = o.my_docs.get_mut(&node) {
                                docs.retain(|d| d.id != id);
                            }
                            if let Some(s) = shared.get_mut(&node) {
                                s.remove(&id);
                            }
                        }
                        _ => {}
                    }
                }
                Some("data") if field(l, "data") == "deliver" => {
                    if let (Ok(p), Ok(h)) = (field(l, "packet").parse(), field(l, "hops").parse()) {
                        delivered.insert(p, h);
                    }
                }
                _ => {}
            }
        }
        for (node, docs) in shared {
            let mut titles: Vec<String> = docs.into_values().collect();
            titles.sort();
            o.shared_titles.insert(node, titles);
        }
        let sends = probe_sends(text.lines());
        for (i, a) in scenario.assertions.iter().enumerate() {
            if let Assertion::DeliveredWithin { src, dst, .. } = a {
                let key = (ids[src].to_string(), ids[dst].to_string(), i as u64);
                let r = match sends.get(&key) {
                    None => ProbeResult::NotSent,
                    Some(p) => delivered.get(p).map_or(ProbeResult::Lost, |h| ProbeResult::Delivered(*h)),
                };
                o.probes.insert(i, r);
            }
        }
        Ok(o)
    }
}

fn own_doc<'a>(docs: &'a mut BTreeMap<String, Vec<OwnDoc>>, node: &str, id: &str) -> Option<&'a mut OwnDoc> {
    docs.get_mut(node)?.iter_mut().find(|d| d.id == id)
}

/// Last probe packet id per (src, dst, tag).
fn probe_sends<'a>(lines: impl Iterator<Item = &'a str>) -> BTreeMap<(String, String, u64), u64> {
    let mut out = BTreeMap::new();
    for (i, text) in lines.enumerate() {
        let Ok(l) = crate::trace::parse_line(text, i + 1) else { continue };
        if l.kind() != Some("data")
            || l.get("data").as_deref() != Some("send")
            || l.get("app").as_deref() != Some("probe")
        {
            continue;
        }
        let (Some(src), Some(dst), Some(tag), Some(packet)) =
            (l.get("src"), l.get("dst"), l.get("tag"), l.get("packet"))
        else {
            continue;
        };
        if let (Ok(tag), Ok(packet)) = (tag.parse(), packet.parse()) {
            out.insert((src, dst, tag), packet);
        }
    }
    out
}

fn judge_all(scenario: &Scenario, o: &Observed) -> Vec<Verdict> {
    let ids = scenario.device_ids();
    scenario
        .assertions
        .iter()
        .enumerate()
        .map(|(i, a)| {
            let (passed, detail) = judge(i, a, o, &ids);
            Verdict { index: i, kind: a.kind().to_owned(), label: a.label(), passed, detail }
        })
        .collect()
}

fn judge(index: usize, a: &Assertion, o: &Observed, ids: &BTreeMap<String, DeviceId>) -> (bool, String) {
    let c = |name: &String| ids[name].to_string();
    let empty = BTreeMap::new();
    let table_of = |name: &String| o.tables.get(&c(name)).unwrap_or(&empty);
    match a {
        Assertion::TableEquals { node, table } => {
            let want: BTreeMap<String, String> = table.iter().map(|(k, v)| (c(k), c(v))).collect();
            let got = table_of(node);
            if *got == want {
                (true, format!("table {}", fmt_table(got)))
            } else {
                (false, format!("expected {}, got {}", fmt_table(&want), fmt_table(got)))
            }
        }
        Assertion::DeliveredWithin { hops, .. } => match o.probes.get(&index).unwrap_or(&ProbeResult::NotSent) {
            ProbeResult::NotSent => (false, "probe not sent: source is not in the network".into()),
            ProbeResult::Lost => (false, "probe was not delivered".into()),
            ProbeResult::Delivered(h) if h <= hops => (true, format!("delivered in {h} hop(s)")),
            ProbeResult::Delivered(h) => (false, format!("delivered in {h} hop(s), more than {hops}")),
        },
        Assertion::ContentConverged { scribe, title, members } => {
            let Some(doc) = o.my_docs.get(&c(scribe)).and_then(|d| d.iter().find(|d| d.title == *title)) else {
                return (false, format!("{scribe} has no MoM titled {title:?}"));
            };
            let members: Vec<String> = match members {
                Some(m) => m.iter().map(c).collect(),
                None => o
                    .roles
                    .iter()
                    .filter(|(_, (r, host))| *r == RoleName::Member && host.as_deref() == Some(c(scribe).as_str()))
                    .map(|(n, _)| n.clone())
                    .collect(),
            };
            if members.is_empty() {
                return (false, "no members to compare".into());
            }
            let lagging: Vec<&String> =
                members.iter().filter(|m| o.live.get(&((*m).clone(), doc.id.clone())) != Some(&doc.content)).collect();
            if lagging.is_empty() {
                (true, format!("{} member(s) hold {:?}", members.len(), doc.content))
            } else {
                (false, format!("behind the Scribe: {}", join(lagging)))
            }
        }
        Assertion::RoleIs { node, role, host } => {
            let (got, got_host) = o.roles.get(&c(node)).cloned().unwrap_or((RoleName::Idle, None));
            let host_ok = host.as_ref().is_none_or(|h| got_host.as_deref() == Some(c(h).as_str()));
            let shown = match &got_host {
                Some(h) if got == RoleName::Member => format!("{} of {h}", got.as_str()),
                _ => got.as_str().to_owned(),
            };
            (got == *role && host_ok, format!("role {shown}"))
        }
        Assertion::Unreachable { src, dst } => {
            let present = table_of(src).contains_key(&c(dst));
            (
                !present,
                if present { format!("{dst} is in {src}'s table") } else { format!("{dst} is not in {src}'s table") },
            )
        }
        Assertion::SharedWith { node, title, members } => {
            let Some(doc) = o.my_docs.get(&c(node)).and_then(|d| d.iter().find(|d| d.title == *title)) else {
                return (false, format!("{node} has no MoM titled {title:?}"));
            };
            let want: BTreeSet<String> = members.iter().map(c).collect();
            let verdict = doc.shared_with == want;
            (verdict, format!("shared with [{}]", join(doc.shared_with.iter())))
        }
        Assertion::SharedMoms { node, titles } => {
            let got = o.shared_titles.get(&c(node)).cloned().unwrap_or_default();
            let mut want = titles.clone();
            want.sort();
            (got == want, format!("shared MoMs [{}]", join(got.iter())))
        }
    }
}

fn fmt_table(t: &BTreeMap<String, String>) -> String {
    let inner: Vec<String> = t.iter().map(|(k, v)| format!("{k}:{v}")).collect();
    format!("{{{}}}", inner.join(","))
}

fn join<'a>(items: impl IntoIterator<Item = &'a String>) -> String {
    items.into_iter().map(String::as_str).collect::<Vec<_>>().join(",")
}

/// Recomputes every assertion verdict from a run's trace alone.
pub fn audit(scenario: &Scenario, trace: &str) -> Result<Vec<Verdict>, TraceError> {
    let observed = Observed::from_trace(trace, scenario)?;
    Ok(judge_all(scenario, &observed))
}
