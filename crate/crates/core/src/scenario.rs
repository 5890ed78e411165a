//! Scenario files.
//!
//! A scenario is a JSON document with `schema_version: 1`:
//!
//! ```json
//! {
//!   "schema_version": 1,
//!   "name": "line4",
//!   "config": { "latency_ticks": 1 },
//!   "nodes": [ { "social_name": "A", "sim_number": "1000000001" } ],
//!   "events": [ { "t": 0, "action": "add_edge", "a": "A", "b": "B" } ],
//!   "assertions": [ { "delivered_within": { "src": "A", "dst": "D", "hops": 3 } } ]
//! }
//! ```
//!
//! Nodes are referred to by social name everywhere else in the file, so
//! social names must be unique within a scenario. Nodes with
//! `"present": false` are declared but only join through an `add_node` event.
//! `config` holds overrides of [`SimConfig`]; unknown keys are rejected.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::identity::{make_device_id, DeviceId, IdentityError};
use crate::mom::OfferDecision;
use crate::sim::{EventKind, SimConfig, UserAction};

pub const SCHEMA_VERSION: u32 = 1;

/// One problem found in a scenario, located by JSON pointer and, when the
/// parser knows it, by line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SchemaViolation {
    pub pointer: String,
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for SchemaViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let pointer = if self.pointer.is_empty() { "/" } else { &self.pointer };
        match self.line {
            Some(line) => write!(f, "{pointer} (line {line}): {}", self.message),
            None => write!(f, "{pointer}: {}", self.message),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScenarioError {
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("{} schema violation(s); first: {}", .0.len(), .0[0])]
    Schema(Vec<SchemaViolation>),
}

impl ScenarioError {
    pub fn violations(&self) -> &[SchemaViolation] {
        match self {
            ScenarioError::Schema(v) => v,
            ScenarioError::Parse { .. } => &[],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema_version: u32,
    pub name: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub description: String,
    #[serde(default)]
    pub config: SimConfig,
    pub nodes: Vec<NodeSpec>,
    #[serde(default)]
    pub events: Vec<EventSpec>,
    #[serde(default)]
    pub assertions: Vec<Assertion>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSpec {
    pub social_name: String,
    pub sim_number: String,
    #[serde(default = "yes")]
    pub present: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventSpec {
    pub t: u64,
    #[serde(flatten)]
    pub action: Action,
}

/// Scripted event; node references are social names.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case", deny_unknown_fields)]
pub enum Action {
    AddNode { node: String },
    RemoveNode { node: String },
    AddEdge { a: String, b: String },
    RemoveEdge { a: String, b: String },
    Host { node: String, title: String },
    Join { node: String, peer: String },
    Leave { node: String },
    Create { node: String, title: String },
    Edit { node: String, title: String, content: String },
    Draft { node: String, title: String, content: String },
    Share { node: String, title: String, to: Vec<String> },
    Respond { node: String, owner: String, title: String, decision: OfferDecision },
    Rename { node: String, title: String, new_title: String },
    Delete { node: String, title: String },
    Read { node: String, title: String },
    Send { src: String, dst: String, text: String },
    Probe { src: String, dst: String, tag: u64 },
}

impl Action {
    /// Every node reference with the field it came from.
    pub fn references(&self) -> Vec<(String, &str)> {
        let one = reference;
        match self {
            Action::AddNode { node }
            | Action::RemoveNode { node }
            | Action::Host { node, .. }
            | Action::Leave { node }
            | Action::Create { node, .. }
            | Action::Edit { node, .. }
            | Action::Draft { node, .. }
            | Action::Rename { node, .. }
            | Action::Delete { node, .. }
            | Action::Read { node, .. } => vec![one("node", node)],
            Action::AddEdge { a, b } | Action::RemoveEdge { a, b } => vec![one("a", a), one("b", b)],
            Action::Join { node, peer } => vec![one("node", node), one("peer", peer)],
            Action::Respond { node, owner, .. } => vec![one("node", node), one("owner", owner)],
            Action::Send { src, dst, .. } | Action::Probe { src, dst, .. } => vec![one("src", src), one("dst", dst)],
            Action::Share { node, to, .. } => {
                let mut refs = vec![one("node", node)];
                refs.extend(indexed_references("to", to));
                refs
            }
        }
    }

    /// Converts to a simulator event. Every reference must be in `ids`.
    pub fn to_event(&self, ids: &BTreeMap<String, DeviceId>) -> EventKind {
        let id = |n: &String| ids[n].clone();
        let user = EventKind::UserAction;
        match self {
            Action::AddNode { node } => EventKind::AddNode(id(node)),
            Action::RemoveNode { node } => EventKind::RemoveNode(id(node)),
            Action::AddEdge { a, b } => EventKind::AddEdge(id(a), id(b)),
            Action::RemoveEdge { a, b } => EventKind::RemoveEdge(id(a), id(b)),
            Action::Host { node, title } => user(UserAction::Host { node: id(node), title: title.clone() }),
            Action::Join { node, peer } => user(UserAction::Join { node: id(node), peer: id(peer) }),
            Action::Leave { node } => user(UserAction::Leave { node: id(node) }),
            Action::Create { node, title } => user(UserAction::Create { node: id(node), title: title.clone() }),
            Action::Edit { node, title, content } => {
                user(UserAction::Edit { node: id(node), title: title.clone(), content: content.clone() })
            }
            Action::Draft { node, title, content } => {
                user(UserAction::Draft { node: id(node), title: title.clone(), content: content.clone() })
            }
            Action::Share { node, title, to } => {
                user(UserAction::Share { node: id(node), title: title.clone(), to: to.iter().map(id).collect() })
            }
            Action::Respond { node, owner, title, decision } => user(UserAction::Respond {
                node: id(node),
                owner: id(owner),
                title: title.clone(),
                decision: *decision,
            }),
            Action::Rename { node, title, new_title } => {
                user(UserAction::Rename { node: id(node), title: title.clone(), new_title: new_title.clone() })
            }
            Action::Delete { node, title } => user(UserAction::Delete { node: id(node), title: title.clone() }),
            Action::Read { node, title } => user(UserAction::Read { node: id(node), title: title.clone() }),
            Action::Send { src, dst, text } => {
                user(UserAction::Send { src: id(src), dst: id(dst), text: text.clone() })
            }
            Action::Probe { src, dst, tag } => user(UserAction::Probe { src: id(src), dst: id(dst), tag: *tag }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoleName {
    Idle,
    Scribe,
    Member,
}

impl RoleName {
    pub fn as_str(self) -> &'static str {
        match self {
            RoleName::Idle => "idle",
            RoleName::Scribe => "scribe",
            RoleName::Member => "member",
        }
    }
}

/// End-of-run check. All are evaluated once the run has gone quiet.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Assertion {
    /// `node`'s table is exactly `table` (peer name -> via name).
    TableEquals { node: String, table: BTreeMap<String, String> },
    /// A probe injected at `src` reaches `dst` in at most `hops` hops.
    DeliveredWithin { src: String, dst: String, hops: usize },
    /// Every listed member (default: every current member of `scribe`'s
    /// session) has a live view of `title` equal to the Scribe's content.
    ContentConverged {
        scribe: String,
        title: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        members: Option<Vec<String>>,
    },
    /// `node` has `role`; for a member, `host` names the Scribe.
    RoleIs {
        node: String,
        role: RoleName,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        host: Option<String>,
    },
    /// `dst` is not a key of `src`'s table.
    Unreachable { src: String, dst: String },
    /// The owner's `title` lists exactly `members` as accepted recipients.
    SharedWith { node: String, title: String, members: Vec<String> },
    /// `node`'s Shared MoMs list holds exactly these titles.
    SharedMoms { node: String, titles: Vec<String> },
}

impl Assertion {
    pub fn kind(&self) -> &'static str {
        match self {
            Assertion::TableEquals { .. } => "table_equals",
            Assertion::DeliveredWithin { .. } => "delivered_within",
            Assertion::ContentConverged { .. } => "content_converged",
            Assertion::RoleIs { .. } => "role_is",
            Assertion::Unreachable { .. } => "unreachable",
            Assertion::SharedWith { .. } => "shared_with",
            Assertion::SharedMoms { .. } => "shared_moms",
        }
    }

    /// Short human label, e.g. `delivered_within(A->D, 3)`.
    pub fn label(&self) -> String {
        match self {
            Assertion::TableEquals { node, .. } => format!("table_equals({node})"),
            Assertion::DeliveredWithin { src, dst, hops } => format!("delivered_within({src}->{dst}, {hops})"),
            Assertion::ContentConverged { scribe, title, .. } => format!("content_converged({scribe}, {title})"),
            Assertion::RoleIs { node, role, .. } => format!("role_is({node}, {})", role.as_str()),
            Assertion::Unreachable { src, dst } => format!("unreachable({src}->{dst})"),
            Assertion::SharedWith { node, title, .. } => format!("shared_with({node}, {title})"),
            Assertion::SharedMoms { node, .. } => format!("shared_moms({node})"),
        }
    }

    pub fn references(&self) -> Vec<(String, &str)> {
        let (one, many) = (reference, indexed_references);
        match self {
            Assertion::TableEquals { node, table } => {
                let mut refs = vec![one("node", node)];
                for (k, v) in table {
                    refs.push((format!("table/{k}"), k.as_str()));
                    refs.push((format!("table/{k}"), v.as_str()));
                }
                refs
            }
            Assertion::DeliveredWithin { src, dst, .. } | Assertion::Unreachable { src, dst } => {
                vec![one("src", src), one("dst", dst)]
            }
            Assertion::ContentConverged { scribe, members, .. } => {
                let mut refs = vec![one("scribe", scribe)];
                refs.extend(members.as_deref().map(|m| many("members", m)).unwrap_or_default());
                refs
            }
            Assertion::RoleIs { node, host, .. } => {
                let mut refs = vec![one("node", node)];
                refs.extend(host.iter().map(|h| one("host", h)));
                refs
            }
            Assertion::SharedWith { node, members, .. } => {
                let mut refs = vec![one("node", node)];
                refs.extend(many("members", members));
                refs
            }
            Assertion::SharedMoms { node, .. } => vec![one("node", node)],
        }
    }
}

impl Scenario {
    /// Parses and validates.
    pub fn parse(text: &str) -> Result<Scenario, ScenarioError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let scenario: Scenario = serde_path_to_error::deserialize(de).map_err(|e| {
            let pointer = pointer_of(e.path());
            let inner = e.into_inner();
            if inner.is_data() {
                ScenarioError::Schema(vec![SchemaViolation {
                    pointer,
                    line: Some(inner.line()),
                    message: strip_position(&inner.to_string()),
                }])
            } else {
                ScenarioError::Parse {
                    line: inner.line(),
                    column: inner.column(),
                    message: strip_position(&inner.to_string()),
                }
            }
        })?;
        let violations = scenario.validate();
        if violations.is_empty() {
            Ok(scenario)
        } else {
            Err(ScenarioError::Schema(violations))
        }
    }

    /// Semantic checks that the type system cannot express.
    pub fn validate(&self) -> Vec<SchemaViolation> {
        let mut out = Vec::new();
        let mut bad = |pointer: String, message: String| out.push(SchemaViolation { pointer, line: None, message });

        if self.schema_version != SCHEMA_VERSION {
            bad(
                "/schema_version".into(),
                format!("unsupported schema_version {}, expected {SCHEMA_VERSION}", self.schema_version),
            );
        }
        if self.name.trim().is_empty() {
            bad("/name".into(), "scenario name is empty".into());
        }
        let c = &self.config;
        if c.latency_ticks == 0 {
            bad("/config/latency_ticks".into(), "must be at least 1".into());
        }
        if c.max_ticks == 0 {
            bad("/config/max_ticks".into(), "must be at least 1".into());
        }
        if c.ttl == Some(0) {
            bad("/config/ttl".into(), "must be at least 1".into());
        }
        if c.autosave_ticks == 0 {
            bad("/config/autosave_ticks".into(), "must be at least 1".into());
        }

        let mut declared = BTreeSet::new();
        for (i, n) in self.nodes.iter().enumerate() {
            if let Err(e) = make_device_id(&n.social_name, &n.sim_number) {
                let field = match e {
                    IdentityError::InvalidSim(_) => "sim_number",
                    _ => "social_name",
                };
                bad(format!("/nodes/{i}/{field}"), e.to_string());
            }
            if !declared.insert(n.social_name.as_str()) {
                bad(format!("/nodes/{i}/social_name"), format!("duplicate social name {:?}", n.social_name));
            }
        }

        let mut last = 0;
        for (i, ev) in self.events.iter().enumerate() {
            if ev.t < last {
                bad(
                    format!("/events/{i}/t"),
                    format!("event time {} is earlier than the previous event at {last}", ev.t),
                );
            }
            last = last.max(ev.t);
            for (field, name) in ev.action.references() {
                if !declared.contains(name) {
                    bad(format!("/events/{i}/{field}"), format!("undeclared node {name:?}"));
                }
            }
            if let Action::AddEdge { a, b } | Action::RemoveEdge { a, b } = &ev.action {
                if a == b {
                    bad(format!("/events/{i}/b"), format!("self-loop on {a:?}"));
                }
            }
        }

        for (i, a) in self.assertions.iter().enumerate() {
            for (field, name) in a.references() {
                if !declared.contains(name) {
                    bad(format!("/assertions/{i}/{}/{field}", a.kind()), format!("undeclared node {name:?}"));
                }
            }
        }
        out
    }

    /// Social name -> device id for every declared node. Assumes a valid
    /// scenario.
    pub fn device_ids(&self) -> BTreeMap<String, DeviceId> {
        self.nodes
            .iter()
            .filter_map(|n| Some((n.social_name.clone(), make_device_id(&n.social_name, &n.sim_number).ok()?)))
            .collect()
    }
}

fn reference<'a>(field: &str, name: &'a str) -> (String, &'a str) {
    (field.to_owned(), name)
}

fn indexed_references<'a>(field: &str, names: &'a [String]) -> Vec<(String, &'a str)> {
    names.iter().enumerate().map(|(i, n)| (format!("{field}/{i}"), n.as_str())).collect()
}

fn pointer_of(path: &serde_path_to_error::Path) -> String {
    use serde_path_to_error::Segment;
    path.iter()
        .filter_map(|seg| match seg {
            Segment::Seq { index } => Some(format!("/{index}")),
            Segment::Map { key } => Some(format!("/{key}")),
            Segment::Enum { variant } => Some(format!("/{variant}")),
            Segment::Unknown => None,
        })
        .collect()
}

/// serde_json appends " at line L column C"; the position is reported
/// separately.
fn strip_position(msg: &str) -> String {
    match msg.rfind(" at line ") {
        Some(i) => msg[..i].to_owned(),
        None => msg.to_owned(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const LINE: &str = r#"{
  "schema_version": 1,
  "name": "pair",
  "nodes": [
    { "social_name": "A", "sim_number": "1000000001" },
    { "social_name": "B", "sim_number": "1000000002" }
  ],
  "events": [
    { "t": 0, "action": "add_edge", "a": "A", "b": "B" },
    { "t": 3, "action": "send", "src": "A", "dst": "B", "text": "hi" }
  ],
  "assertions": [
    { "table_equals": { "node": "A", "table": { "B": "B" } } },
    { "delivered_within": { "src": "A", "dst": "B", "hops": 1 } }
  ]
}"#;

    #[test]
    fn parses_a_clean_file() {
        let s = Scenario::parse(LINE).unwrap();
        assert_eq!(s.nodes.len(), 2);
        assert_eq!(s.config, SimConfig::default());
        assert_eq!(s.events[1].t, 3);
        assert!(matches!(s.events[1].action, Action::Send { .. }));
        assert_eq!(s.assertions[1].label(), "delivered_within(A->B, 1)");
        let ids = s.device_ids();
        assert_eq!(ids["A"].canonical(), "A#1000000001");
    }

    #[test]
    fn round_trips_through_json() {
        let s = Scenario::parse(LINE).unwrap();
        let text = serde_json::to_string_pretty(&s).unwrap();
        assert_eq!(Scenario::parse(&text).unwrap(), s);
    }

    #[test]
    fn syntax_errors_carry_a_position() {
        let err = Scenario::parse("{\n  \"name\": \n}").unwrap_err();
        assert!(matches!(err, ScenarioError::Parse { line: 3, .. }), "{err:?}");
    }

    #[test]
    fn unknown_fields_are_pointed_at() {
        let text = LINE.replace(r#""text": "hi""#, r#""text": "hi", "colour": 1"#);
        let err = Scenario::parse(&text).unwrap_err();
        let v = &err.violations()[0];
        assert_eq!(v.line, Some(10));
        assert!(v.message.contains("colour"), "{v}");
        assert!(v.pointer.starts_with("/events/1"), "{v}");

        let text = LINE.replace(r#""name": "pair","#, r#""name": "pair", "config": { "latency": 2 },"#);
        let err = Scenario::parse(&text).unwrap_err();
        assert!(err.violations()[0].message.contains("latency"));
    }

    #[test]
    fn undeclared_node_is_named() {
        let text = LINE.replace(r#""dst": "B", "text""#, r#""dst": "Z", "text""#);
        let err = Scenario::parse(&text).unwrap_err();
        let v = &err.violations()[0];
        assert_eq!(v.pointer, "/events/1/dst");
        assert!(v.message.contains("\"Z\""));
    }

    #[test]
    fn decreasing_times_are_rejected() {
        let text = LINE.replace(r#""t": 3"#, r#""t": 0"#).replacen(r#""t": 0"#, r#""t": 5"#, 1);
        let err = Scenario::parse(&text).unwrap_err();
        let v = &err.violations()[0];
        assert_eq!(v.pointer, "/events/1/t");
        assert!(v.message.contains("earlier"));
    }

    #[test]
    fn duplicate_names_and_bad_sims() {
        let text = LINE
            .replace(r#""social_name": "B", "sim_number": "1000000002""#, r#""social_name": "A", "sim_number": "12""#);
        let err = Scenario::parse(&text).unwrap_err();
        let pointers: Vec<_> = err.violations().iter().map(|v| v.pointer.as_str()).collect();
        assert!(pointers.contains(&"/nodes/1/sim_number"));
        assert!(pointers.contains(&"/nodes/1/social_name"));
    }

    #[test]
    fn assertion_references_are_checked() {
        let text = LINE.replace(r#"{ "B": "B" }"#, r#"{ "Q": "B" }"#);
        let err = Scenario::parse(&text).unwrap_err();
        assert_eq!(err.violations()[0].pointer, "/assertions/0/table_equals/table/Q");
    }

    #[test]
    fn zero_latency_is_rejected() {
        let text = LINE.replace(r#""name": "pair","#, r#""name": "pair", "config": { "latency_ticks": 0 },"#);
        let err = Scenario::parse(&text).unwrap_err();
        assert_eq!(err.violations()[0].pointer, "/config/latency_ticks");
    }
}
