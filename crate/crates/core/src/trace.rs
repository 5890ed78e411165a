//! Line-oriented trace records.
//!
//! Every line reads `t=<tick> node=<canonical-id> <key>=<value>( <key>=<value>)*`.
//! The first key after `node` names the record kind (`table`, `update`,
//! `data`, ...). Values never contain spaces: scalars are percent-encoded, and
//! lists are comma-joined with each element percent-encoded.
//!
//! | kind          | keys in order                                         |
//! |---------------|-------------------------------------------------------|
//! | topology      | `topology=add_node\|remove_node\|add_edge\|remove_edge\|duplicate_edge [peer]` |
//! | discovery     | `discovery=found\|lost peer`                          |
//! | table         | `table={key:via,...}`                                 |
//! | broadcast     | `broadcast=key_change added removed`                  |
//! | update        | `update=send to seq cause reachable` (cause is `broadcast` or `reply`), `update=recv from seq reply reachable [admitted]`, `update=stale from seq`, `update=rejected from reason` |
//! | drop          | `drop=link_down from msg`                             |
//! | data          | `data=send packet src dst ttl app [tag]`, `data=forward packet next ttl`, `data=deliver packet src dst hops app`, `data=drop packet reason` |
//! | session_event | `session_event=host\|join\|leave\|orphaned session`   |
//! | doc           | `doc=create\|edit\|draft\|apply\|stale\|offer\|offered\|accept\|reject\|shared_with\|rename\|delete\|read id ...` |
//! | error         | `error=<kind> action detail`                          |

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};

use percent_encoding::{percent_decode_str, utf8_percent_encode, AsciiSet, CONTROLS};
use thiserror::Error;

const VALUE_SET: &AsciiSet = &CONTROLS.add(b' ').add(b'%').add(b'=');
const ELEMENT_SET: &AsciiSet = &VALUE_SET.add(b',').add(b':').add(b'{').add(b'}');

pub fn encode_value(v: &str) -> String {
    utf8_percent_encode(v, VALUE_SET).to_string()
}

pub fn encode_element(v: &str) -> String {
    utf8_percent_encode(v, ELEMENT_SET).to_string()
}

pub fn decode(v: &str) -> String {
    percent_decode_str(v).decode_utf8_lossy().into_owned()
}

/// Comma-joined list; `-` stands for the empty list.
pub fn encode_list<I, S>(items: I) -> String
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let joined = items.into_iter().map(|s| encode_element(s.as_ref())).collect::<Vec<_>>().join(",");
    if joined.is_empty() {
        "-".to_owned()
    } else {
        joined
    }
}

pub fn decode_list(v: &str) -> Vec<String> {
    if v == "-" || v.is_empty() {
        return Vec::new();
    }
    v.split(',').map(decode).collect()
}

/// `{key:via,...}` with elements encoded.
pub fn encode_table<'a, I>(entries: I) -> String
where
    I: IntoIterator<Item = (&'a str, &'a str)>,
{
    let mut out = String::from("{");
    for (i, (k, v)) in entries.into_iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        let _ = write!(out, "{}:{}", encode_element(k), encode_element(v));
    }
    out.push('}');
    out
}

pub fn decode_table(v: &str) -> Option<BTreeMap<String, String>> {
    let inner = v.strip_prefix('{')?.strip_suffix('}')?;
    if inner.is_empty() {
        return Some(BTreeMap::new());
    }
    inner.split(',').map(|pair| pair.split_once(':').map(|(k, v)| (decode(k), decode(v)))).collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceLine {
    pub t: u64,
    pub node: String,
    /// Encoded values, in emission order.
    pub fields: Vec<(String, String)>,
}

impl TraceLine {
    pub fn new(t: u64, node: &str) -> Self {
        TraceLine { t, node: encode_value(node), fields: Vec::new() }
    }

    /// Adds a scalar, percent-encoding it.
    pub fn with(mut self, key: &str, value: impl fmt::Display) -> Self {
        self.fields.push((key.to_owned(), encode_value(&value.to_string())));
        self
    }

    /// Adds an already encoded value.
    pub fn with_raw(mut self, key: &str, value: String) -> Self {
        self.fields.push((key.to_owned(), value));
        self
    }

    pub fn kind(&self) -> Option<&str> {
        self.fields.first().map(|(k, _)| k.as_str())
    }

    /// Raw (encoded) value of `key`.
    pub fn raw(&self, key: &str) -> Option<&str> {
        self.fields.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        self.raw(key).map(decode)
    }

    pub fn node(&self) -> String {
        decode(&self.node)
    }
}

impl fmt::Display for TraceLine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "t={} node={}", self.t, self.node)?;
        for (k, v) in &self.fields {
            write!(f, " {k}={v}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TraceError {
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("bad query: {0}")]
    BadQuery(String),
}

pub fn parse_line(line: &str, line_no: usize) -> Result<TraceLine, TraceError> {
    let bad = |reason: &str| TraceError::Malformed { line: line_no, reason: reason.to_owned() };
    let mut parts = line.split(' ');
    let t = parts
        .next()
        .and_then(|p| p.strip_prefix("t="))
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| bad("expected t=<tick>"))?;
    let node = parts.next().and_then(|p| p.strip_prefix("node=")).ok_or_else(|| bad("expected node=<id>"))?.to_owned();
    let fields = parts
        .map(|p| p.split_once('=').map(|(k, v)| (k.to_owned(), v.to_owned())))
        .collect::<Option<Vec<_>>>()
        .ok_or_else(|| bad("expected key=value"))?;
    if fields.is_empty() {
        return Err(bad("record has no payload"));
    }
    Ok(TraceLine { t, node, fields })
}

/// Parses a trace, skipping blank lines and `#` comments.
pub fn parse_trace(text: &str) -> Result<Vec<TraceLine>, TraceError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
        .map(|(i, l)| parse_line(l, i + 1))
        .collect()
}

/// Filter for `pbn inspect`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TraceQuery {
    /// Canonical id or social name.
    pub node: Option<String>,
    pub kind: Option<String>,
    pub from: Option<u64>,
    pub to: Option<u64>,
}

impl TraceQuery {
    pub fn validate(&self) -> Result<(), TraceError> {
        if let (Some(from), Some(to)) = (self.from, self.to) {
            if from > to {
                return Err(TraceError::BadQuery(format!("time range {from}..{to} is empty")));
            }
        }
        if matches!(&self.node, Some(n) if n.is_empty()) {
            return Err(TraceError::BadQuery("empty node name".into()));
        }
        if matches!(&self.kind, Some(k) if k.is_empty()) {
            return Err(TraceError::BadQuery("empty kind".into()));
        }
        Ok(())
    }

    pub fn matches(&self, line: &TraceLine) -> bool {
        if let Some(n) = &self.node {
            let node = line.node();
            let social = node.split_once('#').map_or(node.as_str(), |(s, _)| s);
            if node != *n && social != n {
                return false;
            }
        }
        if let Some(k) = &self.kind {
            if line.kind() != Some(k.as_str()) {
                return false;
            }
        }
        self.from.is_none_or(|from| line.t >= from) && self.to.is_none_or(|to| line.t <= to)
    }
}

/// Returns the matching lines of `text` verbatim, in trace order.
pub fn inspect(text: &str, query: &TraceQuery) -> Result<Vec<String>, TraceError> {
    query.validate()?;
    let mut out = Vec::new();
    for (i, l) in text.lines().enumerate() {
        if l.trim().is_empty() || l.starts_with('#') {
            continue;
        }
        if query.matches(&parse_line(l, i + 1)?) {
            out.push(l.to_owned());
        }
    }
    Ok(out)
}
