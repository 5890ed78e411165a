//! Scribe/Member session bookkeeping.
//!
//! A device picking its own name from the peer list becomes the Scribe and
//! hosts a session; picking any other peer joins that peer's session. A Member
//! belongs to at most one session, so joining a second one silently leaves
//! the first.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::Serialize;
use thiserror::Error;

use crate::identity::DeviceId;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SessionError {
    #[error("{0} is not in the visible peer list")]
    PeerNotVisible(DeviceId),
    #[error("{0} is not hosting a session")]
    HostNotHosting(DeviceId),
    #[error("{0} is already a member of this session")]
    AlreadyMemberOfSameSession(DeviceId),
    #[error("{0} is not a member of any session")]
    NotInSession(DeviceId),
    #[error("{0} is a scribe and cannot join another session")]
    ScribeCannotJoin(DeviceId),
    #[error("{0} already hosts a session")]
    AlreadyHosting(DeviceId),
    #[error("{0} cannot join its own session")]
    CannotJoinOwnSession(DeviceId),
    #[error("session name is empty")]
    EmptySessionName,
}

impl SessionError {
    pub fn kind(&self) -> &'static str {
        match self {
            SessionError::PeerNotVisible(_) => "peer_not_visible",
            SessionError::HostNotHosting(_) => "host_not_hosting",
            SessionError::AlreadyMemberOfSameSession(_) => "already_member",
            SessionError::NotInSession(_) => "not_in_session",
            SessionError::ScribeCannotJoin(_) => "scribe_cannot_join",
            SessionError::AlreadyHosting(_) => "already_hosting",
            SessionError::CannotJoinOwnSession(_) => "own_session",
            SessionError::EmptySessionName => "empty_session_name",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "role", content = "session", rename_all = "snake_case")]
pub enum Role {
    Idle,
    Scribe(String),
    Member(String),
}

impl Role {
    pub fn label(&self) -> &'static str {
        match self {
            Role::Idle => "idle",
            Role::Scribe(_) => "scribe",
            Role::Member(_) => "member",
        }
    }

    pub fn session(&self) -> Option<&str> {
        match self {
            Role::Idle => None,
            Role::Scribe(s) | Role::Member(s) => Some(s),
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.session() {
            Some(s) => write!(f, "{}({s})", self.label()),
            None => f.write_str(self.label()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RoleDecision {
    BecomeScribe,
    JoinAsMember(DeviceId),
}

/// Maps a selection from the peer list to a role. The device's own name is
/// always visible.
pub fn choose_role(
    node: &DeviceId,
    selected: &DeviceId,
    visible: &BTreeSet<DeviceId>,
) -> Result<RoleDecision, SessionError> {
    if selected == node {
        Ok(RoleDecision::BecomeScribe)
    } else if visible.contains(selected) {
        Ok(RoleDecision::JoinAsMember(selected.clone()))
    } else {
        Err(SessionError::PeerNotVisible(selected.clone()))
    }
}

/// Unique session name: the chosen title suffixed with the host's id.
pub fn session_name(title: &str, host: &DeviceId) -> String {
    format!("{title}@{host}")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SessionState {
    pub host: DeviceId,
    pub session_name: String,
    pub members: BTreeSet<DeviceId>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SessionTransition {
    Hosted { host: DeviceId, session: String },
    Joined { node: DeviceId, host: DeviceId, session: String },
    Left { node: DeviceId, host: DeviceId, session: String },
    Orphaned { host: DeviceId, session: String, members: Vec<DeviceId> },
}

/// All sessions in the network, keyed by hosting device.
#[derive(Debug, Clone, Default)]
pub struct SessionBook {
    sessions: BTreeMap<DeviceId, SessionState>,
    member_of: BTreeMap<DeviceId, DeviceId>,
}

impl SessionBook {
    pub fn new() -> Self {
        SessionBook::default()
    }

    pub fn role(&self, node: &DeviceId) -> Role {
        if let Some(s) = self.sessions.get(node) {
            Role::Scribe(s.session_name.clone())
        } else if let Some(host) = self.member_of.get(node) {
            Role::Member(self.sessions[host].session_name.clone())
        } else {
            Role::Idle
        }
    }

    pub fn session(&self, host: &DeviceId) -> Option<&SessionState> {
        self.sessions.get(host)
    }

    pub fn sessions(&self) -> impl Iterator<Item = &SessionState> {
        self.sessions.values()
    }

    pub fn host_of(&self, member: &DeviceId) -> Option<&DeviceId> {
        self.member_of.get(member)
    }

    pub fn is_hosting(&self, node: &DeviceId) -> bool {
        self.sessions.contains_key(node)
    }

    /// Starts a session. A Member first leaves its current session.
    pub fn host_session(&mut self, host: &DeviceId, title: &str) -> Result<Vec<SessionTransition>, SessionError> {
        if title.is_empty() {
            return Err(SessionError::EmptySessionName);
        }
        if self.is_hosting(host) {
            return Err(SessionError::AlreadyHosting(host.clone()));
        }
        let mut out = Vec::new();
        if self.member_of.contains_key(host) {
            out.push(self.leave_session(host)?);
        }
        let session = session_name(title, host);
        self.sessions.insert(
            host.clone(),
            SessionState { host: host.clone(), session_name: session.clone(), members: BTreeSet::new() },
        );
        out.push(SessionTransition::Hosted { host: host.clone(), session });
        Ok(out)
    }

    pub fn join_session(&mut self, node: &DeviceId, host: &DeviceId) -> Result<Vec<SessionTransition>, SessionError> {
        if node == host {
            return Err(SessionError::CannotJoinOwnSession(node.clone()));
        }
        if !self.is_hosting(host) {
            return Err(SessionError::HostNotHosting(host.clone()));
        }
        if self.is_hosting(node) {
            return Err(SessionError::ScribeCannotJoin(node.clone()));
        }
        let mut out = Vec::new();
        match self.member_of.get(node) {
            Some(current) if current == host => return Err(SessionError::AlreadyMemberOfSameSession(node.clone())),
            Some(_) => out.push(self.leave_session(node)?),
            None => {}
        }
        let session = self.sessions.get_mut(host).expect("checked above");
        session.members.insert(node.clone());
        self.member_of.insert(node.clone(), host.clone());
        out.push(SessionTransition::Joined {
            node: node.clone(),
            host: host.clone(),
            session: session.session_name.clone(),
        });
        Ok(out)
    }

    pub fn leave_session(&mut self, node: &DeviceId) -> Result<SessionTransition, SessionError> {
        let host = self.member_of.remove(node).ok_or_else(|| SessionError::NotInSession(node.clone()))?;
        let session = self.sessions.get_mut(&host).expect("member of a live session");
        session.members.remove(node);
        Ok(SessionTransition::Left { node: node.clone(), host, session: session.session_name.clone() })
    }

    /// Removes a departed device: a Member leaves, a Scribe's session is
    /// orphaned and its members go idle.
    pub fn depart(&mut self, node: &DeviceId) -> Option<SessionTransition> {
        if let Some(session) = self.sessions.remove(node) {
            for m in &session.members {
                self.member_of.remove(m);
            }
            return Some(SessionTransition::Orphaned {
                host: session.host,
                session: session.session_name,
                members: session.members.into_iter().collect(),
            });
        }
        self.leave_session(node).ok()
    }

    pub fn check_invariants(&self) -> Result<(), String> {
        let mut seen: BTreeMap<&DeviceId, usize> = BTreeMap::new();
        for (host, s) in &self.sessions {
            if s.members.contains(host) {
                return Err(format!("{host} is a member of its own session"));
            }
            for m in &s.members {
                *seen.entry(m).or_default() += 1;
                if self.sessions.contains_key(m) {
                    return Err(format!("scribe {m} is also a member of {}", s.session_name));
                }
                if self.member_of.get(m) != Some(host) {
                    return Err(format!("{m} listed by {host} but indexed elsewhere"));
                }
            }
        }
        if let Some((m, n)) = seen.iter().find(|(_, n)| **n > 1) {
            return Err(format!("{m} is a member of {n} sessions"));
        }
        if seen.len() != self.member_of.len() {
            return Err("member index out of sync".into());
        }
        Ok(())
    }
}
