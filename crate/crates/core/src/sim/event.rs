use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::identity::DeviceId;
use crate::mom::{Acceptance, DocId, FileOffer, OfferDecision, RealTimeUpdate};
use crate::routing::{DataPacket, RoutingOptions, RoutingUpdate};

/// Simulation parameters. Every field has a default, so `{}` is a valid config.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    /// Ticks between a send and its arrival; at least 1.
    pub latency_ticks: u64,
    /// Hop budget for data packets; `None` means the number of nodes.
    pub ttl: Option<u32>,
    pub split_horizon: bool,
    /// Literal table rules: no cascade on peer loss, no repair replies, and
    /// the last received update picks the via.
    pub faithful_routing: bool,
    pub strict_senders: bool,
    /// Multi-hop forwarding of data packets. Off restricts delivery to
    /// immediate neighbors.
    pub forwarding: bool,
    /// Ticks between the first unsaved keystroke and the auto-save commit.
    pub autosave_ticks: u64,
    /// Seed for scenario generators; the protocol itself never draws.
    pub seed: u64,
    pub max_ticks: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            latency_ticks: 1,
            ttl: None,
            split_horizon: true,
            faithful_routing: false,
            strict_senders: false,
            forwarding: true,
            autosave_ticks: 5,
            seed: 0,
            max_ticks: 10_000,
        }
    }
}

impl SimConfig {
    pub fn routing_options(&self) -> RoutingOptions {
        let base = if self.faithful_routing { RoutingOptions::faithful() } else { RoutingOptions::default() };
        RoutingOptions {
            split_horizon: self.split_horizon,
            strict_senders: self.strict_senders,
            multi_hop_forwarding: self.forwarding,
            ..base
        }
    }
}

/// Something a user does on a device.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum UserAction {
    Host {
        node: DeviceId,
        title: String,
    },
    /// Pick a peer from the list: oneself to become Scribe, anyone else to join.
    Join {
        node: DeviceId,
        peer: DeviceId,
    },
    Leave {
        node: DeviceId,
    },
    Create {
        node: DeviceId,
        title: String,
    },
    Edit {
        node: DeviceId,
        title: String,
        content: String,
    },
    /// Typing without an explicit save; committed by auto-save.
    Draft {
        node: DeviceId,
        title: String,
        content: String,
    },
    Share {
        node: DeviceId,
        title: String,
        to: Vec<DeviceId>,
    },
    Respond {
        node: DeviceId,
        owner: DeviceId,
        title: String,
        decision: OfferDecision,
    },
    Rename {
        node: DeviceId,
        title: String,
        new_title: String,
    },
    Delete {
        node: DeviceId,
        title: String,
    },
    Read {
        node: DeviceId,
        title: String,
    },
    Send {
        src: DeviceId,
        dst: DeviceId,
        text: String,
    },
    Probe {
        src: DeviceId,
        dst: DeviceId,
        tag: u64,
    },
}

impl UserAction {
    pub fn name(&self) -> &'static str {
        match self {
            UserAction::Host { .. } => "host",
            UserAction::Join { .. } => "join",
            UserAction::Leave { .. } => "leave",
            UserAction::Create { .. } => "create",
            UserAction::Edit { .. } => "edit",
            UserAction::Draft { .. } => "draft",
            UserAction::Share { .. } => "share",
            UserAction::Respond { .. } => "respond",
            UserAction::Rename { .. } => "rename",
            UserAction::Delete { .. } => "delete",
            UserAction::Read { .. } => "read",
            UserAction::Send { .. } => "send",
            UserAction::Probe { .. } => "probe",
        }
    }

    pub fn actor(&self) -> &DeviceId {
        match self {
            UserAction::Host { node, .. }
            | UserAction::Join { node, .. }
            | UserAction::Leave { node }
            | UserAction::Create { node, .. }
            | UserAction::Edit { node, .. }
            | UserAction::Draft { node, .. }
            | UserAction::Share { node, .. }
            | UserAction::Respond { node, .. }
            | UserAction::Rename { node, .. }
            | UserAction::Delete { node, .. }
            | UserAction::Read { node, .. } => node,
            UserAction::Send { src, .. } | UserAction::Probe { src, .. } => src,
        }
    }
}

/// Application payload carried inside a [`DataPacket`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "app", rename_all = "snake_case")]
pub enum AppMessage {
    Text { text: String },
    Probe { tag: u64 },
    JoinRequest,
    RealTime(RealTimeUpdate),
    Offer(FileOffer),
    Accepted(Acceptance),
}

impl AppMessage {
    pub fn kind(&self) -> &'static str {
        match self {
            AppMessage::Text { .. } => "text",
            AppMessage::Probe { .. } => "probe",
            AppMessage::JoinRequest => "join",
            AppMessage::RealTime(_) => "realtime",
            AppMessage::Offer(_) => "offer",
            AppMessage::Accepted(_) => "accept",
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("app messages always serialize")
    }

    pub fn decode(bytes: &[u8]) -> Option<Self> {
        serde_json::from_slice(bytes).ok()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Message {
    Update(RoutingUpdate),
    Data(DataPacket),
}

/// One link-layer transmission in flight.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Envelope {
    pub id: u64,
    pub from: DeviceId,
    pub to: DeviceId,
    /// Epoch of the link at send time.
    pub epoch: u64,
    pub message: Message,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EventKind {
    AddNode(DeviceId),
    RemoveNode(DeviceId),
    AddEdge(DeviceId, DeviceId),
    RemoveEdge(DeviceId, DeviceId),
    UserAction(UserAction),
    MessageArrival(Envelope),
    AutoSave { node: DeviceId, doc: DocId },
}

/// Queue entry, ordered by `(time, seq)`; `seq` is assigned at enqueue time
/// so same-tick events run first in, first out.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimEvent {
    pub time: u64,
    pub seq: u64,
    pub kind: EventKind,
}

impl Ord for SimEvent {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.time, self.seq).cmp(&(other.time, other.seq))
    }
}

impl PartialOrd for SimEvent {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
