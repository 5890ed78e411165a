//! Neighbor-list multi-hop routing.
//!
//! Every node keeps a table `Peer_Name -> Reachable_Via`. An entry `<A, A>` is
//! an immediate neighbor; `<A, B>` with `A != B` means A is reached through the
//! neighbor B. Neighbors exchange only the *keys* of their tables, there is no
//! distance metric and no entry timeout.
//!
//! Table maintenance:
//!
//! * discovery of a peer inserts or overwrites `<P, P>`;
//! * loss of a peer deletes `<P, P>` and every route through it;
//! * an update from neighbor N inserts `<P, N>` for unknown peers, lets the
//!   last received update win for multi-hop peers, and deletes `<A, N>` for
//!   every `A` the update no longer lists.
//!
//! With [`RoutingOptions::sticky_vias`] a multi-hop entry keeps its via until
//! that via stops listing the peer. Letting every update overwrite vias can
//! leave two nodes pointing at each other with no key change left to repair
//! it; keeping vias until withdrawn avoids those loops.
//!
//! A change to the key set is the only thing that triggers a broadcast.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::identity::DeviceId;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RoutingError {
    #[error("node {0} cannot discover itself")]
    SelfDiscovery(DeviceId),
    #[error("update from {0}, which is not an immediate neighbor")]
    UnknownSender(DeviceId),
    #[error("stale update from {sender}: seq {seq} <= last seen {last}")]
    StaleSequence { sender: DeviceId, seq: u64, last: u64 },
    #[error("{0} is unreachable")]
    Unreachable(DeviceId),
    #[error("destination is the table owner")]
    OwnDestination,
}

/// Protocol knobs. [`RoutingOptions::default`] is the hardened protocol;
/// [`RoutingOptions::faithful`] keeps only the literal table rules.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoutingOptions {
    /// Omit, from the update sent to N, keys whose `Reachable_Via` is N.
    pub split_horizon: bool,
    /// On peer loss also drop every route through the lost peer.
    pub cascade_on_loss: bool,
    /// Answer an update that omits peers we can still reach (through someone
    /// other than its sender) with a one-shot unicast update.
    pub repair_replies: bool,
    /// Keep an existing multi-hop via while it still advertises the peer,
    /// instead of letting the last received update win.
    pub sticky_vias: bool,
    /// Reject updates from non-neighbors instead of treating them as discovery.
    pub strict_senders: bool,
    /// Allow forwarding through relays; when off, packets only reach
    /// immediate neighbors.
    pub multi_hop_forwarding: bool,
}

impl Default for RoutingOptions {
    fn default() -> Self {
        RoutingOptions {
            split_horizon: true,
            cascade_on_loss: true,
            repair_replies: true,
            sticky_vias: true,
            strict_senders: false,
            multi_hop_forwarding: true,
        }
    }
}

impl RoutingOptions {
    /// The literal rules: no cascade on loss, no repair replies, and the last
    /// received update always wins.
    pub fn faithful() -> Self {
        RoutingOptions {
            cascade_on_loss: false,
            repair_replies: false,
            sticky_vias: false,
            ..RoutingOptions::default()
        }
    }
}

/// Key-list payload a node sends to its immediate neighbors.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoutingUpdate {
    pub sender: DeviceId,
    /// Sorted, duplicate free, never contains `sender`.
    pub reachable: Vec<DeviceId>,
    pub seq: u64,
    /// Set on repair replies; a reply never solicits another reply.
    #[serde(default)]
    pub reply: bool,
}

/// Side effects of one table operation.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RouteChange {
    pub table_changed: bool,
    pub broadcast_required: bool,
    pub removed: BTreeSet<DeviceId>,
    pub added: BTreeSet<DeviceId>,
}

impl RouteChange {
    fn between(before: &BTreeMap<DeviceId, DeviceId>, after: &BTreeMap<DeviceId, DeviceId>) -> Self {
        let removed: BTreeSet<_> = before.keys().filter(|k| !after.contains_key(*k)).cloned().collect();
        let added: BTreeSet<_> = after.keys().filter(|k| !before.contains_key(*k)).cloned().collect();
        RouteChange {
            table_changed: before != after,
            broadcast_required: !(removed.is_empty() && added.is_empty()),
            removed,
            added,
        }
    }
}

/// Result of feeding an update into a table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UpdateOutcome {
    pub change: RouteChange,
    /// The sender was not a neighbor and was admitted as a discovered peer.
    pub synthesized_discovery: bool,
    /// The sender should get a repair reply.
    pub reply_required: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DropReason {
    TtlExpired,
    LoopDetected,
    NoRoute,
}

impl DropReason {
    pub fn as_str(self) -> &'static str {
        match self {
            DropReason::TtlExpired => "ttl_expired",
            DropReason::LoopDetected => "loop_detected",
            DropReason::NoRoute => "no_route",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ForwardDecision {
    DeliverLocally,
    SendTo(DeviceId),
    Drop(DropReason),
}

/// Application data carried hop by hop.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataPacket {
    pub id: u64,
    pub src: DeviceId,
    pub dst: DeviceId,
    pub ttl: u32,
    pub payload: Vec<u8>,
    /// Nodes that have handled the packet, in order.
    pub trace: Vec<DeviceId>,
}

impl DataPacket {
    pub fn new(id: u64, src: DeviceId, dst: DeviceId, ttl: u32, payload: Vec<u8>) -> Self {
        DataPacket { id, src, dst, ttl, payload, trace: Vec::new() }
    }

    /// Forwarding hops taken so far.
    pub fn hops(&self) -> usize {
        self.trace.len().saturating_sub(1)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoutingTable {
    owner: DeviceId,
    entries: BTreeMap<DeviceId, DeviceId>,
    last_seq_from: BTreeMap<DeviceId, u64>,
    seq: u64,
}

impl RoutingTable {
    pub fn new(owner: DeviceId) -> Self {
        RoutingTable { owner, entries: BTreeMap::new(), last_seq_from: BTreeMap::new(), seq: 0 }
    }

    pub fn owner(&self) -> &DeviceId {
        &self.owner
    }

    pub fn entries(&self) -> &BTreeMap<DeviceId, DeviceId> {
        &self.entries
    }

    pub fn via(&self, peer: &DeviceId) -> Option<&DeviceId> {
        self.entries.get(peer)
    }

    pub fn contains(&self, peer: &DeviceId) -> bool {
        self.entries.contains_key(peer)
    }

    pub fn is_neighbor(&self, peer: &DeviceId) -> bool {
        self.entries.get(peer) == Some(peer)
    }

    pub fn neighbors(&self) -> impl Iterator<Item = &DeviceId> {
        self.entries.iter().filter(|(k, v)| k == v).map(|(k, _)| k)
    }

    pub fn keys(&self) -> impl Iterator<Item = &DeviceId> {
        self.entries.keys()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Applies a peer-found notification.
    pub fn handle_peer_found(&mut self, peer: &DeviceId) -> Result<RouteChange, RoutingError> {
        if *peer == self.owner {
            return Err(RoutingError::SelfDiscovery(peer.clone()));
        }
        let before = self.entries.clone();
        // Direct discovery always supersedes a relayed route.
        self.entries.insert(peer.clone(), peer.clone());
        Ok(RouteChange::between(&before, &self.entries))
    }

    /// Applies a peer-lost notification. Unknown peers are a no-op.
    pub fn handle_peer_lost(&mut self, peer: &DeviceId, cascade: bool) -> RouteChange {
        let before = self.entries.clone();
        self.entries.remove(peer);
        if cascade {
            self.entries.retain(|_, via| via != peer);
        }
        RouteChange::between(&before, &self.entries)
    }

    /// Processes a key-list update received from a neighbor.
    pub fn handle_routing_update(
        &mut self,
        update: &RoutingUpdate,
        opts: &RoutingOptions,
    ) -> Result<UpdateOutcome, RoutingError> {
        let sender = &update.sender;
        if let Some(&last) = self.last_seq_from.get(sender) {
            if update.seq <= last {
                return Err(RoutingError::StaleSequence { sender: sender.clone(), seq: update.seq, last });
            }
        }
        if *sender == self.owner {
            return Err(RoutingError::SelfDiscovery(sender.clone()));
        }
        let before = self.entries.clone();
        let synthesized_discovery = !self.is_neighbor(sender);
        if synthesized_discovery {
            if opts.strict_senders {
                return Err(RoutingError::UnknownSender(sender.clone()));
            }
            self.entries.insert(sender.clone(), sender.clone());
        }
        self.last_seq_from.insert(sender.clone(), update.seq);

        for peer in &update.reachable {
            if *peer == self.owner || peer == sender {
                continue;
            }
            match self.entries.get_mut(peer) {
                None => {
                    self.entries.insert(peer.clone(), sender.clone());
                }
                Some(via) if via == peer || opts.sticky_vias => {}
                Some(via) => *via = sender.clone(),
            }
        }
        let listed: BTreeSet<&DeviceId> = update.reachable.iter().collect();
        self.entries.retain(|peer, via| via != sender || peer == sender || listed.contains(peer));

        let reply_required = opts.repair_replies
            && !update.reply
            && self.entries.iter().any(|(peer, via)| peer != sender && via != sender && !listed.contains(peer));

        Ok(UpdateOutcome {
            change: RouteChange::between(&before, &self.entries),
            synthesized_discovery,
            reply_required,
        })
    }

    /// Builds the next update. With a split-horizon target, keys routed through
    /// that target (other than the target itself) are left out.
    pub fn build_update(&mut self, split_horizon_target: Option<&DeviceId>) -> RoutingUpdate {
        self.seq += 1;
        let reachable = self.advertised_to(split_horizon_target);
        RoutingUpdate { sender: self.owner.clone(), reachable, seq: self.seq, reply: false }
    }

    /// The sorted key list an update for `split_horizon_target` would carry.
    pub fn advertised_to(&self, split_horizon_target: Option<&DeviceId>) -> Vec<DeviceId> {
        self.entries
            .iter()
            .filter(|(peer, via)| match split_horizon_target {
                Some(target) => *via != target || *peer == target,
                None => true,
            })
            .map(|(peer, _)| peer.clone())
            .collect()
    }

    pub fn next_hop(&self, dst: &DeviceId) -> Result<&DeviceId, RoutingError> {
        if *dst == self.owner {
            return Err(RoutingError::OwnDestination);
        }
        self.entries.get(dst).ok_or_else(|| RoutingError::Unreachable(dst.clone()))
    }

    /// Decides what to do with a packet held by this node. On `SendTo` the
    /// packet's ttl is decremented and the owner appended to its trace.
    pub fn forward(&self, packet: &mut DataPacket, opts: &RoutingOptions) -> ForwardDecision {
        if packet.dst == self.owner {
            packet.trace.push(self.owner.clone());
            return ForwardDecision::DeliverLocally;
        }
        if packet.ttl == 0 {
            return ForwardDecision::Drop(DropReason::TtlExpired);
        }
        if packet.trace.contains(&self.owner) {
            return ForwardDecision::Drop(DropReason::LoopDetected);
        }
        let next = match self.next_hop(&packet.dst) {
            Ok(next) if opts.multi_hop_forwarding || *next == packet.dst => next.clone(),
            _ => return ForwardDecision::Drop(DropReason::NoRoute),
        };
        packet.ttl -= 1;
        packet.trace.push(self.owner.clone());
        ForwardDecision::SendTo(next)
    }

    /// Checks the structural invariants: the owner is never a key, and (unless
    /// the literal no-cascade rules are in effect) every via has a self-entry.
    pub fn check_invariants(&self, require_via_self_entry: bool) -> Result<(), String> {
        if self.entries.contains_key(&self.owner) {
            return Err(format!("{} lists itself", self.owner));
        }
        if require_via_self_entry {
            for (peer, via) in &self.entries {
                if !self.is_neighbor(via) {
                    return Err(format!("{}: route <{peer},{via}> through a non-neighbor", self.owner));
                }
            }
        }
        Ok(())
    }

    /// `{key:via,...}` with keys in canonical order.
    pub fn snapshot(&self) -> String {
        format_table(&self.entries)
    }
}

pub fn format_table(entries: &BTreeMap<DeviceId, DeviceId>) -> String {
    let mut out = String::from("{");
    for (i, (peer, via)) in entries.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        let _ = write!(out, "{peer}:{via}");
    }
    out.push('}');
    out
}
