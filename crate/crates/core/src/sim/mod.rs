//! Deterministic discrete-event proximity network.
//!
//! A single event loop owns every node. Neighborhood changes are turned into
//! discovery notifications at the tick they happen; everything sent between
//! nodes arrives `latency_ticks` later, and is lost if the link went down in
//! the meantime. Routing broadcasts triggered during a tick are flushed once
//! at the end of that tick.

mod event;
mod topology;

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};

use serde::Serialize;
use thiserror::Error;

pub use event::{AppMessage, Envelope, EventKind, Message, SimConfig, SimEvent, UserAction};
pub use topology::{Topology, TopologyError};

use crate::identity::{emit_discovery_events, Advertisement, DeviceId, DiscoveryKind};
use crate::mom::{DocId, FileOp, FileOpResult, ListKind, MomError, MomStore, OfferDecision, RealTimeUpdate};
use crate::routing::{DataPacket, ForwardDecision, RouteChange, RoutingError, RoutingTable, RoutingUpdate};
use crate::session::{choose_role, RoleDecision, SessionBook, SessionTransition};
use crate::trace::{encode_list, encode_table, TraceLine};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SimError {
    #[error("max_ticks must be positive")]
    ZeroMaxTicks,
    #[error("event at t={event} scheduled in the past (now t={now})")]
    PastEvent { event: u64, now: u64 },
    #[error("{from} and {to} are not adjacent")]
    NotAdjacent { from: DeviceId, to: DeviceId },
    #[error("event queue still busy at t={}", .0.end_time)]
    NonQuiescent(Box<QuiescenceReport>),
}

/// Per-device state.
#[derive(Debug, Clone)]
pub struct NodeState {
    pub table: RoutingTable,
    pub store: MomStore,
    pub advertisement: Advertisement,
}

impl NodeState {
    fn new(id: DeviceId) -> Self {
        NodeState {
            table: RoutingTable::new(id.clone()),
            store: MomStore::new(id.clone()),
            advertisement: Advertisement::new(id, Advertisement::DEFAULT_OBJECT_PATH, Advertisement::DEFAULT_PORT)
                .expect("default advertisement is valid"),
        }
    }
}

/// Why a routing update was sent.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum UpdateCause {
    /// The sender's key set changed; goes to every neighbor.
    Broadcast,
    /// Repair reply to an update that omitted peers we reach elsewhere.
    Reply,
}

impl UpdateCause {
    fn as_str(self) -> &'static str {
        match self {
            UpdateCause::Broadcast => "broadcast",
            UpdateCause::Reply => "reply",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Delivery {
    pub time: u64,
    pub packet: u64,
    pub src: DeviceId,
    pub dst: DeviceId,
    pub hops: usize,
    pub app: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct Counters {
    pub messages_sent: u64,
    pub messages_delivered: u64,
    pub messages_dropped: u64,
    pub routing_updates: u64,
    pub broadcasts: u64,
    pub repair_replies: u64,
    pub packets_sent: u64,
    pub packets_delivered: u64,
    pub packets_dropped: BTreeMap<String, u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct QuiescenceReport {
    pub quiescent: bool,
    pub ticks_elapsed: u64,
    pub end_time: u64,
    pub in_flight: u64,
    #[serde(flatten)]
    pub counters: Counters,
    pub tables: BTreeMap<String, BTreeMap<String, String>>,
}

pub struct World {
    config: SimConfig,
    topology: Topology,
    nodes: BTreeMap<DeviceId, NodeState>,
    book: SessionBook,
    queue: BinaryHeap<Reverse<SimEvent>>,
    now: u64,
    next_seq: u64,
    next_msg: u64,
    next_packet: u64,
    nodes_seen: usize,
    /// Key set of each node at the first key change in the current tick.
    dirty: BTreeMap<DeviceId, BTreeSet<DeviceId>>,
    replies: BTreeSet<(DeviceId, DeviceId)>,
    autosave_due: BTreeSet<(DeviceId, DocId)>,
    counters: Counters,
    deliveries: Vec<Delivery>,
    trace: Vec<String>,
    record_trace: bool,
    check_invariants: bool,
    violations: Vec<String>,
}

impl World {
    pub fn new(config: SimConfig) -> Self {
        World {
            config,
            topology: Topology::new(),
            nodes: BTreeMap::new(),
            book: SessionBook::new(),
            queue: BinaryHeap::new(),
            now: 0,
            next_seq: 0,
            next_msg: 0,
            next_packet: 0,
            nodes_seen: 0,
            dirty: BTreeMap::new(),
            replies: BTreeSet::new(),
            autosave_due: BTreeSet::new(),
            counters: Counters::default(),
            deliveries: Vec::new(),
            trace: Vec::new(),
            record_trace: true,
            check_invariants: false,
            violations: Vec::new(),
        }
    }

    /// Turns trace recording off, for bulk sweeps.
    pub fn without_trace(mut self) -> Self {
        self.record_trace = false;
        self
    }

    /// Checks routing and session invariants after every event; failures
    /// are collected in [`World::violations`].
    pub fn with_invariant_checks(mut self) -> Self {
        self.check_invariants = true;
        self
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn node(&self, id: &DeviceId) -> Option<&NodeState> {
        self.nodes.get(id)
    }

    pub fn nodes(&self) -> impl Iterator<Item = (&DeviceId, &NodeState)> {
        self.nodes.iter()
    }

    pub fn table(&self, id: &DeviceId) -> Option<&RoutingTable> {
        self.nodes.get(id).map(|n| &n.table)
    }

    pub fn store(&self, id: &DeviceId) -> Option<&MomStore> {
        self.nodes.get(id).map(|n| &n.store)
    }

    pub fn sessions(&self) -> &SessionBook {
        &self.book
    }

    pub fn counters(&self) -> &Counters {
        &self.counters
    }

    pub fn deliveries(&self) -> &[Delivery] {
        &self.deliveries
    }

    pub fn trace(&self) -> &[String] {
        &self.trace
    }

    pub fn trace_text(&self) -> String {
        let mut out = self.trace.join("\n");
        if !out.is_empty() {
            out.push('\n');
        }
        out
    }

    pub fn violations(&self) -> &[String] {
        &self.violations
    }

    pub fn pending_events(&self) -> usize {
        self.queue.len()
    }

    /// Default packet ttl: configured, or the number of nodes ever added.
    pub fn ttl(&self) -> u32 {
        self.config.ttl.unwrap_or(self.nodes_seen.max(1) as u32)
    }

    pub fn schedule(&mut self, time: u64, kind: EventKind) -> Result<(), SimError> {
        if time < self.now {
            return Err(SimError::PastEvent { event: time, now: self.now });
        }
        self.enqueue(time, kind);
        Ok(())
    }

    fn enqueue(&mut self, time: u64, kind: EventKind) {
        self.next_seq += 1;
        self.queue.push(Reverse(SimEvent { time, seq: self.next_seq, kind }));
    }

    fn emit(&mut self, line: TraceLine) {
        if self.record_trace {
            self.trace.push(line.to_string());
        }
    }

    fn line(&self, node: &DeviceId) -> TraceLine {
        TraceLine::new(self.now, node.canonical())
    }

    /// Runs until the queue drains or `max_ticks` ticks have passed.
    pub fn run_until_quiescent(&mut self, max_ticks: u64) -> Result<QuiescenceReport, SimError> {
        if max_ticks == 0 {
            return Err(SimError::ZeroMaxTicks);
        }
        let start = self.now;
        let deadline = start.saturating_add(max_ticks);
        while let Some(Reverse(next)) = self.queue.peek() {
            if next.time > deadline {
                return Err(SimError::NonQuiescent(Box::new(self.report(start, false))));
            }
            self.now = next.time;
            while self.queue.peek().is_some_and(|Reverse(e)| e.time == self.now) {
                let Reverse(event) = self.queue.pop().expect("peeked");
                self.process(event.kind);
                if self.check_invariants {
                    self.audit_invariants();
                }
            }
            self.flush_broadcasts();
        }
        Ok(self.report(start, true))
    }

    fn report(&self, start: u64, quiescent: bool) -> QuiescenceReport {
        let in_flight =
            self.queue.iter().filter(|Reverse(e)| matches!(e.kind, EventKind::MessageArrival(_))).count() as u64;
        QuiescenceReport {
            quiescent,
            ticks_elapsed: self.now - start,
            end_time: self.now,
            in_flight,
            counters: self.counters.clone(),
            tables: self
                .nodes
                .iter()
                .map(|(id, n)| {
                    let t = n.table.entries().iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
                    (id.to_string(), t)
                })
                .collect(),
        }
    }

    fn audit_invariants(&mut self) {
        let require_via = self.config.routing_options().cascade_on_loss;
        let mut found = Vec::new();
        for n in self.nodes.values() {
            if let Err(e) = n.table.check_invariants(require_via) {
                found.push(format!("t={}: {e}", self.now));
            }
        }
        if let Err(e) = self.book.check_invariants() {
            found.push(format!("t={}: {e}", self.now));
        }
        self.violations.extend(found);
    }

    fn process(&mut self, kind: EventKind) {
        match kind {
            EventKind::AddNode(id) => self.add_node(id),
            EventKind::RemoveNode(id) => self.remove_node(&id),
            EventKind::AddEdge(a, b) => self.change_edge(&a, &b, true),
            EventKind::RemoveEdge(a, b) => self.change_edge(&a, &b, false),
            EventKind::UserAction(action) => self.user_action(action),
            EventKind::MessageArrival(env) => self.arrive(env),
            EventKind::AutoSave { node, doc } => self.autosave(&node, &doc),
        }
    }

    fn topology_error(&mut self, at: &DeviceId, action: &str, err: TopologyError) {
        let line = self.line(at).with("error", err.kind()).with("action", action).with("detail", err);
        self.emit(line);
    }

    fn add_node(&mut self, id: DeviceId) {
        if let Err(e) = self.topology.add_node(id.clone()) {
            return self.topology_error(&id, "add_node", e);
        }
        self.nodes_seen += 1;
        self.nodes.insert(id.clone(), NodeState::new(id.clone()));
        let line = self.line(&id).with("topology", "add_node");
        self.emit(line);
        self.emit_table(&id);
    }

    fn remove_node(&mut self, id: &DeviceId) {
        let neighbors = match self.topology.remove_node(id) {
            Ok(n) => n,
            Err(e) => return self.topology_error(id, "remove_node", e),
        };
        let line = self.line(id).with("topology", "remove_node");
        self.emit(line);
        for n in &neighbors {
            let mut old = self.topology.neighbors(n);
            let new = old.clone();
            old.insert(id.clone());
            self.apply_discovery(n, &old, &new);
        }
        if let Some(t) = self.book.depart(id) {
            self.emit_session(&t);
        }
        self.nodes.remove(id);
        self.dirty.remove(id);
    }

    fn change_edge(&mut self, a: &DeviceId, b: &DeviceId, up: bool) {
        let before = [self.topology.neighbors(a), self.topology.neighbors(b)];
        let (result, verb) = if up {
            (self.topology.add_edge(a, b).map(|_| ()), "add_edge")
        } else {
            (self.topology.remove_edge(a, b), "remove_edge")
        };
        match result {
            Ok(()) => {}
            Err(TopologyError::DuplicateEdge(..)) => {
                let line = self.line(a).with("topology", "duplicate_edge").with("peer", b);
                return self.emit(line);
            }
            Err(e) => return self.topology_error(a, verb, e),
        }
        let line = self.line(a).with("topology", verb).with("peer", b);
        self.emit(line);
        let mut ends = [(a, &before[0]), (b, &before[1])];
        ends.sort_by(|x, y| x.0.cmp(y.0));
        for (n, old) in ends {
            let new = self.topology.neighbors(n);
            self.apply_discovery(n, old, &new);
        }
    }

    fn apply_discovery(&mut self, observer: &DeviceId, old: &BTreeSet<DeviceId>, new: &BTreeSet<DeviceId>) {
        let events = match emit_discovery_events(old, new, observer, self.now) {
            Ok(ev) => ev,
            Err(e) => {
                self.violations.push(e.to_string());
                return;
            }
        };
        let cascade = self.config.routing_options().cascade_on_loss;
        for ev in events {
            let line = self.line(observer).with("discovery", ev.kind.as_str()).with("peer", &ev.subject);
            self.emit(line);
            let node = self.nodes.get_mut(observer).expect("observer exists");
            let change = match ev.kind {
                DiscoveryKind::PeerFound => match node.table.handle_peer_found(&ev.subject) {
                    Ok(c) => c,
                    Err(e) => {
                        self.violations.push(e.to_string());
                        continue;
                    }
                },
                DiscoveryKind::PeerLost => node.table.handle_peer_lost(&ev.subject, cascade),
            };
            self.note_change(observer, &change);
        }
    }

    /// Traces a table change and remembers the pre-change key set for the
    /// end-of-tick broadcast decision.
    fn note_change(&mut self, node: &DeviceId, change: &RouteChange) {
        if !change.table_changed {
            return;
        }
        self.emit_table(node);
        if change.broadcast_required && !self.dirty.contains_key(node) {
            let table = &self.nodes[node].table;
            let mut before: BTreeSet<DeviceId> = table.keys().cloned().collect();
            for k in &change.added {
                before.remove(k);
            }
            before.extend(change.removed.iter().cloned());
            self.dirty.insert(node.clone(), before);
        }
    }

    fn emit_table(&mut self, node: &DeviceId) {
        let table = &self.nodes[node].table;
        let snapshot = encode_table(table.entries().iter().map(|(k, v)| (k.canonical(), v.canonical())));
        let line = self.line(node).with_raw("table", snapshot);
        self.emit(line);
    }

    fn flush_broadcasts(&mut self) {
        let dirty = std::mem::take(&mut self.dirty);
        let replies = std::mem::take(&mut self.replies);
        let mut broadcasted = BTreeSet::new();
        for (node, before) in dirty {
            let Some(state) = self.nodes.get(&node) else { continue };
            let now: BTreeSet<DeviceId> = state.table.keys().cloned().collect();
            if now == before {
                continue;
            }
            let added = now.difference(&before).map(DeviceId::canonical);
            let removed = before.difference(&now).map(DeviceId::canonical);
            let line = self
                .line(&node)
                .with("broadcast", "key_change")
                .with_raw("added", encode_list(added))
                .with_raw("removed", encode_list(removed));
            self.emit(line);
            self.counters.broadcasts += 1;
            for neighbor in self.topology.neighbors(&node) {
                self.send_update(&node, &neighbor, UpdateCause::Broadcast);
            }
            broadcasted.insert(node);
        }
        for (node, target) in replies {
            if broadcasted.contains(&node) || !self.nodes.contains_key(&node) {
                continue;
            }
            if self.topology.adjacent(&node, &target) {
                self.counters.repair_replies += 1;
                self.send_update(&node, &target, UpdateCause::Reply);
            }
        }
    }

    fn send_update(&mut self, from: &DeviceId, to: &DeviceId, cause: UpdateCause) {
        let split = self.config.split_horizon;
        let table = &mut self.nodes.get_mut(from).expect("sender exists").table;
        let mut update = table.build_update(split.then_some(to));
        update.reply = cause == UpdateCause::Reply;
        let line = self
            .line(from)
            .with("update", "send")
            .with("to", to)
            .with("seq", update.seq)
            .with("cause", cause.as_str())
            .with_raw("reachable", encode_list(update.reachable.iter().map(DeviceId::canonical)));
        self.emit(line);
        self.counters.routing_updates += 1;
        // Only ever called for current neighbors.
        let _ = self.send_message(from, to, Message::Update(update));
    }

    /// Link-layer unicast to an adjacent node.
    pub fn send_message(&mut self, from: &DeviceId, to: &DeviceId, message: Message) -> Result<(), SimError> {
        let epoch = self
            .topology
            .edge_epoch(from, to)
            .ok_or_else(|| SimError::NotAdjacent { from: from.clone(), to: to.clone() })?;
        self.next_msg += 1;
        let env = Envelope { id: self.next_msg, from: from.clone(), to: to.clone(), epoch, message };
        self.counters.messages_sent += 1;
        let at = self.now + self.config.latency_ticks.max(1);
        self.enqueue(at, EventKind::MessageArrival(env));
        Ok(())
    }

    fn arrive(&mut self, env: Envelope) {
        if self.topology.edge_epoch(&env.from, &env.to) != Some(env.epoch) {
            self.counters.messages_dropped += 1;
            if matches!(env.message, Message::Data(_)) {
                *self.counters.packets_dropped.entry("link_down".into()).or_default() += 1;
            }
            let line = self.line(&env.to).with("drop", "link_down").with("from", &env.from).with("msg", env.id);
            return self.emit(line);
        }
        self.counters.messages_delivered += 1;
        match env.message {
            Message::Update(update) => self.receive_update(&env.to, update),
            Message::Data(packet) => self.handle_packet(&env.to, packet),
        }
    }

    fn receive_update(&mut self, at: &DeviceId, update: RoutingUpdate) {
        let opts = self.config.routing_options();
        let table = &mut self.nodes.get_mut(at).expect("receiver exists").table;
        match table.handle_routing_update(&update, &opts) {
            Ok(out) => {
                let mut line = self
                    .line(at)
                    .with("update", "recv")
                    .with("from", &update.sender)
                    .with("seq", update.seq)
                    .with("reply", u8::from(update.reply))
                    .with_raw("reachable", encode_list(update.reachable.iter().map(DeviceId::canonical)));
                if out.synthesized_discovery {
                    line = line.with("admitted", 1);
                }
                self.emit(line);
                self.note_change(at, &out.change);
                if out.reply_required {
                    self.replies.insert((at.clone(), update.sender.clone()));
                }
            }
            Err(RoutingError::StaleSequence { sender, seq, .. }) => {
                let line = self.line(at).with("update", "stale").with("from", sender).with("seq", seq);
                self.emit(line);
            }
            Err(RoutingError::UnknownSender(sender)) => {
                let line =
                    self.line(at).with("update", "rejected").with("from", sender).with("reason", "unknown_sender");
                self.emit(line);
            }
            Err(e) => self.violations.push(e.to_string()),
        }
    }

    /// Injects a new packet at `src` and returns its id.
    pub fn originate(&mut self, src: &DeviceId, dst: &DeviceId, app: AppMessage) -> u64 {
        self.next_packet += 1;
        let packet = DataPacket::new(self.next_packet, src.clone(), dst.clone(), self.ttl(), app.encode());
        let line = self
            .line(src)
            .with("data", "send")
            .with("packet", packet.id)
            .with("src", src)
            .with("dst", dst)
            .with("ttl", packet.ttl)
            .with("app", app.kind());
        let line = match app {
            AppMessage::Probe { tag } => line.with("tag", tag),
            _ => line,
        };
        self.emit(line);
        self.counters.packets_sent += 1;
        let id = packet.id;
        self.handle_packet(src, packet);
        id
    }

    fn handle_packet(&mut self, at: &DeviceId, mut packet: DataPacket) {
        let opts = self.config.routing_options();
        let decision = self.nodes[at].table.forward(&mut packet, &opts);
        match decision {
            ForwardDecision::DeliverLocally => self.deliver(at, packet),
            ForwardDecision::SendTo(next) => {
                let line = self
                    .line(at)
                    .with("data", "forward")
                    .with("packet", packet.id)
                    .with("next", &next)
                    .with("ttl", packet.ttl);
                self.emit(line);
                let id = packet.id;
                if self.send_message(at, &next, Message::Data(packet)).is_err() {
                    self.drop_packet(at, id, "not_adjacent");
                }
            }
            ForwardDecision::Drop(reason) => self.drop_packet(at, packet.id, reason.as_str()),
        }
    }

    fn drop_packet(&mut self, at: &DeviceId, packet: u64, reason: &str) {
        *self.counters.packets_dropped.entry(reason.to_owned()).or_default() += 1;
        let line = self.line(at).with("data", "drop").with("packet", packet).with("reason", reason);
        self.emit(line);
    }

    fn deliver(&mut self, at: &DeviceId, packet: DataPacket) {
        let app = AppMessage::decode(&packet.payload);
        let kind = app.as_ref().map_or("opaque", AppMessage::kind);
        let line = self
            .line(at)
            .with("data", "deliver")
            .with("packet", packet.id)
            .with("src", &packet.src)
            .with("dst", &packet.dst)
            .with("hops", packet.hops())
            .with("app", kind);
        self.emit(line);
        self.counters.packets_delivered += 1;
        self.deliveries.push(Delivery {
            time: self.now,
            packet: packet.id,
            src: packet.src.clone(),
            dst: packet.dst.clone(),
            hops: packet.hops(),
            app: kind.to_owned(),
        });
        match app {
            Some(AppMessage::JoinRequest) => self.admit_member(at, &packet.src),
            Some(AppMessage::RealTime(update)) => self.apply_live(at, &update),
            Some(AppMessage::Offer(offer)) => {
                let (id, from, title) = (offer.doc_id.clone(), offer.owner.clone(), offer.title.clone());
                match self.store_mut(at).receive_offer(offer) {
                    Ok(()) => {
                        let line =
                            self.line(at).with("doc", "offered").with("id", id).with("from", from).with("title", title);
                        self.emit(line);
                    }
                    Err(e) => self.mom_error(at, "offer", &e),
                }
            }
            Some(AppMessage::Accepted(ack)) => match self.store_mut(at).record_acceptance(&ack) {
                Ok(_) => {
                    let list = self.nodes[at]
                        .store
                        .get(&ack.doc_id)
                        .map(|(_, d)| encode_list(d.shared_with.iter().map(DeviceId::canonical)))
                        .unwrap_or_else(|| "-".into());
                    let line = self.line(at).with("doc", "shared_with").with("id", &ack.doc_id).with_raw("list", list);
                    self.emit(line);
                }
                Err(e) => self.mom_error(at, "accept", &e),
            },
            Some(AppMessage::Text { .. } | AppMessage::Probe { .. }) | None => {}
        }
    }

    fn store_mut(&mut self, id: &DeviceId) -> &mut MomStore {
        &mut self.nodes.get_mut(id).expect("node exists").store
    }

    fn admit_member(&mut self, host: &DeviceId, member: &DeviceId) {
        match self.book.join_session(member, host) {
            Ok(transitions) => {
                for t in &transitions {
                    self.emit_session(t);
                }
                let docs: Vec<RealTimeUpdate> = self.nodes[host].store.my_moms().map(|d| d.realtime_update()).collect();
                for u in docs {
                    self.originate(host, member, AppMessage::RealTime(u));
                }
            }
            Err(e) => {
                let line = self.line(host).with("error", e.kind()).with("action", "join").with("detail", &e);
                self.emit(line);
            }
        }
    }

    fn apply_live(&mut self, at: &DeviceId, update: &RealTimeUpdate) {
        match self.store_mut(at).apply_live(update) {
            Ok(()) => {
                let line = self
                    .line(at)
                    .with("doc", "apply")
                    .with("id", &update.doc_id)
                    .with("rev", update.base_revision)
                    .with("content", &update.new_content);
                self.emit(line);
            }
            Err(MomError::StaleUpdate { .. }) => {
                let line =
                    self.line(at).with("doc", "stale").with("id", &update.doc_id).with("rev", update.base_revision);
                self.emit(line);
            }
            Err(e) => self.mom_error(at, "apply", &e),
        }
    }

    fn emit_session(&mut self, t: &SessionTransition) {
        let lines = match t {
            SessionTransition::Hosted { host, session } => {
                vec![self.line(host).with("session_event", "host").with("session", session)]
            }
            SessionTransition::Joined { node, session, .. } => {
                vec![self.line(node).with("session_event", "join").with("session", session)]
            }
            SessionTransition::Left { node, session, .. } => {
                vec![self.line(node).with("session_event", "leave").with("session", session)]
            }
            SessionTransition::Orphaned { host, session, members } => {
                let mut v = vec![self.line(host).with("session_event", "orphaned").with("session", session)];
                v.extend(members.iter().map(|m| self.line(m).with("session_event", "leave").with("session", session)));
                v
            }
        };
        for l in lines {
            self.emit(l);
        }
        if let SessionTransition::Hosted { host, session } = t {
            if let Some(n) = self.nodes.get_mut(host) {
                n.advertisement.set_hosted_session(Some(session));
            }
        }
        if let SessionTransition::Orphaned { host, .. } = t {
            if let Some(n) = self.nodes.get_mut(host) {
                n.advertisement.set_hosted_session(None);
            }
        }
    }

    fn mom_error(&mut self, at: &DeviceId, action: &str, e: &MomError) {
        let line = self.line(at).with("error", e.kind()).with("action", action).with("detail", e);
        self.emit(line);
    }

    /// Looks a title up in My MoMs first, then Shared MoMs, then live views.
    fn resolve(&self, node: &DeviceId, title: &str) -> Option<DocId> {
        let store = &self.nodes.get(node)?.store;
        store
            .find_by_title(ListKind::MyMoMs, title)
            .or_else(|| store.find_by_title(ListKind::SharedMoMs, title))
            .or_else(|| store.live_views().find(|d| d.title == title))
            .map(|d| d.doc_id.clone())
    }

    fn fan_out(&mut self, scribe: &DeviceId, update: RealTimeUpdate) {
        let members: Vec<DeviceId> =
            self.book.session(scribe).map(|s| s.members.iter().cloned().collect()).unwrap_or_default();
        for m in members {
            self.originate(scribe, &m, AppMessage::RealTime(update.clone()));
        }
    }

    fn emit_edit(&mut self, node: &DeviceId, update: &RealTimeUpdate, autosave: bool) {
        let mut line = self
            .line(node)
            .with("doc", "edit")
            .with("id", &update.doc_id)
            .with("rev", update.base_revision)
            .with("content", &update.new_content);
        if autosave {
            line = line.with("autosave", 1);
        }
        self.emit(line);
    }

    fn autosave(&mut self, node: &DeviceId, doc: &DocId) {
        self.autosave_due.remove(&(node.clone(), doc.clone()));
        if !self.nodes.contains_key(node) {
            return;
        }
        match self.store_mut(node).autosave(doc) {
            Ok(Some(update)) => {
                self.emit_edit(node, &update, true);
                self.fan_out(node, update);
            }
            Ok(None) => {}
            Err(e) => self.mom_error(node, "autosave", &e),
        }
    }

    fn user_action(&mut self, action: UserAction) {
        let actor = action.actor().clone();
        if !self.nodes.contains_key(&actor) {
            let line = self
                .line(&actor)
                .with("error", "unknown_node")
                .with("action", action.name())
                .with("detail", "device is not in the network");
            return self.emit(line);
        }
        let name = action.name();
        let not_found = |title: &str| MomError::NotFound(title.to_owned());
        match action {
            UserAction::Host { node, title } => self.host(&node, &title),
            UserAction::Join { node, peer } => {
                let visible: BTreeSet<DeviceId> = self.nodes[&node].table.keys().cloned().collect();
                match choose_role(&node, &peer, &visible) {
                    Ok(RoleDecision::BecomeScribe) => self.host(&node, "session"),
                    Ok(RoleDecision::JoinAsMember(host)) => {
                        self.originate(&node, &host, AppMessage::JoinRequest);
                    }
                    Err(e) => {
                        let line = self.line(&node).with("error", e.kind()).with("action", name).with("detail", &e);
                        self.emit(line);
                    }
                }
            }
            UserAction::Leave { node } => match self.book.leave_session(&node) {
                Ok(t) => self.emit_session(&t),
                Err(e) => {
                    let line = self.line(&node).with("error", e.kind()).with("action", name).with("detail", &e);
                    self.emit(line);
                }
            },
            UserAction::Create { node, title } => match self.store_mut(&node).create_mom(&title) {
                Ok(id) => {
                    let line = self.line(&node).with("doc", "create").with("id", id).with("title", title);
                    self.emit(line);
                }
                Err(e) => self.mom_error(&node, name, &e),
            },
            UserAction::Edit { node, title, content } => {
                let result = match self.resolve(&node, &title) {
                    Some(doc) => self.store_mut(&node).edit_mom(&doc, &content),
                    None => Err(not_found(&title)),
                };
                match result {
                    Ok(update) => {
                        self.emit_edit(&node, &update, false);
                        self.fan_out(&node, update);
                    }
                    Err(e) => self.mom_error(&node, name, &e),
                }
            }
            UserAction::Draft { node, title, content } => {
                let result = match self.resolve(&node, &title) {
                    Some(doc) => self.store_mut(&node).stage_draft(&doc, &content).map(|_| doc),
                    None => Err(not_found(&title)),
                };
                match result {
                    Ok(doc) => {
                        let line = self.line(&node).with("doc", "draft").with("id", &doc);
                        self.emit(line);
                        if self.autosave_due.insert((node.clone(), doc.clone())) {
                            let at = self.now + self.config.autosave_ticks.max(1);
                            self.enqueue(at, EventKind::AutoSave { node, doc });
                        }
                    }
                    Err(e) => self.mom_error(&node, name, &e),
                }
            }
            UserAction::Share { node, title, to } => {
                let Some(doc) = self.resolve(&node, &title) else {
                    return self.mom_error(&node, name, &not_found(&title));
                };
                let mut recipients = Vec::new();
                for r in to {
                    if self.nodes[&node].table.contains(&r) {
                        recipients.push(r);
                    } else {
                        let line =
                            self.line(&node).with("error", "unknown_recipient").with("action", name).with("detail", &r);
                        self.emit(line);
                    }
                }
                match self.nodes[&node].store.share_mom(&doc, &recipients) {
                    Ok(offers) => {
                        for offer in offers {
                            let line =
                                self.line(&node).with("doc", "offer").with("id", &doc).with("to", &offer.recipient);
                            self.emit(line);
                            let to = offer.recipient.clone();
                            self.originate(&node, &to, AppMessage::Offer(offer));
                        }
                    }
                    Err(e) => self.mom_error(&node, name, &e),
                }
            }
            UserAction::Respond { node, owner, title, decision } => {
                let Some(offer) = self.nodes[&node].store.pending_offer(&owner, &title).cloned() else {
                    return self.mom_error(&node, name, &not_found(&title));
                };
                match self.store_mut(&node).respond_to_offer(&offer, decision) {
                    Ok(ack) => {
                        let verb = match decision {
                            OfferDecision::Accept => "accept",
                            OfferDecision::Reject => "reject",
                        };
                        let line = self.line(&node).with("doc", verb).with("id", &offer.doc_id);
                        self.emit(line);
                        if let Some(ack) = ack {
                            self.originate(&node, &owner, AppMessage::Accepted(ack));
                        }
                    }
                    Err(e) => self.mom_error(&node, name, &e),
                }
            }
            UserAction::Rename { node, title, new_title } => {
                self.file_op(&node, name, &title, FileOp::Rename(new_title.clone()), |l| l.with("title", &new_title))
            }
            UserAction::Delete { node, title } => self.file_op(&node, name, &title, FileOp::Delete, |l| l),
            UserAction::Read { node, title } => self.file_op(&node, name, &title, FileOp::Read, |l| l),
            UserAction::Send { src, dst, text } => {
                self.originate(&src, &dst, AppMessage::Text { text });
            }
            UserAction::Probe { src, dst, tag } => {
                self.originate(&src, &dst, AppMessage::Probe { tag });
            }
        }
    }

    fn host(&mut self, node: &DeviceId, title: &str) {
        match self.book.host_session(node, title) {
            Ok(transitions) => {
                for t in &transitions {
                    self.emit_session(t);
                }
            }
            Err(e) => {
                let line = self.line(node).with("error", e.kind()).with("action", "host").with("detail", &e);
                self.emit(line);
            }
        }
    }

    fn file_op(
        &mut self,
        node: &DeviceId,
        name: &str,
        title: &str,
        op: FileOp,
        extra: impl FnOnce(TraceLine) -> TraceLine,
    ) {
        // Files only: live views are not in either list.
        let store = &self.nodes[node].store;
        let doc = store
            .find_by_title(ListKind::MyMoMs, title)
            .or_else(|| store.find_by_title(ListKind::SharedMoMs, title))
            .map(|d| d.doc_id.clone());
        let Some(doc) = doc else {
            return self.mom_error(node, name, &MomError::NotFound(title.to_owned()));
        };
        match self.store_mut(node).file_operation(&doc, op) {
            Ok(result) => {
                let mut line = self.line(node).with("doc", name).with("id", &doc);
                if let FileOpResult::Content(c) = result {
                    line = line.with("content", c);
                }
                let line = extra(line);
                self.emit(line);
            }
            Err(e) => self.mom_error(node, name, &e),
        }
    }
}
