use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::identity::DeviceId;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TopologyError {
    #[error("unknown node {0}")]
    UnknownNode(DeviceId),
    #[error("node {0} already exists")]
    DuplicateNode(DeviceId),
    #[error("edge {0} -- {1} already exists")]
    DuplicateEdge(DeviceId, DeviceId),
    #[error("no edge {0} -- {1}")]
    MissingEdge(DeviceId, DeviceId),
    #[error("self-loop on {0}")]
    SelfLoop(DeviceId),
}

impl TopologyError {
    pub fn kind(&self) -> &'static str {
        match self {
            TopologyError::UnknownNode(_) => "unknown_node",
            TopologyError::DuplicateNode(_) => "duplicate_node",
            TopologyError::DuplicateEdge(..) => "duplicate_edge",
            TopologyError::MissingEdge(..) => "missing_edge",
            TopologyError::SelfLoop(_) => "self_loop",
        }
    }
}

fn key(a: &DeviceId, b: &DeviceId) -> (DeviceId, DeviceId) {
    if a <= b {
        (a.clone(), b.clone())
    } else {
        (b.clone(), a.clone())
    }
}

/// Undirected proximity graph. Each edge carries the epoch at which it came
/// up, so a message sent over an earlier incarnation of a link can be told
/// apart from one sent after the link flapped.
#[derive(Debug, Clone, Default)]
pub struct Topology {
    nodes: BTreeSet<DeviceId>,
    edges: BTreeMap<(DeviceId, DeviceId), u64>,
    next_epoch: u64,
}

impl Topology {
    pub fn new() -> Self {
        Topology::default()
    }

    pub fn nodes(&self) -> &BTreeSet<DeviceId> {
        &self.nodes
    }

    pub fn edges(&self) -> impl Iterator<Item = (&DeviceId, &DeviceId)> {
        self.edges.keys().map(|(a, b)| (a, b))
    }

    pub fn contains(&self, n: &DeviceId) -> bool {
        self.nodes.contains(n)
    }

    pub fn edge_epoch(&self, a: &DeviceId, b: &DeviceId) -> Option<u64> {
        self.edges.get(&key(a, b)).copied()
    }

    pub fn adjacent(&self, a: &DeviceId, b: &DeviceId) -> bool {
        self.edge_epoch(a, b).is_some()
    }

    pub fn neighbors(&self, n: &DeviceId) -> BTreeSet<DeviceId> {
        self.edges
            .keys()
            .filter_map(|(a, b)| {
                if a == n {
                    Some(b.clone())
                } else if b == n {
                    Some(a.clone())
                } else {
                    None
                }
            })
            .collect()
    }

    pub fn add_node(&mut self, n: DeviceId) -> Result<(), TopologyError> {
        if self.nodes.contains(&n) {
            return Err(TopologyError::DuplicateNode(n));
        }
        self.nodes.insert(n);
        Ok(())
    }

    /// Removes the node and its incident edges, returning the former neighbors.
    pub fn remove_node(&mut self, n: &DeviceId) -> Result<BTreeSet<DeviceId>, TopologyError> {
        if !self.nodes.remove(n) {
            return Err(TopologyError::UnknownNode(n.clone()));
        }
        let neighbors = self.neighbors(n);
        self.edges.retain(|(a, b), _| a != n && b != n);
        Ok(neighbors)
    }

    pub fn add_edge(&mut self, a: &DeviceId, b: &DeviceId) -> Result<u64, TopologyError> {
        self.check_endpoints(a, b)?;
        if self.adjacent(a, b) {
            return Err(TopologyError::DuplicateEdge(a.clone(), b.clone()));
        }
        self.next_epoch += 1;
        self.edges.insert(key(a, b), self.next_epoch);
        Ok(self.next_epoch)
    }

    pub fn remove_edge(&mut self, a: &DeviceId, b: &DeviceId) -> Result<(), TopologyError> {
        self.check_endpoints(a, b)?;
        self.edges.remove(&key(a, b)).map(|_| ()).ok_or_else(|| TopologyError::MissingEdge(a.clone(), b.clone()))
    }

    fn check_endpoints(&self, a: &DeviceId, b: &DeviceId) -> Result<(), TopologyError> {
        if a == b {
            return Err(TopologyError::SelfLoop(a.clone()));
        }
        for n in [a, b] {
            if !self.nodes.contains(n) {
                return Err(TopologyError::UnknownNode(n.clone()));
            }
        }
        Ok(())
    }

    /// Nodes reachable from `from`, excluding `from` itself.
    pub fn component(&self, from: &DeviceId) -> BTreeSet<DeviceId> {
        let mut seen = BTreeSet::from([from.clone()]);
        let mut frontier = vec![from.clone()];
        while let Some(n) = frontier.pop() {
            for m in self.neighbors(&n) {
                if seen.insert(m.clone()) {
                    frontier.push(m);
                }
            }
        }
        seen.remove(from);
        seen
    }
}
