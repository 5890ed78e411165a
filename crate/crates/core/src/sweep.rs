//! Seeded random-topology batches.
//!
//! A [`GraphCase`] is a node count plus an edge activation order. Running a
//! case brings the edges up in that order on a fresh [`World`], runs to
//! quiescence, and records every table plus the outcome of forward-chaining a
//! packet between every ordered pair of nodes. Checking the results against
//! an oracle is left to the caller.
//!
//! Batches run on the rayon pool when the `parallel` feature is enabled and
//! sequentially otherwise; both entry points are always available when the
//! feature is on so they can be compared.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::identity::{make_device_id, DeviceId};
use crate::routing::{DataPacket, ForwardDecision};
use crate::sim::{EventKind, QuiescenceReport, SimConfig, SimError, World};

pub const MAX_NODES: usize = 8;

/// How edge activations are spread over time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    /// Edge `i` comes up at tick `i`, racing the updates of earlier edges.
    OnePerTick,
    /// Every edge comes up at tick 0.
    AllAtOnce,
    /// Each edge comes up only after the previous one has quiesced.
    Settled,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GraphCase {
    pub seed: u64,
    pub nodes: usize,
    /// Undirected edges by node index, in activation order.
    pub edges: Vec<(usize, usize)>,
    /// Edges taken down, one per tick, once the initial graph has settled.
    pub removals: Vec<(usize, usize)>,
}

impl GraphCase {
    /// Random connected graph: a random spanning tree plus extra edges, with
    /// `2..=max_nodes` nodes.
    pub fn connected(seed: u64, max_nodes: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.gen_range(2..=max_nodes.max(2));
        let mut edges = random_tree_edges(&mut rng, n);
        for a in 0..n {
            for b in a + 1..n {
                if !edges.contains(&(a, b)) && !edges.contains(&(b, a)) && rng.gen_bool(0.3) {
                    edges.push((a, b));
                }
            }
        }
        edges.shuffle(&mut rng);
        GraphCase { seed, nodes: n, edges, removals: Vec::new() }
    }

    /// Random labeled tree with `2..=max_nodes` nodes.
    pub fn tree(seed: u64, max_nodes: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.gen_range(2..=max_nodes.max(2));
        let mut edges = random_tree_edges(&mut rng, n);
        edges.shuffle(&mut rng);
        GraphCase { seed, nodes: n, edges, removals: Vec::new() }
    }

    /// Connected graph that then loses up to `k` random edges, possibly
    /// splitting it.
    pub fn churned(seed: u64, max_nodes: usize, k: usize) -> Self {
        let mut case = GraphCase::connected(seed, max_nodes);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let mut pool = case.edges.clone();
        pool.shuffle(&mut rng);
        let k = rng.gen_range(1..=k.max(1)).min(pool.len());
        case.removals = pool.into_iter().take(k).collect();
        case
    }

    /// Edges present once every removal has happened.
    pub fn final_edges(&self) -> Vec<(usize, usize)> {
        self.edges.iter().copied().filter(|e| !self.removals.contains(e)).collect()
    }

    pub fn ids(&self) -> Vec<DeviceId> {
        node_ids(self.nodes)
    }
}

fn random_tree_edges(rng: &mut ChaCha8Rng, n: usize) -> Vec<(usize, usize)> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    (1..n)
        .map(|i| {
            let parent = order[rng.gen_range(0..i)];
            (parent, order[i])
        })
        .collect()
}

/// `N0#1000000000`, `N1#1000000001`, ...
pub fn node_ids(n: usize) -> Vec<DeviceId> {
    (0..n)
        .map(|i| make_device_id(&format!("N{i}"), &format!("{}", 1_000_000_000 + i as u64)).expect("valid id"))
        .collect()
}

/// Result of forward-chaining one packet over the final tables.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PathOutcome {
    Delivered { hops: usize },
    Dropped { at: usize, reason: String },
}

#[derive(Debug, Clone)]
pub struct CaseOutcome {
    pub case: GraphCase,
    pub report: QuiescenceReport,
    /// Final tables by node index: key index -> via index.
    pub tables: Vec<BTreeMap<usize, usize>>,
    /// `paths[src][dst]`, `None` on the diagonal.
    pub paths: Vec<Vec<Option<PathOutcome>>>,
    pub violations: Vec<String>,
    pub trace: String,
}

impl CaseOutcome {
    pub fn quiescent(&self) -> bool {
        self.report.quiescent
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SweepOptions {
    pub config: SimConfig,
    pub activation: Activation,
    pub max_ticks: u64,
    pub record_trace: bool,
}

impl Default for SweepOptions {
    fn default() -> Self {
        SweepOptions {
            config: SimConfig::default(),
            activation: Activation::OnePerTick,
            max_ticks: 1_000,
            record_trace: true,
        }
    }
}

pub fn run_case(case: &GraphCase, opts: &SweepOptions) -> CaseOutcome {
    let ids = case.ids();
    let mut world = World::new(opts.config).with_invariant_checks();
    if !opts.record_trace {
        world = world.without_trace();
    }
    for id in &ids {
        world.schedule(0, EventKind::AddNode(id.clone())).expect("t=0 is never past");
    }
    let settle = |world: &mut World| match world.run_until_quiescent(opts.max_ticks) {
        Ok(r) => r,
        Err(SimError::NonQuiescent(r)) => *r,
        Err(e) => panic!("sweep setup: {e}"),
    };
    let mut stuck = None;
    for (i, &(a, b)) in case.edges.iter().enumerate() {
        let at = match opts.activation {
            Activation::OnePerTick => i as u64,
            Activation::AllAtOnce => 0,
            Activation::Settled => world.now() + 1,
        };
        world.schedule(at, EventKind::AddEdge(ids[a].clone(), ids[b].clone())).expect("future tick");
        if opts.activation == Activation::Settled {
            let r = settle(&mut world);
            if !r.quiescent {
                stuck = Some(r);
                break;
            }
        }
    }
    let report = match stuck {
        Some(r) => r,
        None => {
            let r = settle(&mut world);
            if r.quiescent && !case.removals.is_empty() {
                // The report then covers the churn phase only.
                let start = world.now() + 1;
                for (i, &(a, b)) in case.removals.iter().enumerate() {
                    world
                        .schedule(start + i as u64, EventKind::RemoveEdge(ids[a].clone(), ids[b].clone()))
                        .expect("future tick");
                }
                settle(&mut world)
            } else {
                r
            }
        }
    };
    let index: BTreeMap<&DeviceId, usize> = ids.iter().enumerate().map(|(i, id)| (id, i)).collect();
    let tables = ids
        .iter()
        .map(|id| {
            world.table(id).map(|t| t.entries().iter().map(|(k, v)| (index[k], index[v])).collect()).unwrap_or_default()
        })
        .collect();
    let paths = (0..ids.len())
        .map(|s| (0..ids.len()).map(|d| (s != d).then(|| chain(&world, &ids, &index, s, d))).collect())
        .collect();
    CaseOutcome {
        case: case.clone(),
        report,
        tables,
        paths,
        violations: world.violations().to_vec(),
        trace: world.trace_text(),
    }
}

/// Walks a packet hop by hop over the current tables, without the simulator.
fn chain(world: &World, ids: &[DeviceId], index: &BTreeMap<&DeviceId, usize>, src: usize, dst: usize) -> PathOutcome {
    let opts = world.config().routing_options();
    let mut packet = DataPacket::new(0, ids[src].clone(), ids[dst].clone(), world.ttl(), Vec::new());
    let mut at = src;
    loop {
        let table = world.table(&ids[at]).expect("node exists");
        match table.forward(&mut packet, &opts) {
            ForwardDecision::DeliverLocally => return PathOutcome::Delivered { hops: packet.hops() },
            ForwardDecision::SendTo(next) => {
                if !world.topology().adjacent(&ids[at], &next) {
                    return PathOutcome::Dropped { at, reason: "not_adjacent".into() };
                }
                at = index[&next];
            }
            ForwardDecision::Drop(r) => return PathOutcome::Dropped { at, reason: r.as_str().into() },
        }
    }
}

pub fn run_batch_sequential(cases: &[GraphCase], opts: &SweepOptions) -> Vec<CaseOutcome> {
    cases.iter().map(|c| run_case(c, opts)).collect()
}

#[cfg(feature = "parallel")]
pub fn run_batch_parallel(cases: &[GraphCase], opts: &SweepOptions) -> Vec<CaseOutcome> {
    use rayon::prelude::*;
    cases.par_iter().map(|c| run_case(c, opts)).collect()
}

/// Runs every case, in parallel when the `parallel` feature is enabled.
/// Output order always matches input order.
pub fn run_batch(cases: &[GraphCase], opts: &SweepOptions) -> Vec<CaseOutcome> {
    #[cfg(feature = "parallel")]
    {
        run_batch_parallel(cases, opts)
    }
    #[cfg(not(feature = "parallel"))]
    {
        run_batch_sequential(cases, opts)
    }
}
