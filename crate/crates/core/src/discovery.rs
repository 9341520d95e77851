//! Routing-table construction: disjoint paths, RTT-based latency and choke counts.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use thiserror::Error;

use crate::model::{ModelError, NetworkParams, NodeId, NodeStatus, PathInfo, Topology};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiscoveryError {
    #[error("source and sink are both {0}")]
    SameEndpoints(NodeId),
    #[error("node {0} is failed or absent")]
    Unavailable(NodeId),
    #[error("no path from {from} to {sink}")]
    Unreachable { from: NodeId, sink: NodeId },
    #[error("reply received {0} s before the hello was sent")]
    Clock(f64),
    #[error("choke probe hit failed node {0}")]
    ProbeFailed(NodeId),
    #[error(transparent)]
    Model(#[from] ModelError),
}

fn usable(t: &Topology, id: NodeId) -> bool {
    t.node(id)
        .is_some_and(|n| !n.is_redundant && n.status == NodeStatus::Alive)
}

/// Up to `max_paths` interior-disjoint paths, shortest first.
///
/// Each round takes the hop-shortest path whose node-id sequence is lexicographically
/// smallest, then removes its interior nodes (or, for a direct hop, the link itself).
/// Redundant and failed nodes are never used.
pub fn discover_paths(
    topology: &Topology,
    source: NodeId,
    sink: NodeId,
    max_paths: Option<usize>,
) -> Result<Vec<PathInfo>, DiscoveryError> {
    if source == sink {
        return Err(DiscoveryError::SameEndpoints(source));
    }
    for id in [source, sink] {
        if !usable(topology, id) {
            return Err(DiscoveryError::Unavailable(id));
        }
    }
    let degree = topology
        .neighbors(source)
        .iter()
        .filter(|&&n| usable(topology, n))
        .count();
    let limit = max_paths.unwrap_or(usize::MAX).min(degree);

    let mut removed: BTreeSet<NodeId> = BTreeSet::new();
    let mut direct_used = false;
    let mut paths = Vec::new();
    while paths.len() < limit {
        let allowed = |a: NodeId, b: NodeId| {
            usable(topology, b)
                && !removed.contains(&b)
                && !(direct_used && ((a == source && b == sink) || (a == sink && b == source)))
        };
        let Some(seq) = shortest_lexicographic(topology, source, sink, &allowed) else {
            break;
        };
        if seq.len() == 2 {
            direct_used = true;
        }
        removed.extend(seq[1..seq.len() - 1].iter().copied());
        paths.push(topology.validate_path(&seq)?);
    }
    if paths.is_empty() {
        return Err(DiscoveryError::Unreachable { from: source, sink });
    }
    Ok(paths)
}

fn shortest_lexicographic(
    t: &Topology,
    source: NodeId,
    sink: NodeId,
    allowed: &dyn Fn(NodeId, NodeId) -> bool,
) -> Option<Vec<NodeId>> {
    // distances to the sink, then a greedy lowest-id walk from the source
    let mut dist: BTreeMap<NodeId, u32> = BTreeMap::new();
    let mut queue = VecDeque::new();
    dist.insert(sink, 0);
    queue.push_back(sink);
    while let Some(u) = queue.pop_front() {
        let d = dist[&u];
        for &v in t.neighbors(u) {
            if dist.contains_key(&v) || !allowed(u, v) {
                continue;
            }
            dist.insert(v, d + 1);
            if v != source {
                queue.push_back(v);
            }
        }
    }
    let mut remaining = *dist.get(&source)?;
    let mut seq = vec![source];
    let mut cur = source;
    while cur != sink {
        let next = t
            .neighbors(cur)
            .iter()
            .copied()
            .find(|n| dist.get(n) == Some(&(remaining - 1)) && allowed(cur, *n))?;
        seq.push(next);
        cur = next;
        remaining -= 1;
    }
    Some(seq)
}

/// One-way latency from a hello/reply round trip.
pub fn estimate_tau(sent: f64, received: f64) -> Result<f64, DiscoveryError> {
    if received < sent {
        return Err(DiscoveryError::Clock(sent - received));
    }
    Ok((received - sent) / 2.0)
}

/// Per-hop latency of a path of `hops` links from its round trip.
pub fn per_hop_tau(sent: f64, received: f64, hops: u32) -> Result<f64, DiscoveryError> {
    Ok(estimate_tau(sent, received)? / hops.max(1) as f64)
}

/// Read-only view of node queue fullness; `None` marks a failed node.
pub trait QueueOccupancy {
    fn occupancy(&self, node: NodeId) -> Option<f64>;
}

impl QueueOccupancy for BTreeMap<NodeId, f64> {
    fn occupancy(&self, node: NodeId) -> Option<f64> {
        self.get(&node).copied()
    }
}

/// Number of nodes after the source whose occupancy exceeds `threshold`.
pub fn choke_probe(
    path: &PathInfo,
    queues: &dyn QueueOccupancy,
    threshold: f64,
) -> Result<u32, DiscoveryError> {
    let mut count = 0;
    for &n in &path.nodes[1..] {
        let occ = queues.occupancy(n).ok_or(DiscoveryError::ProbeFailed(n))?;
        if occ > threshold {
            count += 1;
        }
    }
    Ok(count)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TopologyEvent {
    /// This node has just joined the network.
    SelfJoin,
    NodeJoined(NodeId),
    NodeFailed(NodeId),
    LinkFailed(NodeId, NodeId),
    /// A link dropped and came back without intervention.
    TransientLinkDrop(NodeId, NodeId),
}

/// Decides when a routing table must be rebuilt. Counters restart after each rebuild.
#[derive(Debug, Clone, Default)]
pub struct RefreshPolicy {
    failures: u32,
    joins: u32,
}

impl RefreshPolicy {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn observe(&mut self, event: TopologyEvent) -> bool {
        let rebuild = match event {
            TopologyEvent::SelfJoin => true,
            TopologyEvent::NodeJoined(_) => {
                self.joins += 1;
                self.joins >= 2
            }
            TopologyEvent::NodeFailed(_) | TopologyEvent::LinkFailed(..) => {
                self.failures += 1;
                self.failures >= 2
            }
            TopologyEvent::TransientLinkDrop(..) => false,
        };
        if rebuild {
            *self = Self::default();
        }
        rebuild
    }
}

/// A source's paths to the sink with the parameters used to allocate over them.
#[derive(Debug, Clone, PartialEq)]
pub struct RoutingTable {
    pub source: NodeId,
    pub sink: NodeId,
    pub paths: Vec<PathInfo>,
    pub params: NetworkParams,
    pub created_at: f64,
    pub stale: bool,
}

impl RoutingTable {
    pub fn new(source: NodeId, sink: NodeId, paths: Vec<PathInfo>, params: NetworkParams, at: f64) -> Self {
        Self {
            source,
            sink,
            paths,
            params,
            created_at: at,
            stale: false,
        }
    }

    /// Applies a probed round trip to path `index`.
    pub fn record_rtt(&mut self, index: usize, sent: f64, received: f64) -> Result<(), DiscoveryError> {
        let p = &mut self.paths[index];
        p.tau = per_hop_tau(sent, received, p.hops)?;
        Ok(())
    }
}
