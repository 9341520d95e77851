use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use super::{euclidean, Link, LinkStatus, ModelError, Node, NodeId, NodeStatus, PathInfo};

/// Link speed and propagation delay applied to every link unless overridden.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkDefaults {
    /// bits/s
    pub bit_rate: f64,
    /// seconds
    #[serde(default)]
    pub delay: f64,
}

impl Default for LinkDefaults {
    fn default() -> Self {
        Self {
            bit_rate: 50_000.0,
            delay: 0.0,
        }
    }
}

/// Everything needed to build a [`Topology`].
#[derive(Debug, Clone)]
pub struct TopologySpec {
    /// `(id, (x, y), is_redundant, queue_bits)`
    pub nodes: Vec<(NodeId, (f64, f64), bool, Option<u64>)>,
    pub radio_range: f64,
    pub link_defaults: LinkDefaults,
    /// `(a, b, bit_rate, delay)`; `None` keeps the default.
    pub link_overrides: Vec<(NodeId, NodeId, Option<f64>, Option<f64>)>,
    pub sources: Vec<NodeId>,
    pub sink: NodeId,
    pub packet_bits: u64,
    pub initial_energy: f64,
    /// Data sub-queue depth used to size nodes without an explicit memory.
    pub subqueue_packets: u64,
}

/// Unit-disk radio graph with a single sink.
#[derive(Debug, Clone)]
pub struct Topology {
    nodes: Vec<Node>,
    index: BTreeMap<NodeId, usize>,
    adjacency: Vec<Vec<NodeId>>,
    links: BTreeMap<(NodeId, NodeId), Link>,
    radio_range: f64,
    sources: Vec<NodeId>,
    sink: NodeId,
    packet_bits: u64,
}

fn key(a: NodeId, b: NodeId) -> (NodeId, NodeId) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

impl Topology {
    pub fn build(spec: &TopologySpec) -> Result<Self, ModelError> {
        if spec.sources.is_empty() {
            return Err(ModelError::MissingEndpoints);
        }
        if !(spec.radio_range.is_finite() && spec.radio_range > 0.0) {
            return Err(ModelError::InvalidParams(format!(
                "radio range must be positive, got {}",
                spec.radio_range
            )));
        }
        let mut sorted = spec.nodes.clone();
        sorted.sort_by_key(|n| n.0);
        let mut index = BTreeMap::new();
        for (i, (id, pos, _, _)) in sorted.iter().enumerate() {
            if !(pos.0.is_finite() && pos.1.is_finite()) {
                return Err(ModelError::NonFinitePosition { node: *id });
            }
            if index.insert(*id, i).is_some() {
                return Err(ModelError::DuplicateNodeId(*id));
            }
        }
        for id in spec.sources.iter().chain(std::iter::once(&spec.sink)) {
            if !index.contains_key(id) {
                return Err(ModelError::UnknownNode(*id));
            }
        }

        let mut adjacency = vec![Vec::new(); sorted.len()];
        let mut links = BTreeMap::new();
        for i in 0..sorted.len() {
            for j in (i + 1)..sorted.len() {
                if euclidean(sorted[i].1, sorted[j].1) <= spec.radio_range {
                    let (a, b) = (sorted[i].0, sorted[j].0);
                    adjacency[i].push(b);
                    adjacency[j].push(a);
                    links.insert(
                        (a, b),
                        Link {
                            endpoints: (a, b),
                            bit_rate: spec.link_defaults.bit_rate,
                            delay: spec.link_defaults.delay,
                            status: LinkStatus::Up,
                        },
                    );
                }
            }
        }
        for adj in &mut adjacency {
            adj.sort();
        }
        for &(a, b, rate, delay) in &spec.link_overrides {
            let link = links
                .get_mut(&key(a, b))
                .ok_or(ModelError::BadLinkOverride { a, b })?;
            if let Some(r) = rate {
                link.bit_rate = r;
            }
            if let Some(d) = delay {
                link.delay = d;
            }
            if !(link.bit_rate > 0.0 && link.delay >= 0.0) {
                return Err(ModelError::InvalidParams(format!(
                    "link {a}-{b} needs b > 0 and l >= 0"
                )));
            }
        }

        let nodes = sorted
            .iter()
            .enumerate()
            .map(|(i, &(id, position, is_redundant, queue_bits))| {
                let neighbor_count = adjacency[i].len();
                Node {
                    id,
                    position,
                    residual_energy: spec.initial_energy,
                    queue_capacity_bits: queue_bits.unwrap_or(
                        spec.subqueue_packets * neighbor_count.max(1) as u64 * spec.packet_bits,
                    ),
                    neighbor_count,
                    is_redundant,
                    status: NodeStatus::Alive,
                }
            })
            .collect();

        let topo = Self {
            nodes,
            index,
            adjacency,
            links,
            radio_range: spec.radio_range,
            sources: spec.sources.clone(),
            sink: spec.sink,
            packet_bits: spec.packet_bits,
        };
        for &s in &topo.sources {
            if topo.hop_distances(s).get(&topo.sink).is_none() {
                return Err(ModelError::Disconnected {
                    from: s,
                    sink: topo.sink,
                });
            }
        }
        Ok(topo)
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> Option<&Node> {
        self.index.get(&id).map(|&i| &self.nodes[i])
    }

    pub(crate) fn node_mut(&mut self, id: NodeId) -> Option<&mut Node> {
        let i = *self.index.get(&id)?;
        Some(&mut self.nodes[i])
    }

    pub fn contains(&self, id: NodeId) -> bool {
        self.index.contains_key(&id)
    }

    /// Neighbour ids in ascending order.
    pub fn neighbors(&self, id: NodeId) -> &[NodeId] {
        self.index
            .get(&id)
            .map(|&i| self.adjacency[i].as_slice())
            .unwrap_or(&[])
    }

    pub fn neighbor_count(&self, id: NodeId) -> usize {
        self.neighbors(id).len()
    }

    pub fn is_adjacent(&self, a: NodeId, b: NodeId) -> bool {
        self.links.contains_key(&key(a, b))
    }

    pub fn link(&self, a: NodeId, b: NodeId) -> Option<&Link> {
        self.links.get(&key(a, b))
    }

    pub(crate) fn link_mut(&mut self, a: NodeId, b: NodeId) -> Option<&mut Link> {
        self.links.get_mut(&key(a, b))
    }

    pub fn links(&self) -> impl Iterator<Item = &Link> {
        self.links.values()
    }

    pub fn distance(&self, a: NodeId, b: NodeId) -> Option<f64> {
        Some(self.node(a)?.distance_to(self.node(b)?))
    }

    pub fn radio_range(&self) -> f64 {
        self.radio_range
    }

    pub fn sources(&self) -> &[NodeId] {
        &self.sources
    }

    pub fn sink(&self) -> NodeId {
        self.sink
    }

    pub fn packet_bits(&self) -> u64 {
        self.packet_bits
    }

    /// BFS hop distances from `from` over non-redundant nodes.
    pub fn hop_distances(&self, from: NodeId) -> BTreeMap<NodeId, u32> {
        let mut dist = BTreeMap::new();
        let mut queue = VecDeque::new();
        dist.insert(from, 0);
        queue.push_back(from);
        while let Some(u) = queue.pop_front() {
            let d = dist[&u];
            for &v in self.neighbors(u) {
                let usable = self.node(v).is_some_and(|n| !n.is_redundant);
                if usable && !dist.contains_key(&v) {
                    dist.insert(v, d + 1);
                    queue.push_back(v);
                }
            }
        }
        dist
    }

    /// Checks adjacency and distinctness of `sequence` and derives its parameters.
    ///
    /// `tau` is the mean unloaded per-hop latency `S/b + l` over the path's links.
    pub fn validate_path(&self, sequence: &[NodeId]) -> Result<PathInfo, ModelError> {
        if sequence.is_empty() {
            return Err(ModelError::EmptyPath);
        }
        for id in sequence {
            if !self.contains(*id) {
                return Err(ModelError::UnknownNode(*id));
            }
        }
        if sequence.len() < 2 {
            return Err(ModelError::DegeneratePath);
        }
        let mut seen = BTreeSet::new();
        for id in sequence {
            if !seen.insert(*id) {
                return Err(ModelError::DuplicateNode(*id));
            }
        }
        let mut latency = 0.0;
        for (hop, w) in sequence.windows(2).enumerate() {
            let link = self.link(w[0], w[1]).ok_or(ModelError::InvalidHop {
                hop,
                from: w[0],
                to: w[1],
            })?;
            latency += link.service_time(self.packet_bits);
        }
        let hops = (sequence.len() - 1) as u32;
        let t_dist = self
            .distance(sequence[0], *sequence.last().unwrap())
            .expect("endpoints exist");
        Ok(PathInfo {
            nodes: sequence.to_vec(),
            hops,
            tau: latency / hops as f64,
            d_hop: t_dist / hops as f64,
            contention: 0,
            queue_delay: 0.0,
        })
    }

    pub(crate) fn set_node_status(&mut self, id: NodeId, status: NodeStatus) {
        if let Some(n) = self.node_mut(id) {
            n.status = status;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(nodes: &[(u32, f64, f64)], range: f64, sources: &[u32], sink: u32) -> TopologySpec {
        TopologySpec {
            nodes: nodes
                .iter()
                .map(|&(id, x, y)| (NodeId(id), (x, y), false, None))
                .collect(),
            radio_range: range,
            link_defaults: LinkDefaults::default(),
            link_overrides: vec![],
            sources: sources.iter().map(|&s| NodeId(s)).collect(),
            sink: NodeId(sink),
            packet_bits: 1000,
            initial_energy: 1.0,
            subqueue_packets: crate::model::DEFAULT_SUBQUEUE_PACKETS,
        }
    }

    #[test]
    fn pair_within_range_is_linked() {
        let t = Topology::build(&spec(&[(1, 0.0, 0.0), (2, 1.0, 0.0)], 2.4, &[1], 2)).unwrap();
        assert_eq!(t.links().count(), 1);
        assert_eq!(t.neighbor_count(NodeId(1)), 1);
        assert_eq!(t.neighbor_count(NodeId(2)), 1);
        assert_eq!(t.node(NodeId(1)).unwrap().neighbor_count, 1);
        // default memory holds 50 packets per neighbour
        assert_eq!(t.node(NodeId(1)).unwrap().queue_capacity_bits, 50_000);
    }

    #[test]
    fn pair_out_of_range_is_disconnected() {
        let err = Topology::build(&spec(&[(1, 0.0, 0.0), (2, 3.0, 0.0)], 2.4, &[1], 2)).unwrap_err();
        assert_eq!(
            err,
            ModelError::Disconnected {
                from: NodeId(1),
                sink: NodeId(2)
            }
        );
    }

    #[test]
    fn duplicate_ids_and_nan_positions_rejected() {
        let err = Topology::build(&spec(&[(1, 0.0, 0.0), (1, 1.0, 0.0)], 2.4, &[1], 1)).unwrap_err();
        assert_eq!(err, ModelError::DuplicateNodeId(NodeId(1)));
        let err =
            Topology::build(&spec(&[(1, f64::NAN, 0.0), (2, 1.0, 0.0)], 2.4, &[1], 2)).unwrap_err();
        assert_eq!(err, ModelError::NonFinitePosition { node: NodeId(1) });
    }

    #[test]
    fn validate_path_errors() {
        let t = Topology::build(&spec(
            &[(1, 0.0, 0.0), (2, 2.0, 0.0), (3, 4.0, 0.0)],
            2.4,
            &[1],
            3,
        ))
        .unwrap();
        let ids = |v: &[u32]| v.iter().map(|&x| NodeId(x)).collect::<Vec<_>>();
        assert_eq!(t.validate_path(&[]), Err(ModelError::EmptyPath));
        assert_eq!(t.validate_path(&ids(&[1])), Err(ModelError::DegeneratePath));
        assert_eq!(
            t.validate_path(&ids(&[1, 3])),
            Err(ModelError::InvalidHop {
                hop: 0,
                from: NodeId(1),
                to: NodeId(3)
            })
        );
        assert_eq!(
            t.validate_path(&ids(&[1, 2, 1, 2, 3])),
            Err(ModelError::DuplicateNode(NodeId(1)))
        );
        let p = t.validate_path(&ids(&[1, 2, 3])).unwrap();
        assert_eq!(p.hops, 2);
        assert!((p.tau - 0.02).abs() < 1e-15);
        assert!((p.d_hop - 2.0).abs() < 1e-12);
    }

    #[test]
    fn link_override_applies() {
        let mut s = spec(&[(1, 0.0, 0.0), (2, 1.0, 0.0)], 2.4, &[1], 2);
        s.link_overrides.push((NodeId(2), NodeId(1), Some(100_000.0), Some(0.001)));
        let t = Topology::build(&s).unwrap();
        let l = t.link(NodeId(1), NodeId(2)).unwrap();
        assert_eq!(l.bit_rate, 100_000.0);
        assert_eq!(l.delay, 0.001);
        s.link_overrides = vec![(NodeId(1), NodeId(9), None, None)];
        assert!(Topology::build(&s).is_err());
    }
}
