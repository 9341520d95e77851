//! Domain types shared by every other module.

mod scenario;
mod topology;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use scenario::{
    generate_uniform, FaultSpec, LinkOverride, NodeSpec, Scenario, ScenarioFile, SourceEntry,
};
pub use topology::{LinkDefaults, Topology, TopologySpec};

/// Sub-queue depth used when a scenario does not size node memory explicitly.
pub const DEFAULT_SUBQUEUE_PACKETS: u64 = 50;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid network parameter: {0}")]
    InvalidParams(String),
    #[error("node {0} is declared more than once")]
    DuplicateNodeId(NodeId),
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("node {node} has a non-finite position")]
    NonFinitePosition { node: NodeId },
    #[error("a topology needs at least one source and a sink")]
    MissingEndpoints,
    #[error("sink {sink} is unreachable from source {from}")]
    Disconnected { from: NodeId, sink: NodeId },
    #[error("path is empty")]
    EmptyPath,
    #[error("path must contain at least two nodes")]
    DegeneratePath,
    #[error("hop {hop} of the path ({from} -> {to}) is not a topology link")]
    InvalidHop { hop: usize, from: NodeId, to: NodeId },
    #[error("node {0} appears more than once in the path")]
    DuplicateNode(NodeId),
    #[error("paths {first} and {second} share interior node {node}")]
    NotDisjoint { first: usize, second: usize, node: NodeId },
    #[error("link override {a}-{b} does not join two nodes within radio range")]
    BadLinkOverride { a: NodeId, b: NodeId },
    #[error("scenario: {0}")]
    Scenario(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl From<u32> for NodeId {
    fn from(v: u32) -> Self {
        NodeId(v)
    }
}

/// Global energy, radio and timing constants.
///
/// Rates are in J/s, times in seconds, distances in metres and the packet size in bits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NetworkParams {
    /// Transmitter electronics power (J/s).
    pub e_t: f64,
    /// Distance-dependent amplifier coefficient (J/s per m^k).
    pub e_d: f64,
    /// Path-loss exponent.
    pub k: f64,
    /// Receiver power (J/s).
    pub e_r: f64,
    /// Seconds to transmit one bit.
    pub t_1b: f64,
    /// Seconds to receive one bit.
    pub t_2b: f64,
    /// Sensing and processing power per node (W).
    pub k_r: f64,
    /// Data packet size S in bits.
    pub packet_bits: u64,
    /// Maximum inter-node distance for successful communication (m).
    pub radio_range: f64,
    /// Battery energy each node starts with (J).
    pub initial_energy: f64,
}

impl NetworkParams {
    /// MICA2-style constants at 50 kbps: 1024 uW transmit, 819.2 uW receive,
    /// 0.024 W sensing, 1000-bit packets, 2.4 m radio range and 23760 J batteries.
    ///
    /// The amplifier coefficient is not part of that table; 5e-6 J/s/m^2 at 20 us/bit
    /// gives the usual 100 pJ/bit/m^2 free-space amplifier energy.
    pub fn standard() -> Self {
        Self {
            e_t: 1024e-6,
            e_d: 5e-6,
            k: 2.0,
            e_r: 819.2e-6,
            t_1b: 1.0 / 50_000.0,
            t_2b: 1.0 / 50_000.0,
            k_r: 0.024,
            packet_bits: 1000,
            radio_range: 2.4,
            initial_energy: 23_760.0,
        }
    }

    /// Same constants with the multi-source sensing power of 81.2 uW.
    pub fn standard_multisource() -> Self {
        Self {
            k_r: 81.2e-6,
            ..Self::standard()
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let named = [
            ("e_t", self.e_t),
            ("e_d", self.e_d),
            ("k", self.k),
            ("e_r", self.e_r),
            ("t_1b", self.t_1b),
            ("t_2b", self.t_2b),
            ("k_r", self.k_r),
            ("radio_range", self.radio_range),
            ("initial_energy", self.initial_energy),
        ];
        for (name, v) in named {
            if !(v.is_finite() && v > 0.0) {
                return Err(ModelError::InvalidParams(format!(
                    "{name} must be finite and strictly positive, got {v}"
                )));
            }
        }
        if self.packet_bits == 0 {
            return Err(ModelError::InvalidParams("packet_bits must be positive".into()));
        }
        if !(2.0..=4.0).contains(&self.k) {
            return Err(ModelError::InvalidParams(format!(
                "path-loss exponent must lie in [2, 4], got {}",
                self.k
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum NodeStatus {
    #[default]
    Alive,
    Failed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub id: NodeId,
    pub position: (f64, f64),
    pub residual_energy: f64,
    /// Total queue memory M_i in bits.
    pub queue_capacity_bits: u64,
    /// Number of nodes within radio range (N_i).
    pub neighbor_count: usize,
    pub is_redundant: bool,
    pub status: NodeStatus,
}

impl Node {
    pub fn distance_to(&self, other: &Node) -> f64 {
        euclidean(self.position, other.position)
    }
}

pub(crate) fn euclidean(a: (f64, f64), b: (f64, f64)) -> f64 {
    ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum LinkStatus {
    #[default]
    Up,
    Down,
}

/// Undirected radio link; `endpoints.0 < endpoints.1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Link {
    pub endpoints: (NodeId, NodeId),
    /// Link speed b_j in bits/s.
    pub bit_rate: f64,
    /// Propagation delay l_j in seconds.
    pub delay: f64,
    pub status: LinkStatus,
}

impl Link {
    /// Per-packet service time on this link: `bits / b + l`.
    pub fn service_time(&self, bits: u64) -> f64 {
        bits as f64 / self.bit_rate + self.delay
    }
}

/// A validated source-to-sink route and its per-path parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct PathInfo {
    pub nodes: Vec<NodeId>,
    /// Number of links H_j.
    pub hops: u32,
    /// Per-packet per-hop latency tau_j (s).
    pub tau: f64,
    /// Average inter-hop distance T_dist / H_j (m).
    pub d_hop: f64,
    /// Contention-node count C_j from the latest choke probe.
    pub contention: u32,
    /// Average queuing delay per packet per hop q_j (s).
    pub queue_delay: f64,
}

impl PathInfo {
    pub fn source(&self) -> NodeId {
        self.nodes[0]
    }

    pub fn sink(&self) -> NodeId {
        *self.nodes.last().expect("validated path is non-empty")
    }

    pub fn interior(&self) -> &[NodeId] {
        &self.nodes[1..self.nodes.len() - 1]
    }
}

/// Checks that the interior node sets of `paths` are pairwise disjoint.
pub fn check_locally_disjoint(paths: &[PathInfo]) -> Result<(), ModelError> {
    for (i, a) in paths.iter().enumerate() {
        for (j, b) in paths.iter().enumerate().skip(i + 1) {
            if let Some(n) = a.interior().iter().find(|n| b.interior().contains(n)) {
                return Err(ModelError::NotDisjoint {
                    first: i,
                    second: j,
                    node: *n,
                });
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SourceSpec {
    pub source: NodeId,
    /// Packets D to deliver.
    pub packets: u64,
    /// Euclidean source-sink distance (m).
    pub t_dist: f64,
    pub paths: Vec<PathInfo>,
}

impl SourceSpec {
    pub fn h_avg(&self) -> f64 {
        if self.paths.is_empty() {
            return 0.0;
        }
        self.paths.iter().map(|p| p.hops as f64).sum::<f64>() / self.paths.len() as f64
    }

    pub fn tau_avg(&self) -> f64 {
        if self.paths.is_empty() {
            return 0.0;
        }
        self.paths.iter().map(|p| p.tau).sum::<f64>() / self.paths.len() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PacketKind {
    Data,
    Hello,
    Reply,
    Choke,
    Beacon,
}

impl PacketKind {
    pub fn is_control(self) -> bool {
        !matches!(self, PacketKind::Data)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PacketKind::Data => "data",
            PacketKind::Hello => "hello",
            PacketKind::Reply => "reply",
            PacketKind::Choke => "choke",
            PacketKind::Beacon => "beacon",
        }
    }
}

/// Priority carried by every control packet.
pub const CONTROL_PRIORITY: u8 = u8::MAX;
/// Default priority of data packets.
pub const DATA_PRIORITY: u8 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Packet {
    pub kind: PacketKind,
    /// Higher is more urgent.
    pub priority: u8,
    pub source: NodeId,
    pub destination: NodeId,
    pub path_id: usize,
    /// Globally unique, increasing in creation order.
    pub seq: u64,
    pub bits: u64,
}

impl Packet {
    pub fn data(source: NodeId, destination: NodeId, path_id: usize, seq: u64, bits: u64) -> Self {
        Self {
            kind: PacketKind::Data,
            priority: DATA_PRIORITY,
            source,
            destination,
            path_id,
            seq,
            bits,
        }
    }

    pub fn control(
        kind: PacketKind,
        source: NodeId,
        destination: NodeId,
        path_id: usize,
        seq: u64,
        bits: u64,
    ) -> Self {
        debug_assert!(kind.is_control());
        Self {
            kind,
            priority: CONTROL_PRIORITY,
            source,
            destination,
            path_id,
            seq,
            bits,
        }
    }
}
