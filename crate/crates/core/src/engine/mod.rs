//! Deterministic discrete-event simulation of multipath data delivery.
//!
//! A run has two phases. During setup every source probes each of its paths with a
//! hello/reply round trip (and a choke walk when contention-aware), one probe at a
//! time on an otherwise idle network. Data starts when the last probe returns; quotas
//! are computed from the measured latencies at that instant.

mod config;
mod energy;
mod event;
mod queue;
mod report;
mod sim;

use thiserror::Error;

pub use config::{EnergyMode, EngineConfig, Forwarding, QueueDiscipline, SensingScope, ServiceScope};
pub use energy::{Category, EnergyLedger};
pub use event::{from_secs, to_secs, EventKind, SimTime};
pub use queue::{Enqueue, FifoQueue, FragmentedQueue, NodeQueue, NotNeighbor, QItem};
pub use report::{
    fmt_f, Detection, EnergyBreakdown, FaultRecord, PathMetrics, RunMetrics, SourceMetrics,
    CSV_HEADER,
};
pub use sim::Simulation;

use crate::allocator::{AllocError, Scheme};
use crate::discovery::{discover_paths, DiscoveryError};
use crate::model::{ModelError, NodeId, PathInfo, Scenario, DATA_PRIORITY};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EngineError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Discovery(#[from] DiscoveryError),
    #[error(transparent)]
    Allocation(#[from] AllocError),
    #[error("invalid run plan: {0}")]
    Plan(String),
    #[error("node {node} has no link to next hop {next}")]
    Routing { node: NodeId, next: NodeId },
    #[error("no quiescence after {events} events (t = {time:.6} s, {pending} events pending)")]
    Livelock { events: u64, time: f64, pending: usize },
}

/// How a source's quotas are chosen once its paths have been measured.
#[derive(Debug, Clone, PartialEq)]
pub enum QuotaRule {
    Fixed(Vec<u64>),
    Scheme(Scheme),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SourcePlan {
    pub source: NodeId,
    pub packets: u64,
    pub paths: Vec<PathInfo>,
    pub rule: QuotaRule,
    /// Send every packet on every path.
    pub replicate: bool,
    /// Walk each path with a choke packet before allocating and at each `probe_at` time.
    pub choke: bool,
    pub priority: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunPlan {
    pub sources: Vec<SourcePlan>,
    pub config: EngineConfig,
    pub seed: u64,
}

/// Explicit paths from the scenario, or discovered ones.
pub fn source_paths(scenario: &Scenario, source: NodeId) -> Result<Vec<PathInfo>, EngineError> {
    if let Some(p) = scenario.explicit_paths(source)? {
        return Ok(p);
    }
    Ok(discover_paths(
        &scenario.topology,
        source,
        scenario.topology.sink(),
        scenario.max_paths,
    )?)
}

impl RunPlan {
    /// Every scenario source runs `scheme` over its paths with the scenario's engine settings.
    pub fn for_scheme(scenario: &Scenario, scheme: Scheme, choke: bool) -> Result<Self, EngineError> {
        let sources = scenario
            .sources
            .iter()
            .map(|s| {
                Ok(SourcePlan {
                    source: s.id,
                    packets: s.packets,
                    paths: source_paths(scenario, s.id)?,
                    rule: QuotaRule::Scheme(scheme),
                    replicate: false,
                    choke,
                    priority: s.priority.unwrap_or(DATA_PRIORITY),
                })
            })
            .collect::<Result<Vec<_>, EngineError>>()?;
        Ok(Self {
            sources,
            config: scenario.engine.clone(),
            seed: scenario.seed,
        })
    }

    pub fn with_packets(mut self, packets: u64) -> Self {
        for s in &mut self.sources {
            s.packets = packets;
        }
        self
    }
}

/// Runs `plan` on `scenario` to quiescence.
pub fn run(scenario: &Scenario, plan: &RunPlan) -> Result<RunMetrics, EngineError> {
    Simulation::new(scenario, plan)?.run()
}
