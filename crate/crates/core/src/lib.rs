//! Multi-source adaptive multipath routing for wireless sensor networks.
//!
//! The crate is organised bottom-up:
//!
//! - [`model`]: network parameters, topology, paths, packets and the scenario file format.
//! - [`metrics`]: closed-form per-path delay, energy and energy-delay product.
//! - [`allocator`]: per-path packet quotas (EDP-bounded single source, contention-discounted
//!   multi-source, and the three baseline schemes).
//! - [`discovery`]: node-disjoint path extraction, RTT-based latency estimation, choke probing
//!   and routing-table refresh policy.
//! - [`engine`]: a deterministic discrete-event simulator with fragmented per-neighbour queues,
//!   round-robin dispatch, priority drops, energy accounting and fault recovery.
//! - [`experiments`]: packaged scheme and framework comparisons with CSV/text reports.

pub mod allocator;
pub mod discovery;
pub mod engine;
pub mod experiments;
pub mod metrics;
pub mod model;
pub mod presets;

pub use allocator::{Allocation, AllocationInput, PathParams, Scheme};
pub use engine::{EngineConfig, RunMetrics, SimTime, Simulation};
pub use model::{
    LinkDefaults, NetworkParams, NodeId, PathInfo, Scenario, SourceSpec, Topology,
};
