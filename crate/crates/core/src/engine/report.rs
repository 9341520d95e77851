use std::fmt::Write as _;

use serde::Serialize;

use crate::model::NodeId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Detection {
    /// The sender exhausted its attempts and a beacon through a third neighbour succeeded.
    SenderRetry,
    /// The receiver heard nothing from its upstream neighbour for `m * tau`.
    ReceiverTimer,
    /// The sender's own beacon failed, so it took itself out of service.
    SelfFailure,
}

impl Detection {
    pub fn as_str(self) -> &'static str {
        match self {
            Detection::SenderRetry => "sender-retry",
            Detection::ReceiverTimer => "receiver-timer",
            Detection::SelfFailure => "self-failure",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FaultRecord {
    /// Node declared faulty.
    pub failed: NodeId,
    pub detector: NodeId,
    pub detection: Detection,
    /// When the matching scheduled fault took effect, if any (s).
    pub injected_at: Option<f64>,
    pub detected_at: f64,
    pub replacement: Option<NodeId>,
    /// Packets discarded because no replacement existed or the node held them.
    pub packets_lost: u64,
}

impl FaultRecord {
    pub fn latency(&self) -> Option<f64> {
        self.injected_at.map(|t| self.detected_at - t)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathMetrics {
    pub index: usize,
    pub nodes: Vec<NodeId>,
    pub hops: u32,
    /// Per-hop latency used for allocation (s).
    pub tau: f64,
    pub quota: u64,
    /// Copies injected on this path.
    pub injected: u64,
    pub delivered: u64,
    /// Last delivery on this path, relative to data start (s).
    pub delivery_time: f64,
    /// Mean per-hop wait before service (s).
    pub queue_delay: f64,
    /// `(time since data start, C_j)` for every choke probe that returned.
    pub contention: Vec<(f64, u32)>,
    pub raw_quota: Option<f64>,
    pub exceeds_bound: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SourceMetrics {
    pub source: NodeId,
    pub packets: u64,
    pub injected: u64,
    /// Copies that reached the sink.
    pub delivered: u64,
    /// Distinct data items that reached the sink.
    pub unique_delivered: u64,
    pub duplicates: u64,
    pub dropped_overflow: u64,
    pub dropped_fault: u64,
    /// Time from data start until every data item has arrived at least once (s).
    pub completion_time: f64,
    /// Energy attributed to this source (J).
    pub energy: f64,
    pub paths: Vec<PathMetrics>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct EnergyBreakdown {
    pub transmit: f64,
    pub receive: f64,
    pub sensing: f64,
    pub idle: f64,
    pub unattributed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunMetrics {
    pub scenario_hash: String,
    pub seed: u64,
    /// Data start; everything before is path setup (s).
    pub t0: f64,
    pub sources: Vec<SourceMetrics>,
    /// Max over sources of the completion time (s).
    pub total_completion_time: f64,
    pub total_energy: f64,
    pub energy: EnergyBreakdown,
    pub initial_energy: f64,
    pub residual_energy: Vec<(NodeId, f64)>,
    pub dropped_overflow: u64,
    pub dropped_fault: u64,
    pub control_dropped: u64,
    pub retransmissions: u64,
    pub faults: Vec<FaultRecord>,
    pub table_refreshes: u32,
    pub events: u64,
    pub end_time: f64,
    #[serde(skip)]
    pub trace: Vec<String>,
}

/// Column order of [`RunMetrics::to_csv`].
pub const CSV_HEADER: &str = "scenario_hash,seed,label,source,path,hops,nodes,tau_s,quota,injected,delivered,dropped_overflow,dropped_fault,path_delivery_s,queue_delay_s,contention,source_completion_s,source_energy_j,total_completion_s,total_energy_j,retransmissions";

pub fn fmt_f(v: f64) -> String {
    format!("{v:.12}")
}

impl RunMetrics {
    pub fn residual_total(&self) -> f64 {
        self.residual_energy.iter().map(|(_, e)| e).sum()
    }

    pub fn injected(&self) -> u64 {
        self.sources.iter().map(|s| s.injected).sum()
    }

    pub fn delivered(&self) -> u64 {
        self.sources.iter().map(|s| s.delivered).sum()
    }

    pub fn source(&self, id: NodeId) -> Option<&SourceMetrics> {
        self.sources.iter().find(|s| s.source == id)
    }

    /// One row per (source, path).
    pub fn csv_rows(&self, label: &str) -> Vec<String> {
        let mut rows = Vec::new();
        for s in &self.sources {
            for p in &s.paths {
                let nodes: Vec<String> = p.nodes.iter().map(|n| n.to_string()).collect();
                let contention = p.contention.last().map(|c| c.1).unwrap_or(0);
                rows.push(format!(
                    "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                    self.scenario_hash,
                    self.seed,
                    label,
                    s.source,
                    p.index,
                    p.hops,
                    nodes.join("-"),
                    fmt_f(p.tau),
                    p.quota,
                    p.injected,
                    p.delivered,
                    s.dropped_overflow,
                    s.dropped_fault,
                    fmt_f(p.delivery_time),
                    fmt_f(p.queue_delay),
                    contention,
                    fmt_f(s.completion_time),
                    fmt_f(s.energy),
                    fmt_f(self.total_completion_time),
                    fmt_f(self.total_energy),
                    self.retransmissions,
                ));
            }
        }
        rows
    }

    pub fn to_csv(&self, label: &str) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in self.csv_rows(label) {
            out.push_str(&r);
            out.push('\n');
        }
        out
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "scenario {}  seed {}", self.scenario_hash, self.seed);
        let _ = writeln!(
            s,
            "data start {:.6} s, completion {:.6} s, energy {:.9} J",
            self.t0, self.total_completion_time, self.total_energy
        );
        let _ = writeln!(
            s,
            "dropped: overflow {} fault {}  retransmissions {}",
            self.dropped_overflow, self.dropped_fault, self.retransmissions
        );
        for src in &self.sources {
            let _ = writeln!(
                s,
                "source {:>4}  delivered {:>6}/{:<6} completion {:>12.6} s  energy {:>12.9} J",
                src.source, src.unique_delivered, src.packets, src.completion_time, src.energy
            );
            for p in &src.paths {
                let nodes: Vec<String> = p.nodes.iter().map(|n| n.to_string()).collect();
                let _ = writeln!(
                    s,
                    "  path {} H={:<3} quota {:>6} delivered {:>6} time {:>12.6} s  [{}]",
                    p.index,
                    p.hops,
                    p.quota,
                    p.delivered,
                    p.delivery_time,
                    nodes.join("-")
                );
            }
        }
        for f in &self.faults {
            let _ = writeln!(
                s,
                "fault: node {} detected by {} via {} at {:.6} s, replacement {}",
                f.failed,
                f.detector,
                f.detection.as_str(),
                f.detected_at,
                f.replacement.map(|d| d.to_string()).unwrap_or_else(|| "none".into())
            );
        }
        s
    }
}
