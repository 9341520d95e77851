use serde::{Deserialize, Serialize};

/// When a relay may forward the packets of a path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Forwarding {
    /// Each packet moves on as soon as it has been received.
    #[default]
    Pipelined,
    /// A relay holds a path's packets until the whole block from that source has arrived.
    StoreAndForward,
}

/// What a single transmitter serves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ServiceScope {
    /// One packet at a time per node, round-robin over its outgoing sub-queues.
    #[default]
    Node,
    /// One packet at a time per directed link.
    Link,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum QueueDiscipline {
    /// Per-neighbour data sub-queues plus a reserved control queue.
    #[default]
    Fragmented,
    /// A single shared FIFO with head-of-line blocking and no reserved control space.
    Fifo,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum EnergyMode {
    /// `(e_t + e_d d^k) T_1b` per transmitted bit over the actual hop distance, `e_r T_2b` per received bit.
    #[default]
    PerBit,
    /// `e_t` (sender) and `e_r` (receiver) times the packet's air time.
    PerPacket,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SensingScope {
    /// Every alive node pays `K_r` over the data phase.
    AllNodes,
    /// Only nodes that sent, relayed or received data pay `K_r`.
    #[default]
    Participants,
}

fn default_m() -> u32 {
    10
}
fn default_threshold() -> f64 {
    0.5
}
fn default_admission() -> f64 {
    0.5
}
fn default_max_events() -> u64 {
    50_000_000
}
fn default_true() -> bool {
    true
}

/// Engine knobs. Every field has a default so scenario files may omit the block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EngineConfig {
    #[serde(default)]
    pub forwarding: Forwarding,
    #[serde(default)]
    pub service: ServiceScope,
    #[serde(default)]
    pub queue: QueueDiscipline,
    #[serde(default)]
    pub energy: EnergyMode,
    #[serde(default)]
    pub sensing: SensingScope,
    /// Size of hello/reply/choke/beacon packets; the data size when unset.
    #[serde(default)]
    pub control_bits: Option<u64>,
    /// Independent per-attempt loss probability on every data hop.
    #[serde(default)]
    pub loss_probability: f64,
    /// Consecutive failed attempts before fault handling starts (`m`).
    #[serde(default = "default_m")]
    pub max_attempts: u32,
    /// Occupancy fraction above which a choke packet counts a node.
    #[serde(default = "default_threshold")]
    pub choke_threshold: f64,
    /// A source stops feeding a sub-queue once it is this full.
    #[serde(default = "default_admission")]
    pub admission_fraction: f64,
    /// Seconds after data start at which every source re-probes its paths.
    #[serde(default)]
    pub probe_at: Vec<f64>,
    /// Measure tau with hello/reply before data starts.
    #[serde(default = "default_true")]
    pub setup_probes: bool,
    /// Receiver-side silence timers; `None` enables them only when faults can occur.
    #[serde(default)]
    pub receiver_timers: Option<bool>,
    /// Idle listening power (W) charged over the data phase when set.
    #[serde(default)]
    pub idle_power: Option<f64>,
    #[serde(default = "default_max_events")]
    pub max_events: u64,
    #[serde(default)]
    pub trace: bool,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            forwarding: Forwarding::default(),
            service: ServiceScope::default(),
            queue: QueueDiscipline::default(),
            energy: EnergyMode::default(),
            sensing: SensingScope::default(),
            control_bits: None,
            loss_probability: 0.0,
            max_attempts: default_m(),
            choke_threshold: default_threshold(),
            admission_fraction: default_admission(),
            probe_at: Vec::new(),
            setup_probes: true,
            receiver_timers: None,
            idle_power: None,
            max_events: default_max_events(),
            trace: false,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.max_attempts == 0 {
            return Err("max_attempts must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.loss_probability) {
            return Err(format!(
                "loss_probability must lie in [0, 1), got {}",
                self.loss_probability
            ));
        }
        if !(self.choke_threshold.is_finite() && (0.0..=1.0).contains(&self.choke_threshold)) {
            return Err("choke_threshold must lie in [0, 1]".into());
        }
        if !(self.admission_fraction > 0.0 && self.admission_fraction <= 1.0) {
            return Err("admission_fraction must lie in (0, 1]".into());
        }
        if self.probe_at.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
            return Err("probe_at times must be finite and non-negative".into());
        }
        if let Some(p) = self.idle_power {
            if !(p.is_finite() && p >= 0.0) {
                return Err("idle_power must be finite and non-negative".into());
            }
        }
        if self.control_bits == Some(0) {
            return Err("control_bits must be positive".into());
        }
        Ok(())
    }
}
