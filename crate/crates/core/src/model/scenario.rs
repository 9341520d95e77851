use std::collections::BTreeSet;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{
    check_locally_disjoint, LinkDefaults, ModelError, NetworkParams, NodeId, PathInfo, Topology,
    TopologySpec, DEFAULT_SUBQUEUE_PACKETS,
};
use crate::engine::EngineConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSpec {
    pub id: NodeId,
    pub x: f64,
    pub y: f64,
    #[serde(default, skip_serializing_if = "is_false")]
    pub redundant: bool,
    /// Total queue memory in bits; derived from the sub-queue depth when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub queue_bits: Option<u64>,
}

fn is_false(b: &bool) -> bool {
    !*b
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkOverride {
    pub a: NodeId,
    pub b: NodeId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bit_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delay: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceEntry {
    pub id: NodeId,
    pub packets: u64,
    /// Explicit routes, each from this source to the sink. Discovered when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub paths: Option<Vec<Vec<NodeId>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub priority: Option<u8>,
}

/// A scheduled failure, `at` seconds after data transmission starts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub node: Option<NodeId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub link: Option<[NodeId; 2]>,
    pub at: f64,
}

/// Partial parameter block; missing values come from [`NetworkParams::standard`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsBlock {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub e_t: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub e_d: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub e_r: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_1b: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_2b: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_r: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub packet_bits: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_energy: Option<f64>,
}

impl ParamsBlock {
    fn resolve(&self, radio_range: Option<f64>) -> NetworkParams {
        let d = NetworkParams::standard();
        NetworkParams {
            e_t: self.e_t.unwrap_or(d.e_t),
            e_d: self.e_d.unwrap_or(d.e_d),
            k: self.k.unwrap_or(d.k),
            e_r: self.e_r.unwrap_or(d.e_r),
            t_1b: self.t_1b.unwrap_or(d.t_1b),
            t_2b: self.t_2b.unwrap_or(d.t_2b),
            k_r: self.k_r.unwrap_or(d.k_r),
            packet_bits: self.packet_bits.unwrap_or(d.packet_bits),
            radio_range: radio_range.unwrap_or(d.radio_range),
            initial_energy: self.initial_energy.unwrap_or(d.initial_energy),
        }
    }
}

/// On-disk scenario (TOML).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radio_range: Option<f64>,
    pub sink: NodeId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subqueue_packets: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_paths: Option<usize>,
    #[serde(default)]
    pub params: ParamsBlock,
    #[serde(default)]
    pub link_defaults: LinkDefaults,
    #[serde(default)]
    pub engine: EngineConfig,
    pub sources: Vec<SourceEntry>,
    pub nodes: Vec<NodeSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub links: Vec<LinkOverride>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub faults: Vec<FaultSpec>,
}

impl ScenarioFile {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario files always serialize")
    }
}

/// A validated scenario: parameters, built topology, sources and fault schedule.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub params: NetworkParams,
    pub topology: Topology,
    pub sources: Vec<SourceEntry>,
    pub faults: Vec<FaultSpec>,
    pub seed: u64,
    pub max_paths: Option<usize>,
    pub engine: EngineConfig,
    /// Hex SHA-256 of the canonical TOML form.
    pub hash: String,
    pub file: ScenarioFile,
}

impl Scenario {
    pub fn from_toml_str(text: &str) -> Result<Self, ModelError> {
        let file: ScenarioFile =
            toml::from_str(text).map_err(|e| ModelError::Scenario(e.to_string()))?;
        Self::from_file(file)
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ModelError::Scenario(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn from_file(file: ScenarioFile) -> Result<Self, ModelError> {
        let params = file.params.resolve(file.radio_range);
        params.validate()?;
        file.engine.validate().map_err(ModelError::Scenario)?;
        if file.subqueue_packets == Some(0) {
            return Err(ModelError::Scenario("subqueue_packets must be positive".into()));
        }
        if file.max_paths == Some(0) {
            return Err(ModelError::Scenario("max_paths must be positive".into()));
        }

        let mut seen = BTreeSet::new();
        for s in &file.sources {
            if s.id == file.sink {
                return Err(ModelError::Scenario(format!("source {} is the sink", s.id)));
            }
            if !seen.insert(s.id) {
                return Err(ModelError::Scenario(format!("source {} listed twice", s.id)));
            }
        }
        let spec = TopologySpec {
            nodes: file
                .nodes
                .iter()
                .map(|n| (n.id, (n.x, n.y), n.redundant, n.queue_bits))
                .collect(),
            radio_range: params.radio_range,
            link_defaults: file.link_defaults,
            link_overrides: file
                .links
                .iter()
                .map(|l| (l.a, l.b, l.bit_rate, l.delay))
                .collect(),
            sources: file.sources.iter().map(|s| s.id).collect(),
            sink: file.sink,
            packet_bits: params.packet_bits,
            initial_energy: params.initial_energy,
            subqueue_packets: file.subqueue_packets.unwrap_or(DEFAULT_SUBQUEUE_PACKETS),
        };
        if !(spec.link_defaults.bit_rate > 0.0 && spec.link_defaults.delay >= 0.0) {
            return Err(ModelError::InvalidParams(
                "link defaults need bit_rate > 0 and delay >= 0".into(),
            ));
        }
        let topology = Topology::build(&spec)?;
        for s in &file.sources {
            if topology.node(s.id).is_some_and(|n| n.is_redundant) {
                return Err(ModelError::Scenario(format!("source {} is a redundant node", s.id)));
            }
        }
        if topology.node(file.sink).is_some_and(|n| n.is_redundant) {
            return Err(ModelError::Scenario("the sink is a redundant node".into()));
        }

        let scenario = Self {
            name: file.name.clone(),
            params,
            topology,
            sources: file.sources.clone(),
            faults: file.faults.clone(),
            seed: file.seed,
            max_paths: file.max_paths,
            engine: file.engine.clone(),
            hash: hex::encode(Sha256::digest(file.to_toml().as_bytes())),
            file,
        };
        for s in &scenario.sources {
            scenario.explicit_paths(s.id)?;
        }
        for f in &scenario.faults {
            scenario.check_fault(f)?;
        }
        Ok(scenario)
    }

    fn check_fault(&self, f: &FaultSpec) -> Result<(), ModelError> {
        if !(f.at.is_finite() && f.at >= 0.0) {
            return Err(ModelError::Scenario(format!("fault time {} is invalid", f.at)));
        }
        match (f.node, f.link) {
            (Some(n), None) => {
                if !self.topology.contains(n) {
                    return Err(ModelError::UnknownNode(n));
                }
            }
            (None, Some([a, b])) => {
                if !self.topology.is_adjacent(a, b) {
                    return Err(ModelError::Scenario(format!("fault link {a}-{b} does not exist")));
                }
            }
            _ => {
                return Err(ModelError::Scenario(
                    "each fault names exactly one node or one link".into(),
                ))
            }
        }
        Ok(())
    }

    pub fn source(&self, id: NodeId) -> Option<&SourceEntry> {
        self.sources.iter().find(|s| s.id == id)
    }

    /// Validated explicit paths for `source`, or `None` when it relies on discovery.
    pub fn explicit_paths(&self, source: NodeId) -> Result<Option<Vec<PathInfo>>, ModelError> {
        let entry = self.source(source).ok_or(ModelError::UnknownNode(source))?;
        let Some(lists) = &entry.paths else {
            return Ok(None);
        };
        if lists.is_empty() {
            return Err(ModelError::Scenario(format!("source {source} lists no paths")));
        }
        let mut out = Vec::with_capacity(lists.len());
        for seq in lists {
            let p = self.topology.validate_path(seq)?;
            if p.source() != source || p.sink() != self.topology.sink() {
                return Err(ModelError::Scenario(format!(
                    "path of source {source} must run from {source} to sink {}",
                    self.topology.sink()
                )));
            }
            if p.interior().iter().any(|n| {
                self.topology.node(*n).is_some_and(|n| n.is_redundant)
            }) {
                return Err(ModelError::Scenario(format!(
                    "path of source {source} routes through a redundant node"
                )));
            }
            out.push(p);
        }
        check_locally_disjoint(&out)?;
        Ok(Some(out))
    }

    pub fn t_dist(&self, source: NodeId) -> f64 {
        self.topology
            .distance(source, self.topology.sink())
            .unwrap_or(0.0)
    }
}

fn round3(v: f64) -> f64 {
    (v * 1000.0).round() / 1000.0
}

/// `count` nodes placed uniformly on a `width` x `height` field; node 1 is the source and
/// node `count` the sink.
pub fn generate_uniform(
    count: u32,
    width: f64,
    height: f64,
    radius: f64,
    seed: u64,
    packets: u64,
) -> Result<ScenarioFile, ModelError> {
    if count < 2 {
        return Err(ModelError::MissingEndpoints);
    }
    if !(width > 0.0 && height > 0.0 && width.is_finite() && height.is_finite()) {
        return Err(ModelError::InvalidParams("field dimensions must be positive".into()));
    }
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(ModelError::InvalidParams("radius must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nodes = (1..=count)
        .map(|id| NodeSpec {
            id: NodeId(id),
            x: round3(rng.gen_range(0.0..width)),
            y: round3(rng.gen_range(0.0..height)),
            redundant: false,
            queue_bits: None,
        })
        .collect();
    Ok(ScenarioFile {
        name: format!("uniform-{count}-{seed}"),
        seed,
        radio_range: Some(radius),
        sink: NodeId(count),
        subqueue_packets: None,
        max_paths: None,
        params: ParamsBlock::default(),
        link_defaults: LinkDefaults::default(),
        engine: EngineConfig::default(),
        sources: vec![SourceEntry {
            id: NodeId(1),
            packets,
            paths: None,
            priority: None,
        }],
        nodes,
        links: Vec::new(),
        faults: Vec::new(),
    })
}
