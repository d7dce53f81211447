//! Scenario file schema (JSON) and its conversion into an engine scenario.

use std::path::{Path, PathBuf};

use ftn_core::engine::{Destination, FaultSpec, FaultTarget, Scenario, TrafficSpec, DEFAULT_HORIZON_MS};
use ftn_core::protocol::{FtnParams, Millis, Protocol, DEFAULT_RTO_MS};
use ftn_core::topology::{paper_topology, NodeKind, TopologyBuilder, PAPER_HOSTS_PER_SWITCH};
use ftn_core::wire::Address;
use serde::Deserialize;

use crate::CliError;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    #[serde(default)]
    pub topology: TopologySection,
    pub traffic: Vec<TrafficItem>,
    #[serde(default)]
    pub faults: Vec<FaultItem>,
    #[serde(default = "default_protocol")]
    pub protocol: Protocol,
    #[serde(default)]
    pub params: ParamsSection,
    #[serde(default)]
    pub output: OutputSection,
}

fn default_protocol() -> Protocol {
    Protocol::Ftn
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Paper,
}

/// Either `preset` or both `nodes` and `links`.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologySection {
    pub preset: Option<Preset>,
    pub hosts_per_switch: Option<u8>,
    pub nodes: Option<Vec<NodeItem>>,
    pub links: Option<Vec<LinkItem>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeItem {
    pub name: String,
    pub kind: NodeKind,
    pub address: Address,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkItem {
    pub a: String,
    pub b: String,
    #[serde(default = "default_pd")]
    pub propagation_delay_ms: u64,
    #[serde(default = "default_capacity")]
    pub capacity_bps: u64,
}

fn default_pd() -> u64 {
    50
}

fn default_capacity() -> u64 {
    1_000_000
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrafficItem {
    pub sender: String,
    /// Node name, or a dotted address such as `255.255.255.255`.
    pub destination: String,
    #[serde(default = "default_bits")]
    pub frame_bits: u64,
    #[serde(default = "default_rate")]
    pub frame_rate: u32,
    #[serde(default)]
    pub start_ms: Millis,
    #[serde(default = "default_count")]
    pub count: u32,
}

fn default_bits() -> u64 {
    500
}

fn default_rate() -> u32 {
    100
}

fn default_count() -> u32 {
    1
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultItem {
    pub node: Option<String>,
    pub link: Option<[String; 2]>,
    #[serde(default)]
    pub start_ms: Millis,
    pub duration_ms: Millis,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsSection {
    pub qm_period_ms: Option<Millis>,
    pub buffer_timeout_ms: Option<Millis>,
    pub buffer_capacity_bits: Option<u64>,
    pub retransmit_timeout_ms: Option<Millis>,
    pub switching_delay_ms: Option<Millis>,
    pub ack_enabled: Option<bool>,
    pub horizon_ms: Option<Millis>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    /// Trace CSV destination, relative to the scenario file.
    pub trace: Option<PathBuf>,
    /// Summary JSON destination, relative to the scenario file.
    pub summary: Option<PathBuf>,
}

pub struct Loaded {
    pub scenario: Scenario,
    pub trace: Option<PathBuf>,
    pub summary: Option<PathBuf>,
}

pub fn parse(text: &str) -> Result<ScenarioFile, String> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        if path == "." {
            inner.to_string()
        } else {
            format!("{path}: {inner}")
        }
    })
}

pub fn load(path: &Path) -> Result<Loaded, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Runtime(format!("cannot read {}: {e}", path.display())))?;
    let file = parse(&text).map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let trace = file.output.trace.as_ref().map(|p| base.join(p));
    let summary = file.output.summary.as_ref().map(|p| base.join(p));
    let scenario = build(file).map_err(|v| CliError::Invalid(format!("{}:\n  {}", path.display(), v.join("\n  "))))?;
    Ok(Loaded { scenario, trace, summary })
}

/// Converts a parsed file, collecting every violation.
pub fn build(file: ScenarioFile) -> Result<Scenario, Vec<String>> {
    let topo = &file.topology;
    let topology = match (topo.preset, &topo.nodes, &topo.links) {
        (Some(Preset::Paper), None, None) | (None, None, None) => {
            paper_topology(topo.hosts_per_switch.unwrap_or(PAPER_HOSTS_PER_SWITCH))
        }
        (None, Some(nodes), Some(links)) => {
            if topo.hosts_per_switch.is_some() {
                return Err(vec!["topology.hosts_per_switch: only valid with a preset".into()]);
            }
            let mut b = TopologyBuilder::new();
            for n in nodes {
                b.node(n.name.clone(), n.kind, n.address);
            }
            for l in links {
                b.link(l.a.clone(), l.b.clone(), l.propagation_delay_ms, l.capacity_bps);
            }
            b.build().map_err(|e| vec![format!("topology: {e}")])?
        }
        _ => {
            return Err(vec![
                "topology: give either `preset` or both `nodes` and `links`".into(),
            ])
        }
    };

    let mut errors = Vec::new();
    let traffic = file
        .traffic
        .iter()
        .map(|t| {
            let destination = if topology.by_name(&t.destination).is_some() {
                Destination::Node(t.destination.clone())
            } else {
                match t.destination.parse::<Address>() {
                    Ok(a) => Destination::Address(a),
                    Err(_) => Destination::Node(t.destination.clone()),
                }
            };
            TrafficSpec {
                sender: t.sender.clone(),
                destination,
                frame_bits: t.frame_bits,
                frame_rate: t.frame_rate,
                start_ms: t.start_ms,
                count: t.count,
            }
        })
        .collect();
    let mut faults = Vec::new();
    for (i, f) in file.faults.iter().enumerate() {
        let target = match (&f.node, &f.link) {
            (Some(n), None) => FaultTarget::Node(n.clone()),
            (None, Some([a, b])) => FaultTarget::Link(a.clone(), b.clone()),
            _ => {
                errors.push(format!("faults[{i}]: give exactly one of `node` or `link`"));
                continue;
            }
        };
        faults.push(FaultSpec {
            target,
            start_ms: f.start_ms,
            duration_ms: f.duration_ms,
        });
    }

    let p = &file.params;
    let defaults = FtnParams::default();
    let mut scenario = Scenario::new(topology, file.protocol);
    scenario.traffic = traffic;
    scenario.faults = faults;
    scenario.params = FtnParams {
        qm_period_ms: p.qm_period_ms.unwrap_or(defaults.qm_period_ms),
        buffer_timeout_ms: p.buffer_timeout_ms.unwrap_or(defaults.buffer_timeout_ms),
        buffer_capacity_bits: p.buffer_capacity_bits.unwrap_or(defaults.buffer_capacity_bits),
    };
    scenario.retransmit_timeout_ms = p.retransmit_timeout_ms.unwrap_or(DEFAULT_RTO_MS);
    scenario.switching_delay_ms = p.switching_delay_ms.unwrap_or(0);
    scenario.ack_enabled = p.ack_enabled.unwrap_or(true);
    scenario.horizon_ms = p.horizon_ms.unwrap_or(DEFAULT_HORIZON_MS);

    if let Err(v) = scenario.validate() {
        errors.extend(v.violations);
    }
    if errors.is_empty() {
        Ok(scenario)
    } else {
        Err(errors)
    }
}
