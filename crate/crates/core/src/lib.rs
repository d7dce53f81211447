//! Fault-tolerant hierarchical networking: frame codec, routing, the
//! detection/recovery state machines, a deterministic discrete-event
//! simulator that drives them, and the closed-form traffic and latency
//! models used to size and cross-check it.
//!
//! The calculators in [`traffic`] and [`metrics`] are generic over any
//! [`num::Real`] scalar; the aliases below fix them to `f64`.

pub mod engine;
pub mod metrics;
pub mod num;
pub mod protocol;
pub mod topology;
pub mod traffic;
pub mod wire;

pub use engine::{run, RunOutput, Scenario, Trace};
pub use protocol::{FtnParams, Protocol};
pub use topology::{build_paper_topology, NodeId, Topology};
pub use wire::{Address, Message, MessageKind};

pub type Case1Row = metrics::Case1Row<f64>;
pub type Case2Row = metrics::Case2Row<f64>;
pub type PathModel = metrics::PathModel<f64>;
pub type FtnTiming = metrics::FtnTiming<f64>;
pub type ConventionalTiming = metrics::ConventionalTiming<f64>;
pub type PoissonParams = traffic::PoissonParams<f64>;
pub type Probability = traffic::Probability<f64>;
pub type BufferSpec = traffic::BufferSpec<f64>;
