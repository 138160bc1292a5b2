//! Deterministic packet-level simulator of intra-domain PMIPv6 handover,
//! with a link-layer-trigger-assisted variant (context transfer over
//! neighbor discovery plus downlink buffering), a closed-form latency model
//! used as a verification oracle, and traffic/video quality analytics.

pub mod analytics;
pub mod engine;
pub mod mih;
pub mod packet;
pub mod pmipv6;
pub mod report;
pub mod scenario;
pub mod time;
pub mod topology;
pub mod traffic;
pub mod video;
pub mod world;

pub use analytics::{closed_form, LatencyBudget, LatencyCase, LatencyParams};
pub use engine::{Engine, EntityId, EventHandle, RunSummary, SimError};
pub use packet::{FlowId, FrameClass, Packet, PacketKind};
pub use scenario::{build, load_scenario, Scenario};
pub use time::{SimDuration, SimTime};
pub use world::{Msg, SimWorld, Variant};
