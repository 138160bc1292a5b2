//! The unit of traffic and signaling traversing links.

use crate::engine::EntityId;
use crate::time::SimTime;

/// Identifies one configured traffic flow within a scenario.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FlowId(pub u32);

/// MPEG-style frame class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum FrameClass {
    I,
    P,
    B,
}

impl FrameClass {
    pub fn as_str(self) -> &'static str {
        match self {
            FrameClass::I => "I",
            FrameClass::P => "P",
            FrameClass::B => "B",
        }
    }
}

/// Ties a video packet back to the frame it fragments.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameRef {
    pub index: u32,
    pub class: FrameClass,
}

/// Signaling vocabulary plus data.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PacketKind {
    Data,
    Rs,
    Ra,
    Pbu,
    Pba,
    AaaQuery,
    AaaReply,
    NdContext,
    NdAck,
    MihEvent,
    Probe,
    Reassoc,
}

impl PacketKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PacketKind::Data => "data",
            PacketKind::Rs => "rs",
            PacketKind::Ra => "ra",
            PacketKind::Pbu => "pbu",
            PacketKind::Pba => "pba",
            PacketKind::AaaQuery => "aaa_query",
            PacketKind::AaaReply => "aaa_reply",
            PacketKind::NdContext => "nd_context",
            PacketKind::NdAck => "nd_ack",
            PacketKind::MihEvent => "mih_event",
            PacketKind::Probe => "probe",
            PacketKind::Reassoc => "reassoc",
        }
    }
}

/// A packet in flight. `via` records every entity that has forwarded it, in
/// traversal order; it only ever grows.
#[derive(Debug, Clone)]
pub struct Packet {
    pub id: u64,
    pub kind: PacketKind,
    pub src: EntityId,
    pub dst: EntityId,
    pub flow: Option<FlowId>,
    pub seq: u64,
    pub size_bytes: u32,
    pub frame: Option<FrameRef>,
    pub created_at: SimTime,
    pub via: Vec<EntityId>,
    /// Set while the packet is inside an LMA-MAG tunnel; adds the tunnel
    /// encapsulation overhead to its on-link serialization size.
    pub tunneled: bool,
    pub retransmit: bool,
    /// Extra detail rendered into the event log (e.g. which MIH notification
    /// an `mih_event` packet carries).
    pub note: &'static str,
    /// Carried MH context on `nd_context` packets.
    pub nd: Option<Box<crate::mih::NdContextMessage>>,
}

impl Packet {
    pub fn prev_hop(&self) -> Option<EntityId> {
        self.via.last().copied()
    }

    /// On-link size in bits: tunneled packets carry the encapsulation
    /// overhead until the tunnel endpoint strips it.
    pub fn wire_bits(&self, tunnel_overhead_bytes: u32) -> u64 {
        let bytes =
            self.size_bytes as u64 + if self.tunneled { tunnel_overhead_bytes as u64 } else { 0 };
        bytes * 8
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::time::SimTime;

    #[test]
    fn tunnel_overhead_applies_only_inside_the_tunnel() {
        let mut e = crate::engine::Engine::<crate::world::Msg>::new();
        let x = e.register_entity("x");
        let mut p = Packet {
            id: 0,
            kind: PacketKind::Data,
            src: x,
            dst: x,
            flow: None,
            seq: 0,
            size_bytes: 1000,
            frame: None,
            created_at: SimTime::ZERO,
            via: Vec::new(),
            tunneled: true,
            retransmit: false,
            note: "",
            nd: None,
        };
        assert_eq!(p.wire_bits(40), 1040 * 8);
        p.tunneled = false;
        assert_eq!(p.wire_bits(40), 1000 * 8);
    }
}
