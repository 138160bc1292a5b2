//! The simulation world: entity state, the message vocabulary, packet
//! forwarding, and per-run accounting. Protocol behavior lives in the
//! `pmipv6` (baseline) and `mih` (trigger-assisted) modules as handler
//! methods on `SimWorld`.

use std::collections::{HashMap, VecDeque};

use crate::analytics::LatencyParams;
use crate::engine::{Engine, EntityId, EventHandle, LogPayload, World};
use crate::packet::{FlowId, FrameRef, Packet, PacketKind};
use crate::pmipv6::{BindingCacheEntry, LmaNode, MagNode, MhNode, MhPhase};
use crate::time::{SimDuration, SimTime};
use crate::topology::{LinkEventKind, LinkId, Network, TxOutcome};
use crate::traffic::{CbrFlowSpec, TcpLiteFlowSpec, TcpLiteReceiver, TcpLiteState};
use crate::video::VideoSchedule;

/// Protocol variant under test.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Pmipv6,
    Pmipv6Mih,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Pmipv6 => "pmipv6",
            Variant::Pmipv6Mih => "pmipv6_mih",
        }
    }
}

/// Where the trigger-assisted variant parks downlink packets during a
/// handover.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BufferAt {
    PMag,
    Lma,
}

/// Everything dispatched through the event queue.
#[derive(Debug, Clone)]
pub enum Msg {
    Deliver(Packet),
    Radio { cell: usize, kind: LinkEventKind },
    Beacon { cell: usize },
    PowerOn,
    ScanDone { cell: usize },
    AuthStart { cell: usize },
    AuthDone { cell: usize },
    ReassocDone { cell: usize },
    AttachNotify { cell: usize },
    LinkUp { cell: usize },
    FlushStart { cell: usize },
    PbuProcessed { mag: usize, mh: EntityId },
    BindingExpired { mh: EntityId },
    ConfigDone,
    DadDone,
    FlowStart { flow: FlowId },
    CbrSend { flow: FlowId, seq: u64 },
    VideoSend { flow: FlowId, pkt: usize },
    TcpRto { flow: FlowId },
}

impl LogPayload for Msg {
    fn kind(&self) -> &'static str {
        match self {
            Msg::Deliver(p) => p.kind.as_str(),
            Msg::Radio { kind, .. } => kind.as_str(),
            Msg::Beacon { .. } => "beacon",
            Msg::PowerOn => "power_on",
            Msg::ScanDone { .. } => "scan_done",
            Msg::AuthStart { .. } => "auth_start",
            Msg::AuthDone { .. } => "auth_done",
            Msg::ReassocDone { .. } => "reassoc_done",
            Msg::AttachNotify { .. } => "attach_notify",
            Msg::LinkUp { .. } => "link_up",
            Msg::FlushStart { .. } => "flush_start",
            Msg::PbuProcessed { .. } => "pbu_processed",
            Msg::BindingExpired { .. } => "binding_expired",
            Msg::ConfigDone => "config_done",
            Msg::DadDone => "dad_done",
            Msg::FlowStart { .. } => "flow_start",
            Msg::CbrSend { .. } => "cbr_send",
            Msg::VideoSend { .. } => "video_send",
            Msg::TcpRto { .. } => "tcp_rto",
        }
    }

    fn detail(&self) -> String {
        match self {
            Msg::Deliver(p) => {
                let mut s = format!("id={} seq={} size={}", p.id, p.seq, p.size_bytes);
                if let Some(f) = p.flow {
                    s.push_str(&format!(" flow={}", f.0));
                }
                if !p.note.is_empty() {
                    s.push_str(&format!(" note={}", p.note));
                }
                s
            }
            Msg::Radio { cell, .. } | Msg::Beacon { cell } => format!("cell={cell}"),
            Msg::ScanDone { cell }
            | Msg::AuthStart { cell }
            | Msg::AuthDone { cell }
            | Msg::ReassocDone { cell }
            | Msg::AttachNotify { cell }
            | Msg::LinkUp { cell }
            | Msg::FlushStart { cell } => format!("cell={cell}"),
            Msg::PbuProcessed { mag, .. } => format!("mag={mag}"),
            Msg::BindingExpired { .. } => String::new(),
            Msg::PowerOn | Msg::ConfigDone | Msg::DadDone => String::new(),
            Msg::FlowStart { flow } => format!("flow={}", flow.0),
            Msg::CbrSend { flow, seq } => format!("flow={} seq={seq}", flow.0),
            Msg::VideoSend { flow, pkt } => format!("flow={} pkt={pkt}", flow.0),
            Msg::TcpRto { flow } => format!("flow={}", flow.0),
        }
    }
}

/// What kind of entity an `EntityId` names.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EntityKind {
    Mh,
    Ap(usize),  // cell index
    Mag(usize), // mag index
    Lma,
    Cn,
    Aaa,
}

/// Static wiring of the scenario: entity ids and the link ids connecting
/// them. Cells are sorted by center along the mobility axis.
#[derive(Debug, Clone)]
pub struct Wiring {
    pub mh: EntityId,
    pub cn: EntityId,
    pub lma: EntityId,
    pub aaa: EntityId,
    pub ap_entity: Vec<EntityId>,  // per cell
    pub mag_entity: Vec<EntityId>, // per mag
    pub mag_of_cell: Vec<usize>,
    pub link_cn_lma: LinkId,
    pub link_lma_mag: Vec<LinkId>, // per mag
    pub link_mag_ap: Vec<LinkId>,  // per cell
    pub link_mag_aaa: Vec<LinkId>, // per mag
    /// Context-transfer path between the MAGs of consecutive cells;
    /// `ctx_link[i]` connects the MAGs serving cells `i` and `i+1`.
    pub ctx_link: Vec<LinkId>,
    pub kinds: Vec<EntityKind>,
}

impl Wiring {
    pub fn kind_of(&self, id: EntityId) -> EntityKind {
        self.kinds[id.index()]
    }

    /// First cell served by this MAG.
    pub fn default_cell_of_mag(&self, mag: usize) -> usize {
        self.mag_of_cell
            .iter()
            .position(|m| *m == mag)
            .expect("every MAG serves at least one cell")
    }
}

/// Fixed per-run knobs shared by all handlers.
#[derive(Debug, Clone)]
pub struct WorldConfig {
    pub variant: Variant,
    pub signaling_bytes: u32,
    pub ack_bytes: u32,
    pub tunnel_overhead_bytes: u32,
    pub binding_lifetime: SimDuration,
    pub buffer_at: BufferAt,
    pub buffer_capacity: usize,
    /// Number of distinct hinted channels available to the assisted scan.
    pub hinted_channels: u32,
}

/// Why a packet never reached the terminal.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossCause {
    QueueDrop,
    WirelessDetached,
    NoBinding,
    NoAttachment,
    EndOfRun,
}

impl LossCause {
    pub fn as_str(self) -> &'static str {
        match self {
            LossCause::QueueDrop => "queue_drop",
            LossCause::WirelessDetached => "wireless_detached",
            LossCause::NoBinding => "no_binding",
            LossCause::NoAttachment => "no_attachment",
            LossCause::EndOfRun => "end_of_run",
        }
    }
}

#[derive(Debug, Clone)]
pub enum Outcome {
    Pending,
    Delivered {
        at: SimTime,
        via_ap: EntityId,
        via_mag: EntityId,
    },
    Lost {
        cause: LossCause,
        at: EntityId,
    },
    BufferDropped,
}

/// Terminal bookkeeping for one transmitted flow packet.
#[derive(Debug, Clone)]
pub struct PacketRecord {
    pub id: u64,
    pub flow: FlowId,
    pub seq: u64,
    pub sent: SimTime,
    pub size_bytes: u32,
    pub frame: Option<FrameRef>,
    pub retransmit: bool,
    pub outcome: Outcome,
}

/// Per-packet trace of every flow packet injected during the run.
#[derive(Debug, Default)]
pub struct Trace {
    pub records: Vec<PacketRecord>,
    index: HashMap<u64, usize>,
}

impl Trace {
    pub fn record_sent(&mut self, rec: PacketRecord) {
        self.index.insert(rec.id, self.records.len());
        self.records.push(rec);
    }

    pub fn set_outcome(&mut self, packet_id: u64, outcome: Outcome) {
        if let Some(i) = self.index.get(&packet_id) {
            self.records[*i].outcome = outcome;
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct FlowStats {
    pub name: String,
    pub sent: u64,
    pub delivered: u64,
    pub lost: u64,
    pub buffer_dropped: u64,
    pub cwnd_collapses: u32,
}

/// One buffering episode (LGD through flush completion) of the assisted
/// variant.
#[derive(Debug, Clone, Copy, Default)]
pub struct HoldEpisode {
    pub buffered: u64,
    pub flushed: u64,
    pub dropped: u64,
    pub fallback: bool,
    pub closed: bool,
}

#[derive(Debug, Default)]
pub struct RunStats {
    pub flows: Vec<FlowStats>,
    pub aaa_one_way_traversals: u64,
    pub lma_no_binding_drops: u64,
    pub malformed_pbu: u64,
    pub fallback_handovers: u32,
    pub episodes: Vec<HoldEpisode>,
}

impl RunStats {
    pub fn flow(&mut self, f: FlowId) -> &mut FlowStats {
        &mut self.flows[f.0 as usize]
    }

    pub fn current_episode(&mut self) -> Option<&mut HoldEpisode> {
        self.episodes.iter_mut().rev().find(|e| !e.closed)
    }
}

/// Runtime state of one configured flow.
#[derive(Debug)]
pub enum FlowRuntime {
    Cbr {
        spec: CbrFlowSpec,
    },
    Tcp {
        spec: TcpLiteFlowSpec,
        state: TcpLiteState,
        receiver: TcpLiteReceiver,
        rto: Option<EventHandle>,
    },
    Video {
        schedule: VideoSchedule,
    },
}

/// The whole simulated domain, owned by one engine.
pub struct SimWorld {
    pub cfg: WorldConfig,
    pub params: LatencyParams,
    pub wiring: Wiring,
    pub net: Network,
    pub mh: MhNode,
    pub mags: Vec<MagNode>,
    pub lma: LmaNode,
    pub flows: Vec<FlowRuntime>,
    pub stats: RunStats,
    pub trace: Trace,
    next_packet_id: u64,
}

impl SimWorld {
    pub fn new(
        cfg: WorldConfig,
        params: LatencyParams,
        wiring: Wiring,
        net: Network,
        mag_count: usize,
    ) -> Self {
        let mags = (0..mag_count).map(MagNode::new).collect();
        SimWorld {
            cfg,
            params,
            wiring,
            net,
            mh: MhNode::default(),
            mags,
            lma: LmaNode::default(),
            flows: Vec::new(),
            stats: RunStats::default(),
            trace: Trace::default(),
            next_packet_id: 0,
        }
    }

    pub fn next_packet_id(&mut self) -> u64 {
        let id = self.next_packet_id;
        self.next_packet_id += 1;
        id
    }

    pub fn signal_packet(
        &mut self,
        kind: PacketKind,
        src: EntityId,
        dst: EntityId,
        now: SimTime,
        note: &'static str,
    ) -> Packet {
        Packet {
            id: self.next_packet_id(),
            kind,
            src,
            dst,
            flow: None,
            seq: 0,
            size_bytes: self.cfg.signaling_bytes,
            frame: None,
            created_at: now,
            via: Vec::new(),
            tunneled: false,
            retransmit: false,
            note,
            nd: None,
        }
    }

    /// Sends `pkt` from `from` over a wired link; on queue drop, flow packets
    /// get a terminal loss outcome.
    pub fn send_link(
        &mut self,
        eng: &mut Engine<Msg>,
        link: LinkId,
        from: EntityId,
        mut pkt: Packet,
    ) {
        pkt.via.push(from);
        let bits = pkt.wire_bits(self.cfg.tunnel_overhead_bytes);
        let now = eng.now();
        let l = self.net.link(link);
        let to = l.other_end(from);
        match l.transmit(from, bits, now) {
            TxOutcome::Deliver(at) => {
                eng.schedule(at - now, to, Msg::Deliver(pkt))
                    .expect("scheduling during run");
            }
            TxOutcome::Dropped => self.record_loss(&pkt, LossCause::QueueDrop, from),
        }
    }

    /// Sends `pkt` over the wireless hop of `cell`, in either direction.
    pub fn send_wireless(
        &mut self,
        eng: &mut Engine<Msg>,
        cell: usize,
        from: EntityId,
        mut pkt: Packet,
    ) {
        pkt.via.push(from);
        let bits = pkt.size_bytes as u64 * 8;
        let now = eng.now();
        let l = self.net.wireless(cell);
        let to = l.other_end(from);
        match l.transmit(from, bits, now) {
            TxOutcome::Deliver(at) => {
                eng.schedule(at - now, to, Msg::Deliver(pkt))
                    .expect("scheduling during run");
            }
            TxOutcome::Dropped => self.record_loss(&pkt, LossCause::QueueDrop, from),
        }
    }

    pub fn record_loss(&mut self, pkt: &Packet, cause: LossCause, at: EntityId) {
        if let Some(flow) = pkt.flow {
            if pkt.dst == self.wiring.mh {
                self.stats.flow(flow).lost += 1;
                self.trace.set_outcome(pkt.id, Outcome::Lost { cause, at });
            }
        }
    }

    pub fn record_buffer_drop(&mut self, pkt: &Packet) {
        if let Some(flow) = pkt.flow {
            self.stats.flow(flow).buffer_dropped += 1;
            self.trace.set_outcome(pkt.id, Outcome::BufferDropped);
        }
        if let Some(e) = self.stats.current_episode() {
            e.dropped += 1;
        }
    }

    /// Ordered hold queue push with drop-from-front overflow.
    pub fn hold_push(
        q: &mut VecDeque<Packet>,
        capacity: usize,
        pkt: Packet,
    ) -> Option<Packet> {
        let evicted = if q.len() >= capacity.max(1) {
            q.pop_front()
        } else {
            None
        };
        q.push_back(pkt);
        evicted
    }
}

impl World for SimWorld {
    type Msg = Msg;

    fn dispatch(
        &mut self,
        eng: &mut Engine<Msg>,
        target: EntityId,
        msg: Msg,
    ) -> Result<(), String> {
        match self.wiring.kind_of(target) {
            EntityKind::Mh => self.mh_handle(eng, msg),
            EntityKind::Ap(cell) => self.ap_handle(eng, cell, msg),
            EntityKind::Mag(mag) => self.mag_handle(eng, mag, msg),
            EntityKind::Lma => self.lma_handle(eng, msg),
            EntityKind::Cn => self.cn_handle(eng, msg),
            EntityKind::Aaa => self.aaa_handle(eng, msg),
        }
    }
}

/// Binding-cache view used by reports and tests.
impl SimWorld {
    pub fn binding_of(&self, mh: EntityId) -> Option<&BindingCacheEntry> {
        self.lma.bindings.get(&mh)
    }

    pub fn mh_phase(&self) -> &MhPhase {
        &self.mh.phase
    }

    /// Marks everything still pending as lost at end of run, closing the
    /// per-flow conservation identity. Returns how many packets that was.
    pub fn finalize_end_of_run(&mut self) -> u64 {
        let at = self.wiring.mh;
        let mut n = 0;
        for r in &mut self.trace.records {
            if matches!(r.outcome, Outcome::Pending) {
                self.stats.flows[r.flow.0 as usize].lost += 1;
                r.outcome = Outcome::Lost {
                    cause: LossCause::EndOfRun,
                    at,
                };
                n += 1;
            }
        }
        n
    }
}
