//! Traffic sources: constant-bit-rate over UDP-like transport and a
//! Reno-style window-based TCP model, enough to reproduce the qualitative
//! TCP-vs-UDP behavior across a handover without re-implementing a full
//! stack.

use crate::time::{SimDuration, SimTime};

/// Constant-bit-rate flow: one packet every `interval` from `start` through
/// `stop` inclusive.
#[derive(Debug, Clone)]
pub struct CbrFlowSpec {
    pub packet_bytes: u32,
    pub interval: SimDuration,
    pub start: SimTime,
    pub stop: SimTime,
}

impl CbrFlowSpec {
    /// Exactly `floor((stop - start) / interval) + 1` packets.
    pub fn packet_count(&self) -> u64 {
        (self.stop - self.start).as_us() / self.interval.as_us() + 1
    }

    pub fn send_time(&self, seq: u64) -> SimTime {
        self.start + self.interval * seq
    }
}

/// Window-based TCP model: slow start below `ssthresh`, congestion avoidance
/// above, timeout collapse to one segment with go-back-N retransmission.
/// Cumulative ACKs only; no SACK or fast recovery.
#[derive(Debug, Clone)]
pub struct TcpLiteFlowSpec {
    pub segment_bytes: u32,
    pub ack_bytes: u32,
    pub init_cwnd: u32,
    pub max_cwnd: u32,
    pub rto: SimDuration,
    pub start: SimTime,
    /// No new data is initiated after `stop`; outstanding segments are still
    /// retransmitted until acknowledged.
    pub stop: SimTime,
}

/// Sender-side connection state, in segment units. `cwnd` is fractional so
/// congestion avoidance can grow by `1/cwnd` per ACK.
#[derive(Debug, Clone)]
pub struct TcpLiteState {
    pub next_seq: u64,
    pub cum_ack: u64,
    /// High-water mark of transmitted sequence numbers; sends below it are
    /// retransmissions.
    pub max_sent: u64,
    pub cwnd: f64,
    pub ssthresh: f64,
    pub max_cwnd: f64,
    /// Number of cwnd collapses (transitions from above one segment to one).
    pub collapses: u32,
}

/// What the sender should do next.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TcpAction {
    /// Transmit segment `seq` (a retransmission if below `next_seq`).
    Send { seq: u64, retransmit: bool },
    /// (Re)arm the retransmission timer.
    ArmRto,
    /// Stop the retransmission timer; everything is acknowledged.
    DisarmRto,
}

impl TcpLiteState {
    pub fn new(spec: &TcpLiteFlowSpec) -> Self {
        TcpLiteState {
            next_seq: 0,
            cum_ack: 0,
            max_sent: 0,
            cwnd: spec.init_cwnd as f64,
            ssthresh: f64::INFINITY,
            max_cwnd: spec.max_cwnd as f64,
            collapses: 0,
        }
    }

    pub fn outstanding(&self) -> u64 {
        self.next_seq - self.cum_ack
    }

    fn window(&self) -> u64 {
        self.cwnd.floor().max(1.0) as u64
    }

    /// Fills the window. The sender never puts more than `cum_ack + cwnd` on
    /// the wire; retransmissions (below `max_sent`) proceed even when new
    /// data is cut off.
    pub fn send_opportunity(&mut self, may_send_new: bool) -> Vec<TcpAction> {
        let mut actions = Vec::new();
        while self.outstanding() < self.window() {
            let retransmit = self.next_seq < self.max_sent;
            if !retransmit && !may_send_new {
                break;
            }
            actions.push(TcpAction::Send {
                seq: self.next_seq,
                retransmit,
            });
            self.next_seq += 1;
            self.max_sent = self.max_sent.max(self.next_seq);
        }
        if !actions.is_empty() {
            actions.push(TcpAction::ArmRto);
        }
        actions
    }

    /// Processes a cumulative ACK covering everything below `ack_seq`.
    pub fn on_ack(&mut self, ack_seq: u64, may_send_new: bool) -> Vec<TcpAction> {
        if ack_seq <= self.cum_ack {
            return Vec::new(); // duplicate
        }
        let newly_acked = ack_seq - self.cum_ack;
        self.cum_ack = ack_seq;
        if self.cum_ack > self.next_seq {
            self.next_seq = self.cum_ack;
        }
        for _ in 0..newly_acked {
            if self.cwnd < self.ssthresh {
                self.cwnd += 1.0; // slow start
            } else {
                self.cwnd += 1.0 / self.cwnd; // congestion avoidance
            }
        }
        self.cwnd = self.cwnd.min(self.max_cwnd);
        let mut actions = self.send_opportunity(may_send_new);
        if self.outstanding() == 0 && actions.is_empty() {
            actions.push(TcpAction::DisarmRto);
        } else {
            actions.push(TcpAction::ArmRto);
        }
        actions
    }

    /// Retransmission timeout: halve the threshold, collapse the window to
    /// one segment, and go back to the last cumulative ACK.
    pub fn on_timeout(&mut self) -> Vec<TcpAction> {
        if self.outstanding() == 0 {
            return vec![TcpAction::DisarmRto];
        }
        self.ssthresh = (self.cwnd / 2.0).max(1.0);
        if self.cwnd > 1.0 {
            self.collapses += 1;
        }
        self.cwnd = 1.0;
        self.next_seq = self.cum_ack;
        let mut actions = self.send_opportunity(false);
        if actions.is_empty() {
            actions.push(TcpAction::ArmRto);
        }
        actions
    }
}

/// Receiver-side cumulative-ACK state with out-of-order buffering.
#[derive(Debug, Clone, Default)]
pub struct TcpLiteReceiver {
    pub expected: u64,
    buffered: std::collections::BTreeSet<u64>,
}

impl TcpLiteReceiver {
    /// Accepts a segment and returns the cumulative ACK to send back.
    pub fn on_segment(&mut self, seq: u64) -> u64 {
        if seq >= self.expected {
            self.buffered.insert(seq);
        }
        while self.buffered.remove(&self.expected) {
            self.expected += 1;
        }
        self.expected
    }
}

// ---------------------------------------------------------------------------
// Simulation glue: the CN drives every flow; the MH sinks TCP segments.
// ---------------------------------------------------------------------------

use crate::engine::Engine;
use crate::packet::{FlowId, FrameRef, Packet, PacketKind};
use crate::world::{FlowRuntime, Msg, Outcome, PacketRecord, SimWorld};

impl SimWorld {
    pub(crate) fn cn_handle(&mut self, eng: &mut Engine<Msg>, msg: Msg) -> Result<(), String> {
        match msg {
            Msg::FlowStart { flow } => self.flow_start(eng, flow),
            Msg::CbrSend { flow, seq } => self.cbr_send(eng, flow, seq),
            Msg::VideoSend { flow, pkt } => self.video_send(eng, flow, pkt),
            Msg::TcpRto { flow } => {
                let FlowRuntime::Tcp { state, .. } = &mut self.flows[flow.0 as usize] else {
                    return Err("RTO for a non-TCP flow".into());
                };
                let actions = state.on_timeout();
                let collapses = state.collapses;
                self.stats.flow(flow).cwnd_collapses = collapses;
                self.tcp_apply(eng, flow, actions);
                Ok(())
            }
            Msg::Deliver(p) => self.cn_deliver(eng, p),
            other => {
                use crate::engine::LogPayload;
                Err(format!("CN cannot handle {:?}", other.kind()))
            }
        }
    }

    fn flow_start(&mut self, eng: &mut Engine<Msg>, flow: FlowId) -> Result<(), String> {
        let FlowRuntime::Tcp { state, .. } = &mut self.flows[flow.0 as usize] else {
            return Ok(()); // CBR and video flows are driven by send timers
        };
        let actions = state.send_opportunity(true);
        self.tcp_apply(eng, flow, actions);
        Ok(())
    }

    fn cbr_send(&mut self, eng: &mut Engine<Msg>, flow: FlowId, seq: u64) -> Result<(), String> {
        let FlowRuntime::Cbr { spec } = &self.flows[flow.0 as usize] else {
            return Err("CBR timer for a non-CBR flow".into());
        };
        let (size, interval, count) = (spec.packet_bytes, spec.interval, spec.packet_count());
        self.send_flow_data(eng, flow, seq, size, None, false);
        if seq + 1 < count {
            eng.schedule(interval, self.wiring.cn, Msg::CbrSend { flow, seq: seq + 1 })
                .map_err(|e| e.to_string())?;
        }
        Ok(())
    }

    fn video_send(&mut self, eng: &mut Engine<Msg>, flow: FlowId, pkt: usize) -> Result<(), String> {
        let FlowRuntime::Video { schedule } = &self.flows[flow.0 as usize] else {
            return Err("video timer for a non-video flow".into());
        };
        let this = schedule.packets[pkt];
        let next = schedule.packets.get(pkt + 1).map(|n| n.send_at);
        self.send_flow_data(eng, flow, pkt as u64, this.size_bytes, Some(this.frame), false);
        if let Some(at) = next {
            // Oversized frames can overrun the next frame slot; never
            // schedule into the past.
            let delay = at.checked_sub(eng.now()).unwrap_or(SimDuration::ZERO);
            eng.schedule(delay, self.wiring.cn, Msg::VideoSend { flow, pkt: pkt + 1 })
                .map_err(|e| e.to_string())?;
        }
        Ok(())
    }

    fn cn_deliver(&mut self, eng: &mut Engine<Msg>, p: Packet) -> Result<(), String> {
        let Some(flow) = p.flow else { return Ok(()) };
        let may_send_new;
        let actions;
        {
            let FlowRuntime::Tcp { spec, state, .. } = &mut self.flows[flow.0 as usize] else {
                return Ok(());
            };
            may_send_new = eng.now() <= spec.stop;
            actions = state.on_ack(p.seq, may_send_new);
        }
        self.tcp_apply(eng, flow, actions);
        Ok(())
    }

    fn tcp_apply(&mut self, eng: &mut Engine<Msg>, flow: FlowId, actions: Vec<TcpAction>) {
        for act in actions {
            match act {
                TcpAction::Send { seq, retransmit } => {
                    let FlowRuntime::Tcp { spec, .. } = &self.flows[flow.0 as usize] else {
                        return;
                    };
                    let size = spec.segment_bytes;
                    self.send_flow_data(eng, flow, seq, size, None, retransmit);
                }
                TcpAction::ArmRto => {
                    let FlowRuntime::Tcp { spec, rto, .. } = &mut self.flows[flow.0 as usize]
                    else {
                        return;
                    };
                    let delay = spec.rto;
                    if let Some(h) = rto.take() {
                        eng.cancel(h);
                    }
                    let h = eng
                        .schedule(delay, self.wiring.cn, Msg::TcpRto { flow })
                        .expect("scheduling during run");
                    if let FlowRuntime::Tcp { rto, .. } = &mut self.flows[flow.0 as usize] {
                        *rto = Some(h);
                    }
                }
                TcpAction::DisarmRto => {
                    if let FlowRuntime::Tcp { rto, .. } = &mut self.flows[flow.0 as usize] {
                        if let Some(h) = rto.take() {
                            eng.cancel(h);
                        }
                    }
                }
            }
        }
    }

    /// Injects one downlink flow packet at the CN and records it in the
    /// trace.
    fn send_flow_data(
        &mut self,
        eng: &mut Engine<Msg>,
        flow: FlowId,
        seq: u64,
        size_bytes: u32,
        frame: Option<FrameRef>,
        retransmit: bool,
    ) {
        let now = eng.now();
        let pkt = Packet {
            id: self.next_packet_id(),
            kind: PacketKind::Data,
            src: self.wiring.cn,
            dst: self.wiring.mh,
            flow: Some(flow),
            seq,
            size_bytes,
            frame,
            created_at: now,
            via: Vec::new(),
            tunneled: false,
            retransmit,
            note: "",
            nd: None,
        };
        self.stats.flow(flow).sent += 1;
        self.trace.record_sent(PacketRecord {
            id: pkt.id,
            flow,
            seq,
            sent: now,
            size_bytes,
            frame,
            retransmit,
            outcome: Outcome::Pending,
        });
        let link = self.wiring.link_cn_lma;
        let cn = self.wiring.cn;
        self.send_link(eng, link, cn, pkt);
    }

    /// Receiver side of the TCP model: cumulative ACK per delivered segment.
    pub(crate) fn sink_tcp_segment(
        &mut self,
        eng: &mut Engine<Msg>,
        flow: FlowId,
        p: &Packet,
        cell: usize,
    ) -> Result<(), String> {
        let ack_info = {
            let FlowRuntime::Tcp { spec, receiver, .. } = &mut self.flows[flow.0 as usize] else {
                return Ok(());
            };
            Some((receiver.on_segment(p.seq), spec.ack_bytes))
        };
        if let Some((cum_ack, ack_bytes)) = ack_info {
            let mut ack = Packet {
                id: self.next_packet_id(),
                kind: PacketKind::Data,
                src: self.wiring.mh,
                dst: self.wiring.cn,
                flow: Some(flow),
                seq: cum_ack,
                size_bytes: ack_bytes,
                frame: None,
                created_at: eng.now(),
                via: Vec::new(),
                tunneled: false,
                retransmit: false,
                note: "ack",
                nd: None,
            };
            ack.via.clear();
            let mh = self.wiring.mh;
            self.send_wireless(eng, cell, mh, ack);
        }
        Ok(())
    }
}
