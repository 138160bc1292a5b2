//! Link-layer trigger assistance: predictive link-going-down handling,
//! context transfer between MAGs over neighbor-discovery messages, downlink
//! capture during the handover, and the ordered flush afterwards.
//!
//! Capture starts at the predictive trigger: from that instant the serving
//! MAG redirects the MH's downlink off the failing wireless link into the
//! hold path. With `buffer_at = pmag` each captured packet streams to the
//! target MAG, which enforces the hold capacity (drop-from-front) and keeps
//! the stream parked until the flush opens; with `buffer_at = lma` captured
//! packets return to the anchor, which holds them and flushes into the new
//! tunnel on registration. In both modes a notify/end-marker pair rides the
//! same FIFO links as the data, so buffered packets always reach the MH
//! before any later fresh packet.
//!
//! The flush opens one MAG-to-anchor delay after the registration message
//! leaves: that is the instant the anchor processes it, and the
//! acknowledgement is deliberately not waited for. The wired one-way delay
//! is a fixed scenario constant, so the target MAG arms a local timer of
//! that length instead of blocking on the acknowledgement.

use crate::engine::Engine;
use crate::packet::{Packet, PacketKind};
use crate::pmipv6::{open_episode, Capture, MhProfile};
use crate::time::{SimDuration, SimTime};
use crate::world::{BufferAt, Msg, SimWorld};

/// The context handed from the serving MAG to the target MAG ahead of the
/// handover.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NdContextMessage {
    pub profile: MhProfile,
    pub originating_mag: usize,
    pub target_mag: usize,
    pub issued_at: SimTime,
}

/// Scan budget with channel hints: probing only the hinted channels replaces
/// the sweep over the full channel set; with no hints the full scan applies.
pub fn scan_with_hints(
    channels_total: u32,
    per_channel_probe: SimDuration,
    hinted_channels: u32,
) -> SimDuration {
    if hinted_channels == 0 {
        per_channel_probe * channels_total as u64
    } else {
        per_channel_probe * hinted_channels as u64
    }
}

impl SimWorld {
    /// Context-transfer link between the MAGs of `cell` and `cell + step`.
    fn ctx_link_for(&self, from_cell: usize, to_cell: usize) -> crate::topology::LinkId {
        self.wiring.ctx_link[from_cell.min(to_cell)]
    }

    /// Predictive trigger at the serving MAG: open the capture, pick the
    /// neighbor along the path, and push the MH context to it.
    pub(crate) fn on_link_going_down(
        &mut self,
        eng: &mut Engine<Msg>,
        mag: usize,
        cell: usize,
    ) -> Result<(), String> {
        let velocity = self
            .net
            .path
            .as_ref()
            .map(|p| p.velocity_mps)
            .unwrap_or(0.0);
        let next_cell = if velocity >= 0.0 {
            cell.checked_add(1).filter(|c| *c < self.net.cells.len())
        } else {
            cell.checked_sub(1)
        };
        let Some(to_cell) = next_cell else {
            // No neighbor candidate: this handover degrades to baseline
            // behavior (no capture, no context transfer).
            return Ok(());
        };
        let to_mag = self.wiring.mag_of_cell[to_cell];
        open_episode(&mut self.stats);
        self.mags[mag].capture = Capture::Active { to_mag, to_cell };

        if !self.mags[mag].nd_outstanding {
            if let Some(profile) = self.mags[mag].profile.clone() {
                self.mags[mag].nd_outstanding = true;
                let mut pkt = self.signal_packet(
                    PacketKind::NdContext,
                    self.wiring.mag_entity[mag],
                    self.wiring.mag_entity[to_mag],
                    eng.now(),
                    "",
                );
                pkt.nd = Some(Box::new(NdContextMessage {
                    profile,
                    originating_mag: mag,
                    target_mag: to_mag,
                    issued_at: eng.now(),
                }));
                let link = self.ctx_link_for(cell, to_cell);
                let me = self.wiring.mag_entity[mag];
                self.send_link(eng, link, me, pkt);
            }
        }
        Ok(())
    }

    /// Context arrival at the target MAG: pre-install the profile so no AAA
    /// round trips are needed at attachment, and expect the buffered stream.
    pub(crate) fn on_nd_context(
        &mut self,
        eng: &mut Engine<Msg>,
        mag: usize,
        p: Packet,
    ) -> Result<(), String> {
        let Some(nd) = p.nd.as_deref() else {
            return Err("context message without a carried profile".into());
        };
        self.mags[mag].profile = Some(nd.profile.clone());
        if self.cfg.buffer_at == BufferAt::PMag {
            self.mags[mag].hold.active = true;
        }
        let from = nd.originating_mag;
        let ack = self.signal_packet(
            PacketKind::NdAck,
            self.wiring.mag_entity[mag],
            self.wiring.mag_entity[from],
            eng.now(),
            "",
        );
        let from_cell = self.wiring.default_cell_of_mag(from);
        let to_cell = self.wiring.default_cell_of_mag(mag);
        let link = self.ctx_link_for(from_cell, to_cell);
        let me = self.wiring.mag_entity[mag];
        self.send_link(eng, link, me, ack);
        Ok(())
    }

    /// Link-up indication at the target MAG: register immediately with the
    /// pre-installed profile (no AAA, no acknowledgement wait) and arm the
    /// flush timer. Without the context this handover falls back to the
    /// baseline profile acquisition.
    pub(crate) fn on_link_up(
        &mut self,
        eng: &mut Engine<Msg>,
        mag: usize,
        cell: usize,
    ) -> Result<(), String> {
        if self.mags[mag].profile.is_some() {
            self.complete_link_up(eng, mag, cell)
        } else {
            self.stats.fallback_handovers += 1;
            if let Some(e) = self.stats.current_episode() {
                e.fallback = true;
            }
            self.start_aaa(eng, mag, cell, crate::pmipv6::AaaPurpose::MihFallback)
        }
    }

    pub(crate) fn complete_link_up(
        &mut self,
        eng: &mut Engine<Msg>,
        mag: usize,
        cell: usize,
    ) -> Result<(), String> {
        self.mags[mag].pending_attach_cell = Some(cell);
        self.mags[mag].ra_on_pba = false;
        // Only MAG-side buffering fences fresh traffic here; with anchor-side
        // buffering the ordering fence lives at the LMA.
        if self.cfg.buffer_at == BufferAt::PMag {
            self.mags[mag].hold.active = true;
        }
        self.send_pbu(eng, mag)?;
        eng.schedule(
            self.params.mag_lma,
            self.wiring.mag_entity[mag],
            Msg::FlushStart { cell },
        )
        .map_err(|e| e.to_string())?;
        Ok(())
    }

    /// The registration has reached the anchor: advertise the router to the
    /// MH and release the held stream in FIFO order.
    pub(crate) fn flush_start(
        &mut self,
        eng: &mut Engine<Msg>,
        mag: usize,
        cell: usize,
    ) -> Result<(), String> {
        if self.mags[mag].pending_attach_cell == Some(cell) {
            self.mags[mag].pending_attach_cell = None;
            let ra = self.signal_packet(
                PacketKind::Ra,
                self.wiring.mag_entity[mag],
                self.wiring.mh,
                eng.now(),
                "",
            );
            let link = self.wiring.link_mag_ap[cell];
            let me = self.wiring.mag_entity[mag];
            self.send_link(eng, link, me, ra);
        }
        self.mags[mag].hold.flush_open = true;
        let held: Vec<Packet> = self.mags[mag].hold.q.drain(..).collect();
        for pkt in held {
            if let Some(e) = self.stats.current_episode() {
                e.flushed += 1;
            }
            self.forward_downlink(eng, mag, pkt);
        }
        if self.mags[mag].hold.stream_ended {
            self.finish_hold_phase(eng, mag);
        }
        Ok(())
    }

    /// Downlink captured at the departing MAG while its radio link is going
    /// away: counted as buffered and moved onto the hold path instead of the
    /// failing wireless link.
    pub(crate) fn capture_downlink(
        &mut self,
        eng: &mut Engine<Msg>,
        mag: usize,
        to_mag: usize,
        to_cell: usize,
        mut p: Packet,
    ) -> Result<(), String> {
        if let Some(e) = self.stats.current_episode() {
            e.buffered += 1;
        }
        let me = self.wiring.mag_entity[mag];
        match self.cfg.buffer_at {
            BufferAt::PMag => {
                p.note = "held";
                let from_cell = self.wiring.default_cell_of_mag(mag);
                let link = self.ctx_link_for(from_cell, to_cell);
                let _ = to_mag;
                self.send_link(eng, link, me, p);
            }
            BufferAt::Lma => {
                p.note = "returned";
                p.tunneled = true;
                let link = self.wiring.link_lma_mag[mag];
                self.send_link(eng, link, me, p);
            }
        }
        Ok(())
    }

    /// Buffered-stream arrival at the target MAG: deliver straight through
    /// once the flush is open, otherwise park it under the hold capacity.
    pub(crate) fn hold_arrival(
        &mut self,
        eng: &mut Engine<Msg>,
        mag: usize,
        p: Packet,
    ) -> Result<(), String> {
        if self.mags[mag].hold.flush_open {
            if let Some(e) = self.stats.current_episode() {
                e.flushed += 1;
            }
            self.forward_downlink(eng, mag, p);
            return Ok(());
        }
        let capacity = self.cfg.buffer_capacity;
        if let Some(evicted) = Self::hold_push(&mut self.mags[mag].hold.q, capacity, p) {
            self.mags[mag].hold.drops += 1;
            self.record_buffer_drop(&evicted);
        }
        Ok(())
    }

    /// Fresh tunnel downlink at a target MAG that is still flushing: it must
    /// wait behind the buffered stream to preserve delivery order.
    pub(crate) fn fresh_at_target_mag(
        &mut self,
        eng: &mut Engine<Msg>,
        mag: usize,
        p: Packet,
    ) -> Result<(), String> {
        let hold = &mut self.mags[mag].hold;
        if hold.flush_open && hold.stream_ended {
            self.forward_downlink(eng, mag, p);
        } else {
            hold.fresh_wait.push_back(p);
        }
        Ok(())
    }

    /// Seal at the departing MAG: the anchor has switched the tunnel, and
    /// FIFO ordering on the anchor-to-MAG link guarantees every captured
    /// packet has already passed through, so the end marker can close the
    /// stream.
    pub(crate) fn on_flush_notify(
        &mut self,
        eng: &mut Engine<Msg>,
        mag: usize,
    ) -> Result<(), String> {
        let Capture::Active { to_mag, to_cell } = self.mags[mag].capture else {
            return Ok(());
        };
        self.mags[mag].capture = Capture::Inactive;
        let me = self.wiring.mag_entity[mag];
        match self.cfg.buffer_at {
            BufferAt::PMag => {
                let marker = self.signal_packet(
                    PacketKind::MihEvent,
                    me,
                    self.wiring.mag_entity[to_mag],
                    eng.now(),
                    "buffer_end",
                );
                let from_cell = self.wiring.default_cell_of_mag(mag);
                let link = self.ctx_link_for(from_cell, to_cell);
                self.send_link(eng, link, me, marker);
            }
            BufferAt::Lma => {
                let marker = self.signal_packet(
                    PacketKind::MihEvent,
                    me,
                    self.wiring.lma,
                    eng.now(),
                    "buffer_end",
                );
                let link = self.wiring.link_lma_mag[mag];
                self.send_link(eng, link, me, marker);
            }
        }
        Ok(())
    }

    /// End of the buffered stream at the target MAG: release the fenced
    /// fresh traffic and return to normal forwarding.
    pub(crate) fn on_buffer_end(
        &mut self,
        eng: &mut Engine<Msg>,
        mag: usize,
    ) -> Result<(), String> {
        self.mags[mag].hold.stream_ended = true;
        if self.mags[mag].hold.flush_open {
            self.finish_hold_phase(eng, mag);
        }
        Ok(())
    }

    fn finish_hold_phase(&mut self, eng: &mut Engine<Msg>, mag: usize) {
        let fresh: Vec<Packet> = self.mags[mag].hold.fresh_wait.drain(..).collect();
        for pkt in fresh {
            self.forward_downlink(eng, mag, pkt);
        }
        let hold = &mut self.mags[mag].hold;
        hold.active = false;
        hold.flush_open = false;
        hold.stream_ended = false;
        if let Some(e) = self.stats.current_episode() {
            e.closed = true;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_scan_when_no_hints() {
        let probe = SimDuration::from_ms_f64(5.0);
        assert_eq!(scan_with_hints(11, probe, 0), SimDuration::from_ms_f64(55.0));
    }

    #[test]
    fn single_hinted_channel_costs_one_probe() {
        let probe = SimDuration::from_ms_f64(5.0);
        assert_eq!(scan_with_hints(11, probe, 1), SimDuration::from_ms_f64(5.0));
        assert_eq!(scan_with_hints(11, probe, 3), SimDuration::from_ms_f64(15.0));
    }

    #[test]
    fn hold_push_drops_from_front() {
        use std::collections::VecDeque;
        let mut reg = Engine::<Msg>::new();
        let x = reg.register_entity("x");
        let mk = |seq| Packet {
            id: seq,
            kind: PacketKind::Data,
            src: x,
            dst: x,
            flow: None,
            seq,
            size_bytes: 1,
            frame: None,
            created_at: SimTime::ZERO,
            via: Vec::new(),
            tunneled: false,
            retransmit: false,
            note: "",
            nd: None,
        };
        let mut q = VecDeque::new();
        let mut dropped = Vec::new();
        for seq in 0..6 {
            if let Some(e) = SimWorld::hold_push(&mut q, 3, mk(seq)) {
                dropped.push(e.seq);
            }
        }
        assert_eq!(dropped, vec![0, 1, 2]);
        let kept: Vec<u64> = q.iter().map(|p| p.seq).collect();
        assert_eq!(kept, vec![3, 4, 5]);
    }
}
