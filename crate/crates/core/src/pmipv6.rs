//! Baseline PMIPv6 protocol entities and signaling: protocol-unaware MH,
//! APs, MAGs (movement detection, policy lookup, registration, tunnel
//! endpoint, router advertisement), LMA (binding cache, prefix assignment,
//! tunneling), CN, and the AAA server.
//!
//! Handover choreography, baseline variant: on link-down the MH scans the
//! full channel set, the target MAG then runs two query/reply exchanges with
//! the AAA server (authentication plus profile acquisition, four one-way
//! traversals in total, completed before any registration message), the MH
//! re-associates, the AP notifies the MAG after the attachment-notification
//! delay, and the MAG registers with the LMA. Downlink switches to the new
//! tunnel when the LMA emits the acknowledgement, so the first forwarded
//! packet departs concurrently with it.

use std::collections::BTreeMap;

use crate::engine::{Engine, EntityId, EventHandle};
use crate::packet::{Packet, PacketKind};
use crate::time::{SimDuration, SimTime};
use crate::topology::LinkEventKind;
use crate::world::{
    BufferAt, EntityKind, HoldEpisode, LossCause, Msg, Outcome, SimWorld, Variant,
};

/// The context describing one MH, as held by MAGs and transferred between
/// them before a handover.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MhProfile {
    pub mh_id: EntityId,
    /// Home network prefix; unique per MH within the domain.
    pub hnp: String,
    /// Address of the anchor serving this MH.
    pub lmaa: EntityId,
    /// Channels of neighboring APs, used only by the assisted variant to
    /// shorten scanning.
    pub channel_hints: u32,
}

/// LMA-side record binding an MH to its serving MAG.
#[derive(Debug, Clone)]
pub struct BindingCacheEntry {
    pub mh_id: EntityId,
    pub hnp: String,
    pub serving_mag: usize,
    pub lifetime: SimDuration,
    pub last_update: SimTime,
    pub timer: Option<EventHandle>,
}

/// One LMA-to-MAG tunnel endpoint pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Tunnel {
    pub lma: EntityId,
    pub mag: EntityId,
    pub encap_overhead_bytes: u32,
}

/// Where the MH currently is in its attachment lifecycle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MhPhase {
    #[default]
    Off,
    /// Initial entry: solicitation sent, waiting for the advertisement.
    AwaitRa,
    Configuring,
    Dad,
    Idle,
    /// Link went down with no known target; waiting for a detection event.
    WaitCandidate,
    Scanning { target: usize },
    Authenticating { target: usize },
    Reassociating { target: usize },
}

#[derive(Debug, Default)]
pub struct MhNode {
    pub attached: Option<usize>,
    pub current_cell: Option<usize>,
    pub candidate: Option<usize>,
    pub address_ready: bool,
    pub phase: MhPhase,
    /// Set once the initial attachment completed; later attachments within
    /// the domain skip address configuration and duplicate address detection.
    pub entered_domain: bool,
    pub initial_attach_started: Option<SimTime>,
    pub initial_attach_done: Option<SimTime>,
}

/// Why a MAG is currently talking to the AAA server.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AaaPurpose {
    /// First entry into the domain: acquire the profile, then register.
    InitialAttach,
    /// Link-layer handover authentication + profile acquisition; completes
    /// back to the MH so it can re-associate.
    L2Auth,
    /// Assisted variant fallback when no context arrived in time.
    MihFallback,
}

#[derive(Debug, Clone, Copy)]
pub struct AaaTask {
    pub purpose: AaaPurpose,
    pub cell: usize,
    pub replies: u8,
}

/// Departing-side capture state of the assisted variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Capture {
    Inactive,
    Active { to_mag: usize, to_cell: usize },
}

/// Arriving-side hold state of the assisted variant: buffered packets wait
/// here until the flush opens; fresh tunnel packets wait behind the buffered
/// stream until its end marker arrives, preserving FIFO order.
#[derive(Debug, Default)]
pub struct HoldQueueState {
    pub active: bool,
    pub q: std::collections::VecDeque<Packet>,
    pub fresh_wait: std::collections::VecDeque<Packet>,
    pub flush_open: bool,
    pub stream_ended: bool,
    pub drops: u64,
}

#[derive(Debug)]
pub struct MagNode {
    pub idx: usize,
    pub profile: Option<MhProfile>,
    pub aaa: Option<AaaTask>,
    pub pending_attach_cell: Option<usize>,
    /// Send the router advertisement on registration acknowledgement
    /// (baseline and initial attach) as opposed to on flush start.
    pub ra_on_pba: bool,
    pub capture: Capture,
    pub hold: HoldQueueState,
    pub nd_outstanding: bool,
}

impl MagNode {
    pub fn new(idx: usize) -> Self {
        MagNode {
            idx,
            profile: None,
            aaa: None,
            pending_attach_cell: None,
            ra_on_pba: false,
            capture: Capture::Inactive,
            hold: HoldQueueState::default(),
            nd_outstanding: false,
        }
    }
}

#[derive(Debug, Default)]
pub struct LmaNode {
    pub bindings: BTreeMap<EntityId, BindingCacheEntry>,
    pub tunnels: BTreeMap<usize, Tunnel>,
    /// Anchor-side hold buffer (only used with `buffer_at = lma`).
    pub hold_q: std::collections::VecDeque<Packet>,
    pub hold_drops: u64,
    /// While true, fresh downlink is parked in `pending` so returned packets
    /// keep their place ahead of it.
    pub fence: bool,
    pub pending: std::collections::VecDeque<Packet>,
}

impl SimWorld {
    // ----- MH ---------------------------------------------------------

    pub(crate) fn mh_handle(&mut self, eng: &mut Engine<Msg>, msg: Msg) -> Result<(), String> {
        match msg {
            Msg::PowerOn => self.mh_power_on(eng),
            Msg::Radio { cell, kind } => self.mh_radio(eng, cell, kind),
            Msg::ScanDone { cell } => self.mh_scan_done(eng, cell),
            Msg::AuthDone { cell } => {
                self.mh.phase = MhPhase::Reassociating { target: cell };
                let d = self.params.reassoc;
                eng.schedule(d, self.wiring.mh, Msg::ReassocDone { cell })
                    .map_err(|e| e.to_string())?;
                Ok(())
            }
            Msg::ReassocDone { cell } => self.mh_reassoc_done(eng, cell),
            Msg::ConfigDone => {
                self.mh.phase = MhPhase::Dad;
                eng.schedule(self.params.dad, self.wiring.mh, Msg::DadDone)
                    .map_err(|e| e.to_string())?;
                Ok(())
            }
            Msg::DadDone => {
                self.mh.address_ready = true;
                self.mh.entered_domain = true;
                self.mh.phase = MhPhase::Idle;
                self.mh.initial_attach_done = Some(eng.now());
                Ok(())
            }
            Msg::Deliver(p) => self.mh_deliver(eng, p),
            other => Err(format!("MH cannot handle {:?}", other.kindname())),
        }
    }

    fn mh_power_on(&mut self, eng: &mut Engine<Msg>) -> Result<(), String> {
        let pos = self
            .net
            .position(eng.now())
            .ok_or("scenario has no mobility path")?;
        let cell = self
            .covering_cell(pos, None)
            .ok_or("MH powered on outside all radio coverage")?;
        self.mh.attached = Some(cell);
        self.mh.current_cell = Some(cell);
        self.mh.phase = MhPhase::AwaitRa;
        self.mh.initial_attach_started = Some(eng.now());
        let mag = self.wiring.mag_of_cell[cell];
        let rs = self.signal_packet(
            PacketKind::Rs,
            self.wiring.mh,
            self.wiring.mag_entity[mag],
            eng.now(),
            "",
        );
        self.send_wireless(eng, cell, self.wiring.mh, rs);
        Ok(())
    }

    /// Nearest cell covering `pos`, excluding `skip`.
    fn covering_cell(&self, pos: f64, skip: Option<usize>) -> Option<usize> {
        self.net
            .cells
            .iter()
            .enumerate()
            .filter(|(i, c)| Some(*i) != skip && c.covers(pos))
            .min_by(|(_, a), (_, b)| {
                let da = (pos - a.center_m).abs();
                let db = (pos - b.center_m).abs();
                da.partial_cmp(&db).unwrap()
            })
            .map(|(i, _)| i)
    }

    fn mh_radio(
        &mut self,
        eng: &mut Engine<Msg>,
        cell: usize,
        kind: LinkEventKind,
    ) -> Result<(), String> {
        match kind {
            LinkEventKind::LinkDetected => {
                if self.mh.current_cell != Some(cell) {
                    self.mh.candidate = Some(cell);
                }
                if self.mh.phase == MhPhase::WaitCandidate {
                    self.mh_begin_scan(eng, cell)?;
                }
                Ok(())
            }
            LinkEventKind::LinkDown => {
                if self.mh.attached == Some(cell) {
                    self.mh.attached = None;
                }
                if self.mh.current_cell != Some(cell) {
                    return Ok(()); // stale event for a cell we already left
                }
                let pos = self.net.position(eng.now()).unwrap_or_default();
                let target = self.mh.candidate.or_else(|| self.covering_cell(pos, Some(cell)));
                match target {
                    Some(t) => self.mh_begin_scan(eng, t),
                    None => {
                        self.mh.phase = MhPhase::WaitCandidate;
                        Ok(())
                    }
                }
            }
            LinkEventKind::LinkGoingDown => Ok(()), // MAG-side trigger, not the MH's
        }
    }

    fn mh_begin_scan(&mut self, eng: &mut Engine<Msg>, target: usize) -> Result<(), String> {
        let duration = match self.cfg.variant {
            Variant::Pmipv6 => self.params.scan,
            Variant::Pmipv6Mih => self.params.scan_reduced,
        };
        self.mh.phase = MhPhase::Scanning { target };
        eng.schedule(duration, self.wiring.mh, Msg::ScanDone { cell: target })
            .map_err(|e| e.to_string())?;
        Ok(())
    }

    fn mh_scan_done(&mut self, eng: &mut Engine<Msg>, cell: usize) -> Result<(), String> {
        match self.cfg.variant {
            Variant::Pmipv6 => {
                // Authentication and profile acquisition run at the target
                // MAG before re-association.
                self.mh.phase = MhPhase::Authenticating { target: cell };
                let mag = self.wiring.mag_of_cell[cell];
                eng.schedule(
                    SimDuration::ZERO,
                    self.wiring.mag_entity[mag],
                    Msg::AuthStart { cell },
                )
                .map_err(|e| e.to_string())?;
            }
            Variant::Pmipv6Mih => {
                // Context transfer already authenticated this MH.
                self.mh.phase = MhPhase::Reassociating { target: cell };
                eng.schedule(self.params.reassoc, self.wiring.mh, Msg::ReassocDone { cell })
                    .map_err(|e| e.to_string())?;
            }
        }
        Ok(())
    }

    fn mh_reassoc_done(&mut self, eng: &mut Engine<Msg>, cell: usize) -> Result<(), String> {
        self.mh.attached = Some(cell);
        self.mh.current_cell = Some(cell);
        self.mh.candidate = None;
        self.mh.phase = MhPhase::Idle;
        let mag = self.wiring.mag_of_cell[cell];
        let mag_entity = self.wiring.mag_entity[mag];
        match self.cfg.variant {
            Variant::Pmipv6 => {
                eng.schedule(
                    self.params.attach_notify,
                    mag_entity,
                    Msg::AttachNotify { cell },
                )
                .map_err(|e| e.to_string())?;
            }
            Variant::Pmipv6Mih => {
                // Link-up indication reaches the MAG through the event
                // service, not through the attachment-notification path.
                eng.schedule(SimDuration::ZERO, mag_entity, Msg::LinkUp { cell })
                    .map_err(|e| e.to_string())?;
            }
        }
        Ok(())
    }

    fn mh_deliver(&mut self, eng: &mut Engine<Msg>, p: Packet) -> Result<(), String> {
        match p.kind {
            PacketKind::Ra => {
                if self.mh.phase == MhPhase::AwaitRa {
                    if self.mh.entered_domain {
                        // Re-entry keeps the address configuration.
                        self.mh.address_ready = true;
                        self.mh.phase = MhPhase::Idle;
                    } else {
                        self.mh.phase = MhPhase::Configuring;
                        eng.schedule(self.params.addr_config, self.wiring.mh, Msg::ConfigDone)
                            .map_err(|e| e.to_string())?;
                    }
                }
                Ok(())
            }
            PacketKind::Data => self.mh_data(eng, p),
            _ => Ok(()),
        }
    }

    fn mh_data(&mut self, eng: &mut Engine<Msg>, p: Packet) -> Result<(), String> {
        let via_ap = p.prev_hop().ok_or("data packet with empty path")?;
        let EntityKind::Ap(cell) = self.wiring.kind_of(via_ap) else {
            return Err("data reached the MH from a non-AP hop".into());
        };
        if self.mh.attached != Some(cell) || !self.mh.address_ready {
            self.record_loss(&p, LossCause::WirelessDetached, self.wiring.mh);
            return Ok(());
        }
        let via_mag = p
            .via
            .iter()
            .rev()
            .find(|e| matches!(self.wiring.kind_of(**e), EntityKind::Mag(_)))
            .copied()
            .ok_or("data packet that traversed no MAG")?;
        if let Some(flow) = p.flow {
            self.stats.flow(flow).delivered += 1;
            self.trace.set_outcome(
                p.id,
                Outcome::Delivered {
                    at: eng.now(),
                    via_ap,
                    via_mag,
                },
            );
            self.sink_tcp_segment(eng, flow, &p, cell)?;
        }
        Ok(())
    }

    // ----- AP ---------------------------------------------------------

    pub(crate) fn ap_handle(
        &mut self,
        eng: &mut Engine<Msg>,
        cell: usize,
        msg: Msg,
    ) -> Result<(), String> {
        match msg {
            Msg::Beacon { .. } => {
                let interval = self.net.cells[cell].beacon_interval;
                eng.schedule(interval, self.wiring.ap_entity[cell], Msg::Beacon { cell })
                    .map_err(|e| e.to_string())?;
                Ok(())
            }
            Msg::Deliver(p) => {
                let from = p.prev_hop().ok_or("packet with empty path at AP")?;
                let ap = self.wiring.ap_entity[cell];
                match self.wiring.kind_of(from) {
                    EntityKind::Mag(_) => self.send_wireless(eng, cell, ap, p),
                    EntityKind::Mh => {
                        let link = self.wiring.link_mag_ap[cell];
                        self.send_link(eng, link, ap, p);
                    }
                    _ => return Err("AP received a packet from an unexpected hop".into()),
                }
                Ok(())
            }
            other => Err(format!("AP cannot handle {:?}", other.kindname())),
        }
    }

    // ----- MAG --------------------------------------------------------

    pub(crate) fn mag_handle(
        &mut self,
        eng: &mut Engine<Msg>,
        mag: usize,
        msg: Msg,
    ) -> Result<(), String> {
        match msg {
            Msg::Radio {
                cell,
                kind: LinkEventKind::LinkGoingDown,
            } => {
                if self.cfg.variant == Variant::Pmipv6Mih {
                    self.on_link_going_down(eng, mag, cell)?;
                }
                Ok(())
            }
            Msg::Radio { .. } => Ok(()),
            Msg::AuthStart { cell } => self.start_aaa(eng, mag, cell, AaaPurpose::L2Auth),
            Msg::AttachNotify { cell } => {
                self.mags[mag].pending_attach_cell = Some(cell);
                self.mags[mag].ra_on_pba = true;
                if self.mags[mag].profile.is_some() {
                    self.send_pbu(eng, mag)
                } else {
                    // Attachment of an MH this MAG has never seen; acquire
                    // the profile first.
                    self.start_aaa(eng, mag, cell, AaaPurpose::InitialAttach)
                }
            }
            Msg::LinkUp { cell } => self.on_link_up(eng, mag, cell),
            Msg::FlushStart { cell } => self.flush_start(eng, mag, cell),
            Msg::Deliver(p) => self.mag_deliver(eng, mag, p),
            other => Err(format!("MAG cannot handle {:?}", other.kindname())),
        }
    }

    fn mag_deliver(&mut self, eng: &mut Engine<Msg>, mag: usize, p: Packet) -> Result<(), String> {
        match p.kind {
            PacketKind::Rs => {
                let from = p.prev_hop().ok_or("RS with empty path")?;
                let EntityKind::Ap(cell) = self.wiring.kind_of(from) else {
                    return Err("RS from a non-AP hop".into());
                };
                self.mags[mag].pending_attach_cell = Some(cell);
                self.mags[mag].ra_on_pba = true;
                if self.mags[mag].profile.is_some() {
                    self.send_pbu(eng, mag)
                } else {
                    self.start_aaa(eng, mag, cell, AaaPurpose::InitialAttach)
                }
            }
            PacketKind::AaaReply => self.on_aaa_reply(eng, mag),
            PacketKind::Pba => {
                if self.mags[mag].ra_on_pba {
                    self.mags[mag].ra_on_pba = false;
                    if let Some(cell) = self.mags[mag].pending_attach_cell.take() {
                        self.send_ra(eng, mag, cell);
                    }
                }
                Ok(())
            }
            PacketKind::NdContext => self.on_nd_context(eng, mag, p),
            PacketKind::NdAck => {
                self.mags[mag].nd_outstanding = false;
                Ok(())
            }
            PacketKind::MihEvent => match p.note {
                "flush_notify" => self.on_flush_notify(eng, mag),
                "buffer_end" => self.on_buffer_end(eng, mag),
                other => Err(format!("unknown MIH event '{other}' at MAG")),
            },
            PacketKind::Data => self.mag_data(eng, mag, p),
            _ => Ok(()),
        }
    }

    fn mag_data(&mut self, eng: &mut Engine<Msg>, mag: usize, mut p: Packet) -> Result<(), String> {
        let from = p.prev_hop().ok_or("data with empty path at MAG")?;
        match self.wiring.kind_of(from) {
            EntityKind::Lma => {
                p.tunneled = false; // decapsulated at the tunnel endpoint
                if let Capture::Active { to_mag, to_cell } = self.mags[mag].capture {
                    return self.capture_downlink(eng, mag, to_mag, to_cell, p);
                }
                if self.mags[mag].hold.active {
                    return self.fresh_at_target_mag(eng, mag, p);
                }
                self.forward_downlink(eng, mag, p);
                Ok(())
            }
            EntityKind::Mag(_) => {
                // Buffered stream from the departing MAG.
                self.hold_arrival(eng, mag, p)
            }
            EntityKind::Ap(_) => {
                // Uplink into the tunnel toward the anchor.
                p.tunneled = true;
                let link = self.wiring.link_lma_mag[mag];
                let me = self.wiring.mag_entity[mag];
                self.send_link(eng, link, me, p);
                Ok(())
            }
            _ => Err("data reached a MAG from an unexpected hop".into()),
        }
    }

    /// Downlink leg MAG -> AP; the AP relays onto the wireless hop.
    pub(crate) fn forward_downlink(&mut self, eng: &mut Engine<Msg>, mag: usize, p: Packet) {
        let cell = self
            .mh
            .attached
            .filter(|c| self.wiring.mag_of_cell[*c] == mag)
            .unwrap_or_else(|| self.wiring.default_cell_of_mag(mag));
        let link = self.wiring.link_mag_ap[cell];
        let me = self.wiring.mag_entity[mag];
        self.send_link(eng, link, me, p);
    }

    fn send_ra(&mut self, eng: &mut Engine<Msg>, mag: usize, cell: usize) {
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

    pub(crate) fn send_pbu(&mut self, eng: &mut Engine<Msg>, mag: usize) -> Result<(), String> {
        let pbu = self.signal_packet(
            PacketKind::Pbu,
            self.wiring.mag_entity[mag],
            self.wiring.lma,
            eng.now(),
            "",
        );
        let link = self.wiring.link_lma_mag[mag];
        let me = self.wiring.mag_entity[mag];
        self.send_link(eng, link, me, pbu);
        Ok(())
    }

    // ----- AAA exchanges ------------------------------------------------

    pub(crate) fn start_aaa(
        &mut self,
        eng: &mut Engine<Msg>,
        mag: usize,
        cell: usize,
        purpose: AaaPurpose,
    ) -> Result<(), String> {
        self.mags[mag].aaa = Some(AaaTask {
            purpose,
            cell,
            replies: 0,
        });
        self.send_aaa_query(eng, mag);
        Ok(())
    }

    fn send_aaa_query(&mut self, eng: &mut Engine<Msg>, mag: usize) {
        self.stats.aaa_one_way_traversals += 1;
        let q = self.signal_packet(
            PacketKind::AaaQuery,
            self.wiring.mag_entity[mag],
            self.wiring.aaa,
            eng.now(),
            "",
        );
        let link = self.wiring.link_mag_aaa[mag];
        let me = self.wiring.mag_entity[mag];
        self.send_link(eng, link, me, q);
    }

    fn on_aaa_reply(&mut self, eng: &mut Engine<Msg>, mag: usize) -> Result<(), String> {
        let Some(mut task) = self.mags[mag].aaa.take() else {
            return Err("AAA reply with no exchange in progress".into());
        };
        task.replies += 1;
        if task.replies < 2 {
            self.mags[mag].aaa = Some(task);
            self.send_aaa_query(eng, mag);
            return Ok(());
        }
        // Both query/reply round trips done: the profile is now local.
        self.mags[mag].profile = Some(MhProfile {
            mh_id: self.wiring.mh,
            hnp: format!("hnp-{}", self.wiring.mh.index()),
            lmaa: self.wiring.lma,
            channel_hints: self.cfg.hinted_channels,
        });
        match task.purpose {
            AaaPurpose::InitialAttach => self.send_pbu(eng, mag),
            AaaPurpose::L2Auth => {
                eng.schedule(SimDuration::ZERO, self.wiring.mh, Msg::AuthDone { cell: task.cell })
                    .map_err(|e| e.to_string())?;
                Ok(())
            }
            AaaPurpose::MihFallback => self.complete_link_up(eng, mag, task.cell),
        }
    }

    // ----- LMA --------------------------------------------------------

    pub(crate) fn lma_handle(&mut self, eng: &mut Engine<Msg>, msg: Msg) -> Result<(), String> {
        match msg {
            Msg::Deliver(p) => self.lma_deliver(eng, p),
            Msg::PbuProcessed { mag, mh } => self.lma_register(eng, mag, mh),
            Msg::BindingExpired { mh } => {
                self.lma.bindings.remove(&mh);
                Ok(())
            }
            other => Err(format!("LMA cannot handle {:?}", other.kindname())),
        }
    }

    fn lma_deliver(&mut self, eng: &mut Engine<Msg>, p: Packet) -> Result<(), String> {
        match p.kind {
            PacketKind::Pbu => {
                let Some(from) = p.prev_hop() else {
                    self.stats.malformed_pbu += 1;
                    return Ok(());
                };
                let EntityKind::Mag(mag) = self.wiring.kind_of(from) else {
                    self.stats.malformed_pbu += 1;
                    return Ok(());
                };
                eng.schedule(
                    self.params.lma_processing,
                    self.wiring.lma,
                    Msg::PbuProcessed {
                        mag,
                        mh: self.wiring.mh,
                    },
                )
                .map_err(|e| e.to_string())?;
                Ok(())
            }
            PacketKind::Data => self.lma_data(eng, p),
            PacketKind::MihEvent if p.note == "buffer_end" => {
                // Anchor-buffering mode: the departing MAG has returned
                // everything; release the fenced fresh traffic in order.
                self.lma.fence = false;
                let pending: Vec<Packet> = self.lma.pending.drain(..).collect();
                for pkt in pending {
                    self.lma_route_downlink(eng, pkt);
                }
                if let Some(e) = self.stats.current_episode() {
                    e.closed = true;
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// Creates or updates the binding, re-arms its lifetime timer, answers
    /// with the acknowledgement, and switches downlink to the new tunnel.
    /// With the assisted variant the departing MAG is told to seal its
    /// capture; with anchor-side buffering the held packets flush into the
    /// new tunnel first.
    fn lma_register(&mut self, eng: &mut Engine<Msg>, mag: usize, mh: EntityId) -> Result<(), String> {
        let now = eng.now();
        let lifetime = self.cfg.binding_lifetime;
        let old_mag = self.lma.bindings.get(&mh).map(|b| b.serving_mag);
        if let Some(old) = self.lma.bindings.get(&mh) {
            if let Some(t) = old.timer {
                eng.cancel(t);
            }
        }
        let timer = eng
            .schedule(lifetime, self.wiring.lma, Msg::BindingExpired { mh })
            .map_err(|e| e.to_string())?;
        self.lma.bindings.insert(
            mh,
            BindingCacheEntry {
                mh_id: mh,
                hnp: format!("hnp-{}", mh.index()),
                serving_mag: mag,
                lifetime,
                last_update: now,
                timer: Some(timer),
            },
        );
        self.lma.tunnels.insert(
            mag,
            Tunnel {
                lma: self.wiring.lma,
                mag: self.wiring.mag_entity[mag],
                encap_overhead_bytes: self.cfg.tunnel_overhead_bytes,
            },
        );
        // Routing switch is effective from this instant: any downlink packet
        // processed after this event departs through the new tunnel,
        // concurrently with the acknowledgement below.
        let pba = self.signal_packet(
            PacketKind::Pba,
            self.wiring.lma,
            self.wiring.mag_entity[mag],
            now,
            "",
        );
        let link = self.wiring.link_lma_mag[mag];
        self.send_link(eng, link, self.wiring.lma, pba);

        if self.cfg.variant == Variant::Pmipv6Mih {
            if let Some(old) = old_mag.filter(|o| *o != mag) {
                if self.cfg.buffer_at == BufferAt::Lma {
                    let held: Vec<Packet> = self.lma.hold_q.drain(..).collect();
                    for pkt in held {
                        if let Some(e) = self.stats.current_episode() {
                            e.flushed += 1;
                        }
                        self.lma_route_downlink(eng, pkt);
                    }
                    self.lma.fence = true;
                }
                let notify = self.signal_packet(
                    PacketKind::MihEvent,
                    self.wiring.lma,
                    self.wiring.mag_entity[old],
                    now,
                    "flush_notify",
                );
                let old_link = self.wiring.link_lma_mag[old];
                self.send_link(eng, old_link, self.wiring.lma, notify);
            }
        }
        Ok(())
    }

    fn lma_data(&mut self, eng: &mut Engine<Msg>, mut p: Packet) -> Result<(), String> {
        let from = p.prev_hop().ok_or("data with empty path at LMA")?;
        match self.wiring.kind_of(from) {
            EntityKind::Cn => {
                if p.dst != self.wiring.mh {
                    return Err("downlink data for an unknown destination".into());
                }
                if self.lma.fence {
                    self.lma.pending.push_back(p);
                    return Ok(());
                }
                self.lma_route_downlink(eng, p);
                Ok(())
            }
            EntityKind::Mag(m) => {
                p.tunneled = false;
                if p.dst == self.wiring.cn {
                    let link = self.wiring.link_cn_lma;
                    self.send_link(eng, link, self.wiring.lma, p);
                    return Ok(());
                }
                // Downlink data returned by a capturing MAG (anchor-side
                // buffering): hold it while that MAG is still the binding,
                // otherwise send it straight down the new tunnel.
                let serving = self.lma.bindings.get(&p.dst).map(|b| b.serving_mag);
                if serving == Some(m) {
                    if let Some(evicted) = Self::hold_push(
                        &mut self.lma.hold_q,
                        self.cfg.buffer_capacity,
                        p,
                    ) {
                        self.lma.hold_drops += 1;
                        self.record_buffer_drop(&evicted);
                    }
                } else {
                    if let Some(e) = self.stats.current_episode() {
                        e.flushed += 1;
                    }
                    self.lma_route_downlink(eng, p);
                }
                Ok(())
            }
            _ => Err("data reached the LMA from an unexpected hop".into()),
        }
    }

    /// Forwards downlink through the tunnel matching the live binding.
    pub(crate) fn lma_route_downlink(&mut self, eng: &mut Engine<Msg>, mut p: Packet) {
        let now = eng.now();
        let live = self.lma.bindings.get(&p.dst).filter(|b| {
            b.last_update + b.lifetime >= now
        });
        let Some(entry) = live else {
            self.stats.lma_no_binding_drops += 1;
            let lma = self.wiring.lma;
            self.record_loss(&p, LossCause::NoBinding, lma);
            return;
        };
        let mag = entry.serving_mag;
        p.tunneled = true;
        let link = self.wiring.link_lma_mag[mag];
        self.send_link(eng, link, self.wiring.lma, p);
    }

    // ----- AAA server ---------------------------------------------------

    pub(crate) fn aaa_handle(&mut self, eng: &mut Engine<Msg>, msg: Msg) -> Result<(), String> {
        match msg {
            Msg::Deliver(p) if p.kind == PacketKind::AaaQuery => {
                let from = p.prev_hop().ok_or("AAA query with empty path")?;
                let EntityKind::Mag(mag) = self.wiring.kind_of(from) else {
                    return Err("AAA query from a non-MAG".into());
                };
                self.stats.aaa_one_way_traversals += 1;
                let reply = self.signal_packet(
                    PacketKind::AaaReply,
                    self.wiring.aaa,
                    self.wiring.mag_entity[mag],
                    eng.now(),
                    "",
                );
                let link = self.wiring.link_mag_aaa[mag];
                self.send_link(eng, link, self.wiring.aaa, reply);
                Ok(())
            }
            other => Err(format!("AAA cannot handle {:?}", other.kindname())),
        }
    }
}

impl Msg {
    fn kindname(&self) -> &'static str {
        use crate::engine::LogPayload;
        self.kind()
    }
}

/// Records one buffering episode; opened by the predictive trigger.
pub(crate) fn open_episode(stats: &mut crate::world::RunStats) {
    stats.episodes.push(HoldEpisode::default());
}
