//! Wired links with delay/bandwidth/queueing, AP radio coverage with distance
//! thresholds, and linear 1-D mobility.
//!
//! Distance thresholds stand in for received-signal strength: each cell fires
//! `LinkDetected` when the terminal enters its radius, `LinkGoingDown` when it
//! crosses `lgd_threshold` moving away from the center, and `LinkDown` at
//! `ld_threshold`. `lgd_threshold < ld_threshold <= radius`, so on an outbound
//! pass the predictive trigger always precedes the loss of the link.

use crate::engine::EntityId;
use crate::time::{SimDuration, SimTime};

/// Index of a wired link within the `Network`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LinkId(pub usize);

/// Static description of one bidirectional point-to-point link.
#[derive(Debug, Clone)]
pub struct LinkSpec {
    pub a: EntityId,
    pub b: EntityId,
    pub one_way_delay: SimDuration,
    pub bandwidth_bps: u64,
    pub queue_capacity: usize,
}

/// Per-direction FIFO transmission state: serialization finish times of the
/// packets currently in service or waiting.
#[derive(Debug, Default, Clone)]
struct LinkDir {
    in_flight: Vec<SimTime>, // finish times, ascending; front = in service
    pub enqueued: u64,
    pub delivered: u64,
    pub dropped: u64,
}

/// Counters for one link direction, reported per run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LinkCounters {
    pub enqueued: u64,
    pub delivered: u64,
    pub dropped: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TxOutcome {
    /// Packet will reach the far end at this instant.
    Deliver(SimTime),
    /// Drop-tail: the waiting queue was full at enqueue time.
    Dropped,
}

#[derive(Debug, Clone)]
pub struct Link {
    pub spec: LinkSpec,
    ab: LinkDir,
    ba: LinkDir,
}

/// Serialization time in whole microseconds, rounded to nearest. Zero-size
/// control markers are charged a 1-bit minimum.
pub fn serialization_us(size_bits: u64, bandwidth_bps: u64) -> u64 {
    let bits = size_bits.max(1) as u128;
    let bw = bandwidth_bps as u128;
    ((bits * 1_000_000 + bw / 2) / bw) as u64
}

impl Link {
    pub fn new(spec: LinkSpec) -> Self {
        Link {
            spec,
            ab: LinkDir::default(),
            ba: LinkDir::default(),
        }
    }

    fn dir_mut(&mut self, from: EntityId) -> &mut LinkDir {
        if from == self.spec.a {
            &mut self.ab
        } else if from == self.spec.b {
            &mut self.ba
        } else {
            panic!("entity {from:?} is not an endpoint of this link");
        }
    }

    pub fn other_end(&self, from: EntityId) -> EntityId {
        if from == self.spec.a {
            self.spec.b
        } else {
            self.spec.a
        }
    }

    /// Enqueues a packet of `size_bits` at `now`. Delivery time is
    /// `queueing + serialization + one_way_delay`; the packet is dropped if
    /// the waiting queue (excluding the packet in service) is full.
    pub fn transmit(&mut self, from: EntityId, size_bits: u64, now: SimTime) -> TxOutcome {
        let delay = self.spec.one_way_delay;
        let bw = self.spec.bandwidth_bps;
        let cap = self.spec.queue_capacity;
        let dir = self.dir_mut(from);
        dir.enqueued += 1;
        dir.in_flight.retain(|finish| *finish > now);
        let waiting = dir.in_flight.len().saturating_sub(1);
        if !dir.in_flight.is_empty() && waiting >= cap {
            dir.dropped += 1;
            return TxOutcome::Dropped;
        }
        let start = dir.in_flight.last().copied().unwrap_or(now).max(now);
        let finish = start + SimDuration::from_us(serialization_us(size_bits, bw));
        dir.in_flight.push(finish);
        dir.delivered += 1;
        TxOutcome::Deliver(finish + delay)
    }

    pub fn counters(&self, from: EntityId) -> LinkCounters {
        let dir = if from == self.spec.a { &self.ab } else { &self.ba };
        LinkCounters {
            enqueued: dir.enqueued,
            delivered: dir.delivered,
            dropped: dir.dropped,
        }
    }
}

/// Radio coverage of one AP on the 1-D mobility axis.
#[derive(Debug, Clone)]
pub struct RadioCell {
    pub ap: EntityId,
    pub mag: EntityId,
    pub center_m: f64,
    pub radius_m: f64,
    pub lgd_threshold_m: f64,
    pub ld_threshold_m: f64,
    pub beacon_interval: SimDuration,
    /// One-way wireless delay between the AP and the terminal.
    pub wireless_delay: SimDuration,
    pub wireless_bandwidth_bps: u64,
    pub wireless_queue_capacity: usize,
}

impl RadioCell {
    pub fn covers(&self, pos_m: f64) -> bool {
        (pos_m - self.center_m).abs() <= self.radius_m
    }
}

/// Deterministic linear motion: `position(t) = start + velocity * (t - start_time)`.
#[derive(Debug, Clone, Copy)]
pub struct MobilityPath {
    pub start_position_m: f64,
    pub velocity_mps: f64,
    pub start_time: SimTime,
}

/// Exact linear interpolation of the terminal position.
///
/// Panics if `t` precedes the path start; callers validate scenarios so that
/// no position is ever queried before motion begins.
pub fn mh_position(path: &MobilityPath, t: SimTime) -> f64 {
    let dt = t
        .checked_sub(path.start_time)
        .expect("position queried before the mobility path starts");
    path.start_position_m + path.velocity_mps * dt.as_secs_f64()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum LinkEventKind {
    LinkDetected,
    LinkGoingDown,
    LinkDown,
}

impl LinkEventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LinkEventKind::LinkDetected => "link_detected",
            LinkEventKind::LinkGoingDown => "lgd",
            LinkEventKind::LinkDown => "ld",
        }
    }
}

/// Chronologically ordered threshold-crossing events for a terminal moving
/// along `path`, up to `horizon`. `LinkDetected` fires when entering a cell's
/// radius; `LinkGoingDown`/`LinkDown` fire when leaving past the respective
/// thresholds. A cell already covering the start position produces no
/// `LinkDetected`. A stationary terminal produces no events.
pub fn link_events_for_path(
    cells: &[RadioCell],
    path: &MobilityPath,
    horizon: SimTime,
) -> Vec<(SimTime, usize, LinkEventKind)> {
    let mut events = Vec::new();
    if path.velocity_mps == 0.0 {
        return events;
    }
    for (idx, cell) in cells.iter().enumerate() {
        let thresholds = [
            (cell.radius_m, LinkEventKind::LinkDetected, false), // entering
            (cell.lgd_threshold_m, LinkEventKind::LinkGoingDown, true), // leaving
            (cell.ld_threshold_m, LinkEventKind::LinkDown, true), // leaving
        ];
        for (threshold, kind, leaving) in thresholds {
            for boundary in [cell.center_m - threshold, cell.center_m + threshold] {
                let dt = (boundary - path.start_position_m) / path.velocity_mps;
                if dt < 0.0 {
                    continue;
                }
                // Moving toward +inf crosses `center + thr` outward and
                // `center - thr` inward; mirrored for negative velocity.
                let outward = (boundary > cell.center_m) == (path.velocity_mps > 0.0);
                if outward != leaving {
                    continue;
                }
                // First whole microsecond at/after the geometric crossing, so
                // the position has actually passed the threshold when the
                // event fires.
                let t = path.start_time + SimDuration::from_us((dt * 1e6).ceil() as u64);
                if t <= horizon {
                    events.push((t, idx, kind));
                }
            }
        }
    }
    events.sort_by_key(|(t, idx, kind)| (*t, *idx, *kind));
    events
}

/// All links and cells of one scenario, owned by a single engine instance.
#[derive(Debug, Default)]
pub struct Network {
    pub links: Vec<Link>,
    pub cells: Vec<RadioCell>,
    /// Wireless hops are modeled per cell with the same FIFO semantics as
    /// wired links; index parallel to `cells`.
    wireless: Vec<Link>,
    pub path: Option<MobilityPath>,
}

impl Network {
    pub fn add_link(&mut self, spec: LinkSpec) -> LinkId {
        self.links.push(Link::new(spec));
        LinkId(self.links.len() - 1)
    }

    pub fn add_cell(&mut self, cell: RadioCell, mh: EntityId) -> usize {
        self.wireless.push(Link::new(LinkSpec {
            a: cell.ap,
            b: mh,
            one_way_delay: cell.wireless_delay,
            bandwidth_bps: cell.wireless_bandwidth_bps,
            queue_capacity: cell.wireless_queue_capacity,
        }));
        self.cells.push(cell);
        self.cells.len() - 1
    }

    pub fn link(&mut self, id: LinkId) -> &mut Link {
        &mut self.links[id.0]
    }

    pub fn wireless(&mut self, cell: usize) -> &mut Link {
        &mut self.wireless[cell]
    }

    pub fn wireless_counters(&self, cell: usize, from: EntityId) -> LinkCounters {
        self.wireless[cell].counters(from)
    }

    pub fn position(&self, t: SimTime) -> Option<f64> {
        self.path.as_ref().map(|p| mh_position(p, t))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids() -> (EntityId, EntityId) {
        let mut e = crate::engine::Engine::<crate::world::Msg>::new();
        (e.register_entity("a"), e.register_entity("b"))
    }

    fn mk_link(a: EntityId, b: EntityId, delay_ms: f64, mbps: f64, cap: usize) -> Link {
        Link::new(LinkSpec {
            a,
            b,
            one_way_delay: SimDuration::from_ms_f64(delay_ms),
            bandwidth_bps: (mbps * 1e6) as u64,
            queue_capacity: cap,
        })
    }

    #[test]
    fn transmit_adds_serialization_then_propagation() {
        // 1000 bytes at 100 Mb/s over a 10 ms link: 80 us + 10 ms.
        let (a, b) = ids();
        let mut l = mk_link(a, b, 10.0, 100.0, 10);
        let out = l.transmit(a, 8000, SimTime::from_us(0));
        assert_eq!(out, TxOutcome::Deliver(SimTime::from_us(80 + 10_000)));
    }

    #[test]
    fn zero_size_marker_costs_at_most_the_delay() {
        let (a, b) = ids();
        let mut l = mk_link(a, b, 10.0, 100.0, 10);
        // 1-bit minimum at 100 Mb/s rounds to 0 us of serialization.
        let out = l.transmit(a, 0, SimTime::from_us(5));
        assert_eq!(out, TxOutcome::Deliver(SimTime::from_us(5 + 10_000)));
    }

    #[test]
    fn queue_of_one_delays_second_packet_by_one_serialization() {
        let (a, b) = ids();
        let mut l = mk_link(a, b, 10.0, 100.0, 1);
        let first = l.transmit(a, 8000, SimTime::ZERO);
        let second = l.transmit(a, 8000, SimTime::ZERO);
        assert_eq!(first, TxOutcome::Deliver(SimTime::from_us(10_080)));
        assert_eq!(second, TxOutcome::Deliver(SimTime::from_us(10_160)));
        // Third packet at the same instant finds the single queue slot taken.
        let third = l.transmit(a, 8000, SimTime::ZERO);
        assert_eq!(third, TxOutcome::Dropped);
        let c = l.counters(a);
        assert_eq!((c.enqueued, c.delivered, c.dropped), (3, 2, 1));
    }

    #[test]
    fn directions_have_independent_queues() {
        let (a, b) = ids();
        let mut l = mk_link(a, b, 1.0, 100.0, 0);
        assert!(matches!(l.transmit(a, 8000, SimTime::ZERO), TxOutcome::Deliver(_)));
        assert!(matches!(l.transmit(b, 8000, SimTime::ZERO), TxOutcome::Deliver(_)));
        assert_eq!(l.transmit(a, 8000, SimTime::ZERO), TxOutcome::Dropped);
    }

    #[test]
    fn fifo_delivery_order_for_equal_sizes() {
        let (a, b) = ids();
        let mut l = mk_link(a, b, 2.0, 10.0, 100);
        let mut last = SimTime::ZERO;
        for i in 0..20u64 {
            match l.transmit(a, 8000, SimTime::from_us(i * 13)) {
                TxOutcome::Deliver(at) => {
                    assert!(at > last);
                    last = at;
                }
                TxOutcome::Dropped => panic!("unexpected drop"),
            }
        }
    }

    #[test]
    fn conservation_enqueued_equals_delivered_plus_dropped() {
        let (a, b) = ids();
        let mut l = mk_link(a, b, 1.0, 1.0, 2);
        let mut sent = 0u64;
        for i in 0..50u64 {
            let _ = l.transmit(a, 10_000, SimTime::from_us(i));
            sent += 1;
        }
        let c = l.counters(a);
        assert_eq!(c.enqueued, sent);
        assert_eq!(c.enqueued, c.delivered + c.dropped);
        assert!(c.dropped > 0);
    }

    #[test]
    fn position_is_linear() {
        let path = MobilityPath {
            start_position_m: 0.0,
            velocity_mps: 20.0,
            start_time: SimTime::ZERO,
        };
        assert_eq!(mh_position(&path, SimTime::from_secs_f64(5.0)), 100.0);
        let still = MobilityPath {
            velocity_mps: 0.0,
            ..path
        };
        assert_eq!(mh_position(&still, SimTime::from_secs_f64(9.0)), 0.0);
    }

    fn two_cells(mh: EntityId, ap1: EntityId, ap2: EntityId) -> Vec<RadioCell> {
        let mk = |ap, center| RadioCell {
            ap,
            mag: mh, // unused in these tests
            center_m: center,
            radius_m: 120.0,
            lgd_threshold_m: 80.0,
            ld_threshold_m: 100.0,
            beacon_interval: SimDuration::from_ms_f64(100.0),
            wireless_delay: SimDuration::from_ms_f64(2.0),
            wireless_bandwidth_bps: 100_000_000,
            wireless_queue_capacity: 100,
        };
        vec![mk(ap1, 0.0), mk(ap2, 200.0)]
    }

    #[test]
    fn outbound_pass_fires_lgd_before_ld() {
        let (ap1, ap2) = ids();
        let cells = two_cells(ap1, ap1, ap2);
        let path = MobilityPath {
            start_position_m: 0.0,
            velocity_mps: 20.0,
            start_time: SimTime::ZERO,
        };
        let events = link_events_for_path(&cells, &path, SimTime::from_secs_f64(60.0));
        let for_a: Vec<_> = events.iter().filter(|(_, c, _)| *c == 0).collect();
        assert_eq!(for_a.len(), 2);
        assert_eq!(for_a[0].2, LinkEventKind::LinkGoingDown);
        assert_eq!(for_a[1].2, LinkEventKind::LinkDown);
        assert!(for_a[0].0 < for_a[1].0);
    }

    #[test]
    fn detection_of_next_cell_precedes_link_down_in_overlap() {
        let (ap1, ap2) = ids();
        let cells = two_cells(ap1, ap1, ap2);
        let path = MobilityPath {
            start_position_m: 0.0,
            velocity_mps: 20.0,
            start_time: SimTime::ZERO,
        };
        let events = link_events_for_path(&cells, &path, SimTime::from_secs_f64(60.0));
        let detect_b = events
            .iter()
            .find(|(_, c, k)| *c == 1 && *k == LinkEventKind::LinkDetected)
            .unwrap();
        let ld_a = events
            .iter()
            .find(|(_, c, k)| *c == 0 && *k == LinkEventKind::LinkDown)
            .unwrap();
        assert!(detect_b.0 < ld_a.0);
    }

    #[test]
    fn doubling_velocity_halves_crossing_offsets() {
        let (ap1, ap2) = ids();
        let cells = two_cells(ap1, ap1, ap2);
        let horizon = SimTime::from_secs_f64(120.0);
        let path_v = |v| MobilityPath {
            start_position_m: 0.0,
            velocity_mps: v,
            start_time: SimTime::ZERO,
        };
        let slow = link_events_for_path(&cells, &path_v(10.0), horizon);
        let fast = link_events_for_path(&cells, &path_v(20.0), horizon);
        assert_eq!(slow.len(), fast.len());
        for (s, f) in slow.iter().zip(fast.iter()) {
            assert_eq!((s.1, s.2), (f.1, f.2));
            // Ceil rounding to whole microseconds allows 1 us of slack.
            assert!((s.0.as_us() as i64 - 2 * f.0.as_us() as i64).abs() <= 1);
        }
    }

    #[test]
    fn stationary_terminal_yields_no_events() {
        let (ap1, ap2) = ids();
        let cells = two_cells(ap1, ap1, ap2);
        let path = MobilityPath {
            start_position_m: 0.0,
            velocity_mps: 0.0,
            start_time: SimTime::ZERO,
        };
        assert!(link_events_for_path(&cells, &path, SimTime::from_secs_f64(60.0)).is_empty());
    }

    /// Step-scan oracle: walk the path in 1 ms steps and record the first step
    /// at which each threshold predicate flips; the closed-form crossing must
    /// agree within one step.
    #[test]
    fn crossings_agree_with_step_scan() {
        let (ap1, ap2) = ids();
        let cells = two_cells(ap1, ap1, ap2);
        let path = MobilityPath {
            start_position_m: 0.0,
            velocity_mps: 17.0,
            start_time: SimTime::ZERO,
        };
        let horizon = SimTime::from_secs_f64(40.0);
        let events = link_events_for_path(&cells, &path, horizon);

        let step_us = 1000u64;
        let mut scanned: Vec<(u64, usize, LinkEventKind)> = Vec::new();
        for (idx, cell) in cells.iter().enumerate() {
            let mut prev: Option<f64> = None;
            let mut t = 0u64;
            let mut seen_detect = false;
            let mut seen_lgd = false;
            let mut seen_ld = false;
            while t <= horizon.as_us() {
                let d = (mh_position(&path, SimTime::from_us(t)) - cell.center_m).abs();
                if let Some(p) = prev {
                    if !seen_detect && p > cell.radius_m && d <= cell.radius_m {
                        scanned.push((t, idx, LinkEventKind::LinkDetected));
                        seen_detect = true;
                    }
                    if !seen_lgd && p < cell.lgd_threshold_m && d >= cell.lgd_threshold_m {
                        scanned.push((t, idx, LinkEventKind::LinkGoingDown));
                        seen_lgd = true;
                    }
                    if !seen_ld && p < cell.ld_threshold_m && d >= cell.ld_threshold_m {
                        scanned.push((t, idx, LinkEventKind::LinkDown));
                        seen_ld = true;
                    }
                }
                prev = Some(d);
                t += step_us;
            }
        }
        scanned.sort_by_key(|(t, idx, kind)| (*t, *idx, *kind));
        assert_eq!(events.len(), scanned.len());
        for (e, s) in events.iter().zip(scanned.iter()) {
            assert_eq!((e.1, e.2), (s.1, s.2));
            assert!(e.0.as_us() <= s.0 && s.0 - e.0.as_us() <= step_us);
        }
    }
}
