//! Closed-form handover latency model (the verification oracle), metric
//! extraction from traces, and PSNR over synthetic luminance frames.
//!
//! The closed forms sum the per-operation delays of one intra-domain
//! handover. For the baseline protocol the budget is
//! `scan + authentication (4 * mag_aaa) + reassociation` at the link layer
//! plus `attach_notify + 2 * mag_lma + mh_ap + ap_mag` at the network layer.
//! The trigger-assisted variant drops authentication and the attachment
//! notification, probes only hinted channels, and needs a single
//! MAG-to-anchor traversal before downlink resumes:
//! `scan_reduced + reassociation + mag_lma + mh_ap + ap_mag`.

use crate::engine::EntityId;
use crate::time::{SimDuration, SimTime};

/// Every delay knob of the latency model. Wired one-way delays come from the
/// scenario topology; timer-style terms come from the protocol section.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LatencyParams {
    /// One-way wireless delay MH <-> AP.
    pub mh_ap: SimDuration,
    /// One-way delay AP <-> MAG.
    pub ap_mag: SimDuration,
    /// One-way delay MAG <-> LMA.
    pub mag_lma: SimDuration,
    /// One-way delay LMA <-> CN.
    pub lma_cn: SimDuration,
    /// One-way delay CN <-> MAG (via the anchor hierarchy).
    pub cn_mag: SimDuration,
    /// One-way delay MAG <-> AAA server.
    pub mag_aaa: SimDuration,
    /// Full channel scan: `channels_total * per_channel_probe`.
    pub scan: SimDuration,
    /// Hint-assisted scan: `per_channel_probe * hinted_channels`.
    pub scan_reduced: SimDuration,
    pub reassoc: SimDuration,
    /// AP-to-MAG attachment notification delay.
    pub attach_notify: SimDuration,
    /// Address configuration time, domain entry only.
    pub addr_config: SimDuration,
    /// Duplicate address detection, domain entry only.
    pub dad: SimDuration,
    pub lma_processing: SimDuration,
    pub channels_total: u32,
    pub per_channel_probe: SimDuration,
}

impl Default for LatencyParams {
    fn default() -> Self {
        LatencyParams {
            mh_ap: SimDuration::from_ms_f64(2.0),
            ap_mag: SimDuration::from_ms_f64(0.5),
            mag_lma: SimDuration::from_ms_f64(1.0),
            lma_cn: SimDuration::from_ms_f64(10.0),
            cn_mag: SimDuration::from_ms_f64(11.0),
            mag_aaa: SimDuration::from_ms_f64(2.0),
            scan: SimDuration::from_ms_f64(55.0),
            scan_reduced: SimDuration::from_ms_f64(5.0),
            reassoc: SimDuration::from_ms_f64(4.0),
            attach_notify: SimDuration::from_ms_f64(1.0),
            addr_config: SimDuration::from_ms_f64(10.0),
            dad: SimDuration::from_secs_f64(1.0),
            lma_processing: SimDuration::ZERO,
            channels_total: 11,
            per_channel_probe: SimDuration::from_ms_f64(5.0),
        }
    }
}

/// Which closed form to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LatencyCase {
    Pmipv6,
    Pmipv6Mih,
    /// First entry into the domain: address configuration, duplicate address
    /// detection, solicitation and registration. Intra-domain handovers never
    /// pay these terms.
    InitialEntry,
}

/// Result of a closed-form evaluation with a per-term breakdown.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LatencyBudget {
    pub l2: SimDuration,
    pub l3: SimDuration,
    pub terms: Vec<(&'static str, SimDuration)>,
}

impl LatencyBudget {
    pub fn total(&self) -> SimDuration {
        self.l2 + self.l3
    }
}

/// Exact per-variant latency sum. The breakdown lists every term; the l2/l3
/// split and the total are exact sums of the listed terms.
pub fn closed_form(case: LatencyCase, p: &LatencyParams) -> LatencyBudget {
    match case {
        LatencyCase::Pmipv6 => {
            let auth = p.mag_aaa * 4;
            let registration = p.mag_lma * 2 + p.lma_processing;
            let movement = p.ap_mag + p.mh_ap;
            LatencyBudget {
                l2: p.scan + auth + p.reassoc,
                l3: p.attach_notify + registration + movement,
                terms: vec![
                    ("scan", p.scan),
                    ("authentication", auth),
                    ("reassociation", p.reassoc),
                    ("attach_notify", p.attach_notify),
                    ("registration", registration),
                    ("movement_detection", movement),
                ],
            }
        }
        LatencyCase::Pmipv6Mih => {
            let registration = p.mag_lma + p.lma_processing;
            let movement = p.ap_mag + p.mh_ap;
            LatencyBudget {
                l2: p.scan_reduced + p.reassoc,
                l3: registration + movement,
                terms: vec![
                    ("scan", p.scan_reduced),
                    ("reassociation", p.reassoc),
                    ("registration", registration),
                    ("movement_detection", movement),
                ],
            }
        }
        LatencyCase::InitialEntry => {
            let registration = p.mag_lma * 2 + p.lma_processing;
            let solicitation = p.mh_ap + p.ap_mag;
            let advertisement = p.mh_ap + p.ap_mag;
            LatencyBudget {
                l2: SimDuration::ZERO,
                l3: p.addr_config + p.dad + registration + solicitation + advertisement,
                terms: vec![
                    ("addr_config", p.addr_config),
                    ("dad", p.dad),
                    ("registration", registration),
                    ("router_solicitation", solicitation),
                    ("router_advertisement", advertisement),
                ],
            }
        }
    }
}

/// One downlink data delivery at the terminal, as seen by the analytics.
#[derive(Debug, Clone, Copy)]
pub struct DeliveryView {
    pub time: SimTime,
    pub seq: u64,
    pub via_ap: EntityId,
    pub size_bytes: u32,
}

/// Measured outcome of one handover: the interval between the last data
/// packet received through the previous AP and the first received through the
/// next one.
#[derive(Debug, Clone)]
pub struct HandoverRecord {
    pub from_ap: EntityId,
    pub to_ap: Option<EntityId>,
    pub t_last_old: SimTime,
    pub t_first_new: Option<SimTime>,
    pub lost_packets: u64,
    pub buffered_packets: u64,
    pub flushed_packets: u64,
    pub fallback: bool,
}

impl HandoverRecord {
    pub fn latency(&self) -> Option<SimDuration> {
        self.t_first_new.map(|t| t - self.t_last_old)
    }

    pub fn complete(&self) -> bool {
        self.t_first_new.is_some()
    }
}

/// Extracts one record per AP transition from a flow's delivery sequence.
/// Losses are the sequence-number gap across the transition. A trailing
/// transition with no delivery through the new AP yields an incomplete
/// record. `deliveries` must be sorted by time (trace order).
pub fn measure_handover(deliveries: &[DeliveryView], detached_at_end: bool) -> Vec<HandoverRecord> {
    let mut records = Vec::new();
    for pair in deliveries.windows(2) {
        let (prev, next) = (&pair[0], &pair[1]);
        if prev.via_ap != next.via_ap {
            records.push(HandoverRecord {
                from_ap: prev.via_ap,
                to_ap: Some(next.via_ap),
                t_last_old: prev.time,
                t_first_new: Some(next.time),
                lost_packets: next.seq.saturating_sub(prev.seq + 1),
                buffered_packets: 0,
                flushed_packets: 0,
                fallback: false,
            });
        }
    }
    if detached_at_end {
        if let Some(last) = deliveries.last() {
            records.push(HandoverRecord {
                from_ap: last.via_ap,
                to_ap: None,
                t_last_old: last.time,
                t_first_new: None,
                lost_packets: 0,
                buffered_packets: 0,
                flushed_packets: 0,
                fallback: false,
            });
        }
    }
    records
}

/// Delivered payload bits per window, aligned to the run start.
/// Returns `(window_start, megabits_per_second)` pairs covering the span
/// from zero through the last delivery.
pub fn throughput_series(deliveries: &[DeliveryView], window: SimDuration) -> Vec<(SimTime, f64)> {
    assert!(window.as_us() > 0, "throughput window must be positive");
    let Some(last) = deliveries.iter().map(|d| d.time.as_us()).max() else {
        return Vec::new();
    };
    let w = window.as_us();
    let buckets = (last / w + 1) as usize;
    let mut bits = vec![0u64; buckets];
    for d in deliveries {
        bits[(d.time.as_us() / w) as usize] += d.size_bytes as u64 * 8;
    }
    bits.iter()
        .enumerate()
        .map(|(i, b)| {
            let mbps = *b as f64 / window.as_secs_f64() / 1e6;
            (SimTime::from_us(i as u64 * w), mbps)
        })
        .collect()
}

/// A synthetic luminance frame: row-major 8-bit pixels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LumaFrame {
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<u8>,
}

/// Per-frame PSNR in dB. Frames with zero error are capped instead of
/// diverging so the series stays plottable.
#[derive(Debug, Clone)]
pub struct PsnrSeries {
    pub cap_db: f64,
    /// `(frame_index, psnr_db)`; frames before the first decodable one are
    /// skipped and noted in `skipped`.
    pub values: Vec<(u32, f64)>,
    pub skipped: Vec<u32>,
}

/// PSNR of the received stream against the source, with repeat-last-decodable
/// concealment: an undecodable frame is rendered as the most recent decodable
/// one. `bits_per_pixel` sets the peak value `2^k - 1`.
pub fn psnr(
    source: &[LumaFrame],
    decodable: &[bool],
    bits_per_pixel: u32,
    cap_db: f64,
) -> PsnrSeries {
    assert_eq!(source.len(), decodable.len());
    let peak = ((1u64 << bits_per_pixel) - 1) as f64;
    let mut series = PsnrSeries {
        cap_db,
        values: Vec::with_capacity(source.len()),
        skipped: Vec::new(),
    };
    let mut last_good: Option<usize> = None;
    for (n, frame) in source.iter().enumerate() {
        if decodable[n] {
            last_good = Some(n);
        }
        let Some(shown) = last_good else {
            series.skipped.push(n as u32);
            continue;
        };
        let db = if shown == n {
            cap_db
        } else {
            let reference = &source[shown];
            assert_eq!(reference.pixels.len(), frame.pixels.len());
            let sum_sq: u64 = frame
                .pixels
                .iter()
                .zip(reference.pixels.iter())
                .map(|(a, b)| {
                    let d = *a as i64 - *b as i64;
                    (d * d) as u64
                })
                .sum();
            let mse = sum_sq as f64 / frame.pixels.len() as f64;
            if mse == 0.0 {
                cap_db
            } else {
                (20.0 * (peak / mse.sqrt()).log10()).min(cap_db)
            }
        };
        series.values.push((n as u32, db));
    }
    series
}
