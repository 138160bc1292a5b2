//! Shared helpers for integration tests: programmatic scenario construction
//! and latency extraction.

#![allow(dead_code)]

use pmipsim::report::RunOutput;
use pmipsim::scenario::{
    CbrConfig, CellConfig, ChannelHint, FlowsSection, LinkConfig, MihSection, MobilitySection,
    ProtocolSection, RunSection, Scenario, TopologySection, VideoSection,
};

/// One random draw of the latency-model parameters, in microseconds.
#[derive(Debug, Clone, Copy)]
pub struct Draw {
    pub t_pm_us: u64,
    pub t_ma_us: u64,
    pub t_ag_us: u64,
    pub t_ca_us: u64,
    pub t_a_us: u64,
    pub probe_us: u64,
    pub hinted: u32,
    pub reassoc_us: u64,
    pub attach_us: u64,
}

pub const CHANNELS: u32 = 11;
/// Link-down instant of the oracle geometry: 130 m at 10 m/s.
pub const T_LD_US: u64 = 13_000_000;

impl Draw {
    pub fn scan_us(&self) -> u64 {
        self.probe_us * CHANNELS as u64
    }
    pub fn scan_reduced_us(&self) -> u64 {
        self.probe_us * self.hinted as u64
    }
    pub fn closed_base_us(&self) -> u64 {
        self.scan_us()
            + 4 * self.t_a_us
            + self.reassoc_us
            + self.attach_us
            + 2 * self.t_ag_us
            + self.t_ma_us
            + self.t_pm_us
    }
    pub fn closed_mih_us(&self) -> u64 {
        self.scan_reduced_us() + self.reassoc_us + self.t_ag_us + self.t_ma_us + self.t_pm_us
    }
    /// Instant the anchor processes the registration (routing switch).
    pub fn switch_us(&self, variant: &str) -> u64 {
        match variant {
            "pmipv6" => {
                T_LD_US
                    + self.scan_us()
                    + 4 * self.t_a_us
                    + self.reassoc_us
                    + self.attach_us
                    + self.t_ag_us
            }
            _ => T_LD_US + self.scan_reduced_us() + self.reassoc_us + self.t_ag_us,
        }
    }
}

fn ms(us: u64) -> f64 {
    us as f64 / 1e3
}

/// Oracle-comparison scenario: every serialization rounds to zero (1-byte
/// data, zero-size signaling, 1 Gb/s links), the predictive-trigger gap
/// equals the capture splice (`t_ma + t_pm`), and two dense 1 us probe
/// bursts bracket the disconnection instant and the routing switch so the
/// data-measured latency quantizes only to the microsecond clock.
pub fn oracle_scenario(variant: &str, d: &Draw) -> Scenario {
    let g_us = (d.t_ma_us + d.t_pm_us).max(1);
    // Place the trigger crossing exactly `g_us` before the link-down
    // crossing; the half-microsecond bias keeps the ceil rounding stable
    // against floating-point error.
    let lgd_m = ((T_LD_US - g_us) as f64 - 0.5) * 1e-5;

    // Probe burst 1 in p-MAG-arrival coordinates: a packet arriving at the
    // serving MAG needs t_ma + t_pm more to reach the MH, so arrivals around
    // this anchor produce deliveries straddling the link-down instant.
    let anchor = T_LD_US - (d.t_ma_us + d.t_pm_us);
    let wired_in = d.t_ca_us + d.t_ag_us; // CN departure -> p-MAG arrival
    let b1_start = anchor - 600 - wired_in;
    let b1_stop = anchor + 400 - wired_in;
    let t_sw = d.switch_us(variant);
    let b2_start = t_sw - 300 - d.t_ca_us;
    let b2_stop = t_sw + 1500 - d.t_ca_us;

    Scenario {
        run: RunSection {
            duration_s: 15.5,
            seed: 7,
        },
        protocol: ProtocolSection {
            variant: variant.into(),
            channels_total: CHANNELS,
            per_channel_probe_ms: ms(d.probe_us),
            scan_ms: None,
            reassoc_ms: ms(d.reassoc_us),
            attach_notify_ms: ms(d.attach_us),
            addr_config_ms: 10.0,
            dad_ms: 1000.0,
            lma_processing_ms: 0.0,
            aaa_delay_ms: ms(d.t_a_us),
            signaling_bytes: 0,
            tunnel_overhead_bytes: 0,
            binding_lifetime_s: 300.0,
        },
        mih: MihSection {
            buffer_at: "pmag".into(),
            buffer_capacity: 1_000_000,
            nd_route: "direct".into(),
            nd_direct_delay_ms: 0.001,
            hints: (0..d.hinted)
                .map(|ch| ChannelHint {
                    ap: "ap2".into(),
                    channel: ch,
                })
                .collect(),
        },
        topology: TopologySection {
            default_bandwidth_mbps: 1000.0,
            default_queue: 1_000_000,
            links: vec![
                LinkConfig {
                    a: "cn".into(),
                    b: "lma".into(),
                    delay_ms: ms(d.t_ca_us),
                    bandwidth_mbps: None,
                    queue: None,
                },
                LinkConfig {
                    a: "lma".into(),
                    b: "mag1".into(),
                    delay_ms: ms(d.t_ag_us),
                    bandwidth_mbps: None,
                    queue: None,
                },
                LinkConfig {
                    a: "lma".into(),
                    b: "mag2".into(),
                    delay_ms: ms(d.t_ag_us),
                    bandwidth_mbps: None,
                    queue: None,
                },
                LinkConfig {
                    a: "mag1".into(),
                    b: "ap1".into(),
                    delay_ms: ms(d.t_ma_us),
                    bandwidth_mbps: None,
                    queue: None,
                },
                LinkConfig {
                    a: "mag2".into(),
                    b: "ap2".into(),
                    delay_ms: ms(d.t_ma_us),
                    bandwidth_mbps: None,
                    queue: None,
                },
            ],
            cells: vec![
                CellConfig {
                    ap: "ap1".into(),
                    mag: "mag1".into(),
                    center_m: 0.0,
                    radius_m: 150.0,
                    lgd_m,
                    ld_m: 130.0,
                    beacon_ms: 100.0,
                    wireless_delay_ms: ms(d.t_pm_us),
                    wireless_bandwidth_mbps: None,
                    wireless_queue: None,
                },
                CellConfig {
                    ap: "ap2".into(),
                    mag: "mag2".into(),
                    center_m: 300.0,
                    radius_m: 2800.0,
                    lgd_m: 2700.0,
                    ld_m: 2750.0,
                    beacon_ms: 100.0,
                    wireless_delay_ms: ms(d.t_pm_us),
                    wireless_bandwidth_mbps: None,
                    wireless_queue: None,
                },
            ],
        },
        mobility: MobilitySection {
            start_m: 0.0,
            speed_mps: 10.0,
            start_s: 0.0,
            speeds_mps: vec![],
        },
        flows: FlowsSection {
            cbr: vec![
                CbrConfig {
                    name: "b1".into(),
                    packet_bytes: 1,
                    interval_ms: 0.001,
                    start_s: b1_start as f64 / 1e6,
                    stop_s: b1_stop as f64 / 1e6,
                },
                CbrConfig {
                    name: "b2".into(),
                    packet_bytes: 1,
                    interval_ms: 0.001,
                    start_s: b2_start as f64 / 1e6,
                    stop_s: b2_stop as f64 / 1e6,
                },
            ],
            tcp: vec![],
            video: vec![],
        },
        video: VideoSection::default(),
    }
}

/// Data-measured handover latency across all flows: last delivery through
/// the first AP to the first delivery through the second.
pub fn measured_latency_us(out: &RunOutput) -> Option<u64> {
    let ap1 = out.world.wiring.ap_entity[0];
    let ap2 = out.world.wiring.ap_entity[1];
    let mut last_old: Option<u64> = None;
    let mut first_new: Option<u64> = None;
    for (i, _) in out.flow_names.iter().enumerate() {
        for d in out.deliveries(pmipsim::FlowId(i as u32)) {
            if d.via_ap == ap1 {
                last_old = Some(last_old.map_or(d.time.as_us(), |v| v.max(d.time.as_us())));
            } else if d.via_ap == ap2 {
                first_new = Some(first_new.map_or(d.time.as_us(), |v| v.min(d.time.as_us())));
            }
        }
    }
    Some(first_new? - last_old?)
}

/// Fails the test when any flow or link violates conservation.
pub fn assert_conserved(out: &RunOutput, context: &str) {
    let violations = pmipsim::report::conservation_violations(out);
    assert!(
        violations.is_empty(),
        "conservation violated in {context}:\n{}",
        violations.join("\n")
    );
    assert_eq!(
        out.end_of_run_unresolved, 0,
        "{context}: packets left unresolved at end of run"
    );
}
