//! Scenario files: named-section plain text (TOML), strict about unknown
//! keys, validated as a whole before anything runs.

use std::collections::BTreeMap;

use serde::Deserialize;

use crate::analytics::LatencyParams;
use crate::engine::{Engine, EntityId};
use crate::time::{SimDuration, SimTime};
use crate::topology::{link_events_for_path, LinkEventKind, LinkSpec, MobilityPath, Network, RadioCell};
use crate::traffic::{CbrFlowSpec, TcpLiteFlowSpec, TcpLiteReceiver, TcpLiteState};
use crate::video::{video_generate, VideoSchedule};
use crate::world::{
    BufferAt, EntityKind, FlowRuntime, FlowStats, Msg, SimWorld, Variant, Wiring, WorldConfig,
};
use crate::packet::FlowId;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub run: RunSection,
    pub protocol: ProtocolSection,
    #[serde(default)]
    pub mih: MihSection,
    pub topology: TopologySection,
    pub mobility: MobilitySection,
    #[serde(default)]
    pub flows: FlowsSection,
    #[serde(default)]
    pub video: VideoSection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub duration_s: f64,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

fn default_seed() -> u64 {
    1
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolSection {
    pub variant: String,
    #[serde(default = "d_channels")]
    pub channels_total: u32,
    #[serde(default = "d_probe_ms")]
    pub per_channel_probe_ms: f64,
    /// Optional explicit full-scan time; must equal
    /// `channels_total * per_channel_probe_ms` when given.
    #[serde(default)]
    pub scan_ms: Option<f64>,
    #[serde(default = "d_reassoc_ms")]
    pub reassoc_ms: f64,
    #[serde(default = "d_attach_ms")]
    pub attach_notify_ms: f64,
    #[serde(default = "d_config_ms")]
    pub addr_config_ms: f64,
    #[serde(default = "d_dad_ms")]
    pub dad_ms: f64,
    #[serde(default)]
    pub lma_processing_ms: f64,
    #[serde(default = "d_aaa_ms")]
    pub aaa_delay_ms: f64,
    #[serde(default = "d_sig_bytes")]
    pub signaling_bytes: u32,
    #[serde(default = "d_overhead")]
    pub tunnel_overhead_bytes: u32,
    #[serde(default = "d_lifetime_s")]
    pub binding_lifetime_s: f64,
}

fn d_channels() -> u32 {
    11
}
fn d_probe_ms() -> f64 {
    5.0
}
fn d_reassoc_ms() -> f64 {
    4.0
}
fn d_attach_ms() -> f64 {
    1.0
}
fn d_config_ms() -> f64 {
    10.0
}
fn d_dad_ms() -> f64 {
    1000.0
}
fn d_aaa_ms() -> f64 {
    2.0
}
fn d_sig_bytes() -> u32 {
    64
}
fn d_overhead() -> u32 {
    40
}
fn d_lifetime_s() -> f64 {
    300.0
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MihSection {
    #[serde(default = "d_buffer_at")]
    pub buffer_at: String,
    #[serde(default = "d_buffer_capacity")]
    pub buffer_capacity: usize,
    /// Context-transfer routing between neighbor MAGs: through the anchor
    /// hierarchy (twice the MAG-anchor delay) or a direct link.
    #[serde(default = "d_nd_route")]
    pub nd_route: String,
    #[serde(default = "d_nd_direct_ms")]
    pub nd_direct_delay_ms: f64,
    #[serde(default)]
    pub hints: Vec<ChannelHint>,
}

fn d_buffer_at() -> String {
    "pmag".into()
}
fn d_buffer_capacity() -> usize {
    1000
}
fn d_nd_route() -> String {
    "via_lma".into()
}
fn d_nd_direct_ms() -> f64 {
    1.0
}

impl Default for MihSection {
    fn default() -> Self {
        MihSection {
            buffer_at: d_buffer_at(),
            buffer_capacity: d_buffer_capacity(),
            nd_route: d_nd_route(),
            nd_direct_delay_ms: d_nd_direct_ms(),
            hints: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelHint {
    pub ap: String,
    pub channel: u32,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologySection {
    #[serde(default = "d_bw_mbps")]
    pub default_bandwidth_mbps: f64,
    #[serde(default = "d_queue")]
    pub default_queue: usize,
    pub links: Vec<LinkConfig>,
    pub cells: Vec<CellConfig>,
}

fn d_bw_mbps() -> f64 {
    100.0
}
fn d_queue() -> usize {
    1000
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkConfig {
    pub a: String,
    pub b: String,
    pub delay_ms: f64,
    #[serde(default)]
    pub bandwidth_mbps: Option<f64>,
    #[serde(default)]
    pub queue: Option<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellConfig {
    pub ap: String,
    pub mag: String,
    pub center_m: f64,
    pub radius_m: f64,
    pub lgd_m: f64,
    pub ld_m: f64,
    #[serde(default = "d_beacon_ms")]
    pub beacon_ms: f64,
    pub wireless_delay_ms: f64,
    #[serde(default)]
    pub wireless_bandwidth_mbps: Option<f64>,
    #[serde(default)]
    pub wireless_queue: Option<usize>,
}

fn d_beacon_ms() -> f64 {
    100.0
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MobilitySection {
    #[serde(default)]
    pub start_m: f64,
    pub speed_mps: f64,
    #[serde(default)]
    pub start_s: f64,
    /// Speed list used by the sweep verb when no explicit sweep is given.
    #[serde(default)]
    pub speeds_mps: Vec<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowsSection {
    #[serde(default)]
    pub cbr: Vec<CbrConfig>,
    #[serde(default)]
    pub tcp: Vec<TcpConfig>,
    #[serde(default)]
    pub video: Vec<VideoConfig>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CbrConfig {
    pub name: String,
    pub packet_bytes: u32,
    pub interval_ms: f64,
    pub start_s: f64,
    pub stop_s: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TcpConfig {
    pub name: String,
    #[serde(default = "d_segment")]
    pub segment_bytes: u32,
    #[serde(default = "d_ack")]
    pub ack_bytes: u32,
    #[serde(default = "d_init_cwnd")]
    pub init_cwnd: u32,
    #[serde(default = "d_max_cwnd")]
    pub max_cwnd: u32,
    pub rto_ms: f64,
    pub start_s: f64,
    pub stop_s: f64,
}

fn d_segment() -> u32 {
    1040
}
fn d_ack() -> u32 {
    40
}
fn d_init_cwnd() -> u32 {
    1
}
fn d_max_cwnd() -> u32 {
    20
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VideoConfig {
    pub name: String,
    #[serde(default = "d_gop")]
    pub gop: String,
    #[serde(default = "d_fps")]
    pub fps: u32,
    #[serde(default = "d_i_bytes")]
    pub i_bytes: u32,
    #[serde(default = "d_p_bytes")]
    pub p_bytes: u32,
    #[serde(default = "d_b_bytes")]
    pub b_bytes: u32,
    #[serde(default = "d_vpacket")]
    pub packet_bytes: u32,
    #[serde(default = "d_vinterval")]
    pub packet_interval_ms: f64,
    pub start_s: f64,
    pub frames: u32,
    #[serde(default)]
    pub strict_b_refs: bool,
}

fn d_gop() -> String {
    "IBBPBBPBBPBB".into()
}
fn d_fps() -> u32 {
    30
}
fn d_i_bytes() -> u32 {
    8192
}
fn d_p_bytes() -> u32 {
    3072
}
fn d_b_bytes() -> u32 {
    1024
}
fn d_vpacket() -> u32 {
    1028
}
fn d_vinterval() -> f64 {
    1.0
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VideoSection {
    #[serde(default = "d_width")]
    pub width: u32,
    #[serde(default = "d_height")]
    pub height: u32,
    #[serde(default = "d_bpp")]
    pub bits_per_pixel: u32,
    #[serde(default = "d_cap")]
    pub psnr_cap_db: f64,
}

fn d_width() -> u32 {
    352
}
fn d_height() -> u32 {
    288
}
fn d_bpp() -> u32 {
    8
}
fn d_cap() -> f64 {
    100.0
}

impl Default for VideoSection {
    fn default() -> Self {
        VideoSection {
            width: d_width(),
            height: d_height(),
            bits_per_pixel: d_bpp(),
            psnr_cap_db: d_cap(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("cannot read scenario file: {0}")]
    Io(#[from] std::io::Error),
    #[error("scenario parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("scenario validation failed:\n{}", .0.join("\n"))]
    Invalid(Vec<String>),
}

/// Parses and fully validates a scenario file; either a usable scenario or
/// the complete list of validation errors.
pub fn load_scenario(path: &std::path::Path) -> Result<Scenario, ScenarioError> {
    let text = std::fs::read_to_string(path)?;
    let scenario: Scenario = toml::from_str(&text)?;
    let errors = validate(&scenario);
    if errors.is_empty() {
        Ok(scenario)
    } else {
        Err(ScenarioError::Invalid(errors))
    }
}

impl Scenario {
    pub fn variant(&self) -> Option<Variant> {
        match self.protocol.variant.as_str() {
            "pmipv6" => Some(Variant::Pmipv6),
            "pmipv6_mih" => Some(Variant::Pmipv6Mih),
            _ => None,
        }
    }
}

/// Collects every validation error instead of stopping at the first.
pub fn validate(s: &Scenario) -> Vec<String> {
    let mut errors: Vec<String> = Vec::new();

    if s.variant().is_none() {
        errors.push(format!(
            "protocol.variant: unknown variant '{}' (expected pmipv6 or pmipv6_mih)",
            s.protocol.variant
        ));
    }
    if s.run.duration_s <= 0.0 {
        errors.push("run.duration_s must be positive".into());
    }
    for (name, v) in [
        ("protocol.per_channel_probe_ms", s.protocol.per_channel_probe_ms),
        ("protocol.reassoc_ms", s.protocol.reassoc_ms),
        ("protocol.attach_notify_ms", s.protocol.attach_notify_ms),
        ("protocol.addr_config_ms", s.protocol.addr_config_ms),
        ("protocol.dad_ms", s.protocol.dad_ms),
        ("protocol.lma_processing_ms", s.protocol.lma_processing_ms),
        ("protocol.aaa_delay_ms", s.protocol.aaa_delay_ms),
        ("protocol.binding_lifetime_s", s.protocol.binding_lifetime_s),
        ("mih.nd_direct_delay_ms", s.mih.nd_direct_delay_ms),
    ] {
        if !(v.is_finite() && v >= 0.0) {
            errors.push(format!("{name} must be a non-negative number, got {v}"));
        }
    }
    if let Some(scan) = s.protocol.scan_ms {
        let derived = s.protocol.channels_total as f64 * s.protocol.per_channel_probe_ms;
        if (scan - derived).abs() > 1e-9 {
            errors.push(format!(
                "protocol.scan_ms ({scan}) must equal channels_total * per_channel_probe_ms ({derived})"
            ));
        }
    }
    match s.mih.buffer_at.as_str() {
        "pmag" | "lma" => {}
        other => errors.push(format!(
            "mih.buffer_at: unknown value '{other}' (expected pmag or lma)"
        )),
    }
    match s.mih.nd_route.as_str() {
        "via_lma" | "direct" => {}
        other => errors.push(format!(
            "mih.nd_route: unknown value '{other}' (expected via_lma or direct)"
        )),
    }

    // Entity name universe.
    let mut names: Vec<String> = vec!["cn".into(), "lma".into(), "aaa".into(), "mh".into()];
    for c in &s.topology.cells {
        names.push(c.ap.clone());
        names.push(c.mag.clone());
    }
    for l in &s.topology.links {
        for end in [&l.a, &l.b] {
            if !names.contains(end) {
                errors.push(format!("topology.links: unknown endpoint '{end}'"));
            }
        }
        if !(l.delay_ms.is_finite() && l.delay_ms >= 0.0) {
            errors.push(format!("topology.links {}-{}: delay must be >= 0", l.a, l.b));
        }
        if l.bandwidth_mbps.unwrap_or(s.topology.default_bandwidth_mbps) <= 0.0 {
            errors.push(format!("topology.links {}-{}: bandwidth must be > 0", l.a, l.b));
        }
    }
    let has_link = |a: &str, b: &str| {
        s.topology
            .links
            .iter()
            .any(|l| (l.a == a && l.b == b) || (l.a == b && l.b == a))
    };
    if !has_link("cn", "lma") {
        errors.push("topology: missing the cn-lma link".into());
    }
    if s.topology.cells.is_empty() {
        errors.push("topology: at least one cell is required".into());
    }
    let mut seen_aps = Vec::new();
    for c in &s.topology.cells {
        if seen_aps.contains(&c.ap) {
            errors.push(format!("topology.cells: AP '{}' appears twice", c.ap));
        }
        seen_aps.push(c.ap.clone());
        if !(0.0 < c.lgd_m && c.lgd_m < c.ld_m && c.ld_m <= c.radius_m) {
            errors.push(format!(
                "topology.cells {}: thresholds must satisfy 0 < lgd_m < ld_m <= radius_m",
                c.ap
            ));
        }
        if c.beacon_ms <= 0.0 {
            errors.push(format!("topology.cells {}: beacon_ms must be positive", c.ap));
        }
        if c.wireless_delay_ms < 0.0 {
            errors.push(format!(
                "topology.cells {}: wireless_delay_ms must be >= 0",
                c.ap
            ));
        }
        if !has_link(&c.mag, &c.ap) {
            errors.push(format!("topology: missing the {}-{} link", c.mag, c.ap));
        }
        if !has_link("lma", &c.mag) {
            errors.push(format!("topology: missing the lma-{} link", c.mag));
        }
    }
    {
        let mut sorted = s.topology.cells.clone();
        sorted.sort_by(|x, y| x.center_m.partial_cmp(&y.center_m).unwrap());
        for pair in sorted.windows(2) {
            if pair[0].mag == pair[1].mag {
                errors.push(format!(
                    "topology.cells: adjacent cells {} and {} must be served by distinct MAGs",
                    pair[0].ap, pair[1].ap
                ));
            }
        }
    }
    for h in &s.mih.hints {
        if !s.topology.cells.iter().any(|c| c.ap == h.ap) {
            errors.push(format!("mih.hints: unknown AP '{}'", h.ap));
        }
    }
    if !s
        .topology
        .cells
        .iter()
        .any(|c| (s.mobility.start_m - c.center_m).abs() <= c.radius_m)
    {
        errors.push("mobility.start_m must lie inside at least one cell".into());
    }
    if s.mobility.start_s < 0.0 {
        errors.push("mobility.start_s must be >= 0".into());
    }

    let mut flow_names: Vec<String> = Vec::new();
    fn check_flow(
        errors: &mut Vec<String>,
        flow_names: &mut Vec<String>,
        name: &str,
        start: f64,
        stop: f64,
    ) {
        if flow_names.iter().any(|n| n == name) {
            errors.push(format!("flows: duplicate flow name '{name}'"));
        } else {
            flow_names.push(name.to_string());
        }
        if start < 0.0 || stop < start {
            errors.push(format!("flows.{name}: need 0 <= start_s <= stop_s"));
        }
    }
    for f in &s.flows.cbr {
        check_flow(&mut errors, &mut flow_names, &f.name, f.start_s, f.stop_s);
        if f.interval_ms <= 0.0 {
            errors.push(format!("flows.{}: interval_ms must be positive", f.name));
        }
        if f.packet_bytes == 0 {
            errors.push(format!("flows.{}: packet_bytes must be positive", f.name));
        }
    }
    for f in &s.flows.tcp {
        check_flow(&mut errors, &mut flow_names, &f.name, f.start_s, f.stop_s);
        if f.rto_ms <= 0.0 {
            errors.push(format!("flows.{}: rto_ms must be positive", f.name));
        }
        if f.segment_bytes == 0 {
            errors.push(format!("flows.{}: segment_bytes must be positive", f.name));
        }
    }
    for f in &s.flows.video {
        check_flow(&mut errors, &mut flow_names, &f.name, f.start_s, f.start_s);
        if let Err(e) = crate::video::parse_gop(&f.gop) {
            errors.push(format!("flows.{}: {e}", f.name));
        }
        if f.fps == 0 {
            errors.push(format!("flows.{}: fps must be positive", f.name));
        }
        if f.frames == 0 {
            errors.push(format!("flows.{}: frames must be positive", f.name));
        }
        if f.packet_bytes == 0 {
            errors.push(format!("flows.{}: packet_bytes must be positive", f.name));
        }
    }
    errors
}

/// A ready-to-run simulation: the engine preloaded with the scenario's
/// initial events and the world holding all entity state.
pub struct BuiltSim {
    pub engine: Engine<Msg>,
    pub world: SimWorld,
    pub horizon: SimTime,
    pub flow_names: Vec<String>,
    pub video_schedules: Vec<(FlowId, VideoSchedule)>,
}

fn mbps_to_bps(mbps: f64) -> u64 {
    (mbps * 1e6).round() as u64
}

/// Instantiates entities, links, radio events, and flow kickoffs.
/// The scenario must already validate cleanly.
pub fn build(s: &Scenario) -> Result<BuiltSim, ScenarioError> {
    let errors = validate(s);
    if !errors.is_empty() {
        return Err(ScenarioError::Invalid(errors));
    }
    let variant = s.variant().expect("validated");
    let mut engine: Engine<Msg> = Engine::new();

    // Cells sorted along the mobility axis define the index spaces.
    let mut cells_cfg = s.topology.cells.clone();
    cells_cfg.sort_by(|x, y| x.center_m.partial_cmp(&y.center_m).unwrap());

    let mh = engine.register_entity("mh");
    let mut kinds = vec![EntityKind::Mh];
    let mut ap_entity = Vec::new();
    let mut mag_names: Vec<String> = Vec::new();
    let mut mag_of_cell = Vec::new();
    for c in &cells_cfg {
        let ap = engine.register_entity(&c.ap);
        kinds.push(EntityKind::Ap(ap_entity.len()));
        ap_entity.push(ap);
        let mag_idx = match mag_names.iter().position(|m| *m == c.mag) {
            Some(i) => i,
            None => {
                mag_names.push(c.mag.clone());
                mag_names.len() - 1
            }
        };
        mag_of_cell.push(mag_idx);
    }
    let mut mag_entity = Vec::new();
    for name in &mag_names {
        let e = engine.register_entity(name);
        kinds.push(EntityKind::Mag(mag_entity.len()));
        mag_entity.push(e);
    }
    let lma = engine.register_entity("lma");
    kinds.push(EntityKind::Lma);
    let cn = engine.register_entity("cn");
    kinds.push(EntityKind::Cn);
    let aaa = engine.register_entity("aaa");
    kinds.push(EntityKind::Aaa);

    let by_name = |name: &str| -> EntityId {
        if name == "mh" {
            return mh;
        }
        if name == "lma" {
            return lma;
        }
        if name == "cn" {
            return cn;
        }
        if name == "aaa" {
            return aaa;
        }
        if let Some(i) = cells_cfg.iter().position(|c| c.ap == name) {
            return ap_entity[i];
        }
        if let Some(i) = mag_names.iter().position(|m| m == name) {
            return mag_entity[i];
        }
        unreachable!("validated entity name {name}")
    };

    let mut net = Network::default();
    let default_bw = mbps_to_bps(s.topology.default_bandwidth_mbps);
    let mut configured: BTreeMap<(u32, u32), crate::topology::LinkId> = BTreeMap::new();
    for l in &s.topology.links {
        let a = by_name(&l.a);
        let b = by_name(&l.b);
        let id = net.add_link(LinkSpec {
            a,
            b,
            one_way_delay: SimDuration::from_ms_f64(l.delay_ms),
            bandwidth_bps: l.bandwidth_mbps.map(mbps_to_bps).unwrap_or(default_bw),
            queue_capacity: l.queue.unwrap_or(s.topology.default_queue),
        });
        let key = (a.index().min(b.index()) as u32, a.index().max(b.index()) as u32);
        configured.insert(key, id);
    }
    let link_between = |configured: &BTreeMap<(u32, u32), crate::topology::LinkId>,
                        a: EntityId,
                        b: EntityId| {
        let key = (a.index().min(b.index()) as u32, a.index().max(b.index()) as u32);
        *configured.get(&key).expect("validated link presence")
    };

    let link_cn_lma = link_between(&configured, cn, lma);
    let link_lma_mag: Vec<_> = mag_entity
        .iter()
        .map(|m| link_between(&configured, lma, *m))
        .collect();
    let link_mag_ap: Vec<_> = (0..cells_cfg.len())
        .map(|c| link_between(&configured, mag_entity[mag_of_cell[c]], ap_entity[c]))
        .collect();

    // AAA links are part of the protocol model, created from the configured
    // MAG-AAA delay rather than listed in the topology.
    let aaa_delay = SimDuration::from_ms_f64(s.protocol.aaa_delay_ms);
    let link_mag_aaa: Vec<_> = mag_entity
        .iter()
        .map(|m| {
            net.add_link(LinkSpec {
                a: *m,
                b: aaa,
                one_way_delay: aaa_delay,
                bandwidth_bps: default_bw,
                queue_capacity: s.topology.default_queue,
            })
        })
        .collect();

    // Context-transfer path between the MAGs of consecutive cells: routed
    // through the anchor hierarchy by default (twice the MAG-anchor delay),
    // or a direct link when configured.
    let lma_mag_delay: Vec<f64> = mag_names
        .iter()
        .map(|m| {
            s.topology
                .links
                .iter()
                .find(|l| {
                    (l.a == "lma" && l.b == *m) || (l.b == "lma" && l.a == *m)
                })
                .map(|l| l.delay_ms)
                .expect("validated lma-mag link")
        })
        .collect();
    let mut ctx_link = Vec::new();
    for c in 0..cells_cfg.len().saturating_sub(1) {
        let m1 = mag_of_cell[c];
        let m2 = mag_of_cell[c + 1];
        let delay_ms = match s.mih.nd_route.as_str() {
            "direct" => s.mih.nd_direct_delay_ms,
            _ => lma_mag_delay[m1] + lma_mag_delay[m2],
        };
        ctx_link.push(net.add_link(LinkSpec {
            a: mag_entity[m1],
            b: mag_entity[m2],
            one_way_delay: SimDuration::from_ms_f64(delay_ms),
            bandwidth_bps: default_bw,
            queue_capacity: s.topology.default_queue,
        }));
    }

    for (i, c) in cells_cfg.iter().enumerate() {
        net.add_cell(
            RadioCell {
                ap: ap_entity[i],
                mag: mag_entity[mag_of_cell[i]],
                center_m: c.center_m,
                radius_m: c.radius_m,
                lgd_threshold_m: c.lgd_m,
                ld_threshold_m: c.ld_m,
                beacon_interval: SimDuration::from_ms_f64(c.beacon_ms),
                wireless_delay: SimDuration::from_ms_f64(c.wireless_delay_ms),
                wireless_bandwidth_bps: c
                    .wireless_bandwidth_mbps
                    .map(mbps_to_bps)
                    .unwrap_or(default_bw),
                wireless_queue_capacity: c.wireless_queue.unwrap_or(s.topology.default_queue),
            },
            mh,
        );
    }
    let path = MobilityPath {
        start_position_m: s.mobility.start_m,
        velocity_mps: s.mobility.speed_mps,
        start_time: SimTime::from_secs_f64(s.mobility.start_s),
    };
    net.path = Some(path);

    // Latency parameters: wired delays come from the topology, timer terms
    // from the protocol section, so there is a single source of truth.
    let probe = SimDuration::from_ms_f64(s.protocol.per_channel_probe_ms);
    let scan = probe * s.protocol.channels_total as u64;
    let hinted: std::collections::BTreeSet<u32> =
        s.mih.hints.iter().map(|h| h.channel).collect();
    let hinted_channels = hinted.len() as u32;
    let scan_reduced = crate::mih::scan_with_hints(s.protocol.channels_total, probe, hinted_channels);
    let cn_lma_ms = s
        .topology
        .links
        .iter()
        .find(|l| (l.a == "cn" && l.b == "lma") || (l.a == "lma" && l.b == "cn"))
        .map(|l| l.delay_ms)
        .unwrap_or(0.0);
    let params = LatencyParams {
        mh_ap: SimDuration::from_ms_f64(cells_cfg[0].wireless_delay_ms),
        ap_mag: net.links[link_mag_ap[0].0].spec.one_way_delay,
        mag_lma: SimDuration::from_ms_f64(lma_mag_delay[0]),
        lma_cn: SimDuration::from_ms_f64(cn_lma_ms),
        cn_mag: SimDuration::from_ms_f64(cn_lma_ms + lma_mag_delay[0]),
        mag_aaa: aaa_delay,
        scan,
        scan_reduced,
        reassoc: SimDuration::from_ms_f64(s.protocol.reassoc_ms),
        attach_notify: SimDuration::from_ms_f64(s.protocol.attach_notify_ms),
        addr_config: SimDuration::from_ms_f64(s.protocol.addr_config_ms),
        dad: SimDuration::from_ms_f64(s.protocol.dad_ms),
        lma_processing: SimDuration::from_ms_f64(s.protocol.lma_processing_ms),
        channels_total: s.protocol.channels_total,
        per_channel_probe: probe,
    };

    let cfg = WorldConfig {
        variant,
        signaling_bytes: s.protocol.signaling_bytes,
        ack_bytes: 40,
        tunnel_overhead_bytes: s.protocol.tunnel_overhead_bytes,
        binding_lifetime: SimDuration::from_secs_f64(s.protocol.binding_lifetime_s),
        buffer_at: if s.mih.buffer_at == "lma" {
            BufferAt::Lma
        } else {
            BufferAt::PMag
        },
        buffer_capacity: s.mih.buffer_capacity,
        hinted_channels,
    };

    let wiring = Wiring {
        mh,
        cn,
        lma,
        aaa,
        ap_entity: ap_entity.clone(),
        mag_entity: mag_entity.clone(),
        mag_of_cell: mag_of_cell.clone(),
        link_cn_lma,
        link_lma_mag,
        link_mag_ap,
        link_mag_aaa,
        ctx_link,
        kinds,
    };

    let mag_count = mag_entity.len();
    let mut world = SimWorld::new(cfg, params, wiring, net, mag_count);

    let horizon = SimTime::from_secs_f64(s.run.duration_s);

    // Initial events, in a fixed order so same-instant ties are stable:
    // power-on, radio crossings, beacons, then flow kickoffs.
    engine
        .schedule(
            SimTime::from_secs_f64(s.mobility.start_s) - SimTime::ZERO,
            mh,
            Msg::PowerOn,
        )
        .expect("fresh engine");
    for (t, cell, kind) in link_events_for_path(&world.net.cells, &path, horizon) {
        let target = match kind {
            LinkEventKind::LinkGoingDown => world.net.cells[cell].mag,
            _ => mh,
        };
        engine
            .schedule(t - SimTime::ZERO, target, Msg::Radio { cell, kind })
            .expect("fresh engine");
    }
    for (i, c) in world.net.cells.iter().enumerate() {
        engine
            .schedule(c.beacon_interval, c.ap, Msg::Beacon { cell: i })
            .expect("fresh engine");
    }

    let mut flow_names = Vec::new();
    let mut video_schedules = Vec::new();
    for f in &s.flows.cbr {
        let flow = FlowId(world.flows.len() as u32);
        flow_names.push(f.name.clone());
        world.stats.flows.push(FlowStats {
            name: f.name.clone(),
            ..Default::default()
        });
        let spec = CbrFlowSpec {
            packet_bytes: f.packet_bytes,
            interval: SimDuration::from_ms_f64(f.interval_ms),
            start: SimTime::from_secs_f64(f.start_s),
            stop: SimTime::from_secs_f64(f.stop_s),
        };
        engine
            .schedule(spec.start - SimTime::ZERO, cn, Msg::CbrSend { flow, seq: 0 })
            .expect("fresh engine");
        world.flows.push(FlowRuntime::Cbr { spec });
    }
    for f in &s.flows.tcp {
        let flow = FlowId(world.flows.len() as u32);
        flow_names.push(f.name.clone());
        world.stats.flows.push(FlowStats {
            name: f.name.clone(),
            ..Default::default()
        });
        let spec = TcpLiteFlowSpec {
            segment_bytes: f.segment_bytes,
            ack_bytes: f.ack_bytes,
            init_cwnd: f.init_cwnd,
            max_cwnd: f.max_cwnd,
            rto: SimDuration::from_ms_f64(f.rto_ms),
            start: SimTime::from_secs_f64(f.start_s),
            stop: SimTime::from_secs_f64(f.stop_s),
        };
        engine
            .schedule(spec.start - SimTime::ZERO, cn, Msg::FlowStart { flow })
            .expect("fresh engine");
        let state = TcpLiteState::new(&spec);
        world.flows.push(FlowRuntime::Tcp {
            spec,
            state,
            receiver: TcpLiteReceiver::default(),
            rto: None,
        });
    }
    for f in &s.flows.video {
        let flow = FlowId(world.flows.len() as u32);
        flow_names.push(f.name.clone());
        world.stats.flows.push(FlowStats {
            name: f.name.clone(),
            ..Default::default()
        });
        let sizes = (f.i_bytes, f.p_bytes, f.b_bytes);
        let schedule = video_generate(
            &f.gop,
            move |class| match class {
                crate::packet::FrameClass::I => sizes.0,
                crate::packet::FrameClass::P => sizes.1,
                crate::packet::FrameClass::B => sizes.2,
            },
            f.fps,
            f.frames,
            f.packet_bytes,
            SimDuration::from_ms_f64(f.packet_interval_ms),
            SimTime::from_secs_f64(f.start_s),
            f.strict_b_refs,
        )
        .expect("validated GOP");
        if let Some(first) = schedule.packets.first() {
            engine
                .schedule(first.send_at - SimTime::ZERO, cn, Msg::VideoSend { flow, pkt: 0 })
                .expect("fresh engine");
        }
        video_schedules.push((flow, schedule.clone()));
        world.flows.push(FlowRuntime::Video { schedule });
    }

    Ok(BuiltSim {
        engine,
        world,
        horizon,
        flow_names,
        video_schedules,
    })
}

/// Applies one `--sweep key=value` override. Returns an error naming the key
/// when it is not sweepable.
pub fn apply_override(s: &mut Scenario, key: &str, value: &str) -> Result<(), String> {
    let as_f64 = || -> Result<f64, String> {
        value
            .parse::<f64>()
            .map_err(|_| format!("value '{value}' for '{key}' is not a number"))
    };
    match key {
        "mobility.speed_mps" => s.mobility.speed_mps = as_f64()?,
        "protocol.per_channel_probe_ms" => {
            s.protocol.per_channel_probe_ms = as_f64()?;
            s.protocol.scan_ms = None;
        }
        "protocol.reassoc_ms" => s.protocol.reassoc_ms = as_f64()?,
        "protocol.attach_notify_ms" => s.protocol.attach_notify_ms = as_f64()?,
        "protocol.aaa_delay_ms" => s.protocol.aaa_delay_ms = as_f64()?,
        "protocol.addr_config_ms" => s.protocol.addr_config_ms = as_f64()?,
        "protocol.dad_ms" => s.protocol.dad_ms = as_f64()?,
        "protocol.lma_processing_ms" => s.protocol.lma_processing_ms = as_f64()?,
        "mih.buffer_capacity" => {
            s.mih.buffer_capacity = value
                .parse::<usize>()
                .map_err(|_| format!("value '{value}' for '{key}' is not an integer"))?;
        }
        other => return Err(format!("unknown sweep parameter '{other}'")),
    }
    Ok(())
}
