//! Run orchestration and report emission: runs a built scenario to its
//! horizon, extracts per-flow metrics, and writes the run artifacts
//! (event log, flow trace, handover records, throughput, loss report,
//! PSNR series, latency budget).

use std::fmt::Write as _;
use std::path::Path;

use crate::analytics::{
    closed_form, measure_handover, psnr, throughput_series, DeliveryView, HandoverRecord,
    LatencyCase, PsnrSeries,
};
use crate::engine::{LogRecord, RunSummary};
use crate::packet::FlowId;
use crate::scenario::{build, BuiltSim, Scenario, ScenarioError};
use crate::time::SimDuration;
use crate::video::{classify_losses, decodable_frames, format_loss_report, synthetic_frames, LossReport};
use crate::world::{LossCause, Outcome, SimWorld, Variant};

/// Everything a completed run exposes to reports and tests.
pub struct RunOutput {
    pub variant: Variant,
    pub seed: u64,
    pub summary: RunSummary,
    pub world: SimWorld,
    pub flow_names: Vec<String>,
    pub log_lines: String,
    pub log: Vec<LogRecord>,
    pub records: Vec<(FlowId, Vec<HandoverRecord>)>,
    pub video_reports: Vec<(FlowId, LossReport, Vec<bool>)>,
    pub end_of_run_unresolved: u64,
}

impl RunOutput {
    pub fn flow_id_by_name(&self, name: &str) -> Option<FlowId> {
        self.flow_names
            .iter()
            .position(|n| n == name)
            .map(|i| FlowId(i as u32))
    }

    /// Downlink deliveries of one flow in trace order.
    pub fn deliveries(&self, flow: FlowId) -> Vec<DeliveryView> {
        let mut v: Vec<DeliveryView> = self
            .world
            .trace
            .records
            .iter()
            .filter(|r| r.flow == flow)
            .filter_map(|r| match r.outcome {
                Outcome::Delivered { at, via_ap, .. } => Some(DeliveryView {
                    time: at,
                    seq: r.seq,
                    via_ap,
                    size_bytes: r.size_bytes,
                }),
                _ => None,
            })
            .collect();
        v.sort_by_key(|d| (d.time, d.seq));
        v
    }

    pub fn handovers_of(&self, flow: FlowId) -> &[HandoverRecord] {
        self.records
            .iter()
            .find(|(f, _)| *f == flow)
            .map(|(_, r)| r.as_slice())
            .unwrap_or(&[])
    }
}

/// Builds and runs one scenario to its configured horizon.
pub fn run_scenario(s: &Scenario) -> Result<RunOutput, ScenarioError> {
    let BuiltSim {
        mut engine,
        mut world,
        horizon,
        flow_names,
        video_schedules,
    } = build(s)?;
    let variant = world.cfg.variant;
    let summary = engine
        .run_until(&mut world, horizon)
        .map_err(|e| ScenarioError::Invalid(vec![e.to_string()]))?;
    let end_of_run_unresolved = world.finalize_end_of_run();

    // Handover records per flow, enriched with the buffering episodes.
    let detached = world.mh.attached.is_none();
    let mut records = Vec::new();
    for (i, _) in flow_names.iter().enumerate() {
        let flow = FlowId(i as u32);
        let deliveries: Vec<DeliveryView> = {
            let mut v: Vec<DeliveryView> = world
                .trace
                .records
                .iter()
                .filter(|r| r.flow == flow)
                .filter_map(|r| match r.outcome {
                    Outcome::Delivered { at, via_ap, .. } => Some(DeliveryView {
                        time: at,
                        seq: r.seq,
                        via_ap,
                        size_bytes: r.size_bytes,
                    }),
                    _ => None,
                })
                .collect();
            v.sort_by_key(|d| (d.time, d.seq));
            v
        };
        let mut recs = measure_handover(&deliveries, detached);
        for (k, rec) in recs.iter_mut().enumerate() {
            if let Some(ep) = world.stats.episodes.get(k) {
                rec.buffered_packets = ep.buffered;
                rec.flushed_packets = ep.flushed;
                rec.fallback = ep.fallback;
            }
        }
        records.push((flow, recs));
    }

    // Video decodability and loss classification.
    let mut video_reports = Vec::new();
    for (flow, schedule) in &video_schedules {
        let mut delivered_per_frame = vec![0u32; schedule.frames.len()];
        for r in world.trace.records.iter().filter(|r| r.flow == *flow) {
            if let (Some(frame), Outcome::Delivered { .. }) = (r.frame, &r.outcome) {
                delivered_per_frame[frame.index as usize] += 1;
            }
        }
        let report = classify_losses(schedule, &delivered_per_frame);
        let decodable = decodable_frames(schedule, &delivered_per_frame);
        video_reports.push((*flow, report, decodable));
    }

    let log_lines = engine.log_lines();
    let log = engine.log().to_vec();
    Ok(RunOutput {
        variant,
        seed: s.run.seed,
        summary,
        world,
        flow_names,
        log_lines,
        log,
        records,
        video_reports,
        end_of_run_unresolved,
    })
}

// ---------------------------------------------------------------------------
// Artifact rendering
// ---------------------------------------------------------------------------

/// `flow_id,seq,sent_us,delivered_us,via_mag` with `LOST` in the delivered
/// column for packets that never reached the terminal.
pub fn render_flows_csv(out: &RunOutput) -> String {
    let mut rows: Vec<&crate::world::PacketRecord> = out.world.trace.records.iter().collect();
    rows.sort_by_key(|r| (r.flow, r.seq, r.sent, r.id));
    let mut s = String::from("flow_id,seq,sent_us,delivered_us,via_mag\n");
    for r in rows {
        let name = &out.flow_names[r.flow.0 as usize];
        match &r.outcome {
            Outcome::Delivered { at, via_mag, .. } => {
                let _ = writeln!(
                    s,
                    "{name},{},{},{},{}",
                    r.seq,
                    r.sent.as_us(),
                    at.as_us(),
                    entity_name(out, *via_mag)
                );
            }
            Outcome::Lost { cause, at } => {
                let _ = writeln!(
                    s,
                    "{name},{},{},LOST,{}:{}",
                    r.seq,
                    r.sent.as_us(),
                    entity_name(out, *at),
                    cause.as_str()
                );
            }
            Outcome::BufferDropped => {
                let _ = writeln!(s, "{name},{},{},LOST,buffer", r.seq, r.sent.as_us());
            }
            Outcome::Pending => {
                let _ = writeln!(s, "{name},{},{},LOST,end_of_run", r.seq, r.sent.as_us());
            }
        }
    }
    s
}

fn entity_name(out: &RunOutput, id: crate::engine::EntityId) -> String {
    // Entity registration order mirrors the wiring tables.
    let w = &out.world.wiring;
    if id == w.mh {
        return "mh".into();
    }
    if id == w.lma {
        return "lma".into();
    }
    if id == w.cn {
        return "cn".into();
    }
    if id == w.aaa {
        return "aaa".into();
    }
    if let Some(i) = w.ap_entity.iter().position(|e| *e == id) {
        return format!("ap{}", i + 1);
    }
    if let Some(i) = w.mag_entity.iter().position(|e| *e == id) {
        return format!("mag{}", i + 1);
    }
    format!("entity{}", id.index())
}

/// `mh,variant,flow_id,t_last_old_us,t_first_new_us,latency_us,lost,buffered,flushed,fallback,complete`
pub fn render_handover_csv(out: &RunOutput) -> String {
    let mut s = String::from(
        "mh,variant,flow_id,t_last_old_us,t_first_new_us,latency_us,lost,buffered,flushed,fallback,complete\n",
    );
    for (flow, recs) in &out.records {
        let name = &out.flow_names[flow.0 as usize];
        for r in recs {
            let (first_new, latency) = match r.t_first_new {
                Some(t) => (t.as_us().to_string(), r.latency().unwrap().as_us().to_string()),
                None => ("".into(), "".into()),
            };
            let _ = writeln!(
                s,
                "mh,{},{name},{},{first_new},{latency},{},{},{},{},{}",
                out.variant.as_str(),
                r.t_last_old.as_us(),
                r.lost_packets,
                r.buffered_packets,
                r.flushed_packets,
                r.fallback,
                r.complete()
            );
        }
    }
    s
}

/// `flow_id,window_start_us,mbps`
pub fn render_throughput_csv(out: &RunOutput, window: SimDuration) -> String {
    let mut s = String::from("flow_id,window_start_us,mbps\n");
    for (i, name) in out.flow_names.iter().enumerate() {
        let deliveries = out.deliveries(FlowId(i as u32));
        for (t, mbps) in throughput_series(&deliveries, window) {
            let _ = writeln!(s, "{name},{},{mbps:.6}", t.as_us());
        }
    }
    s
}

/// Per-term latency budget: closed form next to trace-measured milestones.
pub fn render_budget(out: &RunOutput) -> String {
    let case = match out.variant {
        Variant::Pmipv6 => LatencyCase::Pmipv6,
        Variant::Pmipv6Mih => LatencyCase::Pmipv6Mih,
    };
    let budget = closed_form(case, &out.world.params);
    let measured = measured_terms(out);
    let mut s = String::new();
    let _ = writeln!(s, "latency budget ({})", out.variant.as_str());
    let _ = writeln!(s, "{:<22} {:>12} {:>12}", "term", "closed_us", "measured_us");
    let mut closed_total = 0u64;
    let mut measured_total: Option<u64> = Some(0);
    for (name, d) in &budget.terms {
        closed_total += d.as_us();
        let m = measured.iter().find(|(n, _)| n == name).map(|(_, v)| *v);
        match m {
            Some(v) => {
                measured_total = measured_total.map(|t| t + v);
                let _ = writeln!(s, "{name:<22} {:>12} {v:>12}", d.as_us());
            }
            None => {
                measured_total = None;
                let _ = writeln!(s, "{name:<22} {:>12} {:>12}", d.as_us(), "-");
            }
        }
    }
    match measured_total {
        Some(t) => {
            let _ = writeln!(s, "{:<22} {closed_total:>12} {t:>12}", "total");
        }
        None => {
            let _ = writeln!(s, "{:<22} {closed_total:>12} {:>12}", "total", "-");
        }
    }
    let first_flow_records = out.records.iter().find(|(_, r)| !r.is_empty());
    if let Some((flow, recs)) = first_flow_records {
        if let Some(lat) = recs.iter().find_map(|r| r.latency()) {
            let _ = writeln!(
                s,
                "measured data-gap latency ({}): {} us",
                out.flow_names[flow.0 as usize],
                lat.as_us()
            );
        }
    }
    let initial = closed_form(LatencyCase::InitialEntry, &out.world.params);
    let _ = writeln!(s, "\ninitial-entry budget");
    let mut total = 0u64;
    for (name, d) in &initial.terms {
        total += d.as_us();
        let _ = writeln!(s, "{name:<22} {:>12}", d.as_us());
    }
    let _ = writeln!(s, "{:<22} {total:>12}", "total");
    s
}

/// Per-phase handover times recovered from the event log.
fn measured_terms(out: &RunOutput) -> Vec<(&'static str, u64)> {
    let find = |kind: &str| out.log.iter().find(|r| r.kind == kind).map(|r| r.time_us);
    let find_last = |kind: &str| out.log.iter().rev().find(|r| r.kind == kind).map(|r| r.time_us);
    let mut v = Vec::new();
    // Intra-domain handover milestones: the first link-down starts the clock.
    let Some(ld) = find("ld") else { return v };
    let Some(scan_done) = out
        .log
        .iter()
        .find(|r| r.kind == "scan_done" && r.time_us >= ld)
        .map(|r| r.time_us)
    else {
        return v;
    };
    v.push(("scan", scan_done - ld));
    let reassoc = out
        .log
        .iter()
        .find(|r| r.kind == "reassoc_done" && r.time_us >= scan_done)
        .map(|r| r.time_us);
    let Some(reassoc) = reassoc else { return v };
    match out.variant {
        Variant::Pmipv6 => {
            let auth_done = out
                .log
                .iter()
                .find(|r| r.kind == "auth_done" && r.time_us >= scan_done)
                .map(|r| r.time_us)
                .unwrap_or(scan_done);
            v.push(("authentication", auth_done - scan_done));
            v.push(("reassociation", reassoc - auth_done));
            if let Some(attach) = out
                .log
                .iter()
                .find(|r| r.kind == "attach_notify" && r.time_us >= reassoc)
                .map(|r| r.time_us)
            {
                v.push(("attach_notify", attach - reassoc));
                if let Some(pba) = out
                    .log
                    .iter()
                    .find(|r| r.kind == "pba" && r.time_us >= attach)
                    .map(|r| r.time_us)
                {
                    v.push(("registration", pba - attach));
                    if let Some(ra) = find_last("ra").filter(|t| *t >= pba) {
                        v.push(("movement_detection", ra - pba));
                    }
                }
            }
        }
        Variant::Pmipv6Mih => {
            v.push(("reassociation", reassoc - scan_done));
            if let Some(flush) = out
                .log
                .iter()
                .find(|r| r.kind == "flush_start" && r.time_us >= reassoc)
                .map(|r| r.time_us)
            {
                v.push(("registration", flush - reassoc));
                if let Some(ra) = find_last("ra").filter(|t| *t >= flush) {
                    v.push(("movement_detection", ra - flush));
                }
            }
        }
    }
    v
}

/// Per-frame PSNR for one video flow of a completed run.
pub fn video_psnr(out: &RunOutput, flow: FlowId, s: &Scenario) -> Option<PsnrSeries> {
    let (_, _, decodable) = out.video_reports.iter().find(|(f, _, _)| *f == flow)?;
    let frames = synthetic_frames(
        out.seed,
        decodable.len() as u32,
        s.video.width,
        s.video.height,
    );
    Some(psnr(&frames, decodable, s.video.bits_per_pixel, s.video.psnr_cap_db))
}

pub fn render_psnr_csv(series: &PsnrSeries) -> String {
    let mut s = String::from("frame,psnr_db\n");
    for (n, db) in &series.values {
        let _ = writeln!(s, "{n},{db:.3}");
    }
    for n in &series.skipped {
        let _ = writeln!(s, "{n},skipped");
    }
    s
}

/// Writes every artifact of one run into `dir`.
pub fn emit_run_artifacts(
    out: &RunOutput,
    s: &Scenario,
    dir: &Path,
) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("events.log"), &out.log_lines)?;
    std::fs::write(dir.join("flows.csv"), render_flows_csv(out))?;
    std::fs::write(dir.join("handover_records.csv"), render_handover_csv(out))?;
    std::fs::write(
        dir.join("throughput.csv"),
        render_throughput_csv(out, SimDuration::from_secs_f64(1.0)),
    )?;
    std::fs::write(dir.join("budget.txt"), render_budget(out))?;
    for (flow, report, _) in &out.video_reports {
        std::fs::write(dir.join("loss_report.txt"), format_loss_report(report))?;
        if let Some(series) = video_psnr(out, *flow, s) {
            std::fs::write(dir.join("psnr.csv"), render_psnr_csv(&series))?;
        }
    }
    Ok(())
}

/// One row of `sweep_summary.csv`.
pub struct SweepRow {
    pub param_value: String,
    pub variant: Variant,
    pub latency_ms: Option<f64>,
    pub loss: Option<u64>,
    pub mean_throughput_mbps: Option<f64>,
}

pub fn render_sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from("param_value,variant,latency_ms,loss,mean_throughput_mbps\n");
    for r in rows {
        let lat = r
            .latency_ms
            .map(|v| format!("{v:.3}"))
            .unwrap_or_else(|| "NA".into());
        let loss = r.loss.map(|v| v.to_string()).unwrap_or_else(|| "NA".into());
        let thr = r
            .mean_throughput_mbps
            .map(|v| format!("{v:.6}"))
            .unwrap_or_else(|| "NA".into());
        let _ = writeln!(s, "{},{},{lat},{loss},{thr}", r.param_value, r.variant.as_str());
    }
    s
}

/// Headline metrics of one run against its first flow: measured handover
/// latency, in-window loss, and mean delivered throughput.
pub fn summarize_first_flow(out: &RunOutput) -> (Option<f64>, Option<u64>, Option<f64>) {
    let flow = FlowId(0);
    let recs = out.handovers_of(flow);
    let latency_ms = recs
        .iter()
        .find_map(|r| r.latency())
        .map(|d| d.as_ms_f64());
    let loss = recs.first().map(|r| r.lost_packets);
    let deliveries = out.deliveries(flow);
    let mean = if deliveries.is_empty() {
        None
    } else {
        let first = deliveries.first().unwrap().time;
        let last = deliveries.last().unwrap().time;
        let bits: u64 = deliveries.iter().map(|d| d.size_bytes as u64 * 8).sum();
        let span = (last - first).as_secs_f64().max(1e-9);
        Some(bits as f64 / span / 1e6)
    };
    (latency_ms, loss, mean)
}

/// Zero-tolerance conservation check: per flow `sent = delivered + lost +
/// buffer_dropped` (with nothing left pending), per link
/// `enqueued = delivered + queue-dropped`. Returns every violation.
pub fn conservation_violations(out: &RunOutput) -> Vec<String> {
    let mut v = Vec::new();
    for f in &out.world.stats.flows {
        if f.sent != f.delivered + f.lost + f.buffer_dropped {
            v.push(format!(
                "flow {}: sent {} != delivered {} + lost {} + buffer_dropped {}",
                f.name, f.sent, f.delivered, f.lost, f.buffer_dropped
            ));
        }
    }
    // Recount terminal outcomes from the trace as an independent check.
    for (i, f) in out.world.stats.flows.iter().enumerate() {
        let flow = FlowId(i as u32);
        let mut delivered = 0u64;
        let mut lost = 0u64;
        let mut buffer_dropped = 0u64;
        let mut pending = 0u64;
        for r in out.world.trace.records.iter().filter(|r| r.flow == flow) {
            match r.outcome {
                Outcome::Delivered { .. } => delivered += 1,
                Outcome::Lost { cause: LossCause::EndOfRun, .. } => lost += 1,
                Outcome::Lost { .. } => lost += 1,
                Outcome::BufferDropped => buffer_dropped += 1,
                Outcome::Pending => pending += 1,
            }
        }
        if pending != 0 {
            v.push(format!("flow {}: {pending} packets never finalized", f.name));
        }
        if delivered != f.delivered || buffer_dropped != f.buffer_dropped {
            v.push(format!(
                "flow {}: trace recount (delivered {delivered}, buffer_dropped {buffer_dropped}) \
                 disagrees with counters (delivered {}, buffer_dropped {})",
                f.name, f.delivered, f.buffer_dropped
            ));
        }
        let _ = lost;
    }
    for (li, link) in out.world.net.links.iter().enumerate() {
        for end in [link.spec.a, link.spec.b] {
            let c = link.counters(end);
            if c.enqueued != c.delivered + c.dropped {
                v.push(format!(
                    "link {li}: enqueued {} != delivered {} + queue-dropped {}",
                    c.enqueued, c.delivered, c.dropped
                ));
            }
        }
    }
    for (ci, _) in out.world.net.cells.iter().enumerate() {
        for end in [out.world.net.cells[ci].ap, out.world.wiring.mh] {
            let c = out.world.net.wireless_counters(ci, end);
            if c.enqueued != c.delivered + c.dropped {
                v.push(format!(
                    "wireless {ci}: enqueued {} != delivered {} + queue-dropped {}",
                    c.enqueued, c.delivered, c.dropped
                ));
            }
        }
    }
    v
}
