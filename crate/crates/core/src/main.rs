//! Command-line front end: run a scenario, sweep a parameter across both
//! protocol variants, validate a scenario file, or print the closed-form
//! latency budget without simulating.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use pmipsim::analytics::{closed_form, LatencyCase};
use pmipsim::report::{
    emit_run_artifacts, render_sweep_csv, run_scenario, summarize_first_flow, SweepRow,
};
use pmipsim::scenario::{apply_override, load_scenario, validate, Scenario};
use pmipsim::world::Variant;

#[derive(Parser)]
#[command(name = "pmipsim", about = "Deterministic PMIPv6 handover simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Scenario file (TOML).
    #[arg(long)]
    scenario: PathBuf,
    /// Override the scenario's protocol variant (pmipv6 | pmipv6_mih).
    #[arg(long)]
    variant: Option<String>,
    /// Override the scenario's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and emit its reports.
    Run {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Run one scenario per swept value per variant and emit a combined
    /// summary.
    Sweep {
        #[command(flatten)]
        common: CommonArgs,
        /// Swept parameter: key=v1,v2,... (e.g. mobility.speed_mps=5,10,20).
        /// Defaults to the scenario's mobility.speeds_mps list.
        #[arg(long)]
        sweep: Option<String>,
    },
    /// Validate a scenario file and report every problem found.
    Validate {
        /// Scenario file (TOML).
        #[arg(long)]
        scenario: PathBuf,
    },
    /// Print the closed-form latency budget (no simulation).
    Budget {
        /// Scenario file (TOML).
        #[arg(long)]
        scenario: PathBuf,
        /// Variant to evaluate (pmipv6 | pmipv6_mih | initial_entry | all).
        #[arg(long, default_value = "all")]
        variant: String,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}

fn load_with_overrides(common: &CommonArgs) -> Result<Scenario, String> {
    let mut s = load_scenario(&common.scenario).map_err(|e| e.to_string())?;
    if let Some(v) = &common.variant {
        s.protocol.variant = v.clone();
        if s.variant().is_none() {
            return Err(format!("unknown variant '{v}'"));
        }
    }
    if let Some(seed) = common.seed {
        s.run.seed = seed;
    }
    Ok(s)
}

fn run(cli: Cli) -> Result<(), String> {
    match cli.command {
        Command::Run { common } => {
            let s = load_with_overrides(&common)?;
            let out = run_scenario(&s).map_err(|e| e.to_string())?;
            emit_run_artifacts(&out, &s, &common.out).map_err(|e| e.to_string())?;
            let (latency, loss, thr) = summarize_first_flow(&out);
            println!(
                "run complete: variant={} events={} final_clock={}s",
                out.variant.as_str(),
                out.summary.events_processed,
                out.summary.final_clock.as_secs_f64()
            );
            if let Some(l) = latency {
                println!("handover latency: {l:.3} ms (loss {} packets)", loss.unwrap_or(0));
            }
            if let Some(t) = thr {
                println!("mean delivered throughput: {t:.3} Mbps");
            }
            println!("reports written to {}", common.out.display());
            Ok(())
        }
        Command::Sweep { common, sweep } => {
            let base = load_with_overrides(&common)?;
            let (key, values) = match &sweep {
                Some(expr) => {
                    let (k, vs) = expr
                        .split_once('=')
                        .ok_or_else(|| format!("--sweep expects key=v1,v2,... got '{expr}'"))?;
                    (
                        k.to_string(),
                        vs.split(',').map(|v| v.trim().to_string()).collect::<Vec<_>>(),
                    )
                }
                None => {
                    if base.mobility.speeds_mps.is_empty() {
                        return Err(
                            "no --sweep given and the scenario has no mobility.speeds_mps list"
                                .into(),
                        );
                    }
                    (
                        "mobility.speed_mps".to_string(),
                        base.mobility
                            .speeds_mps
                            .iter()
                            .map(|v| format!("{v}"))
                            .collect(),
                    )
                }
            };
            let mut rows = Vec::new();
            for value in &values {
                for variant in [Variant::Pmipv6, Variant::Pmipv6Mih] {
                    let mut s = base.clone();
                    s.protocol.variant = variant.as_str().to_string();
                    apply_override(&mut s, &key, value)?;
                    let run_dir = common
                        .out
                        .join(format!("{}_{}", key.replace('.', "_"), value))
                        .join(variant.as_str());
                    match run_scenario(&s) {
                        Ok(out) => {
                            emit_run_artifacts(&out, &s, &run_dir).map_err(|e| e.to_string())?;
                            let (latency, loss, thr) = summarize_first_flow(&out);
                            rows.push(SweepRow {
                                param_value: value.clone(),
                                variant,
                                latency_ms: latency,
                                loss,
                                mean_throughput_mbps: thr,
                            });
                        }
                        Err(e) => {
                            eprintln!("sweep {key}={value} {}: {e}", variant.as_str());
                            rows.push(SweepRow {
                                param_value: value.clone(),
                                variant,
                                latency_ms: None,
                                loss: None,
                                mean_throughput_mbps: None,
                            });
                        }
                    }
                }
            }
            std::fs::create_dir_all(&common.out).map_err(|e| e.to_string())?;
            let path = common.out.join("sweep_summary.csv");
            std::fs::write(&path, render_sweep_csv(&rows)).map_err(|e| e.to_string())?;
            println!("sweep complete: {} rows -> {}", rows.len(), path.display());
            Ok(())
        }
        Command::Validate { scenario } => match load_scenario(&scenario) {
            Ok(s) => {
                let errors = validate(&s);
                debug_assert!(errors.is_empty());
                println!("scenario OK: {}", scenario.display());
                Ok(())
            }
            Err(e) => Err(e.to_string()),
        },
        Command::Budget { scenario, variant } => {
            let s = load_scenario(&scenario).map_err(|e| e.to_string())?;
            let built = pmipsim::scenario::build(&s).map_err(|e| e.to_string())?;
            let params = built.world.params.clone();
            let cases: Vec<(&str, LatencyCase)> = match variant.as_str() {
                "pmipv6" => vec![("pmipv6", LatencyCase::Pmipv6)],
                "pmipv6_mih" => vec![("pmipv6_mih", LatencyCase::Pmipv6Mih)],
                "initial_entry" => vec![("initial_entry", LatencyCase::InitialEntry)],
                "all" => vec![
                    ("pmipv6", LatencyCase::Pmipv6),
                    ("pmipv6_mih", LatencyCase::Pmipv6Mih),
                    ("initial_entry", LatencyCase::InitialEntry),
                ],
                other => return Err(format!("unknown variant '{other}'")),
            };
            for (name, case) in cases {
                let b = closed_form(case, &params);
                println!("{name}: total {} us (l2 {} us, l3 {} us)", b.total().as_us(), b.l2.as_us(), b.l3.as_us());
                for (term, d) in &b.terms {
                    println!("  {term:<22} {:>10} us", d.as_us());
                }
            }
            Ok(())
        }
    }
}
