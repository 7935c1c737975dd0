use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use mrf_apps::apps::{self, AppError, OracleKind, Phase, RunConfig};
use mrf_core::hrg::{build_hrg, HrgParams};
use mrf_core::ipm::IpmError;
use mrf_core::stream::{parse_stream, replay_records, Record};
use serde_json::{json, Value};

#[derive(Parser)]
#[command(name = "mrf", about = "Incremental min-cost flow and its applications")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
    /// Update stream (`v`, `a tail head cap cost`, `d edge`, `q`).
    #[arg(long, global = true)]
    input: Option<PathBuf>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    threshold: Option<f64>,
    #[arg(long, global = true, default_value_t = 0.25)]
    epsilon: f64,
    /// Defaults to exact for n ≤ 64 and tree above.
    #[arg(long, global = true)]
    oracle: Option<OracleArg>,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[arg(long, global = true)]
    json_out: Option<PathBuf>,
    /// Print the HRG built on the final graph as JSON.
    #[arg(long, global = true)]
    dump_hrg: bool,
    /// One JSON line per step on stdout.
    #[arg(long, global = true)]
    trace: bool,
    #[arg(long, global = true, default_value_t = 0)]
    source: usize,
    /// Defaults to the last vertex.
    #[arg(long, global = true)]
    sink: Option<usize>,
    #[arg(long, global = true, default_value_t = 1.0)]
    demand: f64,
    /// Instances for `bench`.
    #[arg(long, global = true, default_value_t = 20)]
    instances: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum OracleArg {
    Exact,
    Tree,
}

#[derive(Subcommand, Clone, Copy)]
enum Cmd {
    ThresholdFlow,
    CycleDetect,
    Scc,
    ApproxFlow,
    ShortestPath,
    SpannerSim,
    Bench,
}

enum Fail {
    Parse(String),
    Infeasible(String),
    Internal(String),
}

impl From<AppError> for Fail {
    fn from(e: AppError) -> Self {
        match e {
            AppError::NeverFeasible => Fail::Infeasible(e.to_string()),
            AppError::Deletion | AppError::UnknownVertex(_) => Fail::Parse(e.to_string()),
            AppError::Ipm(IpmError::StepBudget(_)) => Fail::Internal(e.to_string()),
            other => Fail::Internal(other.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Fail::Parse(m)) => {
            eprintln!("parse error: {m}");
            ExitCode::from(2)
        }
        Err(Fail::Infeasible(m)) => {
            eprintln!("{m}");
            ExitCode::from(3)
        }
        Err(Fail::Internal(m)) => {
            eprintln!("invariant violation: {m}");
            ExitCode::from(4)
        }
    }
}

fn load(cli: &Cli) -> Result<Vec<Record>, Fail> {
    let path = cli.input.as_ref().ok_or_else(|| Fail::Parse("--input is required".into()))?;
    let text = fs::read_to_string(path).map_err(|e| Fail::Parse(format!("{}: {e}", path.display())))?;
    parse_stream(&text).map_err(|e| Fail::Parse(e.to_string()))
}

fn vertices(records: &[Record]) -> usize {
    records.iter().filter(|r| matches!(r, Record::Vertex)).count()
}

fn config(cli: &Cli, n: usize) -> RunConfig {
    let oracle = match cli.oracle {
        Some(OracleArg::Exact) => OracleKind::Exact,
        Some(OracleArg::Tree) => OracleKind::Tree,
        None => OracleKind::auto(n),
    };
    RunConfig { oracle, ..RunConfig::default() }
}

fn trace_line(phase: Phase, ipm: &mut apps::AppIpm) {
    if let (Phase::AfterStep { .. }, Some(r)) = (phase, ipm.last_step()) {
        let line = json!({
            "step": r.step, "ratio": r.ratio, "eta": r.eta, "phi": r.phi_after,
            "cost": r.cost, "returned": r.returned, "rebuild": r.rebuild,
        });
        println!("{line}");
    }
}

fn run(cli: &Cli) -> Result<(), Fail> {
    let out = match cli.cmd {
        Cmd::Bench => {
            let rows = apps::bench(cli.seed, cli.instances, config(cli, 30))?;
            let wrong = rows.iter().filter(|r| r.index != r.baseline).count();
            for r in &rows {
                println!("{}", json!(r));
            }
            if wrong > 0 {
                return Err(Fail::Internal(format!("{wrong} instances disagree with the baseline")));
            }
            json!(rows)
        }
        cmd => {
            let records = load(cli)?;
            let n = vertices(&records);
            let cfg = config(cli, n);
            let sink = cli.sink.unwrap_or(n.saturating_sub(1));
            let res = on_stream(cli, cmd, &records, cfg, sink)?;
            if cli.dump_hrg {
                let g = replay_records(&records).map_err(|e| Fail::Parse(e.to_string()))?;
                let h = build_hrg(&g, HrgParams::default()).map_err(|e| Fail::Internal(e.to_string()))?;
                println!("{}", json!(h.dump()));
            }
            res
        }
    };
    if let Some(path) = &cli.json_out {
        let mut f = fs::File::create(path).map_err(|e| Fail::Internal(e.to_string()))?;
        writeln!(f, "{out}").map_err(|e| Fail::Internal(e.to_string()))?;
    }
    Ok(())
}

fn on_stream(cli: &Cli, cmd: Cmd, records: &[Record], cfg: RunConfig, sink: usize) -> Result<Value, Fail> {
    let mut obs = |phase: Phase, ipm: &mut apps::AppIpm| {
        if cli.trace {
            trace_line(phase, ipm);
        }
    };
    Ok(match cmd {
        Cmd::ThresholdFlow => {
            let f = cli.threshold.ok_or_else(|| Fail::Parse("--threshold is required".into()))?;
            let o = apps::thresholded_mincost_observed(records, f, cfg, &mut obs)?;
            println!("feasible at insertion {} with cost {}", o.index, o.witness_cost);
            json!(o)
        }
        Cmd::CycleDetect => {
            let unit: Vec<Record> = records
                .iter()
                .map(|r| match *r {
                    Record::Edge { tail, head, .. } => Record::Edge { tail, head, cap: 1.0, cost: -1.0 },
                    other => other,
                })
                .collect();
            match apps::thresholded_mincost_observed(&unit, -1.0, cfg, &mut obs) {
                Ok(o) => {
                    println!("cycle at insertion {}", o.index);
                    json!({ "cycle_at": o.index })
                }
                Err(AppError::NeverFeasible) => {
                    println!("no cycle");
                    json!({ "cycle_at": null })
                }
                Err(e) => return Err(e.into()),
            }
        }
        Cmd::Scc => {
            let labels = apps::scc_maintain(records, cfg)?;
            if let Some(last) = labels.last() {
                let comps = last.iter().enumerate().filter(|&(v, &l)| v == l).count();
                println!("{comps} components after {} insertions", labels.len());
            }
            json!(labels)
        }
        Cmd::ApproxFlow | Cmd::ShortestPath => {
            let pts = if matches!(cmd, Cmd::ApproxFlow) {
                apps::approx_mincost(records, cli.source, sink, cli.demand, cli.epsilon, cfg)?
            } else {
                apps::st_shortest_path(records, cli.source, sink, cli.epsilon, cfg)?
            };
            for p in &pts {
                println!("{}", json!(p));
            }
            if pts.last().is_none_or(|p| p.cost.is_none()) {
                return Err(Fail::Infeasible(format!("demand does not fit from {} to {sink}", cli.source)));
            }
            json!(pts)
        }
        Cmd::SpannerSim => {
            let pts = apps::spanner_sim(records, None)?;
            for p in &pts {
                println!("{}", json!(p));
            }
            json!(pts)
        }
        Cmd::Bench => unreachable!("handled before loading a stream"),
    })
}
