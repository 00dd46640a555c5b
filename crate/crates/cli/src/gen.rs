use std::fs::File;
use std::io::BufReader;
use std::path::PathBuf;
use std::time::Duration;

use clap::{Args, Subcommand, ValueEnum};
use memwall_core::fixtures::{mobilenet_training, random_dag, RandomDagSpec, TrainingGraphSpec};
use memwall_core::orchestrator::fleet::{generate_fleet, FleetParams};
use memwall_core::predictor::{generate_trace, predict_series, read_trace, session_lengths, write_trace, PredictorConfig, TraceSpec};
use serde::Serialize;

use crate::error::{CliError, CliResult};
use crate::io::{write_bytes, write_csv, write_json};

const GIB: f64 = (1u64 << 30) as f64;

#[derive(Debug, Subcommand)]
pub enum GenCommand {
    /// Synthetic client fleet with memory tiers and non-IID shards.
    Fleet(FleetArgs),
    /// Available-memory trace with usage sessions and launch spikes.
    Trace(TraceArgs),
    /// Computation graph fixture.
    Graph(GraphArgs),
}

#[derive(Debug, Args)]
pub struct FleetArgs {
    #[arg(long, default_value_t = 100)]
    clients: usize,
    #[arg(long, default_value_t = 10)]
    classes: usize,
    /// Dirichlet concentration of each client's label mix.
    #[arg(long, default_value_t = 0.1)]
    alpha: f64,
    #[arg(long, env = "MEMWALL_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TraceArgs {
    #[arg(long, default_value_t = 3600.0)]
    duration_s: f64,
    #[arg(long, default_value_t = 200)]
    interval_ms: u64,
    /// Device DRAM in GiB.
    #[arg(long, default_value_t = 8.0)]
    dram_gb: f64,
    /// Available memory with no foreground app, GiB.
    #[arg(long, default_value_t = 4.0)]
    baseline_gb: f64,
    /// Back-to-back sessions with no memory-hungry foreground app, leaving
    /// launch spikes on a flat baseline.
    #[arg(long)]
    spike_fixture: bool,
    #[arg(long, env = "MEMWALL_SEED", default_value_t = 0)]
    seed: u64,
    /// JSON-lines output.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum GraphKind {
    /// Random DAG with layout transforms and skip connections.
    Random,
    /// MobileNetV2-style forward and backward pass.
    Mobilenet,
}

#[derive(Debug, Args)]
pub struct GraphArgs {
    #[arg(long, value_enum, default_value = "random")]
    kind: GraphKind,
    /// Op count for random graphs.
    #[arg(long, default_value_t = 30)]
    ops: usize,
    #[arg(long, default_value_t = 40)]
    batch: i64,
    #[arg(long, default_value_t = 224)]
    resolution: i64,
    /// Channel multiplier.
    #[arg(long, default_value_t = 1.0)]
    width: f64,
    #[arg(long, env = "MEMWALL_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

pub fn run_gen(cmd: &GenCommand) -> CliResult {
    match cmd {
        GenCommand::Fleet(a) => gen_fleet(a),
        GenCommand::Trace(a) => gen_trace(a),
        GenCommand::Graph(a) => gen_graph(a),
    }
}

fn gen_fleet(a: &FleetArgs) -> CliResult {
    let params = FleetParams { clients: a.clients, classes: a.classes, dirichlet_alpha: a.alpha, ..FleetParams::default() };
    params.validate().map_err(CliError::validation)?;
    let fleet = generate_fleet(&params, a.seed).map_err(CliError::validation)?;
    write_json(&a.out, &fleet)?;
    let histogram = fleet
        .tiers
        .iter()
        .map(|t| format!("tier_{}gb={}", t.gb, fleet.clients.iter().filter(|c| c.tier_gb == t.gb).count()))
        .collect::<Vec<_>>()
        .join(" ");
    println!("clients={} {histogram}", fleet.clients.len());
    Ok(())
}

fn gen_trace(a: &TraceArgs) -> CliResult {
    if !(a.duration_s > 0.0 && a.dram_gb > 0.0 && a.baseline_gb > 0.0 && a.baseline_gb <= a.dram_gb) || a.interval_ms == 0 {
        return Err(CliError::Validation("trace needs positive duration and interval, and 0 < baseline <= DRAM".into()));
    }
    let base = if a.spike_fixture { TraceSpec::spike_fixture() } else { TraceSpec::default() };
    let spec = TraceSpec {
        duration: Duration::from_secs_f64(a.duration_s),
        sample_interval: Duration::from_millis(a.interval_ms),
        dram_bytes: (a.dram_gb * GIB) as u64,
        baseline_avail: (a.baseline_gb * GIB) as u64,
        ..base
    };
    let trace = generate_trace(&spec, a.seed);
    let mut buf = Vec::new();
    write_trace(&trace, &mut buf).map_err(|e| CliError::Contract(e.to_string()))?;
    write_bytes(&a.out, &buf)?;
    let sessions = session_lengths(&trace);
    let mean = if sessions.is_empty() { 0.0 } else { sessions.iter().map(Duration::as_secs_f64).sum::<f64>() / sessions.len() as f64 };
    println!("samples={} sessions={} mean_session_s={mean:.1}", trace.len(), sessions.len());
    Ok(())
}

fn gen_graph(a: &GraphArgs) -> CliResult {
    let graph = match a.kind {
        GraphKind::Random => {
            if a.ops == 0 {
                return Err(CliError::Validation("random graphs need at least one op".into()));
            }
            random_dag(&RandomDagSpec { ops: a.ops, ..RandomDagSpec::default() }, a.seed)
        }
        GraphKind::Mobilenet => {
            if a.batch <= 0 || a.resolution < 32 || !(a.width > 0.0) {
                return Err(CliError::Validation("mobilenet graphs need batch > 0, resolution >= 32 and width > 0".into()));
            }
            mobilenet_training(&TrainingGraphSpec { batch: a.batch, resolution: a.resolution, width: a.width })
        }
    };
    write_bytes(&a.out, graph.to_json().as_bytes())?;
    println!(
        "ops={} tensors={} untreated_peak={} pinned_minimum={}",
        graph.ops().len(),
        graph.tensors().len(),
        graph.untreated_peak(),
        graph.pinned_minimum()
    );
    Ok(())
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// JSON-lines memory trace.
    #[arg(long)]
    trace: PathBuf,
    #[arg(long, default_value_t = 60.0)]
    window_s: f64,
    #[arg(long, default_value_t = 5.0)]
    slide_s: f64,
    #[arg(long, default_value_t = 1.0)]
    sample_period_s: f64,
    /// CSV output: t_ms, m_safe, m_pred.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Serialize)]
struct PredictionRow {
    t_ms: u64,
    m_safe: u64,
    m_pred: u64,
}

fn stddev(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let n = xs.clone().count().max(1) as f64;
    let mean = xs.clone().sum::<f64>() / n;
    (xs.map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt()
}

pub fn run_predict(a: &PredictArgs) -> CliResult {
    for (name, v) in [("window", a.window_s), ("slide", a.slide_s), ("sample period", a.sample_period_s)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(CliError::Validation(format!("{name} must be positive, got {v}")));
        }
    }
    let config = PredictorConfig {
        window: Duration::from_secs_f64(a.window_s),
        slide: Duration::from_secs_f64(a.slide_s),
        sample_period: Duration::from_secs_f64(a.sample_period_s),
    };
    let file = File::open(&a.trace).map_err(|e| CliError::io(&a.trace, e))?;
    let trace = read_trace(BufReader::new(file)).map_err(|e| CliError::io(&a.trace, e))?;
    let series = predict_series(&trace, config).map_err(CliError::validation)?;
    let rows: Vec<PredictionRow> = series.iter().map(|p| PredictionRow { t_ms: p.t_ms, m_safe: p.m_safe, m_pred: p.m_pred }).collect();
    write_csv(&a.out, &rows)?;
    let raw = stddev(series.iter().map(|p| p.m_safe as f64));
    let pred = stddev(series.iter().map(|p| p.m_pred as f64));
    let ratio = if raw > 0.0 { pred / raw } else { 0.0 };
    println!("points={} stddev_safe={raw:.0} stddev_pred={pred:.0} ratio={ratio:.3}", rows.len());
    Ok(())
}
