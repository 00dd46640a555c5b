use std::path::PathBuf;
use std::time::Duration;

use clap::Args;
use memwall_core::fixtures::standard_training_graph;
use memwall_core::graph::ComputationGraph;
use memwall_core::orchestrator::cache::PlanCache;
use memwall_core::orchestrator::fleet::{generate_fleet, FleetSpec};
use memwall_core::orchestrator::{run_simulation, Ablation, OrchestratorError, SimConfig, SimulationResult};
use serde::Serialize;

use crate::error::{CliError, CliResult};
use crate::io::{read_json, read_text, write_csv};

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Simulation config JSON; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Graph JSON; the standard batch-64 training graph when omitted.
    #[arg(long)]
    graph: Option<PathBuf>,
    /// Fleet JSON from `gen fleet`; generated from the config when omitted.
    #[arg(long)]
    fleet: Option<PathBuf>,
    /// Directory for rounds and summary CSVs.
    #[arg(long)]
    out_dir: PathBuf,
    /// Overrides the config seed.
    #[arg(long, env = "MEMWALL_SEED")]
    seed: Option<u64>,
    #[arg(long)]
    rounds: Option<u32>,
    /// Clients selected per round.
    #[arg(long)]
    k: Option<usize>,
    /// Exploit fraction of each round's picks.
    #[arg(long)]
    epsilon: Option<f64>,
    /// Page-fault growth factor that triggers plan regeneration.
    #[arg(long)]
    tp1: Option<f64>,
    /// Low-memory kills per round that trigger plan regeneration.
    #[arg(long)]
    tp2: Option<u32>,
    /// Window shrink factor applied on regeneration.
    #[arg(long)]
    ws_adj: Option<f64>,
    /// Prediction window in seconds.
    #[arg(long)]
    window_s: Option<f64>,
    /// Stop each run at the round that reaches the loss target.
    #[arg(long)]
    stop_at_target: bool,
    /// Also run with random client selection.
    #[arg(long)]
    no_selector: bool,
    /// Also run with every client training the untreated graph.
    #[arg(long)]
    no_planner: bool,
    /// Also run with eviction-only plans.
    #[arg(long)]
    no_codec: bool,
    /// Also run with budgets taken from the last raw memory sample.
    #[arg(long)]
    no_predictor: bool,
}

#[derive(Debug, Serialize)]
struct RoundRow {
    round: u32,
    time_s: f64,
    participants: usize,
    faults: u64,
    regen_count: usize,
    proxy_loss: f64,
}

#[derive(Debug, Serialize)]
struct SummaryRow {
    variant: String,
    seed: u64,
    rounds: u32,
    time_to_target_s: Option<f64>,
    /// Time to target over the full system's.
    slowdown_vs_full: Option<f64>,
    total_time_s: f64,
    target_loss: f64,
    final_loss: f64,
    planner_calls: u64,
    cache_hits: u64,
    faults: u64,
    lmk_kills: u64,
    regen_requests: u64,
    dropped: u64,
    overhead_fraction: f64,
}

fn orchestrator_error(e: OrchestratorError) -> CliError {
    match e {
        OrchestratorError::ConfigErrors(list) => {
            CliError::Validation(format!("invalid simulation config:\n{}", list.iter().map(|l| format!("  - {l}")).collect::<Vec<_>>().join("\n")))
        }
        e @ (OrchestratorError::Config(_) | OrchestratorError::TooManyClusters { .. }) => CliError::validation(e),
        other => CliError::Contract(other.to_string()),
    }
}

impl SimulateArgs {
    fn build_config(&self) -> CliResult<SimConfig> {
        let mut config = match &self.config {
            Some(path) => read_json::<SimConfig>(path)?,
            None => SimConfig::default(),
        };
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        if let Some(r) = self.rounds {
            config.rounds = r;
        }
        if let Some(k) = self.k {
            config.selection.k = k;
        }
        if let Some(e) = self.epsilon {
            config.selection.epsilon = e;
        }
        if let Some(v) = self.tp1 {
            config.regen.tp1 = v;
        }
        if let Some(v) = self.tp2 {
            config.regen.tp2 = v;
        }
        if let Some(v) = self.ws_adj {
            config.regen.ws_adj = v;
        }
        if let Some(w) = self.window_s {
            if !(w > 0.0 && w.is_finite()) {
                return Err(CliError::Validation(format!("window must be positive, got {w}")));
            }
            config.predictor.window = Duration::from_secs_f64(w);
        }
        config.stop_at_target |= self.stop_at_target;
        Ok(config)
    }

    fn variants(&self) -> Vec<(String, Ablation)> {
        let flags = [self.no_selector, self.no_planner, self.no_codec, self.no_predictor];
        let mut out = vec![("full".to_string(), Ablation::default())];
        out.extend(Ablation::VARIANTS[1..].iter().zip(flags).filter(|(_, on)| *on).map(|((name, a), _)| (name.to_string(), *a)));
        out
    }
}

pub fn run_simulate(args: &SimulateArgs) -> CliResult {
    let mut config = args.build_config()?;
    let graph = match &args.graph {
        Some(path) => ComputationGraph::from_json(&read_text(path)?).map_err(|e| CliError::io(path, e))?,
        None => standard_training_graph(),
    };
    let fleet: FleetSpec = match &args.fleet {
        Some(path) => {
            let fleet: FleetSpec = read_json(path)?;
            config.fleet.clients = fleet.clients.len();
            config.fleet.classes = fleet.classes;
            config.fleet.tiers = fleet.tiers.clone();
            fleet
        }
        None => {
            config.validate().map_err(orchestrator_error)?;
            generate_fleet(&config.fleet, config.seed).map_err(orchestrator_error)?
        }
    };
    config.validate().map_err(orchestrator_error)?;

    let mut results: Vec<(String, SimulationResult)> = Vec::new();
    for (name, ablation) in args.variants() {
        // A fresh cache per variant keeps planner counts comparable.
        let mut cache = PlanCache::new(config.bucket_bytes);
        let run = SimConfig { ablation, ..config.clone() };
        results.push((name, run_simulation(&run, &fleet, &graph, &mut cache).map_err(orchestrator_error)?));
    }

    let full_time = results[0].1.summary.time_to_target_s;
    let mut summary = Vec::new();
    for (name, result) in &results {
        let rows: Vec<RoundRow> = result
            .records
            .iter()
            .map(|r| RoundRow {
                round: r.round,
                time_s: r.elapsed.as_secs_f64(),
                participants: r.participants,
                faults: r.faults,
                regen_count: r.regen_count,
                proxy_loss: r.proxy_loss,
            })
            .collect();
        let file = if name == "full" { "rounds.csv".to_string() } else { format!("rounds-{name}.csv") };
        write_csv(&args.out_dir.join(file), &rows)?;
        let s = &result.summary;
        let slowdown = match (s.time_to_target_s, full_time) {
            (Some(t), Some(f)) if f > 0.0 => Some(t / f),
            _ => None,
        };
        println!(
            "variant={name} rounds={} time_to_target_s={} final_loss={:.4} planner_calls={} faults={}",
            s.rounds,
            s.time_to_target_s.map_or("none".to_string(), |t| format!("{t:.1}")),
            s.final_loss,
            s.planner_calls,
            s.faults
        );
        summary.push(SummaryRow {
            variant: name.clone(),
            seed: s.seed,
            rounds: s.rounds,
            time_to_target_s: s.time_to_target_s,
            slowdown_vs_full: slowdown,
            total_time_s: s.total_time_s,
            target_loss: s.target_loss,
            final_loss: s.final_loss,
            planner_calls: s.planner_calls,
            cache_hits: s.cache_hits,
            faults: s.faults,
            lmk_kills: s.lmk_kills,
            regen_requests: s.regen_requests,
            dropped: s.dropped,
            overhead_fraction: s.overhead_fraction,
        });
    }
    write_csv(&args.out_dir.join("summary.csv"), &summary)
}
