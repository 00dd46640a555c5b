use std::path::PathBuf;

use clap::{Args, ValueEnum};
use memwall_core::codec::CodecModel;
use memwall_core::device::DeviceProfile;
use memwall_core::graph::ComputationGraph;
use memwall_core::planner::{generate_plan_with, plan_sweep, replay_plan, Action, ExecutionPlan, PlanError, Strategy};
use serde::Serialize;

use crate::error::{CliError, CliResult};
use crate::io::{parse_bytes, read_json, read_text, write_bytes, write_csv};

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum StrategyArg {
    Hybrid,
    EvictOnly,
    CompressOnly,
}

impl From<StrategyArg> for Strategy {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::Hybrid => Strategy::Hybrid,
            StrategyArg::EvictOnly => Strategy::EvictOnly,
            StrategyArg::CompressOnly => Strategy::CompressOnly,
        }
    }
}

#[derive(Debug, Args)]
pub struct GraphInput {
    /// Graph JSON file.
    #[arg(long)]
    pub graph: PathBuf,
    /// Device profile JSON; the reference device when omitted.
    #[arg(long)]
    pub device: Option<PathBuf>,
}

impl GraphInput {
    fn load(&self) -> CliResult<(ComputationGraph, DeviceProfile)> {
        let graph = ComputationGraph::from_json(&read_text(&self.graph)?).map_err(|e| CliError::io(&self.graph, e))?;
        let device = match &self.device {
            Some(path) => read_json::<DeviceProfile>(path)?,
            None => DeviceProfile::reference(),
        };
        device.validate().map_err(CliError::validation)?;
        Ok((graph, device))
    }
}

#[derive(Debug, Args)]
pub struct PlanArgs {
    #[command(flatten)]
    input: GraphInput,
    /// Memory budget, e.g. `1500000000`, `1.5GB` or `1400MiB`.
    #[arg(long, value_parser = parse_bytes, required_unless_present = "budget_fraction", conflicts_with = "budget_fraction")]
    budget: Option<u64>,
    /// Memory budget as a fraction of the untreated peak.
    #[arg(long)]
    budget_fraction: Option<f64>,
    #[arg(long, value_enum, default_value = "hybrid")]
    strategy: StrategyArg,
    /// Where to write the plan JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn infeasible(graph: &ComputationGraph, budget: u64) -> CliError {
    CliError::Infeasible(format!(
        "budget {budget} bytes is below the pinned minimum of {} bytes (graph sources plus the largest single-op working set)",
        graph.pinned_minimum()
    ))
}

fn plan_error(graph: &ComputationGraph, budget: u64, e: PlanError) -> CliError {
    match e {
        PlanError::Infeasible { .. } => infeasible(graph, budget),
        other => CliError::validation(other),
    }
}

/// Replays the plan and fails on any violation.
fn check_plan(plan: &ExecutionPlan, graph: &ComputationGraph, device: &DeviceProfile) -> CliResult {
    let report = replay_plan(plan, graph, device).map_err(CliError::validation)?;
    match report.violations.first() {
        None if report.peak_memory <= plan.budget => Ok(()),
        first => Err(CliError::Contract(format!(
            "generated plan fails replay: peak {} of budget {}, first violation {first:?}",
            report.peak_memory, plan.budget
        ))),
    }
}

pub fn stats_line(plan: &ExecutionPlan, pinned: u64) -> String {
    let counts = plan.action_counts();
    let actions = [Action::Alloc, Action::Free, Action::Evict, Action::Compress, Action::Decompress, Action::Recompute]
        .iter()
        .map(|a| format!("{}={}", a.to_string().to_lowercase(), counts.get(a).copied().unwrap_or(0)))
        .collect::<Vec<_>>()
        .join(" ");
    format!(
        "est_latency_s={:.6} peak_memory={} budget={} pinned_minimum={} reclamations={} {actions}",
        plan.est_latency.as_secs_f64(),
        plan.peak_memory,
        plan.budget,
        pinned,
        plan.reclamations()
    )
}

pub fn run_plan(args: &PlanArgs) -> CliResult {
    let (graph, device) = args.input.load()?;
    let budget = match (args.budget, args.budget_fraction) {
        (Some(b), _) => b,
        (None, Some(f)) if f > 0.0 && f.is_finite() => (graph.untreated_peak() as f64 * f) as u64,
        (None, f) => return Err(CliError::Validation(format!("budget fraction must be positive, got {f:?}"))),
    };
    if budget < graph.pinned_minimum() {
        return Err(infeasible(&graph, budget));
    }
    let plan = generate_plan_with(&graph, &device, budget, &CodecModel::default(), args.strategy.into())
        .map_err(|e| plan_error(&graph, budget, e))?;
    check_plan(&plan, &graph, &device)?;
    if let Some(out) = &args.out {
        write_bytes(out, plan.to_json().as_bytes())?;
    }
    println!("{}", stats_line(&plan, graph.pinned_minimum()));
    Ok(())
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    input: GraphInput,
    /// Largest budget as a fraction of the untreated peak.
    #[arg(long, default_value_t = 1.0)]
    from: f64,
    /// Smallest budget as a fraction of the untreated peak.
    #[arg(long, default_value_t = 0.4)]
    to: f64,
    #[arg(long, default_value_t = 13)]
    steps: usize,
    /// CSV output path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Serialize)]
struct SweepRow {
    fraction: f64,
    budget_bytes: u64,
    feasible: bool,
    est_latency_s: Option<f64>,
    peak_memory: Option<u64>,
    reclamations: Option<usize>,
}

fn round6(x: f64) -> f64 {
    (x * 1e6).round() / 1e6
}

pub fn run_sweep(args: &SweepArgs) -> CliResult {
    if !(args.from >= args.to && args.to > 0.0) || args.steps < 2 {
        return Err(CliError::Validation("sweep needs from >= to > 0 and at least 2 steps".into()));
    }
    let (graph, device) = args.input.load()?;
    let peak = graph.untreated_peak() as f64;
    let fractions: Vec<f64> =
        (0..args.steps).map(|i| round6(args.from + (args.to - args.from) * i as f64 / (args.steps - 1) as f64)).collect();
    let budgets: Vec<u64> = fractions.iter().map(|f| (peak * f) as u64).collect();
    let plans = plan_sweep(&graph, &device, &budgets, &CodecModel::default());
    let mut rows = Vec::new();
    let mut last: Option<f64> = None;
    for ((&fraction, &budget), plan) in fractions.iter().zip(&budgets).zip(&plans) {
        let row = match plan {
            Ok(p) => {
                check_plan(p, &graph, &device)?;
                let latency = p.est_latency.as_secs_f64();
                if last.is_some_and(|l| latency < l) {
                    return Err(CliError::Contract(format!("sweep latency fell from {:?} to {latency} as the budget shrank", last)));
                }
                last = Some(latency);
                SweepRow {
                    fraction,
                    budget_bytes: budget,
                    feasible: true,
                    est_latency_s: Some(latency),
                    peak_memory: Some(p.peak_memory),
                    reclamations: Some(p.reclamations()),
                }
            }
            Err(_) => SweepRow { fraction, budget_bytes: budget, feasible: false, est_latency_s: None, peak_memory: None, reclamations: None },
        };
        rows.push(row);
    }
    write_csv(&args.out, &rows)?;
    let feasible = rows.iter().filter(|r| r.feasible).count();
    println!("budgets={} feasible={feasible} pinned_minimum={}", rows.len(), graph.pinned_minimum());
    Ok(())
}
