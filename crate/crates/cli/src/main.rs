//! `memwall`: memory-aware on-device training planner, codec, predictor and
//! federated simulator.
//!
//! Exit codes: 0 success, 1 invalid input, 2 infeasible input, 3 internal
//! contract violation.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod codec;
mod error;
mod gen;
mod io;
mod plan;
mod simulate;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::error::CliResult;

#[derive(Debug, Parser)]
#[command(name = "memwall", version, about = "Memory-budgeted training plans, activation compression and federated simulation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate an execution plan for a memory budget.
    Plan(plan::PlanArgs),
    /// Plan across a range of budgets and write the latency curve.
    Sweep(plan::SweepArgs),
    /// Compress a tensor, optionally verifying the error bounds.
    Codec(codec::CodecArgs),
    /// Restore a raw tensor from a compressed bitstream.
    Decode(codec::DecodeArgs),
    /// Compression ratios over the synthetic activation corpus.
    Bench(codec::BenchArgs),
    /// Run the federated simulation and ablation variants.
    Simulate(simulate::SimulateArgs),
    /// Generate fleet, trace or graph fixtures.
    #[command(subcommand)]
    Gen(gen::GenCommand),
    /// Replay a memory trace through the budget predictor.
    Predict(gen::PredictArgs),
}

fn run(cli: &Cli) -> CliResult {
    match &cli.command {
        Command::Plan(a) => plan::run_plan(a),
        Command::Sweep(a) => plan::run_sweep(a),
        Command::Codec(a) => codec::run_codec(a),
        Command::Decode(a) => codec::run_decode(a),
        Command::Bench(a) => codec::run_bench(a),
        Command::Simulate(a) => simulate::run_simulate(a),
        Command::Gen(c) => gen::run_gen(c),
        Command::Predict(a) => gen::run_predict(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
