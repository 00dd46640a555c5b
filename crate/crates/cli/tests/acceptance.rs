//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use memwall_core::codec::csr::{csr_decode, csr_encode};
use memwall_core::codec::huffman::{huffman_decode, huffman_encode};
use memwall_core::codec::bench::{bench_corpus, mean_ratio};
use memwall_core::codec::synth::{gaussian_with_outliers, relu_activation, SyntheticSpec};
use memwall_core::codec::{decode, encode, ActivationTensor, CodecConfig, CodecModel};
use memwall_core::device::DeviceProfile;
use memwall_core::fixtures::{layout_chain, mobilenet_training, random_dag, standard_training_graph, GraphBuilder, RandomDagSpec, TrainingGraphSpec};
use memwall_core::graph::{ComputationGraph, Layout, OpId, OpKind, TensorId};
use memwall_core::orchestrator::cache::PlanCache;
use memwall_core::orchestrator::fleet::{generate_fleet, FleetParams};
use memwall_core::orchestrator::{run_simulation, Ablation, Clustering, SimConfig};
use memwall_core::planner::{generate_plan_with, recompute_cost, replay_plan, Strategy};
use memwall_core::predictor::{generate_trace, predict_series, MemoryTraceSample, PredictorConfig, ProcInfo, SwapKind, TraceSpec};
use memwall_core::selector::{mem_stat, select_clients, ClientId, ClientProfile, GlobalModelReq, SelectionConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const GB: u64 = 1 << 30;
const MB: u64 = 1 << 20;

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self { pass, detail: detail.into() }
    }
}

/// Budget `frac` of the way from the pinned minimum to the untreated peak.
fn between(pinned: u64, peak: u64, frac: f64) -> u64 {
    pinned + ((peak - pinned) as f64 * frac) as u64
}

fn budget_suite() -> impl Iterator<Item = (u64, ComputationGraph, u64)> {
    (0..100u64).flat_map(|seed| {
        let ops = 2 + (seed as usize * 7) % 49;
        let g = random_dag(&RandomDagSpec { ops, ..RandomDagSpec::default() }, seed);
        let (pinned, peak) = (g.pinned_minimum(), g.untreated_peak());
        [0.05, 0.4, 0.8].map(|f| (seed, g.clone(), between(pinned, peak, f)))
    })
}

fn budget_safety() -> Outcome {
    let (dev, codec) = (DeviceProfile::reference(), CodecModel::default());
    let (mut plans, mut bad) = (0, Vec::new());
    for (seed, g, budget) in budget_suite() {
        for strategy in Strategy::ALL {
            let Ok(plan) = generate_plan_with(&g, &dev, budget, &codec, strategy) else { continue };
            plans += 1;
            let report = replay_plan(&plan, &g, &dev).expect("plan replays");
            if !report.is_clean() || report.peak_memory > budget {
                bad.push((seed, budget, strategy));
            }
        }
    }
    Outcome::new(plans >= 300 && bad.is_empty(), format!("{plans} plans over 100 DAGs x 3 budgets, {} unsafe {:?}", bad.len(), bad.first()))
}

fn hybrid_dominance() -> Outcome {
    let (dev, codec) = (DeviceProfile::reference(), CodecModel::default());
    let (mut cases, mut strict, mut bad) = (0, 0, Vec::new());
    for (seed, g, budget) in budget_suite() {
        let lat = |s| generate_plan_with(&g, &dev, budget, &codec, s).map(|p| p.est_latency).ok();
        let pure = [lat(Strategy::EvictOnly), lat(Strategy::CompressOnly)].into_iter().flatten().min();
        let Some(best_pure) = pure else { continue };
        cases += 1;
        match lat(Strategy::Hybrid) {
            Some(h) if h <= best_pure => strict += usize::from(h < best_pure),
            h => bad.push((seed, budget, h, best_pure)),
        }
    }
    Outcome::new(cases > 0 && bad.is_empty(), format!("{cases} feasible cases, {strict} strictly faster, {} worse {:?}", bad.len(), bad.first()))
}

fn layout_recompute() -> Outcome {
    let dev = DeviceProfile::reference();
    let mut checks = Vec::new();
    // Producer 10 µs, chain (4, 2) µs.
    for (crosses, want) in [(false, 16), (true, 22)] {
        let mut b = GraphBuilder::new("psi");
        let x = b.tensor(&[1, 4, 4, 4]);
        let y = b.op(OpKind::Conv, &[x], &[1, 4, 4, 4], 10.0);
        let r = b.tensor_with_layout(&[1, 4, 16], Layout::Flat);
        b.op_with(OpKind::Reshape, &[y], &[r], 4.0, crosses);
        let t = b.tensor_with_layout(&[1, 16, 4], Layout::Flat);
        b.op_with(OpKind::Transpose, &[r], &[t], 2.0, false);
        b.op(OpKind::MatMul, &[t, t], &[1, 16, 4], 5.0);
        let g = b.build();
        checks.push((format!("psi={}", if crosses { 2 } else { 1 }), recompute_cost(&g, TensorId(y), &dev).ok(), Duration::from_micros(want)));
    }
    // Omitting the chain underestimates by exactly its sum.
    for (crosses, chain) in [(false, 6), (true, 12)] {
        let (g, conv, _) = layout_chain(crosses);
        let producer = dev.op_time(g.op(OpId(0)).expect("conv op")).expect("timed");
        let full = recompute_cost(&g, TensorId(conv), &dev).ok();
        checks.push((format!("chain crossing={crosses}"), full.map(|f| f - producer), Duration::from_micros(chain)));
    }
    let (g, _, mm) = layout_chain(false);
    checks.push(("matmul".into(), recompute_cost(&g, TensorId(mm), &dev).ok(), Duration::from_micros(24)));
    let wrong: Vec<_> = checks.iter().filter(|(_, got, want)| *got != Some(*want)).collect();
    let shown = checks.iter().map(|(n, got, _)| format!("{n}:{}us", got.map_or(-1, |d| d.as_micros() as i64))).collect::<Vec<_>>().join(" ");
    Outcome::new(wrong.is_empty(), shown)
}

/// Counts contract breaches by classifying every element independently.
fn contract_breaches(x: &ActivationTensor, config: &CodecConfig) -> (usize, usize) {
    let xr = decode(&encode(x, config).expect("encodes")).expect("decodes");
    let n = x.data.len() as f64;
    let mean = x.data.iter().map(|&v| v as f64).sum::<f64>() / n;
    let std = (x.data.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n).sqrt();
    let outlier = |v: f32| std > 0.0 && (v as f64 - mean).abs() > 3.0 * std;
    let (h, w, b) = (x.height, x.width, config.block);
    let mut breaches = 0;
    for c in 0..x.channels {
        let (orig, rest) = (x.channel(c), xr.channel(c));
        if !orig.iter().any(|&v| outlier(v)) {
            let (lo, hi) = orig.iter().fold((f32::MAX, f32::MIN), |(lo, hi), &v| (lo.min(v), hi.max(v)));
            let half = (hi as f64 - lo as f64) / (2.0 * ((1u32 << config.bits) - 1) as f64);
            breaches += orig
                .iter()
                .zip(rest)
                .filter(|(&a, &r)| (a as f64 - r as f64).abs() > half + a.abs().max(r.abs()) as f64 * f32::EPSILON as f64)
                .count();
            continue;
        }
        for br in (0..h).step_by(b) {
            for bc in (0..w).step_by(b) {
                let cells: Vec<usize> = (br..(br + b).min(h)).flat_map(|r| (bc..(bc + b).min(w)).map(move |cc| r * w + cc)).collect();
                let sparse = (cells.iter().filter(|&&i| orig[i] != 0.0).count() as f32 / (b * b) as f32) < config.tau;
                breaches += cells
                    .iter()
                    .filter(|&&i| {
                        let (a, r) = (orig[i], rest[i]);
                        if a == 0.0 || sparse || outlier(a) {
                            a.to_bits() != r.to_bits() && !(a == 0.0 && r == 0.0)
                        } else {
                            (a as f64 - r as f64).abs() > config.eps
                        }
                    })
                    .count();
            }
        }
    }
    (x.data.len(), breaches)
}

fn codec_contract() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let (mut elements, mut breaches) = (0, 0);
    for round in 0..200 {
        let config = CodecConfig {
            bits: [4, 8][round % 2],
            block: [2, 4, 8][rng.random_range(0..3)],
            tau: [0.1, 0.25, 0.5][rng.random_range(0..3)],
            eps: [1e-1, 1e-2, 1e-3][rng.random_range(0..3)],
            ..CodecConfig::default()
        };
        let (channels, height, width) = (rng.random_range(4..=32), rng.random_range(8..=32), rng.random_range(8..=32));
        let spec = SyntheticSpec { outlier_channels: rng.random_range(0..=channels / 2), ..SyntheticSpec::with_shape(channels, height, width) };
        let t = if rng.random() { relu_activation(&spec, rng.random()) } else { gaussian_with_outliers(&spec, rng.random_range(0.0..0.8), rng.random()) };
        let (n, bad) = contract_breaches(&t, &config);
        elements += n;
        breaches += bad;
    }
    let mut lossy_round_trips = 0;
    for _ in 0..300 {
        let (rows, cols) = (rng.random_range(1..16), rng.random_range(1..16));
        let block: Vec<f32> = (0..rows * cols).map(|_| if rng.random::<f64>() < 0.3 { rng.random_range(-1e3..1e3) } else { 0.0 }).collect();
        let back = csr_decode(&csr_encode(&block, rows, cols), rows, cols);
        lossy_round_trips += usize::from(back.iter().map(|v| v.to_bits()).ne(block.iter().map(|v| v.to_bits())));
        let (len, alphabet) = (rng.random_range(0..2000), rng.random_range(1..512));
        let symbols: Vec<u16> = (0..len).map(|_| rng.random_range(0..alphabet)).collect();
        lossy_round_trips += usize::from(huffman_decode(&huffman_encode(&symbols)).ok() != Some(symbols));
    }
    Outcome::new(
        elements >= 100_000 && breaches == 0 && lossy_round_trips == 0,
        format!("{elements} elements, {breaches} bound breaches, {lossy_round_trips} lossy CSR/Huffman round trips"),
    )
}

/// Mean corpus ratio at the default config and seed 0.
const PINNED_MEAN_RATIO: f64 = 3.3155;

fn codec_ratio() -> Outcome {
    let rows = bench_corpus(&CodecConfig::default(), 0).expect("bench runs");
    let mean = mean_ratio(&rows);
    let violations: usize = rows.iter().map(|r| r.violations).sum();
    let pass = mean >= 2.0 && (mean / PINNED_MEAN_RATIO - 1.0).abs() <= 0.10 && violations == 0;
    Outcome::new(pass, format!("mean ratio {mean:.4} over {} tensors (pinned {PINNED_MEAN_RATIO}), {violations} violations", rows.len()))
}

fn stddev(xs: &[f64]) -> f64 {
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64).sqrt()
}

fn predictor_smoothing() -> Outcome {
    let config = PredictorConfig::default();
    let series = predict_series(&generate_trace(&TraceSpec::spike_fixture(), 0), config).expect("predicts");
    let warm: Vec<_> = series.iter().filter(|p| p.t_ms >= config.window.as_millis() as u64).collect();
    let raw: Vec<f64> = warm.iter().map(|p| p.m_safe as f64).collect();
    let pred: Vec<f64> = warm.iter().map(|p| p.m_pred as f64).collect();
    let ratio = stddev(&pred) / stddev(&raw);

    let m = 3 * GB;
    let constant: Vec<_> = (0..600)
        .map(|i| MemoryTraceSample {
            t_ms: i * 250,
            m_avail: m,
            watermark_high: 160 * MB,
            swap_kind: SwapKind::CompressedRam,
            procs: vec![ProcInfo { score: 0, foreground: true }],
        })
        .collect();
    let flat = predict_series(&constant, config).expect("predicts");
    let exact = !flat.is_empty() && flat.iter().all(|p| p.m_pred == m - 320 * MB);
    Outcome::new(ratio <= 0.5 && exact, format!("spike fixture stddev ratio {ratio:.3}, constant trace exact: {exact}"))
}

fn selector_properties() -> Outcome {
    let kinds = [OpKind::Conv, OpKind::ReLU, OpKind::Pool, OpKind::MatMul];
    let model = GlobalModelReq { memory_bytes: 6 * GB, op_kinds: kinds.into_iter().collect() };
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let pool: Vec<ClientProfile> = (0..600)
        .map(|i| {
            let explored = rng.random::<f64>() < 0.6;
            ClientProfile {
                client_id: ClientId(i),
                mem_budget: rng.random_range(GB..12 * GB),
                op_times: kinds.iter().map(|&k| (k, Duration::from_micros(rng.random_range(50..5_000)))).collect(),
                batch_losses: if explored { (0..rng.random_range(1..16)).map(|_| rng.random_range(0.0..4.0)).collect() } else { vec![] },
                explored,
                last_report_round: 0,
            }
        })
        .collect();

    let mem_ok = (0..10_000).all(|_| {
        let s = mem_stat(rng.random_range(1..u64::MAX / 2), rng.random_range(1..u64::MAX / 2));
        s > 0.0 && s <= 1.0
    }) && mem_stat(1, u64::MAX) > 0.0;

    let mut scaling_ok = true;
    for c in [0.25, 0.5, 2.0, 8.0] {
        let scaled: Vec<ClientProfile> = pool
            .iter()
            .map(|p| ClientProfile {
                op_times: p.op_times.iter().map(|(k, t)| (*k, Duration::from_secs_f64(t.as_secs_f64() * c))).collect::<BTreeMap<_, _>>(),
                ..p.clone()
            })
            .collect();
        let config = SelectionConfig { k: 50, epsilon: 0.9 };
        scaling_ok &= select_clients(&pool, &model, &config, 1).ok() == select_clients(&scaled, &model, &config, 1).ok();
    }

    let splits: Vec<(usize, usize, usize)> = [10, 20, 200]
        .into_iter()
        .map(|k| {
            let sel = select_clients(&pool, &model, &SelectionConfig { k, epsilon: 0.9 }, 1).expect("selects");
            (k, sel.exploit.len(), sel.explore.len())
        })
        .collect();
    let split_ok = splits.iter().all(|&(k, a, b)| (a, b) == (k * 9 / 10, k / 10));
    let shown = splits.iter().map(|(k, a, b)| format!("K={k}:{a}+{b}")).collect::<Vec<_>>().join(" ");
    Outcome::new(mem_ok && scaling_ok && split_ok, format!("mem_stat bounded: {mem_ok}, scaling invariant: {scaling_ok}, splits {shown}"))
}

fn cluster_economy() -> Outcome {
    let g = mobilenet_training(&TrainingGraphSpec { batch: 16, ..TrainingGraphSpec::default() });
    let (device, codec) = (DeviceProfile::reference(), CodecModel::default());
    let config = |clustering| SimConfig {
        rounds: 2,
        fleet: FleetParams { clients: 1000, ..FleetParams::default() },
        selection: SelectionConfig { k: 1000, epsilon: 0.9 },
        clustering,
        ..SimConfig::default()
    };
    let clustered = config(Clustering::KMeans { k: 5 });
    let fleet = generate_fleet(&clustered.fleet, 0).expect("fleet");
    let mut cache = PlanCache::new(clustered.bucket_bytes);
    let with = run_simulation(&clustered, &fleet, &g, &mut cache).expect("runs");
    let without = run_simulation(&config(Clustering::PerClient), &fleet, &g, &mut PlanCache::new(clustered.bucket_bytes)).expect("runs");

    let with_calls: Vec<u64> = with.records.iter().map(|r| r.planner_calls).collect();
    let without_calls: Vec<u64> = without.records.iter().map(|r| r.planner_calls).collect();
    let all_servable = without.records.iter().all(|r| r.unservable.is_empty() && r.selected.len() == 1000);
    let identical = cache.entries().all(|(key, plan)| PlanCache::generate(key, &g, &device, &codec).map(|p| p.to_json()).ok() == Some(plan.to_json()));
    let hits = with.summary.cache_hits;
    Outcome::new(
        with_calls.iter().all(|&c| c <= 5) && without_calls.iter().all(|&c| c == 1000) && all_servable && identical && hits > 0,
        format!("planner calls per round clustered {with_calls:?} vs per-client {without_calls:?}, {hits} cache hits byte-identical: {identical}"),
    )
}

fn system_direction() -> Outcome {
    let g = standard_training_graph();
    let seeds: Vec<u64> = (0..100).collect();
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(8);
    // time_to_target per seed per variant; None when the target is never reached.
    let mut times: Vec<(u64, Vec<Option<f64>>)> = std::thread::scope(|s| {
        let handles: Vec<_> = seeds
            .chunks(seeds.len().div_ceil(workers))
            .map(|chunk| {
                let g = &g;
                s.spawn(move || {
                    let mut cache = PlanCache::default();
                    chunk
                        .iter()
                        .map(|&seed| {
                            let base = SimConfig { seed, rounds: 400, stop_at_target: true, ..SimConfig::default() };
                            let fleet = generate_fleet(&base.fleet, seed).expect("fleet");
                            let row = Ablation::VARIANTS
                                .iter()
                                .map(|(_, ablation)| {
                                    let run = SimConfig { ablation: *ablation, ..base.clone() };
                                    run_simulation(&run, &fleet, g, &mut cache).expect("runs").summary.time_to_target_s
                                })
                                .collect();
                            (seed, row)
                        })
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        handles.into_iter().flat_map(|h| h.join().expect("worker")).collect()
    });
    times.sort_by_key(|(seed, _)| *seed);

    let mut pass = true;
    let mut parts = Vec::new();
    for (v, (name, _)) in Ablation::VARIANTS.iter().enumerate().skip(1) {
        let mut wins = 0;
        let mut ratios = Vec::new();
        for (_, row) in &times {
            match (row[0], row[v]) {
                (Some(full), Some(other)) => {
                    wins += usize::from(full < other);
                    ratios.push(other / full);
                }
                (Some(_), None) => {
                    wins += 1;
                    ratios.push(f64::INFINITY);
                }
                _ => {}
            }
        }
        ratios.sort_by(f64::total_cmp);
        let median = ratios.get(ratios.len() / 2).copied().unwrap_or(f64::NAN);
        let finite: Vec<f64> = ratios.iter().copied().filter(|r| r.is_finite()).collect();
        let mean = finite.iter().sum::<f64>() / finite.len().max(1) as f64;
        let rate = wins as f64 / times.len() as f64;
        pass &= rate >= 0.95;
        parts.push(format!("{name} {wins}/{} (median {median:.3}x, mean {mean:.3}x)", times.len()));
    }
    let full_missed = times.iter().filter(|(_, row)| row[0].is_none()).count();
    Outcome::new(pass, format!("full wins vs {}; full missed target in {full_missed} seeds", parts.join(", ")))
}

struct Run {
    stdout: Vec<u8>,
    code: Option<i32>,
}

fn run_cli(dir: &Path, args: &[&str]) -> Run {
    let out = Command::new(env!("CARGO_BIN_EXE_memwall")).args(args).current_dir(dir).env_remove("MEMWALL_SEED").output().expect("binary runs");
    Run { stdout: out.stdout, code: out.status.code() }
}

fn files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).expect("readable dir").flatten() {
            let path = entry.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let name = path.strip_prefix(dir).expect("inside dir").display().to_string();
                out.insert(name, std::fs::read(&path).expect("readable file"));
            }
        }
    }
    out
}

fn cli_determinism() -> Outcome {
    let quickstart = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/quickstart.json");
    let quickstart = quickstart.to_str().expect("utf-8 path");
    let commands: Vec<Vec<&str>> = vec![
        vec!["gen", "graph", "--kind", "random", "--ops", "40", "--seed", "3", "--out", "random.json"],
        vec!["gen", "graph", "--kind", "mobilenet", "--batch", "16", "--out", "graph.json"],
        vec!["gen", "fleet", "--clients", "40", "--seed", "5", "--out", "fleet.json"],
        vec!["gen", "trace", "--duration-s", "900", "--seed", "6", "--out", "trace.jsonl"],
        vec!["plan", "--graph", "graph.json", "--budget-fraction", "0.5", "--out", "plan.json"],
        vec!["sweep", "--graph", "random.json", "--steps", "7", "--out", "sweep.csv"],
        vec!["codec", "--synthetic", "relu", "--seed", "4", "--out", "t.mwac", "--tensor-out", "t.mwat", "--verify"],
        vec!["decode", "--input", "t.mwac", "--out", "restored.mwat"],
        vec!["bench", "--out", "bench.csv"],
        vec!["predict", "--trace", "trace.jsonl", "--out", "pred.csv"],
        vec![
            "simulate", "--config", quickstart, "--graph", "graph.json", "--fleet", "fleet.json", "--rounds", "10", "--out-dir", "sim",
            "--no-selector", "--no-planner", "--no-codec", "--no-predictor",
        ],
    ];
    let dirs = [tempfile::tempdir().expect("tempdir"), tempfile::tempdir().expect("tempdir")];
    let mut diffs = Vec::new();
    for cmd in &commands {
        let [a, b] = [&dirs[0], &dirs[1]].map(|d| run_cli(d.path(), cmd));
        let name = cmd[..if cmd[0] == "gen" { 2 } else { 1 }].join(" ");
        if a.code != Some(0) || b.code != Some(0) {
            diffs.push(format!("{name} exited {:?}/{:?}", a.code, b.code));
        } else if a.stdout != b.stdout {
            diffs.push(format!("{name} stdout"));
        }
    }
    let (fa, fb) = (files(dirs[0].path()), files(dirs[1].path()));
    diffs.extend(fa.keys().filter(|k| fb.get(*k) != fa.get(*k)).map(|k| format!("file {k}")));
    let subcommands = ["plan", "sweep", "codec", "decode", "bench", "simulate", "gen fleet", "gen trace", "gen graph", "predict"];
    Outcome::new(
        diffs.is_empty() && fa.len() == fb.len(),
        format!("{} subcommands, {} output files, differences: {:?}", subcommands.len(), fa.len(), diffs),
    )
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 10] = [
        ("budget safety", budget_safety),
        ("hybrid dominance", hybrid_dominance),
        ("layout-aware recompute cost", layout_recompute),
        ("codec error contract", codec_contract),
        ("codec ratio", codec_ratio),
        ("predictor smoothing", predictor_smoothing),
        ("selector properties", selector_properties),
        ("plan cache and cluster economy", cluster_economy),
        ("system direction", system_direction),
        ("CLI determinism", cli_determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = check();
        failed += usize::from(!outcome.pass);
        println!(
            "{} {:>2} {name}: {} [{:.1}s]",
            if outcome.pass { "PASS" } else { "FAIL" },
            i + 1,
            outcome.detail,
            start.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
