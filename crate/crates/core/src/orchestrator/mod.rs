//! Federated round loop over a synthetic fleet: selection, clustered and
//! cached planning, simulated local training under memory pressure,
//! regeneration triggers and aggregation into a loss proxy.

pub mod cache;
pub mod cluster;
pub mod fleet;
pub mod learning;
pub mod local;

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::time::Duration;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::CodecModel;
use crate::device::DeviceProfile;
use crate::graph::{ComputationGraph, GraphError, OpKind, Timeline};
use crate::planner::{generate_plan_with, ExecutionPlan, PlanError, Strategy};
use crate::predictor::{
    generate_trace, m_safe, should_regenerate, BudgetPredictor, PredictorConfig, PredictorError, RegenConfig, RoundStats,
    SwapKind, TraceSpec,
};
use crate::selector::{select_clients, ClientId, ClientProfile, GlobalModelReq, SelectionConfig, SelectorError};

use self::cache::PlanCache;
use self::cluster::{cluster_clients, ClusterPoint};
use self::fleet::{ClientSpec, FleetSpec};
use self::learning::{LearningParams, LossProxy, ModelUpdate};
use self::local::{simulate_local_round, LocalOutcome, MemoryTimeline, PenaltyModel, Workload};

#[derive(Debug, Error)]
pub enum OrchestratorError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    ConfigErrors(Vec<String>),
    #[error("cannot form {k} clusters from {distinct} distinct client profiles")]
    TooManyClusters { k: usize, distinct: usize },
    #[error("nothing to aggregate")]
    EmptyAggregation,
    #[error("update has {found} entries, expected {expected}")]
    LengthMismatch { expected: usize, found: usize },
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Selector(#[from] SelectorError),
    #[error(transparent)]
    Predictor(#[from] PredictorError),
}

pub(crate) mod duration_secs {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let secs = f64::deserialize(d)?;
        Duration::try_from_secs_f64(secs).map_err(serde::de::Error::custom)
    }
}

/// Parts of the system switched off for comparison runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Ablation {
    /// Uniformly random client selection.
    pub random_selection: bool,
    /// Untreated execution: no reclamation, whole peak resident.
    pub no_planner: bool,
    /// Recomputation only.
    pub no_codec: bool,
    /// Budget from the latest raw sample instead of the moving average.
    pub no_predictor: bool,
}

impl Ablation {
    pub const VARIANTS: [(&'static str, Ablation); 5] = [
        ("full", Ablation { random_selection: false, no_planner: false, no_codec: false, no_predictor: false }),
        ("no-selector", Ablation { random_selection: true, no_planner: false, no_codec: false, no_predictor: false }),
        ("no-planner", Ablation { random_selection: false, no_planner: true, no_codec: false, no_predictor: false }),
        ("no-codec", Ablation { random_selection: false, no_planner: false, no_codec: true, no_predictor: false }),
        ("no-predictor", Ablation { random_selection: false, no_planner: false, no_codec: false, no_predictor: true }),
    ];

    pub fn name(&self) -> String {
        let mut parts = Vec::new();
        for (flag, name) in [
            (self.random_selection, "no-selector"),
            (self.no_planner, "no-planner"),
            (self.no_codec, "no-codec"),
            (self.no_predictor, "no-predictor"),
        ] {
            if flag {
                parts.push(name);
            }
        }
        if parts.is_empty() {
            "full".into()
        } else {
            parts.join("+")
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Clustering {
    /// k-means over the round's participants, one cached plan per cluster.
    KMeans { k: usize },
    /// A fresh plan for every participant, no cache.
    PerClient,
}

/// How each phone's available memory behaves.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MemoryModel {
    /// Available memory with only cached apps, as a fraction of DRAM.
    pub avail_fraction: f64,
    pub watermark_fraction: f64,
    pub swap_kind: SwapKind,
    #[serde(with = "duration_secs")]
    pub mean_session: Duration,
    #[serde(with = "duration_secs")]
    pub mean_idle: Duration,
    #[serde(with = "duration_secs")]
    pub mean_switch: Duration,
    pub max_footprint: f64,
    pub spike_depth: f64,
    #[serde(with = "duration_secs")]
    pub spike_duration: Duration,
    /// Standard deviation of sampling noise, bytes.
    pub noise: f64,
}

impl Default for MemoryModel {
    fn default() -> Self {
        let t = TraceSpec::default();
        Self {
            avail_fraction: 0.25,
            watermark_fraction: t.watermark_fraction,
            swap_kind: t.swap_kind,
            mean_session: t.mean_session,
            mean_idle: t.mean_idle,
            mean_switch: t.mean_switch,
            max_footprint: t.max_footprint,
            spike_depth: 0.15,
            spike_duration: t.spike_duration,
            noise: 5e6,
        }
    }
}

impl MemoryModel {
    fn trace_spec(&self, client: &ClientSpec, duration: Duration) -> TraceSpec {
        let dram = client.dram_bytes();
        TraceSpec {
            duration,
            sample_interval: Duration::from_secs(1),
            dram_bytes: dram,
            baseline_avail: (dram as f64 * self.avail_fraction) as u64,
            swap_kind: self.swap_kind,
            watermark_fraction: self.watermark_fraction,
            mean_session: self.mean_session,
            mean_idle: self.mean_idle,
            mean_switch: self.mean_switch,
            max_footprint: self.max_footprint,
            spike_depth: self.spike_depth,
            spike_duration: self.spike_duration,
            noise: self.noise,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub seed: u64,
    pub rounds: u32,
    pub fleet: fleet::FleetParams,
    pub selection: SelectionConfig,
    pub clustering: Clustering,
    pub bucket_bytes: u64,
    pub predictor: PredictorConfig,
    pub regen: RegenConfig,
    /// Regeneration requests honoured per client in any ten rounds.
    pub regen_cap: u32,
    pub memory: MemoryModel,
    pub codec: CodecModel,
    pub local_iterations: u32,
    pub penalty: PenaltyModel,
    pub learning: LearningParams,
    /// Proxy-loss target as a fraction of the initial loss.
    pub target_loss_fraction: f64,
    #[serde(with = "duration_secs")]
    pub aggregation_time: Duration,
    /// Control-plane bandwidth for check-ins, plans and requests, bytes/s.
    pub control_bandwidth: f64,
    pub ablation: Ablation,
    /// End the run at the round that reaches the target.
    pub stop_at_target: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            rounds: 100,
            fleet: fleet::FleetParams::default(),
            selection: SelectionConfig::default(),
            clustering: Clustering::KMeans { k: 5 },
            bucket_bytes: cache::DEFAULT_BUCKET_BYTES,
            predictor: PredictorConfig::default(),
            regen: RegenConfig::default(),
            regen_cap: 3,
            memory: MemoryModel::default(),
            codec: CodecModel::default(),
            local_iterations: 5,
            penalty: PenaltyModel::default(),
            learning: LearningParams::default(),
            target_loss_fraction: 0.1,
            aggregation_time: Duration::from_secs(1),
            control_bandwidth: 1e6,
            ablation: Ablation::default(),
            stop_at_target: false,
        }
    }
}

/// Bytes of one budget check-in or regeneration request.
pub const CONTROL_MESSAGE_BYTES: u64 = 64;

impl SimConfig {
    /// Every problem found, not just the first.
    pub fn validate(&self) -> Result<(), OrchestratorError> {
        let mut errors = Vec::new();
        if let Err(e) = self.fleet.validate() {
            errors.push(e.to_string());
        }
        if self.rounds == 0 {
            errors.push("rounds must be positive".into());
        }
        if self.selection.k == 0 || self.selection.k > self.fleet.clients {
            errors.push(format!("selection k {} must be in 1..={}", self.selection.k, self.fleet.clients));
        }
        if !(self.selection.epsilon > 0.0 && self.selection.epsilon <= 1.0) {
            errors.push(format!("selection epsilon {} must be in (0, 1]", self.selection.epsilon));
        }
        if let Clustering::KMeans { k: 0 } = self.clustering {
            errors.push("cluster count must be positive".into());
        }
        if self.bucket_bytes == 0 {
            errors.push("bucket size must be positive".into());
        }
        if let Err(e) = self.predictor.validate() {
            errors.push(e.to_string());
        }
        if !(self.regen.tp1 > 0.0) || !(self.regen.ws_adj > 0.0 && self.regen.ws_adj < 1.0) {
            errors.push("regeneration thresholds need tp1 > 0 and ws_adj in (0, 1)".into());
        }
        let m = &self.memory;
        if !(m.avail_fraction > 0.0 && m.avail_fraction <= 1.0) || !(m.watermark_fraction >= 0.0 && m.watermark_fraction < 1.0) {
            errors.push("memory fractions must lie in (0, 1]".into());
        }
        if !(m.spike_depth >= 0.0 && m.spike_depth < 1.0) || !(m.max_footprint >= 0.0 && m.max_footprint < 1.0) || !(m.noise >= 0.0) {
            errors.push("spike depth and footprint must lie in [0, 1), noise non-negative".into());
        }
        if m.mean_session.is_zero() || m.mean_switch.is_zero() {
            errors.push("session and switch intervals must be positive".into());
        }
        if self.local_iterations == 0 {
            errors.push("local iterations must be positive".into());
        }
        if !(self.penalty.refault_bandwidth > 0.0) || !(self.control_bandwidth > 0.0) {
            errors.push("bandwidths must be positive".into());
        }
        let l = &self.learning;
        if !(l.learning_rate > 0.0 && l.learning_rate <= 1.0) || !(l.samples_per_class > 0.0) || l.reported_losses == 0 {
            errors.push("learning rate must be in (0, 1], coverage and loss count positive".into());
        }
        if !(self.target_loss_fraction > 0.0 && self.target_loss_fraction < 1.0) {
            errors.push("target loss fraction must be in (0, 1)".into());
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(OrchestratorError::ConfigErrors(errors))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientRound {
    pub client: ClientId,
    /// Budget the client reported at check-in.
    pub budget: u64,
    /// Plan footprint, or the untreated peak without a planner.
    pub footprint: u64,
    #[serde(with = "duration_secs")]
    pub latency: Duration,
    pub page_faults: u64,
    pub lmk_kills: u32,
    pub completed: bool,
    pub regen_requested: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: u32,
    pub selected: Vec<ClientId>,
    /// Selected clients that could not get a feasible plan.
    pub unservable: Vec<ClientId>,
    /// Dispatched clients in ascending id order.
    pub clients: Vec<ClientRound>,
    /// Slowest dispatched client plus the aggregation time.
    #[serde(with = "duration_secs")]
    pub round_time: Duration,
    #[serde(with = "duration_secs")]
    pub elapsed: Duration,
    pub participants: usize,
    pub faults: u64,
    pub regen_count: usize,
    pub proxy_loss: f64,
    pub planner_calls: u64,
    pub cache_hits: u64,
    #[serde(with = "duration_secs")]
    pub control_overhead: Duration,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub variant: String,
    pub seed: u64,
    pub rounds: u32,
    pub total_time_s: f64,
    pub target_loss: f64,
    pub time_to_target_s: Option<f64>,
    pub final_loss: f64,
    pub planner_calls: u64,
    pub cache_hits: u64,
    pub faults: u64,
    pub lmk_kills: u64,
    pub regen_requests: u64,
    pub dropped: u64,
    /// Control-plane time over simulated time.
    pub overhead_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationResult {
    pub records: Vec<RoundRecord>,
    pub summary: Summary,
}

/// SplitMix64 finalizer over a seed and two indices, used to give every
/// (round, client) its own independent stream.
pub fn derive_seed(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed ^ a.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ b.wrapping_mul(0xbf58_476d_1ce4_e5b9).rotate_left(17);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Per-client state the server and device keep across rounds.
#[derive(Debug, Clone)]
struct ClientState {
    window: Duration,
    explored: bool,
    batch_losses: Vec<f64>,
    last_report_round: u32,
    fault_total: u64,
    participations: u64,
    regen_rounds: VecDeque<u32>,
}

struct Dispatch {
    workload: Workload,
    plan_bytes: u64,
}

/// Safe training budget a client reports at check-in, from the history
/// before the round starts.
fn check_in_budget(config: &SimConfig, client: &ClientSpec, window: Duration, round: u32) -> Result<u64, OrchestratorError> {
    let history = config.predictor.window;
    let spec = config.memory.trace_spec(client, history);
    let trace = generate_trace(&spec, derive_seed(client.trace_seed, round as u64, 0));
    if config.ablation.no_predictor {
        return Ok(trace.last().map(m_safe).unwrap_or(0));
    }
    let mut predictor = BudgetPredictor::new(PredictorConfig { window, ..config.predictor })?;
    for s in &trace {
        predictor.observe(s)?;
    }
    Ok(predictor.predict(history.as_millis() as u64)?)
}

/// Safe memory during local training, continuing the check-in history.
fn training_timeline(config: &SimConfig, client: &ClientSpec, round: u32, horizon: Duration) -> MemoryTimeline {
    let history = config.predictor.window;
    let spec = config.memory.trace_spec(client, history + horizon);
    let trace = generate_trace(&spec, derive_seed(client.trace_seed, round as u64, 0));
    MemoryTimeline::from_trace(&trace, history.as_millis() as u64, 1000)
}

/// Summed reference op time per kind.
fn kind_times(graph: &ComputationGraph, device: &DeviceProfile) -> Result<BTreeMap<OpKind, Duration>, OrchestratorError> {
    let mut times = BTreeMap::new();
    for op in graph.ops() {
        let t = device.op_time(op).map_err(|e| OrchestratorError::Config(e.to_string()))?;
        *times.entry(op.kind).or_insert(Duration::ZERO) += t;
    }
    Ok(times)
}

/// Runs the round loop. `cache` may be shared between runs over the same
/// graph; its plans depend only on their keys.
pub fn run_simulation(
    config: &SimConfig,
    fleet: &FleetSpec,
    graph: &ComputationGraph,
    cache: &mut PlanCache,
) -> Result<SimulationResult, OrchestratorError> {
    config.validate()?;
    fleet.validate()?;
    if cache.bucket_bytes() != config.bucket_bytes {
        return Err(OrchestratorError::Config("plan cache bucket size differs from the config".into()));
    }
    if config.selection.k > fleet.clients.len() {
        return Err(OrchestratorError::Config(format!("cannot select {} of {} clients", config.selection.k, fleet.clients.len())));
    }
    let device = DeviceProfile::reference();
    let untreated = Timeline::new(graph, &device)?.total();
    let ref_times = kind_times(graph, &device)?;
    let model_req = GlobalModelReq { memory_bytes: graph.untreated_peak(), op_kinds: graph.op_kinds().into_iter().collect() };
    let pinned = graph.pinned_minimum();
    let strategy = if config.ablation.no_codec { Strategy::EvictOnly } else { Strategy::Hybrid };
    let by_id: BTreeMap<ClientId, &ClientSpec> = fleet.clients.iter().map(|c| (c.id, c)).collect();

    let mut states: BTreeMap<ClientId, ClientState> = fleet
        .clients
        .iter()
        .map(|c| {
            let state = ClientState {
                window: config.predictor.window,
                explored: false,
                batch_losses: Vec::new(),
                last_report_round: 0,
                fault_total: 0,
                participations: 0,
                regen_rounds: VecDeque::new(),
            };
            (c.id, state)
        })
        .collect();
    let mut proxy = LossProxy::new(fleet.classes, config.learning);
    let target = proxy.initial_loss() * config.target_loss_fraction;
    let mut records = Vec::new();
    let mut elapsed = Duration::ZERO;
    let mut time_to_target = None;
    let mut overhead_total = Duration::ZERO;

    for round in 0..config.rounds {
        // 1. Check-ins.
        let mut budgets = BTreeMap::new();
        for c in &fleet.clients {
            budgets.insert(c.id, check_in_budget(config, c, states[&c.id].window, round)?);
        }

        // 2. Selection.
        let selected: Vec<ClientId> = if config.ablation.random_selection {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, round as u64, 1));
            let mut ids: Vec<ClientId> =
                index::sample(&mut rng, fleet.clients.len(), config.selection.k).into_iter().map(|i| fleet.clients[i].id).collect();
            ids.sort();
            ids
        } else {
            let pool: Vec<ClientProfile> = fleet
                .clients
                .iter()
                .map(|c| {
                    let s = &states[&c.id];
                    ClientProfile {
                        client_id: c.id,
                        mem_budget: budgets[&c.id].max(1),
                        op_times: ref_times.iter().map(|(&k, &t)| (k, t.mul_f64(c.compute_scale))).collect(),
                        batch_losses: s.batch_losses.clone(),
                        explored: s.explored,
                        last_report_round: s.last_report_round,
                    }
                })
                .collect();
            let mut ids = select_clients(&pool, &model_req, &config.selection, derive_seed(config.seed, round as u64, 2))?.ids();
            ids.sort();
            ids
        };

        // 3. Planning.
        let calls_before = cache.stats();
        let mut per_client_calls = 0u64;
        let mut dispatch: BTreeMap<ClientId, Dispatch> = BTreeMap::new();
        let mut unservable = Vec::new();
        if config.ablation.no_planner {
            for &id in &selected {
                let workload = Workload { footprint: graph.untreated_peak(), iteration: untreated, pinned_minimum: pinned };
                dispatch.insert(id, Dispatch { workload, plan_bytes: 0 });
            }
        } else {
            let (servable, below): (Vec<ClientId>, Vec<ClientId>) = selected.iter().partition(|id| budgets[id] >= pinned);
            unservable.extend(below);
            let groups: Vec<(ClientId, Vec<ClientId>)> = match config.clustering {
                _ if servable.is_empty() => Vec::new(),
                Clustering::PerClient => servable.iter().map(|&id| (id, vec![id])).collect(),
                Clustering::KMeans { k } => {
                    let points: Vec<ClusterPoint> = servable
                        .iter()
                        .map(|&id| {
                            let total_ms: f64 = ref_times.values().map(|t| t.as_secs_f64() * 1e3 * by_id[&id].compute_scale).sum();
                            ClusterPoint { client: id, mem_budget: budgets[&id], comp_stat: 1.0 / total_ms }
                        })
                        .collect();
                    let distinct: BTreeSet<(u64, u64)> = points.iter().map(|p| (p.mem_budget, p.comp_stat.to_bits())).collect();
                    let assignment = cluster_clients(&points, k.min(distinct.len()), derive_seed(config.seed, round as u64, 3))?;
                    assignment.clusters.into_iter().map(|c| (c.representative, c.members)).collect()
                }
            };
            for (rep, members) in groups {
                let spec = by_id[&rep];
                let plan: Result<ExecutionPlan, PlanError> = match config.clustering {
                    Clustering::PerClient => {
                        per_client_calls += 1;
                        generate_plan_with(graph, &device, budgets[&rep], &config.codec, strategy)
                    }
                    Clustering::KMeans { .. } => {
                        cache.get_or_plan(graph, &device, &config.codec, budgets[&rep], spec.tier_gb, strategy).map(|(p, _)| p)
                    }
                };
                match plan {
                    Ok(plan) => {
                        let plan_bytes = plan.to_json().len() as u64;
                        for id in members {
                            let workload = Workload { footprint: plan.peak_memory, iteration: plan.est_latency, pinned_minimum: pinned };
                            dispatch.insert(id, Dispatch { workload, plan_bytes });
                        }
                    }
                    Err(_) => unservable.extend(members),
                }
            }
            unservable.sort();
        }
        let stats = cache.stats();
        let planner_calls = stats.planner_calls - calls_before.planner_calls + per_client_calls;
        let cache_hits = stats.hits - calls_before.hits;

        // 4. Local training.
        let mut clients = Vec::new();
        let mut updates = Vec::new();
        let mut control_bytes = CONTROL_MESSAGE_BYTES * fleet.clients.len() as u64;
        for (&id, d) in &dispatch {
            let spec = by_id[&id];
            let horizon = d.workload.iteration.mul_f64(spec.compute_scale) * (config.local_iterations * (config.regen.tp2 + 1))
                + Duration::from_secs(10);
            let timeline = training_timeline(config, spec, round, horizon);
            let outcome: LocalOutcome = simulate_local_round(
                &d.workload,
                spec.compute_scale,
                config.local_iterations,
                &timeline,
                &config.penalty,
                config.regen.tp2,
            );
            control_bytes += d.plan_bytes;

            let state = states.get_mut(&id).expect("known client");
            if outcome.completed {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.trace_seed, round as u64, 4));
                state.batch_losses = proxy.sample_losses(&spec.shard, &mut rng);
                state.explored = true;
                state.last_report_round = round;
                updates.push(ModelUpdate { delta: spec.shard.label_proportions.clone(), samples: spec.shard.samples as u64 });
            }
            let prev_avg = if state.participations == 0 { 0.0 } else { state.fault_total as f64 / state.participations as f64 };
            let trigger = should_regenerate(&RoundStats { page_faults: outcome.page_faults, lmk_kills: outcome.lmk_kills }, prev_avg, &config.regen);
            state.participations += 1;
            state.fault_total += outcome.page_faults;
            while state.regen_rounds.front().is_some_and(|&r| r + 10 <= round) {
                state.regen_rounds.pop_front();
            }
            let regen_requested = trigger.is_some() && (state.regen_rounds.len() as u32) < config.regen_cap;
            if regen_requested {
                state.regen_rounds.push_back(round);
                let floor = config.predictor.sample_period * 2;
                state.window = state.window.mul_f64(config.regen.ws_adj).max(floor);
                control_bytes += CONTROL_MESSAGE_BYTES;
            }
            clients.push(ClientRound {
                client: id,
                budget: budgets[&id],
                footprint: d.workload.footprint,
                latency: outcome.latency,
                page_faults: outcome.page_faults,
                lmk_kills: outcome.lmk_kills,
                completed: outcome.completed,
                regen_requested,
            });
        }

        // 5. Aggregation.
        proxy.apply(&updates)?;
        let round_time = clients.iter().map(|c| c.latency).max().unwrap_or(Duration::ZERO) + config.aggregation_time;
        elapsed += round_time;
        let loss = proxy.global_loss();
        if time_to_target.is_none() && loss <= target {
            time_to_target = Some(elapsed);
        }
        let control_overhead = Duration::from_secs_f64(control_bytes as f64 / config.control_bandwidth);
        overhead_total += control_overhead;
        records.push(RoundRecord {
            round,
            selected,
            unservable,
            participants: updates.len(),
            faults: clients.iter().map(|c| c.page_faults).sum(),
            regen_count: clients.iter().filter(|c| c.regen_requested).count(),
            clients,
            round_time,
            elapsed,
            proxy_loss: loss,
            planner_calls,
            cache_hits,
            control_overhead,
        });
        if config.stop_at_target && time_to_target.is_some() {
            break;
        }
    }

    let all = || records.iter().flat_map(|r| &r.clients);
    let summary = Summary {
        variant: config.ablation.name(),
        seed: config.seed,
        rounds: records.len() as u32,
        total_time_s: elapsed.as_secs_f64(),
        target_loss: target,
        time_to_target_s: time_to_target.map(|t| t.as_secs_f64()),
        final_loss: proxy.global_loss(),
        planner_calls: records.iter().map(|r| r.planner_calls).sum(),
        cache_hits: records.iter().map(|r| r.cache_hits).sum(),
        faults: all().map(|c| c.page_faults).sum(),
        lmk_kills: all().map(|c| c.lmk_kills as u64).sum(),
        regen_requests: all().filter(|c| c.regen_requested).count() as u64,
        dropped: all().filter(|c| !c.completed).count() as u64,
        overhead_fraction: overhead_total.as_secs_f64() / elapsed.as_secs_f64().max(f64::MIN_POSITIVE),
    };
    Ok(SimulationResult { records, summary })
}
