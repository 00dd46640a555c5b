//! Budgeted execution planning.
//!
//! The planner walks the schedule once. Before each op it restores missing
//! inputs (decompressing or recomputing, recursively when a producer's own
//! inputs are gone) and allocates the op's outputs. Whenever an allocation
//! does not fit, it reclaims the resident tensor with the highest
//! memory-reduced-per-second score, evicting it for later recomputation or
//! compressing it in place, whichever scores higher.
//!
//! All actions listed for step `s` run before op `s`; actions at step `n`
//! (one past the last op) run after the final op.

mod mps;
mod pool;
mod replay;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::CodecModel;
use crate::device::DeviceProfile;
use crate::graph::{ComputationGraph, GraphError, TensorId, Timeline};

pub use self::mps::{recompute_cost, score_tensor, value_kind, MpsScore};
pub use self::pool::{MemoryPoolSim, TensorRuntimeState, TensorState};
pub use self::replay::{replay_plan, replay_with_budget, ReplayReport, Violation};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum PlanError {
    #[error("budget {budget} bytes is infeasible: planning needed {required} bytes resident at once")]
    Infeasible { budget: u64, required: u64 },
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("malformed plan document: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Action {
    Alloc,
    Free,
    Evict,
    Compress,
    Decompress,
    Recompute,
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Action::Alloc => "ALLOC",
            Action::Free => "FREE",
            Action::Evict => "EVICT",
            Action::Compress => "COMPRESS",
            Action::Decompress => "DECOMPRESS",
            Action::Recompute => "RECOMPUTE",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    #[default]
    Hybrid,
    EvictOnly,
    CompressOnly,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::Hybrid, Strategy::EvictOnly, Strategy::CompressOnly];

    fn may_evict(self) -> bool {
        self != Strategy::CompressOnly
    }

    fn may_compress(self) -> bool {
        self != Strategy::EvictOnly
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanAction {
    pub step: usize,
    pub tensor: TensorId,
    pub action: Action,
}

mod duration_ns {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_nanos() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        u64::deserialize(d).map(Duration::from_nanos)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionPlan {
    pub device: String,
    pub strategy: Strategy,
    pub budget: u64,
    #[serde(rename = "est_latency_ns", with = "duration_ns")]
    pub est_latency: Duration,
    pub peak_memory: u64,
    /// Size and time model the costs were computed with.
    pub codec: CodecModel,
    pub actions: Vec<PlanAction>,
}

impl ExecutionPlan {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plan serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, PlanError> {
        serde_json::from_str(text).map_err(|e| PlanError::Parse(e.to_string()))
    }

    pub fn count(&self, action: Action) -> usize {
        self.actions.iter().filter(|a| a.action == action).count()
    }

    pub fn action_counts(&self) -> BTreeMap<Action, usize> {
        let mut counts = BTreeMap::new();
        for a in &self.actions {
            *counts.entry(a.action).or_insert(0) += 1;
        }
        counts
    }

    /// EVICT plus COMPRESS actions.
    pub fn reclamations(&self) -> usize {
        self.count(Action::Evict) + self.count(Action::Compress)
    }
}

/// Per-tensor quantities fixed for the whole planning run.
struct TensorFacts {
    id: TensorId,
    bytes: u64,
    compressed: u64,
    compress_time: Duration,
    decompress_time: Duration,
    recompute: Duration,
    source: bool,
    /// Tensor indices read by the producer.
    producer_inputs: Vec<usize>,
    /// Consumer steps, ascending.
    uses: Vec<usize>,
    last_use: usize,
}

fn tensor_facts(graph: &ComputationGraph, device: &DeviceProfile, codec: &CodecModel) -> Result<Vec<TensorFacts>, GraphError> {
    graph
        .tensors()
        .iter()
        .map(|t| {
            let kind = value_kind(graph, t.id);
            let producer_inputs = t
                .producer
                .and_then(|p| graph.op(p))
                .map(|op| op.inputs.iter().map(|i| graph.tensor_index(*i).expect("validated")).collect())
                .unwrap_or_default();
            let mut uses: Vec<usize> = t.consumers.iter().map(|c| graph.step_of(*c).expect("validated")).collect();
            uses.sort_unstable();
            uses.dedup();
            Ok(TensorFacts {
                id: t.id,
                bytes: t.bytes,
                compressed: codec.compressed_bytes(kind, t.bytes),
                compress_time: codec.compress_time(kind, t.bytes, device),
                decompress_time: codec.decompress_time(kind, t.bytes, device),
                recompute: recompute_cost(graph, t.id, device)?,
                source: t.is_source(),
                producer_inputs,
                uses,
                last_use: graph.last_use(t.id),
            })
        })
        .collect()
}

/// Cost charged for one action, shared by the planner and the replayer.
fn action_cost(facts: &TensorFacts, action: Action) -> Duration {
    match action {
        Action::Compress => facts.compress_time,
        Action::Decompress => facts.decompress_time,
        Action::Recompute => facts.recompute,
        Action::Alloc | Action::Free | Action::Evict => Duration::ZERO,
    }
}

/// How a reclaimed tensor gives its memory back.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Reclaim {
    /// Drop it and recompute before the next use.
    Evict,
    Compress,
}

/// A tensor considered for reclamation with its score per technique;
/// `None` marks a technique that is unavailable for it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub tensor: TensorId,
    pub pinned: bool,
    pub evict: Option<MpsScore>,
    pub compress: Option<MpsScore>,
}

impl Candidate {
    /// Preferred technique: eviction only when it scores strictly higher.
    pub fn choice(&self) -> Option<(MpsScore, Reclaim)> {
        match (self.evict, self.compress) {
            (Some(e), Some(c)) if e.mps() > c.mps() => Some((e, Reclaim::Evict)),
            (_, Some(c)) => Some((c, Reclaim::Compress)),
            (Some(e), None) => Some((e, Reclaim::Evict)),
            (None, None) => None,
        }
    }
}

/// Unpinned candidate with the highest score. Ties go to the larger saved
/// memory, then to the lower tensor id.
pub fn max_mps_tensor(candidates: &[Candidate]) -> Option<(TensorId, Reclaim)> {
    candidates
        .iter()
        .filter(|c| !c.pinned)
        .filter_map(|c| c.choice().map(|(score, how)| (c.tensor, score, how)))
        .max_by(|a, b| {
            a.1.mps()
                .total_cmp(&b.1.mps())
                .then(a.1.saved_memory.cmp(&b.1.saved_memory))
                .then(b.0.cmp(&a.0))
        })
        .map(|(t, _, how)| (t, how))
}

struct Planner<'a> {
    graph: &'a ComputationGraph,
    strategy: Strategy,
    facts: &'a [TensorFacts],
    timeline: Timeline,
    /// Tensors whose eviction made an earlier pass infeasible.
    no_evict: &'a BTreeSet<usize>,
    /// Evicted tensors whose recovery is in progress, outermost first.
    recovering: Vec<usize>,
    state: Vec<TensorState>,
    pinned: BTreeSet<usize>,
    pool: MemoryPoolSim,
    actions: Vec<PlanAction>,
    latency: Duration,
    step: usize,
    depth_cap: usize,
}

impl<'a> Planner<'a> {
    fn emit(&mut self, t: usize, action: Action) {
        self.latency += action_cost(&self.facts[t], action);
        self.actions.push(PlanAction { step: self.step, tensor: self.facts[t].id, action });
        let f = &self.facts[t];
        let (id, bytes, compressed) = (f.id, f.bytes, f.compressed);
        self.state[t] = match action {
            Action::Alloc | Action::Recompute => {
                self.pool.allocate(id, bytes);
                TensorState::Live
            }
            Action::Decompress => {
                self.pool.resize(id, bytes);
                TensorState::Live
            }
            Action::Compress => {
                self.pool.resize(id, compressed);
                TensorState::Compressed
            }
            Action::Evict => {
                self.pool.release(id);
                TensorState::Evicted
            }
            Action::Free => {
                self.pool.release(id);
                TensorState::Freed
            }
        };
    }

    /// Nothing is left to reclaim: report what the pool would have to hold.
    fn infeasible(&self, need: u64) -> PlanError {
        PlanError::Infeasible { budget: self.pool.budget(), required: self.pool.used() + need }
    }

    /// Estimated time to have input `i` LIVE again at step `at`. Inputs whose
    /// last use comes before `at` will have been freed by then.
    fn regain(&self, i: usize, at: usize, depth: usize, memo: &mut HashMap<usize, Duration>) -> Duration {
        let f = &self.facts[i];
        if f.source {
            return Duration::ZERO;
        }
        if f.last_use < at {
            return self.recompute_estimate(i, at, depth, memo);
        }
        match self.state[i] {
            TensorState::Live | TensorState::Unallocated => Duration::ZERO,
            TensorState::Compressed => f.decompress_time,
            TensorState::Evicted | TensorState::Freed => self.recompute_estimate(i, at, depth, memo),
        }
    }

    /// Recompute cost plus the regain cost of the producer's inputs,
    /// recursing at most to graph depth.
    fn recompute_estimate(&self, t: usize, at: usize, depth: usize, memo: &mut HashMap<usize, Duration>) -> Duration {
        if let Some(&d) = memo.get(&t) {
            return d;
        }
        let mut cost = self.facts[t].recompute;
        if depth < self.depth_cap {
            for &i in &self.facts[t].producer_inputs {
                cost += self.regain(i, at, depth + 1, memo);
            }
        }
        memo.insert(t, cost);
        cost
    }

    fn next_use(&self, t: usize) -> Option<usize> {
        self.facts[t].uses.iter().copied().find(|&u| u >= self.step)
    }

    fn candidates(&self) -> Vec<Candidate> {
        let mut out = Vec::new();
        for (t, f) in self.facts.iter().enumerate() {
            let state = self.state[t];
            if f.source || !state.is_resident() {
                continue;
            }
            let Some(next) = self.next_use(t) else { continue };
            let flt = self.timeline.starts[next] - self.timeline.starts[self.step];
            let evict = (self.strategy.may_evict() && !self.no_evict.contains(&t)).then(|| MpsScore {
                saved_memory: self.pool.resident_bytes(f.id),
                freed_lifetime: flt,
                purge_cost: Duration::ZERO,
                regain_cost: self.recompute_estimate(t, next, 0, &mut HashMap::new()),
            });
            let compress = (self.strategy.may_compress() && state == TensorState::Live && f.compressed < f.bytes).then(|| MpsScore {
                saved_memory: f.bytes - f.compressed,
                freed_lifetime: flt,
                purge_cost: f.compress_time,
                regain_cost: f.decompress_time,
            });
            out.push(Candidate { tensor: f.id, pinned: self.pinned.contains(&t), evict, compress });
        }
        out
    }

    fn ensure_room(&mut self, need: u64) -> Result<(), PlanError> {
        while !self.pool.fits(need) {
            let Some((id, how)) = max_mps_tensor(&self.candidates()) else {
                return Err(self.infeasible(need));
            };
            let t = self.graph.tensor_index(id).expect("candidate exists");
            match how {
                Reclaim::Evict => self.emit(t, Action::Evict),
                Reclaim::Compress => self.emit(t, Action::Compress),
            }
        }
        Ok(())
    }

    /// Brings a pinned tensor back to LIVE.
    fn make_resident(&mut self, t: usize) -> Result<(), PlanError> {
        match self.state[t] {
            TensorState::Live => Ok(()),
            TensorState::Compressed => {
                let f = &self.facts[t];
                self.ensure_room(f.bytes - f.compressed)?;
                self.emit(t, Action::Decompress);
                Ok(())
            }
            TensorState::Evicted | TensorState::Freed => self.recover(t),
            TensorState::Unallocated => unreachable!("inputs are produced earlier in the schedule"),
        }
    }

    fn recover(&mut self, t: usize) -> Result<(), PlanError> {
        let chosen = self.state[t] == TensorState::Evicted;
        if chosen {
            self.recovering.push(t);
        }
        let inputs = self.facts[t].producer_inputs.clone();
        let newly_pinned: Vec<usize> = inputs.iter().copied().filter(|&i| self.pinned.insert(i)).collect();
        for &i in &inputs {
            self.make_resident(i)?;
        }
        self.ensure_room(self.facts[t].bytes)?;
        self.emit(t, Action::Recompute);
        for i in newly_pinned {
            self.pinned.remove(&i);
            let f = &self.facts[i];
            if !f.source && f.last_use < self.step && self.state[i].is_resident() {
                self.emit(i, Action::Free);
            }
        }
        if chosen {
            self.recovering.pop();
        }
        Ok(())
    }

    /// Runs the pass. A failure reports the outermost evicted tensor that was
    /// being recovered, if any, so a retry can keep it resident instead.
    fn run(mut self, device: &DeviceProfile) -> Result<PassResult, (PlanError, Option<usize>)> {
        let result = self.walk(device);
        result.map_err(|e| (e, self.recovering.first().copied()))
    }

    fn walk(&mut self, device: &DeviceProfile) -> Result<PassResult, PlanError> {
        let n = self.graph.num_steps();
        let mut dies_at: Vec<Vec<usize>> = vec![Vec::new(); n + 1];
        for (t, f) in self.facts.iter().enumerate() {
            if !f.source {
                dies_at[f.last_use + 1].push(t);
            }
        }
        for t in 0..self.facts.len() {
            if self.facts[t].source {
                self.emit(t, Action::Alloc);
            }
        }
        for step in 0..n {
            self.step = step;
            for &t in &dies_at[step] {
                if self.state[t].is_resident() {
                    self.emit(t, Action::Free);
                }
                self.state[t] = TensorState::Freed;
            }
            let op = &self.graph.ops()[step];
            let index = |id: &TensorId| self.graph.tensor_index(*id).expect("validated");
            let inputs: Vec<usize> = op.inputs.iter().map(index).collect();
            let outputs: Vec<usize> = op.outputs.iter().map(index).collect();
            self.pinned = inputs.iter().chain(&outputs).copied().collect();
            for &t in &inputs {
                self.make_resident(t)?;
            }
            for &t in &outputs {
                self.ensure_room(self.facts[t].bytes)?;
                self.emit(t, Action::Alloc);
            }
            self.latency += device.op_time(op).map_err(GraphError::from)?;
        }
        self.step = n;
        self.pinned.clear();
        for t in 0..self.facts.len() {
            if self.state[t].is_resident() {
                self.emit(t, Action::Free);
            }
        }
        Ok((std::mem::take(&mut self.actions), self.latency, self.pool.peak()))
    }
}

type PassResult = (Vec<PlanAction>, Duration, u64);

/// Hybrid plan for `budget` bytes.
pub fn generate_plan(
    graph: &ComputationGraph,
    device: &DeviceProfile,
    budget: u64,
    codec: &CodecModel,
) -> Result<ExecutionPlan, PlanError> {
    generate_plan_with(graph, device, budget, codec, Strategy::Hybrid)
}

/// Plans with the given strategy. The hybrid strategy runs the greedy pass
/// with both techniques available and also the two single-technique passes,
/// keeping the fastest plan, so it is never slower than either pure strategy.
pub fn generate_plan_with(
    graph: &ComputationGraph,
    device: &DeviceProfile,
    budget: u64,
    codec: &CodecModel,
    strategy: Strategy,
) -> Result<ExecutionPlan, PlanError> {
    let minimum = graph.pinned_minimum();
    if budget < minimum {
        return Err(PlanError::Infeasible { budget, required: minimum });
    }
    let passes: &[Strategy] = match strategy {
        Strategy::Hybrid => &Strategy::ALL,
        Strategy::EvictOnly => &[Strategy::EvictOnly],
        Strategy::CompressOnly => &[Strategy::CompressOnly],
    };
    let mut best: Option<PassResult> = None;
    let mut first_error = None;
    for &pass in passes {
        match greedy_pass(graph, device, budget, codec, pass) {
            Ok(run) => {
                if best.as_ref().is_none_or(|b| run.1 < b.1) {
                    best = Some(run);
                }
            }
            Err(e) => {
                first_error.get_or_insert(e);
            }
        }
    }
    let (actions, est_latency, peak_memory) = match best {
        Some(b) => b,
        None => return Err(first_error.expect("at least one pass ran")),
    };
    Ok(ExecutionPlan {
        device: device.name.clone(),
        strategy,
        budget,
        est_latency,
        peak_memory,
        codec: codec.clone(),
        actions,
    })
}

/// One greedy walk, retried with a growing set of tensors barred from
/// eviction whenever recovering an evicted tensor is what ran out of room.
fn greedy_pass(
    graph: &ComputationGraph,
    device: &DeviceProfile,
    budget: u64,
    codec: &CodecModel,
    strategy: Strategy,
) -> Result<PassResult, PlanError> {
    let facts = tensor_facts(graph, device, codec)?;
    let timeline = Timeline::new(graph, device)?;
    let mut no_evict = BTreeSet::new();
    loop {
        let planner = Planner {
            graph,
            strategy,
            state: vec![TensorState::Unallocated; facts.len()],
            facts: &facts,
            timeline: timeline.clone(),
            no_evict: &no_evict,
            recovering: Vec::new(),
            pinned: BTreeSet::new(),
            pool: MemoryPoolSim::new(budget),
            actions: Vec::new(),
            latency: Duration::ZERO,
            step: 0,
            depth_cap: graph.depth(),
        };
        match planner.run(device) {
            Ok(pass) => return Ok(pass),
            Err((_, Some(blame))) if !no_evict.contains(&blame) => {
                no_evict.insert(blame);
            }
            Err((e, _)) => return Err(e),
        }
    }
}

/// Plans for several budgets at once. A plan that fits a lower budget also
/// fits every higher one, so each budget gets the fastest plan found at or
/// below it and latency never rises as the budget grows. Results follow the
/// order of `budgets`.
pub fn plan_sweep(
    graph: &ComputationGraph,
    device: &DeviceProfile,
    budgets: &[u64],
    codec: &CodecModel,
) -> Vec<Result<ExecutionPlan, PlanError>> {
    let mut order: Vec<usize> = (0..budgets.len()).collect();
    order.sort_by_key(|&i| budgets[i]);
    let mut results: Vec<Option<Result<ExecutionPlan, PlanError>>> = budgets.iter().map(|_| None).collect();
    let mut best: Option<ExecutionPlan> = None;
    for i in order {
        let fresh = generate_plan(graph, device, budgets[i], codec);
        let result = match (fresh, &best) {
            (Ok(p), Some(b)) if b.est_latency < p.est_latency => Ok(ExecutionPlan { budget: budgets[i], ..b.clone() }),
            (Ok(p), _) => Ok(p),
            (Err(_), Some(b)) => Ok(ExecutionPlan { budget: budgets[i], ..b.clone() }),
            (Err(e), None) => Err(e),
        };
        if let Ok(p) = &result {
            best = Some(p.clone());
        }
        results[i] = Some(result);
    }
    results.into_iter().map(|r| r.expect("every budget planned")).collect()
}
