//! Deterministic plan replay through the pool simulator.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{action_cost, tensor_facts, Action, ExecutionPlan, MemoryPoolSim, TensorState};
use crate::device::DeviceProfile;
use crate::graph::{ComputationGraph, GraphError, TensorId};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Violation {
    /// An op or a recomputation read a tensor that was not LIVE.
    MissingTensor { step: usize, tensor: TensorId },
    OverBudget { step: usize, used: u64, budget: u64 },
    InvalidTransition { step: usize, tensor: TensorId, action: Action, state: TensorState },
    UnknownTensor { step: usize, tensor: TensorId },
    /// Action steps must be non-decreasing and at most the op count.
    StepOutOfOrder { index: usize, step: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayReport {
    pub peak_memory: u64,
    pub latency: Duration,
    pub violations: Vec<Violation>,
}

impl ReplayReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

pub fn replay_plan(plan: &ExecutionPlan, graph: &ComputationGraph, device: &DeviceProfile) -> Result<ReplayReport, GraphError> {
    replay_with_budget(plan, graph, device, plan.budget)
}

/// Replays `plan` against a pool of `budget` bytes, which may differ from the
/// budget the plan was generated for.
pub fn replay_with_budget(
    plan: &ExecutionPlan,
    graph: &ComputationGraph,
    device: &DeviceProfile,
    budget: u64,
) -> Result<ReplayReport, GraphError> {
    let facts = tensor_facts(graph, device, &plan.codec)?;
    let n = graph.num_steps();
    let mut state = vec![TensorState::Unallocated; facts.len()];
    let mut pool = MemoryPoolSim::new(budget);
    let mut violations = Vec::new();
    let mut latency = Duration::ZERO;
    let mut cursor = 0;

    for step in 0..=n {
        while let Some(a) = plan.actions.get(cursor).filter(|a| a.step == step) {
            cursor += 1;
            let Some(t) = graph.tensor_index(a.tensor) else {
                violations.push(Violation::UnknownTensor { step, tensor: a.tensor });
                continue;
            };
            let f = &facts[t];
            let from = state[t];
            let allowed = match a.action {
                Action::Alloc => from == TensorState::Unallocated,
                Action::Free => from != TensorState::Unallocated && from != TensorState::Freed,
                Action::Evict => from.is_resident() && !f.source,
                Action::Compress => from == TensorState::Live,
                Action::Decompress => from == TensorState::Compressed,
                Action::Recompute => matches!(from, TensorState::Evicted | TensorState::Freed) && !f.source,
            };
            if !allowed {
                violations.push(Violation::InvalidTransition { step, tensor: a.tensor, action: a.action, state: from });
                continue;
            }
            if a.action == Action::Recompute {
                let missing: Vec<usize> =
                    f.producer_inputs.iter().copied().filter(|&i| state[i] != TensorState::Live).collect();
                if !missing.is_empty() {
                    violations.extend(missing.into_iter().map(|i| Violation::MissingTensor { step, tensor: facts[i].id }));
                    continue;
                }
            }
            latency += action_cost(f, a.action);
            state[t] = match a.action {
                Action::Alloc | Action::Recompute => {
                    pool.allocate(f.id, f.bytes);
                    TensorState::Live
                }
                Action::Decompress => {
                    pool.resize(f.id, f.bytes);
                    TensorState::Live
                }
                Action::Compress => {
                    pool.resize(f.id, f.compressed);
                    TensorState::Compressed
                }
                Action::Evict => {
                    pool.release(f.id);
                    TensorState::Evicted
                }
                Action::Free => {
                    pool.release(f.id);
                    TensorState::Freed
                }
            };
            if pool.over_budget() {
                violations.push(Violation::OverBudget { step, used: pool.used(), budget });
            }
        }
        if let Some(a) = plan.actions.get(cursor) {
            if a.step < step || a.step > n {
                violations.push(Violation::StepOutOfOrder { index: cursor, step: a.step });
                cursor = plan.actions.len();
            }
        }
        if step == n {
            break;
        }
        let op = &graph.ops()[step];
        for id in op.inputs.iter().chain(&op.outputs) {
            let t = graph.tensor_index(*id).expect("validated");
            if state[t] != TensorState::Live {
                violations.push(Violation::MissingTensor { step, tensor: *id });
            }
        }
        latency += device.op_time(op)?;
    }
    Ok(ReplayReport { peak_memory: pool.peak(), latency, violations })
}
