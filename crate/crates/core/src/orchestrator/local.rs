//! Local training under a fluctuating memory budget: refault penalties when
//! safe memory dips below the plan's footprint, low-memory kills when it
//! falls below the pinned floor.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::predictor::{m_safe, MemoryTraceSample};

pub const PAGE_BYTES: u64 = 4096;

/// Safe memory sampled at a fixed period from a start time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryTimeline {
    pub period_ms: u64,
    pub values: Vec<u64>,
}

impl MemoryTimeline {
    /// Safe memory of every sample at or after `start_ms`. Samples are
    /// assumed evenly spaced.
    pub fn from_trace(samples: &[MemoryTraceSample], start_ms: u64, period_ms: u64) -> Self {
        Self { period_ms: period_ms.max(1), values: samples.iter().filter(|s| s.t_ms >= start_ms).map(m_safe).collect() }
    }

    pub fn constant(value: u64) -> Self {
        Self { period_ms: 1000, values: vec![value] }
    }

    /// Lowest safe memory over `[from, to)`. Past the end the last value
    /// holds.
    pub fn min_over(&self, from: Duration, to: Duration) -> u64 {
        let from_ms = from.as_millis() as u64;
        let to_ms = (to.as_millis() as u64).max(from_ms + 1);
        let last = self.values.len().saturating_sub(1);
        let a = ((from_ms / self.period_ms) as usize).min(last);
        let b = (((to_ms - 1) / self.period_ms) as usize).min(last);
        self.values[a..=b].iter().copied().min().unwrap_or(u64::MAX)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltyModel {
    /// Refault throughput, bytes per second.
    pub refault_bandwidth: f64,
    /// Fixed cost of each page fault.
    #[serde(with = "super::duration_secs")]
    pub fault_cost: Duration,
}

impl Default for PenaltyModel {
    fn default() -> Self {
        Self { refault_bandwidth: 1e9, fault_cost: Duration::from_millis(1) }
    }
}

impl PenaltyModel {
    /// Transfer time for `overflow` bytes plus the fixed cost of each page
    /// they span.
    pub fn penalty(&self, overflow: u64) -> Duration {
        Duration::from_secs_f64(overflow as f64 / self.refault_bandwidth) + self.fault_cost.mul_f64(overflow.div_ceil(PAGE_BYTES) as f64)
    }
}

/// What the client runs: resident footprint and per-iteration time on the
/// reference device.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Workload {
    pub footprint: u64,
    pub iteration: Duration,
    pub pinned_minimum: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LocalOutcome {
    pub latency: Duration,
    pub page_faults: u64,
    pub overflow_bytes: u64,
    pub lmk_kills: u32,
    pub completed: bool,
}

/// Runs `iterations` local steps. Each step whose window sees safe memory
/// below the footprint refaults the shortfall once. A window below the
/// pinned floor kills the process; training restarts up to `max_retries`
/// times, after which the client drops out of the round.
pub fn simulate_local_round(
    workload: &Workload,
    compute_scale: f64,
    iterations: u32,
    timeline: &MemoryTimeline,
    penalty: &PenaltyModel,
    max_retries: u32,
) -> LocalOutcome {
    let step = workload.iteration.mul_f64(compute_scale);
    let mut out = LocalOutcome::default();
    let mut t = Duration::ZERO;
    let mut done = 0;
    while done < iterations {
        let realized = timeline.min_over(t, t + step);
        if realized < workload.pinned_minimum {
            out.lmk_kills += 1;
            t += step;
            if out.lmk_kills > max_retries {
                out.latency = t;
                out.page_faults = out.overflow_bytes.div_ceil(PAGE_BYTES);
                return out;
            }
            done = 0;
            continue;
        }
        t += step;
        if realized < workload.footprint {
            let overflow = workload.footprint - realized;
            out.overflow_bytes += overflow;
            t += penalty.penalty(overflow);
        }
        done += 1;
    }
    out.latency = t;
    out.page_faults = out.overflow_bytes.div_ceil(PAGE_BYTES);
    out.completed = true;
    out
}
