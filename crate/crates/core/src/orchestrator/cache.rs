//! Server-side memo of execution plans keyed by budget bucket and tier.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::codec::CodecModel;
use crate::device::DeviceProfile;
use crate::graph::ComputationGraph;
use crate::planner::{generate_plan_with, ExecutionPlan, PlanError, Strategy};

pub const DEFAULT_BUCKET_BYTES: u64 = 256 << 20;

/// Stable content fingerprint of a graph (FNV-1a over its JSON form).
pub fn graph_id(graph: &ComputationGraph) -> String {
    let hash = graph.to_json().bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3));
    format!("{}-{hash:016x}", graph.name().unwrap_or("graph"))
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PlanKey {
    pub graph: String,
    /// Lower edge of the budget bucket, bytes.
    pub bucket: u64,
    pub tier_gb: u32,
    pub strategy: Strategy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CacheStats {
    pub hits: u64,
    pub misses: u64,
    /// Planner runs, including failed ones.
    pub planner_calls: u64,
}

/// Plans are generated for the bucket's lower edge, raised to the graph's
/// pinned minimum, so a cached plan fits every budget that maps to its key.
#[derive(Debug, Clone)]
pub struct PlanCache {
    bucket_bytes: u64,
    entries: BTreeMap<PlanKey, Result<ExecutionPlan, PlanError>>,
    stats: CacheStats,
}

impl Default for PlanCache {
    fn default() -> Self {
        Self::new(DEFAULT_BUCKET_BYTES)
    }
}

impl PlanCache {
    pub fn new(bucket_bytes: u64) -> Self {
        Self { bucket_bytes: bucket_bytes.max(1), entries: BTreeMap::new(), stats: CacheStats::default() }
    }

    pub fn bucket_bytes(&self) -> u64 {
        self.bucket_bytes
    }

    pub fn stats(&self) -> CacheStats {
        self.stats
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn key(&self, graph: &ComputationGraph, budget: u64, tier_gb: u32, strategy: Strategy) -> PlanKey {
        PlanKey { graph: graph_id(graph), bucket: budget / self.bucket_bytes * self.bucket_bytes, tier_gb, strategy }
    }

    /// Budget a key's plan is generated for.
    pub fn plan_budget(key: &PlanKey, graph: &ComputationGraph) -> u64 {
        key.bucket.max(graph.pinned_minimum())
    }

    /// Generates the plan for `key` without touching the cache.
    pub fn generate(key: &PlanKey, graph: &ComputationGraph, device: &DeviceProfile, codec: &CodecModel) -> Result<ExecutionPlan, PlanError> {
        generate_plan_with(graph, device, Self::plan_budget(key, graph), codec, key.strategy)
    }

    /// Cached plan for a requester with `budget` bytes. Budgets below the
    /// pinned minimum are rejected without planning.
    pub fn get_or_plan(
        &mut self,
        graph: &ComputationGraph,
        device: &DeviceProfile,
        codec: &CodecModel,
        budget: u64,
        tier_gb: u32,
        strategy: Strategy,
    ) -> Result<(ExecutionPlan, bool), PlanError> {
        let minimum = graph.pinned_minimum();
        if budget < minimum {
            return Err(PlanError::Infeasible { budget, required: minimum });
        }
        let key = self.key(graph, budget, tier_gb, strategy);
        if let Some(entry) = self.entries.get(&key) {
            self.stats.hits += 1;
            return entry.clone().map(|p| (p, true));
        }
        self.stats.misses += 1;
        self.stats.planner_calls += 1;
        let plan = Self::generate(&key, graph, device, codec);
        self.entries.insert(key, plan.clone());
        plan.map(|p| (p, false))
    }

    pub fn entries(&self) -> impl Iterator<Item = (&PlanKey, &ExecutionPlan)> {
        self.entries.iter().filter_map(|(k, v)| v.as_ref().ok().map(|p| (k, p)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::residual8;

    #[test]
    fn second_request_hits() {
        let g = residual8();
        let (d, c) = (DeviceProfile::reference(), CodecModel::default());
        let mut cache = PlanCache::new(64 << 10);
        let budget = g.pinned_minimum() + (g.untreated_peak() - g.pinned_minimum()) / 2;
        let (first, hit) = cache.get_or_plan(&g, &d, &c, budget, 6, Strategy::Hybrid).unwrap();
        assert!(!hit);
        let (second, hit) = cache.get_or_plan(&g, &d, &c, budget + 1, 6, Strategy::Hybrid).unwrap();
        assert!(hit);
        assert_eq!(first.to_json(), second.to_json());
        assert_eq!(cache.stats(), CacheStats { hits: 1, misses: 1, planner_calls: 1 });
        assert!(first.budget <= budget);
        assert!(cache.get_or_plan(&g, &d, &c, g.pinned_minimum() - 1, 6, Strategy::Hybrid).is_err());
        assert_eq!(cache.stats().planner_calls, 1);
    }
}
