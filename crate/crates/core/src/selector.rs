//! Utility-driven client selection with an exploit/explore split.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::OpKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClientId(pub u32);

impl fmt::Display for ClientId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "client#{}", self.0)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum SelectorError {
    #[error("{0} has no reported losses")]
    NoLosses(ClientId),
    #[error("loss list is empty")]
    EmptyLosses,
    #[error("{client} reports no time for op kind {kind:?}")]
    IncompleteProfile { client: ClientId, kind: OpKind },
    #[error("{0} reports a non-positive memory budget or op time")]
    NonPositive(ClientId),
    #[error("cannot select {k} clients from a pool of {pool}")]
    PoolTooSmall { k: usize, pool: usize },
    #[error("exploit fraction must be in (0, 1], got {0}")]
    InvalidEpsilon(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientProfile {
    pub client_id: ClientId,
    /// Predicted safe training budget in bytes.
    pub mem_budget: u64,
    /// Locally measured execution time per op kind.
    pub op_times: BTreeMap<OpKind, Duration>,
    /// Per-sample losses from the client's last local round.
    pub batch_losses: Vec<f64>,
    pub explored: bool,
    pub last_report_round: u32,
}

/// What the global model needs from a client.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalModelReq {
    /// Memory to train the model without any reclamation.
    pub memory_bytes: u64,
    pub op_kinds: BTreeSet<OpKind>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionConfig {
    pub k: usize,
    /// Fraction of each round's picks taken from the highest-utility clients.
    pub epsilon: f64,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self { k: 10, epsilon: 0.9 }
    }
}

impl SelectionConfig {
    /// Number of exploit picks, `⌈εK⌉`. The tolerance keeps products such as
    /// `0.9 × 10` from rounding up past the integer they represent.
    pub fn exploit_count(&self) -> usize {
        ((self.epsilon * self.k as f64) - 1e-9).ceil().max(0.0) as usize
    }
}

/// 1 when the client can hold the whole model, otherwise the fraction it can.
pub fn mem_stat(m_i: u64, m_g: u64) -> f64 {
    if m_g > m_i {
        m_i as f64 / m_g as f64
    } else {
        1.0
    }
}

/// Root mean square of the reported losses.
pub fn stat_utility(batch_losses: &[f64]) -> Result<f64, SelectorError> {
    if batch_losses.is_empty() {
        return Err(SelectorError::EmptyLosses);
    }
    let mean_sq = batch_losses.iter().map(|l| l * l).sum::<f64>() / batch_losses.len() as f64;
    Ok(mean_sq.sqrt())
}

/// Inverse of the summed per-kind op time over the model's kinds, in 1/ms.
pub fn comp_stat(
    client: ClientId,
    op_times: &BTreeMap<OpKind, Duration>,
    kinds: &BTreeSet<OpKind>,
) -> Result<f64, SelectorError> {
    let mut total_ms = 0.0;
    for &kind in kinds {
        let t = op_times.get(&kind).ok_or(SelectorError::IncompleteProfile { client, kind })?;
        if t.is_zero() {
            return Err(SelectorError::NonPositive(client));
        }
        total_ms += t.as_secs_f64() * 1e3;
    }
    if total_ms == 0.0 {
        return Err(SelectorError::IncompleteProfile { client, kind: OpKind::Other });
    }
    Ok(1.0 / total_ms)
}

/// Memory and compute utility, the ranking key for clients without losses.
pub fn system_utility(profile: &ClientProfile, model: &GlobalModelReq) -> Result<f64, SelectorError> {
    if profile.mem_budget == 0 {
        return Err(SelectorError::NonPositive(profile.client_id));
    }
    Ok(mem_stat(profile.mem_budget, model.memory_bytes) * comp_stat(profile.client_id, &profile.op_times, &model.op_kinds)?)
}

pub fn client_utility(profile: &ClientProfile, model: &GlobalModelReq) -> Result<f64, SelectorError> {
    if !profile.explored || profile.batch_losses.is_empty() {
        return Err(SelectorError::NoLosses(profile.client_id));
    }
    Ok(stat_utility(&profile.batch_losses)? * system_utility(profile, model)?)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Selection {
    /// Highest-utility explored clients, best first.
    pub exploit: Vec<ClientId>,
    /// Unexplored clients with the richest resources, plus any backfill.
    pub explore: Vec<ClientId>,
}

impl Selection {
    pub fn ids(&self) -> Vec<ClientId> {
        self.exploit.iter().chain(&self.explore).copied().collect()
    }

    pub fn len(&self) -> usize {
        self.exploit.len() + self.explore.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Descending by score, then ascending by tie key.
fn rank<K: Ord + Copy>(mut scored: Vec<(ClientId, f64, K)>) -> Vec<ClientId> {
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(Ordering::Equal).then(a.2.cmp(&b.2)));
    scored.into_iter().map(|(id, _, _)| id).collect()
}

/// Picks `k` distinct clients: `⌈εK⌉` by utility among explored clients, the
/// rest among unexplored clients by system resources, each side backfilled
/// from the other when short. The result does not depend on pool order.
pub fn select_clients(
    pool: &[ClientProfile],
    model: &GlobalModelReq,
    config: &SelectionConfig,
    seed: u64,
) -> Result<Selection, SelectorError> {
    if !(config.epsilon > 0.0 && config.epsilon <= 1.0) {
        return Err(SelectorError::InvalidEpsilon(config.epsilon));
    }
    if config.k == 0 || config.k > pool.len() {
        return Err(SelectorError::PoolTooSmall { k: config.k, pool: pool.len() });
    }
    let mut sorted: Vec<&ClientProfile> = pool.iter().collect();
    sorted.sort_by_key(|p| p.client_id);

    let mut explored = Vec::new();
    let mut fresh = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for p in sorted {
        if p.explored && !p.batch_losses.is_empty() {
            explored.push((p.client_id, client_utility(p, model)?, p.client_id));
        } else {
            // Random tie keys stand in for an exploration bonus among equals.
            let tie: u64 = rng.random();
            fresh.push((p.client_id, system_utility(p, model)?, (tie, p.client_id)));
        }
    }
    let explored = rank(explored);
    let fresh = rank(fresh);

    let exploit_take = config.exploit_count().min(config.k).min(explored.len()).max(config.k - fresh.len().min(config.k));
    let exploit = explored[..exploit_take].to_vec();
    let explore = fresh[..config.k - exploit_take].to_vec();
    Ok(Selection { exploit, explore })
}

#[cfg(test)]
mod tests {
    use super::*;

    const GB: u64 = 1 << 30;

    fn times(conv_ms: f64, relu_ms: f64) -> BTreeMap<OpKind, Duration> {
        BTreeMap::from([
            (OpKind::Conv, Duration::from_secs_f64(conv_ms / 1e3)),
            (OpKind::ReLU, Duration::from_secs_f64(relu_ms / 1e3)),
        ])
    }

    fn model() -> GlobalModelReq {
        GlobalModelReq { memory_bytes: 8 * GB, op_kinds: BTreeSet::from([OpKind::Conv, OpKind::ReLU]) }
    }

    #[test]
    fn memory_utility() {
        assert_eq!(mem_stat(8 * GB, 8 * GB), 1.0);
        assert_eq!(mem_stat(4 * GB, 8 * GB), 0.5);
        assert_eq!(mem_stat(16 * GB, 8 * GB), 1.0);
    }

    #[test]
    fn statistical_utility() {
        assert!((stat_utility(&[3.0, 4.0]).unwrap() - 12.5f64.sqrt()).abs() < 1e-12);
        assert_eq!(stat_utility(&[0.0, 0.0]).unwrap(), 0.0);
        assert_eq!(stat_utility(&[-2.5]).unwrap(), 2.5);
        assert_eq!(stat_utility(&[]), Err(SelectorError::EmptyLosses));
    }

    #[test]
    fn computing_utility() {
        let kinds = model().op_kinds;
        let c = ClientId(1);
        assert!((comp_stat(c, &times(2.0, 0.5), &kinds).unwrap() - 0.4).abs() < 1e-12);
        assert!((comp_stat(c, &times(4.0, 1.0), &kinds).unwrap() - 0.2).abs() < 1e-12);
        let with_matmul: BTreeSet<OpKind> = kinds.iter().copied().chain([OpKind::MatMul]).collect();
        assert_eq!(comp_stat(c, &times(2.0, 0.5), &with_matmul), Err(SelectorError::IncompleteProfile { client: c, kind: OpKind::MatMul }));
    }

    #[test]
    fn composed_utility() {
        let p = ClientProfile {
            client_id: ClientId(3),
            mem_budget: 4 * GB,
            op_times: times(2.0, 0.5),
            batch_losses: vec![3.0, 4.0],
            explored: true,
            last_report_round: 0,
        };
        assert!((client_utility(&p, &model()).unwrap() - 12.5f64.sqrt() * 0.5 * 0.4).abs() < 1e-12);
        let zero = ClientProfile { batch_losses: vec![0.0], ..p.clone() };
        assert_eq!(client_utility(&zero, &model()).unwrap(), 0.0);
        let fresh = ClientProfile { explored: false, batch_losses: vec![], ..p };
        assert_eq!(client_utility(&fresh, &model()), Err(SelectorError::NoLosses(ClientId(3))));
    }

    #[test]
    fn exploit_counts() {
        for (k, want) in [(10, 9), (20, 18), (200, 180), (1, 1), (3, 3)] {
            assert_eq!(SelectionConfig { k, epsilon: 0.9 }.exploit_count(), want, "k={k}");
        }
        assert_eq!(SelectionConfig { k: 7, epsilon: 1.0 }.exploit_count(), 7);
    }
}
