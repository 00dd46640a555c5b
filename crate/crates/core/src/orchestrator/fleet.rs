//! Synthetic client fleets: memory tiers, compute speed and non-IID shards.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, LogNormal};
use serde::{Deserialize, Serialize};

use super::OrchestratorError;
use crate::selector::ClientId;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TierShare {
    pub gb: u32,
    pub share: f64,
    /// Typical op-time multiplier for phones of this tier; larger is slower.
    pub compute_scale: f64,
}

/// Phone DRAM tiers and their population shares.
pub fn default_tiers() -> Vec<TierShare> {
    vec![
        TierShare { gb: 4, share: 0.15, compute_scale: 1.6 },
        TierShare { gb: 6, share: 0.25, compute_scale: 1.3 },
        TierShare { gb: 8, share: 0.30, compute_scale: 1.0 },
        TierShare { gb: 12, share: 0.25, compute_scale: 0.8 },
        TierShare { gb: 16, share: 0.05, compute_scale: 0.7 },
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShardDescriptor {
    /// Label proportions over the task's classes; sums to 1.
    pub label_proportions: Vec<f64>,
    pub samples: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientSpec {
    pub id: ClientId,
    pub tier_gb: u32,
    pub compute_scale: f64,
    pub shard: ShardDescriptor,
    pub trace_seed: u64,
}

impl ClientSpec {
    pub fn dram_bytes(&self) -> u64 {
        self.tier_gb as u64 * (1 << 30)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FleetSpec {
    pub tiers: Vec<TierShare>,
    pub classes: usize,
    pub clients: Vec<ClientSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FleetParams {
    pub clients: usize,
    pub tiers: Vec<TierShare>,
    pub classes: usize,
    /// Dirichlet concentration of each shard's label mix.
    pub dirichlet_alpha: f64,
    pub min_samples: u32,
    pub max_samples: u32,
    /// Log-space spread of compute speed within a tier.
    pub compute_jitter: f64,
}

impl Default for FleetParams {
    fn default() -> Self {
        Self {
            clients: 100,
            tiers: default_tiers(),
            classes: 10,
            dirichlet_alpha: 0.1,
            min_samples: 200,
            max_samples: 1000,
            compute_jitter: 0.1,
        }
    }
}

pub fn validate_tiers(tiers: &[TierShare]) -> Result<(), OrchestratorError> {
    if tiers.is_empty() {
        return Err(OrchestratorError::Config("fleet needs at least one memory tier".into()));
    }
    if tiers.iter().any(|t| !(t.share >= 0.0) || !(t.compute_scale > 0.0) || t.gb == 0) {
        return Err(OrchestratorError::Config("tier shares must be non-negative, sizes and compute scales positive".into()));
    }
    let total: f64 = tiers.iter().map(|t| t.share).sum();
    if (total - 1.0).abs() > 1e-6 {
        return Err(OrchestratorError::Config(format!("tier shares sum to {total}, not 1")));
    }
    Ok(())
}

impl FleetParams {
    pub fn validate(&self) -> Result<(), OrchestratorError> {
        validate_tiers(&self.tiers)?;
        if self.clients == 0 || self.classes == 0 {
            return Err(OrchestratorError::Config("fleet needs clients and classes".into()));
        }
        if !(self.dirichlet_alpha > 0.0) || self.min_samples == 0 || self.min_samples > self.max_samples {
            return Err(OrchestratorError::Config("invalid shard parameters".into()));
        }
        if !(self.compute_jitter >= 0.0) {
            return Err(OrchestratorError::Config("compute jitter must be non-negative".into()));
        }
        Ok(())
    }
}

/// Tier counts by largest remainder, so counts match the shares as closely
/// as whole clients allow.
pub fn tier_counts(tiers: &[TierShare], n: usize) -> Vec<usize> {
    let exact: Vec<f64> = tiers.iter().map(|t| t.share * n as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
    let mut order: Vec<usize> = (0..tiers.len()).collect();
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
    let short = n - counts.iter().sum::<usize>();
    for &i in order.iter().cycle().take(short) {
        counts[i] += 1;
    }
    counts
}

/// Label mix drawn from a symmetric Dirichlet via normalized gammas. Tiny
/// concentrations can underflow every gamma draw; the mix then falls back to
/// a single class chosen uniformly.
fn dirichlet(rng: &mut ChaCha8Rng, classes: usize, alpha: f64) -> Vec<f64> {
    let gamma = Gamma::new(alpha, 1.0).expect("positive concentration");
    let draws: Vec<f64> = (0..classes).map(|_| gamma.sample(rng)).collect();
    let total: f64 = draws.iter().sum();
    if total > 0.0 && total.is_finite() {
        draws.iter().map(|d| d / total).collect()
    } else {
        let mut mix = vec![0.0; classes];
        mix[rng.random_range(0..classes)] = 1.0;
        mix
    }
}

pub fn generate_fleet(params: &FleetParams, seed: u64) -> Result<FleetSpec, OrchestratorError> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tiers: Vec<usize> = tier_counts(&params.tiers, params.clients)
        .into_iter()
        .enumerate()
        .flat_map(|(i, c)| std::iter::repeat_n(i, c))
        .collect();
    tiers.shuffle(&mut rng);
    let jitter = LogNormal::new(0.0, params.compute_jitter.max(1e-12)).expect("valid spread");
    let clients = tiers
        .into_iter()
        .enumerate()
        .map(|(i, t)| {
            let tier = params.tiers[t];
            ClientSpec {
                id: ClientId(i as u32),
                tier_gb: tier.gb,
                compute_scale: tier.compute_scale * jitter.sample(&mut rng),
                shard: ShardDescriptor {
                    label_proportions: dirichlet(&mut rng, params.classes, params.dirichlet_alpha),
                    samples: rng.random_range(params.min_samples..=params.max_samples),
                },
                trace_seed: rng.random(),
            }
        })
        .collect();
    Ok(FleetSpec { tiers: params.tiers.clone(), classes: params.classes, clients })
}

impl FleetSpec {
    pub fn validate(&self) -> Result<(), OrchestratorError> {
        validate_tiers(&self.tiers)?;
        for c in &self.clients {
            if !(c.compute_scale > 0.0) || !c.compute_scale.is_finite() {
                return Err(OrchestratorError::Config(format!("{} has a non-positive compute scale", c.id)));
            }
            let total: f64 = c.shard.label_proportions.iter().sum();
            if c.shard.label_proportions.len() != self.classes || (total - 1.0).abs() > 1e-6 || c.shard.samples == 0 {
                return Err(OrchestratorError::Config(format!("{} has an invalid data shard", c.id)));
            }
        }
        let mut ids: Vec<ClientId> = self.clients.iter().map(|c| c.id).collect();
        ids.sort();
        ids.dedup();
        if ids.len() != self.clients.len() {
            return Err(OrchestratorError::Config("client ids must be unique".into()));
        }
        Ok(())
    }
}
