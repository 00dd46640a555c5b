//! Synthetic learning model: per-class knowledge that grows with the data
//! each round aggregates, and per-sample losses drawn from what is still
//! unlearned.

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, weighted::WeightedIndex};
use serde::{Deserialize, Serialize};

use super::fleet::ShardDescriptor;
use super::OrchestratorError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelUpdate {
    pub delta: Vec<f64>,
    pub samples: u64,
}

/// Sample-weighted mean of the update vectors.
pub fn aggregate(updates: &[ModelUpdate]) -> Result<Vec<f64>, OrchestratorError> {
    let first = updates.first().ok_or(OrchestratorError::EmptyAggregation)?;
    let len = first.delta.len();
    if let Some(bad) = updates.iter().find(|u| u.delta.len() != len) {
        return Err(OrchestratorError::LengthMismatch { expected: len, found: bad.delta.len() });
    }
    let total: u64 = updates.iter().map(|u| u.samples).sum();
    if total == 0 {
        return Err(OrchestratorError::EmptyAggregation);
    }
    let mut out = vec![0.0; len];
    for u in updates {
        let w = u.samples as f64 / total as f64;
        for (o, d) in out.iter_mut().zip(&u.delta) {
            *o += w * d;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LearningParams {
    /// Loss of an untrained model, the log of the class count by default.
    pub initial_loss: Option<f64>,
    /// Fraction of the remaining gap a fully covered class closes per round.
    pub learning_rate: f64,
    /// Samples of one class that count as full coverage in a round.
    pub samples_per_class: f64,
    /// Per-sample losses reported by a client after local training.
    pub reported_losses: usize,
    /// Log-space spread of per-sample losses.
    pub loss_noise: f64,
}

impl Default for LearningParams {
    fn default() -> Self {
        Self { initial_loss: None, learning_rate: 0.15, samples_per_class: 1500.0, reported_losses: 16, loss_noise: 0.25 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossProxy {
    params: LearningParams,
    initial: f64,
    /// Learned fraction of each class, in [0, 1).
    knowledge: Vec<f64>,
}

impl LossProxy {
    pub fn new(classes: usize, params: LearningParams) -> Self {
        Self { params, initial: params.initial_loss.unwrap_or((classes as f64).ln()), knowledge: vec![0.0; classes] }
    }

    pub fn knowledge(&self) -> &[f64] {
        &self.knowledge
    }

    pub fn initial_loss(&self) -> f64 {
        self.initial
    }

    fn class_loss(&self, c: usize) -> f64 {
        self.initial * (1.0 - self.knowledge[c])
    }

    /// Mean loss over a uniform class mix.
    pub fn global_loss(&self) -> f64 {
        (0..self.knowledge.len()).map(|c| self.class_loss(c)).sum::<f64>() / self.knowledge.len() as f64
    }

    /// Per-sample losses a client holding `shard` would report now.
    pub fn sample_losses(&self, shard: &ShardDescriptor, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let classes = WeightedIndex::new(&shard.label_proportions).expect("shard mix has positive mass");
        let noise = LogNormal::new(0.0, self.params.loss_noise.max(1e-12)).expect("valid spread");
        (0..self.params.reported_losses).map(|_| self.class_loss(classes.sample(rng)) * noise.sample(rng)).collect()
    }

    /// Folds one round of updates into the model. Each update carries its
    /// shard's label mix; the aggregated mix times the round's sample total
    /// gives per-class coverage.
    pub fn apply(&mut self, updates: &[ModelUpdate]) -> Result<(), OrchestratorError> {
        if updates.is_empty() {
            return Ok(());
        }
        let mix = aggregate(updates)?;
        if mix.len() != self.knowledge.len() {
            return Err(OrchestratorError::LengthMismatch { expected: self.knowledge.len(), found: mix.len() });
        }
        let total: u64 = updates.iter().map(|u| u.samples).sum();
        for (k, share) in self.knowledge.iter_mut().zip(mix) {
            let coverage = (share * total as f64 / self.params.samples_per_class).min(1.0);
            *k += self.params.learning_rate * coverage * (1.0 - *k);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn update(delta: &[f64], samples: u64) -> ModelUpdate {
        ModelUpdate { delta: delta.to_vec(), samples }
    }

    #[test]
    fn aggregation_examples() {
        assert_eq!(aggregate(&[update(&[1.0, 1.0], 5), update(&[3.0, 3.0], 5)]).unwrap(), vec![2.0, 2.0]);
        assert_eq!(aggregate(&[update(&[0.5, -2.0], 7)]).unwrap(), vec![0.5, -2.0]);
        assert_eq!(aggregate(&[update(&[0.0], 1), update(&[4.0], 3)]).unwrap(), vec![3.0]);
        assert!(matches!(aggregate(&[update(&[0.0], 1), update(&[4.0, 1.0], 3)]), Err(OrchestratorError::LengthMismatch { expected: 1, found: 2 })));
        assert!(matches!(aggregate(&[]), Err(OrchestratorError::EmptyAggregation)));
    }

    #[test]
    fn loss_falls_with_coverage() {
        let mut proxy = LossProxy::new(4, LearningParams::default());
        let start = proxy.global_loss();
        assert!((start - 4f64.ln()).abs() < 1e-12);
        proxy.apply(&[update(&[1.0, 0.0, 0.0, 0.0], 3000)]).unwrap();
        let one_class = proxy.global_loss();
        assert!(one_class < start);
        let mut wider = LossProxy::new(4, LearningParams::default());
        wider.apply(&[update(&[1.0, 0.0, 0.0, 0.0], 3000), update(&[0.0, 1.0, 0.0, 0.0], 3000)]).unwrap();
        assert!(wider.global_loss() < one_class);
    }

    #[test]
    fn reported_losses_track_unlearned_classes() {
        let mut proxy = LossProxy::new(2, LearningParams::default());
        for _ in 0..10 {
            proxy.apply(&[update(&[1.0, 0.0], 10_000)]).unwrap();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let learned = ShardDescriptor { label_proportions: vec![1.0, 0.0], samples: 100 };
        let fresh = ShardDescriptor { label_proportions: vec![0.0, 1.0], samples: 100 };
        let mean = |v: Vec<f64>| v.iter().sum::<f64>() / v.len() as f64;
        assert!(mean(proxy.sample_losses(&learned, &mut rng)) < mean(proxy.sample_losses(&fresh, &mut rng)));
    }
}
