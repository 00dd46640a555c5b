//! Synthetic activation tensors for tests, calibration and benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::ActivationTensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    /// Number of channels receiving injected outliers, spread evenly.
    pub outlier_channels: usize,
    /// Fraction of an outlier channel's elements that are outliers.
    pub outlier_density: f64,
    /// Outlier magnitude in units of the base distribution's deviation.
    pub outlier_magnitude: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            channels: 64,
            height: 16,
            width: 16,
            outlier_channels: 0,
            outlier_density: 0.02,
            outlier_magnitude: 81.0,
        }
    }
}

impl SyntheticSpec {
    pub fn with_shape(channels: usize, height: usize, width: usize) -> Self {
        Self { channels, height, width, ..Self::default() }
    }

    /// Channel indices that receive outliers.
    pub fn injected_channels(&self) -> Vec<usize> {
        (0..self.outlier_channels.min(self.channels))
            .map(|i| i * self.channels / self.outlier_channels.max(1))
            .collect()
    }
}

/// Standard-normal activations with a fraction `zero_fraction` of exact
/// zeros (ReLU-like sparsity) and outliers injected into selected channels.
pub fn gaussian_with_outliers(spec: &SyntheticSpec, zero_fraction: f64, seed: u64) -> ActivationTensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let plane = spec.height * spec.width;
    let mut data: Vec<f32> = (0..spec.channels * plane)
        .map(|_| {
            let v: f32 = rng.sample(StandardNormal);
            if rng.random::<f64>() < zero_fraction {
                0.0
            } else {
                v
            }
        })
        .collect();
    let per_channel = ((plane as f64 * spec.outlier_density).round() as usize).clamp(1, plane);
    for ch in spec.injected_channels() {
        for _ in 0..per_channel {
            let pos = rng.random_range(0..plane);
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            let jitter = 1.0 + 0.1 * rng.random::<f64>();
            data[ch * plane + pos] = (sign * spec.outlier_magnitude * jitter) as f32;
        }
    }
    ActivationTensor::new(spec.channels, spec.height, spec.width, data).expect("finite synthetic data")
}

/// Post-ReLU activations: half the elements are zero, the rest positive.
pub fn relu_activation(spec: &SyntheticSpec, seed: u64) -> ActivationTensor {
    let mut t = gaussian_with_outliers(spec, 0.0, seed);
    let injected = spec.injected_channels();
    let plane = spec.height * spec.width;
    for (i, v) in t.data.iter_mut().enumerate() {
        let outlier_channel = injected.contains(&(i / plane));
        if *v < 0.0 && !(outlier_channel && v.abs() as f64 > spec.outlier_magnitude / 2.0) {
            *v = 0.0;
        } else {
            *v = v.abs();
        }
    }
    t
}

/// Calibration corpus shapes, from early high-resolution feature maps down
/// to late low-resolution ones.
pub const CORPUS_SHAPES: [(usize, usize, usize); 5] =
    [(64, 112, 112), (64, 56, 56), (128, 28, 28), (256, 14, 14), (512, 7, 7)];

/// One ReLU-style tensor per corpus shape with outliers in 1/16 of channels.
pub fn corpus(seed: u64) -> Vec<ActivationTensor> {
    CORPUS_SHAPES
        .iter()
        .enumerate()
        .map(|(i, &(c, h, w))| {
            let spec = SyntheticSpec { outlier_channels: c / 16, ..SyntheticSpec::with_shape(c, h, w) };
            relu_activation(&spec, seed.wrapping_add(i as u64))
        })
        .collect()
}
