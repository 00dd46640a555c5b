//! Normal/salient channel split by the 3σ outlier rule.

use serde::{Deserialize, Serialize};

use super::ActivationTensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ChannelClass {
    Normal,
    /// Contains at least one element more than 3σ from the tensor mean.
    Salient,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelClassification {
    pub classes: Vec<ChannelClass>,
    pub mean: f64,
    pub std: f64,
}

impl ChannelClassification {
    /// Whether `x` lies outside the 3σ band. Never true when σ = 0.
    pub fn is_outlier(&self, x: f32) -> bool {
        self.std > 0.0 && (x as f64 - self.mean).abs() > 3.0 * self.std
    }

    pub fn salient_count(&self) -> usize {
        self.classes.iter().filter(|c| **c == ChannelClass::Salient).count()
    }
}

/// Mean and population standard deviation over the whole tensor.
pub fn classify_channels(tensor: &ActivationTensor) -> ChannelClassification {
    let n = tensor.data.len().max(1) as f64;
    let mean = tensor.data.iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = tensor.data.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
    let mut out = ChannelClassification { classes: Vec::with_capacity(tensor.channels), mean, std: var.sqrt() };
    out.classes = (0..tensor.channels)
        .map(|c| {
            if tensor.channel(c).iter().any(|&x| out.is_outlier(x)) {
                ChannelClass::Salient
            } else {
                ChannelClass::Normal
            }
        })
        .collect();
    out
}
