//! Size and time estimates for compressing a tensor without running the codec.

use std::collections::BTreeMap;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::synth::{gaussian_with_outliers, relu_activation, SyntheticSpec, CORPUS_SHAPES};
use super::{compress_tensor, ActivationTensor, CodecConfig};
use crate::device::{nanos, DeviceProfile};
use crate::graph::OpKind;

/// Reference-device throughputs, bytes per microsecond.
pub const COMPRESS_BYTES_PER_US: f64 = 1_000.0;
pub const DECOMPRESS_BYTES_PER_US: f64 = 2_000.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CodecCalibration {
    /// Original bytes over compressed bytes.
    pub ratio: f64,
    pub compress_bytes_per_us: f64,
    pub decompress_bytes_per_us: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodecModel {
    pub table: BTreeMap<OpKind, CodecCalibration>,
}

/// Ratios measured by [`CodecModel::calibrate`] with the default config and
/// seed 0, pinned so planning does not depend on running the codec.
const SPARSE_RATIO: f64 = 3.512;
const DENSE_RATIO: f64 = 3.660;

/// Kinds whose outputs are ReLU-like, about half exact zeros.
fn is_sparse_kind(kind: OpKind) -> bool {
    matches!(kind, OpKind::ReLU | OpKind::Pool)
}

impl Default for CodecModel {
    fn default() -> Self {
        Self::from_ratios(SPARSE_RATIO, DENSE_RATIO)
    }
}

impl CodecModel {
    pub fn from_ratios(sparse: f64, dense: f64) -> Self {
        let table = OpKind::ALL
            .iter()
            .map(|&k| {
                let ratio = if is_sparse_kind(k) { sparse } else { dense };
                (
                    k,
                    CodecCalibration {
                        ratio,
                        compress_bytes_per_us: COMPRESS_BYTES_PER_US,
                        decompress_bytes_per_us: DECOMPRESS_BYTES_PER_US,
                    },
                )
            })
            .collect();
        Self { table }
    }

    /// Measures compression ratios on the synthetic corpus: post-ReLU tensors
    /// for ReLU/Pool outputs, dense Gaussian tensors for everything else.
    pub fn calibrate(config: &CodecConfig, seed: u64) -> Self {
        let measure = |make: &dyn Fn(&SyntheticSpec, u64) -> ActivationTensor| {
            let (mut orig, mut comp) = (0usize, 0usize);
            for (i, &(c, h, w)) in CORPUS_SHAPES.iter().enumerate() {
                let spec = SyntheticSpec { outlier_channels: c / 16, ..SyntheticSpec::with_shape(c, h, w) };
                let t = make(&spec, seed.wrapping_add(i as u64));
                let bytes = compress_tensor(&t, config).expect("valid config").to_bytes();
                orig += t.byte_size();
                comp += bytes.len();
            }
            orig as f64 / comp as f64
        };
        let sparse = measure(&|s, seed| relu_activation(s, seed));
        let dense = measure(&|s, seed| gaussian_with_outliers(s, 0.0, seed));
        Self::from_ratios(sparse, dense)
    }

    fn entry(&self, kind: OpKind) -> CodecCalibration {
        self.table.get(&kind).copied().unwrap_or(CodecCalibration {
            ratio: 1.0,
            compress_bytes_per_us: COMPRESS_BYTES_PER_US,
            decompress_bytes_per_us: DECOMPRESS_BYTES_PER_US,
        })
    }

    pub fn compressed_bytes(&self, kind: OpKind, bytes: u64) -> u64 {
        let ratio = self.entry(kind).ratio.max(1.0);
        ((bytes as f64 / ratio).ceil() as u64).min(bytes)
    }

    pub fn compress_time(&self, kind: OpKind, bytes: u64, device: &DeviceProfile) -> Duration {
        let us = bytes as f64 / self.entry(kind).compress_bytes_per_us;
        device.codec_time(nanos(us * 1_000.0))
    }

    pub fn decompress_time(&self, kind: OpKind, bytes: u64, device: &DeviceProfile) -> Duration {
        let us = bytes as f64 / self.entry(kind).decompress_bytes_per_us;
        device.codec_time(nanos(us * 1_000.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pinned_ratios_match_calibration() {
        let measured = CodecModel::calibrate(&CodecConfig::default(), 0);
        let pinned = CodecModel::default();
        for kind in [OpKind::ReLU, OpKind::Conv] {
            let (m, p) = (measured.table[&kind].ratio, pinned.table[&kind].ratio);
            assert!((m - p).abs() / p < 0.10, "{kind:?}: measured {m:.3}, pinned {p:.3}");
        }
    }

    #[test]
    fn estimates_scale_with_size_and_device() {
        let model = CodecModel::default();
        let slow = DeviceProfile::reference().scaled("slow", 2.0);
        let fast = DeviceProfile::reference();
        assert_eq!(model.compress_time(OpKind::Conv, 1_000_000, &fast), Duration::from_micros(1_000));
        assert_eq!(model.compress_time(OpKind::Conv, 1_000_000, &slow), Duration::from_micros(2_000));
        assert_eq!(model.decompress_time(OpKind::Conv, 1_000_000, &fast), Duration::from_micros(500));
        assert_eq!(model.compressed_bytes(OpKind::Conv, 3_660), 1_000);
        assert_eq!(model.compressed_bytes(OpKind::Conv, 0), 0);
    }

    #[test]
    fn ratio_below_one_saves_nothing() {
        let model = CodecModel::from_ratios(0.5, 0.5);
        assert_eq!(model.compressed_bytes(OpKind::Conv, 100), 100);
    }
}
