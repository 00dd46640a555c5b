//! Compression ratio and error measurements over the synthetic corpus.

use serde::{Deserialize, Serialize};

use super::synth::corpus;
use super::{compress_tensor, decompress_tensor, verify, CodecConfig, CodecError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub original_bytes: usize,
    pub compressed_bytes: usize,
    pub ratio: f64,
    pub max_abs_error: f64,
    pub exact_values: usize,
    pub violations: usize,
}

/// Compresses, restores and verifies every corpus tensor.
pub fn bench_corpus(config: &CodecConfig, seed: u64) -> Result<Vec<BenchRow>, CodecError> {
    corpus(seed)
        .iter()
        .map(|t| {
            let c = compress_tensor(t, config)?;
            let restored = decompress_tensor(&c)?;
            let report = verify(t, &c, &restored);
            Ok(BenchRow {
                channels: t.channels,
                height: t.height,
                width: t.width,
                original_bytes: report.original_bytes,
                compressed_bytes: report.compressed_bytes,
                ratio: report.ratio(),
                max_abs_error: report.max_abs_error,
                exact_values: report.exact_values,
                violations: report.violations,
            })
        })
        .collect()
}

/// Arithmetic mean of the per-tensor ratios.
pub fn mean_ratio(rows: &[BenchRow]) -> f64 {
    rows.iter().map(|r| r.ratio).sum::<f64>() / rows.len().max(1) as f64
}
