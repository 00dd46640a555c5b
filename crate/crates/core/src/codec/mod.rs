//! Channel-wise mixed activation compression.
//!
//! Channels whose values stay inside the tensor's 3σ band are quantized with
//! a per-channel affine grid. Outlier-rich (salient) channels keep a lossless
//! nonzero mask and are cut into `n × n` blocks: sparse blocks go through
//! CSR, dense blocks through Lorenzo prediction with an error-bounded
//! residual quantizer whose codes are Huffman coded.
//!
//! Bitstream (little-endian):
//!
//! ```text
//! magic "MWAC" | version u8 | C u32 | H u32 | W u32 | n u32 | tau f32 | eps f64
//! | bits u8 | radius u16 | class per channel u8 (0 normal, 1 salient)
//! | per channel, ascending index:
//!     normal:  min f32 | max f32 | packed codes
//!     salient: mask runs (count u32, lengths u32, first run is zeros)
//!              | dense-block bitmap | stencil coefficients 3 × i8
//!              | per block in raster order:
//!                  sparse: row_ptr u16 × (rows+1) | col_idx u16 × nnz | values f32 × nnz
//!                  dense:  outlier count u16 | (offset u16, value f32) × count
//!              | Huffman stream of all dense-block codes
//! ```

mod bytes;
pub mod bench;
pub mod blocks;
pub mod channels;
pub mod csr;
pub mod huffman;
pub mod lorenzo;
pub mod model;
pub mod quant;
pub mod synth;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use self::blocks::{partition_blocks, BlockClass, BlockPartition};
use self::bytes::{ByteReader, ByteWriter};
use self::channels::{classify_channels, ChannelClass};
use self::csr::{csr_decode, csr_encode, csr_is_well_formed, CsrBlock};
use self::lorenzo::{code_count, decode_with, lorenzo_compress_block, LorenzoBlock, LorenzoParams, STENCIL};
use self::quant::{check_bits, dequantize_channel, pack_codes, packed_len, quantize_channel, unpack_codes, QuantizedChannel};

pub use self::blocks::BlockBounds;
pub use self::channels::ChannelClassification;
pub use self::model::{CodecCalibration, CodecModel};

pub const MAGIC: [u8; 4] = *b"MWAC";
pub const VERSION: u8 = 1;

#[derive(Debug, Error, PartialEq)]
pub enum CodecError {
    #[error("invalid codec config: {0}")]
    InvalidConfig(String),
    #[error("tensor contains non-finite values")]
    NonFinite,
    #[error("tensor shape {channels}x{height}x{width} does not match {len} values")]
    ShapeMismatch { channels: usize, height: usize, width: usize, len: usize },
    #[error("bitstream truncated at byte {offset} (needed {needed} more)")]
    Truncated { offset: usize, needed: usize },
    #[error("corrupt bitstream at byte {offset}: {what}")]
    Corrupt { offset: usize, what: String },
}

impl CodecError {
    /// Byte offset of a decode failure, when known.
    pub fn offset(&self) -> Option<usize> {
        match self {
            CodecError::Truncated { offset, .. } | CodecError::Corrupt { offset, .. } => Some(*offset),
            _ => None,
        }
    }
}

/// C × H × W activation map, row-major per channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivationTensor {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl ActivationTensor {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self, CodecError> {
        if channels == 0 || height == 0 || width == 0 || data.len() != channels * height * width {
            return Err(CodecError::ShapeMismatch { channels, height, width, len: data.len() });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(CodecError::NonFinite);
        }
        Ok(Self { channels, height, width, data })
    }

    pub fn plane(&self) -> usize {
        self.height * self.width
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        &self.data[c * self.plane()..(c + 1) * self.plane()]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f32] {
        let p = self.plane();
        &mut self.data[c * p..(c + 1) * p]
    }

    pub fn byte_size(&self) -> usize {
        self.data.len() * 4
    }

    /// Raw tensor file: magic "MWAT", C/H/W as u32, then f32 values, all little-endian.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::new();
        w.bytes(b"MWAT");
        for d in [self.channels, self.height, self.width] {
            w.u32(d as u32);
        }
        for &v in &self.data {
            w.f32(v);
        }
        w.into_inner()
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self, CodecError> {
        let mut r = ByteReader::new(buf);
        if r.take(4)? != b"MWAT" {
            return Err(CodecError::Corrupt { offset: 0, what: "not a raw tensor file".into() });
        }
        let (c, h, w) = (r.u32()? as usize, r.u32()? as usize, r.u32()? as usize);
        let n = c.checked_mul(h).and_then(|x| x.checked_mul(w)).ok_or_else(|| r.corrupt("shape overflow"))?;
        if r.remaining() != n * 4 {
            return Err(r.corrupt(format!("expected {} data bytes, found {}", n * 4, r.remaining())));
        }
        let data = (0..n).map(|_| r.f32()).collect::<Result<Vec<_>, _>>()?;
        Self::new(c, h, w, data)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CodecConfig {
    /// Normal-channel bit width, 4 or 8.
    pub bits: u8,
    /// Block edge length for salient channels.
    pub block: usize,
    /// Sparsity threshold on the pooled nonzero mask.
    pub tau: f32,
    /// Error bound for dense-block elements.
    pub eps: f64,
    /// Largest residual code magnitude before an element is kept verbatim.
    pub radius: u16,
}

impl Default for CodecConfig {
    fn default() -> Self {
        Self { bits: 8, block: 4, tau: 0.25, eps: 1e-2, radius: 127 }
    }
}

impl CodecConfig {
    pub fn validate(&self) -> Result<(), CodecError> {
        check_bits(self.bits)?;
        if self.block == 0 || self.block > 255 {
            return Err(CodecError::InvalidConfig(format!("block size must be in 1..=255, got {}", self.block)));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(CodecError::InvalidConfig(format!("tau must be in (0, 1], got {}", self.tau)));
        }
        if !(self.eps > 0.0) || !self.eps.is_finite() {
            return Err(CodecError::InvalidConfig(format!("eps must be positive, got {}", self.eps)));
        }
        if self.radius > i16::MAX as u16 {
            return Err(CodecError::InvalidConfig(format!("radius must be at most {}", i16::MAX)));
        }
        Ok(())
    }

    fn lorenzo(&self) -> LorenzoParams {
        LorenzoParams { eps: self.eps, radius: self.radius }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SalientChannel {
    pub partition: BlockPartition,
    /// One entry per sparse block, raster order.
    pub sparse: Vec<CsrBlock>,
    /// One entry per dense block, raster order.
    pub dense: Vec<LorenzoBlock>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ChannelPayload {
    Normal(QuantizedChannel),
    Salient(SalientChannel),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompressedTensor {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub config: CodecConfig,
    pub payloads: Vec<ChannelPayload>,
}

impl CompressedTensor {
    pub fn classes(&self) -> Vec<ChannelClass> {
        self.payloads
            .iter()
            .map(|p| match p {
                ChannelPayload::Normal(_) => ChannelClass::Normal,
                ChannelPayload::Salient(_) => ChannelClass::Salient,
            })
            .collect()
    }

    /// Values stored verbatim in dense blocks and CSR blocks.
    pub fn exact_value_count(&self) -> usize {
        self.payloads
            .iter()
            .map(|p| match p {
                ChannelPayload::Normal(_) => 0,
                ChannelPayload::Salient(s) => {
                    s.dense.iter().map(|d| d.outliers.len()).sum::<usize>()
                        + s.sparse.iter().map(|c| c.values.len()).sum::<usize>()
                }
            })
            .sum()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::new();
        w.bytes(&MAGIC);
        w.u8(VERSION);
        w.u32(self.channels as u32);
        w.u32(self.height as u32);
        w.u32(self.width as u32);
        w.u32(self.config.block as u32);
        w.f32(self.config.tau);
        w.f64(self.config.eps);
        w.u8(self.config.bits);
        w.u16(self.config.radius);
        for class in self.classes() {
            w.u8(matches!(class, ChannelClass::Salient) as u8);
        }
        for payload in &self.payloads {
            match payload {
                ChannelPayload::Normal(q) => {
                    w.f32(q.min);
                    w.f32(q.max);
                    w.bytes(&pack_codes(&q.codes, q.bits));
                }
                ChannelPayload::Salient(s) => write_salient(&mut w, s),
            }
        }
        w.into_inner()
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self, CodecError> {
        let mut r = ByteReader::new(buf);
        if r.take(4)? != MAGIC {
            return Err(CodecError::Corrupt { offset: 0, what: "bad magic".into() });
        }
        let version = r.u8()?;
        if version != VERSION {
            return Err(CodecError::Corrupt { offset: 4, what: format!("unsupported version {version}") });
        }
        let channels = r.u32()? as usize;
        let height = r.u32()? as usize;
        let width = r.u32()? as usize;
        let config = CodecConfig { block: r.u32()? as usize, tau: r.f32()?, eps: r.f64()?, bits: r.u8()?, radius: r.u16()? };
        config.validate().map_err(|e| CodecError::Corrupt { offset: 5, what: e.to_string() })?;
        if channels == 0 || height == 0 || width == 0 || config.block > height.min(width) {
            return Err(CodecError::Corrupt { offset: 5, what: "invalid tensor dimensions".into() });
        }
        let plane = height.checked_mul(width).ok_or_else(|| r.corrupt("shape overflow"))?;
        let mut classes = Vec::with_capacity(channels.min(buf.len()));
        for _ in 0..channels {
            let at = r.offset();
            classes.push(match r.u8()? {
                0 => ChannelClass::Normal,
                1 => ChannelClass::Salient,
                other => return Err(CodecError::Corrupt { offset: at, what: format!("invalid channel class {other}") }),
            });
        }
        let mut payloads = Vec::with_capacity(channels);
        for class in classes {
            payloads.push(match class {
                ChannelClass::Normal => {
                    let min = r.f32()?;
                    let max = r.f32()?;
                    if !(min.is_finite() && max.is_finite() && min <= max) {
                        return Err(r.corrupt("invalid quantization range"));
                    }
                    let packed = r.take(packed_len(plane, config.bits))?;
                    let codes = unpack_codes(packed, config.bits, plane);
                    ChannelPayload::Normal(QuantizedChannel { bits: config.bits, min, max, codes })
                }
                ChannelClass::Salient => ChannelPayload::Salient(read_salient(&mut r, height, width, &config)?),
            });
        }
        if r.remaining() != 0 {
            return Err(r.corrupt("trailing bytes after last channel"));
        }
        Ok(Self { channels, height, width, config, payloads })
    }
}

fn write_salient(w: &mut ByteWriter, s: &SalientChannel) {
    let p = &s.partition;
    let runs = mask_runs(&p.mask);
    w.u32(runs.len() as u32);
    for r in runs {
        w.u32(r);
    }
    let mut bitmap = vec![0u8; p.classes.len().div_ceil(8)];
    for (i, c) in p.classes.iter().enumerate() {
        if *c == BlockClass::Dense {
            bitmap[i / 8] |= 1 << (i % 8);
        }
    }
    w.bytes(&bitmap);
    for &(_, _, coeff) in &STENCIL {
        w.i8(coeff);
    }
    let (mut sparse, mut dense) = (s.sparse.iter(), s.dense.iter());
    let mut all_codes = Vec::new();
    for class in &p.classes {
        match class {
            BlockClass::Sparse => {
                let csr = sparse.next().expect("one CSR block per sparse block");
                csr.row_ptr.iter().for_each(|&v| w.u16(v));
                csr.col_idx.iter().for_each(|&v| w.u16(v));
                csr.values.iter().for_each(|&v| w.f32(v));
            }
            BlockClass::Dense => {
                let block = dense.next().expect("one Lorenzo block per dense block");
                w.u16(block.outliers.len() as u16);
                for &(off, v) in &block.outliers {
                    w.u16(off);
                    w.f32(v);
                }
                all_codes.extend_from_slice(&block.codes);
            }
        }
    }
    if !s.dense.is_empty() {
        huffman::encode_into(w, &all_codes);
    }
}

fn read_salient(r: &mut ByteReader<'_>, height: usize, width: usize, config: &CodecConfig) -> Result<SalientChannel, CodecError> {
    let plane = height * width;
    let run_count = r.u32()? as usize;
    if run_count > plane + 1 {
        return Err(r.corrupt("too many mask runs"));
    }
    let mut runs = Vec::with_capacity(run_count);
    for _ in 0..run_count {
        runs.push(r.u32()?);
    }
    let mask = mask_from_runs(&runs, plane).ok_or_else(|| r.corrupt("mask runs do not cover the feature map"))?;
    let n = config.block;
    let total = height.div_ceil(n) * width.div_ceil(n);
    let bitmap = r.take(total.div_ceil(8))?;
    let classes: Vec<BlockClass> = (0..total)
        .map(|i| if bitmap[i / 8] >> (i % 8) & 1 == 1 { BlockClass::Dense } else { BlockClass::Sparse })
        .collect();
    for &(_, _, coeff) in &STENCIL {
        let got = r.i8()?;
        if got != coeff {
            return Err(r.corrupt(format!("unsupported predictor coefficient {got}")));
        }
    }
    let partition = BlockPartition { block: n, tau: config.tau, height, width, classes, mask };
    let mut sparse = Vec::new();
    let mut dense = Vec::new();
    for (i, class) in partition.classes.iter().enumerate() {
        let b = partition.bounds(i);
        match class {
            BlockClass::Sparse => {
                let start = r.offset();
                let row_ptr = (0..=b.rows).map(|_| r.u16()).collect::<Result<Vec<_>, _>>()?;
                let nnz = *row_ptr.last().unwrap() as usize;
                if nnz > b.rows * b.cols {
                    return Err(CodecError::Corrupt { offset: start, what: "CSR row pointer out of range".into() });
                }
                let col_idx = (0..nnz).map(|_| r.u16()).collect::<Result<Vec<_>, _>>()?;
                let values = (0..nnz).map(|_| r.f32()).collect::<Result<Vec<_>, _>>()?;
                let csr = CsrBlock { values, col_idx, row_ptr };
                if !csr_is_well_formed(&csr, b.rows, b.cols) {
                    return Err(CodecError::Corrupt { offset: start, what: "malformed CSR block".into() });
                }
                sparse.push(csr);
            }
            BlockClass::Dense => {
                let count = r.u16()? as usize;
                let start = r.offset();
                let mut outliers = Vec::with_capacity(count);
                for _ in 0..count {
                    outliers.push((r.u16()?, r.f32()?));
                }
                let in_block = b.rows * b.cols;
                if outliers.windows(2).any(|w| w[0].0 >= w[1].0) || outliers.iter().any(|o| o.0 as usize >= in_block) {
                    return Err(CodecError::Corrupt { offset: start, what: "outlier offsets out of order".into() });
                }
                dense.push(LorenzoBlock { codes: Vec::new(), outliers });
            }
        }
    }
    if !dense.is_empty() {
        let start = r.offset();
        let codes = huffman::decode_from(r)?;
        let mut codes = codes.into_iter();
        let mut dense_iter = dense.iter_mut();
        for (i, class) in partition.classes.iter().enumerate() {
            if *class != BlockClass::Dense {
                continue;
            }
            let block = dense_iter.next().unwrap();
            let b = partition.bounds(i);
            let block_mask = b.gather(&partition.mask, width);
            let nonzero = block_mask.iter().filter(|&&m| m).count();
            if block.outliers.len() > nonzero {
                return Err(CodecError::Corrupt { offset: start, what: "more outliers than nonzeros".into() });
            }
            let take = code_count(&block_mask, block.outliers.len());
            block.codes = codes.by_ref().take(take).collect();
            if block.codes.len() != take {
                return Err(CodecError::Corrupt { offset: start, what: "dense code stream too short".into() });
            }
        }
        if codes.next().is_some() {
            return Err(CodecError::Corrupt { offset: start, what: "dense code stream too long".into() });
        }
    }
    Ok(SalientChannel { partition, sparse, dense })
}

/// Alternating run lengths of the mask, starting with a (possibly empty) zero run.
fn mask_runs(mask: &[bool]) -> Vec<u32> {
    let mut runs = Vec::new();
    let mut current = false;
    let mut len = 0u32;
    for &m in mask {
        if m == current {
            len += 1;
        } else {
            runs.push(len);
            current = m;
            len = 1;
        }
    }
    runs.push(len);
    runs
}

fn mask_from_runs(runs: &[u32], plane: usize) -> Option<Vec<bool>> {
    let mut mask = Vec::with_capacity(plane);
    for (i, &len) in runs.iter().enumerate() {
        if mask.len() + len as usize > plane {
            return None;
        }
        mask.extend(std::iter::repeat_n(i % 2 == 1, len as usize));
    }
    (mask.len() == plane).then_some(mask)
}

pub fn compress_tensor(tensor: &ActivationTensor, config: &CodecConfig) -> Result<CompressedTensor, CodecError> {
    config.validate()?;
    if config.block > tensor.height.min(tensor.width) {
        return Err(CodecError::InvalidConfig(format!(
            "block size {} exceeds feature map {}x{}",
            config.block, tensor.height, tensor.width
        )));
    }
    if tensor.data.iter().any(|v| !v.is_finite()) {
        return Err(CodecError::NonFinite);
    }
    let stats = classify_channels(tensor);
    let payloads = (0..tensor.channels)
        .map(|c| {
            let data = tensor.channel(c);
            Ok(match stats.classes[c] {
                ChannelClass::Normal => ChannelPayload::Normal(quantize_channel(data, config.bits)?),
                ChannelClass::Salient => ChannelPayload::Salient(compress_salient(data, tensor, config, &stats)),
            })
        })
        .collect::<Result<Vec<_>, CodecError>>()?;
    Ok(CompressedTensor { channels: tensor.channels, height: tensor.height, width: tensor.width, config: *config, payloads })
}

fn compress_salient(data: &[f32], tensor: &ActivationTensor, config: &CodecConfig, stats: &ChannelClassification) -> SalientChannel {
    let partition = partition_blocks(data, tensor.height, tensor.width, config.block, config.tau);
    let mut sparse = Vec::new();
    let mut dense = Vec::new();
    for (i, class) in partition.classes.iter().enumerate() {
        let b = partition.bounds(i);
        let block = b.gather(data, tensor.width);
        match class {
            BlockClass::Sparse => sparse.push(csr_encode(&block, b.rows, b.cols)),
            // 3σ outliers are kept verbatim even when the predictor would hit them.
            BlockClass::Dense => {
                dense.push(lorenzo_compress_block(&block, b.rows, b.cols, config.lorenzo(), |x| stats.is_outlier(x)))
            }
        }
    }
    SalientChannel { partition, sparse, dense }
}

pub fn decompress_tensor(compressed: &CompressedTensor) -> Result<ActivationTensor, CodecError> {
    let (h, w) = (compressed.height, compressed.width);
    let mut data = Vec::with_capacity(compressed.channels * h * w);
    for payload in &compressed.payloads {
        match payload {
            ChannelPayload::Normal(q) => data.extend(dequantize_channel(q)),
            ChannelPayload::Salient(s) => data.extend(decompress_salient(s, w, compressed.config.lorenzo())?),
        }
    }
    ActivationTensor::new(compressed.channels, h, w, data)
}

fn decompress_salient(s: &SalientChannel, width: usize, params: LorenzoParams) -> Result<Vec<f32>, CodecError> {
    let p = &s.partition;
    let mut map = vec![0.0f32; p.height * p.width];
    let (mut sparse, mut dense) = (s.sparse.iter(), s.dense.iter());
    for (i, class) in p.classes.iter().enumerate() {
        let b = p.bounds(i);
        let block = match class {
            BlockClass::Sparse => csr_decode(sparse.next().expect("CSR block"), b.rows, b.cols),
            BlockClass::Dense => {
                let d = dense.next().expect("Lorenzo block");
                let mask = b.gather(&p.mask, width);
                decode_with(&mut d.codes.iter().copied(), &d.outliers, b.rows, b.cols, &mask, params)?
            }
        };
        b.scatter(&block, &mut map, width);
    }
    Ok(map)
}

/// Compresses straight to the serialized bitstream.
pub fn encode(tensor: &ActivationTensor, config: &CodecConfig) -> Result<Vec<u8>, CodecError> {
    Ok(compress_tensor(tensor, config)?.to_bytes())
}

pub fn decode(bytes: &[u8]) -> Result<ActivationTensor, CodecError> {
    decompress_tensor(&CompressedTensor::from_bytes(bytes)?)
}

/// Outcome of checking a reconstruction against the codec's error contract.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub original_bytes: usize,
    pub compressed_bytes: usize,
    pub max_abs_error: f64,
    pub exact_values: usize,
    pub violations: usize,
}

impl VerifyReport {
    pub fn ratio(&self) -> f64 {
        self.original_bytes as f64 / self.compressed_bytes as f64
    }
}

/// Checks every element against the bound of the path that encoded it:
/// half a quantization step for normal channels, exact zeros and CSR values,
/// `eps` for quantized dense elements and bit-exact verbatim values.
pub fn verify(original: &ActivationTensor, compressed: &CompressedTensor, restored: &ActivationTensor) -> VerifyReport {
    let w = original.width;
    let mut violations = 0;
    let mut max_err = 0.0f64;
    for (c, payload) in compressed.payloads.iter().enumerate() {
        let (x, xr) = (original.channel(c), restored.channel(c));
        let errs = x.iter().zip(xr).map(|(&a, &b)| ((a as f64) - (b as f64)).abs());
        max_err = errs.clone().fold(max_err, f64::max);
        match payload {
            ChannelPayload::Normal(q) => {
                let half = q.half_step();
                violations += x
                    .iter()
                    .zip(xr)
                    .filter(|(&a, &b)| {
                        let slack = a.abs().max(b.abs()) as f64 * f32::EPSILON as f64;
                        ((a as f64) - (b as f64)).abs() > half + slack
                    })
                    .count();
            }
            ChannelPayload::Salient(s) => {
                let p = &s.partition;
                let mut dense = s.dense.iter();
                for (i, class) in p.classes.iter().enumerate() {
                    let b = p.bounds(i);
                    let (bx, bxr) = (b.gather(x, w), b.gather(xr, w));
                    let exact: Vec<bool> = match class {
                        BlockClass::Sparse => vec![true; bx.len()],
                        BlockClass::Dense => {
                            let d = dense.next().expect("Lorenzo block");
                            let mut e: Vec<bool> = bx.iter().map(|&v| v == 0.0).collect();
                            d.outliers.iter().for_each(|o| e[o.0 as usize] = true);
                            e
                        }
                    };
                    for ((&a, &b), exact) in bx.iter().zip(&bxr).zip(exact) {
                        let ok = if exact {
                            a.to_bits() == b.to_bits() || (a == 0.0 && b == 0.0)
                        } else {
                            ((a as f64) - (b as f64)).abs() <= compressed.config.eps
                        };
                        violations += usize::from(!ok);
                    }
                }
            }
        }
    }
    VerifyReport {
        original_bytes: original.byte_size(),
        compressed_bytes: compressed.to_bytes().len(),
        max_abs_error: max_err,
        exact_values: compressed.exact_value_count(),
        violations,
    }
}

#[cfg(test)]
mod tests {
    use super::synth::{corpus, gaussian_with_outliers, relu_activation, SyntheticSpec};
    use super::*;

    #[test]
    fn constant_tensor_compresses_and_is_exact() {
        let t = ActivationTensor::new(8, 16, 16, vec![0.75; 8 * 256]).unwrap();
        let c = compress_tensor(&t, &CodecConfig::default()).unwrap();
        let bytes = c.to_bytes();
        assert!(bytes.len() * 3 < t.byte_size());
        assert_eq!(decode(&bytes).unwrap(), t);
    }

    #[test]
    fn injected_outliers_bit_exact() {
        let spec = SyntheticSpec { channels: 32, height: 28, width: 28, outlier_channels: 4, ..SyntheticSpec::default() };
        for zero_fraction in [0.0, 0.5, 0.9] {
            let t = gaussian_with_outliers(&spec, zero_fraction, 21);
            let c = compress_tensor(&t, &CodecConfig::default()).unwrap();
            let back = decode(&c.to_bytes()).unwrap();
            // Oracle: locate every injected value independently and compare bits.
            let plane = t.plane();
            let mut located = 0;
            for ch in spec.injected_channels() {
                for i in 0..plane {
                    let v = t.data[ch * plane + i];
                    if (v.abs() as f64) >= spec.outlier_magnitude {
                        located += 1;
                        assert_eq!(back.data[ch * plane + i].to_bits(), v.to_bits());
                    }
                }
            }
            // Positions are drawn with replacement, so a few may coincide.
            assert!(located >= 4 * 12, "{located}");
            assert_eq!(verify(&t, &c, &back).violations, 0);
        }
    }

    #[test]
    fn bitstream_round_trip_is_deterministic() {
        let spec = SyntheticSpec { channels: 16, height: 14, width: 14, outlier_channels: 2, ..SyntheticSpec::default() };
        let t = relu_activation(&spec, 4);
        let c = compress_tensor(&t, &CodecConfig { bits: 4, ..CodecConfig::default() }).unwrap();
        let bytes = c.to_bytes();
        let parsed = CompressedTensor::from_bytes(&bytes).unwrap();
        assert_eq!(parsed, c);
        assert_eq!(parsed.to_bytes(), bytes);
        assert_eq!(decode(&bytes).unwrap(), decode(&bytes).unwrap());
    }

    #[test]
    fn corrupted_streams_report_offsets() {
        let spec = SyntheticSpec { channels: 4, height: 8, width: 8, outlier_channels: 1, ..SyntheticSpec::default() };
        let bytes = encode(&relu_activation(&spec, 1), &CodecConfig::default()).unwrap();
        let err = decode(&bytes[..bytes.len() / 2]).unwrap_err();
        assert!(err.offset().is_some(), "{err}");
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert_eq!(decode(&bad).unwrap_err().offset(), Some(0));
        let mut bad = bytes;
        bad[36] = 7; // first channel class byte
        assert_eq!(decode(&bad).unwrap_err().offset(), Some(36));
    }

    #[test]
    fn header_layout_is_pinned() {
        let t = ActivationTensor::new(1, 2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let bytes = encode(&t, &CodecConfig { block: 2, ..CodecConfig::default() }).unwrap();
        let mut expected = Vec::new();
        expected.extend_from_slice(b"MWAC");
        expected.push(1);
        for v in [1u32, 2, 2, 2] {
            expected.extend_from_slice(&v.to_le_bytes());
        }
        expected.extend_from_slice(&0.25f32.to_le_bytes());
        expected.extend_from_slice(&1e-2f64.to_le_bytes());
        expected.push(8);
        expected.extend_from_slice(&127u16.to_le_bytes());
        expected.push(0);
        expected.extend_from_slice(&1.0f32.to_le_bytes());
        expected.extend_from_slice(&4.0f32.to_le_bytes());
        expected.extend_from_slice(&[0, 85, 170, 255]);
        assert_eq!(bytes, expected);
    }

    #[test]
    fn corpus_ratio_above_two() {
        let config = CodecConfig::default();
        let (mut orig, mut comp) = (0usize, 0usize);
        for t in corpus(7) {
            let c = compress_tensor(&t, &config).unwrap();
            orig += t.byte_size();
            comp += c.to_bytes().len();
        }
        assert!(orig as f64 / comp as f64 >= 2.0);
    }

    #[test]
    fn rejects_invalid_configs() {
        let t = ActivationTensor::new(1, 4, 4, vec![1.0; 16]).unwrap();
        for bad in [
            CodecConfig { bits: 6, ..CodecConfig::default() },
            CodecConfig { block: 5, ..CodecConfig::default() },
            CodecConfig { tau: 0.0, ..CodecConfig::default() },
            CodecConfig { eps: -1.0, ..CodecConfig::default() },
        ] {
            assert!(matches!(compress_tensor(&t, &bad), Err(CodecError::InvalidConfig(_))), "{bad:?}");
        }
        assert!(ActivationTensor::new(1, 1, 2, vec![1.0, f32::INFINITY]).is_err());
    }

    #[test]
    fn raw_tensor_file_round_trip() {
        let t = relu_activation(&SyntheticSpec::with_shape(3, 5, 7), 2);
        assert_eq!(ActivationTensor::from_bytes(&t.to_bytes()).unwrap(), t);
    }
}
