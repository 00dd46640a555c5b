//! Per-channel affine min–max quantization for normal channels.

use serde::{Deserialize, Serialize};

use super::CodecError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantizedChannel {
    pub bits: u8,
    /// Real value of code 0.
    pub min: f32,
    pub max: f32,
    pub codes: Vec<u8>,
}

impl QuantizedChannel {
    /// Step between adjacent codes; zero for a constant channel.
    pub fn scale(&self) -> f64 {
        step(self.min, self.max, self.bits)
    }

    pub fn zero_point(&self) -> f32 {
        self.min
    }

    /// Largest reconstruction error the affine grid allows.
    pub fn half_step(&self) -> f64 {
        self.scale() / 2.0
    }
}

fn step(min: f32, max: f32, bits: u8) -> f64 {
    let levels = ((1u32 << bits) - 1) as f64;
    (max as f64 - min as f64) / levels
}

pub fn check_bits(bits: u8) -> Result<(), CodecError> {
    if bits == 4 || bits == 8 {
        Ok(())
    } else {
        Err(CodecError::InvalidConfig(format!("bit width must be 4 or 8, got {bits}")))
    }
}

pub fn quantize_channel(data: &[f32], bits: u8) -> Result<QuantizedChannel, CodecError> {
    check_bits(bits)?;
    if data.iter().any(|v| !v.is_finite()) {
        return Err(CodecError::NonFinite);
    }
    let min = data.iter().copied().fold(f32::INFINITY, f32::min);
    let max = data.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let (min, max) = if data.is_empty() { (0.0, 0.0) } else { (min, max) };
    let scale = step(min, max, bits);
    let top = ((1u32 << bits) - 1) as f64;
    let codes = data
        .iter()
        .map(|&x| {
            if scale == 0.0 {
                0
            } else {
                ((x as f64 - min as f64) / scale).round().clamp(0.0, top) as u8
            }
        })
        .collect();
    Ok(QuantizedChannel { bits, min, max, codes })
}

pub fn dequantize_channel(q: &QuantizedChannel) -> Vec<f32> {
    let scale = q.scale();
    q.codes.iter().map(|&c| (q.min as f64 + c as f64 * scale) as f32).collect()
}

/// Packs codes at `bits` per code, low nibble first for 4-bit codes.
pub(crate) fn pack_codes(codes: &[u8], bits: u8) -> Vec<u8> {
    match bits {
        8 => codes.to_vec(),
        4 => codes.chunks(2).map(|p| (p[0] & 0x0f) | (p.get(1).copied().unwrap_or(0) << 4)).collect(),
        _ => unreachable!("validated bit width"),
    }
}

pub(crate) fn unpack_codes(packed: &[u8], bits: u8, count: usize) -> Vec<u8> {
    match bits {
        8 => packed[..count].to_vec(),
        4 => (0..count).map(|i| (packed[i / 2] >> ((i % 2) * 4)) & 0x0f).collect(),
        _ => unreachable!("validated bit width"),
    }
}

pub(crate) fn packed_len(count: usize, bits: u8) -> usize {
    (count * bits as usize).div_ceil(8)
}
