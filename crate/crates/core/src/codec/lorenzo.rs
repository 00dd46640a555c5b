//! First-order 2D Lorenzo prediction with error-bounded quantization of the
//! prediction residual.
//!
//! Elements are visited in raster order. Each nonzero element is predicted
//! from its already *reconstructed* upper, left and upper-left neighbours
//! (zero outside the block). The residual `δ = p − x` is mapped to the code
//! `round(δ / 2ε)`; the decoder reconstructs `p − 2ε·code`. Elements whose
//! code falls outside `±radius`, whose reconstruction would miss the bound,
//! or that the caller marks as must-keep are stored verbatim.
//!
//! Zero elements are never coded: the caller keeps the nonzero mask and the
//! decoder restores them as exact zeros.

use serde::{Deserialize, Serialize};

use super::CodecError;

/// `(row offset, column offset, coefficient)`; coefficients sum to one.
pub const STENCIL: [(isize, isize, i8); 3] = [(-1, 0, 1), (0, -1, 1), (-1, -1, -1)];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LorenzoParams {
    /// Absolute error bound for quantized elements.
    pub eps: f64,
    /// Largest code magnitude before an element is kept verbatim.
    pub radius: u16,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LorenzoBlock {
    /// Offset-binary codes (`code + radius`) in raster order.
    pub codes: Vec<u16>,
    /// `(flat offset within block, exact value)`, ascending offsets.
    pub outliers: Vec<(u16, f32)>,
}

fn predict(recon: &[f32], cols: usize, r: usize, c: usize) -> f64 {
    STENCIL
        .iter()
        .map(|&(dr, dc, w)| {
            let (rr, cc) = (r as isize + dr, c as isize + dc);
            if rr < 0 || cc < 0 {
                0.0
            } else {
                w as f64 * recon[rr as usize * cols + cc as usize] as f64
            }
        })
        .sum()
}

fn reconstruct(prediction: f64, eps: f64, code: i32) -> f32 {
    (prediction - 2.0 * eps * code as f64) as f32
}

/// Compresses a row-major `rows × cols` block. `keep_exact` forces verbatim
/// storage for selected values.
pub fn lorenzo_compress_block(
    block: &[f32],
    rows: usize,
    cols: usize,
    params: LorenzoParams,
    keep_exact: impl Fn(f32) -> bool,
) -> LorenzoBlock {
    debug_assert_eq!(block.len(), rows * cols);
    let mut recon = vec![0.0f32; block.len()];
    let mut out = LorenzoBlock::default();
    let radius = params.radius as i32;
    for r in 0..rows {
        for c in 0..cols {
            let i = r * cols + c;
            let x = block[i];
            if x == 0.0 {
                continue;
            }
            let p = predict(&recon, cols, r, c);
            let code = ((p - x as f64) / (2.0 * params.eps)).round();
            let quantized = (!keep_exact(x) && code.abs() <= radius as f64)
                .then(|| (code as i32, reconstruct(p, params.eps, code as i32)))
                .filter(|&(_, xr)| xr.is_finite() && ((xr as f64) - (x as f64)).abs() <= params.eps);
            match quantized {
                Some((code, xr)) => {
                    out.codes.push((code + radius) as u16);
                    recon[i] = xr;
                }
                None => {
                    out.outliers.push((i as u16, x));
                    recon[i] = x;
                }
            }
        }
    }
    out
}

/// Number of codes a block with this mask and outlier list consumes.
pub(crate) fn code_count(mask: &[bool], outliers: usize) -> usize {
    mask.iter().filter(|&&m| m).count() - outliers
}

pub fn lorenzo_decompress_block(
    payload: &LorenzoBlock,
    rows: usize,
    cols: usize,
    mask: &[bool],
    params: LorenzoParams,
) -> Result<Vec<f32>, CodecError> {
    if payload.codes.len() + payload.outliers.len() != mask.iter().filter(|&&m| m).count() {
        return Err(CodecError::Corrupt { offset: 0, what: "lorenzo payload does not match mask".into() });
    }
    decode_with(&mut payload.codes.iter().copied(), &payload.outliers, rows, cols, mask, params)
}

pub(crate) fn decode_with(
    codes: &mut impl Iterator<Item = u16>,
    outliers: &[(u16, f32)],
    rows: usize,
    cols: usize,
    mask: &[bool],
    params: LorenzoParams,
) -> Result<Vec<f32>, CodecError> {
    let mut recon = vec![0.0f32; rows * cols];
    let mut outliers = outliers.iter().peekable();
    let radius = params.radius as i32;
    for r in 0..rows {
        for c in 0..cols {
            let i = r * cols + c;
            if !mask[i] {
                continue;
            }
            if let Some(&&(off, v)) = outliers.peek() {
                if off as usize == i {
                    recon[i] = v;
                    outliers.next();
                    continue;
                }
            }
            let sym = codes
                .next()
                .ok_or_else(|| CodecError::Corrupt { offset: 0, what: "lorenzo code stream exhausted".into() })?;
            let code = sym as i32 - radius;
            if code.abs() > radius {
                return Err(CodecError::Corrupt { offset: 0, what: format!("lorenzo code {sym} out of range") });
            }
            recon[i] = reconstruct(predict(&recon, cols, r, c), params.eps, code);
        }
    }
    if outliers.next().is_some() {
        return Err(CodecError::Corrupt { offset: 0, what: "lorenzo outlier outside mask".into() });
    }
    Ok(recon)
}
