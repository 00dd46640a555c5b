//! Compressed Sparse Row encoding of small 2D blocks.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsrBlock {
    pub values: Vec<f32>,
    pub col_idx: Vec<u16>,
    pub row_ptr: Vec<u16>,
}

/// Encodes a row-major `rows × cols` block. Only exact zeros are dropped.
pub fn csr_encode(block: &[f32], rows: usize, cols: usize) -> CsrBlock {
    debug_assert_eq!(block.len(), rows * cols);
    let mut out = CsrBlock { values: Vec::new(), col_idx: Vec::new(), row_ptr: Vec::with_capacity(rows + 1) };
    out.row_ptr.push(0);
    for row in block.chunks(cols.max(1)).take(rows) {
        for (c, &v) in row.iter().enumerate() {
            if v != 0.0 {
                out.values.push(v);
                out.col_idx.push(c as u16);
            }
        }
        out.row_ptr.push(out.values.len() as u16);
    }
    out
}

pub fn csr_decode(csr: &CsrBlock, rows: usize, cols: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; rows * cols];
    for r in 0..rows {
        let (lo, hi) = (csr.row_ptr[r] as usize, csr.row_ptr[r + 1] as usize);
        for k in lo..hi {
            out[r * cols + csr.col_idx[k] as usize] = csr.values[k];
        }
    }
    out
}

/// Checks the structural invariants a decoder relies on.
pub(crate) fn csr_is_well_formed(csr: &CsrBlock, rows: usize, cols: usize) -> bool {
    csr.row_ptr.len() == rows + 1
        && csr.row_ptr[0] == 0
        && csr.row_ptr.windows(2).all(|w| w[0] <= w[1])
        && csr.row_ptr[rows] as usize == csr.values.len()
        && csr.col_idx.len() == csr.values.len()
        && csr.col_idx.iter().all(|&c| (c as usize) < cols)
}
