//! Dense/sparse block partition of a salient channel's feature map.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BlockClass {
    Sparse,
    Dense,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockPartition {
    pub block: usize,
    pub tau: f32,
    pub height: usize,
    pub width: usize,
    /// Raster order over the block grid.
    pub classes: Vec<BlockClass>,
    /// Nonzero mask of the feature map, row-major.
    pub mask: Vec<bool>,
}

impl BlockPartition {
    pub fn blocks_down(&self) -> usize {
        self.height.div_ceil(self.block)
    }

    pub fn blocks_across(&self) -> usize {
        self.width.div_ceil(self.block)
    }

    /// Row and column ranges covered by block `index`, clipped to the map.
    pub fn bounds(&self, index: usize) -> BlockBounds {
        block_bounds(self.height, self.width, self.block, index)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockBounds {
    pub row0: usize,
    pub rows: usize,
    pub col0: usize,
    pub cols: usize,
}

impl BlockBounds {
    /// Copies the block out of a row-major map.
    pub fn gather<T: Copy>(&self, map: &[T], width: usize) -> Vec<T> {
        (self.row0..self.row0 + self.rows)
            .flat_map(|r| map[r * width + self.col0..r * width + self.col0 + self.cols].iter().copied())
            .collect()
    }

    pub fn scatter<T: Copy>(&self, block: &[T], map: &mut [T], width: usize) {
        for (i, row) in block.chunks(self.cols).enumerate() {
            let start = (self.row0 + i) * width + self.col0;
            map[start..start + self.cols].copy_from_slice(row);
        }
    }
}

pub fn block_bounds(height: usize, width: usize, block: usize, index: usize) -> BlockBounds {
    let across = width.div_ceil(block);
    let (br, bc) = (index / across, index % across);
    let row0 = br * block;
    let col0 = bc * block;
    BlockBounds { row0, rows: block.min(height - row0), col0, cols: block.min(width - col0) }
}

/// Average-pools the nonzero mask with `n × n` windows. A window whose mean
/// is below `tau` is sparse. Ragged edge windows count their padding as zeros.
pub fn partition_blocks(map: &[f32], height: usize, width: usize, n: usize, tau: f32) -> BlockPartition {
    assert!(n >= 1 && n <= height.min(width), "block size out of range");
    let mask: Vec<bool> = map.iter().map(|&v| v != 0.0).collect();
    let total = height.div_ceil(n) * width.div_ceil(n);
    let window = (n * n) as f32;
    let classes = (0..total)
        .map(|i| {
            let b = block_bounds(height, width, n, i);
            let nonzero = b.gather(&mask, width).iter().filter(|&&m| m).count();
            if (nonzero as f32 / window) < tau {
                BlockClass::Sparse
            } else {
                BlockClass::Dense
            }
        })
        .collect();
    BlockPartition { block: n, tau, height, width, classes, mask }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_zero_map_is_sparse() {
        let p = partition_blocks(&[0.0; 64], 8, 8, 4, 0.25);
        assert_eq!(p.classes, vec![BlockClass::Sparse; 4]);
    }

    #[test]
    fn all_nonzero_map_is_dense() {
        let p = partition_blocks(&[1.5; 64], 8, 8, 4, 0.5);
        assert_eq!(p.classes, vec![BlockClass::Dense; 4]);
    }

    #[test]
    fn checkerboard_at_threshold_is_dense() {
        let map: Vec<f32> = (0..16).map(|i| ((i / 4 + i % 4) % 2) as f32).collect();
        let p = partition_blocks(&map, 4, 4, 2, 0.5);
        assert_eq!(p.classes, vec![BlockClass::Dense; 4]);
    }

    #[test]
    fn ragged_edges_pad_with_zeros() {
        // 5x5 all-ones map with n = 4: the corner window holds 1 of 16 cells.
        let p = partition_blocks(&[1.0; 25], 5, 5, 4, 0.25);
        assert_eq!(p.blocks_across(), 2);
        assert_eq!(p.classes, vec![BlockClass::Dense, BlockClass::Dense, BlockClass::Dense, BlockClass::Sparse]);
        assert_eq!(p.bounds(3), BlockBounds { row0: 4, rows: 1, col0: 4, cols: 1 });
    }

    #[test]
    fn gather_scatter_inverse() {
        let map: Vec<u32> = (0..35).collect();
        let mut back = vec![0u32; 35];
        for i in 0..4 {
            let b = block_bounds(5, 7, 4, i);
            b.scatter(&b.gather(&map, 7), &mut back, 7);
        }
        assert_eq!(back, map);
    }
}
