//! Byte-accounting memory pool with first-fit placement.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::graph::TensorId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TensorState {
    /// Not produced yet.
    Unallocated,
    Live,
    Compressed,
    Evicted,
    /// Released after its last use.
    Freed,
}

impl TensorState {
    pub fn is_resident(self) -> bool {
        matches!(self, TensorState::Live | TensorState::Compressed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorRuntimeState {
    pub state: TensorState,
    pub address: Option<u64>,
    pub resident_bytes: u64,
}

/// Placement is first-fit by address; the budget check is on total bytes.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryPoolSim {
    budget: u64,
    used: u64,
    peak: u64,
    allocs: BTreeMap<TensorId, (u64, u64)>,
}

impl MemoryPoolSim {
    pub fn new(budget: u64) -> Self {
        Self { budget, used: 0, peak: 0, allocs: BTreeMap::new() }
    }

    pub fn budget(&self) -> u64 {
        self.budget
    }

    pub fn used(&self) -> u64 {
        self.used
    }

    pub fn peak(&self) -> u64 {
        self.peak
    }

    pub fn fits(&self, bytes: u64) -> bool {
        self.used + bytes <= self.budget
    }

    pub fn over_budget(&self) -> bool {
        self.used > self.budget
    }

    pub fn address(&self, tensor: TensorId) -> Option<u64> {
        self.allocs.get(&tensor).map(|a| a.0)
    }

    pub fn resident_bytes(&self, tensor: TensorId) -> u64 {
        self.allocs.get(&tensor).map_or(0, |a| a.1)
    }

    fn first_fit(&self, bytes: u64) -> u64 {
        let mut spans: Vec<(u64, u64)> = self.allocs.values().copied().collect();
        spans.sort_unstable();
        let mut cursor = 0;
        for (offset, len) in spans {
            if offset >= cursor + bytes {
                return cursor;
            }
            cursor = cursor.max(offset + len);
        }
        cursor
    }

    /// Places `bytes` for `tensor`, replacing any previous allocation. The
    /// allocation happens even when it overflows the budget so a replay can
    /// report the overflow and continue.
    pub fn allocate(&mut self, tensor: TensorId, bytes: u64) -> u64 {
        self.release(tensor);
        if bytes == 0 {
            return 0;
        }
        let offset = self.first_fit(bytes);
        self.allocs.insert(tensor, (offset, bytes));
        self.used += bytes;
        self.peak = self.peak.max(self.used);
        offset
    }

    /// Changes an allocation's size, keeping its address when it shrinks.
    pub fn resize(&mut self, tensor: TensorId, bytes: u64) {
        match self.allocs.get(&tensor).copied() {
            Some((offset, old)) if bytes <= old && bytes > 0 => {
                self.allocs.insert(tensor, (offset, bytes));
                self.used -= old - bytes;
            }
            _ => {
                self.allocate(tensor, bytes);
            }
        }
    }

    pub fn release(&mut self, tensor: TensorId) -> u64 {
        let freed = self.allocs.remove(&tensor).map_or(0, |a| a.1);
        self.used -= freed;
        freed
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accounting_and_first_fit() {
        let mut pool = MemoryPoolSim::new(100);
        assert_eq!(pool.allocate(TensorId(1), 40), 0);
        assert_eq!(pool.allocate(TensorId(2), 30), 40);
        pool.release(TensorId(1));
        assert_eq!(pool.allocate(TensorId(3), 20), 0);
        assert_eq!(pool.used(), 50);
        pool.resize(TensorId(2), 10);
        assert_eq!((pool.used(), pool.address(TensorId(2))), (30, Some(40)));
        assert!(pool.fits(70) && !pool.fits(71));
        pool.allocate(TensorId(4), 80);
        assert!(pool.over_budget());
        assert_eq!(pool.peak(), 110);
    }
}
