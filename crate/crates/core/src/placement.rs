//! Noise-history placement across GPU memory, main memory, and CXL memory.
//!
//! The heuristic: if the whole history fits in main memory, put it all there
//! and leave the GPU to training. Otherwise fill GPU capacity, then main
//! memory, and push only the remainder to the slower CXL tier. Whole rows
//! only; a row that does not fit a tier moves entirely to the next one.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Capacities available to the noise history per tier, in bytes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MemoryTierSpec {
    pub gpu_capacity_bytes: u64,
    /// GPU memory the trainer itself needs; subtracted from the GPU tier
    /// before any history rows are placed there.
    #[serde(default)]
    pub gpu_training_reserve_bytes: u64,
    pub main_capacity_bytes: u64,
    pub cxl_capacity_bytes: u64,
}

impl MemoryTierSpec {
    pub fn gpu_available(&self) -> u64 {
        self.gpu_capacity_bytes
            .saturating_sub(self.gpu_training_reserve_bytes)
    }
}

/// Row split across the tiers; rows sum to the history row count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlacementPlan {
    pub rows_gpu: u64,
    pub rows_main: u64,
    pub rows_cxl: u64,
    pub bytes_gpu: u64,
    pub bytes_main: u64,
    pub bytes_cxl: u64,
}

impl PlacementPlan {
    pub fn empty() -> Self {
        Self {
            rows_gpu: 0,
            rows_main: 0,
            rows_cxl: 0,
            bytes_gpu: 0,
            bytes_main: 0,
            bytes_cxl: 0,
        }
    }

    pub fn total_rows(&self) -> u64 {
        self.rows_gpu + self.rows_main + self.rows_cxl
    }

    pub fn total_bytes(&self) -> u64 {
        self.bytes_gpu + self.bytes_main + self.bytes_cxl
    }
}

/// Place `history_rows` rows of `row_bytes` each.
pub fn plan_placement(
    history_rows: u64,
    row_bytes: u64,
    tiers: &MemoryTierSpec,
) -> Result<PlacementPlan> {
    if history_rows == 0 {
        return Ok(PlacementPlan::empty());
    }
    if row_bytes == 0 {
        return Err(Error::invalid("row_bytes must be positive"));
    }
    let total = history_rows * row_bytes;
    if total <= tiers.main_capacity_bytes {
        return Ok(PlacementPlan {
            rows_gpu: 0,
            rows_main: history_rows,
            rows_cxl: 0,
            bytes_gpu: 0,
            bytes_main: total,
            bytes_cxl: 0,
        });
    }
    let fit = |cap: u64, remaining: u64| -> u64 { (cap / row_bytes).min(remaining) };
    let rows_gpu = fit(tiers.gpu_available(), history_rows);
    let rows_main = fit(tiers.main_capacity_bytes, history_rows - rows_gpu);
    let rows_cxl = fit(tiers.cxl_capacity_bytes, history_rows - rows_gpu - rows_main);
    let placed = rows_gpu + rows_main + rows_cxl;
    if placed < history_rows {
        let available = (tiers.gpu_available() / row_bytes
            + tiers.main_capacity_bytes / row_bytes
            + tiers.cxl_capacity_bytes / row_bytes)
            * row_bytes;
        return Err(Error::CapacityExceeded {
            required: total,
            available,
            shortfall: (history_rows - placed) * row_bytes,
        });
    }
    Ok(PlacementPlan {
        rows_gpu,
        rows_main,
        rows_cxl,
        bytes_gpu: rows_gpu * row_bytes,
        bytes_main: rows_main * row_bytes,
        bytes_cxl: rows_cxl * row_bytes,
    })
}
