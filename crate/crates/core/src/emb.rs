//! Pre-computed, coalesced noise for sparsely accessed embedding tables.
//!
//! Unused entries have zero gradients, so the noise owed to an entry between
//! two accesses can be delivered as one aggregated vector right before the
//! later access (or after training ends). The pipeline here:
//!
//! 1. split entries into hot/cold by access frequency — hot entries keep the
//!    per-iteration eager path and stay out of the store;
//! 2. derive each cold entry's flush schedule from the replayable trace;
//! 3. run the noise recursion tile by tile over the cold coordinates,
//!    accumulating per-entry sums and flushing them into CSC events.
//!
//! An event flushed at iteration `t` aggregates the noises of all steps
//! since the entry's previous access up to and including `t - 1`; the access
//! iteration's own noise lands in the entry's *next* event. That keeps the
//! value an accessed entry sees at gradient time identical to the eager
//! path's. Ranges per entry exactly partition the run, so no noise mass is
//! lost or duplicated.

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::dtype::Dtype;
use crate::error::{Error, Result};
use crate::mixing::MixingMatrix;
use crate::noise::{NoisePlan, SubsetEngine};
use crate::store::CoalescedNoiseStore;
use crate::trace::{AccessTrace, FrequencyStats};

/// Frequency-threshold classification of entries.
#[derive(Debug, Clone, PartialEq)]
pub struct HotColdSplit {
    threshold: u64,
    hot: Vec<bool>,
    hot_count: u64,
}

impl HotColdSplit {
    pub fn threshold(&self) -> u64 {
        self.threshold
    }

    pub fn entries(&self) -> u64 {
        self.hot.len() as u64
    }

    pub fn is_hot(&self, entry: u64) -> bool {
        self.hot[entry as usize]
    }

    pub fn hot_count(&self) -> u64 {
        self.hot_count
    }

    pub fn hot_fraction(&self) -> f64 {
        if self.hot.is_empty() {
            0.0
        } else {
            self.hot_count as f64 / self.hot.len() as f64
        }
    }

    /// Cold entry ids in ascending order.
    pub fn cold_entries(&self) -> Vec<u64> {
        (0..self.hot.len() as u64)
            .filter(|&e| !self.hot[e as usize])
            .collect()
    }

    /// Hot entry ids in ascending order.
    pub fn hot_entries(&self) -> Vec<u64> {
        (0..self.hot.len() as u64)
            .filter(|&e| self.hot[e as usize])
            .collect()
    }
}

/// Classify entries: access count >= threshold means hot.
pub fn split_hot_cold(stats: &FrequencyStats, threshold: u64) -> HotColdSplit {
    let hot: Vec<bool> = stats.presence.iter().map(|&c| c >= threshold).collect();
    let hot_count = hot.iter().filter(|&&h| h).count() as u64;
    HotColdSplit {
        threshold,
        hot,
        hot_count,
    }
}

/// Aggregation range `[start, end)` of one event; the event is applied at
/// column `end` (before iteration `end`'s gradient step, or after training
/// when `end` is the iteration count).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EventSpan {
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ColdEntrySchedule {
    pub entry: u64,
    pub spans: Vec<EventSpan>,
}

/// Flush schedule for all cold entries, ascending by entry id.
#[derive(Debug, Clone, PartialEq)]
pub struct CoalescingSchedule {
    iterations: usize,
    cold: Vec<ColdEntrySchedule>,
}

impl CoalescingSchedule {
    pub fn iterations(&self) -> usize {
        self.iterations
    }

    pub fn cold(&self) -> &[ColdEntrySchedule] {
        &self.cold
    }

    /// Total events the store will hold.
    pub fn event_count(&self) -> u64 {
        self.cold.iter().map(|c| c.spans.len() as u64).sum()
    }
}

/// Derive flush spans for every cold entry. Hot entries are excluded
/// entirely; entries never accessed get a single span covering the whole
/// run, flushed after training.
pub fn build_schedule(trace: &AccessTrace, split: &HotColdSplit) -> Result<CoalescingSchedule> {
    if split.entries() != trace.entries() {
        return Err(Error::validation(format!(
            "split covers {} entries, trace has {}",
            split.entries(),
            trace.entries()
        )));
    }
    let n = trace.iterations();
    let mut accesses: Vec<Vec<usize>> = vec![Vec::new(); trace.entries() as usize];
    for t in 0..n {
        for &e in trace.replay_iteration(t)? {
            if !split.is_hot(e) {
                accesses[e as usize].push(t);
            }
        }
    }
    let mut cold = Vec::new();
    for e in 0..trace.entries() {
        if split.is_hot(e) {
            continue;
        }
        let mut spans = Vec::new();
        let mut start = 0usize;
        for &a in &accesses[e as usize] {
            if a > start {
                spans.push(EventSpan { start, end: a });
            }
            start = a;
        }
        // Terminal span always reaches the end of training; it contains at
        // least the last access iteration's own noise.
        spans.push(EventSpan { start, end: n });
        cold.push(ColdEntrySchedule { entry: e, spans });
    }
    Ok(CoalescingSchedule {
        iterations: n,
        cold,
    })
}

/// Predicted `nnz / iterations` for a split, without building the store.
pub fn predicted_avg_noise_entries(trace: &AccessTrace, split: &HotColdSplit) -> Result<f64> {
    let schedule = build_schedule(trace, split)?;
    Ok(schedule.event_count() as f64 / trace.iterations() as f64)
}

/// One row of a threshold sweep.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct ThresholdPoint {
    pub threshold: u64,
    pub hot_fraction: f64,
    pub predicted_avg_noise_entries: f64,
}

/// Evaluate candidate thresholds; the caller picks one balancing store
/// footprint against the extra eager-path work for hot entries.
pub fn threshold_sweep(trace: &AccessTrace, thresholds: &[u64]) -> Result<Vec<ThresholdPoint>> {
    let stats = trace.frequency_histogram();
    thresholds
        .iter()
        .map(|&threshold| {
            let split = split_hot_cold(&stats, threshold);
            Ok(ThresholdPoint {
                threshold,
                hot_fraction: split.hot_fraction(),
                predicted_avg_noise_entries: predicted_avg_noise_entries(trace, &split)?,
            })
        })
        .collect()
}

/// Tiling of the cold coordinate space.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TileSpec {
    /// Noise elements per tile; a multiple of `dim` so tiles never split an
    /// entry's vector.
    pub tile_elems: usize,
    pub dim: usize,
    pub cold_elems: usize,
}

impl TileSpec {
    pub fn explicit(tile_elems: usize, dim: usize, cold_elems: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("dim must be positive"));
        }
        if !cold_elems.is_multiple_of(dim) {
            return Err(Error::invalid("cold_elems must be a multiple of dim"));
        }
        if cold_elems > 0 && (tile_elems == 0 || !tile_elems.is_multiple_of(dim)) {
            return Err(Error::invalid(
                "tile_elems must be a positive multiple of dim",
            ));
        }
        Ok(Self {
            tile_elems,
            dim,
            cold_elems,
        })
    }

    pub fn tile_count(&self) -> usize {
        if self.cold_elems == 0 {
            0
        } else {
            self.cold_elems.div_ceil(self.tile_elems)
        }
    }

    /// Element ranges `[lo, hi)` over the cold coordinate space.
    pub fn ranges(&self) -> Vec<(usize, usize)> {
        (0..self.tile_count())
            .map(|i| {
                let lo = i * self.tile_elems;
                (lo, (lo + self.tile_elems).min(self.cold_elems))
            })
            .collect()
    }
}

/// Largest tile whose working set fits the budget.
///
/// Per tile the pre-computation keeps `band - 1` history rows, one raw-noise
/// slice, and one output slice resident, i.e. `(band + 1) * tile_elems`
/// elements. The result is floored to a multiple of `dim` and capped at the
/// cold element count.
pub fn tile_size_solver(
    budget_bytes: u64,
    band: usize,
    cold_elems: usize,
    dim: usize,
    dtype: Dtype,
) -> Result<TileSpec> {
    if dim == 0 {
        return Err(Error::invalid("dim must be positive"));
    }
    if !cold_elems.is_multiple_of(dim) {
        return Err(Error::invalid("cold_elems must be a multiple of dim"));
    }
    if cold_elems == 0 {
        return TileSpec::explicit(0, dim, 0);
    }
    let width = dtype.width() as u64;
    let working_rows = band as u64 + 1;
    let max_elems = budget_bytes / (working_rows * width);
    let tile_elems = (max_elems as usize / dim) * dim;
    if tile_elems == 0 {
        return Err(Error::Infeasible(format!(
            "budget {budget_bytes} B cannot hold one {dim}-element tile (needs {} B)",
            working_rows * dim as u64 * width
        )));
    }
    TileSpec::explicit(tile_elems.min(cold_elems), dim, cold_elems)
}

/// Provenance digest binding a store to the exact inputs that built it.
pub fn store_provenance(
    plan: &NoisePlan,
    matrix: &MixingMatrix,
    trace: &AccessTrace,
    split: &HotColdSplit,
) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(b"store-prov-v1");
    h.update(plan.seed.to_le_bytes());
    h.update((plan.elems as u64).to_le_bytes());
    h.update((plan.iterations as u64).to_le_bytes());
    h.update((plan.band as u64).to_le_bytes());
    h.update(plan.sigma.to_le_bytes());
    h.update([plan.dtype.code()]);
    h.update(matrix.digest());
    h.update(trace.content_digest());
    h.update(split.threshold().to_le_bytes());
    for e in 0..split.entries() {
        h.update([split.is_hot(e) as u8]);
    }
    h.finalize().into()
}

type ColumnEvents = Vec<Vec<(u64, Vec<f64>)>>;

/// Run the noise recursion over every tile and coalesce the outputs.
///
/// Tiles are independent and processed in parallel; per-tile event lists are
/// merged in tile order, so the result does not depend on thread count. The
/// per-element arithmetic is identical for any tile partition, making stores
/// built with different tilings bit-equal.
pub fn precompute_coalesced(
    plan: &NoisePlan,
    matrix: &MixingMatrix,
    trace: &AccessTrace,
    split: &HotColdSplit,
    tiles: &TileSpec,
) -> Result<CoalescedNoiseStore> {
    plan.validate()?;
    let n = trace.iterations();
    if plan.iterations != n {
        return Err(Error::validation(format!(
            "plan covers {} iterations, trace has {n}",
            plan.iterations
        )));
    }
    if plan.elems as u64 != trace.entries() * tiles.dim as u64 {
        return Err(Error::validation(format!(
            "plan has {} elements, expected entries * dim = {}",
            plan.elems,
            trace.entries() * tiles.dim as u64
        )));
    }
    let schedule = build_schedule(trace, split)?;
    let cold = split.cold_entries();
    if tiles.cold_elems != cold.len() * tiles.dim {
        return Err(Error::validation(format!(
            "tile spec covers {} cold elements, split has {}",
            tiles.cold_elems,
            cold.len() * tiles.dim
        )));
    }

    let dim = tiles.dim;
    let tile_ranges = tiles.ranges();
    let tile_results: Result<Vec<ColumnEvents>> = tile_ranges
        .par_iter()
        .map(|&(lo, hi)| {
            let slot_lo = lo / dim;
            let slot_hi = hi / dim;
            let tile_entries = &schedule.cold()[slot_lo..slot_hi];
            // Global noise coordinates keep their table-relative indices, so
            // tiled output matches the full-table engine element for element.
            let mut indices = Vec::with_capacity(hi - lo);
            for sched in tile_entries {
                for j in 0..dim as u64 {
                    indices.push(sched.entry * dim as u64 + j);
                }
            }
            // flush_at[c]: local entries whose event applies at column c.
            let mut flush_at: Vec<Vec<usize>> = vec![Vec::new(); n + 1];
            for (local, sched) in tile_entries.iter().enumerate() {
                for span in &sched.spans {
                    flush_at[span.end].push(local);
                }
            }
            let mut engine = SubsetEngine::over_indices(plan, matrix, indices)?;
            let mut acc = vec![0.0; (slot_hi - slot_lo) * dim];
            let mut columns: ColumnEvents = vec![Vec::new(); n + 2];
            for t in 0..n {
                for &local in &flush_at[t] {
                    columns[t].push(drain_event(&mut acc, tile_entries, local, dim, plan.dtype));
                }
                let step = engine.step()?;
                for (a, v) in acc.iter_mut().zip(&step.values) {
                    *a += v;
                }
            }
            for &local in &flush_at[n] {
                columns[n].push(drain_event(&mut acc, tile_entries, local, dim, plan.dtype));
            }
            columns.truncate(n + 1);
            Ok(columns)
        })
        .collect();
    let tile_results = tile_results?;

    // Tiles cover ascending entry ranges; concatenating per column in tile
    // order keeps entry ids strictly increasing.
    let mut columns: ColumnEvents = vec![Vec::new(); n + 1];
    for tile_cols in tile_results {
        for (c, events) in tile_cols.into_iter().enumerate() {
            columns[c].extend(events);
        }
    }
    CoalescedNoiseStore::from_columns(
        trace.entries(),
        n,
        dim,
        plan.dtype,
        columns,
        store_provenance(plan, matrix, trace, split),
    )
}

fn drain_event(
    acc: &mut [f64],
    tile_entries: &[ColdEntrySchedule],
    local: usize,
    dim: usize,
    dtype: Dtype,
) -> (u64, Vec<f64>) {
    let slice = &mut acc[local * dim..(local + 1) * dim];
    let value: Vec<f64> = slice.iter().map(|&x| dtype.quantize(x)).collect();
    slice.fill(0.0);
    (tile_entries[local].entry, value)
}
