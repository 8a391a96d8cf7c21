//! Correlated noise generation.
//!
//! The recursion per step is
//!
//! ```text
//! out_t = (raw_t - sum_{k} C[t, t-1-k] * out_{t-1-k}) / C[t, t]
//! ```
//!
//! with the sum truncated to the last `band - 1` steps (or `t` steps early
//! on). The engine keeps those previous outputs in a ring buffer: the output
//! of step `t` occupies ring row `t mod (band - 1)`.
//!
//! One step kernel serves every consumer: the full-vector streaming engine,
//! arbitrary element subsets (tiles, hot coordinate blocks), and the
//! regenerate-from-seed oracle. The kernel pre-normalizes the mixing row and
//! the raw noise by the diagonal and accumulates the mixing sum in ascending
//! step-age order, so any two paths over the same elements produce
//! bit-identical f64 results.

use std::io::{Read, Write};

use crate::dtype::Dtype;
use crate::error::{Error, Result};
use crate::mixing::{MixingMatrix, MixingRow};
use crate::rng::gaussian_at;

/// Parameters of a noise stream.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct NoisePlan {
    pub seed: u64,
    /// Total noise elements per step (the trainable-parameter count).
    pub elems: usize,
    /// Training iterations covered by the stream.
    pub iterations: usize,
    /// Band size; `band - 1` previous outputs feed each step.
    pub band: usize,
    /// Standard deviation of the raw Gaussians.
    pub sigma: f64,
    pub dtype: Dtype,
}

impl NoisePlan {
    pub fn validate(&self) -> Result<()> {
        if self.elems == 0 {
            return Err(Error::invalid("plan needs at least one element"));
        }
        if self.iterations == 0 {
            return Err(Error::invalid("plan needs at least one iteration"));
        }
        if self.band == 0 || self.band > self.iterations {
            return Err(Error::invalid(format!(
                "band must be in 1..={}, got {}",
                self.iterations, self.band
            )));
        }
        if self.sigma.is_nan() || self.sigma <= 0.0 {
            return Err(Error::invalid("sigma must be positive"));
        }
        Ok(())
    }

    fn check_matrix(&self, matrix: &MixingMatrix) -> Result<()> {
        if matrix.band() != self.band {
            return Err(Error::invalid(format!(
                "matrix band {} does not match plan band {}",
                matrix.band(),
                self.band
            )));
        }
        if matrix.n() < self.iterations {
            return Err(Error::invalid(format!(
                "matrix order {} is smaller than plan iterations {}",
                matrix.n(),
                self.iterations
            )));
        }
        Ok(())
    }
}

/// One step's correlated noise over some element set.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelatedNoise {
    pub t: usize,
    pub values: Vec<f64>,
}

/// Ring buffer of the last `band - 1` outputs over `width` elements.
///
/// Single-writer: steps are stored strictly in order. Reads between writes
/// are safe to share.
#[derive(Debug, Clone)]
pub struct NoiseHistory {
    ring_rows: usize,
    width: usize,
    data: Vec<f64>,
    steps: u64,
}

const SNAPSHOT_MAGIC: &[u8; 4] = b"CNH1";

impl NoiseHistory {
    pub fn new(band: usize, width: usize) -> Self {
        let ring_rows = band.saturating_sub(1);
        Self {
            ring_rows,
            width,
            data: vec![0.0; ring_rows * width],
            steps: 0,
        }
    }

    pub fn ring_rows(&self) -> usize {
        self.ring_rows
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Completed steps; also the index of the next step to store.
    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Valid rows currently held.
    pub fn filled(&self) -> usize {
        (self.steps as usize).min(self.ring_rows)
    }

    pub fn row(&self, ring_idx: usize) -> &[f64] {
        &self.data[ring_idx * self.width..(ring_idx + 1) * self.width]
    }

    /// Row holding the output of step `t` (valid while `t` is within the
    /// last `band - 1` completed steps).
    pub fn step_row(&self, t: u64) -> &[f64] {
        self.row((t % self.ring_rows as u64) as usize)
    }

    /// Store the output of step `t`, overwriting the oldest row. Steps must
    /// arrive in order.
    pub fn store_step(&mut self, t: u64, values: &[f64]) -> Result<()> {
        if t != self.steps {
            return Err(Error::state(format!(
                "history expects step {}, got {t}",
                self.steps
            )));
        }
        if values.len() != self.width {
            return Err(Error::state(format!(
                "history width {} but step has {} values",
                self.width,
                values.len()
            )));
        }
        if self.ring_rows > 0 {
            let idx = (t % self.ring_rows as u64) as usize * self.width;
            self.data[idx..idx + self.width].copy_from_slice(values);
        }
        self.steps += 1;
        Ok(())
    }

    /// Write the `CNH1` snapshot: a 32-byte header followed by the ring
    /// rows, row-major, little-endian in `dtype`.
    ///
    /// Header layout: magic `CNH1`, dtype code u8, 3 pad bytes, band u32,
    /// width u64, completed steps u64, 4 pad bytes.
    pub fn write_snapshot<W: Write>(&self, dtype: Dtype, mut w: W) -> Result<()> {
        let mut header = Vec::with_capacity(32);
        header.extend_from_slice(SNAPSHOT_MAGIC);
        header.push(dtype.code());
        header.extend_from_slice(&[0u8; 3]);
        header.extend_from_slice(&((self.ring_rows + 1) as u32).to_le_bytes());
        header.extend_from_slice(&(self.width as u64).to_le_bytes());
        header.extend_from_slice(&self.steps.to_le_bytes());
        header.extend_from_slice(&[0u8; 4]);
        debug_assert_eq!(header.len(), 32);
        w.write_all(&header)?;
        let mut payload = Vec::with_capacity(self.data.len() * dtype.width());
        for &x in &self.data {
            dtype.write_elem(x, &mut payload);
        }
        w.write_all(&payload)?;
        Ok(())
    }

    pub fn read_snapshot<R: Read>(mut r: R) -> Result<(Self, Dtype)> {
        let mut header = [0u8; 32];
        r.read_exact(&mut header)?;
        if &header[0..4] != SNAPSHOT_MAGIC {
            return Err(Error::validation("bad history snapshot magic"));
        }
        let dtype = Dtype::from_code(header[4])?;
        let band = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
        let width = u64::from_le_bytes(header[12..20].try_into().unwrap()) as usize;
        let steps = u64::from_le_bytes(header[20..28].try_into().unwrap());
        let mut hist = NoiseHistory::new(band, width);
        hist.steps = steps;
        let mut payload = vec![0u8; hist.data.len() * dtype.width()];
        r.read_exact(&mut payload)?;
        for (i, x) in hist.data.iter_mut().enumerate() {
            *x = dtype.read_elem(&payload, i * dtype.width());
        }
        Ok((hist, dtype))
    }
}

/// Raw Gaussian slice `[lo, hi)` of step `t`. Pure function of
/// (seed, t, element index): call order, chunking, and thread count do not
/// change a single bit.
pub fn sample_raw_noise(plan: &NoisePlan, t: usize, lo: usize, hi: usize) -> Result<Vec<f64>> {
    if lo > hi || hi > plan.elems {
        return Err(Error::OutOfRange(format!(
            "range [{lo}, {hi}) out of bounds for {} elements",
            plan.elems
        )));
    }
    Ok((lo..hi)
        .map(|i| raw_noise_element(plan, t, i as u64))
        .collect())
}

/// Raw Gaussians at explicit element indices.
pub fn sample_raw_noise_at(plan: &NoisePlan, t: usize, indices: &[u64]) -> Vec<f64> {
    indices
        .iter()
        .map(|&i| raw_noise_element(plan, t, i))
        .collect()
}

#[inline]
fn raw_noise_element(plan: &NoisePlan, t: usize, index: u64) -> f64 {
    plan.dtype
        .quantize(plan.sigma * gaussian_at(plan.seed, t as u64, index))
}

/// Weighted combination of history rows: `sum_k coeffs[k] * row(ring[k])`.
///
/// Pure read; the row must carry its ring lookup order.
pub fn mix_history(history: &NoiseHistory, row: &MixingRow) -> Result<Vec<f64>> {
    if row.coeffs.is_empty() {
        return Ok(vec![0.0; history.width()]);
    }
    let ring = row
        .ring_order
        .as_ref()
        .ok_or_else(|| Error::state("mixing row lacks ring order"))?;
    if row.coeffs.len() > history.filled() {
        return Err(Error::state(format!(
            "row needs {} history rows but only {} are filled",
            row.coeffs.len(),
            history.filled()
        )));
    }
    let mut acc = vec![0.0; history.width()];
    for (k, &c) in row.coeffs.iter().enumerate() {
        let src = history.row(ring[k]);
        for (a, &v) in acc.iter_mut().zip(src) {
            *a += c * v;
        }
    }
    Ok(acc)
}

/// The shared step kernel over an element subset. `indices` are global
/// element ids; `history` has matching width and must be positioned at `t`.
fn step_kernel(
    plan: &NoisePlan,
    matrix: &MixingMatrix,
    history: &mut NoiseHistory,
    t: usize,
    indices: Option<&[u64]>,
) -> Result<Vec<f64>> {
    if t >= plan.iterations {
        return Err(Error::OutOfRange(format!(
            "step {t} out of range for {} iterations",
            plan.iterations
        )));
    }
    if t as u64 != history.steps() {
        return Err(Error::state(format!(
            "history holds steps up to {}, cannot produce step {t}",
            history.steps()
        )));
    }
    let row = matrix.mixing_row(t, true, true)?;
    let diag = matrix.diag(t);
    let mix = mix_history(history, &row)?;
    let mut out = match indices {
        Some(idx) => sample_raw_noise_at(plan, t, idx),
        None => sample_raw_noise(plan, t, 0, plan.elems)?,
    };
    for (o, m) in out.iter_mut().zip(mix) {
        *o = plan.dtype.quantize(*o / diag - m);
    }
    history.store_step(t as u64, &out)?;
    Ok(out)
}

/// Produce step `t` over the full element range and advance the history.
///
/// `history` must contain the outputs of the previous `min(t, band - 1)`
/// steps in ring layout (i.e. steps were produced in order through `t - 1`).
pub fn next_correlated_noise(
    plan: &NoisePlan,
    matrix: &MixingMatrix,
    history: &mut NoiseHistory,
    t: usize,
) -> Result<CorrelatedNoise> {
    plan.validate()?;
    plan.check_matrix(matrix)?;
    if history.width() != plan.elems {
        return Err(Error::state(format!(
            "history width {} does not match plan elements {}",
            history.width(),
            plan.elems
        )));
    }
    let values = step_kernel(plan, matrix, history, t, None)?;
    Ok(CorrelatedNoise { t, values })
}

/// Streaming generator over an arbitrary element subset.
pub struct SubsetEngine<'a> {
    plan: &'a NoisePlan,
    matrix: &'a MixingMatrix,
    indices: Option<Vec<u64>>,
    history: NoiseHistory,
}

impl<'a> SubsetEngine<'a> {
    /// Engine over explicit global element indices.
    pub fn over_indices(
        plan: &'a NoisePlan,
        matrix: &'a MixingMatrix,
        indices: Vec<u64>,
    ) -> Result<Self> {
        plan.validate()?;
        plan.check_matrix(matrix)?;
        if let Some(&bad) = indices.iter().find(|&&i| i >= plan.elems as u64) {
            return Err(Error::OutOfRange(format!(
                "element index {bad} out of bounds for {} elements",
                plan.elems
            )));
        }
        let history = NoiseHistory::new(plan.band, indices.len());
        Ok(Self {
            plan,
            matrix,
            indices: Some(indices),
            history,
        })
    }

    /// Engine over the full element range.
    pub fn full(plan: &'a NoisePlan, matrix: &'a MixingMatrix) -> Result<Self> {
        plan.validate()?;
        plan.check_matrix(matrix)?;
        let history = NoiseHistory::new(plan.band, plan.elems);
        Ok(Self {
            plan,
            matrix,
            indices: None,
            history,
        })
    }

    /// Index of the next step this engine will produce.
    pub fn next_step(&self) -> usize {
        self.history.steps() as usize
    }

    pub fn history(&self) -> &NoiseHistory {
        &self.history
    }

    /// Produce the next step's correlated noise over the subset.
    pub fn step(&mut self) -> Result<CorrelatedNoise> {
        let t = self.next_step();
        let values = step_kernel(
            self.plan,
            self.matrix,
            &mut self.history,
            t,
            self.indices.as_deref(),
        )?;
        Ok(CorrelatedNoise { t, values })
    }
}

/// Recompute step `t` from the seed alone, replaying steps `0..=t` with no
/// persistent state. Costs `Θ(t · elems)`; over a whole run this is the
/// quadratic-overhead alternative the simulator prices. Output is bit-equal
/// to the streaming engine in f64 mode because both run the same kernel in
/// the same order.
pub fn regen_oracle(plan: &NoisePlan, matrix: &MixingMatrix, t: usize) -> Result<CorrelatedNoise> {
    if t >= plan.iterations {
        return Err(Error::OutOfRange(format!(
            "step {t} out of range for {} iterations",
            plan.iterations
        )));
    }
    let mut engine = SubsetEngine::full(plan, matrix)?;
    let mut last = engine.step()?;
    while last.t < t {
        last = engine.step()?;
    }
    Ok(last)
}
