//! Desk-scale reference training loop over a toy embedding table.
//!
//! Exists to certify one thing: driving the noise through the coalesced
//! store (lazy) produces the same final table as adding the full correlated
//! noise every iteration (eager). The toy gradient is `tanh` of the current
//! entry values — nonlinear, so the equivalence is a real statement, but a
//! function of accessed entries only, which is what makes laziness sound.
//! Plain SGD only: optimizer state over unaccessed entries' noised gradients
//! would break the deferral.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::dtype::Dtype;
use crate::emb::{store_provenance, HotColdSplit};
use crate::error::{Error, Result};
use crate::mixing::MixingMatrix;
use crate::noise::{NoisePlan, SubsetEngine};
use crate::store::{CoalescedNoiseStore, LazyApplier};
use crate::trace::AccessTrace;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientKind {
    /// `tanh` of each accessed entry's current values; zero elsewhere.
    Tanh,
    /// Identically zero; isolates the noise path.
    Zero,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyModel {
    pub entries: u64,
    pub dim: usize,
    pub table: Vec<f64>,
    pub learning_rate: f64,
    /// Scale applied to the correlated noise in each update (absorbs batch
    /// averaging). Pure scalar; does not affect eager/lazy agreement.
    pub noise_coefficient: f64,
    pub gradient: GradientKind,
}

impl ToyModel {
    pub fn seeded(
        entries: u64,
        dim: usize,
        learning_rate: f64,
        noise_coefficient: f64,
        seed: u64,
    ) -> Self {
        let mut rng = crate::rng::SplitMix64::derive(seed, 0x7ab1e);
        let table = (0..entries as usize * dim)
            .map(|_| rng.unit() - 0.5)
            .collect();
        Self {
            entries,
            dim,
            table,
            learning_rate,
            noise_coefficient,
            gradient: GradientKind::Tanh,
        }
    }

    fn validate(&self, plan: &NoisePlan, trace: &AccessTrace) -> Result<()> {
        if self.table.len() != self.entries as usize * self.dim {
            return Err(Error::invalid("table shape mismatch"));
        }
        if plan.elems != self.table.len() {
            return Err(Error::invalid(format!(
                "plan has {} elements, table has {}",
                plan.elems,
                self.table.len()
            )));
        }
        if trace.entries() != self.entries {
            return Err(Error::invalid("trace entry count mismatch"));
        }
        if plan.iterations != trace.iterations() {
            return Err(Error::invalid("plan/trace iteration mismatch"));
        }
        Ok(())
    }

    fn gradient_at(&self, v: f64) -> f64 {
        match self.gradient {
            GradientKind::Tanh => v.tanh(),
            GradientKind::Zero => 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    Eager,
    Lazy,
}

/// Outcome of one training run.
#[derive(Debug, Clone)]
pub struct TrainRun {
    pub mode: TrainMode,
    pub entries: u64,
    pub dim: usize,
    pub final_table: Vec<f64>,
    /// Per iteration, the accessed entries' row values at gradient time
    /// (rows concatenated in trace order). Both modes must agree here too.
    pub access_values: Vec<Vec<f64>>,
    /// Informational wall time per iteration.
    pub iteration_seconds: Vec<f64>,
}

/// Per iteration: full correlated noise added to every entry's update.
pub fn train_eager(
    model: &ToyModel,
    plan: &NoisePlan,
    matrix: &MixingMatrix,
    trace: &AccessTrace,
) -> Result<TrainRun> {
    model.validate(plan, trace)?;
    let mut table = model.table.clone();
    let mut engine = SubsetEngine::full(plan, matrix)?;
    let dim = model.dim;
    let lr = model.learning_rate;
    let c = model.noise_coefficient;
    let mut access_values = Vec::with_capacity(trace.iterations());
    let mut iteration_seconds = Vec::with_capacity(trace.iterations());
    for t in 0..trace.iterations() {
        let started = std::time::Instant::now();
        let accessed = trace.replay_iteration(t)?;
        let mut snapshot = Vec::with_capacity(accessed.len() * dim);
        for &e in accessed {
            snapshot.extend_from_slice(&table[e as usize * dim..(e as usize + 1) * dim]);
        }
        access_values.push(snapshot);
        let noise = engine.step()?.values;
        let mut grad = vec![0.0; table.len()];
        for &e in accessed {
            for j in 0..dim {
                let k = e as usize * dim + j;
                grad[k] = model.gradient_at(table[k]);
            }
        }
        for k in 0..table.len() {
            table[k] -= lr * (grad[k] + c * noise[k]);
        }
        iteration_seconds.push(started.elapsed().as_secs_f64());
    }
    Ok(TrainRun {
        mode: TrainMode::Eager,
        entries: model.entries,
        dim,
        final_table: table,
        access_values,
        iteration_seconds,
    })
}

/// Per iteration: cold events from the store land just before the gradient;
/// hot entries get their noise eagerly from an engine restricted to the hot
/// coordinates; end-of-training events settle the remainder.
pub fn train_lazy(
    model: &ToyModel,
    plan: &NoisePlan,
    matrix: &MixingMatrix,
    trace: &AccessTrace,
    split: &HotColdSplit,
    store: &CoalescedNoiseStore,
) -> Result<TrainRun> {
    model.validate(plan, trace)?;
    if store.provenance() != &store_provenance(plan, matrix, trace, split) {
        return Err(Error::ProvenanceMismatch(
            "store was built from different inputs (plan, matrix, trace, or split)".to_string(),
        ));
    }
    if store.entries() != model.entries || store.dim() != model.dim {
        return Err(Error::validation("store shape mismatch"));
    }
    let dim = model.dim;
    let lr = model.learning_rate;
    let c = model.noise_coefficient;
    let mut table = model.table.clone();
    let mut applier = LazyApplier::new(store);

    let hot_entries = split.hot_entries();
    let hot_coords: Vec<u64> = hot_entries
        .iter()
        .flat_map(|&e| (0..dim as u64).map(move |j| e * dim as u64 + j))
        .collect();
    let mut hot_engine = if hot_coords.is_empty() {
        None
    } else {
        Some(SubsetEngine::over_indices(plan, matrix, hot_coords.clone())?)
    };

    let mut access_values = Vec::with_capacity(trace.iterations());
    let mut iteration_seconds = Vec::with_capacity(trace.iterations());
    for t in 0..trace.iterations() {
        let started = std::time::Instant::now();
        // Cold entries accessed at t are topped up through step t-1 here,
        // matching the eager table at gradient time.
        applier.lazy_apply(&mut table, t, -lr * c)?;
        let accessed = trace.replay_iteration(t)?;
        let mut snapshot = Vec::with_capacity(accessed.len() * dim);
        for &e in accessed {
            snapshot.extend_from_slice(&table[e as usize * dim..(e as usize + 1) * dim]);
        }
        access_values.push(snapshot);
        let mut grads = Vec::with_capacity(accessed.len() * dim);
        for &e in accessed {
            for j in 0..dim {
                grads.push(model.gradient_at(table[e as usize * dim + j]));
            }
        }
        for (i, &e) in accessed.iter().enumerate() {
            for j in 0..dim {
                table[e as usize * dim + j] -= lr * grads[i * dim + j];
            }
        }
        if let Some(engine) = hot_engine.as_mut() {
            let noise = engine.step()?.values;
            for (k, &coord) in hot_coords.iter().enumerate() {
                table[coord as usize] -= lr * c * noise[k];
            }
        }
        iteration_seconds.push(started.elapsed().as_secs_f64());
    }
    applier.apply_end(&mut table, -lr * c)?;
    Ok(TrainRun {
        mode: TrainMode::Lazy,
        entries: model.entries,
        dim,
        final_table: table,
        access_values,
        iteration_seconds,
    })
}

/// Element-wise difference report between two runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DiffReport {
    pub max_abs: f64,
    pub max_rel: f64,
}

pub fn compare_runs(a: &TrainRun, b: &TrainRun) -> Result<DiffReport> {
    if a.final_table.len() != b.final_table.len() || a.dim != b.dim {
        return Err(Error::invalid("run shapes differ"));
    }
    let mut report = DiffReport {
        max_abs: 0.0,
        max_rel: 0.0,
    };
    let mut fold = |x: f64, y: f64| {
        let abs = (x - y).abs();
        report.max_abs = report.max_abs.max(abs);
        let denom = x.abs().max(y.abs());
        if denom > 0.0 {
            report.max_rel = report.max_rel.max(abs / denom);
        }
    };
    for (&x, &y) in a.final_table.iter().zip(&b.final_table) {
        fold(x, y);
    }
    for (av, bv) in a.access_values.iter().zip(&b.access_values) {
        if av.len() != bv.len() {
            return Err(Error::invalid("access snapshots differ in shape"));
        }
        for (&x, &y) in av.iter().zip(bv) {
            fold(x, y);
        }
    }
    Ok(report)
}

const TABLE_MAGIC: &[u8; 4] = b"CNT1";

/// Write a table as raw little-endian values behind a 16-byte header
/// (magic `CNT1`, dtype code u8, 3 pad bytes, rows u32, cols u32).
pub fn write_table<W: Write>(
    table: &[f64],
    entries: u64,
    dim: usize,
    dtype: Dtype,
    mut w: W,
) -> Result<()> {
    if entries > u32::MAX as u64 || dim > u32::MAX as usize {
        return Err(Error::invalid("table too large for the export header"));
    }
    let mut header = Vec::with_capacity(16);
    header.extend_from_slice(TABLE_MAGIC);
    header.push(dtype.code());
    header.extend_from_slice(&[0u8; 3]);
    header.extend_from_slice(&(entries as u32).to_le_bytes());
    header.extend_from_slice(&(dim as u32).to_le_bytes());
    debug_assert_eq!(header.len(), 16);
    w.write_all(&header)?;
    let mut payload = Vec::with_capacity(table.len() * dtype.width());
    for &v in table {
        dtype.write_elem(v, &mut payload);
    }
    w.write_all(&payload)?;
    Ok(())
}

pub fn read_table<R: Read>(mut r: R) -> Result<(Vec<f64>, u64, usize, Dtype)> {
    let mut header = [0u8; 16];
    r.read_exact(&mut header)?;
    if &header[0..4] != TABLE_MAGIC {
        return Err(Error::validation("bad table magic"));
    }
    let dtype = Dtype::from_code(header[4])?;
    let rows = u32::from_le_bytes(header[8..12].try_into().unwrap()) as u64;
    let cols = u32::from_le_bytes(header[12..16].try_into().unwrap()) as usize;
    let mut payload = vec![0u8; rows as usize * cols * dtype.width()];
    r.read_exact(&mut payload)?;
    let table = (0..rows as usize * cols)
        .map(|i| dtype.read_elem(&payload, i * dtype.width()))
        .collect();
    Ok((table, rows, cols, dtype))
}
