//! On-disk/in-memory container for coalesced noise events.
//!
//! The store is a CSC layout over application points: column `t` (for
//! `t < iterations`) holds the aggregated noise vectors applied just before
//! iteration `t`'s gradient step, and the terminal column `iterations` holds
//! the end-of-training events applied after the last step. Within a column,
//! events are keyed by strictly increasing entry id; each event value is a
//! `dim`-length vector.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::dtype::Dtype;
use crate::error::{Error, Result};

const STORE_MAGIC: &[u8; 4] = b"CNS1";
const STORE_VERSION: u32 = 1;
/// Fixed header size of the `CNS1` format.
pub const STORE_HEADER_BYTES: usize = 72;

#[derive(Debug, Clone, PartialEq)]
pub struct CoalescedNoiseStore {
    entries: u64,
    iterations: usize,
    dim: usize,
    dtype: Dtype,
    /// `iterations + 2` offsets over `iterations + 1` application columns.
    col_ptr: Vec<u64>,
    row_idx: Vec<u64>,
    /// Concatenated event vectors, `nnz * dim` elements.
    values: Vec<f64>,
    provenance: [u8; 32],
}

/// One event: the aggregated noise owed to `entry`, applied at the column's
/// application point.
#[derive(Debug, Clone, Copy)]
pub struct Event<'a> {
    pub entry: u64,
    pub value: &'a [f64],
}

impl CoalescedNoiseStore {
    /// Assemble from per-column event lists (`columns.len()` must be
    /// `iterations + 1`; the last column holds end-of-training events).
    pub fn from_columns(
        entries: u64,
        iterations: usize,
        dim: usize,
        dtype: Dtype,
        columns: Vec<Vec<(u64, Vec<f64>)>>,
        provenance: [u8; 32],
    ) -> Result<Self> {
        if columns.len() != iterations + 1 {
            return Err(Error::validation(format!(
                "expected {} columns, got {}",
                iterations + 1,
                columns.len()
            )));
        }
        let nnz: usize = columns.iter().map(|c| c.len()).sum();
        let mut col_ptr = Vec::with_capacity(iterations + 2);
        let mut row_idx = Vec::with_capacity(nnz);
        let mut values = Vec::with_capacity(nnz * dim);
        col_ptr.push(0u64);
        for (col, events) in columns.into_iter().enumerate() {
            let mut prev: Option<u64> = None;
            for (entry, value) in events {
                if entry >= entries {
                    return Err(Error::validation(format!(
                        "column {col}: entry {entry} out of range"
                    )));
                }
                if prev.is_some_and(|p| p >= entry) {
                    return Err(Error::validation(format!(
                        "column {col}: entry ids must be strictly increasing"
                    )));
                }
                if value.len() != dim {
                    return Err(Error::validation(format!(
                        "column {col} entry {entry}: value length {} != dim {dim}",
                        value.len()
                    )));
                }
                prev = Some(entry);
                row_idx.push(entry);
                values.extend_from_slice(&value);
            }
            col_ptr.push(row_idx.len() as u64);
        }
        Ok(Self {
            entries,
            iterations,
            dim,
            dtype,
            col_ptr,
            row_idx,
            values,
            provenance,
        })
    }

    pub fn entries(&self) -> u64 {
        self.entries
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn dtype(&self) -> Dtype {
        self.dtype
    }

    pub fn provenance(&self) -> &[u8; 32] {
        &self.provenance
    }

    /// Stored event count, end-of-training events included.
    pub fn nnz(&self) -> u64 {
        *self.col_ptr.last().unwrap()
    }

    /// Mean stored events per training iteration: `nnz / iterations`.
    pub fn avg_noise_entries(&self) -> f64 {
        self.nnz() as f64 / self.iterations as f64
    }

    /// Bytes of event values: `nnz * dim * dtype width`.
    pub fn payload_bytes(&self) -> u64 {
        self.nnz() * self.dim as u64 * self.dtype.width() as u64
    }

    /// Bytes of structural metadata (column pointers + entry ids).
    pub fn index_bytes(&self) -> u64 {
        (self.col_ptr.len() as u64 + self.nnz()) * 8
    }

    /// Full serialized size.
    pub fn file_bytes(&self) -> u64 {
        STORE_HEADER_BYTES as u64 + self.index_bytes() + self.payload_bytes()
    }

    /// Events applied before iteration `t` (`t < iterations`) or, at
    /// `t == iterations`, after training ends.
    pub fn column(&self, t: usize) -> Result<impl Iterator<Item = Event<'_>>> {
        if t > self.iterations {
            return Err(Error::OutOfRange(format!(
                "column {t} out of range (max {})",
                self.iterations
            )));
        }
        let lo = self.col_ptr[t] as usize;
        let hi = self.col_ptr[t + 1] as usize;
        let dim = self.dim;
        Ok((lo..hi).map(move |k| Event {
            entry: self.row_idx[k],
            value: &self.values[k * dim..(k + 1) * dim],
        }))
    }

    /// Distinct entry ids appearing in the store. Every cold entry carries
    /// at least an end-of-training event, so this is exactly the cold set.
    pub fn stored_entries(&self) -> Vec<u64> {
        let mut ids = self.row_idx.clone();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    /// Structural CSC invariants: monotone column pointers, strictly
    /// increasing entries per column, matching array lengths.
    pub fn validate_structure(&self) -> Result<()> {
        if self.col_ptr.len() != self.iterations + 2 {
            return Err(Error::validation("column pointer length mismatch"));
        }
        if self.col_ptr[0] != 0 {
            return Err(Error::validation("column pointers must start at 0"));
        }
        for w in self.col_ptr.windows(2) {
            if w[1] < w[0] {
                return Err(Error::validation("column pointers must be nondecreasing"));
            }
        }
        let nnz = self.nnz() as usize;
        if self.row_idx.len() != nnz || self.values.len() != nnz * self.dim {
            return Err(Error::validation("event array length mismatch"));
        }
        for t in 0..=self.iterations {
            let lo = self.col_ptr[t] as usize;
            let hi = self.col_ptr[t + 1] as usize;
            for k in lo..hi {
                if self.row_idx[k] >= self.entries {
                    return Err(Error::validation(format!(
                        "column {t}: entry {} out of range",
                        self.row_idx[k]
                    )));
                }
                if k > lo && self.row_idx[k] <= self.row_idx[k - 1] {
                    return Err(Error::validation(format!(
                        "column {t}: entries not strictly increasing"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Serialize as `CNS1`, little-endian throughout.
    ///
    /// Header (72 bytes): magic `CNS1`, version u32, dtype code u8, 3 pad
    /// bytes, entries u64, iterations u64, dim u32, nnz u64, provenance
    /// digest (32 bytes). Then `iterations + 2` column pointers (u64), `nnz`
    /// entry ids (u64), and `nnz * dim` values in `dtype`.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let mut header = Vec::with_capacity(STORE_HEADER_BYTES);
        header.extend_from_slice(STORE_MAGIC);
        header.extend_from_slice(&STORE_VERSION.to_le_bytes());
        header.push(self.dtype.code());
        header.extend_from_slice(&[0u8; 3]);
        header.extend_from_slice(&self.entries.to_le_bytes());
        header.extend_from_slice(&(self.iterations as u64).to_le_bytes());
        header.extend_from_slice(&(self.dim as u32).to_le_bytes());
        header.extend_from_slice(&self.nnz().to_le_bytes());
        header.extend_from_slice(&self.provenance);
        debug_assert_eq!(header.len(), STORE_HEADER_BYTES);
        w.write_all(&header)?;
        let mut buf = Vec::with_capacity(self.col_ptr.len() * 8);
        for &p in &self.col_ptr {
            buf.extend_from_slice(&p.to_le_bytes());
        }
        for &r in &self.row_idx {
            buf.extend_from_slice(&r.to_le_bytes());
        }
        w.write_all(&buf)?;
        let mut payload = Vec::with_capacity(self.values.len() * self.dtype.width());
        for &v in &self.values {
            self.dtype.write_elem(v, &mut payload);
        }
        w.write_all(&payload)?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut header = [0u8; STORE_HEADER_BYTES];
        r.read_exact(&mut header)?;
        if &header[0..4] != STORE_MAGIC {
            return Err(Error::validation("bad store magic"));
        }
        let version = u32::from_le_bytes(header[4..8].try_into().unwrap());
        if version != STORE_VERSION {
            return Err(Error::validation(format!("unsupported store version {version}")));
        }
        let dtype = Dtype::from_code(header[8])?;
        let entries = u64::from_le_bytes(header[12..20].try_into().unwrap());
        let iterations = u64::from_le_bytes(header[20..28].try_into().unwrap()) as usize;
        let dim = u32::from_le_bytes(header[28..32].try_into().unwrap()) as usize;
        let nnz = u64::from_le_bytes(header[32..40].try_into().unwrap()) as usize;
        let mut provenance = [0u8; 32];
        provenance.copy_from_slice(&header[40..72]);

        let mut idx_buf = vec![0u8; (iterations + 2 + nnz) * 8];
        r.read_exact(&mut idx_buf)?;
        let col_ptr: Vec<u64> = (0..iterations + 2)
            .map(|i| u64::from_le_bytes(idx_buf[i * 8..i * 8 + 8].try_into().unwrap()))
            .collect();
        let base = (iterations + 2) * 8;
        let row_idx: Vec<u64> = (0..nnz)
            .map(|i| u64::from_le_bytes(idx_buf[base + i * 8..base + i * 8 + 8].try_into().unwrap()))
            .collect();
        let mut payload = vec![0u8; nnz * dim * dtype.width()];
        r.read_exact(&mut payload)?;
        let values: Vec<f64> = (0..nnz * dim)
            .map(|i| dtype.read_elem(&payload, i * dtype.width()))
            .collect();
        let store = Self {
            entries,
            iterations,
            dim,
            dtype,
            col_ptr,
            row_idx,
            values,
            provenance,
        };
        store.validate_structure()?;
        Ok(store)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }

    #[cfg(test)]
    pub(crate) fn corrupt_value_for_tests(&mut self, k: usize, delta: f64) {
        self.values[k] += delta;
    }
}

/// Stateful cursor enforcing the once-per-iteration application discipline.
pub struct LazyApplier<'a> {
    store: &'a CoalescedNoiseStore,
    next: usize,
}

impl<'a> LazyApplier<'a> {
    pub fn new(store: &'a CoalescedNoiseStore) -> Self {
        Self { store, next: 0 }
    }

    /// Add column `t`'s event vectors (times `scale`) to the table rows,
    /// before iteration `t`'s gradient step. Iterations must be visited in
    /// order, exactly once. At `t == iterations` this applies the
    /// end-of-training events.
    pub fn lazy_apply(&mut self, table: &mut [f64], t: usize, scale: f64) -> Result<()> {
        if t != self.next {
            return Err(Error::state(format!(
                "lazy apply expects iteration {}, got {t}",
                self.next
            )));
        }
        let dim = self.store.dim();
        if table.len() != self.store.entries() as usize * dim {
            return Err(Error::state(format!(
                "table has {} elements, store expects {}",
                table.len(),
                self.store.entries() as usize * dim
            )));
        }
        for ev in self.store.column(t)? {
            let base = ev.entry as usize * dim;
            for (slot, &v) in table[base..base + dim].iter_mut().zip(ev.value) {
                *slot += scale * v;
            }
        }
        self.next += 1;
        Ok(())
    }

    /// Apply the terminal column after the final iteration.
    pub fn apply_end(&mut self, table: &mut [f64], scale: f64) -> Result<()> {
        self.lazy_apply(table, self.store.iterations(), scale)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_store() -> CoalescedNoiseStore {
        // 3 entries, 2 iterations, dim 2; events in columns 1 and 2 (end).
        CoalescedNoiseStore::from_columns(
            3,
            2,
            2,
            Dtype::F64,
            vec![
                vec![],
                vec![(0, vec![1.0, 2.0]), (2, vec![-1.0, 0.5])],
                vec![(1, vec![3.0, 3.0])],
            ],
            [7u8; 32],
        )
        .unwrap()
    }

    #[test]
    fn structural_invariants_hold() {
        let s = toy_store();
        s.validate_structure().unwrap();
        assert_eq!(s.nnz(), 3);
        assert_eq!(s.avg_noise_entries(), 1.5);
        assert_eq!(s.payload_bytes(), 3 * 2 * 8);
        assert_eq!(s.stored_entries(), vec![0, 1, 2]);
    }

    #[test]
    fn from_columns_rejects_unsorted_entries() {
        let err = CoalescedNoiseStore::from_columns(
            3,
            1,
            1,
            Dtype::F64,
            vec![vec![(2, vec![0.0]), (1, vec![0.0])], vec![]],
            [0u8; 32],
        )
        .unwrap_err();
        assert!(err.to_string().contains("strictly increasing"), "{err}");
    }

    #[test]
    fn roundtrip_is_byte_exact() {
        let s = toy_store();
        let mut buf = Vec::new();
        s.write_to(&mut buf).unwrap();
        assert_eq!(buf.len() as u64, s.file_bytes());
        let back = CoalescedNoiseStore::read_from(&buf[..]).unwrap();
        assert_eq!(back, s);
        let mut buf2 = Vec::new();
        back.write_to(&mut buf2).unwrap();
        assert_eq!(buf, buf2);
    }

    #[test]
    fn f32_roundtrip_preserves_quantized_values() {
        let v = Dtype::F32.quantize(0.1234567);
        let s = CoalescedNoiseStore::from_columns(
            1,
            1,
            1,
            Dtype::F32,
            vec![vec![], vec![(0, vec![v])]],
            [0u8; 32],
        )
        .unwrap();
        let mut buf = Vec::new();
        s.write_to(&mut buf).unwrap();
        let back = CoalescedNoiseStore::read_from(&buf[..]).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn applier_enforces_order_and_adds_scaled_events() {
        let s = toy_store();
        let mut table = vec![0.0; 6];
        let mut applier = LazyApplier::new(&s);
        applier.lazy_apply(&mut table, 0, 2.0).unwrap();
        assert_eq!(table, vec![0.0; 6], "no events in column 0");
        assert!(applier.lazy_apply(&mut table, 0, 2.0).is_err());
        applier.lazy_apply(&mut table, 1, 2.0).unwrap();
        assert_eq!(table, vec![2.0, 4.0, 0.0, 0.0, -2.0, 1.0]);
        applier.apply_end(&mut table, 2.0).unwrap();
        assert_eq!(table, vec![2.0, 4.0, 6.0, 6.0, -2.0, 1.0]);
        assert!(applier.lazy_apply(&mut table, 3, 2.0).is_err());
    }
}
