//! Embedding-access traces: synthetic Zipfian generation, external ingest,
//! and deterministic replay.
//!
//! A trace stores, per iteration, the sorted and deduplicated set of
//! embedding-entry ids touched by that iteration's batch. Generation is a
//! pure function of the config, so pre-computation and training replay the
//! same accesses from the same seed.

use std::fs::File;
use std::io::{BufReader, Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rng::SplitMix64;

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceConfig {
    /// Embedding entries (table rows).
    pub entries: u64,
    pub iterations: usize,
    /// Samples per iteration.
    pub batch_size: u64,
    /// Entries accessed per sample.
    pub pooling: u64,
    /// Zipf skew; 0 is uniform.
    pub zipf_alpha: f64,
    pub seed: u64,
}

impl TraceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.entries == 0 {
            return Err(Error::invalid("trace needs at least one entry"));
        }
        if self.iterations == 0 {
            return Err(Error::invalid("trace needs at least one iteration"));
        }
        if self.batch_size * self.pooling == 0 {
            return Err(Error::invalid("batch_size * pooling must be positive"));
        }
        if self.zipf_alpha.is_nan() || self.zipf_alpha < 0.0 {
            return Err(Error::invalid("zipf_alpha must be >= 0"));
        }
        Ok(())
    }

    fn total_draws(&self) -> u64 {
        self.batch_size * self.pooling * self.iterations as u64
    }
}

/// Per-iteration access sets, plus provenance and (for generated traces) the
/// raw draw multiplicities behind the deduplicated sets.
#[derive(Debug, Clone, PartialEq)]
pub struct AccessTrace {
    entries: u64,
    iters: Vec<Vec<u64>>,
    raw_counts: Option<Vec<u64>>,
    provenance: String,
}

/// Access-frequency summary over a whole trace.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyStats {
    /// Iteration-level presence counts per entry.
    pub presence: Vec<u64>,
    /// Raw draw multiplicities, when the source recorded them.
    pub raw: Option<Vec<u64>>,
    /// Mean number of distinct entries per iteration.
    pub unique_per_iteration: f64,
}

impl AccessTrace {
    /// Build directly from per-iteration sets (deduplicated and sorted here).
    pub fn from_sets(entries: u64, sets: Vec<Vec<u64>>) -> Result<Self> {
        let mut iters = Vec::with_capacity(sets.len());
        for (t, mut ids) in sets.into_iter().enumerate() {
            ids.sort_unstable();
            ids.dedup();
            if let Some(&bad) = ids.iter().find(|&&id| id >= entries) {
                return Err(Error::validation(format!(
                    "iteration {t}: entry id {bad} out of range for {entries} entries"
                )));
            }
            iters.push(ids);
        }
        let mut trace = Self {
            entries,
            iters,
            raw_counts: None,
            provenance: String::new(),
        };
        trace.provenance = format!("sets:{}", hex(&trace.content_digest()));
        Ok(trace)
    }

    pub fn entries(&self) -> u64 {
        self.entries
    }

    pub fn iterations(&self) -> usize {
        self.iters.len()
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    pub fn raw_counts(&self) -> Option<&[u64]> {
        self.raw_counts.as_deref()
    }

    /// The sorted entry ids accessed at iteration `t`. Identical on every
    /// call; this is the single source of truth shared by pre-computation
    /// and training.
    pub fn replay_iteration(&self, t: usize) -> Result<&[u64]> {
        self.iters
            .get(t)
            .map(|v| v.as_slice())
            .ok_or_else(|| {
                Error::OutOfRange(format!(
                    "iteration {t} out of range for {} iterations",
                    self.iters.len()
                ))
            })
    }

    /// Iteration-level presence counts per entry.
    pub fn frequency_histogram(&self) -> FrequencyStats {
        let mut presence = vec![0u64; self.entries as usize];
        let mut total = 0u64;
        for ids in &self.iters {
            total += ids.len() as u64;
            for &id in ids {
                presence[id as usize] += 1;
            }
        }
        FrequencyStats {
            presence,
            raw: self.raw_counts.clone(),
            unique_per_iteration: if self.iters.is_empty() {
                0.0
            } else {
                total as f64 / self.iters.len() as f64
            },
        }
    }

    /// SHA-256 of the canonical text form; stable across export/ingest.
    pub fn content_digest(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(b"trace-v1");
        h.update(self.entries.to_le_bytes());
        h.update((self.iters.len() as u64).to_le_bytes());
        for ids in &self.iters {
            h.update((ids.len() as u64).to_le_bytes());
            for &id in ids {
                h.update(id.to_le_bytes());
            }
        }
        h.finalize().into()
    }

    /// Canonical text form: a header line, then one `t:id,id` line per
    /// iteration. Export and ingest mirror each other byte-exactly.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "# trace v1 entries={} iterations={}\n",
            self.entries,
            self.iters.len()
        ));
        for (t, ids) in self.iters.iter().enumerate() {
            out.push_str(&t.to_string());
            out.push(':');
            for (k, id) in ids.iter().enumerate() {
                if k > 0 {
                    out.push(',');
                }
                out.push_str(&id.to_string());
            }
            out.push('\n');
        }
        out
    }

    /// Serialized text form, gzip-compressed on request.
    pub fn export_bytes(&self, gzip: bool) -> Result<Vec<u8>> {
        let text = self.to_text();
        if gzip {
            let mut enc = GzEncoder::new(Vec::new(), flate2::Compression::default());
            enc.write_all(text.as_bytes())?;
            Ok(enc.finish()?)
        } else {
            Ok(text.into_bytes())
        }
    }

    /// Write the text form; paths ending in `.gz` are gzip-compressed.
    pub fn export(&self, path: &Path) -> Result<()> {
        let gzip = path.extension().is_some_and(|e| e == "gz");
        std::fs::write(path, self.export_bytes(gzip)?)?;
        Ok(())
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Generate a synthetic trace.
///
/// Every entry is guaranteed to appear at least once: each entry is assigned
/// one of the `batch_size * pooling * iterations` draw slots chosen without
/// replacement, and the remaining slots are filled with Zipf-distributed
/// draws over a seeded rank-to-entry permutation (so hot entries are not
/// always the lowest ids).
pub fn generate_zipf_trace(cfg: &TraceConfig) -> Result<AccessTrace> {
    cfg.validate()?;
    let total = cfg.total_draws();
    if cfg.entries > total {
        return Err(Error::Infeasible(format!(
            "cannot cover {} entries with {} draws ({} per iteration x {})",
            cfg.entries,
            total,
            cfg.batch_size * cfg.pooling,
            cfg.iterations
        )));
    }
    let per_iter = (cfg.batch_size * cfg.pooling) as usize;

    // Floyd's algorithm: entries.len() distinct slots out of `total`.
    let mut slot_rng = SplitMix64::derive(cfg.seed, 1);
    let mut coverage = std::collections::HashMap::with_capacity(cfg.entries as usize);
    for j in (total - cfg.entries)..total {
        let r = slot_rng.below(j + 1);
        if coverage.contains_key(&r) {
            coverage.insert(j, ());
        } else {
            coverage.insert(r, ());
        }
    }
    let mut coverage_slots: Vec<u64> = coverage.into_keys().collect();
    coverage_slots.sort_unstable();
    // Assign entries to coverage slots in a seeded shuffled order.
    let mut order_rng = SplitMix64::derive(cfg.seed, 2);
    let entry_order = order_rng.permutation(cfg.entries as usize);

    let rank_to_entry = zipf_rank_permutation(cfg);
    let cdf = zipf_cdf(cfg.entries as usize, cfg.zipf_alpha);
    let mut draw_rng = SplitMix64::derive(cfg.seed, 4);

    let mut raw_counts = vec![0u64; cfg.entries as usize];
    let mut iters: Vec<Vec<u64>> = Vec::with_capacity(cfg.iterations);
    let mut next_cov = 0usize;
    for t in 0..cfg.iterations {
        let base = t as u64 * per_iter as u64;
        let mut ids = Vec::with_capacity(per_iter);
        for s in 0..per_iter as u64 {
            let slot = base + s;
            let entry = if next_cov < coverage_slots.len() && coverage_slots[next_cov] == slot {
                let e = entry_order[next_cov] as u64;
                next_cov += 1;
                e
            } else {
                let u = draw_rng.unit();
                let rank = cdf.partition_point(|&c| c < u);
                rank_to_entry[rank.min(cfg.entries as usize - 1)]
            };
            raw_counts[entry as usize] += 1;
            ids.push(entry);
        }
        ids.sort_unstable();
        ids.dedup();
        iters.push(ids);
    }

    let mut trace = AccessTrace {
        entries: cfg.entries,
        iters,
        raw_counts: Some(raw_counts),
        provenance: String::new(),
    };
    trace.provenance = format!("config:{}", hex(&config_digest(cfg)));
    Ok(trace)
}

/// The seeded rank-to-entry mapping used by [`generate_zipf_trace`]; rank 0
/// is the hottest entry.
pub fn zipf_rank_permutation(cfg: &TraceConfig) -> Vec<u64> {
    let mut rng = SplitMix64::derive(cfg.seed, 3);
    rng.permutation(cfg.entries as usize)
        .into_iter()
        .map(|x| x as u64)
        .collect()
}

/// Cumulative masses of Zipf(alpha) over ranks 1..=n, normalized to end at 1.
fn zipf_cdf(n: usize, alpha: f64) -> Vec<f64> {
    let mut cdf = Vec::with_capacity(n);
    let mut acc = 0.0;
    for k in 1..=n {
        acc += (k as f64).powf(-alpha);
        cdf.push(acc);
    }
    let total = acc;
    for c in &mut cdf {
        *c /= total;
    }
    cdf
}

fn config_digest(cfg: &TraceConfig) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(b"trace-config-v1");
    h.update(cfg.entries.to_le_bytes());
    h.update((cfg.iterations as u64).to_le_bytes());
    h.update(cfg.batch_size.to_le_bytes());
    h.update(cfg.pooling.to_le_bytes());
    h.update(cfg.zipf_alpha.to_le_bytes());
    h.update(cfg.seed.to_le_bytes());
    h.finalize().into()
}

/// Parse a trace from its text form.
///
/// The header line is optional; without it the entry count is
/// `expected_entries` (or max id + 1 when that is not given). Ids are
/// deduplicated and sorted per iteration; iteration labels must be
/// consecutive from 0.
pub fn parse_trace(text: &str, expected_entries: Option<u64>) -> Result<AccessTrace> {
    let mut sets: Vec<Vec<u64>> = Vec::new();
    let mut declared: Option<u64> = None;
    let mut max_id: Option<u64> = None;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim_end();
        if line.is_empty() {
            continue;
        }
        if line.starts_with('#') {
            for tok in line.split_whitespace() {
                if let Some(v) = tok.strip_prefix("entries=") {
                    declared = Some(v.parse().map_err(|_| Error::Parse {
                        line: lineno + 1,
                        msg: format!("bad entries value {v:?}"),
                    })?);
                }
            }
            continue;
        }
        let (label, rest) = line.split_once(':').ok_or_else(|| Error::Parse {
            line: lineno + 1,
            msg: "expected `iteration:id,id,...`".to_string(),
        })?;
        let t: usize = label.trim().parse().map_err(|_| Error::Parse {
            line: lineno + 1,
            msg: format!("bad iteration label {label:?}"),
        })?;
        if t != sets.len() {
            return Err(Error::Parse {
                line: lineno + 1,
                msg: format!("iteration {t} out of order (expected {})", sets.len()),
            });
        }
        let mut ids = Vec::new();
        for tok in rest.split(',') {
            let tok = tok.trim();
            if tok.is_empty() {
                continue;
            }
            let id: u64 = tok.parse().map_err(|_| Error::Parse {
                line: lineno + 1,
                msg: format!("bad entry id {tok:?}"),
            })?;
            max_id = Some(max_id.map_or(id, |m: u64| m.max(id)));
            ids.push(id);
        }
        sets.push(ids);
    }
    let entries = declared
        .or(expected_entries)
        .or(max_id.map(|m| m + 1))
        .ok_or_else(|| Error::validation("empty trace with unknown entry count"))?;
    if let Some(expected) = expected_entries {
        if let Some(declared) = declared {
            if declared != expected {
                return Err(Error::validation(format!(
                    "trace declares {declared} entries, expected {expected}"
                )));
            }
        }
    }
    let mut trace = AccessTrace::from_sets(entries, sets)?;
    trace.provenance = format!("text:{}", hex(&trace.content_digest()));
    Ok(trace)
}

/// Read a trace file (gzip-transparent for `.gz` paths).
pub fn ingest_trace_file(path: &Path, expected_entries: Option<u64>) -> Result<AccessTrace> {
    let mut text = String::new();
    if path.extension().is_some_and(|e| e == "gz") {
        GzDecoder::new(File::open(path)?).read_to_string(&mut text)?;
    } else {
        BufReader::new(File::open(path)?).read_to_string(&mut text)?;
    }
    parse_trace(&text, expected_entries)
}
