//! Banded lower-triangular mixing matrices.
//!
//! Row `t` holds the weights that combine the previous `band - 1` correlated
//! noises with the fresh Gaussian at step `t`. Entries outside the band are
//! exactly zero. Coefficient `k` (0-based) of a row weights the noise of step
//! `t - 1 - k`; early rows (`t < band - 1`) are simply shorter.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Diagonals smaller than this are rejected: every step divides by the
/// diagonal, so near-zero values poison the whole recursion.
pub const MIN_DIAGONAL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
struct Row {
    coeffs: Vec<f64>,
    diag: f64,
}

/// Banded lower-triangular matrix driving the noise recursion.
///
/// Immutable after construction; shareable across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct MixingMatrix {
    n: usize,
    band: usize,
    rows: Vec<Row>,
}

/// One row of the matrix, optionally pre-normalized by its diagonal and
/// annotated with the ring-buffer lookup order.
#[derive(Debug, Clone, PartialEq)]
pub struct MixingRow {
    pub t: usize,
    /// Natural order: `coeffs[k]` weights the noise of step `t - 1 - k`.
    pub coeffs: Vec<f64>,
    pub diag: f64,
    pub prenormalized: bool,
    /// When present, `ring_order[k]` is the ring-buffer row holding the
    /// noise of step `t - 1 - k`, i.e. `(t - 1 - k) mod (band - 1)`.
    pub ring_order: Option<Vec<usize>>,
}

impl MixingMatrix {
    /// Identity matrix: band 1, no history, the recursion degenerates to
    /// emitting the raw Gaussians unchanged.
    pub fn identity(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("matrix order must be positive"));
        }
        Ok(Self {
            n,
            band: 1,
            rows: vec![
                Row {
                    coeffs: Vec::new(),
                    diag: 1.0,
                };
                n
            ],
        })
    }

    /// Toeplitz banding: `coeffs[0]` is the diagonal and `coeffs[tau]` fills
    /// `C[t, t - tau]` for every row, truncated at the matrix edge.
    pub fn banded_toeplitz(coeffs: &[f64], n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("matrix order must be positive"));
        }
        if coeffs.is_empty() {
            return Err(Error::invalid("need at least the diagonal coefficient"));
        }
        let band = coeffs.len();
        if band > n {
            return Err(Error::invalid(format!(
                "band {band} exceeds matrix order {n}"
            )));
        }
        if coeffs[0].abs() <= MIN_DIAGONAL {
            return Err(Error::invalid(
                "zero diagonal: the recursion divides by the leading coefficient",
            ));
        }
        let rows = (0..n)
            .map(|t| {
                let len = t.min(band - 1);
                Row {
                    coeffs: coeffs[1..1 + len].to_vec(),
                    diag: coeffs[0],
                }
            })
            .collect();
        Ok(Self { n, band, rows })
    }

    /// Build from explicit per-row coefficients; `rows[t]` is
    /// `(off-diagonals in natural order, diagonal)`.
    pub fn from_rows(n: usize, band: usize, rows: Vec<(Vec<f64>, f64)>) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("matrix order must be positive"));
        }
        if band == 0 || band > n {
            return Err(Error::invalid(format!("band must be in 1..={n}, got {band}")));
        }
        if rows.len() != n {
            return Err(Error::validation(format!(
                "expected {n} rows, got {}",
                rows.len()
            )));
        }
        let mut out = Vec::with_capacity(n);
        for (t, (coeffs, diag)) in rows.into_iter().enumerate() {
            let want = t.min(band - 1);
            if coeffs.len() != want {
                return Err(Error::validation(format!(
                    "row {t}: expected {want} off-diagonal coefficients, got {}",
                    coeffs.len()
                )));
            }
            if diag.abs() <= MIN_DIAGONAL {
                return Err(Error::validation(format!("row {t}: zero diagonal")));
            }
            out.push(Row { coeffs, diag });
        }
        Ok(Self { n, band, rows: out })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn band(&self) -> usize {
        self.band
    }

    pub fn diag(&self, t: usize) -> f64 {
        self.rows[t].diag
    }

    /// Off-diagonal coefficients of row `t` in natural order.
    pub fn coeffs(&self, t: usize) -> &[f64] {
        &self.rows[t].coeffs
    }

    /// Dense element access (test convenience). `C[t, s]`.
    pub fn element(&self, t: usize, s: usize) -> f64 {
        if s > t {
            return 0.0;
        }
        if s == t {
            return self.rows[t].diag;
        }
        let tau = t - s;
        if tau <= self.rows[t].coeffs.len() {
            self.rows[t].coeffs[tau - 1]
        } else {
            0.0
        }
    }

    /// Extract row `t`, optionally pre-normalized (all weights divided by the
    /// diagonal, diagonal set to 1) and/or annotated with the ring lookup.
    pub fn mixing_row(&self, t: usize, prenormalize: bool, ring: bool) -> Result<MixingRow> {
        if t >= self.n {
            return Err(Error::OutOfRange(format!(
                "row {t} out of range for order {}",
                self.n
            )));
        }
        let row = &self.rows[t];
        let (coeffs, diag) = if prenormalize {
            (
                row.coeffs.iter().map(|c| c / row.diag).collect(),
                1.0,
            )
        } else {
            (row.coeffs.clone(), row.diag)
        };
        let ring_order = if ring {
            let hist_rows = self.band.saturating_sub(1);
            Some(
                (0..row.coeffs.len())
                    .map(|k| (t - 1 - k) % hist_rows.max(1))
                    .collect(),
            )
        } else {
            None
        };
        Ok(MixingRow {
            t,
            coeffs,
            diag,
            prenormalized: prenormalize,
            ring_order,
        })
    }

    /// SHA-256 over the structural content; used for provenance digests.
    pub fn digest(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(b"mixing-v1");
        h.update((self.n as u64).to_le_bytes());
        h.update((self.band as u64).to_le_bytes());
        for row in &self.rows {
            h.update(row.diag.to_le_bytes());
            for c in &row.coeffs {
                h.update(c.to_le_bytes());
            }
        }
        h.finalize().into()
    }
}

/// JSON document form: either Toeplitz coefficients or explicit rows.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixDocument {
    pub n: usize,
    pub band: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub toeplitz: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rows: Option<Vec<DocumentRow>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DocumentRow {
    pub coeffs: Vec<f64>,
    pub diag: f64,
}

impl MatrixDocument {
    pub fn build(&self) -> Result<MixingMatrix> {
        match (&self.toeplitz, &self.rows) {
            (Some(t), None) => {
                if t.len() != self.band {
                    return Err(Error::validation(format!(
                        "toeplitz coefficient count {} does not match band {}",
                        t.len(),
                        self.band
                    )));
                }
                if !t.is_empty() && t[0].abs() <= MIN_DIAGONAL {
                    return Err(Error::validation("zero diagonal".to_string()));
                }
                MixingMatrix::banded_toeplitz(t, self.n)
            }
            (None, Some(rows)) => MixingMatrix::from_rows(
                self.n,
                self.band,
                rows.iter().map(|r| (r.coeffs.clone(), r.diag)).collect(),
            ),
            _ => Err(Error::validation(
                "matrix document needs exactly one of `toeplitz` or `rows`".to_string(),
            )),
        }
    }

    pub fn from_matrix(m: &MixingMatrix) -> Self {
        Self {
            n: m.n,
            band: m.band,
            toeplitz: None,
            rows: Some(
                m.rows
                    .iter()
                    .map(|r| DocumentRow {
                        coeffs: r.coeffs.clone(),
                        diag: r.diag,
                    })
                    .collect(),
            ),
        }
    }
}

/// Parse and validate a matrix document from JSON text.
pub fn load_matrix(json: &str) -> Result<MixingMatrix> {
    let doc: MatrixDocument =
        serde_json::from_str(json).map_err(|e| Error::validation(format!("matrix document: {e}")))?;
    doc.build()
}
