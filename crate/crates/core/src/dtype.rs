use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Element width for noise values. Internal arithmetic is always f64; `F32`
/// rounds every generated or stored value to f32 precision so that on-disk
/// f32 payloads round-trip bit-exactly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Dtype {
    #[serde(rename = "f32")]
    F32,
    #[serde(rename = "f64")]
    F64,
}

impl Dtype {
    /// Element width in bytes. Doubles as the on-disk dtype code.
    pub fn width(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }

    pub fn code(self) -> u8 {
        self.width() as u8
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            4 => Ok(Dtype::F32),
            8 => Ok(Dtype::F64),
            other => Err(Error::validation(format!("unknown dtype code {other}"))),
        }
    }

    /// Round a value to this dtype's precision.
    #[inline]
    pub fn quantize(self, x: f64) -> f64 {
        match self {
            Dtype::F32 => x as f32 as f64,
            Dtype::F64 => x,
        }
    }

    /// Encode one element little-endian into `out`.
    pub fn write_elem(self, x: f64, out: &mut Vec<u8>) {
        match self {
            Dtype::F32 => out.extend_from_slice(&(x as f32).to_le_bytes()),
            Dtype::F64 => out.extend_from_slice(&x.to_le_bytes()),
        }
    }

    /// Decode one element from a little-endian buffer at `off`.
    pub fn read_elem(self, buf: &[u8], off: usize) -> f64 {
        match self {
            Dtype::F32 => f32::from_le_bytes(buf[off..off + 4].try_into().unwrap()) as f64,
            Dtype::F64 => f64::from_le_bytes(buf[off..off + 8].try_into().unwrap()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantize_f32_is_idempotent() {
        let x = 0.1_f64;
        let q = Dtype::F32.quantize(x);
        assert_ne!(x, q);
        assert_eq!(q, Dtype::F32.quantize(q));
    }

    #[test]
    fn elem_roundtrip() {
        for dt in [Dtype::F32, Dtype::F64] {
            let x = dt.quantize(-1.2345678910111213);
            let mut buf = Vec::new();
            dt.write_elem(x, &mut buf);
            assert_eq!(buf.len(), dt.width());
            assert_eq!(dt.read_elem(&buf, 0).to_bits(), x.to_bits());
        }
    }
}
