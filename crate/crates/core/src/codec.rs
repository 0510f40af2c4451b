//! Scalar uint8 template compression.
//!
//! An embedding of dimension `n` is stored as `n` quantized bytes plus its
//! minimum and maximum as IEEE 754 half-precision floats: `n + 4` bytes.
//!
//! Wire layout (little-endian):
//!
//! ```text
//! min_val: f16 (2 bytes) | max_val: f16 (2 bytes) | codes: [u8; n]
//! ```

use half::f16;

use crate::embedding::Embedding;
use crate::error::{Error, Result};

/// Bytes of header in front of the codes.
pub const HEADER_LEN: usize = 4;

/// Serialized size of a template for an embedding of dimension `dim`.
pub const fn template_size(dim: usize) -> usize {
    dim + HEADER_LEN
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompressedTemplate {
    codes: Vec<u8>,
    min_val: f16,
    max_val: f16,
}

impl CompressedTemplate {
    /// Builds a template from raw parts. Order of the bounds is checked on
    /// decompression, not here, so corrupt inputs can still be represented.
    pub fn from_parts(codes: Vec<u8>, min_val: f16, max_val: f16) -> Self {
        Self {
            codes,
            min_val,
            max_val,
        }
    }

    pub fn codes(&self) -> &[u8] {
        &self.codes
    }

    pub fn min_val(&self) -> f16 {
        self.min_val
    }

    pub fn max_val(&self) -> f16 {
        self.max_val
    }

    pub fn dim(&self) -> usize {
        self.codes.len()
    }

    pub fn serialized_len(&self) -> usize {
        template_size(self.codes.len())
    }

    pub fn write_to(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.min_val.to_bits().to_le_bytes());
        out.extend_from_slice(&self.max_val.to_bits().to_le_bytes());
        out.extend_from_slice(&self.codes);
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.serialized_len());
        self.write_to(&mut out);
        out
    }

    /// Parses a whole buffer as one template; every byte past the header is a code.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::TruncatedTemplate { len: bytes.len() });
        }
        let min_val = f16::from_bits(u16::from_le_bytes([bytes[0], bytes[1]]));
        let max_val = f16::from_bits(u16::from_le_bytes([bytes[2], bytes[3]]));
        Ok(Self {
            codes: bytes[HEADER_LEN..].to_vec(),
            min_val,
            max_val,
        })
    }
}

/// Quantizes an embedding to one byte per element.
///
/// Values are min-max normalized with the exact extrema, scaled to
/// [0, 255] and rounded half-to-even. The extrema are then rounded to the
/// nearest half-precision value for storage. A constant embedding yields all
/// zero codes.
pub fn compress(e: &Embedding) -> Result<CompressedTemplate> {
    let values = e.values();
    if values.is_empty() {
        return Err(Error::InvalidEmbedding("empty vector".into()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidEmbedding("non-finite value".into()));
    }
    let (min, max) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let min_val = f16::from_f64(min);
    let max_val = f16::from_f64(max);
    if !min_val.is_finite() || !max_val.is_finite() {
        return Err(Error::InvalidEmbedding(format!(
            "range [{min}, {max}] exceeds half precision"
        )));
    }

    let codes = if max > min {
        let range = max - min;
        values
            .iter()
            .map(|&v| {
                let scaled = (v - min) / range * 255.0;
                scaled.round_ties_even().clamp(0.0, 255.0) as u8
            })
            .collect()
    } else {
        vec![0; values.len()]
    };

    Ok(CompressedTemplate {
        codes,
        min_val,
        max_val,
    })
}

/// Maps codes back to `min + code / 255 * (max - min)`.
pub fn decompress(t: &CompressedTemplate) -> Result<Embedding> {
    let lo = t.min_val.to_f64();
    let hi = t.max_val.to_f64();
    if !lo.is_finite() || !hi.is_finite() {
        return Err(Error::CorruptTemplate("non-finite bounds".into()));
    }
    if lo > hi {
        return Err(Error::CorruptTemplate(format!(
            "min {lo} greater than max {hi}"
        )));
    }
    if t.codes.is_empty() {
        return Err(Error::CorruptTemplate("no codes".into()));
    }
    let range = hi - lo;
    let values = t
        .codes
        .iter()
        .map(|&c| lo + f64::from(c) / 255.0 * range)
        .collect();
    Embedding::new(values)
}
