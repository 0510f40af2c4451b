//! Embedding vectors and the two-branch concatenated template used for matching.

use crate::error::{Error, Result};

/// Tolerance on the unit-length check for branch embeddings.
pub const UNIT_NORM_TOLERANCE: f64 = 1e-6;

/// A fixed-length feature vector together with its pre-normalization L2 norm.
///
/// `raw_norm` is the norm of the vector as it came out of the extractor (or
/// reducer). Normalizing keeps that value so it can later serve as a quality
/// surrogate.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    values: Vec<f64>,
    raw_norm: f64,
}

pub(crate) fn l2_norm(values: &[f64]) -> f64 {
    values.iter().map(|v| v * v).sum::<f64>().sqrt()
}

impl Embedding {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidEmbedding("empty vector".into()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidEmbedding(format!(
                "non-finite value at index {i}"
            )));
        }
        let raw_norm = l2_norm(&values);
        Ok(Self { values, raw_norm })
    }

    pub fn from_f32(values: &[f32]) -> Result<Self> {
        Self::new(values.iter().map(|&v| f64::from(v)).collect())
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// Norm recorded before any normalization.
    pub fn raw_norm(&self) -> f64 {
        self.raw_norm
    }

    /// Norm of the current values.
    pub fn norm(&self) -> f64 {
        l2_norm(&self.values)
    }

    /// Unit-length copy. The pre-normalization norm is carried over.
    pub fn normalized(&self) -> Result<Self> {
        let norm = self.norm();
        if norm == 0.0 {
            return Err(Error::ZeroNorm);
        }
        let values = self
            .values
            .iter()
            .map(|&v| v / norm)
            .collect();
        Ok(Self {
            values,
            raw_norm: self.raw_norm,
        })
    }

    pub fn is_unit(&self) -> bool {
        (self.norm() - 1.0).abs() <= UNIT_NORM_TOLERANCE
    }
}

/// Two unit-normalized branch embeddings (global-feature branch `v` and
/// local-feature branch `r`), matched as their concatenation.
#[derive(Debug, Clone, PartialEq)]
pub struct ConcatTemplate {
    branch_v: Embedding,
    branch_r: Embedding,
}

impl ConcatTemplate {
    /// Normalizes both raw branch embeddings, keeping their raw norms.
    pub fn from_raw(branch_v: &Embedding, branch_r: &Embedding) -> Result<Self> {
        if branch_v.dim() != branch_r.dim() {
            return Err(Error::DimMismatch {
                expected: branch_v.dim(),
                actual: branch_r.dim(),
            });
        }
        Ok(Self {
            branch_v: branch_v.normalized()?,
            branch_r: branch_r.normalized()?,
        })
    }

    /// Wraps branches that are already unit length.
    pub fn from_unit(branch_v: Embedding, branch_r: Embedding) -> Result<Self> {
        if branch_v.dim() != branch_r.dim() {
            return Err(Error::DimMismatch {
                expected: branch_v.dim(),
                actual: branch_r.dim(),
            });
        }
        for (name, b) in [("v", &branch_v), ("r", &branch_r)] {
            if !b.is_unit() {
                return Err(Error::InvalidEmbedding(format!(
                    "branch {name} has norm {}, expected 1",
                    b.norm()
                )));
            }
        }
        Ok(Self { branch_v, branch_r })
    }

    /// Splits a stacked `v ‖ r` vector in half and normalizes each half.
    pub fn from_concatenated(values: &[f64]) -> Result<Self> {
        if values.len() < 2 || values.len() % 2 != 0 {
            return Err(Error::InvalidEmbedding(format!(
                "concatenated length {} is not an even number of at least 2",
                values.len()
            )));
        }
        let half = values.len() / 2;
        let v = Embedding::new(values[..half].to_vec())?;
        let r = Embedding::new(values[half..].to_vec())?;
        Self::from_raw(&v, &r)
    }

    pub fn branch_v(&self) -> &Embedding {
        &self.branch_v
    }

    pub fn branch_r(&self) -> &Embedding {
        &self.branch_r
    }

    pub fn branch_dim(&self) -> usize {
        self.branch_v.dim()
    }

    pub fn concat_dim(&self) -> usize {
        2 * self.branch_dim()
    }

    pub fn concatenated(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.concat_dim());
        out.extend_from_slice(self.branch_v.values());
        out.extend_from_slice(self.branch_r.values());
        out
    }

    /// The stacked vector as an embedding, ready for compression.
    pub fn to_embedding(&self) -> Embedding {
        Embedding::new(self.concatenated()).expect("unit branches are finite and non-empty")
    }

    /// Sum of the two branches' pre-normalization norms.
    pub fn raw_norm_sum(&self) -> f64 {
        self.branch_v.raw_norm() + self.branch_r.raw_norm()
    }
}
