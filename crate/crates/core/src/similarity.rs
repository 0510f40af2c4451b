//! Similarity scoring for single, concatenated and fused embeddings.

use serde::{Deserialize, Serialize};

use crate::embedding::{ConcatTemplate, Embedding};
use crate::error::{Error, Result};

/// Default weight of the primary matcher in score-level fusion.
pub const DEFAULT_FUSION_WEIGHT: f64 = 0.7;

/// A comparison score in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SimilarityScore(f64);

impl SimilarityScore {
    pub fn new(value: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&value) {
            return Err(Error::InvalidScore(value));
        }
        Ok(Self(value))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Cosine similarity of two non-zero vectors of equal dimension.
pub fn cosine(a: &Embedding, b: &Embedding) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimMismatch {
            expected: a.dim(),
            actual: b.dim(),
        });
    }
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroNorm);
    }
    Ok((dot(a.values(), b.values()) / (na * nb)).clamp(-1.0, 1.0))
}

/// Raw inner product of the two stacked `v ‖ r` vectors, in [-2, 2].
pub fn concat_dot(p: &ConcatTemplate, q: &ConcatTemplate) -> Result<f64> {
    if p.branch_dim() != q.branch_dim() {
        return Err(Error::DimMismatch {
            expected: p.branch_dim(),
            actual: q.branch_dim(),
        });
    }
    Ok(dot(p.branch_v().values(), q.branch_v().values())
        + dot(p.branch_r().values(), q.branch_r().values()))
}

/// Affine map from the concatenated dot product onto [0, 1]: `(dot + 2) / 4`.
pub fn score_from_dot(dot: f64) -> SimilarityScore {
    SimilarityScore(((dot + 2.0) / 4.0).clamp(0.0, 1.0))
}

pub fn concat_score(p: &ConcatTemplate, q: &ConcatTemplate) -> Result<SimilarityScore> {
    concat_dot(p, q).map(score_from_dot)
}

/// Weighted score-level fusion: `w * primary + (1 - w) * external`.
pub fn fuse_scores(
    primary: SimilarityScore,
    external: SimilarityScore,
    weight: f64,
) -> Result<SimilarityScore> {
    if !(0.0..=1.0).contains(&weight) {
        return Err(Error::InvalidWeight(weight));
    }
    if primary == external {
        return Ok(primary);
    }
    let fused = weight * primary.0 + (1.0 - weight) * external.0;
    Ok(SimilarityScore(fused.clamp(0.0, 1.0)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn emb(v: &[f64]) -> Embedding {
        Embedding::new(v.to_vec()).unwrap()
    }

    fn concat(v: &[f64], r: &[f64]) -> ConcatTemplate {
        ConcatTemplate::from_raw(&emb(v), &emb(r)).unwrap()
    }

    #[test]
    fn cosine_cases() {
        let x = emb(&[0.3, -1.2, 2.0]);
        assert!((cosine(&x, &x).unwrap() - 1.0).abs() < 1e-12);
        let neg = emb(&[-0.3, 1.2, -2.0]);
        assert!((cosine(&x, &neg).unwrap() + 1.0).abs() < 1e-12);
        assert_eq!(cosine(&emb(&[1.0, 0.0]), &emb(&[0.0, 1.0])).unwrap(), 0.0);
        assert!(matches!(
            cosine(&emb(&[1.0, 0.0]), &emb(&[1.0])),
            Err(Error::DimMismatch { .. })
        ));
        assert!(matches!(
            cosine(&emb(&[1.0, 0.0]), &emb(&[0.0, 0.0])),
            Err(Error::ZeroNorm)
        ));
    }

    #[test]
    fn concat_score_anchor_points() {
        let p = concat(&[1.0, 0.0], &[0.0, 1.0]);
        assert_eq!(concat_score(&p, &p).unwrap().value(), 1.0);
        let orth = concat(&[0.0, 1.0], &[1.0, 0.0]);
        assert_eq!(concat_score(&p, &orth).unwrap().value(), 0.5);
        let neg = concat(&[-1.0, 0.0], &[0.0, -1.0]);
        assert_eq!(concat_score(&p, &neg).unwrap().value(), 0.0);
        let other = concat(&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0]);
        assert!(matches!(
            concat_score(&p, &other),
            Err(Error::DimMismatch { .. })
        ));
    }

    #[test]
    fn fusion() {
        let s = |v| SimilarityScore::new(v).unwrap();
        assert_eq!(fuse_scores(s(1.0), s(1.0), 0.7).unwrap().value(), 1.0);
        assert!((fuse_scores(s(0.8), s(0.6), 0.7).unwrap().value() - 0.74).abs() < 1e-12);
        for w in [0.0, 0.13, 0.7, 1.0] {
            assert_eq!(fuse_scores(s(0.42), s(0.42), w).unwrap().value(), 0.42);
        }
        assert!(matches!(
            fuse_scores(s(0.5), s(0.5), 1.5),
            Err(Error::InvalidWeight(_))
        ));
        assert!(matches!(
            fuse_scores(s(0.5), s(0.5), -0.1),
            Err(Error::InvalidWeight(_))
        ));
        assert!(SimilarityScore::new(1.01).is_err());
    }
}
