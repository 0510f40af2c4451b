//! Sample quality estimation and quality-based rejection.
//!
//! Two estimators: the pre-normalization L2 norm of the embedding, and the
//! variance of a Laplacian-of-Gaussian response on the ROI interior.

use serde::{Deserialize, Serialize};

use crate::embedding::{ConcatTemplate, Embedding};
use crate::error::{Error, Result};
use crate::image::{gaussian_blur_valid, Image};

/// Pixels trimmed from each side of the ROI before the LoG response.
pub const LOG_BORDER_CROP: usize = 32;
/// Smallest interior side accepted after trimming.
pub const LOG_MIN_INTERIOR: usize = 65;
pub const DEFAULT_LOG_SIGMA: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QualityMethod {
    EmbeddingNorm,
    LogVariance,
    External,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QualityValue {
    pub value: f64,
    pub method: QualityMethod,
}

impl QualityValue {
    pub fn new(value: f64, method: QualityMethod) -> Result<Self> {
        if !(value >= 0.0) || !value.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "quality value {value} must be finite and nonnegative"
            )));
        }
        Ok(Self { value, method })
    }
}

pub fn quality_from_embedding(e: &Embedding) -> QualityValue {
    QualityValue {
        value: e.raw_norm(),
        method: QualityMethod::EmbeddingNorm,
    }
}

/// Sum of the two branches' pre-normalization norms.
pub fn quality_from_template(t: &ConcatTemplate) -> QualityValue {
    QualityValue {
        value: t.raw_norm_sum(),
        method: QualityMethod::EmbeddingNorm,
    }
}

/// Variance of the Laplacian-of-Gaussian response on the ROI interior.
///
/// The image (grayscale) is trimmed by [`LOG_BORDER_CROP`] pixels per side,
/// blurred with a Gaussian of the given sigma and filtered with the 5-point
/// Laplacian. Only positions where both filters fit entirely inside the
/// trimmed region contribute.
pub fn quality_log_variance(img: &Image, sigma: f64) -> Result<QualityValue> {
    let too_small = Error::RoiTooSmall {
        width: img.width(),
        height: img.height(),
    };
    let (w, h) = (img.width(), img.height());
    if w < 2 * LOG_BORDER_CROP + LOG_MIN_INTERIOR || h < 2 * LOG_BORDER_CROP + LOG_MIN_INTERIOR {
        return Err(too_small);
    }
    if !(sigma > 0.0) {
        return Err(Error::InvalidConfig(format!("LoG sigma {sigma} must be positive")));
    }
    let gray = img.to_gray();
    let (cw, ch) = (w - 2 * LOG_BORDER_CROP, h - 2 * LOG_BORDER_CROP);
    let mut plane = Vec::with_capacity(cw * ch);
    for y in 0..ch {
        for x in 0..cw {
            plane.push(f64::from(gray.get(x + LOG_BORDER_CROP, y + LOG_BORDER_CROP, 0)));
        }
    }
    let (blur, bw, bh) = gaussian_blur_valid(&plane, cw, ch, sigma);
    if bw < 3 || bh < 3 {
        return Err(too_small);
    }
    let mut response = Vec::with_capacity((bw - 2) * (bh - 2));
    for y in 1..bh - 1 {
        for x in 1..bw - 1 {
            let c = blur[y * bw + x];
            response.push(
                blur[y * bw + x - 1] + blur[y * bw + x + 1] + blur[(y - 1) * bw + x]
                    + blur[(y + 1) * bw + x]
                    - 4.0 * c,
            );
        }
    }
    let n = response.len() as f64;
    let mean = response.iter().sum::<f64>() / n;
    let var = response.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    Ok(QualityValue {
        value: var,
        method: QualityMethod::LogVariance,
    })
}

/// Indices kept and rejected when dropping the `floor(f * n)` lowest-quality
/// samples. Ties go to the earlier sample. Both lists are ascending.
pub fn reject_by_quality(qualities: &[QualityValue], fraction: f64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::InvalidFraction(fraction));
    }
    if let Some(first) = qualities.first() {
        if qualities.iter().any(|q| q.method != first.method) {
            return Err(Error::MixedQualityMethods);
        }
    }
    let n = qualities.len();
    let reject = (fraction * n as f64).floor() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    // Stable: equal qualities keep ingestion order.
    order.sort_by(|&a, &b| qualities[a].value.total_cmp(&qualities[b].value));
    let mut rejected = order[..reject].to_vec();
    let mut kept = order[reject..].to_vec();
    rejected.sort_unstable();
    kept.sort_unstable();
    Ok((kept, rejected))
}
