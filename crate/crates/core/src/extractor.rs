//! Pluggable feature extraction plus a deterministic toy extractor and the
//! embedding ingestion formats used for externally computed embeddings.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::embedding::{ConcatTemplate, Embedding};
use crate::error::{Error, Result};
use crate::eval::RawSample;
use crate::image::{RoiImage, ROI_SIZE};

pub const TOY_BRANCH_DIM: usize = 384;
pub const TOY_PATCH_SIZES: [usize; 2] = [16, 32];
pub const TOY_PYRAMID_BLOCKS: [usize; 3] = [8, 16, 32];
const ORIENTATION_BINS: usize = 8;
const PATCH_FEATURES: usize = 2 + ORIENTATION_BINS;
const PROJECTION_SEED_V: u64 = 0x7061_6c6d_0000_0001;
const PROJECTION_SEED_R: u64 = 0x7061_6c6d_0000_0002;
const BIAS_SCALE: f64 = 1e-3;
// Means barely react to blur, so they are down-weighted to let texture
// energy drive the summed raw norm used as a quality signal.
const PYRAMID_WEIGHT: f64 = 0.1;
const PATCH_MEAN_WEIGHT: f64 = 0.1;
const HISTOGRAM_WEIGHT: f64 = 4.0;

pub trait FeatureExtractor: Send + Sync {
    fn branch_dim(&self) -> usize;
    fn extract(&self, roi: &RoiImage) -> Result<ConcatTemplate>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchSequence {
    pub patch_size: usize,
    /// Row-major patches, each `patch_size²` row-major pixels.
    pub patches: Vec<Vec<f32>>,
}

impl PatchSequence {
    pub fn count(&self) -> usize {
        self.patches.len()
    }

    pub fn per_side(&self) -> usize {
        ROI_SIZE / self.patch_size
    }

    pub fn reassemble(&self) -> Result<RoiImage> {
        let p = self.patch_size;
        let n = self.per_side();
        let mut data = vec![0.0f32; ROI_SIZE * ROI_SIZE];
        for (k, patch) in self.patches.iter().enumerate() {
            let (py, px) = (k / n, k % n);
            for y in 0..p {
                let row = (py * p + y) * ROI_SIZE + px * p;
                data[row..row + p].copy_from_slice(&patch[y * p..(y + 1) * p]);
            }
        }
        RoiImage::new(crate::image::Image::from_vec(ROI_SIZE, ROI_SIZE, 1, data)?)
    }
}

pub fn tokenize(roi: &RoiImage, p: usize) -> Result<PatchSequence> {
    if p == 0 || ROI_SIZE % p != 0 {
        return Err(Error::BadPatchSize(p));
    }
    let data = roi.image().data();
    let n = ROI_SIZE / p;
    let mut patches = Vec::with_capacity(n * n);
    for py in 0..n {
        for px in 0..n {
            let mut patch = Vec::with_capacity(p * p);
            for y in 0..p {
                let row = (py * p + y) * ROI_SIZE + px * p;
                patch.extend_from_slice(&data[row..row + p]);
            }
            patches.push(patch);
        }
    }
    Ok(PatchSequence { patch_size: p, patches })
}

/// Dense projection `out = W x + b` with W stored row-major.
struct Projection {
    in_dim: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl Projection {
    fn seeded(in_dim: usize, out_dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let weights = (0..in_dim * out_dim).map(|_| rng.gen_range(-1.0..=1.0)).collect();
        let bias = (0..out_dim)
            .map(|_| BIAS_SCALE * rng.gen_range(-1.0..=1.0))
            .collect();
        Self { in_dim, weights, bias }
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.in_dim);
        self.weights
            .chunks_exact(self.in_dim)
            .zip(&self.bias)
            .map(|(row, b)| row.iter().zip(x).fold(*b, |acc, (w, v)| acc + w * v))
            .collect()
    }
}

fn texture_feature_len() -> usize {
    TOY_PATCH_SIZES
        .iter()
        .map(|p| (ROI_SIZE / p).pow(2) * PATCH_FEATURES)
        .sum()
}

fn pyramid_feature_len() -> usize {
    TOY_PYRAMID_BLOCKS.iter().map(|b| (ROI_SIZE / b).pow(2)).sum()
}

/// Central-difference gradients on the full ROI; borders use one-sided steps.
fn gradients(img: &[f32]) -> (Vec<f64>, Vec<f64>) {
    let n = ROI_SIZE;
    let mut gx = vec![0.0; n * n];
    let mut gy = vec![0.0; n * n];
    let at = |x: usize, y: usize| f64::from(img[y * n + x]);
    for y in 0..n {
        for x in 0..n {
            let (xl, xr) = (x.saturating_sub(1), (x + 1).min(n - 1));
            let (yu, yd) = (y.saturating_sub(1), (y + 1).min(n - 1));
            gx[y * n + x] = (at(xr, y) - at(xl, y)) / (xr - xl) as f64;
            gy[y * n + x] = (at(x, yd) - at(x, yu)) / (yd - yu) as f64;
        }
    }
    (gx, gy)
}

/// Per patch, at both scales: centered mean, standard deviation, and the
/// gradient-magnitude-weighted orientation histogram (unsigned, 8 bins)
/// normalized by the patch area.
pub fn texture_features(roi: &RoiImage) -> Vec<f64> {
    let img = roi.image().data();
    let (gx, gy) = gradients(img);
    let mut out = Vec::with_capacity(texture_feature_len());
    for &p in &TOY_PATCH_SIZES {
        let per_side = ROI_SIZE / p;
        let area = (p * p) as f64;
        for py in 0..per_side {
            for px in 0..per_side {
                let mut sum = 0.0;
                let mut sum2 = 0.0;
                let mut hist = [0.0f64; ORIENTATION_BINS];
                for y in py * p..(py + 1) * p {
                    for x in px * p..(px + 1) * p {
                        let i = y * ROI_SIZE + x;
                        let v = f64::from(img[i]);
                        sum += v;
                        sum2 += v * v;
                        let mag = gx[i].hypot(gy[i]);
                        if mag > 0.0 {
                            let theta = gy[i].atan2(gx[i]).rem_euclid(std::f64::consts::PI);
                            let bin = ((theta / std::f64::consts::PI * ORIENTATION_BINS as f64)
                                as usize)
                                .min(ORIENTATION_BINS - 1);
                            hist[bin] += mag;
                        }
                    }
                }
                let mean = sum / area;
                let var = (sum2 / area - mean * mean).max(0.0);
                out.push(PATCH_MEAN_WEIGHT * (mean - 0.5));
                out.push(var.sqrt());
                out.extend(hist.iter().map(|h| HISTOGRAM_WEIGHT * h / area));
            }
        }
    }
    out
}

/// Block means at three block sizes, centered on mid-gray.
pub fn pyramid_features(roi: &RoiImage) -> Vec<f64> {
    let img = roi.image().data();
    let mut out = Vec::with_capacity(pyramid_feature_len());
    for &b in &TOY_PYRAMID_BLOCKS {
        let per_side = ROI_SIZE / b;
        let area = (b * b) as f64;
        for by in 0..per_side {
            for bx in 0..per_side {
                let mut sum = 0.0;
                for y in by * b..(by + 1) * b {
                    let row = y * ROI_SIZE + bx * b;
                    sum += img[row..row + b].iter().map(|&v| f64::from(v)).sum::<f64>();
                }
                out.push(PYRAMID_WEIGHT * (sum / area - 0.5));
            }
        }
    }
    out
}

/// Fixed-projection extractor: no training, identical output on every run.
pub struct ToyExtractor {
    proj_v: &'static Projection,
    proj_r: &'static Projection,
}

fn projections() -> &'static (Projection, Projection) {
    static CELL: OnceLock<(Projection, Projection)> = OnceLock::new();
    CELL.get_or_init(|| {
        (
            Projection::seeded(texture_feature_len(), TOY_BRANCH_DIM, PROJECTION_SEED_V),
            Projection::seeded(pyramid_feature_len(), TOY_BRANCH_DIM, PROJECTION_SEED_R),
        )
    })
}

impl ToyExtractor {
    pub fn new() -> Self {
        let (v, r) = projections();
        Self { proj_v: v, proj_r: r }
    }

    /// Raw (pre-normalization) branch outputs.
    pub fn extract_raw(&self, roi: &RoiImage) -> Result<(Embedding, Embedding)> {
        let v = Embedding::new(self.proj_v.apply(&texture_features(roi)))?;
        let r = Embedding::new(self.proj_r.apply(&pyramid_features(roi)))?;
        Ok((v, r))
    }
}

impl Default for ToyExtractor {
    fn default() -> Self {
        Self::new()
    }
}

impl FeatureExtractor for ToyExtractor {
    fn branch_dim(&self) -> usize {
        TOY_BRANCH_DIM
    }

    fn extract(&self, roi: &RoiImage) -> Result<ConcatTemplate> {
        let (v, r) = self.extract_raw(roi)?;
        ConcatTemplate::from_raw(&v, &r)
    }
}

pub const PEMB_MAGIC: &[u8; 4] = b"PEMB";

fn parse_err(msg: impl Into<String>) -> Error {
    Error::Parse(msg.into())
}

/// Reads embeddings from CSV (`id,branch,dim,values...`) or binary PEMB,
/// chosen by the file's leading magic bytes.
pub fn read_embeddings(path: impl AsRef<Path>) -> Result<Vec<RawSample>> {
    let bytes = fs::read(path)?;
    if bytes.starts_with(PEMB_MAGIC) {
        decode_pemb(&bytes)
    } else {
        let text = std::str::from_utf8(&bytes).map_err(|_| parse_err("embedding file is not UTF-8"))?;
        parse_embeddings_csv(text)
    }
}

/// Rows pair up by id: branch `v` and `r` rows combine into one sample;
/// branch `vr` holds both halves in one row. Output follows first appearance.
pub fn parse_embeddings_csv(text: &str) -> Result<Vec<RawSample>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut order: Vec<String> = Vec::new();
    let mut halves: BTreeMap<String, (Option<Vec<f64>>, Option<Vec<f64>>)> = BTreeMap::new();
    for (line, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| parse_err(format!("embedding CSV: {e}")))?;
        if line == 0 && rec.get(0) == Some("id") {
            continue;
        }
        if rec.len() < 4 {
            return Err(parse_err(format!("embedding CSV row {}: too few fields", line + 1)));
        }
        let id = rec[0].to_string();
        let dim: usize = rec[2]
            .parse()
            .map_err(|_| parse_err(format!("embedding CSV row {}: bad dim", line + 1)))?;
        let values = rec
            .iter()
            .skip(3)
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| parse_err(format!("embedding CSV row {}: bad value", line + 1)))?;
        if values.len() != dim {
            return Err(Error::DimMismatch { expected: dim, actual: values.len() });
        }
        let slot = halves.entry(id.clone()).or_insert_with(|| {
            order.push(id.clone());
            (None, None)
        });
        let duplicate = match &rec[1] {
            "v" => slot.0.replace(values).is_some(),
            "r" => slot.1.replace(values).is_some(),
            "vr" => {
                if dim % 2 != 0 {
                    return Err(parse_err(format!("embedding CSV row {}: odd vr dim", line + 1)));
                }
                let r = values[dim / 2..].to_vec();
                let mut v = values;
                v.truncate(dim / 2);
                slot.0.replace(v).is_some() | slot.1.replace(r).is_some()
            }
            other => return Err(parse_err(format!("unknown branch '{other}'"))),
        };
        if duplicate {
            return Err(parse_err(format!("duplicate branch for id '{id}'")));
        }
    }
    order
        .into_iter()
        .map(|id| match halves.remove(&id) {
            Some((Some(v), Some(r))) => {
                if v.len() != r.len() {
                    return Err(Error::DimMismatch { expected: v.len(), actual: r.len() });
                }
                Ok(RawSample { subject: id, branch_v: Embedding::new(v)?, branch_r: Embedding::new(r)? })
            }
            _ => Err(parse_err(format!("id '{id}' is missing a branch"))),
        })
        .collect()
}

pub fn write_embeddings_csv(samples: &[RawSample], mut w: impl Write) -> Result<()> {
    writeln!(w, "id,branch,dim,values")?;
    for s in samples {
        for (tag, e) in [("v", &s.branch_v), ("r", &s.branch_r)] {
            write!(w, "{},{},{}", s.subject, tag, e.dim())?;
            for v in e.values() {
                write!(w, ",{v}")?;
            }
            writeln!(w)?;
        }
    }
    Ok(())
}

/// PEMB: magic, dim u32, count u64, then per record `id_len u16, id, dim × f32`
/// (all little-endian). Each record is a concatenated v‖r embedding.
pub fn encode_pemb(samples: &[RawSample]) -> Result<Vec<u8>> {
    let dim = samples.first().map_or(0, |s| s.branch_v.dim() + s.branch_r.dim());
    let mut out = Vec::new();
    out.extend_from_slice(PEMB_MAGIC);
    out.extend_from_slice(&(dim as u32).to_le_bytes());
    out.extend_from_slice(&(samples.len() as u64).to_le_bytes());
    for s in samples {
        let d = s.branch_v.dim() + s.branch_r.dim();
        if d != dim || s.branch_v.dim() != s.branch_r.dim() {
            return Err(Error::DimMismatch { expected: dim, actual: d });
        }
        let id = s.subject.as_bytes();
        let len = u16::try_from(id.len()).map_err(|_| Error::InvalidSubjectId(s.subject.clone()))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(id);
        for v in s.branch_v.values().iter().chain(s.branch_r.values()) {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_pemb(bytes: &[u8]) -> Result<Vec<RawSample>> {
    let mut pos = 0usize;
    let mut take = |n: usize| -> Result<&[u8]> {
        let s = bytes
            .get(pos..pos + n)
            .ok_or_else(|| parse_err("truncated PEMB file"))?;
        pos += n;
        Ok(s)
    };
    if take(4)? != PEMB_MAGIC {
        return Err(parse_err("bad PEMB magic"));
    }
    let dim = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
    let count = u64::from_le_bytes(take(8)?.try_into().unwrap());
    if dim == 0 || dim % 2 != 0 {
        return Err(parse_err(format!("PEMB dim {dim} must be even and nonzero")));
    }
    let mut out = Vec::new();
    for _ in 0..count {
        let len = u16::from_le_bytes(take(2)?.try_into().unwrap()) as usize;
        let id = std::str::from_utf8(take(len)?)
            .map_err(|_| parse_err("PEMB id is not UTF-8"))?
            .to_string();
        let raw = take(dim * 4)?;
        let values: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        out.push(RawSample {
            subject: id,
            branch_v: Embedding::from_f32(&values[..dim / 2])?,
            branch_r: Embedding::from_f32(&values[dim / 2..])?,
        });
    }
    if pos != bytes.len() {
        return Err(parse_err("trailing bytes after PEMB records"));
    }
    Ok(out)
}
