//! Enrollment store and exhaustive 1:N search.
//!
//! The compressed templates are authoritative; every enrolled template is
//! also kept decompressed and branch-normalized in a flat `f32` cache so a
//! probe costs one dot product per entry.
//!
//! File layout (little-endian):
//!
//! ```text
//! "PGAL" | version: u16 = 1 | embedding_dim: u32 | entry_count: u64 | entries
//! entry: id_len: u16 | id: [u8; id_len] | template: [u8; embedding_dim + 4]
//! ```
//!
//! An `embedding_dim` of 0 marks a gallery whose dimension is not fixed yet.

use std::cmp::Ordering;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::codec::{self, template_size, CompressedTemplate};
use crate::embedding::ConcatTemplate;
use crate::error::{Error, Result};
use crate::similarity::{score_from_dot, SimilarityScore};

pub const MAGIC: &[u8; 4] = b"PGAL";
pub const VERSION: u16 = 1;

/// Entries scored per parallel work item. Fixed so the merge order does not
/// depend on the thread count.
const SEARCH_CHUNK: usize = 512;

#[derive(Debug, Clone, PartialEq)]
pub struct GalleryEntry {
    pub subject_id: String,
    pub template: CompressedTemplate,
    pub enroll_seq: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SearchPolicy {
    threshold: f64,
    rank_budget: usize,
}

impl SearchPolicy {
    pub fn new(threshold: f64, rank_budget: usize) -> Result<Self> {
        if !(0.0..=1.0).contains(&threshold) {
            return Err(Error::InvalidPolicy(format!(
                "threshold {threshold} outside [0, 1]"
            )));
        }
        if rank_budget == 0 {
            return Err(Error::InvalidPolicy("rank budget must be >= 1".into()));
        }
        Ok(Self {
            threshold,
            rank_budget,
        })
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn rank_budget(&self) -> usize {
        self.rank_budget
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Candidate {
    pub subject_id: String,
    pub score: SimilarityScore,
    /// 1-based.
    pub rank: usize,
    pub enroll_seq: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Decision {
    Accept(String),
    Reject,
}

#[derive(Debug, Clone, Default)]
pub struct Gallery {
    dim: Option<usize>,
    entries: Vec<GalleryEntry>,
    cache: Vec<f32>,
    next_seq: u64,
}

/// Dot product with f64 accumulation over eight fixed lanes.
pub(crate) fn dot_f32(a: &[f32], b: &[f32]) -> f64 {
    let mut acc = [0.0f64; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let tail: f64 = ca
        .remainder()
        .iter()
        .zip(cb.remainder())
        .map(|(&x, &y)| f64::from(x) * f64::from(y))
        .sum();
    for (x, y) in ca.zip(cb) {
        for k in 0..8 {
            acc[k] += f64::from(x[k]) * f64::from(y[k]);
        }
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail
}

/// Descending dot, then ascending enrollment order.
fn rank_order(a: &(f64, u64), b: &(f64, u64)) -> Ordering {
    b.0.total_cmp(&a.0).then(a.1.cmp(&b.1))
}

fn top_k(mut scored: Vec<(f64, u64)>, k: usize) -> Vec<(f64, u64)> {
    if scored.len() > k {
        scored.select_nth_unstable_by(k - 1, rank_order);
        scored.truncate(k);
    }
    scored.sort_unstable_by(rank_order);
    scored
}

impl Gallery {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_dim(dim: usize) -> Result<Self> {
        check_dim(dim)?;
        Ok(Self {
            dim: Some(dim),
            ..Self::default()
        })
    }

    pub fn dim(&self) -> Option<usize> {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[GalleryEntry] {
        &self.entries
    }

    /// Decompressed, branch-normalized form of entry `index` as stored in the search cache.
    pub fn cached_vector(&self, index: usize) -> &[f32] {
        let dim = self.dim.unwrap_or(0);
        &self.cache[index * dim..(index + 1) * dim]
    }

    /// Appends a template. Returns the entry's enrollment sequence number.
    pub fn enroll(&mut self, subject_id: &str, template: CompressedTemplate) -> Result<u64> {
        if subject_id.is_empty() {
            return Err(Error::InvalidSubjectId("empty id".into()));
        }
        if subject_id.len() > usize::from(u16::MAX) {
            return Err(Error::InvalidSubjectId("id longer than 65535 bytes".into()));
        }
        let dim = template.dim();
        match self.dim {
            Some(d) if d != dim => {
                return Err(Error::DimMismatch {
                    expected: d,
                    actual: dim,
                })
            }
            Some(_) => {}
            None => check_dim(dim)?,
        }
        let decompressed = codec::decompress(&template)?;
        let normalized = ConcatTemplate::from_concatenated(decompressed.values())?;

        self.dim = Some(dim);
        self.cache
            .extend(normalized.concatenated().iter().map(|&v| v as f32));
        let seq = self.next_seq;
        self.next_seq += 1;
        self.entries.push(GalleryEntry {
            subject_id: subject_id.to_owned(),
            template,
            enroll_seq: seq,
        });
        Ok(seq)
    }

    fn probe_vector(&self, probe: &ConcatTemplate) -> Result<Vec<f32>> {
        let dim = self.dim.ok_or(Error::EmptyGallery)?;
        if self.entries.is_empty() {
            return Err(Error::EmptyGallery);
        }
        if probe.concat_dim() != dim {
            return Err(Error::DimMismatch {
                expected: dim,
                actual: probe.concat_dim(),
            });
        }
        Ok(probe.concatenated().iter().map(|&v| v as f32).collect())
    }

    /// Concatenated dot product of the probe against every entry, in enrollment order.
    pub fn score_all(&self, probe: &ConcatTemplate) -> Result<Vec<f64>> {
        let p = self.probe_vector(probe)?;
        let dim = p.len();
        Ok(self
            .cache
            .par_chunks(dim * SEARCH_CHUNK)
            .flat_map_iter(|block| block.chunks_exact(dim).map(|g| dot_f32(g, &p)))
            .collect())
    }

    /// Exhaustive search returning the top `rank_budget` entries by score.
    ///
    /// Ties are broken by ascending enrollment sequence. Results are identical
    /// for any thread count.
    pub fn search(&self, probe: &ConcatTemplate, policy: &SearchPolicy) -> Result<Vec<Candidate>> {
        let p = self.probe_vector(probe)?;
        let dim = p.len();
        let k = policy.rank_budget.min(self.entries.len());

        let partial: Vec<Vec<(f64, u64)>> = self
            .cache
            .par_chunks(dim * SEARCH_CHUNK)
            .enumerate()
            .map(|(chunk, block)| {
                let base = chunk * SEARCH_CHUNK;
                let scored = block
                    .chunks_exact(dim)
                    .enumerate()
                    .map(|(i, g)| (dot_f32(g, &p), self.entries[base + i].enroll_seq))
                    .collect();
                top_k(scored, k)
            })
            .collect();

        let merged = top_k(partial.into_iter().flatten().collect(), k);
        Ok(merged
            .into_iter()
            .enumerate()
            .map(|(i, (dot, seq))| Candidate {
                subject_id: self.entry_by_seq(seq).subject_id.clone(),
                score: score_from_dot(dot),
                rank: i + 1,
                enroll_seq: seq,
            })
            .collect())
    }

    fn entry_by_seq(&self, seq: u64) -> &GalleryEntry {
        // Sequence numbers are assigned in push order starting from 0.
        &self.entries[seq as usize]
    }

    /// Best score of the probe over all templates enrolled under `subject_id`.
    pub fn verify(&self, probe: &ConcatTemplate, subject_id: &str) -> Result<SimilarityScore> {
        let p = self.probe_vector(probe)?;
        let dim = p.len();
        self.entries
            .iter()
            .enumerate()
            .filter(|(_, e)| e.subject_id == subject_id)
            .map(|(i, _)| dot_f32(&self.cache[i * dim..(i + 1) * dim], &p))
            .max_by(f64::total_cmp)
            .map(score_from_dot)
            .ok_or_else(|| Error::UnknownSubject(subject_id.to_owned()))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let dim = self.dim.unwrap_or(0);
        let mut out =
            Vec::with_capacity(18 + self.entries.len() * (template_size(dim) + 2 + 16));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u64).to_le_bytes());
        for e in &self.entries {
            out.extend_from_slice(&(e.subject_id.len() as u16).to_le_bytes());
            out.extend_from_slice(e.subject_id.as_bytes());
            e.template.write_to(&mut out);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::CorruptGallery("bad magic".into()));
        }
        let version = r.u16()?;
        if version != VERSION {
            return Err(Error::CorruptGallery(format!(
                "unsupported version {version}"
            )));
        }
        let dim = r.u32()? as usize;
        let count = r.u64()?;
        let mut gallery = if dim == 0 {
            Gallery::new()
        } else {
            Gallery::with_dim(dim).map_err(|e| Error::CorruptGallery(e.to_string()))?
        };
        if dim == 0 && count > 0 {
            return Err(Error::CorruptGallery(
                "entries present but dimension is 0".into(),
            ));
        }
        let min_entry = (2 + template_size(dim)) as u64;
        if count.saturating_mul(min_entry) > (bytes.len() - r.pos) as u64 {
            return Err(Error::TruncatedGallery);
        }
        for _ in 0..count {
            let id_len = usize::from(r.u16()?);
            let id = std::str::from_utf8(r.take(id_len)?)
                .map_err(|_| Error::CorruptGallery("subject id is not UTF-8".into()))?
                .to_owned();
            let template = CompressedTemplate::from_bytes(r.take(template_size(dim))?)?;
            gallery
                .enroll(&id, template)
                .map_err(|e| Error::CorruptGallery(e.to_string()))?;
        }
        if r.pos != bytes.len() {
            return Err(Error::CorruptGallery(format!(
                "{} trailing bytes",
                bytes.len() - r.pos
            )));
        }
        Ok(gallery)
    }

    /// Writes the gallery file, replacing `path` atomically.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut tmp = path.as_os_str().to_owned();
        tmp.push(".tmp");
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(&self.to_bytes())?;
            f.sync_all()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

fn check_dim(dim: usize) -> Result<()> {
    if dim < 2 || dim % 2 != 0 || dim > u32::MAX as usize {
        return Err(Error::InvalidEmbedding(format!(
            "gallery templates hold two equal branches; dimension {dim} is not a positive even number"
        )));
    }
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).ok_or(Error::TruncatedGallery)?;
        let s = self.bytes.get(self.pos..end).ok_or(Error::TruncatedGallery)?;
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Open-set decision: accept the top candidate iff its score is at or above the threshold.
pub fn decide_open_set(candidates: &[Candidate], policy: &SearchPolicy) -> Decision {
    match candidates.first() {
        Some(top) if top.score.value() >= policy.threshold => Decision::Accept(top.subject_id.clone()),
        _ => Decision::Reject,
    }
}

/// Per-probe latency of a full 1:N scan.
#[derive(Debug, Clone, Serialize)]
pub struct LatencyStats {
    pub threads: usize,
    pub gallery_size: usize,
    pub probes: usize,
    pub mean_ms: f64,
    pub median_ms: f64,
    pub min_ms: f64,
    pub max_ms: f64,
    pub std_ms: f64,
}

impl LatencyStats {
    fn from_samples(threads: usize, gallery_size: usize, mut ms: Vec<f64>) -> Self {
        let n = ms.len().max(1) as f64;
        let mean = ms.iter().sum::<f64>() / n;
        let var = ms.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        ms.sort_by(f64::total_cmp);
        let median = match ms.len() {
            0 => 0.0,
            l if l % 2 == 1 => ms[l / 2],
            l => 0.5 * (ms[l / 2 - 1] + ms[l / 2]),
        };
        Self {
            threads,
            gallery_size,
            probes: ms.len(),
            mean_ms: mean,
            median_ms: median,
            min_ms: ms.first().copied().unwrap_or(0.0),
            max_ms: ms.last().copied().unwrap_or(0.0),
            std_ms: var.sqrt(),
        }
    }
}

pub fn thread_pool(threads: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))
}

/// Times one full scan per probe on a dedicated pool of `threads` workers.
pub fn bench_search(g: &Gallery, probes: &[ConcatTemplate], threads: usize) -> Result<LatencyStats> {
    let pool = thread_pool(threads)?;
    let policy = SearchPolicy::new(0.0, 1)?;
    let samples = pool.install(|| {
        // Warm the pool and caches once.
        if let Some(p) = probes.first() {
            g.search(p, &policy)?;
        }
        probes
            .iter()
            .map(|p| {
                let start = Instant::now();
                let top = g.search(p, &policy)?;
                let elapsed = start.elapsed().as_secs_f64() * 1e3;
                std::hint::black_box(top);
                // Sub-resolution timings are reported as the smallest positive value.
                Ok(elapsed.max(f64::MIN_POSITIVE))
            })
            .collect::<Result<Vec<f64>>>()
    })?;
    Ok(LatencyStats::from_samples(threads, g.len(), samples))
}
