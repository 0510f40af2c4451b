//! Declarative evaluation protocols (JSON) and the pipeline that turns one
//! into an [`EvalReport`].
//!
//! ```json
//! {
//!   "name": "toy-50",
//!   "gallery":         [{"id": "g0", "subject": "palm000", "source": "img/palm000_0.pgm"}],
//!   "mated_probes":    [{"id": "p1", "subject": "palm000", "source": "img/palm000_1.pgm"}],
//!   "nonmated_probes": [{"id": "n0", "subject": "palm049", "source": "img/palm049_0.pgm"}],
//!   "template_dims": [768]
//! }
//! ```
//!
//! With the toy extractor `source` is an image path relative to the protocol
//! file (224×224, or any size when `keypoints` are given for ROI alignment);
//! with embeddings from a file it is the record id. `tags` are free-form and
//! echoed into the per-probe report.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codec::compress;
use crate::embedding::{ConcatTemplate, Embedding};
use crate::error::{Error, Result};
use crate::eval::{
    auc, error_reject_curve, fnir_at_fpir, fnir_fpir, rank_r_rate, tar_at_far, template_size_sweep,
    ErrorMetric, EvalReport, GalleryMode, IdentTrial, LabeledScoreSet, ProbeComparisons, ProbeRow,
    RankRow, RawSample, ReportConfig, DEFAULT_FPIR_TARGET,
};
use crate::extractor::{read_embeddings, ToyExtractor};
use crate::gallery::{Gallery, SearchPolicy};
use crate::geometry::{estimate_homography, warp_to_roi, KeypointSet, KEYPOINT_COUNT};
use crate::image::{Image, RoiImage, ROI_SIZE};
use crate::quality::{quality_log_variance, QualityMethod, QualityValue, DEFAULT_LOG_SIGMA};
use crate::reduce::ReducerModel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolItem {
    pub id: String,
    pub subject: String,
    pub source: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub keypoints: Option<Vec<[f64; 2]>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Protocol {
    pub name: String,
    pub gallery: Vec<ProtocolItem>,
    pub mated_probes: Vec<ProtocolItem>,
    #[serde(default)]
    pub nonmated_probes: Vec<ProtocolItem>,
    /// Concatenated template dimensions for the size sweep; the input
    /// dimension is always included.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub template_dims: Vec<usize>,
}

impl Protocol {
    pub fn from_json(text: &str) -> Result<Self> {
        let p: Protocol =
            serde_json::from_str(text).map_err(|e| Error::Parse(format!("protocol: {e}")))?;
        p.validate()?;
        Ok(p)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("protocol serializes") + "\n"
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(format!("protocol: {m}")));
        if self.gallery.is_empty() {
            return bad("empty gallery".into());
        }
        if self.mated_probes.is_empty() {
            return bad("no mated probes".into());
        }
        let mut ids = BTreeSet::new();
        for item in self.items() {
            if item.id.is_empty() || item.subject.is_empty() {
                return bad("items need non-empty id and subject".into());
            }
            if !ids.insert(item.id.as_str()) {
                return bad(format!("duplicate item id '{}'", item.id));
            }
            if let Some(k) = &item.keypoints {
                if k.len() != KEYPOINT_COUNT {
                    return bad(format!("'{}' has {} keypoints, expected {KEYPOINT_COUNT}", item.id, k.len()));
                }
            }
        }
        let enrolled: BTreeSet<&str> = self.gallery.iter().map(|i| i.subject.as_str()).collect();
        if let Some(p) = self.mated_probes.iter().find(|p| !enrolled.contains(p.subject.as_str())) {
            return bad(format!("mated probe '{}' has no enrolled subject", p.id));
        }
        if let Some(p) = self.nonmated_probes.iter().find(|p| enrolled.contains(p.subject.as_str())) {
            return bad(format!("nonmated probe '{}' has an enrolled subject", p.id));
        }
        Ok(())
    }

    /// Gallery, then mated probes, then nonmated probes.
    pub fn items(&self) -> impl Iterator<Item = &ProtocolItem> {
        self.gallery
            .iter()
            .chain(&self.mated_probes)
            .chain(&self.nonmated_probes)
    }

    pub fn gallery_mode(&self) -> GalleryMode {
        let subjects: BTreeSet<&str> = self.gallery.iter().map(|i| i.subject.as_str()).collect();
        if subjects.len() == self.gallery.len() {
            GalleryMode::SingleTemplate
        } else {
            GalleryMode::MultiTemplate
        }
    }
}

/// Where raw branch embeddings come from.
pub enum EmbeddingSource {
    /// Toy extractor over images resolved relative to `base_dir`.
    Toy { base_dir: PathBuf },
    /// Records of an embeddings file, keyed by id.
    File { records: HashMap<String, RawSample> },
}

impl EmbeddingSource {
    pub fn toy(base_dir: impl Into<PathBuf>) -> Self {
        EmbeddingSource::Toy { base_dir: base_dir.into() }
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let mut records = HashMap::new();
        for s in read_embeddings(path)? {
            if records.contains_key(&s.subject) {
                return Err(Error::Parse(format!("duplicate embedding id '{}'", s.subject)));
            }
            records.insert(s.subject.clone(), s);
        }
        Ok(EmbeddingSource::File { records })
    }

    /// Fails on the first source that cannot be resolved, before any extraction.
    pub fn check(&self, protocol: &Protocol) -> Result<()> {
        for item in protocol.items() {
            match self {
                EmbeddingSource::Toy { base_dir } => {
                    let p = base_dir.join(&item.source);
                    if !p.is_file() {
                        return Err(Error::InvalidConfig(format!("missing file {}", p.display())));
                    }
                }
                EmbeddingSource::File { records } => {
                    if !records.contains_key(&item.source) {
                        return Err(Error::InvalidConfig(format!("no embedding with id '{}'", item.source)));
                    }
                }
            }
        }
        Ok(())
    }

    /// Raw branch embeddings plus the image-based quality when requested.
    pub fn extract(&self, item: &ProtocolItem, quality: QualityMethod) -> Result<Extracted> {
        match self {
            EmbeddingSource::Toy { base_dir } => {
                let keypoints = item
                    .keypoints
                    .as_ref()
                    .map(|k| -> Result<KeypointSet> {
                        let pts: [[f64; 2]; KEYPOINT_COUNT] = k
                            .as_slice()
                            .try_into()
                            .map_err(|_| Error::InvalidConfig("keypoint count".into()))?;
                        KeypointSet::new(pts)
                    })
                    .transpose()?;
                let roi = load_roi(&base_dir.join(&item.source), keypoints.as_ref())?;
                let (v, r) = ToyExtractor::new().extract_raw(&roi)?;
                let q = match quality {
                    QualityMethod::LogVariance => quality_log_variance(roi.image(), DEFAULT_LOG_SIGMA)?,
                    _ => QualityValue::new(v.raw_norm() + r.raw_norm(), QualityMethod::EmbeddingNorm)?,
                };
                Ok(Extracted { branch_v: v, branch_r: r, quality: q })
            }
            EmbeddingSource::File { records } => {
                let rec = records
                    .get(&item.source)
                    .ok_or_else(|| Error::InvalidConfig(format!("no embedding with id '{}'", item.source)))?;
                if quality == QualityMethod::LogVariance {
                    return Err(Error::InvalidConfig("log-variance quality needs images".into()));
                }
                let q = QualityValue::new(
                    rec.branch_v.raw_norm() + rec.branch_r.raw_norm(),
                    QualityMethod::EmbeddingNorm,
                )?;
                Ok(Extracted { branch_v: rec.branch_v.clone(), branch_r: rec.branch_r.clone(), quality: q })
            }
        }
    }
}

/// Loads an image as a ROI, aligning it with `keypoints` when given.
pub fn load_roi(path: &Path, keypoints: Option<&KeypointSet>) -> Result<RoiImage> {
    let img = Image::read(path)?;
    match keypoints {
        Some(k) => warp_to_roi(&img, &estimate_homography(k, &KeypointSet::default_destination())?),
        None if img.width() == ROI_SIZE && img.height() == ROI_SIZE => {
            RoiImage::from_image_lossy(&img.to_gray())
        }
        None => Err(Error::InvalidImage(format!(
            "{} is {}x{}; expected {ROI_SIZE}x{ROI_SIZE} or keypoints",
            path.display(),
            img.width(),
            img.height()
        ))),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Extracted {
    pub branch_v: Embedding,
    pub branch_r: Embedding,
    pub quality: QualityValue,
}

/// Optional per-branch reducers applied before compression.
#[derive(Debug, Clone, Default)]
pub struct Reducers {
    pub branch_v: Option<ReducerModel>,
    pub branch_r: Option<ReducerModel>,
}

impl Reducers {
    pub fn new(branch_v: Option<ReducerModel>, branch_r: Option<ReducerModel>) -> Result<Self> {
        if branch_v.is_some() != branch_r.is_some() {
            return Err(Error::InvalidConfig("reducers must be given for both branches or neither".into()));
        }
        Ok(Self { branch_v, branch_r })
    }

    /// Reducers consume unit-normalized branch embeddings.
    pub fn template(&self, v: &Embedding, r: &Embedding) -> Result<ConcatTemplate> {
        match (&self.branch_v, &self.branch_r) {
            (Some(mv), Some(mr)) => {
                ConcatTemplate::from_unit(mv.reduce(&v.normalized()?)?, mr.reduce(&r.normalized()?)?)
            }
            _ => ConcatTemplate::from_raw(v, r),
        }
    }
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub threshold: f64,
    pub rank: usize,
    pub quality: QualityMethod,
    pub far_targets: Vec<f64>,
    pub fpir_target: f64,
    pub error_metric: ErrorMetric,
    pub reject_fractions: Vec<f64>,
    pub seed: u64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            threshold: 0.5,
            rank: 1,
            quality: QualityMethod::EmbeddingNorm,
            far_targets: vec![0.01, 0.1, 1.0],
            fpir_target: DEFAULT_FPIR_TARGET,
            error_metric: ErrorMetric::default(),
            reject_fractions: (0..=10).map(|k| k as f64 * 0.05).collect(),
            seed: 0,
        }
    }
}

const REPORT_RANKS: [usize; 5] = [1, 2, 5, 10, 20];

/// Runs a full evaluation. Deterministic: output depends only on inputs.
pub fn evaluate(
    protocol: &Protocol,
    protocol_name: &str,
    source: &EmbeddingSource,
    reducers: &Reducers,
    opts: &EvalOptions,
) -> Result<EvalReport> {
    protocol.validate()?;
    source.check(protocol)?;
    let policy = SearchPolicy::new(opts.threshold, opts.rank)?;
    let items: Vec<&ProtocolItem> = protocol.items().collect();
    let extracted = items
        .par_iter()
        .map(|item| source.extract(item, opts.quality))
        .collect::<Result<Vec<_>>>()?;
    let templates = extracted
        .par_iter()
        .map(|e| reducers.template(&e.branch_v, &e.branch_r))
        .collect::<Result<Vec<_>>>()?;

    let n_gallery = protocol.gallery.len();
    let mut gallery = Gallery::new();
    for (item, t) in protocol.gallery.iter().zip(&templates) {
        gallery.enroll(&item.subject, compress(&t.to_embedding())?)?;
    }

    let full = SearchPolicy::new(opts.threshold, gallery.len())?;
    let probes: Vec<(usize, bool)> = (n_gallery..items.len())
        .map(|k| (k, k < n_gallery + protocol.mated_probes.len()))
        .collect();
    let mut scores = LabeledScoreSet::default();
    let mut trials = Vec::with_capacity(probes.len());
    let mut comparisons = Vec::with_capacity(probes.len());
    let mut rows = Vec::with_capacity(probes.len());
    for &(k, mated) in &probes {
        let item = items[k];
        let all = gallery.score_all(&templates[k])?;
        let mut genuine = Vec::new();
        let mut impostor = Vec::new();
        for (entry, dot) in gallery.entries().iter().zip(&all) {
            let s = crate::similarity::score_from_dot(*dot).value();
            if entry.subject_id == item.subject {
                genuine.push(s);
            } else {
                impostor.push(s);
            }
        }
        scores.genuine.extend_from_slice(&genuine);
        scores.impostor.extend_from_slice(&impostor);
        let trial = IdentTrial {
            probe_subject: item.subject.clone(),
            mated,
            candidates: gallery.search(&templates[k], &full)?,
        };
        let top = &trial.candidates[0];
        rows.push(ProbeRow {
            probe_id: item.id.clone(),
            subject: item.subject.clone(),
            mated,
            quality: extracted[k].quality.value,
            top_subject: top.subject_id.clone(),
            top_score: top.score.value(),
            mate_rank: trial.mate().map(|m| m.0),
            mate_score: trial.mate().map(|m| m.1),
        });
        comparisons.push(ProbeComparisons {
            probe_id: item.id.clone(),
            quality: extracted[k].quality,
            genuine,
            impostor,
        });
        trials.push(trial);
    }

    let tar = opts
        .far_targets
        .iter()
        .map(|&f| tar_at_far(&scores, f))
        .collect::<Result<Vec<_>>>()?;
    let mut ranks: Vec<usize> = REPORT_RANKS
        .iter()
        .copied()
        .chain([opts.rank])
        .filter(|&r| r <= gallery.len())
        .collect();
    ranks.sort_unstable();
    ranks.dedup();
    let rank_r = ranks
        .into_iter()
        .map(|r| Ok(RankRow { rank: r, rate: rank_r_rate(&trials, r)? }))
        .collect::<Result<Vec<_>>>()?;
    let has_nonmated = !protocol.nonmated_probes.is_empty();
    let open_set = fnir_fpir(&trials, policy.threshold(), policy.rank_budget())?;
    let at_fpir = if has_nonmated {
        fnir_at_fpir(&trials, opts.fpir_target, policy.rank_budget())?
    } else {
        crate::eval::FnirAtFpir { fpir_target: opts.fpir_target, rates: open_set }
    };
    let error_reject = error_reject_curve(&comparisons, &opts.reject_fractions, opts.error_metric)?;

    let raw: Vec<RawSample> = items
        .iter()
        .zip(&extracted)
        .map(|(item, e)| RawSample {
            subject: item.subject.clone(),
            branch_v: e.branch_v.clone(),
            branch_r: e.branch_r.clone(),
        })
        .collect();
    let input_dim = raw[0].branch_v.dim() + raw[0].branch_r.dim();
    let mut sweep_models = BTreeMap::new();
    let mut dims = vec![input_dim];
    if let (Some(mv), Some(mr)) = (&reducers.branch_v, &reducers.branch_r) {
        let d = mv.output_dim() + mr.output_dim();
        sweep_models.insert(d, (mv.clone(), mr.clone()));
        dims.push(d);
    }
    dims.extend(protocol.template_dims.iter().copied());
    dims.sort_unstable_by(|a, b| b.cmp(a));
    dims.dedup();
    let sweep_far = opts.far_targets.first().copied().unwrap_or(crate::eval::DEFAULT_FAR_TARGET);
    let template_size = template_size_sweep(&raw, &dims, &sweep_models, sweep_far)?;

    let gallery_subjects = protocol
        .gallery
        .iter()
        .map(|i| i.subject.as_str())
        .collect::<BTreeSet<_>>()
        .len();
    Ok(EvalReport {
        config: ReportConfig {
            protocol: protocol_name.to_string(),
            threshold: opts.threshold,
            rank: opts.rank,
            gallery_size: gallery.len(),
            gallery_subjects,
            gallery_mode: protocol.gallery_mode(),
            mated_probes: protocol.mated_probes.len(),
            nonmated_probes: protocol.nonmated_probes.len(),
            quality_method: opts.quality,
            quality_note: quality_note(opts.quality).to_string(),
            far_targets: opts.far_targets.clone(),
            fpir_target: opts.fpir_target,
            error_metric: opts.error_metric,
            seed: opts.seed,
        },
        auc: auc(&scores)?,
        tar_at_far: tar,
        rank_r,
        open_set_at_policy: open_set,
        fnir_at_fpir: at_fpir,
        error_reject,
        template_size,
        probes: rows,
    })
}

fn quality_note(m: QualityMethod) -> &'static str {
    match m {
        QualityMethod::EmbeddingNorm => "sum of raw branch L2 norms before reduction and normalization",
        QualityMethod::LogVariance => "variance of the Laplacian of Gaussian (sigma 1) over the ROI interior",
        QualityMethod::External => "externally supplied quality scores",
    }
}

/// Evaluates the protocol at `path`, resolving toy-extractor images relative to it.
pub fn evaluate_file(
    path: &Path,
    source: Option<EmbeddingSource>,
    reducers: &Reducers,
    opts: &EvalOptions,
) -> Result<EvalReport> {
    let protocol = Protocol::load(path)?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let source = source.unwrap_or_else(|| EmbeddingSource::toy(base));
    evaluate(&protocol, &protocol.name, &source, reducers, opts)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn item(id: &str, subject: &str) -> ProtocolItem {
        ProtocolItem { id: id.into(), subject: subject.into(), source: id.into(), keypoints: None, tags: vec![] }
    }

    fn protocol() -> Protocol {
        Protocol {
            name: "t".into(),
            gallery: vec![item("g0", "a"), item("g1", "b")],
            mated_probes: vec![item("p0", "a"), item("p1", "b")],
            nonmated_probes: vec![item("n0", "c")],
            template_dims: vec![],
        }
    }

    fn records() -> EmbeddingSource {
        let mk = |id: &str, v: [f64; 2], r: [f64; 2]| {
            (
                id.to_string(),
                RawSample {
                    subject: id.into(),
                    branch_v: Embedding::new(v.to_vec()).unwrap(),
                    branch_r: Embedding::new(r.to_vec()).unwrap(),
                },
            )
        };
        EmbeddingSource::File {
            records: [
                mk("g0", [1.0, 0.0], [1.0, 0.1]),
                mk("g1", [0.0, 1.0], [0.1, 1.0]),
                mk("p0", [0.9, 0.1], [1.0, 0.0]),
                mk("p1", [0.1, 0.9], [0.0, 1.0]),
                mk("n0", [-1.0, 0.2], [-0.5, -0.5]),
            ]
            .into_iter()
            .collect(),
        }
    }

    #[test]
    fn validation() {
        assert!(protocol().validate().is_ok());
        let mut p = protocol();
        p.mated_probes.push(item("g0", "a"));
        assert!(p.validate().is_err());
        let mut p = protocol();
        p.nonmated_probes.push(item("x", "a"));
        assert!(p.validate().is_err());
        let mut p = protocol();
        p.mated_probes.push(item("y", "zzz"));
        assert!(p.validate().is_err());
        assert!(Protocol::from_json("{\"name\":\"x\"}").is_err());
    }

    #[test]
    fn json_roundtrip() {
        let p = protocol();
        assert_eq!(Protocol::from_json(&p.to_json()).unwrap(), p);
    }

    #[test]
    fn tiny_evaluation() {
        let report = evaluate(&protocol(), "t", &records(), &Reducers::default(), &EvalOptions::default()).unwrap();
        assert_eq!(report.config.gallery_mode, GalleryMode::SingleTemplate);
        assert_eq!(report.rank_r[0], RankRow { rank: 1, rate: 100.0 });
        assert_eq!(report.auc, 1.0);
        assert_eq!(report.probes.len(), 3);
        assert_eq!(report.template_size[0].template_bytes, 8);
    }

    #[test]
    fn missing_source_fails_early() {
        let mut p = protocol();
        p.gallery[0].source = "nope".into();
        let err = evaluate(&p, "t", &records(), &Reducers::default(), &EvalOptions::default());
        assert!(matches!(err, Err(Error::InvalidConfig(_))));
    }
}
