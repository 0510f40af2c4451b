//! Verification and identification metrics.
//!
//! All thresholds use "at or above" semantics: a comparison with score `s`
//! is accepted at threshold `t` iff `s >= t`. Operating points are chosen
//! from the observed scores plus the `-inf` and `+inf` sentinels. Rates are
//! percentages.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::codec;
use crate::embedding::{ConcatTemplate, Embedding};
use crate::error::{Error, Result};
use crate::gallery::Candidate;
use crate::quality::{reject_by_quality, QualityMethod, QualityValue};
use crate::reduce::ReducerModel;
use crate::similarity::concat_score;

/// Verification operating point used throughout: FAR = 0.01 %.
pub const DEFAULT_FAR_TARGET: f64 = 0.01;
/// Open-set operating point: FPIR = 1 %.
pub const DEFAULT_FPIR_TARGET: f64 = 1.0;

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct LabeledScoreSet {
    pub genuine: Vec<f64>,
    pub impostor: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TarAtFar {
    pub far_target: f64,
    pub tar: f64,
    pub threshold: f64,
    pub achieved_far: f64,
    /// Set when the impostor set is too small to resolve `far_target`.
    pub degenerate: bool,
}

fn percent(count: usize, total: usize) -> f64 {
    100.0 * count as f64 / total as f64
}

/// Number of values in an ascending slice that are `>= t`.
fn count_at_or_above(sorted: &[f64], t: f64) -> usize {
    sorted.len() - sorted.partition_point(|&s| s < t)
}

fn sorted(v: &[f64]) -> Vec<f64> {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

/// Ascending candidate thresholds: every observed score plus both infinities.
fn candidate_thresholds<'a>(sets: impl IntoIterator<Item = &'a [f64]>) -> Vec<f64> {
    let mut c: Vec<f64> = sets.into_iter().flatten().copied().collect();
    c.push(f64::NEG_INFINITY);
    c.push(f64::INFINITY);
    c.sort_by(f64::total_cmp);
    c.dedup();
    c
}

/// TAR at the smallest threshold whose FAR does not exceed `far_target` percent.
pub fn tar_at_far(scores: &LabeledScoreSet, far_target: f64) -> Result<TarAtFar> {
    if scores.genuine.is_empty() || scores.impostor.is_empty() {
        return Err(Error::EmptyScoreSet);
    }
    if !(far_target > 0.0 && far_target <= 100.0) {
        return Err(Error::InvalidConfig(format!(
            "FAR target {far_target} outside (0, 100]"
        )));
    }
    let gen = sorted(&scores.genuine);
    let imp = sorted(&scores.impostor);
    let n_imp = imp.len();
    let candidates = candidate_thresholds([gen.as_slice(), imp.as_slice()]);
    // FAR is non-increasing in t and reaches 0 at +inf.
    let idx = candidates.partition_point(|&t| {
        100.0 * count_at_or_above(&imp, t) as f64 > far_target * n_imp as f64
    });
    let threshold = candidates[idx];
    Ok(TarAtFar {
        far_target,
        tar: percent(count_at_or_above(&gen, threshold), gen.len()),
        threshold,
        achieved_far: percent(count_at_or_above(&imp, threshold), n_imp),
        degenerate: far_target * (n_imp as f64) < 100.0,
    })
}

/// Area under the ROC curve (probability a genuine score beats an impostor
/// score, ties counting one half).
pub fn auc(scores: &LabeledScoreSet) -> Result<f64> {
    if scores.genuine.is_empty() || scores.impostor.is_empty() {
        return Err(Error::EmptyScoreSet);
    }
    let imp = sorted(&scores.impostor);
    let mut wins = 0.0f64;
    for &g in &scores.genuine {
        let below = imp.partition_point(|&s| s < g);
        let ties = imp.partition_point(|&s| s <= g) - below;
        wins += below as f64 + 0.5 * ties as f64;
    }
    Ok(wins / (scores.genuine.len() as f64 * imp.len() as f64))
}

/// One identification search and its ranked result list.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IdentTrial {
    pub probe_subject: String,
    pub mated: bool,
    pub candidates: Vec<Candidate>,
}

impl IdentTrial {
    /// Rank and score of the best-scoring template of the probe's subject.
    pub fn mate(&self) -> Option<(usize, f64)> {
        self.candidates
            .iter()
            .find(|c| c.subject_id == self.probe_subject)
            .map(|c| (c.rank, c.score.value()))
    }

    pub fn top_score(&self) -> Option<f64> {
        self.candidates.first().map(|c| c.score.value())
    }
}

/// Percent of mated searches whose mate is at rank `r` or better.
pub fn rank_r_rate(trials: &[IdentTrial], r: usize) -> Result<f64> {
    let mated: Vec<_> = trials.iter().filter(|t| t.mated).collect();
    if mated.is_empty() {
        return Err(Error::NoMatedTrials);
    }
    let hits = mated
        .iter()
        .filter(|t| t.mate().is_some_and(|(rank, _)| rank <= r))
        .count();
    Ok(percent(hits, mated.len()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OpenSetRates {
    pub threshold: f64,
    pub rank: usize,
    pub fnir: f64,
    pub fpir: f64,
}

/// Scores that decide the open-set rates: top-1 of every nonmated search and
/// mate score of every mated search whose mate is within rank `r`.
struct OpenSetScores {
    nonmated_top: Vec<f64>,
    mated_in_rank: Vec<f64>,
    mated_total: usize,
}

fn open_set_scores(trials: &[IdentTrial], r: usize) -> Result<OpenSetScores> {
    let mated_total = trials.iter().filter(|t| t.mated).count();
    let nonmated_total = trials.len() - mated_total;
    if mated_total == 0 || nonmated_total == 0 {
        return Err(Error::InsufficientTrials(format!(
            "{mated_total} mated and {nonmated_total} nonmated searches; need both"
        )));
    }
    let nonmated_top = sorted(
        &trials
            .iter()
            .filter(|t| !t.mated)
            .map(|t| t.top_score().unwrap_or(f64::NEG_INFINITY))
            .collect::<Vec<_>>(),
    );
    let mated_in_rank = sorted(
        &trials
            .iter()
            .filter(|t| t.mated)
            .filter_map(|t| t.mate().filter(|&(rank, _)| rank <= r).map(|(_, s)| s))
            .collect::<Vec<_>>(),
    );
    Ok(OpenSetScores {
        nonmated_top,
        mated_in_rank,
        mated_total,
    })
}

impl OpenSetScores {
    fn rates(&self, threshold: f64, rank: usize) -> OpenSetRates {
        let fp = count_at_or_above(&self.nonmated_top, threshold);
        let hits = count_at_or_above(&self.mated_in_rank, threshold);
        OpenSetRates {
            threshold,
            rank,
            fnir: percent(self.mated_total - hits, self.mated_total),
            fpir: percent(fp, self.nonmated_top.len()),
        }
    }
}

/// FNIR and FPIR at threshold `t` and rank budget `r`.
pub fn fnir_fpir(trials: &[IdentTrial], t: f64, r: usize) -> Result<OpenSetRates> {
    Ok(open_set_scores(trials, r)?.rates(t, r))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FnirAtFpir {
    pub fpir_target: f64,
    #[serde(flatten)]
    pub rates: OpenSetRates,
}

/// Sweeps the threshold for the FPIR closest to `fpir_target`; among equally
/// close thresholds the smallest wins.
pub fn fnir_at_fpir(trials: &[IdentTrial], fpir_target: f64, r: usize) -> Result<FnirAtFpir> {
    let s = open_set_scores(trials, r)?;
    let candidates = candidate_thresholds([s.nonmated_top.as_slice(), s.mated_in_rank.as_slice()]);
    let mut best = s.rates(candidates[0], r);
    for &t in &candidates[1..] {
        let rates = s.rates(t, r);
        if (rates.fpir - fpir_target).abs() < (best.fpir - fpir_target).abs() {
            best = rates;
        }
    }
    Ok(FnirAtFpir {
        fpir_target,
        rates: best,
    })
}

/// Comparisons of one probe, with its quality.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeComparisons {
    pub probe_id: String,
    pub quality: QualityValue,
    pub genuine: Vec<f64>,
    pub impostor: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ErrorMetric {
    /// FNMR at the threshold fixed from the unfiltered set at `far_target`.
    FnmrAtFixedThreshold { far_target: f64 },
    /// FNMR with the threshold re-derived from the kept probes.
    FnmrAtRecalibratedThreshold { far_target: f64 },
}

impl Default for ErrorMetric {
    fn default() -> Self {
        ErrorMetric::FnmrAtFixedThreshold {
            far_target: DEFAULT_FAR_TARGET,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RejectPoint {
    pub reject_fraction: f64,
    pub rejected: usize,
    pub threshold: f64,
    pub error: f64,
}

fn pooled(probes: &[ProbeComparisons], keep: impl Iterator<Item = usize>) -> LabeledScoreSet {
    let mut set = LabeledScoreSet::default();
    for i in keep {
        set.genuine.extend_from_slice(&probes[i].genuine);
        set.impostor.extend_from_slice(&probes[i].impostor);
    }
    set
}

fn fnmr(genuine: &[f64], threshold: f64) -> Result<f64> {
    if genuine.is_empty() {
        return Err(Error::EmptyScoreSet);
    }
    Ok(percent(genuine.iter().filter(|&&s| s < threshold).count(), genuine.len()))
}

/// Error after rejecting the lowest-quality fraction of probes, for each
/// requested fraction (output sorted by fraction).
pub fn error_reject_curve(
    probes: &[ProbeComparisons],
    fractions: &[f64],
    metric: ErrorMetric,
) -> Result<Vec<RejectPoint>> {
    let qualities: Vec<QualityValue> = probes.iter().map(|p| p.quality).collect();
    let (far_target, fixed) = match metric {
        ErrorMetric::FnmrAtFixedThreshold { far_target } => (far_target, true),
        ErrorMetric::FnmrAtRecalibratedThreshold { far_target } => (far_target, false),
    };
    let base = tar_at_far(&pooled(probes, 0..probes.len()), far_target)?;
    let mut fractions = fractions.to_vec();
    fractions.sort_by(f64::total_cmp);
    fractions
        .into_iter()
        .map(|f| {
            if f >= 1.0 {
                return Err(Error::AllRejected(f));
            }
            let (kept, rejected) = reject_by_quality(&qualities, f)?;
            let set = pooled(probes, kept.into_iter());
            let threshold = if fixed {
                base.threshold
            } else {
                tar_at_far(&set, far_target)?.threshold
            };
            Ok(RejectPoint {
                reject_fraction: f,
                rejected: rejected.len(),
                threshold,
                error: fnmr(&set.genuine, threshold)?,
            })
        })
        .collect()
}

/// All-pairs verification scores of labeled templates (each unordered pair once).
pub fn all_pairs_scores(samples: &[(String, ConcatTemplate)]) -> Result<LabeledScoreSet> {
    let mut set = LabeledScoreSet::default();
    for i in 0..samples.len() {
        for j in i + 1..samples.len() {
            let s = concat_score(&samples[i].1, &samples[j].1)?.value();
            if samples[i].0 == samples[j].0 {
                set.genuine.push(s);
            } else {
                set.impostor.push(s);
            }
        }
    }
    Ok(set)
}

/// A labeled sample with raw (unnormalized) branch embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct RawSample {
    pub subject: String,
    pub branch_v: Embedding,
    pub branch_r: Embedding,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRow {
    pub branch_dim: usize,
    pub template_dim: usize,
    pub template_bytes: usize,
    pub tar: f64,
    pub threshold: f64,
}

/// Reduces, compresses and scores the samples once per template dimension.
///
/// `dims` are concatenated dimensions, split evenly between the branches.
/// A dimension equal to the input's concatenated dimension with no model in
/// `reducers` is evaluated without reduction.
pub fn template_size_sweep(
    samples: &[RawSample],
    dims: &[usize],
    reducers: &BTreeMap<usize, (ReducerModel, ReducerModel)>,
    far_target: f64,
) -> Result<Vec<SweepRow>> {
    let input_dim = samples
        .first()
        .map(|s| s.branch_v.dim() + s.branch_r.dim())
        .ok_or(Error::EmptyScoreSet)?;
    dims.iter()
        .map(|&dim| {
            let models = reducers.get(&dim);
            if models.is_none() && dim != input_dim {
                return Err(Error::MissingModel(dim));
            }
            let templates = samples
                .iter()
                .map(|s| {
                    let t = match models {
                        Some((mv, mr)) => ConcatTemplate::from_unit(
                            mv.reduce(&s.branch_v.normalized()?)?,
                            mr.reduce(&s.branch_r.normalized()?)?,
                        )?,
                        None => ConcatTemplate::from_raw(&s.branch_v, &s.branch_r)?,
                    };
                    if t.concat_dim() != dim {
                        return Err(Error::DimMismatch {
                            expected: dim,
                            actual: t.concat_dim(),
                        });
                    }
                    let stored = codec::decompress(&codec::compress(&t.to_embedding())?)?;
                    Ok((s.subject.clone(), ConcatTemplate::from_concatenated(stored.values())?))
                })
                .collect::<Result<Vec<_>>>()?;
            let op = tar_at_far(&all_pairs_scores(&templates)?, far_target)?;
            Ok(SweepRow {
                branch_dim: dim / 2,
                template_dim: dim,
                template_bytes: codec::template_size(dim),
                tar: op.tar,
                threshold: op.threshold,
            })
        })
        .collect()
}

/// How galleries were populated for a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GalleryMode {
    SingleTemplate,
    MultiTemplate,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportConfig {
    pub protocol: String,
    pub threshold: f64,
    pub rank: usize,
    pub gallery_size: usize,
    pub gallery_subjects: usize,
    pub gallery_mode: GalleryMode,
    pub mated_probes: usize,
    pub nonmated_probes: usize,
    pub quality_method: QualityMethod,
    pub quality_note: String,
    pub far_targets: Vec<f64>,
    pub fpir_target: f64,
    pub error_metric: ErrorMetric,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RankRow {
    pub rank: usize,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeRow {
    pub probe_id: String,
    pub subject: String,
    pub mated: bool,
    pub quality: f64,
    pub top_subject: String,
    pub top_score: f64,
    pub mate_rank: Option<usize>,
    pub mate_score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub config: ReportConfig,
    pub auc: f64,
    pub tar_at_far: Vec<TarAtFar>,
    pub rank_r: Vec<RankRow>,
    pub open_set_at_policy: OpenSetRates,
    pub fnir_at_fpir: FnirAtFpir,
    pub error_reject: Vec<RejectPoint>,
    pub template_size: Vec<SweepRow>,
    #[serde(skip)]
    pub probes: Vec<ProbeRow>,
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for row in rows {
        w.serialize(row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    Error::Parse(e.to_string())
}

impl EvalReport {
    /// Writes one CSV per table plus `summary.json` into `dir`.
    pub fn write_to_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        write_csv(&dir.join("tar_at_far.csv"), &self.tar_at_far)?;
        write_csv(&dir.join("rank_r.csv"), &self.rank_r)?;
        write_csv(&dir.join("fnir_at_fpir.csv"), &[self.fnir_at_fpir.rates])?;
        write_csv(&dir.join("error_reject.csv"), &self.error_reject)?;
        write_csv(&dir.join("template_size.csv"), &self.template_size)?;
        write_csv(&dir.join("probes.csv"), &self.probes)?;
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Parse(e.to_string()))?;
        fs::write(dir.join("summary.json"), json + "\n")?;
        Ok(())
    }
}
