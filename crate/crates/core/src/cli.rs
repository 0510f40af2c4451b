//! Command-line surface. `run` writes human-readable output to the given
//! writer so commands are testable without spawning processes.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::seq::SliceRandom;
use rand::{Rng, RngCore};
use rayon::prelude::*;

use crate::codec::compress;
use crate::degrade::{degrade, DegradationSpec, Overlay};
use crate::embedding::{ConcatTemplate, Embedding};
use crate::error::{Error, Result};
use crate::eval::{ErrorMetric, RawSample, DEFAULT_FAR_TARGET, DEFAULT_FPIR_TARGET};
use crate::extractor::{read_embeddings, ToyExtractor};
use crate::gallery::{bench_search, decide_open_set, Decision, Gallery, SearchPolicy};
use crate::geometry::KeypointSet;
use crate::image::{Image, Mask};
use crate::protocol::{evaluate_file, load_roi, EmbeddingSource, EvalOptions, Protocol, ProtocolItem, Reducers};
use crate::quality::QualityMethod;
use crate::reduce::{train_reducer, ReducerModel, TrainConfig};
use crate::similarity::{fuse_scores, SimilarityScore, DEFAULT_FUSION_WEIGHT};
use crate::synth::{gaussian_blobs, stream_rng, subject_name, texture_corpus, TextureCorpusConfig};

#[derive(Debug, Parser)]
#[command(name = "palm-engine", version, about = "Palmprint template engine and evaluation harness")]
pub struct Cli {
    /// Worker threads for parallel stages (default: all cores).
    #[arg(long, global = true, env = "PALM_ENGINE_THREADS")]
    pub threads: Option<usize>,
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ExtractorKind {
    Toy,
    File,
}

#[derive(Debug, Clone, Args)]
pub struct SourceArgs {
    #[arg(long, value_enum, default_value_t = ExtractorKind::Toy)]
    pub extractor: ExtractorKind,
    /// Embeddings file (CSV or PEMB); required with `--extractor file`.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long)]
    pub reducer_v: Option<PathBuf>,
    #[arg(long)]
    pub reducer_r: Option<PathBuf>,
    /// CSV of 9 keypoints per input image (same order as the inputs), used
    /// to align non-ROI images.
    #[arg(long)]
    pub keypoints: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum QualityArg {
    EmbeddingNorm,
    LogVariance,
}

impl From<QualityArg> for QualityMethod {
    fn from(q: QualityArg) -> Self {
        match q {
            QualityArg::EmbeddingNorm => QualityMethod::EmbeddingNorm,
            QualityArg::LogVariance => QualityMethod::LogVariance,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OverlayArg {
    None,
    Text,
    Lines,
    Henna,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Extract, compress and append templates to a gallery (no deduplication).
    Enroll {
        #[arg(long)]
        gallery: PathBuf,
        #[command(flatten)]
        source: SourceArgs,
        /// Subject id for every input; defaults to the file stem or embedding id.
        #[arg(long)]
        subject: Option<String>,
        /// Image paths, or embedding ids with `--extractor file` (all records when omitted).
        inputs: Vec<String>,
    },
    /// 1:1 comparison of a probe against a claimed identity.
    Verify {
        #[arg(long)]
        gallery: PathBuf,
        #[command(flatten)]
        source: SourceArgs,
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
        #[arg(long)]
        claimed_id: String,
        /// Score from an external matcher to fuse with the template score.
        #[arg(long)]
        external_score: Option<f64>,
        #[arg(long, default_value_t = DEFAULT_FUSION_WEIGHT)]
        fusion_weight: f64,
        probe: String,
    },
    /// 1:N search with an open-set decision.
    Search {
        #[arg(long)]
        gallery: PathBuf,
        #[command(flatten)]
        source: SourceArgs,
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
        #[arg(long, default_value_t = 1)]
        rank: usize,
        probe: String,
    },
    /// Run a protocol file and write CSV/JSON reports.
    Evaluate {
        #[arg(long)]
        protocol: PathBuf,
        #[command(flatten)]
        source: SourceArgs,
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
        #[arg(long, default_value_t = 1)]
        rank: usize,
        #[arg(long, value_enum, default_value_t = QualityArg::EmbeddingNorm)]
        quality: QualityArg,
        /// FAR operating points in percent.
        #[arg(long, value_delimiter = ',', default_values_t = vec![0.01, 0.1, 1.0])]
        far: Vec<f64>,
        /// FPIR target in percent.
        #[arg(long, default_value_t = DEFAULT_FPIR_TARGET)]
        fpir: f64,
        /// Re-derive the threshold after each rejection step instead of fixing it.
        #[arg(long)]
        recalibrate: bool,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Train per-branch reducers on unit-normalized branch embeddings.
    ReduceTrain {
        #[arg(long, conflicts_with = "synthetic_blobs")]
        embeddings: Option<PathBuf>,
        /// Train on this many synthetic Gaussian blobs instead of a file.
        #[arg(long)]
        synthetic_blobs: Option<usize>,
        #[arg(long, value_delimiter = ',', default_values_t = vec![320])]
        hidden: Vec<usize>,
        #[arg(long, default_value_t = 256)]
        output_dim: usize,
        #[arg(long, default_value_t = 20)]
        epochs: usize,
        #[arg(long, default_value_t = 1e-3)]
        learning_rate: f64,
        #[arg(long, default_value_t = 64)]
        batch_size: usize,
        #[arg(long, default_value_t = 2048)]
        pairs_per_epoch: usize,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Generate synthetic corpora.
    SynthCorpus {
        #[command(subcommand)]
        kind: SynthKind,
    },
    /// Time full 1:N scans of a synthetic gallery across thread counts.
    Bench {
        #[arg(long, default_value_t = 10_000)]
        gallery_size: usize,
        #[arg(long, default_value_t = 512)]
        dim: usize,
        #[arg(long, default_value_t = 100)]
        probes: usize,
        #[arg(long, value_delimiter = ',', default_values_t = vec![1, 2, 4, 8])]
        thread_counts: Vec<usize>,
    },
}

#[derive(Debug, Subcommand)]
pub enum SynthKind {
    /// Paired (degraded, clean) images plus `manifest.csv`.
    Degradation {
        /// Directory of clean images; synthetic textures are used when omitted.
        #[arg(long)]
        input_dir: Option<PathBuf>,
        #[arg(long, default_value_t = 100)]
        count: usize,
        #[arg(long, value_delimiter = ',', default_values_t = vec![0.0, 2.0])]
        blur: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_values_t = vec![1.0, 4.0])]
        downsample: Vec<f64>,
        #[arg(long, value_enum, default_value_t = OverlayArg::None)]
        overlay: OverlayArg,
        /// Directory of henna pattern images (dark pixels form the mask).
        #[arg(long)]
        henna_dir: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_values_t = vec![0.1, 1.0])]
        alpha: Vec<f64>,
        /// Fixed overlay color `r,g,b` in [0, 1]; random when omitted.
        #[arg(long, value_delimiter = ',')]
        color: Option<Vec<f32>>,
        #[arg(long)]
        shuffle_order: bool,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Synthetic palm textures with a ready-to-run protocol.json.
    Textures {
        #[arg(long, default_value_t = 50)]
        classes: usize,
        #[arg(long, default_value_t = 10)]
        samples: usize,
        /// Classes kept out of the gallery to provide nonmated probes.
        #[arg(long, default_value_t = 10)]
        nonmated_classes: usize,
        /// Enrolled samples per gallery class.
        #[arg(long, default_value_t = 1)]
        gallery_samples: usize,
        /// Fraction of probes to blur and down-sample (tagged "degraded").
        #[arg(long, default_value_t = 0.0)]
        degrade_fraction: f64,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

fn load_reducers(src: &SourceArgs) -> Result<Reducers> {
    let load = |p: &Option<PathBuf>| p.as_ref().map(ReducerModel::load).transpose();
    Reducers::new(load(&src.reducer_v)?, load(&src.reducer_r)?)
}

fn embedding_source(src: &SourceArgs, base: &Path) -> Result<EmbeddingSource> {
    match (src.extractor, &src.embeddings) {
        (ExtractorKind::File, Some(p)) => EmbeddingSource::from_file(p),
        (ExtractorKind::File, None) => Err(Error::InvalidConfig("--extractor file needs --embeddings".into())),
        (ExtractorKind::Toy, _) => Ok(EmbeddingSource::toy(base)),
    }
}

fn read_keypoints(src: &SourceArgs) -> Result<Option<Vec<KeypointSet>>> {
    src.keypoints
        .as_ref()
        .map(|p| KeypointSet::parse_csv(&fs::read_to_string(p)?))
        .transpose()
}

/// Resolves inputs to (default subject, raw v, raw r).
fn raw_inputs(src: &SourceArgs, inputs: &[String]) -> Result<Vec<(String, Embedding, Embedding)>> {
    match src.extractor {
        ExtractorKind::Toy => {
            if inputs.is_empty() {
                return Err(Error::InvalidConfig("no input images".into()));
            }
            let keypoints = read_keypoints(src)?;
            if let Some(k) = &keypoints {
                if k.len() != inputs.len() {
                    return Err(Error::InvalidConfig(format!(
                        "{} keypoint rows for {} inputs",
                        k.len(),
                        inputs.len()
                    )));
                }
            }
            let ex = ToyExtractor::new();
            inputs
                .par_iter()
                .enumerate()
                .map(|(i, input)| {
                    let path = Path::new(input);
                    let roi = load_roi(path, keypoints.as_ref().map(|k| &k[i]))?;
                    let (v, r) = ex.extract_raw(&roi)?;
                    let stem = path.file_stem().map_or_else(|| input.clone(), |s| s.to_string_lossy().into_owned());
                    Ok((stem, v, r))
                })
                .collect()
        }
        ExtractorKind::File => {
            let path = src
                .embeddings
                .as_ref()
                .ok_or_else(|| Error::InvalidConfig("--extractor file needs --embeddings".into()))?;
            let records = read_embeddings(path)?;
            if inputs.is_empty() {
                return Ok(records.into_iter().map(|s| (s.subject, s.branch_v, s.branch_r)).collect());
            }
            let by_id: HashMap<&str, &RawSample> = records.iter().map(|s| (s.subject.as_str(), s)).collect();
            inputs
                .iter()
                .map(|id| {
                    let s = by_id
                        .get(id.as_str())
                        .ok_or_else(|| Error::InvalidConfig(format!("no embedding with id '{id}'")))?;
                    Ok((id.clone(), s.branch_v.clone(), s.branch_r.clone()))
                })
                .collect()
        }
    }
}

fn probe_template(src: &SourceArgs, probe: &str) -> Result<ConcatTemplate> {
    let reducers = load_reducers(src)?;
    let mut raw = raw_inputs(src, &[probe.to_string()])?;
    let (_, v, r) = raw.pop().ok_or_else(|| Error::InvalidConfig("no probe".into()))?;
    reducers.template(&v, &r)
}

fn check_threshold(t: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::InvalidConfig(format!("threshold {t} must be in [0, 1]")));
    }
    Ok(())
}

fn pair(name: &str, v: &[f64]) -> Result<(f64, f64)> {
    match v {
        [a] => Ok((*a, *a)),
        [a, b] => Ok((*a, *b)),
        _ => Err(Error::InvalidConfig(format!("--{name} takes one value or a min,max pair"))),
    }
}

fn io<T>(r: std::io::Result<T>) -> Result<T> {
    r.map_err(Error::from)
}

pub fn run(cli: Cli, out: &mut dyn Write) -> Result<()> {
    let seed = cli.seed;
    match cli.command {
        Command::Enroll { gallery, source, subject, inputs } => {
            let reducers = load_reducers(&source)?;
            let raw = raw_inputs(&source, &inputs)?;
            let mut g = if gallery.exists() { Gallery::load(&gallery)? } else { Gallery::new() };
            let before = g.len();
            // All inputs are validated before the gallery file is touched.
            for (stem, v, r) in &raw {
                let t = reducers.template(v, r)?;
                let id = subject.as_deref().unwrap_or(stem);
                g.enroll(id, compress(&t.to_embedding())?)?;
            }
            g.save(&gallery)?;
            io(writeln!(out, "enrolled {} template(s); gallery size {}", g.len() - before, g.len()))?;
        }
        Command::Verify { gallery, source, threshold, claimed_id, external_score, fusion_weight, probe } => {
            check_threshold(threshold)?;
            let g = Gallery::load(&gallery)?;
            let t = probe_template(&source, &probe)?;
            let primary = g.verify(&t, &claimed_id)?;
            let score = match external_score {
                Some(s) => fuse_scores(primary, SimilarityScore::new(s)?, fusion_weight)?,
                None => {
                    if !(0.0..=1.0).contains(&fusion_weight) {
                        return Err(Error::InvalidWeight(fusion_weight));
                    }
                    primary
                }
            };
            let verdict = if score.value() >= threshold { "ACCEPT" } else { "REJECT" };
            io(writeln!(out, "subject {claimed_id} score {:.6}", score.value()))?;
            io(writeln!(out, "{verdict}"))?;
        }
        Command::Search { gallery, source, threshold, rank, probe } => {
            let policy = SearchPolicy::new(threshold, rank)?;
            let g = Gallery::load(&gallery)?;
            let t = probe_template(&source, &probe)?;
            let candidates = g.search(&t, &policy)?;
            io(writeln!(out, "rank\tsubject\tscore"))?;
            for c in &candidates {
                io(writeln!(out, "{}\t{}\t{:.6}", c.rank, c.subject_id, c.score.value()))?;
            }
            match decide_open_set(&candidates, &policy) {
                Decision::Accept(id) => io(writeln!(out, "ACCEPT {id}"))?,
                Decision::Reject => io(writeln!(out, "REJECT (below threshold)"))?,
            }
        }
        Command::Evaluate { protocol, source, threshold, rank, quality, far, fpir, recalibrate, out_dir } => {
            check_threshold(threshold)?;
            let reducers = load_reducers(&source)?;
            let base = protocol.parent().map(Path::to_path_buf).unwrap_or_default();
            let src = embedding_source(&source, &base)?;
            let far_target = far.first().copied().unwrap_or(DEFAULT_FAR_TARGET);
            let opts = EvalOptions {
                threshold,
                rank,
                quality: quality.into(),
                far_targets: far,
                fpir_target: fpir,
                error_metric: if recalibrate {
                    ErrorMetric::FnmrAtRecalibratedThreshold { far_target }
                } else {
                    ErrorMetric::FnmrAtFixedThreshold { far_target }
                },
                seed,
                ..EvalOptions::default()
            };
            let report = evaluate_file(&protocol, Some(src), &reducers, &opts)?;
            report.write_to_dir(&out_dir)?;
            io(writeln!(out, "auc {:.6}", report.auc))?;
            for t in &report.tar_at_far {
                io(writeln!(out, "TAR@FAR={}% {:.4}%", t.far_target, t.tar))?;
            }
            if let Some(r1) = report.rank_r.first() {
                io(writeln!(out, "rank-{} {:.4}%", r1.rank, r1.rate))?;
            }
            let f = &report.fnir_at_fpir;
            io(writeln!(out, "FNIR@FPIR={}% {:.4}% (T={:.6})", f.fpir_target, f.rates.fnir, f.rates.threshold))?;
            io(writeln!(out, "reports written to {}", out_dir.display()))?;
        }
        Command::ReduceTrain {
            embeddings,
            synthetic_blobs,
            hidden,
            output_dim,
            epochs,
            learning_rate,
            batch_size,
            pairs_per_epoch,
            out_dir,
        } => {
            let unit = |e: &Embedding| e.normalized().map(Embedding::into_values);
            let (data_v, data_r) = match (embeddings, synthetic_blobs) {
                (Some(p), None) => {
                    let recs = read_embeddings(p)?;
                    (
                        recs.iter().map(|s| unit(&s.branch_v)).collect::<Result<Vec<_>>>()?,
                        recs.iter().map(|s| unit(&s.branch_r)).collect::<Result<Vec<_>>>()?,
                    )
                }
                (None, Some(k)) => {
                    let blobs = |seed| -> Result<Vec<Vec<f64>>> {
                        gaussian_blobs(k, 50, 384, 0.5, seed)?.0.into_iter().map(|p| unit(&Embedding::new(p)?)).collect()
                    };
                    (blobs(seed)?, blobs(seed.wrapping_add(1))?)
                }
                _ => return Err(Error::InvalidConfig("give --embeddings or --synthetic-blobs".into())),
            };
            fs::create_dir_all(&out_dir)?;
            let mut curve = csv::Writer::from_path(out_dir.join("training_curve.csv")).map_err(crate::eval::csv_err)?;
            for (branch, data, offset) in [("v", &data_v, 0u64), ("r", &data_r, 1)] {
                let cfg = TrainConfig {
                    hidden: hidden.clone(),
                    output_dim,
                    learning_rate,
                    epochs,
                    batch_size,
                    pairs_per_epoch,
                    seed: seed.wrapping_add(offset),
                    ..TrainConfig::default()
                };
                let outcome = train_reducer(data, &cfg)?;
                for e in &outcome.curve {
                    curve
                        .write_record([
                            branch.to_string(),
                            e.epoch.to_string(),
                            e.train_loss.to_string(),
                            e.heldout_loss.to_string(),
                            e.best_heldout.to_string(),
                        ])
                        .map_err(crate::eval::csv_err)?;
                }
                let path = out_dir.join(format!("reducer_{branch}.pmds"));
                outcome.model.save(&path)?;
                io(writeln!(
                    out,
                    "branch {branch}: held-out stress {:.6} -> {:.6} (epoch {}), saved {}",
                    outcome.initial_heldout(),
                    outcome.best_heldout(),
                    outcome.best_epoch,
                    path.display()
                ))?;
            }
            curve.flush()?;
        }
        Command::SynthCorpus { kind } => synth(kind, seed, out)?,
        Command::Bench { gallery_size, dim, probes, thread_counts } => {
            if gallery_size == 0 {
                return Err(Error::EmptyGallery);
            }
            let g = synthetic_gallery(gallery_size, dim, seed)?;
            let probe_set = random_templates(probes, dim, seed.wrapping_add(1))?;
            io(writeln!(out, "threads\tgallery\tprobes\tmedian_ms\tmean_ms\tmin_ms\tmax_ms\tstd_ms"))?;
            for &t in &thread_counts {
                let s = bench_search(&g, &probe_set, t)?;
                io(writeln!(
                    out,
                    "{}\t{}\t{}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{:.4}",
                    s.threads, s.gallery_size, s.probes, s.median_ms, s.mean_ms, s.min_ms, s.max_ms, s.std_ms
                ))?;
            }
        }
    }
    Ok(())
}

/// Random unit templates of concatenated dimension `dim` (even).
pub fn random_templates(count: usize, dim: usize, seed: u64) -> Result<Vec<ConcatTemplate>> {
    if dim < 2 || dim % 2 != 0 {
        return Err(Error::InvalidConfig(format!("template dim {dim} must be even and >= 2")));
    }
    let mut rng = stream_rng(seed, 0);
    (0..count)
        .map(|_| {
            let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            ConcatTemplate::from_concatenated(&v)
        })
        .collect()
}

pub fn synthetic_gallery(size: usize, dim: usize, seed: u64) -> Result<Gallery> {
    let mut g = Gallery::new();
    for (i, t) in random_templates(size, dim, seed)?.iter().enumerate() {
        g.enroll(&format!("s{i:06}"), compress(&t.to_embedding())?)?;
    }
    Ok(g)
}

fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "pgm" | "ppm" | "pnm" | "png"))
        })
        .collect();
    paths.sort();
    Ok(paths)
}

fn pnm_name(stem: &str, img: &Image) -> String {
    format!("{stem}.{}", if img.channels() == 1 { "pgm" } else { "ppm" })
}

/// Injected probe degradation: one severity level `s` in [0, 1] per probe
/// drives both blur sigma and down-sampling factor, interpolated between
/// these (sigma, factor) endpoints.
pub const DEGRADED_MILD: (f64, f64) = (1.5, 2.0);
pub const DEGRADED_SEVERE: (f64, f64) = (5.0, 8.0);

/// Degradation spec for severity `s` in [0, 1].
pub fn severity_spec(s: f64, seed: u64) -> DegradationSpec {
    let lerp = |a: f64, b: f64| a + s.clamp(0.0, 1.0) * (b - a);
    let sigma = lerp(DEGRADED_MILD.0, DEGRADED_SEVERE.0);
    let factor = lerp(DEGRADED_MILD.1, DEGRADED_SEVERE.1);
    DegradationSpec {
        blur_sigma: (sigma, sigma),
        downsample: (factor, factor),
        seed,
        ..DegradationSpec::default()
    }
}

fn synth(kind: SynthKind, seed: u64, out: &mut dyn Write) -> Result<()> {
    match kind {
        SynthKind::Degradation {
            input_dir,
            count,
            blur,
            downsample,
            overlay,
            henna_dir,
            alpha,
            color,
            shuffle_order,
            out_dir,
        } => {
            let sources: Vec<(String, Image)> = match &input_dir {
                Some(d) => list_images(d)?
                    .into_iter()
                    .map(|p| Ok((p.display().to_string(), Image::read(&p)?)))
                    .collect::<Result<_>>()?,
                None => {
                    let cfg = TextureCorpusConfig { classes: count.clamp(1, 50), samples_per_class: 1, seed, ..Default::default() };
                    texture_corpus(&cfg)?
                        .into_iter()
                        .map(|s| (format!("synthetic:{}", s.subject), s.roi.into_image()))
                        .collect()
                }
            };
            if sources.is_empty() {
                return Err(Error::InvalidConfig("no clean source images".into()));
            }
            let overlay = match overlay {
                OverlayArg::None => None,
                OverlayArg::Text => Some(Overlay::Text { glyphs: (5, 30) }),
                OverlayArg::Lines => Some(Overlay::Lines { segments: (1, 6), thickness: (1.0, 6.0) }),
                OverlayArg::Henna => {
                    let dir = henna_dir.ok_or_else(|| Error::InvalidConfig("--overlay henna needs --henna-dir".into()))?;
                    let masks: Vec<Mask> = list_images(&dir)?
                        .iter()
                        .map(|p| Ok(Mask::from_dark_pixels(&Image::read(p)?)))
                        .collect::<Result<_>>()?;
                    Some(Overlay::Henna { masks: Arc::new(masks) })
                }
            };
            let color = match color {
                None => None,
                Some(c) if c.len() == 3 => Some([c[0], c[1], c[2]]),
                Some(_) => return Err(Error::InvalidConfig("--color takes r,g,b".into())),
            };
            let base = DegradationSpec {
                blur_sigma: pair("blur", &blur)?,
                downsample: pair("downsample", &downsample)?,
                overlay,
                alpha: pair("alpha", &alpha)?,
                color,
                shuffle_order,
                seed: 0,
            };
            base.validate()?;
            fs::create_dir_all(&out_dir)?;
            let rows = (0..count)
                .into_par_iter()
                .map(|i| {
                    let (name, img) = &sources[i % sources.len()];
                    let spec = DegradationSpec { seed: stream_rng(seed, i as u64).next_u64(), ..base.clone() };
                    let (degraded, clean, applied) = degrade(img, &spec)?;
                    let id = format!("{i:05}");
                    degraded.write_pnm(out_dir.join(pnm_name(&format!("{id}_degraded"), &degraded)))?;
                    clean.write_pnm(out_dir.join(pnm_name(&format!("{id}_clean"), &clean)))?;
                    Ok(vec![
                        id,
                        name.clone(),
                        spec.seed.to_string(),
                        applied.blur_sigma.to_string(),
                        applied.downsample.to_string(),
                        applied.overlay.unwrap_or("none").to_string(),
                        applied.alpha.to_string(),
                        applied.color.map(|c| c.to_string()).join(" "),
                        applied.overlay_pixels.to_string(),
                    ])
                })
                .collect::<Result<Vec<_>>>()?;
            let mut w = csv::Writer::from_path(out_dir.join("manifest.csv")).map_err(crate::eval::csv_err)?;
            w.write_record([
                "sample_id", "source", "seed", "blur_sigma", "downsample", "overlay", "alpha", "color", "overlay_pixels",
            ])
            .map_err(crate::eval::csv_err)?;
            for r in rows {
                w.write_record(r).map_err(crate::eval::csv_err)?;
            }
            w.flush()?;
            io(writeln!(out, "wrote {count} pairs to {}", out_dir.display()))?;
        }
        SynthKind::Textures { classes, samples, nonmated_classes, gallery_samples, degrade_fraction, out_dir } => {
            let protocol = write_texture_protocol(
                &out_dir,
                &TextureCorpusConfig { classes, samples_per_class: samples, seed, ..Default::default() },
                nonmated_classes,
                gallery_samples,
                degrade_fraction,
            )?;
            io(writeln!(
                out,
                "wrote {} gallery, {} mated, {} nonmated items to {}",
                protocol.gallery.len(),
                protocol.mated_probes.len(),
                protocol.nonmated_probes.len(),
                out_dir.join("protocol.json").display()
            ))?;
        }
    }
    Ok(())
}

/// Renders a texture corpus into `dir/img/` and writes `dir/protocol.json`.
///
/// The first `gallery_samples` samples of each enrolled class go to the
/// gallery, the rest become mated probes; the last `nonmated_classes` classes
/// supply nonmated probes. A seeded `degrade_fraction` of all probes is
/// blurred and down-sampled and tagged `degraded`.
pub fn write_texture_protocol(
    dir: &Path,
    cfg: &TextureCorpusConfig,
    nonmated_classes: usize,
    gallery_samples: usize,
    degrade_fraction: f64,
) -> Result<Protocol> {
    if nonmated_classes >= cfg.classes || gallery_samples == 0 || gallery_samples >= cfg.samples_per_class {
        return Err(Error::InvalidConfig(
            "need at least one enrolled class and one probe sample per class".into(),
        ));
    }
    if !(0.0..=1.0).contains(&degrade_fraction) {
        return Err(Error::InvalidFraction(degrade_fraction));
    }
    let corpus = texture_corpus(cfg)?;
    let enrolled = cfg.classes - nonmated_classes;
    let mut gallery = Vec::new();
    let mut probes = Vec::new();
    for (k, s) in corpus.iter().enumerate() {
        let class = k / cfg.samples_per_class;
        let item = ProtocolItem {
            id: format!("{}_{:02}", s.subject, s.index),
            subject: subject_name(class),
            source: format!("img/{}_{:02}.pgm", s.subject, s.index),
            keypoints: None,
            tags: vec![],
        };
        if class < enrolled && s.index < gallery_samples {
            gallery.push((k, item));
        } else {
            probes.push((k, item));
        }
    }
    let mut rng = stream_rng(cfg.seed, u64::MAX);
    let mut order: Vec<usize> = (0..probes.len()).collect();
    order.shuffle(&mut rng);
    let n_degraded = (degrade_fraction * probes.len() as f64).floor() as usize;
    let mut degraded = vec![false; probes.len()];
    for &i in &order[..n_degraded] {
        degraded[i] = true;
        probes[i].1.tags.push("degraded".into());
    }

    fs::create_dir_all(dir.join("img"))?;
    let write_all = |list: &[(usize, ProtocolItem)], flags: Option<&[bool]>| -> Result<()> {
        list.par_iter().enumerate().try_for_each(|(i, (k, item))| {
            let img = corpus[*k].roi.image();
            let img = if flags.is_some_and(|f| f[i]) {
                let mut rng = stream_rng(cfg.seed, *k as u64);
                let spec = severity_spec(rng.gen(), rng.next_u64());
                degrade(img, &spec)?.0
            } else {
                img.clone()
            };
            img.write_pnm(dir.join(&item.source))
        })
    };
    write_all(&gallery, None)?;
    write_all(&probes, Some(&degraded))?;

    let (mated, nonmated): (Vec<_>, Vec<_>) =
        probes.into_iter().map(|(_, item)| item).partition(|item| {
            let class: usize = item.subject["palm".len()..].parse().unwrap_or(usize::MAX);
            class < enrolled
        });
    let protocol = Protocol {
        name: format!("textures-{}x{}", cfg.classes, cfg.samples_per_class),
        gallery: gallery.into_iter().map(|(_, i)| i).collect(),
        mated_probes: mated,
        nonmated_probes: nonmated,
        template_dims: vec![],
    };
    protocol.validate()?;
    fs::write(dir.join("protocol.json"), protocol.to_json())?;
    Ok(protocol)
}
