use std::fs;
use std::path::Path;
use std::process::Command;

use clap::Parser;
use palm_engine::cli::{run, Cli};
use palm_engine::error::Error;
use palm_engine::gallery::Gallery;
use palm_engine::synth::{texture_corpus, TextureCorpusConfig};

fn cli(args: &[&str]) -> Result<String, Error> {
    let parsed = Cli::try_parse_from(std::iter::once("palm-engine").chain(args.iter().copied())).unwrap();
    let mut out = Vec::new();
    run(parsed, &mut out)?;
    Ok(String::from_utf8(out).unwrap())
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn write_palms(dir: &Path, classes: usize, samples: usize) -> Vec<String> {
    let cfg = TextureCorpusConfig { classes, samples_per_class: samples, seed: 4, ..Default::default() };
    texture_corpus(&cfg)
        .unwrap()
        .iter()
        .map(|s| {
            let path = dir.join(format!("{}_{}.pgm", s.subject, s.index));
            s.roi.image().write_pnm(&path).unwrap();
            path.to_str().unwrap().to_string()
        })
        .collect()
}

#[test]
fn enroll_search_verify() {
    let dir = tempfile::tempdir().unwrap();
    let imgs = write_palms(dir.path(), 3, 2);
    let gallery = dir.path().join("g.pgal");
    let enrolled = [imgs[0].as_str(), imgs[2].as_str(), imgs[4].as_str()];
    let mut args = vec!["enroll", "--gallery", p(&gallery)];
    args.extend(enrolled);
    cli(&args).unwrap();
    let g = Gallery::load(&gallery).unwrap();
    assert_eq!(g.len(), 3);
    assert_eq!(g.entries()[1].subject_id, "palm001_0");

    let out = cli(&["search", "--gallery", p(&gallery), "--threshold", "0.6", "--rank", "3", &imgs[3]]).unwrap();
    let first = out.lines().nth(1).unwrap();
    assert!(first.starts_with("1\tpalm001_0\t"), "{out}");
    assert!(out.lines().last().unwrap().starts_with("ACCEPT palm001_0"), "{out}");

    let out = cli(&["verify", "--gallery", p(&gallery), "--claimed-id", "palm002_0", &imgs[4]]).unwrap();
    assert!(out.ends_with("ACCEPT\n"), "{out}");
    assert!(matches!(
        cli(&["verify", "--gallery", p(&gallery), "--claimed-id", "nobody", &imgs[4]]),
        Err(Error::UnknownSubject(_))
    ));
    assert!(cli(&["verify", "--gallery", p(&gallery), "--claimed-id", "palm002_0", "--threshold", "1.01", &imgs[4]]).is_err());
}

#[test]
fn mismatched_dimension_leaves_gallery_untouched() {
    let dir = tempfile::tempdir().unwrap();
    let imgs = write_palms(dir.path(), 1, 1);
    let gallery = dir.path().join("g.pgal");
    cli(&["enroll", "--gallery", p(&gallery), &imgs[0]]).unwrap();
    let before = fs::read(&gallery).unwrap();
    let emb = dir.path().join("e.csv");
    fs::write(&emb, "id,branch,dim,values\nsmall,vr,4,1,0,0,1\n").unwrap();
    let r = cli(&["enroll", "--gallery", p(&gallery), "--extractor", "file", "--embeddings", p(&emb)]);
    assert!(matches!(r, Err(Error::DimMismatch { .. })), "{r:?}");
    assert_eq!(fs::read(&gallery).unwrap(), before);
}

#[test]
fn search_on_empty_gallery_fails() {
    let dir = tempfile::tempdir().unwrap();
    let imgs = write_palms(dir.path(), 1, 1);
    let gallery = dir.path().join("empty.pgal");
    Gallery::new().save(&gallery).unwrap();
    assert!(matches!(cli(&["search", "--gallery", p(&gallery), &imgs[0]]), Err(Error::EmptyGallery)));
}

#[test]
fn missing_protocol_input_fails_before_writing_reports() {
    let dir = tempfile::tempdir().unwrap();
    cli(&["synth-corpus", "textures", "--classes", "6", "--samples", "3", "--nonmated-classes", "2", "--out-dir", p(dir.path())])
        .unwrap();
    let victim = fs::read_dir(dir.path().join("img")).unwrap().next().unwrap().unwrap().path();
    fs::remove_file(&victim).unwrap();
    let out = dir.path().join("reports");
    let r = cli(&["evaluate", "--protocol", p(&dir.path().join("protocol.json")), "--out-dir", p(&out)]);
    assert!(r.is_err());
    assert!(!out.exists());
}

#[test]
fn evaluate_writes_every_table() {
    let dir = tempfile::tempdir().unwrap();
    cli(&["synth-corpus", "textures", "--classes", "8", "--samples", "3", "--nonmated-classes", "2", "--out-dir", p(dir.path())])
        .unwrap();
    let out = dir.path().join("reports");
    let text = cli(&["evaluate", "--protocol", p(&dir.path().join("protocol.json")), "--out-dir", p(&out)]).unwrap();
    assert!(text.starts_with("auc "));
    for f in ["summary.json", "tar_at_far.csv", "rank_r.csv", "fnir_at_fpir.csv", "error_reject.csv", "template_size.csv", "probes.csv"] {
        assert!(out.join(f).is_file(), "{f}");
    }
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["template_size"][0]["template_bytes"], 772);
}

#[test]
fn reduce_train_writes_models_and_curve() {
    let dir = tempfile::tempdir().unwrap();
    cli(&[
        "reduce-train", "--synthetic-blobs", "3", "--hidden", "16", "--output-dim", "8", "--epochs", "2",
        "--pairs-per-epoch", "64", "--out-dir", p(dir.path()),
    ])
    .unwrap();
    for f in ["reducer_v.pmds", "reducer_r.pmds", "training_curve.csv"] {
        assert!(dir.path().join(f).is_file(), "{f}");
    }
}

#[test]
fn degradation_corpus_has_manifest() {
    let dir = tempfile::tempdir().unwrap();
    cli(&["synth-corpus", "degradation", "--count", "4", "--overlay", "lines", "--out-dir", p(dir.path())]).unwrap();
    let manifest = fs::read_to_string(dir.path().join("manifest.csv")).unwrap();
    assert_eq!(manifest.lines().count(), 5);
    assert!(dir.path().join("00003_degraded.pgm").is_file() && dir.path().join("00003_clean.pgm").is_file());
}

#[test]
fn binary_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_palm-engine");
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("none.pgal");
    let o = Command::new(bin).args(["search", "--gallery", p(&missing), "x.pgm"]).output().unwrap();
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error:"));
    let o = Command::new(bin).args(["--threads", "0", "bench", "--gallery-size", "10"]).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    let o = Command::new(bin).args(["bench", "--gallery-size", "200", "--dim", "16", "--probes", "3", "--thread-counts", "1,2"]).output().unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}
