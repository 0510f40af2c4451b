//! The committed header must match the exported ABI, and C code must be able
//! to link against the static library through it.

use std::path::PathBuf;
use std::process::Command;

const SYMBOLS: &[&str] = &[
    "palm_last_error",
    "palm_template_size",
    "palm_compress",
    "palm_decompress",
    "palm_concat_score",
    "palm_fuse_scores",
    "palm_gallery_new",
    "palm_gallery_load",
    "palm_gallery_save",
    "palm_gallery_free",
    "palm_gallery_len",
    "palm_gallery_enroll",
    "palm_gallery_search",
    "palm_gallery_subject_id",
    "palm_toy_branch_dim",
    "palm_toy_extract",
    "palm_quality_log_variance",
    "palm_estimate_homography",
];

fn crate_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

#[test]
fn header_declares_every_symbol() {
    let header = std::fs::read_to_string(crate_dir().join("include/palm_engine.h")).unwrap();
    for s in SYMBOLS {
        assert!(header.contains(&format!("{s}(")), "missing {s}");
    }
    assert!(header.contains("typedef struct PalmGallery PalmGallery;"));
    assert!(header.contains("PALM_STATUS_OK = 0"));
}

fn static_lib() -> Option<PathBuf> {
    // tests run from target/<profile>/deps/<test-binary>
    let exe = std::env::current_exe().ok()?;
    let profile_dir = exe.parent()?.parent()?;
    let lib = profile_dir.join("libpalm_engine_ffi.a");
    lib.exists().then_some(lib)
}

#[test]
fn c_program_links_and_runs() {
    let lib = static_lib().expect("static library not built next to the test binary");
    let out_dir = tempfile::tempdir().unwrap();
    let exe = out_dir.path().join("smoke");
    let status = Command::new("cc")
        .arg("-std=c99")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(crate_dir().join("include"))
        .arg(crate_dir().join("tests/smoke.c"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm"])
        .arg("-o")
        .arg(&exe)
        .status()
        .expect("a C compiler (cc) is required for this test");
    assert!(status.success(), "C compilation failed");
    let output = Command::new(&exe).output().unwrap();
    assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));
    assert_eq!(String::from_utf8_lossy(&output.stdout).trim(), "ok");
}
