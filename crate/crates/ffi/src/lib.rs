//! C ABI for palm-engine.
//!
//! Conventions: every fallible function returns a [`PalmStatus`]; outputs go
//! through caller-provided pointers. On failure a message is kept per thread
//! and can be copied out with [`palm_last_error`]. Panics never cross the
//! boundary; they surface as `PALM_STATUS_PANIC`.
//!
//! A [`PalmGallery`] handle is safe to share across threads: searches take a
//! read lock, enrollment a write lock.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::sync::RwLock;

use palm_engine::codec::{self, CompressedTemplate};
use palm_engine::embedding::{ConcatTemplate, Embedding};
use palm_engine::error::Error;
use palm_engine::extractor::{FeatureExtractor, ToyExtractor};
use palm_engine::gallery::{decide_open_set, Decision, Gallery, SearchPolicy};
use palm_engine::geometry::{estimate_homography, KeypointSet, KEYPOINT_COUNT};
use palm_engine::image::{Image, RoiImage, ROI_SIZE};
use palm_engine::quality::quality_log_variance;
use palm_engine::similarity::{concat_score, fuse_scores, SimilarityScore};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PalmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimMismatch = 3,
    ZeroNorm = 4,
    CorruptData = 5,
    EmptyGallery = 6,
    UnknownSubject = 7,
    Io = 8,
    BufferTooSmall = 9,
    Degenerate = 10,
    Panic = 11,
    Internal = 12,
}

/// One search result. `enroll_seq` identifies the gallery entry; use
/// [`palm_gallery_subject_id`] to fetch its subject id.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PalmCandidate {
    pub enroll_seq: u64,
    pub rank: usize,
    pub score: f64,
}

/// Opaque gallery handle.
pub struct PalmGallery {
    inner: RwLock<Gallery>,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &Error) -> PalmStatus {
    match e {
        Error::DimMismatch { .. } => PalmStatus::DimMismatch,
        Error::ZeroNorm => PalmStatus::ZeroNorm,
        Error::CorruptTemplate(_)
        | Error::TruncatedTemplate { .. }
        | Error::CorruptGallery(_)
        | Error::TruncatedGallery
        | Error::CorruptModel(_) => PalmStatus::CorruptData,
        Error::EmptyGallery => PalmStatus::EmptyGallery,
        Error::UnknownSubject(_) => PalmStatus::UnknownSubject,
        Error::Io(_) => PalmStatus::Io,
        Error::DegenerateKeypoints(_) | Error::SingularHomography | Error::DegenerateControlPoints(_) => {
            PalmStatus::Degenerate
        }
        _ => PalmStatus::InvalidArgument,
    }
}

struct Fail(PalmStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn fail<T>(status: PalmStatus, msg: &str) -> Result<T, Fail> {
    Err(Fail(status, msg.to_string()))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> PalmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(String::new());
            PalmStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("panic inside palm-engine".into());
            PalmStatus::Panic
        }
    }
}

unsafe fn slice<'a, T>(p: *const T, len: usize) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return fail(PalmStatus::NullPointer, "null input pointer");
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a, T>(p: *mut T, len: usize) -> Result<&'a mut [T], Fail> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return fail(PalmStatus::NullPointer, "null output pointer");
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn out_ref<'a, T>(p: *mut T) -> Result<&'a mut T, Fail> {
    p.as_mut().map_or_else(|| fail(PalmStatus::NullPointer, "null output pointer"), Ok)
}

unsafe fn c_str<'a>(p: *const c_char) -> Result<&'a str, Fail> {
    if p.is_null() {
        return fail(PalmStatus::NullPointer, "null string");
    }
    CStr::from_ptr(p)
        .to_str()
        .or_else(|_| fail(PalmStatus::InvalidArgument, "string is not UTF-8"))
}

unsafe fn gallery<'a>(g: *const PalmGallery) -> Result<&'a PalmGallery, Fail> {
    g.as_ref().map_or_else(|| fail(PalmStatus::NullPointer, "null gallery handle"), Ok)
}

fn poisoned<T>(_: T) -> Fail {
    Fail(PalmStatus::Internal, "gallery lock poisoned".into())
}

/// Copies the calling thread's last error message (NUL-terminated, truncated
/// to fit) into `buf`. Returns the full message length excluding the NUL.
///
/// # Safety
/// `buf` must be null or valid for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn palm_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Serialized template size for an embedding of `dim` values: `dim + 4`.
#[no_mangle]
pub extern "C" fn palm_template_size(dim: usize) -> usize {
    codec::template_size(dim)
}

/// Compresses `dim` values into `out` (`palm_template_size(dim)` bytes).
///
/// # Safety
/// `values` must be valid for `dim` floats and `out` for `out_len` bytes.
#[no_mangle]
pub unsafe extern "C" fn palm_compress(values: *const f32, dim: usize, out: *mut u8, out_len: usize) -> PalmStatus {
    guard(|| {
        let values = slice(values, dim)?;
        let needed = codec::template_size(dim);
        if out_len < needed {
            return fail(PalmStatus::BufferTooSmall, &format!("need {needed} bytes"));
        }
        let bytes = codec::compress(&Embedding::from_f32(values)?)?.to_bytes();
        slice_mut(out, needed)?.copy_from_slice(&bytes);
        Ok(())
    })
}

/// Decompresses a template; writes its dimension to `out_dim` and the values
/// to `out` when `out_len` is large enough (otherwise `BufferTooSmall`).
///
/// # Safety
/// `bytes` must be valid for `len` bytes and `out` for `out_len` floats.
#[no_mangle]
pub unsafe extern "C" fn palm_decompress(
    bytes: *const u8,
    len: usize,
    out: *mut f32,
    out_len: usize,
    out_dim: *mut usize,
) -> PalmStatus {
    guard(|| {
        let t = CompressedTemplate::from_bytes(slice(bytes, len)?)?;
        let e = codec::decompress(&t)?;
        *out_ref(out_dim)? = e.dim();
        if out_len < e.dim() {
            return fail(PalmStatus::BufferTooSmall, &format!("need {} floats", e.dim()));
        }
        for (o, v) in slice_mut(out, e.dim())?.iter_mut().zip(e.values()) {
            *o = *v as f32;
        }
        Ok(())
    })
}

/// Score of two concatenated v‖r templates (`concat_dim` values each,
/// branches re-normalized): `(dot + 2) / 4`.
///
/// # Safety
/// `p` and `q` must be valid for `concat_dim` doubles.
#[no_mangle]
pub unsafe extern "C" fn palm_concat_score(
    p: *const f64,
    q: *const f64,
    concat_dim: usize,
    score: *mut f64,
) -> PalmStatus {
    guard(|| {
        let a = ConcatTemplate::from_concatenated(slice(p, concat_dim)?)?;
        let b = ConcatTemplate::from_concatenated(slice(q, concat_dim)?)?;
        *out_ref(score)? = concat_score(&a, &b)?.value();
        Ok(())
    })
}

/// `weight * primary + (1 - weight) * external`, all in [0, 1].
///
/// # Safety
/// `fused` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn palm_fuse_scores(primary: f64, external: f64, weight: f64, fused: *mut f64) -> PalmStatus {
    guard(|| {
        let s = fuse_scores(SimilarityScore::new(primary)?, SimilarityScore::new(external)?, weight)?;
        *out_ref(fused)? = s.value();
        Ok(())
    })
}

/// Creates an empty gallery.
///
/// # Safety
/// `handle` must be a valid pointer; release the result with [`palm_gallery_free`].
#[no_mangle]
pub unsafe extern "C" fn palm_gallery_new(handle: *mut *mut PalmGallery) -> PalmStatus {
    guard(|| {
        let h = out_ref(handle)?;
        *h = Box::into_raw(Box::new(PalmGallery { inner: RwLock::new(Gallery::new()) }));
        Ok(())
    })
}

/// Loads a gallery file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `handle` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn palm_gallery_load(path: *const c_char, handle: *mut *mut PalmGallery) -> PalmStatus {
    guard(|| {
        let g = Gallery::load(c_str(path)?)?;
        *out_ref(handle)? = Box::into_raw(Box::new(PalmGallery { inner: RwLock::new(g) }));
        Ok(())
    })
}

/// Writes the gallery atomically (temporary file, then rename).
///
/// # Safety
/// `g` must come from this library; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn palm_gallery_save(g: *const PalmGallery, path: *const c_char) -> PalmStatus {
    guard(|| {
        let g = gallery(g)?.inner.read().map_err(poisoned)?;
        g.save(c_str(path)?)?;
        Ok(())
    })
}

/// Releases a gallery handle. Null is ignored.
///
/// # Safety
/// `g` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn palm_gallery_free(g: *mut PalmGallery) {
    if !g.is_null() {
        drop(Box::from_raw(g));
    }
}

/// # Safety
/// `g` must come from this library; `len` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn palm_gallery_len(g: *const PalmGallery, len: *mut usize) -> PalmStatus {
    guard(|| {
        *out_ref(len)? = gallery(g)?.inner.read().map_err(poisoned)?.len();
        Ok(())
    })
}

/// Appends a serialized template under `subject_id`; the entry's enrollment
/// sequence number is written to `enroll_seq` when non-null.
///
/// # Safety
/// `g` must come from this library, `subject_id` must be NUL-terminated and
/// `template_bytes` valid for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn palm_gallery_enroll(
    g: *const PalmGallery,
    subject_id: *const c_char,
    template_bytes: *const u8,
    len: usize,
    enroll_seq: *mut u64,
) -> PalmStatus {
    guard(|| {
        let id = c_str(subject_id)?;
        let t = CompressedTemplate::from_bytes(slice(template_bytes, len)?)?;
        let seq = gallery(g)?.inner.write().map_err(poisoned)?.enroll(id, t)?;
        if let Some(s) = enroll_seq.as_mut() {
            *s = seq;
        }
        Ok(())
    })
}

/// Top-`rank` search of a concatenated v‖r probe. Writes up to `capacity`
/// candidates, their count, and whether the open-set decision accepted.
///
/// # Safety
/// `probe` must be valid for `dim` doubles, `candidates` for `capacity`
/// entries; `count` and `accepted` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn palm_gallery_search(
    g: *const PalmGallery,
    probe: *const f64,
    dim: usize,
    threshold: f64,
    rank: usize,
    candidates: *mut PalmCandidate,
    capacity: usize,
    count: *mut usize,
    accepted: *mut bool,
) -> PalmStatus {
    guard(|| {
        let policy = SearchPolicy::new(threshold, rank)?;
        let p = ConcatTemplate::from_concatenated(slice(probe, dim)?)?;
        let found = gallery(g)?.inner.read().map_err(poisoned)?.search(&p, &policy)?;
        let count = out_ref(count)?;
        let accepted = out_ref(accepted)?;
        *count = found.len();
        *accepted = matches!(decide_open_set(&found, &policy), Decision::Accept(_));
        if capacity < found.len() {
            return fail(PalmStatus::BufferTooSmall, &format!("need {} candidates", found.len()));
        }
        for (o, c) in slice_mut(candidates, found.len())?.iter_mut().zip(&found) {
            *o = PalmCandidate { enroll_seq: c.enroll_seq, rank: c.rank, score: c.score.value() };
        }
        Ok(())
    })
}

/// Copies the subject id of entry `enroll_seq` (NUL-terminated) into `buf`;
/// `needed` receives the id length excluding the NUL.
///
/// # Safety
/// `buf` must be valid for `len` bytes; `needed` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn palm_gallery_subject_id(
    g: *const PalmGallery,
    enroll_seq: u64,
    buf: *mut c_char,
    len: usize,
    needed: *mut usize,
) -> PalmStatus {
    guard(|| {
        let g = gallery(g)?.inner.read().map_err(poisoned)?;
        let entry = g
            .entries()
            .iter()
            .find(|e| e.enroll_seq == enroll_seq)
            .map_or_else(|| fail(PalmStatus::InvalidArgument, "no such entry"), Ok)?;
        let id = entry.subject_id.as_bytes();
        *out_ref(needed)? = id.len();
        if len <= id.len() {
            return fail(PalmStatus::BufferTooSmall, &format!("need {} bytes", id.len() + 1));
        }
        let dst = slice_mut(buf.cast::<u8>(), id.len() + 1)?;
        dst[..id.len()].copy_from_slice(id);
        dst[id.len()] = 0;
        Ok(())
    })
}

/// Dimension of each toy-extractor branch (384).
#[no_mangle]
pub extern "C" fn palm_toy_branch_dim() -> usize {
    ToyExtractor::new().branch_dim()
}

/// Toy extraction from a 224×224 grayscale ROI (row-major, values in
/// [0, 1]). Writes unit-normalized branches and their raw norms.
///
/// # Safety
/// `pixels` must be valid for 224*224 floats; `branch_v`/`branch_r` for
/// `branch_dim` doubles; `raw_norms` for 2 doubles.
#[no_mangle]
pub unsafe extern "C" fn palm_toy_extract(
    pixels: *const f32,
    pixel_count: usize,
    branch_v: *mut f64,
    branch_r: *mut f64,
    branch_dim: usize,
    raw_norms: *mut f64,
) -> PalmStatus {
    guard(|| {
        if pixel_count != ROI_SIZE * ROI_SIZE {
            return fail(PalmStatus::InvalidArgument, "expected a 224x224 ROI");
        }
        let ex = ToyExtractor::new();
        if branch_dim != ex.branch_dim() {
            return Err(Error::DimMismatch { expected: ex.branch_dim(), actual: branch_dim }.into());
        }
        let img = Image::from_vec(ROI_SIZE, ROI_SIZE, 1, slice(pixels, pixel_count)?.to_vec())?;
        let t = ex.extract(&RoiImage::new(img)?)?;
        slice_mut(branch_v, branch_dim)?.copy_from_slice(t.branch_v().values());
        slice_mut(branch_r, branch_dim)?.copy_from_slice(t.branch_r().values());
        let norms = slice_mut(raw_norms, 2)?;
        norms[0] = t.branch_v().raw_norm();
        norms[1] = t.branch_r().raw_norm();
        Ok(())
    })
}

/// Variance of the Laplacian of Gaussian over the interior of a grayscale image.
///
/// # Safety
/// `pixels` must be valid for `width * height` floats.
#[no_mangle]
pub unsafe extern "C" fn palm_quality_log_variance(
    pixels: *const f32,
    width: usize,
    height: usize,
    sigma: f64,
    quality: *mut f64,
) -> PalmStatus {
    guard(|| {
        let n = width
            .checked_mul(height)
            .map_or_else(|| fail(PalmStatus::InvalidArgument, "image too large"), Ok)?;
        let img = Image::from_vec(width, height, 1, slice(pixels, n)?.to_vec())?;
        *out_ref(quality)? = quality_log_variance(&img, sigma)?.value;
        Ok(())
    })
}

/// Homography mapping 9 source keypoints onto 9 destination keypoints
/// (`[x0, y0, x1, y1, ...]`), written row-major to `h` (9 doubles, h22 = 1).
///
/// # Safety
/// `src` and `dst` must be valid for 18 doubles, `h` for 9.
#[no_mangle]
pub unsafe extern "C" fn palm_estimate_homography(src: *const f64, dst: *const f64, h: *mut f64) -> PalmStatus {
    guard(|| {
        let to_set = |v: &[f64]| -> Result<KeypointSet, Fail> {
            let mut pts = [[0.0; 2]; KEYPOINT_COUNT];
            for (p, c) in pts.iter_mut().zip(v.chunks_exact(2)) {
                *p = [c[0], c[1]];
            }
            Ok(KeypointSet::new(pts)?)
        };
        let s = to_set(slice(src, 2 * KEYPOINT_COUNT)?)?;
        let d = to_set(slice(dst, 2 * KEYPOINT_COUNT)?)?;
        let m = estimate_homography(&s, &d)?;
        let out = slice_mut(h, 9)?;
        for r in 0..3 {
            for c in 0..3 {
                out[3 * r + c] = m.matrix()[(r, c)];
            }
        }
        Ok(())
    })
}
