#ifndef PALM_ENGINE_H
#define PALM_ENGINE_H

/* Generated with cbindgen:0.29.4 */

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

typedef enum PalmStatus {
  PALM_STATUS_OK = 0,
  PALM_STATUS_NULL_POINTER = 1,
  PALM_STATUS_INVALID_ARGUMENT = 2,
  PALM_STATUS_DIM_MISMATCH = 3,
  PALM_STATUS_ZERO_NORM = 4,
  PALM_STATUS_CORRUPT_DATA = 5,
  PALM_STATUS_EMPTY_GALLERY = 6,
  PALM_STATUS_UNKNOWN_SUBJECT = 7,
  PALM_STATUS_IO = 8,
  PALM_STATUS_BUFFER_TOO_SMALL = 9,
  PALM_STATUS_DEGENERATE = 10,
  PALM_STATUS_PANIC = 11,
  PALM_STATUS_INTERNAL = 12,
} PalmStatus;

/**
 * Opaque gallery handle.
 */
typedef struct PalmGallery PalmGallery;

/**
 * One search result. `enroll_seq` identifies the gallery entry; use
 * [`palm_gallery_subject_id`] to fetch its subject id.
 */
typedef struct PalmCandidate {
  uint64_t enroll_seq;
  size_t rank;
  double score;
} PalmCandidate;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the calling thread's last error message (NUL-terminated, truncated
 * to fit) into `buf`. Returns the full message length excluding the NUL.
 *
 * # Safety
 * `buf` must be null or valid for `len` bytes.
 */
size_t palm_last_error(char *buf, size_t len);

/**
 * Serialized template size for an embedding of `dim` values: `dim + 4`.
 */
size_t palm_template_size(size_t dim);

/**
 * Compresses `dim` values into `out` (`palm_template_size(dim)` bytes).
 *
 * # Safety
 * `values` must be valid for `dim` floats and `out` for `out_len` bytes.
 */
enum PalmStatus palm_compress(const float *values, size_t dim, uint8_t *out, size_t out_len);

/**
 * Decompresses a template; writes its dimension to `out_dim` and the values
 * to `out` when `out_len` is large enough (otherwise `BufferTooSmall`).
 *
 * # Safety
 * `bytes` must be valid for `len` bytes and `out` for `out_len` floats.
 */
enum PalmStatus palm_decompress(const uint8_t *bytes,
                                size_t len,
                                float *out,
                                size_t out_len,
                                size_t *out_dim);

/**
 * Score of two concatenated v‖r templates (`concat_dim` values each,
 * branches re-normalized): `(dot + 2) / 4`.
 *
 * # Safety
 * `p` and `q` must be valid for `concat_dim` doubles.
 */
enum PalmStatus palm_concat_score(const double *p,
                                  const double *q,
                                  size_t concat_dim,
                                  double *score);

/**
 * `weight * primary + (1 - weight) * external`, all in [0, 1].
 *
 * # Safety
 * `fused` must be a valid pointer.
 */
enum PalmStatus palm_fuse_scores(double primary, double external, double weight, double *fused);

/**
 * Creates an empty gallery.
 *
 * # Safety
 * `handle` must be a valid pointer; release the result with [`palm_gallery_free`].
 */
enum PalmStatus palm_gallery_new(struct PalmGallery **handle);

/**
 * Loads a gallery file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `handle` a valid pointer.
 */
enum PalmStatus palm_gallery_load(const char *path, struct PalmGallery **handle);

/**
 * Writes the gallery atomically (temporary file, then rename).
 *
 * # Safety
 * `g` must come from this library; `path` must be NUL-terminated.
 */
enum PalmStatus palm_gallery_save(const struct PalmGallery *g, const char *path);

/**
 * Releases a gallery handle. Null is ignored.
 *
 * # Safety
 * `g` must be null or a handle not yet freed.
 */
void palm_gallery_free(struct PalmGallery *g);

/**
 * # Safety
 * `g` must come from this library; `len` must be a valid pointer.
 */
enum PalmStatus palm_gallery_len(const struct PalmGallery *g, size_t *len);

/**
 * Appends a serialized template under `subject_id`; the entry's enrollment
 * sequence number is written to `enroll_seq` when non-null.
 *
 * # Safety
 * `g` must come from this library, `subject_id` must be NUL-terminated and
 * `template_bytes` valid for `len` bytes.
 */
enum PalmStatus palm_gallery_enroll(const struct PalmGallery *g,
                                    const char *subject_id,
                                    const uint8_t *template_bytes,
                                    size_t len,
                                    uint64_t *enroll_seq);

/**
 * Top-`rank` search of a concatenated v‖r probe. Writes up to `capacity`
 * candidates, their count, and whether the open-set decision accepted.
 *
 * # Safety
 * `probe` must be valid for `dim` doubles, `candidates` for `capacity`
 * entries; `count` and `accepted` must be valid pointers.
 */
enum PalmStatus palm_gallery_search(const struct PalmGallery *g,
                                    const double *probe,
                                    size_t dim,
                                    double threshold,
                                    size_t rank,
                                    struct PalmCandidate *candidates,
                                    size_t capacity,
                                    size_t *count,
                                    bool *accepted);

/**
 * Copies the subject id of entry `enroll_seq` (NUL-terminated) into `buf`;
 * `needed` receives the id length excluding the NUL.
 *
 * # Safety
 * `buf` must be valid for `len` bytes; `needed` must be a valid pointer.
 */
enum PalmStatus palm_gallery_subject_id(const struct PalmGallery *g,
                                        uint64_t enroll_seq,
                                        char *buf,
                                        size_t len,
                                        size_t *needed);

/**
 * Dimension of each toy-extractor branch (384).
 */
size_t palm_toy_branch_dim(void);

/**
 * Toy extraction from a 224×224 grayscale ROI (row-major, values in
 * [0, 1]). Writes unit-normalized branches and their raw norms.
 *
 * # Safety
 * `pixels` must be valid for 224*224 floats; `branch_v`/`branch_r` for
 * `branch_dim` doubles; `raw_norms` for 2 doubles.
 */
enum PalmStatus palm_toy_extract(const float *pixels,
                                 size_t pixel_count,
                                 double *branch_v,
                                 double *branch_r,
                                 size_t branch_dim,
                                 double *raw_norms);

/**
 * Variance of the Laplacian of Gaussian over the interior of a grayscale image.
 *
 * # Safety
 * `pixels` must be valid for `width * height` floats.
 */
enum PalmStatus palm_quality_log_variance(const float *pixels,
                                          size_t width,
                                          size_t height,
                                          double sigma,
                                          double *quality);

/**
 * Homography mapping 9 source keypoints onto 9 destination keypoints
 * (`[x0, y0, x1, y1, ...]`), written row-major to `h` (9 doubles, h22 = 1).
 *
 * # Safety
 * `src` and `dst` must be valid for 18 doubles, `h` for 9.
 */
enum PalmStatus palm_estimate_homography(const double *src, const double *dst, double *h);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PALM_ENGINE_H */
