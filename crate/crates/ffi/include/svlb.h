#ifndef SVLB_H
#define SVLB_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SvlbStatus {
  SVLB_STATUS_OK = 0,
  SVLB_STATUS_NULL_POINTER = 1,
  SVLB_STATUS_INVALID_ARGUMENT = 2,
  SVLB_STATUS_MISSING_ARTIFACT = 3,
  SVLB_STATUS_EMPTY_RESULT = 4,
  SVLB_STATUS_INCOMPATIBLE = 5,
  SVLB_STATUS_MALFORMED = 6,
  SVLB_STATUS_IO = 7,
  SVLB_STATUS_BUFFER_TOO_SMALL = 8,
  SVLB_STATUS_NUMERIC = 9,
  SVLB_STATUS_PANIC = 10,
} SvlbStatus;

/**
 * A loaded checkpoint.
 */
typedef struct SvlbCheckpoint SvlbCheckpoint;

/**
 * A generated scene.
 */
typedef struct SvlbScene SvlbScene;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * NUL-terminated library version; static storage.
 */
const char *svlb_version(void);

/**
 * Copies the calling thread's last error message into `buf`.
 * `needed` receives the size including the NUL.
 *
 * # Safety
 * `buf` must be null or valid for `cap` bytes; `needed` null or writable.
 */
enum SvlbStatus svlb_last_error(char *buf, size_t cap, size_t *needed);

/**
 * Applies 2D-RoPE to `n = grid_h * grid_w` vectors of `head_dim` values
 * stored row-major in `x`, writing `n * head_dim` values to `out`.
 *
 * # Safety
 * `x` and `out` must each be valid for `grid_h * grid_w * head_dim` doubles.
 */
enum SvlbStatus svlb_rope2d_apply(const double *x,
                                  double *out,
                                  size_t grid_h,
                                  size_t grid_w,
                                  size_t head_dim,
                                  double theta_base);

/**
 * Runs one `svlb` subcommand (`gen-data`, `pretrain-encoder`, `align`,
 * `evaluate`, `grid-report`) on a config file. `out` may be null.
 *
 * # Safety
 * String arguments must be NUL-terminated or null where allowed.
 */
enum SvlbStatus svlb_run_command(const char *command,
                                 const char *config_path,
                                 const char *out,
                                 bool force);

/**
 * Opens a checkpoint file without checking its config hash.
 *
 * # Safety
 * `path` must be NUL-terminated; `handle` must be writable.
 */
enum SvlbStatus svlb_checkpoint_open(const char *path, struct SvlbCheckpoint **handle);

/**
 * # Safety
 * `handle` must come from [`svlb_checkpoint_open`] and not be used again.
 */
void svlb_checkpoint_free(struct SvlbCheckpoint *handle);

/**
 * Number of named parameters, 0 for a null handle.
 *
 * # Safety
 * `handle` must be null or live.
 */
size_t svlb_checkpoint_len(const struct SvlbCheckpoint *handle);

/**
 * Name of parameter `index` (names are sorted).
 *
 * # Safety
 * `handle` live; `buf` valid for `cap` bytes or null; `needed` null or writable.
 */
enum SvlbStatus svlb_checkpoint_name(const struct SvlbCheckpoint *handle,
                                     size_t index,
                                     char *buf,
                                     size_t cap,
                                     size_t *needed);

/**
 * Shape of parameter `name`: writes up to `cap` dims into `dims` and the
 * rank into `ndim`.
 *
 * # Safety
 * `handle` live; `name` NUL-terminated; `dims` valid for `cap` entries or
 * null with `cap == 0`; `ndim` writable.
 */
enum SvlbStatus svlb_checkpoint_shape(const struct SvlbCheckpoint *handle,
                                      const char *name,
                                      size_t *dims,
                                      size_t cap,
                                      size_t *ndim);

/**
 * Copies the values of parameter `name` as doubles.
 *
 * # Safety
 * `handle` live; `name` NUL-terminated; `out` valid for `cap` doubles.
 */
enum SvlbStatus svlb_checkpoint_read(const struct SvlbCheckpoint *handle,
                                     const char *name,
                                     double *out,
                                     size_t cap);

/**
 * Generates a scene on a square `canvas` with a `rows x cols` grid.
 *
 * # Safety
 * `handle` must be writable.
 */
enum SvlbStatus svlb_scene_generate(uint64_t seed,
                                    size_t canvas,
                                    size_t rows,
                                    size_t cols,
                                    size_t max_objects,
                                    struct SvlbScene **handle);

/**
 * # Safety
 * `handle` must come from [`svlb_scene_generate`] and not be used again.
 */
void svlb_scene_free(struct SvlbScene *handle);

/**
 * Number of objects, 0 for a null handle.
 *
 * # Safety
 * `handle` must be null or live.
 */
size_t svlb_scene_object_count(const struct SvlbScene *handle);

/**
 * Renders to interleaved RGB bytes, `canvas * canvas * 3` of them.
 *
 * # Safety
 * `handle` live; `out` valid for `cap` bytes.
 */
enum SvlbStatus svlb_scene_render(const struct SvlbScene *handle, uint8_t *out, size_t cap);

/**
 * Answers a benchmark question (e.g. `how many circles are there ?`)
 * about the scene. Unanswerable questions give `InvalidArgument`.
 *
 * # Safety
 * `handle` live; `question` NUL-terminated; `buf` valid for `cap` bytes.
 */
enum SvlbStatus svlb_scene_answer(const struct SvlbScene *handle,
                                  const char *question,
                                  char *buf,
                                  size_t cap,
                                  size_t *needed);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SVLB_H */
