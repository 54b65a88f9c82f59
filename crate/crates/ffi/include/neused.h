#ifndef NEUSED_H
#define NEUSED_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Which foreground field of a bundle to use.
 */
typedef enum NeusedField {
  NEUSED_FIELD_SOURCE = 0,
  NEUSED_FIELD_TARGET = 1,
} NeusedField;

/**
 * Result codes of every exported function.
 */
typedef enum NeusedStatus {
  NEUSED_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  NEUSED_STATUS_NULL_POINTER = 1,
  /**
   * An argument was out of range or not valid UTF-8.
   */
  NEUSED_STATUS_INVALID_ARGUMENT = 2,
  /**
   * The checkpoint file does not exist.
   */
  NEUSED_STATUS_NOT_FOUND = 3,
  /**
   * The checkpoint file exists but could not be decoded.
   */
  NEUSED_STATUS_INVALID_CHECKPOINT = 4,
  /**
   * Writing an output file failed.
   */
  NEUSED_STATUS_IO = 5,
  /**
   * An internal panic was caught.
   */
  NEUSED_STATUS_PANIC = 6,
} NeusedStatus;

/**
 * A loaded checkpoint.
 */
typedef struct NeusedBundle NeusedBundle;

/**
 * Pinhole intrinsics in pixels.
 */
typedef struct NeusedIntrinsics {
  double fx;
  double fy;
  double cx;
  double cy;
  uint32_t width;
  uint32_t height;
} NeusedIntrinsics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread; empty after a success.
 * The pointer stays valid until the next call on the same thread.
 */
const char *neused_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *neused_version(void);

/**
 * Loads a checkpoint. On success `*out` receives a handle owned by the caller.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum NeusedStatus neused_bundle_load(const char *path, struct NeusedBundle **out);

/**
 * Releases a handle. Null is ignored.
 *
 * # Safety
 * `b` must come from [`neused_bundle_load`] and not be used afterwards.
 */
void neused_bundle_free(struct NeusedBundle *b);

/**
 * Stage tag of the checkpoint ("source" or "edited"); valid while the handle lives.
 *
 * # Safety
 * `b` must be a live handle or null.
 */
const char *neused_bundle_stage(const struct NeusedBundle *b);

/**
 * Number of cameras recorded in the checkpoint.
 *
 * # Safety
 * `b` must be a live handle or null.
 */
size_t neused_bundle_camera_count(const struct NeusedBundle *b);

/**
 * Parameter counts of the background, source and target fields.
 *
 * # Safety
 * `b` must be a live handle; `out` must point to three writable values.
 */
enum NeusedStatus neused_bundle_param_counts(const struct NeusedBundle *b, size_t *out);

/**
 * Sets the foreground and background sample counts used by later renders.
 *
 * # Safety
 * `b` must be a live handle.
 */
enum NeusedStatus neused_bundle_set_samples(struct NeusedBundle *b, uint32_t fg, uint32_t bg);

/**
 * Evaluates the signed distance of `field` at `n` points (`xyz` holds 3n
 * values) into `out` (n values).
 *
 * # Safety
 * `xyz` must hold `3 * n` readable values and `out` `n` writable values.
 */
enum NeusedStatus neused_sdf(const struct NeusedBundle *b,
                             enum NeusedField field,
                             const double *xyz,
                             size_t n,
                             double *out);

/**
 * Renders the composited RGB image of `field` for a camera given by its
 * intrinsics and a row-major 4×4 camera-to-world matrix. `out` receives
 * `3 * width * height` values, row-major and interleaved.
 *
 * # Safety
 * `pose` must hold 16 readable values and `out` `3 * width * height` writable values.
 */
enum NeusedStatus neused_render(const struct NeusedBundle *b,
                                enum NeusedField field,
                                struct NeusedIntrinsics intrinsics,
                                const double *pose,
                                double *out);

/**
 * Extracts a coloured mesh of `field` with marching cubes at `res`³ cells on
 * [-1, 1]³ and writes it to `path` (`.obj` or `.ply`).
 *
 * # Safety
 * `path` must be a NUL-terminated string.
 */
enum NeusedStatus neused_mesh_export(const struct NeusedBundle *b,
                                     enum NeusedField field,
                                     uint32_t res,
                                     const char *path);

/**
 * Sharpness `s` of the NeuS opacity of `field`, or NaN for a null handle.
 *
 * # Safety
 * `b` must be a live handle or null.
 */
double neused_sharpness(const struct NeusedBundle *b, enum NeusedField field);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* NEUSED_H */
