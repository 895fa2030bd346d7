#ifndef INVOP_H
#define INVOP_H

#pragma once

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of a call. Values 2 and 3 match the command-line exit codes.
 */
typedef enum InvopStatus {
  INVOP_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  INVOP_STATUS_NULL_ARGUMENT = 1,
  /**
   * Invalid or incompatible input (bad path, sizes, configuration).
   */
  INVOP_STATUS_INVALID_INPUT = 2,
  /**
   * Solver, numerical or I/O failure.
   */
  INVOP_STATUS_RUNTIME = 3,
  /**
   * At least one self-check audit failed.
   */
  INVOP_STATUS_AUDIT_FAILED = 4,
  /**
   * A panic was caught at the boundary.
   */
  INVOP_STATUS_PANIC = 5,
} InvopStatus;

/**
 * Per-sample field selector for [`invop_dataset_sample_field`].
 */
typedef enum InvopField {
  INVOP_FIELD_MEASUREMENT = 0,
  INVOP_FIELD_U = 1,
  INVOP_FIELD_S = 2,
} InvopField;

/**
 * Opaque dataset handle.
 */
typedef struct InvopDataset InvopDataset;

/**
 * Opaque handle to a trained model loaded from a checkpoint.
 */
typedef struct InvopModel InvopModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *invop_version(void);

/**
 * Message of the last failure on this thread; empty if none. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *invop_last_error(void);

/**
 * Generate `n_samples` samples of `problem` ("rd", "helmholtz", "darcy")
 * with the default recipe. `grid` = 0 keeps the default resolution.
 *
 * # Safety
 * `problem` must be a NUL-terminated string and `out` a valid pointer.
 */
enum InvopStatus invop_dataset_generate(const char *problem,
                                        size_t n_samples,
                                        uint64_t seed,
                                        size_t grid,
                                        struct InvopDataset **out);

/**
 * Load a dataset directory.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum InvopStatus invop_dataset_load(const char *path, struct InvopDataset **out);

/**
 * Write a dataset directory, replacing any previous one at `path`.
 *
 * # Safety
 * `ds` must come from this library and `path` be a NUL-terminated string.
 */
enum InvopStatus invop_dataset_save(const struct InvopDataset *ds, const char *path);

/**
 * Number of samples; 0 for a null handle.
 *
 * # Safety
 * `ds` must be null or come from this library.
 */
size_t invop_dataset_len(const struct InvopDataset *ds);

/**
 * Values per sample of `field`; 0 for a null handle.
 *
 * # Safety
 * `ds` must be null or come from this library.
 */
size_t invop_dataset_field_len(const struct InvopDataset *ds, enum InvopField field);

/**
 * Copy one field of sample `index` into `out`, which holds `out_len`
 * values; `out_len` must equal [`invop_dataset_field_len`].
 *
 * # Safety
 * `ds` must come from this library and `out` point to `out_len` writable doubles.
 */
enum InvopStatus invop_dataset_sample_field(const struct InvopDataset *ds,
                                            size_t index,
                                            enum InvopField field,
                                            double *out,
                                            size_t out_len);

/**
 * Largest relative solver residual over the samples, written to `worst`.
 *
 * # Safety
 * `ds` must come from this library and `worst` be a valid pointer.
 */
enum InvopStatus invop_dataset_residual(const struct InvopDataset *ds, double *worst);

/**
 * Release a dataset. Null is ignored.
 *
 * # Safety
 * `ds` must be null or an unreleased handle from this library.
 */
void invop_dataset_free(struct InvopDataset *ds);

/**
 * Load the model stored in a checkpoint directory.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum InvopStatus invop_model_load(const char *path, struct InvopModel **out);

/**
 * Number of trainable parameters; 0 for a null handle.
 *
 * # Safety
 * `model` must be null or come from this library.
 */
size_t invop_model_param_count(const struct InvopModel *model);

/**
 * Coordinates per point for `u` (first) and `s` (second).
 *
 * # Safety
 * `model` must come from this library; the outputs must be valid pointers.
 */
enum InvopStatus invop_model_dims(const struct InvopModel *model, size_t *u_dim, size_t *s_dim);

/**
 * Predict `u` at `n_u` points and `s` at `n_s` points from one measurement.
 * Points are packed coordinate-fastest (`x0 y0 x1 y1 ...`, or `x t` for
 * reaction-diffusion `u`); outputs hold `n_u` and `n_s` values.
 *
 * # Safety
 * All pointers must reference buffers of the stated sizes.
 */
enum InvopStatus invop_model_predict(const struct InvopModel *model,
                                     const double *measurement,
                                     size_t measurement_len,
                                     const double *u_points,
                                     size_t n_u,
                                     const double *s_points,
                                     size_t n_s,
                                     double *u_out,
                                     double *s_out);

/**
 * Release a model. Null is ignored.
 *
 * # Safety
 * `model` must be null or an unreleased handle from this library.
 */
void invop_model_free(struct InvopModel *model);

/**
 * Run the self-check audits. A non-zero `inject_fault` corrupts the tanh
 * derivative so the gradient audit must fail.
 */
enum InvopStatus invop_check(int32_t inject_fault);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* INVOP_H */
