#ifndef SQA_H
#define SQA_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SqaStatus {
  SQA_STATUS_OK = 0,
  SQA_STATUS_NULL_POINTER = 1,
  SQA_STATUS_INVALID_ARGUMENT = 2,
  SQA_STATUS_IO = 3,
  SQA_STATUS_FORMAT = 4,
  SQA_STATUS_SHAPE = 5,
  SQA_STATUS_NON_FINITE = 6,
  SQA_STATUS_UNAVAILABLE = 7,
  SQA_STATUS_EMPTY = 8,
  SQA_STATUS_PANIC = 99,
} SqaStatus;

/**
 * A T×D feature matrix (MFCC or one encoder layer).
 */
typedef struct SqaFeatures SqaFeatures;

/**
 * A loaded predictor checkpoint.
 */
typedef struct SqaModel SqaModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread; empty after a success.
 * Valid until the next call into this library from the same thread.
 */
const char *sqa_last_error_message(void);

/**
 * Library version, a static NUL-terminated string.
 */
const char *sqa_version(void);

/**
 * Load a checkpoint file into a new model handle.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a writable pointer.
 */
enum SqaStatus sqa_model_load(const char *path, struct SqaModel **out);

/**
 * # Safety
 * `model` must come from [`sqa_model_load`] and not be used afterwards. Null is ignored.
 */
void sqa_model_free(struct SqaModel *model);

/**
 * Expected feature dimension and number of input streams (2 with fusion).
 *
 * # Safety
 * `model` must be a live handle; the out pointers must be writable.
 */
enum SqaStatus sqa_model_input_shape(const struct SqaModel *model,
                                     size_t *feature_dim,
                                     size_t *num_streams);

/**
 * Predict the MOS (1..5) of one utterance from its feature stream(s).
 *
 * # Safety
 * `streams` must point to `num_streams` live feature handles; `mos` must be writable.
 */
enum SqaStatus sqa_model_predict(const struct SqaModel *model,
                                 const struct SqaFeatures *const *streams,
                                 size_t num_streams,
                                 double *mos);

/**
 * Wrap a row-major T×D float matrix as features for `layer`
 * (`0xFFFFFFFF` marks MFCCs).
 *
 * # Safety
 * `frames` must hold `num_frames * feature_dim` floats; `out` must be writable.
 */
enum SqaStatus sqa_features_from_frames(const float *frames,
                                        size_t num_frames,
                                        size_t feature_dim,
                                        uint32_t layer,
                                        struct SqaFeatures **out);

/**
 * Read an SQAF feature file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a writable pointer.
 */
enum SqaStatus sqa_features_read(const char *path, struct SqaFeatures **out);

/**
 * 40-dimensional MFCCs of mono audio in [-1, 1]; resampled to 16 kHz first
 * when `sample_rate` differs.
 *
 * # Safety
 * `samples` must hold `len` floats; `out` must be writable.
 */
enum SqaStatus sqa_features_extract_mfcc(const float *samples,
                                         size_t len,
                                         uint32_t sample_rate,
                                         struct SqaFeatures **out);

/**
 * # Safety
 * `features` must be a live handle; the out pointers must be writable.
 */
enum SqaStatus sqa_features_shape(const struct SqaFeatures *features,
                                  size_t *num_frames,
                                  size_t *feature_dim);

/**
 * Copy the row-major frames into `buf`, which must have room for T×D floats.
 *
 * # Safety
 * `buf` must be writable for `buf_len` floats.
 */
enum SqaStatus sqa_features_copy(const struct SqaFeatures *features, float *buf, size_t buf_len);

/**
 * # Safety
 * `features` must come from an `sqa_features_*` constructor and not be used afterwards. Null is ignored.
 */
void sqa_features_free(struct SqaFeatures *features);

/**
 * Pooled single-vote RMSE from per-sample vote counts and standard
 * deviations (N−1 normalization). `quant_step` > 0 also fills
 * `dequantized`; pass 0 to skip it.
 *
 * # Safety
 * `counts` and `stds` must hold `n` values; `rmse` must be writable,
 * `dequantized` may be null.
 */
enum SqaStatus sqa_human_rmse(const uint32_t *counts,
                              const double *stds,
                              size_t n,
                              double quant_step,
                              double *rmse,
                              double *dequantized);

/**
 * Remove uniform vote-quantization noise of step `quant_step` from an RMSE.
 *
 * # Safety
 * `out` must be writable.
 */
enum SqaStatus sqa_dequantize_human_rmse(double rmse, double quant_step, double *out);

/**
 * Map a raw 0..100 IUB rating onto the 1..5 MOS scale.
 *
 * # Safety
 * `out` must be writable.
 */
enum SqaStatus sqa_convert_iub(double raw, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SQA_H */
