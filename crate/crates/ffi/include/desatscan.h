#ifndef DESATSCAN_H
#define DESATSCAN_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum DsCiMethod {
  DS_CI_METHOD_STUDENT_T = 0,
  DS_CI_METHOD_NORMAL = 1,
} DsCiMethod;

typedef enum DsStatus {
  DS_STATUS_OK = 0,
  DS_STATUS_NULL_POINTER = 1,
  DS_STATUS_INVALID_ARGUMENT = 2,
  DS_STATUS_PARSE_ERROR = 3,
  DS_STATUS_COMPUTE_ERROR = 4,
  DS_STATUS_BUFFER_TOO_SMALL = 5,
  DS_STATUS_PANIC = 6,
} DsStatus;

/**
 * A trained model loaded from a checkpoint.
 */
typedef struct DsModel DsModel;

/**
 * A parsed EDF recording.
 */
typedef struct DsRecording DsRecording;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread; empty after a success.
 * The pointer stays valid until the next call on this thread.
 */
const char *ds_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *ds_version(void);

/**
 * Parses an EDF file held in memory.
 *
 * # Safety
 * `bytes` must point to `len` readable bytes and `out` to a writable
 * handle pointer.
 */
enum DsStatus ds_recording_open(const uint8_t *bytes, size_t len, struct DsRecording **out);

/**
 * # Safety
 * `rec` must be null or a handle from [`ds_recording_open`] not yet freed.
 */
void ds_recording_free(struct DsRecording *rec);

/**
 * # Safety
 * `rec` must be a live handle and `out` writable.
 */
enum DsStatus ds_recording_signal_count(const struct DsRecording *rec, size_t *out);

/**
 * Sample rate and sample count of signal `index`.
 *
 * # Safety
 * `rec` must be a live handle; `sample_rate` and `n_samples` writable.
 */
enum DsStatus ds_recording_signal_info(const struct DsRecording *rec,
                                       size_t index,
                                       double *sample_rate,
                                       size_t *n_samples);

/**
 * Copies the label of signal `index` as a NUL-terminated string into
 * `buf` of `capacity` bytes.
 *
 * # Safety
 * `rec` must be a live handle and `buf` writable for `capacity` bytes.
 */
enum DsStatus ds_recording_signal_label(const struct DsRecording *rec,
                                        size_t index,
                                        char *buf,
                                        size_t capacity);

/**
 * Copies the physical samples of signal `index` into `out`.
 *
 * # Safety
 * `rec` must be a live handle and `out` writable for `capacity` values.
 */
enum DsStatus ds_recording_copy_samples(const struct DsRecording *rec,
                                        size_t index,
                                        double *out,
                                        size_t capacity);

/**
 * Zero-phase removal of 60 Hz and 120 Hz line noise. `out` receives `n`
 * values and may alias `x`.
 *
 * # Safety
 * `x` must be readable and `out` writable for `n` values.
 */
enum DsStatus ds_denoise(const double *x, size_t n, double sample_rate, double *out);

/**
 * Log-magnitude spectrogram of one 30 s epoch.
 *
 * `samples` holds 7 channels of 7680 samples, channel-major. `out`
 * receives 7 × 129 × 61 values laid out `[channel][bin][frame]`.
 *
 * # Safety
 * `samples` must be readable for `len` values and `out` writable for
 * `capacity` values.
 */
enum DsStatus ds_epoch_spectrogram(const double *samples, size_t len, float *out, size_t capacity);

/**
 * Balanced accuracy, predicting positive when `score >= threshold`.
 *
 * # Safety
 * `scores` and `labels` must be readable for `n` values; `out` writable.
 */
enum DsStatus ds_balanced_accuracy(const double *scores,
                                   const uint8_t *labels,
                                   size_t n,
                                   double threshold,
                                   double *out);

/**
 * Area under the ROC curve; ties count one half.
 *
 * # Safety
 * `scores` and `labels` must be readable for `n` values; `out` writable.
 */
enum DsStatus ds_roc_auc(const double *scores, const uint8_t *labels, size_t n, double *out);

/**
 * Mean and 95 % confidence interval of `n >= 2` values.
 *
 * # Safety
 * `values` must be readable for `n` values; `mean`, `lo`, `hi` writable.
 */
enum DsStatus ds_ci95(const double *values,
                      size_t n,
                      enum DsCiMethod method,
                      double *mean,
                      double *lo,
                      double *hi);

/**
 * Loads a model checkpoint held in memory.
 *
 * # Safety
 * `bytes` must be readable for `len` bytes and `out` writable.
 */
enum DsStatus ds_model_load(const uint8_t *bytes, size_t len, struct DsModel **out);

/**
 * # Safety
 * `model` must be null or a handle from [`ds_model_load`] not yet freed.
 */
void ds_model_free(struct DsModel *model);

/**
 * Desaturation scores in (0, 1) for `n_items` spectrogram tensors laid
 * out back to back, each 7 × 129 × 61 values.
 *
 * # Safety
 * `model` must be a live handle, `tensors` readable for
 * `n_items * 7 * 129 * 61` values and `scores` writable for `n_items`.
 */
enum DsStatus ds_model_predict(const struct DsModel *model,
                               const float *tensors,
                               size_t n_items,
                               double *scores);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DESATSCAN_H */
