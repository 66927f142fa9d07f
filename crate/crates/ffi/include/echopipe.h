#ifndef ECHOPIPE_H
#define ECHOPIPE_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Number of view classes written by [`ep_view_model_predict`].
 */
#define EP_NUM_VIEW_CLASSES 6

/**
 * Number of disease classes written by [`ep_disease_model_predict`].
 */
#define EP_NUM_DISEASES 3

/**
 * Images per study passed to [`ep_disease_model_predict`].
 */
#define EP_NUM_VIEWS 5

/**
 * Result codes shared by every entry point.
 */
typedef enum EpStatus {
  EP_STATUS_OK = 0,
  /**
   * Null pointer, bad size or non-UTF-8 path.
   */
  EP_STATUS_INVALID_ARGUMENT = 1,
  EP_STATUS_IO = 2,
  EP_STATUS_CHECKPOINT = 3,
  /**
   * Malformed image or study (shape, non-finite values, missing view).
   */
  EP_STATUS_DATA = 4,
  /**
   * A Rust panic was caught.
   */
  EP_STATUS_INTERNAL = 5,
} EpStatus;

/**
 * Opaque disease-model handle.
 */
typedef struct EpDiseaseModel EpDiseaseModel;

/**
 * Opaque view-classifier handle.
 */
typedef struct EpViewModel EpViewModel;

typedef struct EpMicroMetrics {
  double precision;
  double recall;
  double f1;
} EpMicroMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *ep_version(void);

/**
 * Message for the last failed call on this thread; empty after a success.
 * The pointer stays valid until the next call on the same thread.
 */
const char *ep_last_error_message(void);

/**
 * Loads a view-classifier checkpoint into `*out`.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a writable pointer.
 */
enum EpStatus ep_view_model_load(const char *path, struct EpViewModel **out);

/**
 * Classifies one grayscale frame (`width × height` floats in `[0, 1]`,
 * row-major; resized to 224×224). Writes 6 logits and the class index
 * (A4C, PLAX, PSAX_MV, PSAX_MP, PSAX_AC, OTHER). Either output may be null.
 *
 * # Safety
 * `pixels` must hold `width * height` floats; `out_logits`, when non-null, 6 doubles.
 */
enum EpStatus ep_view_model_predict(const struct EpViewModel *model,
                                    const float *pixels,
                                    size_t width,
                                    size_t height,
                                    double *out_logits,
                                    uint32_t *out_label);

/**
 * # Safety
 * `model` must come from [`ep_view_model_load`] and not be used afterwards.
 */
void ep_view_model_free(struct EpViewModel *model);

/**
 * Loads a disease-model checkpoint into `*out`.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a writable pointer.
 */
enum EpStatus ep_disease_model_load(const char *path, struct EpDiseaseModel **out);

/**
 * Classifies a study from five frames in the order A4C, PLAX, PSAX_MV,
 * PSAX_MP, PSAX_AC, all `width × height`. Writes 3 logits and the class index
 * (HCM, CA, NORMAL). A null frame is reported as a missing view.
 *
 * # Safety
 * `views` must point to 5 pointers, each null or holding `width * height`
 * floats; `out_logits`, when non-null, must hold 3 doubles.
 */
enum EpStatus ep_disease_model_predict(const struct EpDiseaseModel *model,
                                       const float *const *views,
                                       size_t width,
                                       size_t height,
                                       double *out_logits,
                                       uint32_t *out_label);

/**
 * # Safety
 * `model` must come from [`ep_disease_model_load`] and not be used afterwards.
 */
void ep_disease_model_free(struct EpDiseaseModel *model);

/**
 * Micro-averaged precision, recall and F1 of a `k × k` confusion matrix
 * (row = truth, column = prediction, row-major).
 *
 * # Safety
 * `counts` must hold `k * k` values and `out` must be writable.
 */
enum EpStatus ep_micro_metrics(const uint64_t *counts, size_t k, struct EpMicroMetrics *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ECHOPIPE_H */
