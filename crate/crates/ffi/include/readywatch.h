#ifndef READYWATCH_H
#define READYWATCH_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/*
 Result codes; nonzero values match the CLI exit codes where they overlap.
 */
typedef enum RwStatus {
  RW_STATUS_OK = 0,
  RW_STATUS_NULL_ARGUMENT = 1,
  RW_STATUS_INVALID_ARGUMENT = 2,
  RW_STATUS_IO = 3,
  RW_STATUS_VALIDATION = 4,
  /*
   The quantity is mathematically undefined, e.g. correlation of a constant series.
   */
  RW_STATUS_UNDEFINED = 5,
  RW_STATUS_PANIC = 6,
} RwStatus;

/*
 In-memory list of episodes.
 */
typedef struct RwDataset RwDataset;

/*
 Trained regressor loaded from a checkpoint.
 */
typedef struct RwModel RwModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message for the last failed call on this thread, or null. The pointer is
 valid until the next failing call on the same thread.
 */
const char *rw_last_error_message(void);

/*
 Library version as a static NUL-terminated string.
 */
const char *rw_version(void);

/*
 Loads a checkpoint written by `readywatch train`.

 # Safety
 `path` must be a NUL-terminated string; `out` must be writable.
 */
enum RwStatus rw_model_load(const char *path, struct RwModel **out);

/*
 # Safety
 `model` must come from [`rw_model_load`] and not be used afterwards. Null is ignored.
 */
void rw_model_free(struct RwModel *model);

/*
 Number of feature columns per frame the model expects; 0 for null.

 # Safety
 `model` must be null or a live handle.
 */
size_t rw_model_input_dim(const struct RwModel *model);

/*
 Frames per input window; 0 for null.

 # Safety
 `model` must be null or a live handle.
 */
size_t rw_model_window_frames(const struct RwModel *model);

/*
 Prediction for one row-major window of `len = frames * input_dim` values,
 already restricted to the model's feature columns. ORI outputs are clamped
 to [1, 5]; takeover times are floored at 0.

 # Safety
 `window` must point to `len` readable doubles; `out` must be writable.
 */
enum RwStatus rw_model_predict_window(const struct RwModel *model,
                                      const double *window,
                                      size_t len,
                                      double *out);

/*
 Loads a JSON-Lines episode file.

 # Safety
 `path` must be a NUL-terminated string; `out` must be writable.
 */
enum RwStatus rw_dataset_load(const char *path, struct RwDataset **out);

/*
 Synthetic dataset with the default generator settings.

 # Safety
 `out` must be writable.
 */
enum RwStatus rw_dataset_synth(size_t subjects,
                               size_t per_task,
                               uint64_t seed,
                               struct RwDataset **out);

/*
 Episode count; 0 for null.

 # Safety
 `dataset` must be null or a live handle.
 */
size_t rw_dataset_len(const struct RwDataset *dataset);

/*
 Speed and lateral deviation after the takeover request of episode `index`.

 # Safety
 `dataset` must be a live handle; `delta_v_out` and `delta_x_out` must be writable.
 */
enum RwStatus rw_dataset_quality(const struct RwDataset *dataset,
                                 size_t index,
                                 double horizon,
                                 double *delta_v_out,
                                 double *delta_x_out);

/*
 # Safety
 `dataset` must come from a `rw_dataset_*` constructor and not be used afterwards. Null is ignored.
 */
void rw_dataset_free(struct RwDataset *dataset);

/*
 Largest |speed - speed at request| over `(t_tor, t_tor + horizon]`.

 # Safety
 `times` and `speeds` must point to `n` doubles; `out` must be writable.
 */
enum RwStatus rw_delta_v(const double *times,
                         const double *speeds,
                         size_t n,
                         double t_tor,
                         double horizon,
                         double *out);

/*
 Largest |lateral offset| over `(t_tor, t_tor + horizon]`.

 # Safety
 `times` and `offsets` must point to `n` doubles; `out` must be writable.
 */
enum RwStatus rw_delta_x(const double *times,
                         const double *offsets,
                         size_t n,
                         double t_tor,
                         double horizon,
                         double *out);

/*
 Sample Pearson correlation. Returns `Undefined` and leaves `out`
 untouched when either series is constant.

 # Safety
 `xs` and `ys` must point to `n` doubles; `out` must be writable.
 */
enum RwStatus rw_pearson(const double *xs, const double *ys, size_t n, double *out);

/*
 Mean absolute error.

 # Safety
 `preds` and `truths` must point to `n` doubles; `out` must be writable.
 */
enum RwStatus rw_mae(const double *preds, const double *truths, size_t n, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* READYWATCH_H */
