/* Generated by cbindgen from crates/ffi. Do not edit. */

#ifndef PMW_H
#define PMW_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/*
 Result of every call.
 */
typedef enum PmwStatus {
  PMW_STATUS_OK = 0,
  PMW_STATUS_NULL_POINTER = 1,
  PMW_STATUS_INVALID_ARGUMENT = 2,
  PMW_STATUS_IO = 3,
  PMW_STATUS_FORMAT = 4,
  PMW_STATUS_SHAPE = 5,
  PMW_STATUS_NUMERICAL = 6,
  PMW_STATUS_INTERNAL = 7,
} PmwStatus;

/*
 A trained classifier.
 */
typedef struct PmwModel PmwModel;

/*
 Per-class and macro-averaged metrics. Bit `i` of `undefined_mask` is set
 when field `i` (in declaration order, accuracy = 0) had a zero
 denominator and was reported as 0.
 */
typedef struct PmwMetrics {
  double accuracy;
  double pmw_precision;
  double pmw_recall;
  double pmw_f1;
  double not_pmw_precision;
  double not_pmw_recall;
  double not_pmw_f1;
  double macro_precision;
  double macro_recall;
  double macro_f1;
  uint32_t undefined_mask;
} PmwMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message for the last failed call on this thread, or null. Valid until
 the next call on the same thread.
 */
const char *pmw_last_error(void);

/*
 Library version as a static NUL-terminated string.
 */
const char *pmw_version(void);

/*
 Loads `weights.bin` using the architecture in `config.json` from a run
 directory written by `pmw train`.

 # Safety
 `run_dir` must be a NUL-terminated string and `out` a valid pointer.
 */
enum PmwStatus pmw_model_load_run(const char *run_dir, struct PmwModel **out);

/*
 Loads a weight file for architecture `arch` (e.g. `"resnet_s"`) with
 default head settings, backbone width `width` and `image_height` ×
 `image_width` inputs.

 # Safety
 `weights_path` and `arch` must be NUL-terminated strings and `out` a
 valid pointer.
 */
enum PmwStatus pmw_model_load(const char *weights_path,
                              const char *arch,
                              size_t width,
                              size_t image_height,
                              size_t image_width,
                              struct PmwModel **out);

/*
 Releases a model. Null is ignored.

 # Safety
 `model` must come from a load function and not be used afterwards.
 */
void pmw_model_free(struct PmwModel *model);

/*
 Expected input as channels, height, width.

 # Safety
 All pointers must be valid.
 */
enum PmwStatus pmw_model_input_shape(const struct PmwModel *model,
                                     size_t *channels,
                                     size_t *height,
                                     size_t *width);

/*
 Scores `n` planar images (`n × 3 × H × W` floats in `[0,1]`, matching
 [`pmw_model_input_shape`]) and writes `n` PMW probabilities.

 # Safety
 `pixels` must hold `n·3·H·W` floats and `probs` room for `n`.
 */
enum PmwStatus pmw_model_predict(const struct PmwModel *model,
                                 const float *pixels,
                                 size_t n,
                                 float *probs);

/*
 Scores one interleaved 8-bit RGB image of any size; it is resized to the
 model input with bilinear interpolation.

 # Safety
 `rgb` must hold `width·height·3` bytes and `prob` must be valid.
 */
enum PmwStatus pmw_model_predict_rgb8(const struct PmwModel *model,
                                      const uint8_t *rgb,
                                      size_t width,
                                      size_t height,
                                      float *prob);

/*
 Metrics from binary confusion counts, PMW as the positive class.

 # Safety
 `out` must be valid.
 */
enum PmwStatus pmw_metrics_from_counts(uint64_t true_pos,
                                       uint64_t false_neg,
                                       uint64_t false_pos,
                                       uint64_t true_neg,
                                       struct PmwMetrics *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PMW_H */
