#ifndef TREEBP_H
#define TREEBP_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of a fallible call.
 */
typedef enum TreebpStatus {
  TREEBP_STATUS_OK = 0,
  TREEBP_STATUS_NULL_POINTER = 1,
  TREEBP_STATUS_INVALID_ARGUMENT = 2,
  TREEBP_STATUS_SHAPE_MISMATCH = 3,
  TREEBP_STATUS_IO = 4,
  TREEBP_STATUS_CHECKPOINT = 5,
  TREEBP_STATUS_CONFIG_MISMATCH = 6,
  TREEBP_STATUS_UNSUPPORTED = 7,
  TREEBP_STATUS_NON_FINITE = 8,
  TREEBP_STATUS_PANIC = 9,
} TreebpStatus;

typedef enum TreebpActivation {
  TREEBP_ACTIVATION_RELU = 0,
  TREEBP_ACTIVATION_SIGMOID = 1,
} TreebpActivation;

typedef enum TreebpGeometry {
  TREEBP_GEOMETRY_CIFAR = 0,
  TREEBP_GEOMETRY_MNIST = 1,
} TreebpGeometry;

typedef enum TreebpArch {
  TREEBP_ARCH_LENET5 = 0,
  TREEBP_ARCH_TREE3 = 1,
} TreebpArch;

/**
 * Opaque model handle.
 */
typedef struct TreebpModel TreebpModel;

/**
 * Outcome of one per-example backward pass.
 */
typedef struct TreebpGradientStats {
  float loss;
  /**
   * Zero-gradient fractions of the conv, tree and fc stages.
   */
  double zero_fraction[3];
  size_t nonzero_entries;
} TreebpGradientStats;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the most recent failure on this thread, or null. The pointer is
 * valid until the next failing call on the same thread.
 */
const char *treebp_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *treebp_version(void);

/**
 * Creates a He-initialized Tree-3 model.
 *
 * # Safety
 * `out` must be valid for a pointer write.
 */
enum TreebpStatus treebp_model_new_tree3(size_t k,
                                         size_t m,
                                         enum TreebpActivation activation,
                                         enum TreebpGeometry geometry,
                                         bool per_class,
                                         uint64_t seed,
                                         struct TreebpModel **out);

/**
 * Creates a He-initialized LeNet-5 (ReLU, biases, standard widths).
 *
 * # Safety
 * `out` must be valid for a pointer write.
 */
enum TreebpStatus treebp_model_new_lenet5(uint64_t seed, struct TreebpModel **out);

/**
 * Loads a checkpoint written by `treebp train` or [`treebp_model_save`].
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` valid for a pointer write.
 */
enum TreebpStatus treebp_model_load(const char *path, struct TreebpModel **out);

/**
 * # Safety
 * `model` must come from a constructor; `path` must be NUL-terminated.
 */
enum TreebpStatus treebp_model_save(const struct TreebpModel *model, const char *path);

/**
 * Releases a model. Null is ignored.
 *
 * # Safety
 * `model` must come from a constructor and not be used afterwards.
 */
void treebp_model_free(struct TreebpModel *model);

/**
 * Number of trainable scalars.
 *
 * # Safety
 * `model` must come from a constructor; `out` valid for a write.
 */
enum TreebpStatus treebp_model_num_params(const struct TreebpModel *model, size_t *out);

/**
 * Pixels per input image (channels × height × width).
 *
 * # Safety
 * `model` must come from a constructor; `out` valid for a write.
 */
enum TreebpStatus treebp_model_input_len(const struct TreebpModel *model, size_t *out);

/**
 * Writes the 10 class logits of one image (channel-major, values in [-1, 1]).
 *
 * # Safety
 * `pixels` must hold `len` floats and `logits` room for 10.
 */
enum TreebpStatus treebp_model_logits(const struct TreebpModel *model,
                                      const float *pixels,
                                      size_t len,
                                      float *logits);

/**
 * Predicted class of one image.
 *
 * # Safety
 * `pixels` must hold `len` floats; `class_out` valid for a write.
 */
enum TreebpStatus treebp_model_predict(const struct TreebpModel *model,
                                       const float *pixels,
                                       size_t len,
                                       uint32_t *class_out);

/**
 * Backward pass for one labeled image. `pruned` selects the single-route
 * pass where the model supports it.
 *
 * # Safety
 * `pixels` must hold `len` floats; `stats` valid for a write.
 */
enum TreebpStatus treebp_gradient_stats(const struct TreebpModel *model,
                                        const float *pixels,
                                        size_t len,
                                        uint32_t label,
                                        bool pruned,
                                        struct TreebpGradientStats *stats);

/**
 * Maximum number of routes from a first-layer weight to one output.
 */
uint64_t treebp_count_routes(enum TreebpArch a);

/**
 * First-layer gradient instances before and after pooling.
 *
 * # Safety
 * `pre_pool` and `post_pool` must be valid for writes.
 */
enum TreebpStatus treebp_count_gradient_instances(enum TreebpArch a,
                                                  size_t k,
                                                  size_t m,
                                                  uint64_t *pre_pool,
                                                  uint64_t *post_pool);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TREEBP_H */
