#ifndef HABMOD_H
#define HABMOD_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Success.
 */
#define HM_OK 0

/**
 * Invalid input: bad JSON, schema mismatch, or out-of-range argument.
 */
#define HM_ERR_INVALID 1

/**
 * Internal failure during prediction.
 */
#define HM_ERR_RUNTIME 2

/**
 * A required pointer argument was null.
 */
#define HM_ERR_NULL 3

/**
 * Opaque handle to a loaded strategy model.
 */
typedef struct HmModel HmModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent error on this thread; empty string if none.
 * The pointer is valid until the next failing call on the same thread.
 */
const char *hm_last_error(void);

/**
 * Library version as a static string.
 */
const char *hm_version(void);

/**
 * Loads a model from a JSON string. Returns null on failure; consult
 * `hm_last_error`.
 *
 * # Safety
 * `json` must be a valid null-terminated UTF-8 string.
 */
struct HmModel *hm_model_load_json(const char *json);

/**
 * Loads a model from a JSON file on disk. Returns null on failure.
 *
 * # Safety
 * `path` must be a valid null-terminated string.
 */
struct HmModel *hm_model_load_file(const char *path);

/**
 * Frees a model handle. Passing null is a no-op.
 *
 * # Safety
 * `model` must be a pointer returned by a load function, freed at most once.
 */
void hm_model_free(struct HmModel *model);

/**
 * Number of feature columns the model expects, or -1 on null.
 *
 * # Safety
 * `model` must be a live handle or null.
 */
int64_t hm_model_n_features(const struct HmModel *model);

/**
 * Number of output classes (taxonomy leaves), or -1 on null.
 *
 * # Safety
 * `model` must be a live handle or null.
 */
int64_t hm_model_n_classes(const struct HmModel *model);

/**
 * Name of feature column `i`, or null if out of range. Valid until the
 * handle is freed.
 *
 * # Safety
 * `model` must be a live handle or null.
 */
const char *hm_model_feature_name(const struct HmModel *model, uintptr_t i);

/**
 * Class code of output column `i`, or null if out of range. Valid until the
 * handle is freed.
 *
 * # Safety
 * `model` must be a live handle or null.
 */
const char *hm_model_class_code(const struct HmModel *model, uintptr_t i);

/**
 * Predicts class probabilities for a batch of rows.
 *
 * `x` is row-major with `n_rows * n_features` values, columns ordered as
 * reported by `hm_model_feature_name`. `out_probs` receives
 * `n_rows * n_classes` values, row-major, each row summing to 1.
 *
 * # Safety
 * `model` must be a live handle; `x` and `out_probs` must point to buffers
 * of at least the stated sizes.
 */
int32_t hm_model_predict(const struct HmModel *model,
                         const double *x,
                         uintptr_t n_rows,
                         uintptr_t n_features,
                         double *out_probs);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HABMOD_H */
