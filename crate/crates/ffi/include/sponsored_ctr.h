#ifndef SPONSORED_CTR_H
#define SPONSORED_CTR_H

/* Generated by cbindgen; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum ScStatus {
  SC_STATUS_OK = 0,
  SC_STATUS_NULL_POINTER = 1,
  SC_STATUS_INVALID_ARGUMENT = 2,
  SC_STATUS_IO = 3,
  SC_STATUS_PARSE = 4,
  SC_STATUS_CONFIG = 5,
  SC_STATUS_INSUFFICIENT_DATA = 6,
  SC_STATUS_DEGENERATE_LABELS = 7,
  SC_STATUS_PANIC = 8,
} ScStatus;

typedef enum ScModuleKind {
  SC_MODULE_KIND_IN_GRID = 0,
  SC_MODULE_KIND_BELOW_GRID = 1,
} ScModuleKind;

typedef enum ScDebiasKind {
  SC_DEBIAS_KIND_POLYNOMIAL = 0,
  SC_DEBIAS_KIND_LOGARITHMIC = 1,
  SC_DEBIAS_KIND_INVERSE_PROPENSITY = 2,
} ScDebiasKind;

/**
 * Opaque log dataset.
 */
typedef struct ScDataset ScDataset;

/**
 * Opaque trained CTR model.
 */
typedef struct ScModel ScModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL after a
 * success. The pointer stays valid until the next call on this thread.
 */
const char *sc_last_error_message(void);

/**
 * Reads a JSONL impression log.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum ScStatus sc_dataset_read(const char *path,
                              enum ScModuleKind module_kind,
                              uint32_t group_size,
                              uint32_t max_position,
                              struct ScDataset **out);

/**
 * Generates simulated logs from a JSON simulator config (NULL for
 * defaults). The ground truth is not exposed through this interface.
 *
 * # Safety
 * `config_json` must be NULL or NUL-terminated; `out` must be writable.
 */
enum ScStatus sc_simulate(const char *config_json, struct ScDataset **out);

/**
 * # Safety
 * `dataset` must be a live handle; `out` must be writable.
 */
enum ScStatus sc_dataset_len(const struct ScDataset *dataset, size_t *out);

/**
 * # Safety
 * `dataset` must be NULL or a handle not yet freed.
 */
void sc_dataset_free(struct ScDataset *dataset);

/**
 * Estimates view propensities from a dataset. Writes up to `capacity`
 * values (position 1 first) into `out` and the table length into
 * `out_len`; fails with INVALID_ARGUMENT if `capacity` is too small.
 *
 * # Safety
 * `out` must hold `capacity` doubles; `out_len` must be writable.
 */
enum ScStatus sc_fit_propensity(const struct ScDataset *dataset,
                                double *out,
                                size_t capacity,
                                size_t *out_len);

/**
 * Weight of a single de-bias function at `position`. `propensity` (length
 * `propensity_len`, position 1 first) is required for inverse propensity
 * and ignored otherwise.
 *
 * # Safety
 * `propensity` must be NULL or hold `propensity_len` doubles.
 */
enum ScStatus sc_debias_weight(enum ScDebiasKind kind,
                               double param,
                               uint32_t position,
                               const double *propensity,
                               size_t propensity_len,
                               double *out);

/**
 * # Safety
 * `scores` and `labels` must hold `n` elements; `out` must be writable.
 */
enum ScStatus sc_auroc(const double *scores, const uint8_t *labels, size_t n, double *out);

/**
 * # Safety
 * `scores` and `labels` must hold `n` elements; `out` must be writable.
 */
enum ScStatus sc_auprc(const double *scores, const uint8_t *labels, size_t n, double *out);

/**
 * `pctr^c * cpc` for a valid candidate.
 *
 * # Safety
 * `out` must be writable.
 */
enum ScStatus sc_squash_score(double pctr, double cpc, double c, double *out);

/**
 * Trains a weighted logistic-regression model on a row-major `n x dim`
 * feature matrix. `weights` may be NULL for unit weights.
 *
 * # Safety
 * `features` must hold `n * dim` doubles, `labels` `n` bytes and
 * `weights` NULL or `n` doubles; `out` must be writable.
 */
enum ScStatus sc_model_train(const double *features,
                             const uint8_t *labels,
                             const double *weights,
                             size_t n,
                             size_t dim,
                             double l2,
                             size_t max_iters,
                             struct ScModel **out);

/**
 * # Safety
 * `path` must be NUL-terminated; `out` must be writable.
 */
enum ScStatus sc_model_load(const char *path, struct ScModel **out);

/**
 * # Safety
 * `model` must be a live handle; `path` must be NUL-terminated.
 */
enum ScStatus sc_model_save(const struct ScModel *model, const char *path);

/**
 * # Safety
 * `model` must be a live handle; `out` must be writable.
 */
enum ScStatus sc_model_dim(const struct ScModel *model, size_t *out);

/**
 * pCTR for one feature vector of length `dim`.
 *
 * # Safety
 * `model` must be a live handle, `features` must hold `dim` doubles and
 * `out` must be writable.
 */
enum ScStatus sc_model_predict(const struct ScModel *model,
                               const double *features,
                               size_t dim,
                               double *out);

/**
 * # Safety
 * `model` must be NULL or a handle not yet freed.
 */
void sc_model_free(struct ScModel *model);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SPONSORED_CTR_H */
