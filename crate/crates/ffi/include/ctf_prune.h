#ifndef CTF_PRUNE_H
#define CTF_PRUNE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum CtfStatus {
  CTF_STATUS_OK = 0,
  CTF_STATUS_NULL_POINTER = 1,
  CTF_STATUS_INVALID_ARGUMENT = 2,
  CTF_STATUS_INVALID_INPUT = 3,
  CTF_STATUS_IO = 4,
  CTF_STATUS_NUMERIC = 5,
  CTF_STATUS_STRUCTURAL = 6,
  CTF_STATUS_INTERNAL = 7,
} CtfStatus;

/**
 * Run configuration (data source, model and training hyperparameters).
 */
typedef struct CtfConfig CtfConfig;

/**
 * Trained or loaded model.
 */
typedef struct CtfModel CtfModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message describing the last failure on this thread, or null.
 * The pointer stays valid until the next API call on this thread.
 */
const char *ctf_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *ctf_version(void);

/**
 * New configuration with default values.
 */
struct CtfConfig *ctf_config_new(void);

/**
 * # Safety
 * `cfg` must be null or a handle from [`ctf_config_new`] not yet freed.
 */
void ctf_config_free(struct CtfConfig *cfg);

/**
 * Sets one configuration key (same keys as the command-line overrides).
 *
 * # Safety
 * `cfg` must be a live handle; `key` and `value` NUL-terminated strings.
 */
enum CtfStatus ctf_config_set(struct CtfConfig *cfg, const char *key, const char *value);

/**
 * Prepares the configured data, trains a model and stores it in `*out`.
 *
 * # Safety
 * `cfg` must be a live handle and `out` a valid pointer.
 */
enum CtfStatus ctf_train(const struct CtfConfig *cfg, struct CtfModel **out);

/**
 * Loads a checkpoint written by [`ctf_model_save`] or the CLI.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum CtfStatus ctf_model_load(const char *path, struct CtfModel **out);

/**
 * # Safety
 * `model` must be a live handle; `path` a NUL-terminated string.
 */
enum CtfStatus ctf_model_save(const struct CtfModel *model, const char *path);

/**
 * # Safety
 * `model` must be null or a handle not yet freed.
 */
void ctf_model_free(struct CtfModel *model);

/**
 * Input layout expected by [`ctf_model_predict`]: each sample is a
 * `features x nodes` row-major block.
 *
 * # Safety
 * `model` must be a live handle; the out pointers valid.
 */
enum CtfStatus ctf_model_input_shape(const struct CtfModel *model,
                                     size_t *features,
                                     size_t *nodes,
                                     size_t *classes);

/**
 * Fraction of prunable entries removed at `threshold`.
 *
 * # Safety
 * `model` must be a live handle and `out` a valid pointer.
 */
enum CtfStatus ctf_model_pruning_rate(const struct CtfModel *model, double threshold, double *out);

/**
 * Test accuracy recorded at the end of training (NaN for loaded models).
 *
 * # Safety
 * `model` must be a live handle.
 */
double ctf_model_test_accuracy(const struct CtfModel *model);

/**
 * Shape of weight layer 0 (attention), 1 (conv) or 2 (dense).
 *
 * # Safety
 * `model` must be a live handle; the out pointers valid.
 */
enum CtfStatus ctf_model_layer_shape(const struct CtfModel *model,
                                     size_t layer,
                                     size_t *rows,
                                     size_t *cols);

/**
 * Writes the binary keep mask (row-major, 0 or 1) of `layer` into `out`,
 * which must hold exactly `rows * cols` bytes.
 *
 * # Safety
 * `model` must be a live handle and `out` valid for `len` bytes.
 */
enum CtfStatus ctf_model_mask(const struct CtfModel *model,
                              size_t layer,
                              double threshold,
                              uint8_t *out,
                              size_t len);

/**
 * Classifies `batch` samples with the pruned (deployed) network.
 * `signals` holds `batch * features * nodes` values; `labels` receives
 * `batch` class indices.
 *
 * # Safety
 * `model` must be a live handle; `signals` and `labels` valid for the
 * stated lengths.
 */
enum CtfStatus ctf_model_predict(const struct CtfModel *model,
                                 const double *signals,
                                 size_t batch,
                                 double threshold,
                                 uint32_t *labels);

/**
 * Writes the compacted network as text to `path`. Fails with
 * [`CtfStatus::Structural`] when pruning disconnects the network.
 *
 * # Safety
 * `model` must be a live handle; `path` a NUL-terminated string.
 */
enum CtfStatus ctf_model_export(const struct CtfModel *model, double threshold, const char *path);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CTF_PRUNE_H */
