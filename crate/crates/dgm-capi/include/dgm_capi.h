#ifndef DGM_CAPI_H
#define DGM_CAPI_H

/* Generated by cbindgen from the dgm-capi crate; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status code of every C-ABI call.
 */
typedef enum DgmStatus {
  DGM_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  DGM_STATUS_NULL_ARGUMENT = 1,
  /**
   * A string argument was not valid UTF-8.
   */
  DGM_STATUS_INVALID_UTF8 = 2,
  /**
   * Configuration or argument error.
   */
  DGM_STATUS_CONFIG = 3,
  /**
   * Numerical failure (non-finite loss, domain violation, ...).
   */
  DGM_STATUS_NUMERICAL = 4,
  /**
   * File-system failure.
   */
  DGM_STATUS_IO = 5,
  /**
   * The requested quantity is not defined for this problem.
   */
  DGM_STATUS_UNSUPPORTED = 6,
  /**
   * The experiment has no trained parameters yet.
   */
  DGM_STATUS_NOT_TRAINED = 7,
} DgmStatus;

/**
 * Opaque experiment handle: configuration plus (once trained or loaded)
 * the fitted networks.
 */
typedef struct DgmExperiment DgmExperiment;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Opens an experiment from a config file.
 *
 * On success writes a heap-allocated handle to `out`; release it with
 * `dgm_experiment_free`.
 *
 * # Safety
 * `config_path` must be a valid NUL-terminated string and `out` a valid
 * pointer.
 */
enum DgmStatus dgm_experiment_open(const char *config_path, struct DgmExperiment **out);

/**
 * Releases an experiment handle. Null is a no-op.
 *
 * # Safety
 * `exp` must be a handle returned by `dgm_experiment_open` (or null) that
 * has not been freed yet.
 */
void dgm_experiment_free(struct DgmExperiment *exp);

/**
 * Number of unknown functions (networks) of the experiment's problem.
 *
 * # Safety
 * `exp` must be a live experiment handle.
 */
uintptr_t dgm_experiment_unknowns(struct DgmExperiment *exp);

/**
 * Spatial dimension of the experiment's problem.
 *
 * # Safety
 * `exp` must be a live experiment handle.
 */
uintptr_t dgm_experiment_dim(struct DgmExperiment *exp);

/**
 * Trains the experiment per its configuration, replacing any previously
 * trained parameters.
 *
 * # Safety
 * `exp` must be a live experiment handle.
 */
enum DgmStatus dgm_experiment_train(struct DgmExperiment *exp);

/**
 * Loads trained parameters from a checkpoint file.
 *
 * # Safety
 * `exp` must be a live experiment handle; `path` a valid NUL-terminated
 * string.
 */
enum DgmStatus dgm_experiment_load(struct DgmExperiment *exp, const char *path);

/**
 * Saves the trained parameters to a checkpoint file.
 *
 * # Safety
 * `exp` must be a live experiment handle; `path` a valid NUL-terminated
 * string.
 */
enum DgmStatus dgm_experiment_save(struct DgmExperiment *exp, const char *path);

/**
 * Fitted value of unknown `unknown` at `(t, x)`.
 *
 * # Safety
 * `exp` must be a live experiment handle; `x` must point to `dim` doubles;
 * `out` must be a valid pointer.
 */
enum DgmStatus dgm_experiment_value(struct DgmExperiment *exp,
                                    uintptr_t unknown,
                                    double t,
                                    const double *x,
                                    uintptr_t dim,
                                    double *out);

/**
 * Closed-form value of unknown `unknown` at `(t, x)`, when one exists.
 *
 * # Safety
 * `exp` must be a live experiment handle; `x` must point to `dim` doubles;
 * `out` must be a valid pointer.
 */
enum DgmStatus dgm_experiment_oracle(struct DgmExperiment *exp,
                                     uintptr_t unknown,
                                     double t,
                                     const double *x,
                                     uintptr_t dim,
                                     double *out);

/**
 * Copies the calling thread's last error message into `buf` (NUL
 * terminated, truncated to `cap`). Returns the full message length.
 *
 * # Safety
 * `buf` must point to `cap` writable bytes (or be null to query the
 * length).
 */
uintptr_t dgm_last_error_message(char *buf, uintptr_t cap);

/**
 * Static name of a status code.
 */
const char *dgm_status_name(enum DgmStatus status);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DGM_CAPI_H */
