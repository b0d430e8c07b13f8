#ifndef NESTADMM_H
#define NESTADMM_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Outcome of an FFI call.
typedef enum NestadmmStatus {
  NESTADMM_STATUS_OK = 0,
  NESTADMM_STATUS_NULL_POINTER = 1,
  NESTADMM_STATUS_INVALID_ARGUMENT = 2,
  NESTADMM_STATUS_CONFIG_ERROR = 3,
  NESTADMM_STATUS_NUMERICAL_ERROR = 4,
  NESTADMM_STATUS_IO_ERROR = 5,
  NESTADMM_STATUS_BUFFER_TOO_SMALL = 6,
  NESTADMM_STATUS_PANIC = 7,
} NestadmmStatus;

// Gradient estimator selector.
typedef enum NestadmmEstimator {
  NESTADMM_ESTIMATOR_MINIBATCH = 0,
  NESTADMM_ESTIMATOR_SPIDER = 1,
} NestadmmEstimator;

// A generated problem instance.
typedef struct NestadmmInstance NestadmmInstance;

// The result of one solver run.
typedef struct NestadmmRun NestadmmRun;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread; empty if none.
// The pointer stays valid until the next failing call on the same thread.
const char *nestadmm_last_error(void);

// Static name of a status code.
const char *nestadmm_status_name(enum NestadmmStatus status);

// Builds an instance from a generator spec in TOML, bare or under a
// `[generator]` table.
//
// # Safety
// `spec_toml` must be a NUL-terminated string and `out` a valid pointer.
enum NestadmmStatus nestadmm_instance_from_toml(const char *spec_toml,
                                                struct NestadmmInstance **out);

// Dimensions of `x`, of the constraint, and the number of `y` blocks.
//
// # Safety
// `instance` must come from [`nestadmm_instance_from_toml`]; the outputs
// must be valid pointers.
enum NestadmmStatus nestadmm_instance_dims(const struct NestadmmInstance *instance,
                                           size_t *dim_x,
                                           size_t *dim_constraint,
                                           size_t *blocks);

// Releases an instance. Null is ignored.
//
// # Safety
// `instance` must be null or a live handle not used afterwards.
void nestadmm_instance_free(struct NestadmmInstance *instance);

// Calibrates and runs the solver on `instance` with its certified profile.
//
// `alpha` lies in (0, 1); `epsilon` sets the batch sizes and, when
// `stop_at_target` is true, the early-stop tolerance.
//
// # Safety
// `instance` must be a live handle and `out` a valid pointer.
enum NestadmmStatus nestadmm_solve(const struct NestadmmInstance *instance,
                                   enum NestadmmEstimator estimator,
                                   double alpha,
                                   double epsilon,
                                   size_t iterations,
                                   uint64_t seed,
                                   bool stop_at_target,
                                   struct NestadmmRun **out);

// Iterations performed, the total samples drawn, and the index of the
// returned iterate.
//
// # Safety
// `run` must be a live handle; the outputs must be valid pointers.
enum NestadmmStatus nestadmm_run_stats(const struct NestadmmRun *run,
                                       size_t *iterations,
                                       uint64_t *total_samples,
                                       size_t *output_index);

// Smallest stationarity measure over the run (squared form).
//
// # Safety
// `run` must be a live handle and `value` a valid pointer.
enum NestadmmStatus nestadmm_run_best_stationarity(const struct NestadmmRun *run, double *value);

// Copies the returned iterate `x` into `buf` (at least `dim_x` values).
//
// # Safety
// `buf` must point to `len` writable doubles.
enum NestadmmStatus nestadmm_run_copy_x(const struct NestadmmRun *run, double *buf, size_t len);

// Copies the stationarity total of every trace record, starting at the
// initial point (`iterations + 1` values).
//
// # Safety
// `buf` must point to `len` writable doubles.
enum NestadmmStatus nestadmm_run_copy_stationarity(const struct NestadmmRun *run,
                                                   double *buf,
                                                   size_t len);

// Releases a run. Null is ignored.
//
// # Safety
// `run` must be null or a live handle not used afterwards.
void nestadmm_run_free(struct NestadmmRun *run);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* NESTADMM_H */
