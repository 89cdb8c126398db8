#ifndef PFISO_H
#define PFISO_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum PfisoStatus {
  PFISO_STATUS_OK = 0,
  PFISO_STATUS_NULL_POINTER = 1,
  PFISO_STATUS_INVALID_ARGUMENT = 2,
  PFISO_STATUS_IO = 3,
  PFISO_STATUS_SCHEMA = 4,
  PFISO_STATUS_VALIDATION = 5,
  PFISO_STATUS_RANGE = 6,
  /**
   * The simulation stopped early; the returned run holds the partial record.
   */
  PFISO_STATUS_ABORTED = 7,
  PFISO_STATUS_NUMERICAL = 8,
  PFISO_STATUS_PANIC = 9,
} PfisoStatus;

/**
 * Finished or aborted simulation run.
 */
typedef struct PfisoRun PfisoRun;

/**
 * Scenario configuration handle.
 */
typedef struct PfisoScenario PfisoScenario;

typedef struct PfisoSummary {
  uint64_t ticks;
  double dt_s;
  double min_separation_m;
  double min_edge_clearance_m;
  bool all_finished;
  bool collision;
  bool aborted;
} PfisoSummary;

typedef struct PfisoMetrics {
  uint32_t id;
  double max_abs_beta_rad;
  double max_abs_yaw_rate_radps;
  double max_abs_psi_rad;
  double min_speed_mps;
  double path_length_m;
  double lateral_oscillation_rms_m;
} PfisoMetrics;

typedef struct PfisoTraceRecord {
  double t;
  double x;
  double y;
  double psi;
  double beta;
  double yaw_rate;
  double v;
  double steer;
  double accel;
} PfisoTraceRecord;

/**
 * Cubic `y = a0 + a1 u + a2 u^2 + a3 u^3` with `u = x - x_offset`.
 */
typedef struct PfisoCubic {
  double coeffs[4];
  double x_offset;
  double x_min;
  double x_max;
} PfisoCubic;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version, static storage.
 */
const char *pfiso_version(void);

/**
 * Message for the last failed call on this thread. Valid until the next
 * failing call on the same thread; empty if none failed yet.
 */
const char *pfiso_last_error_message(void);

/**
 * # Safety
 * `out` must be a valid pointer to write a handle to.
 */
enum PfisoStatus pfiso_scenario_default(struct PfisoScenario **out);

/**
 * Loads and validates a scenario JSON file.
 *
 * # Safety
 * `path` must be a NUL-terminated string, `out` a valid pointer.
 */
enum PfisoStatus pfiso_scenario_load(const char *path, struct PfisoScenario **out);

/**
 * Applies one `key=value` override, same keys as the CLI `--set`. The
 * scenario is unchanged on failure.
 *
 * # Safety
 * `scenario` must come from this library, `assignment` be NUL-terminated.
 */
enum PfisoStatus pfiso_scenario_set(struct PfisoScenario *scenario, const char *assignment);

/**
 * Scenario as JSON; free the string with [`pfiso_string_free`].
 *
 * # Safety
 * `scenario` must come from this library, `out` be a valid pointer.
 */
enum PfisoStatus pfiso_scenario_to_json(const struct PfisoScenario *scenario, char **out);

/**
 * # Safety
 * `s` must be null or a string returned by this library.
 */
void pfiso_string_free(char *s);

/**
 * # Safety
 * `scenario` must be null or come from this library, and not be used after.
 */
void pfiso_scenario_free(struct PfisoScenario *scenario);

/**
 * Universal potential at `(x, y)` seen by vehicle `ego_index`, with all
 * vehicles at their configured initial states.
 *
 * # Safety
 * `scenario` must come from this library, `out` be a valid pointer.
 */
enum PfisoStatus pfiso_scenario_potential(const struct PfisoScenario *scenario,
                                          size_t ego_index,
                                          double x,
                                          double y,
                                          double *out);

/**
 * Runs the scenario to completion. On [`PfisoStatus::Aborted`] `out` still
 * receives the partial run.
 *
 * # Safety
 * `scenario` must come from this library, `out` be a valid pointer.
 */
enum PfisoStatus pfiso_run(const struct PfisoScenario *scenario, struct PfisoRun **out);

/**
 * # Safety
 * `run` must be null or come from this library, and not be used after.
 */
void pfiso_run_free(struct PfisoRun *run);

/**
 * Number of vehicle traces in the run.
 *
 * # Safety
 * `run` must come from this library, `out` be a valid pointer.
 */
enum PfisoStatus pfiso_run_vehicle_count(const struct PfisoRun *run, size_t *out);

/**
 * # Safety
 * `run` must come from this library, `out` be a valid pointer.
 */
enum PfisoStatus pfiso_run_summary(const struct PfisoRun *run, struct PfisoSummary *out);

/**
 * Metrics of the vehicle at `index` (trace order).
 *
 * # Safety
 * `run` must come from this library, `out` be a valid pointer.
 */
enum PfisoStatus pfiso_run_metrics(const struct PfisoRun *run,
                                   size_t index,
                                   struct PfisoMetrics *out);

/**
 * Copies up to `cap` trace records of vehicle `index` into `buf` and writes
 * the total record count to `len`. Pass `buf = NULL, cap = 0` to query.
 *
 * # Safety
 * `buf` must hold `cap` records, `len` be a valid pointer.
 */
enum PfisoStatus pfiso_run_trace(const struct PfisoRun *run,
                                 size_t index,
                                 struct PfisoTraceRecord *buf,
                                 size_t cap,
                                 size_t *len);

/**
 * Weighted cubic fit under box bounds on the coefficients (frame with
 * `xs[0]` at the origin). Null `weights` means unit weights; null
 * `lower`/`upper` means unbounded.
 *
 * # Safety
 * `xs`, `ys` and non-null `weights` must hold `n` values, non-null bounds 4.
 */
enum PfisoStatus pfiso_fit_cubic(const double *xs,
                                 const double *ys,
                                 const double *weights,
                                 size_t n,
                                 const double *lower,
                                 const double *upper,
                                 struct PfisoCubic *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PFISO_H */
