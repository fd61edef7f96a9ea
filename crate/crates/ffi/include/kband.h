#ifndef KBAND_H
#define KBAND_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result of a call.
typedef enum KbandStatus {
  KBAND_STATUS_OK = 0,
  KBAND_STATUS_NULL_POINTER = 1,
  KBAND_STATUS_INVALID_UTF8 = 2,
  // The configuration was rejected.
  KBAND_STATUS_CONFIG = 3,
  // At least one seed failed; results for the other seeds are still
  // returned.
  KBAND_STATUS_REPLICATION = 4,
  KBAND_STATUS_BUFFER_TOO_SMALL = 5,
  // An internal panic was caught at the boundary.
  KBAND_STATUS_PANIC = 6,
} KbandStatus;

// A parsed, validated experiment configuration.
typedef struct KbandExperiment KbandExperiment;

// Results of running an experiment.
typedef struct KbandResults KbandResults;

// Cross-seed statistics (mean and sample standard deviation).
typedef struct KbandSummary {
  uint64_t succeeded;
  uint64_t failed;
  uint64_t horizon;
  double final_regret_mean;
  double final_regret_std;
  double total_cost_mean;
  double total_cost_std;
  double wall_clock_mean;
  double wall_clock_std;
} KbandSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Parses and validates a JSON configuration. Relative paths inside it
// resolve against the working directory.
//
// # Safety
// `json` must be a NUL-terminated string and `out` a valid pointer.
enum KbandStatus kband_experiment_from_json(const char *json, struct KbandExperiment **out);

// Releases an experiment; null is ignored.
//
// # Safety
// `exp` must come from [`kband_experiment_from_json`] and not be used again.
void kband_experiment_free(struct KbandExperiment *exp);

// Runs every seed. On [`KbandStatus::Replication`] `*out` is still set.
//
// # Safety
// `exp` must be a live experiment and `out` a valid pointer.
enum KbandStatus kband_experiment_run(const struct KbandExperiment *exp, struct KbandResults **out);

// Releases results; null is ignored.
//
// # Safety
// `res` must come from [`kband_experiment_run`] and not be used again.
void kband_results_free(struct KbandResults *res);

// Number of replications, successful or not; 0 for null.
//
// # Safety
// `res` must be null or a live result.
size_t kband_results_replications(const struct KbandResults *res);

// # Safety
// `res` must be a live result and `out` a valid pointer.
enum KbandStatus kband_results_summary(const struct KbandResults *res, struct KbandSummary *out);

// Copies the cross-seed mean cumulative regret per round into `buf`.
// `*needed` always receives the number of rounds; if `len` is smaller,
// nothing is copied and [`KbandStatus::BufferTooSmall`] is returned.
//
// # Safety
// `res` must be a live result, `needed` valid, and `buf` valid for `len`
// doubles (it may be null when `len` is 0).
enum KbandStatus kband_results_cumulative_regret(const struct KbandResults *res,
                                                 double *buf,
                                                 size_t len,
                                                 size_t *needed);

// Copies the calling thread's last error message, NUL-terminated and
// truncated to fit, into `buf`. Returns the full message length including
// the terminator, or 0 when there is no message.
//
// # Safety
// `buf` must be valid for `len` bytes (it may be null when `len` is 0).
size_t kband_last_error_message(char *buf, size_t len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* KBAND_H */
