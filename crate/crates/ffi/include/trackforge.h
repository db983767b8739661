#ifndef TRACKFORGE_H
#define TRACKFORGE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum TfStatus {
  TF_STATUS_OK = 0,
  TF_STATUS_NULL_POINTER = 1,
  TF_STATUS_INVALID_UTF8 = 2,
  TF_STATUS_INVALID_ARGUMENT = 3,
  TF_STATUS_PARSE = 4,
  TF_STATUS_CONFIG = 5,
  TF_STATUS_PIPELINE = 6,
  TF_STATUS_BUFFER_TOO_SMALL = 7,
  TF_STATUS_IO = 8,
  TF_STATUS_PANIC = 9,
} TfStatus;

/**
 * A parsed sensor log.
 */
typedef struct TfLog TfLog;

/**
 * The outcome of one pipeline run over a set of logs.
 */
typedef struct TfResult TfResult;

typedef struct TfLogCounts {
  size_t accel;
  size_t gyro;
  size_t magn;
  size_t baro;
  size_t wifi;
} TfLogCounts;

typedef struct TfSummary {
  size_t logs;
  size_t steps;
  size_t segments;
  size_t floors;
  size_t graphs;
  size_t dropped;
} TfSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread; empty after a
 * successful call. Valid until the next call on the same thread.
 */
const char *tf_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *tf_version(void);

/**
 * Parses `len` bytes of TSL text into a new log handle.
 *
 * # Safety
 * `data` must point to `len` readable bytes, `source_id` to a
 * NUL-terminated string and `out` to writable storage for one pointer.
 */
enum TfStatus tf_log_parse(const uint8_t *data,
                           size_t len,
                           const char *source_id,
                           struct TfLog **out);

/**
 * Releases a log handle. Null is ignored.
 *
 * # Safety
 * `log` must come from [`tf_log_parse`] and not have been freed.
 */
void tf_log_free(struct TfLog *log);

/**
 * Sample counts per sensor stream.
 *
 * # Safety
 * `log` must be a live handle and `out` writable.
 */
enum TfStatus tf_log_counts(const struct TfLog *log, struct TfLogCounts *out);

/**
 * Runs the whole pipeline jointly over `count` logs. `config_toml` may be
 * null for the default configuration.
 *
 * # Safety
 * `logs` must point to `count` live log handles, `config_toml` must be
 * null or NUL-terminated, and `out` writable.
 */
enum TfStatus tf_pipeline_run(const struct TfLog *const *logs,
                              size_t count,
                              const char *config_toml,
                              struct TfResult **out);

/**
 * Releases a result handle. Null is ignored.
 *
 * # Safety
 * `result` must come from [`tf_pipeline_run`] and not have been freed.
 */
void tf_result_free(struct TfResult *result);

/**
 * Totals over every log of a result.
 *
 * # Safety
 * `result` must be a live handle and `out` writable.
 */
enum TfStatus tf_result_summary(const struct TfResult *result, struct TfSummary *out);

/**
 * Chain-graph document of the `index`-th log as JSON. Release the string
 * with [`tf_string_free`].
 *
 * # Safety
 * `result` must be a live handle and `out` writable.
 */
enum TfStatus tf_result_graphs_json(const struct TfResult *result, size_t index, char **out);

/**
 * Releases a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not have been freed.
 */
void tf_string_free(char *s);

/**
 * Turning-point detection on a planar path of `count` points given as
 * interleaved `x, y` pairs. Writes up to `capacity` vertex indices and
 * always stores the full count in `out_len`; returns
 * `TF_STATUS_BUFFER_TOO_SMALL` when they do not fit.
 *
 * # Safety
 * `xy` must point to `2 * count` doubles, `out_indices` to `capacity`
 * writable slots (may be null when `capacity` is 0) and `out_len` must be
 * writable.
 */
enum TfStatus tf_detect_turning_points(const double *xy,
                                       size_t count,
                                       double epsilon,
                                       size_t window_min,
                                       size_t *out_indices,
                                       size_t capacity,
                                       size_t *out_len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TRACKFORGE_H */
