#ifndef HDPMF_H
#define HDPMF_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum HdpmfStatus {
  HDPMF_STATUS_OK = 0,
  HDPMF_STATUS_NULL_POINTER = 1,
  HDPMF_STATUS_INVALID_UTF8 = 2,
  HDPMF_STATUS_CONFIG = 3,
  HDPMF_STATUS_PARSE = 4,
  HDPMF_STATUS_IO = 5,
  HDPMF_STATUS_USAGE = 6,
  HDPMF_STATUS_DIVERGED = 7,
  HDPMF_STATUS_PROTOCOL = 8,
  HDPMF_STATUS_INVARIANT = 9,
  HDPMF_STATUS_OUT_OF_RANGE = 10,
  HDPMF_STATUS_PANIC = 11,
} HdpmfStatus;

typedef enum HdpmfMethod {
  HDPMF_METHOD_MF = 0,
  HDPMF_METHOD_DPMF = 1,
  HDPMF_METHOD_PDPMF = 2,
  HDPMF_METHOD_HDPMF = 3,
  HDPMF_METHOD_HDPMF_R = 4,
} HdpmfMethod;

/**
 * An experiment configuration.
 */
typedef struct HdpmfConfig HdpmfConfig;

/**
 * A loaded ratings file.
 */
typedef struct HdpmfDataset HdpmfDataset;

/**
 * Results of one experiment, one entry per method.
 */
typedef struct HdpmfResults HdpmfResults;

/**
 * Aggregate over the successful seeds of one method.
 */
typedef struct HdpmfSummary {
  enum HdpmfMethod method;
  /**
   * Successful seeds.
   */
  size_t n;
  /**
   * Configured seeds.
   */
  size_t seeds;
  double mse_mean;
  double mse_std;
  double mae_mean;
  double mae_std;
} HdpmfSummary;

typedef struct HdpmfNoiseReport {
  double scale;
  double mean;
  double variance;
  double expected_variance;
  double variance_rel_error;
  double ks;
  bool passed;
} HdpmfNoiseReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * The message of the last failed call on this thread, or NULL. Valid until
 * the next call into this library on the same thread.
 */
const char *hdpmf_last_error_message(void);

/**
 * Loads a ratings file. `format` is `ml100k`, `ml1m` or `csv` (1-5 scale).
 * On success `*out` owns a new dataset; free it with
 * [`hdpmf_dataset_free`].
 */
enum HdpmfStatus hdpmf_dataset_load(const char *path,
                                    const char *format,
                                    struct HdpmfDataset **out);

void hdpmf_dataset_free(struct HdpmfDataset *dataset);

/**
 * Users, items and ratings of a dataset. Any output pointer may be NULL.
 */
enum HdpmfStatus hdpmf_dataset_counts(const struct HdpmfDataset *dataset,
                                      size_t *n_users,
                                      size_t *n_items,
                                      size_t *n_ratings);

/**
 * The default configuration.
 */
enum HdpmfStatus hdpmf_config_default(struct HdpmfConfig **out);

/**
 * Parses `key = value` config text.
 */
enum HdpmfStatus hdpmf_config_parse(const char *text, struct HdpmfConfig **out);

/**
 * Reads and parses a config file.
 */
enum HdpmfStatus hdpmf_config_load(const char *path, struct HdpmfConfig **out);

/**
 * Sets one key with the same syntax as a config file line. The config is
 * unchanged if the result would be invalid.
 */
enum HdpmfStatus hdpmf_config_set(struct HdpmfConfig *config, const char *key, const char *value);

void hdpmf_config_free(struct HdpmfConfig *config);

/**
 * Runs every configured method over every seed on an already loaded
 * dataset. Does not write the results file.
 */
enum HdpmfStatus hdpmf_run_on(const struct HdpmfDataset *dataset,
                              const struct HdpmfConfig *config,
                              struct HdpmfResults **out);

/**
 * Loads the configured dataset, then behaves like [`hdpmf_run_on`].
 */
enum HdpmfStatus hdpmf_run(const struct HdpmfConfig *config, struct HdpmfResults **out);

/**
 * Number of methods in a result set; 0 for NULL.
 */
size_t hdpmf_results_len(const struct HdpmfResults *results);

/**
 * Summary of method `index`. Fails with `HDPMF_STATUS_DIVERGED` if every
 * seed of that method failed.
 */
enum HdpmfStatus hdpmf_results_summary(const struct HdpmfResults *results,
                                       size_t index,
                                       struct HdpmfSummary *out);

/**
 * Writes the results CSV (same format as the command-line tool).
 */
enum HdpmfStatus hdpmf_results_write_csv(const struct HdpmfResults *results, const char *path);

void hdpmf_results_free(struct HdpmfResults *results);

/**
 * Per-coordinate Laplace scale `2 √K Δ / ε` of the item-gradient noise.
 */
enum HdpmfStatus hdpmf_laplace_scale(size_t k, double delta, double epsilon, double *out);

/**
 * `raw / weight`, clamped to `[scale_min, scale_max]` when `clamp` is set.
 */
enum HdpmfStatus hdpmf_rescale_prediction(double raw,
                                          double weight,
                                          double scale_min,
                                          double scale_max,
                                          bool clamp,
                                          double *out);

/**
 * Monte-Carlo check of the distributed noise; see the `check-noise`
 * subcommand.
 */
enum HdpmfStatus hdpmf_check_noise(size_t k,
                                   double delta,
                                   double epsilon,
                                   size_t raters,
                                   size_t samples,
                                   uint64_t seed,
                                   struct HdpmfNoiseReport *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HDPMF_H */
