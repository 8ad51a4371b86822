#ifndef MEDFX_H
#define MEDFX_H

#pragma once

/* Generated by cbindgen. Do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Number of effects in a report: total, direct, indirect through the
 * first mediator, indirect through the second, covariant.
 */
#define MEDFX_EFFECT_COUNT 5

typedef enum MedfxStatus {
  MEDFX_STATUS_OK = 0,
  MEDFX_STATUS_INVALID_ARGUMENT = 1,
  MEDFX_STATUS_NULL_POINTER = 2,
  MEDFX_STATUS_ESTIMATION = 3,
  MEDFX_STATUS_PANIC = 4,
} MedfxStatus;

typedef enum MedfxMethod {
  MEDFX_METHOD_ONE_STEP = 0,
  MEDFX_METHOD_TMLE = 1,
} MedfxMethod;

/**
 * Effect estimates on the original outcome scale.
 */
typedef struct MedfxReport MedfxReport;

/**
 * A validated data set.
 */
typedef struct MedfxTable MedfxTable;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Builds a table from column arrays of length `n`.
 *
 * `covariates` is row-major `n × n_covariates`, `mediators` row-major
 * `n × n_mediators` with integer levels. `treatment` holds 0 (control) or
 * 1 (treated). Pass `outcome_min < outcome_max` to declare outcome bounds,
 * or equal values to use the observed range.
 *
 * # Safety
 * Each pointer must reference the stated number of readable elements, and
 * `out` must be writable.
 */
enum MedfxStatus medfx_table_from_arrays(size_t n,
                                         size_t n_covariates,
                                         const double *covariates,
                                         const uint8_t *treatment,
                                         size_t n_mediators,
                                         const int32_t *mediators,
                                         const double *outcome,
                                         double outcome_min,
                                         double outcome_max,
                                         struct MedfxTable **out);

/**
 * Rows in the table, or 0 for a null handle.
 *
 * # Safety
 * `table` must be null or a live handle.
 */
size_t medfx_table_rows(const struct MedfxTable *table);

/**
 * # Safety
 * `table` must be null or a handle not yet freed.
 */
void medfx_table_free(struct MedfxTable *table);

/**
 * Fits the default nuisance learners and runs one estimator at level
 * `alpha`. Needs exactly two mediators.
 *
 * # Safety
 * `table` must be a live handle and `out` writable.
 */
enum MedfxStatus medfx_estimate(const struct MedfxTable *table,
                                enum MedfxMethod method,
                                double alpha,
                                struct MedfxReport **out);

/**
 * Point estimate of effect `effect` (see [`medfx_effect_name`]).
 *
 * # Safety
 * `report` must be a live handle and `value` writable.
 */
enum MedfxStatus medfx_report_estimate(const struct MedfxReport *report,
                                       size_t effect,
                                       double *value);

/**
 * # Safety
 * `report` must be a live handle and `value` writable.
 */
enum MedfxStatus medfx_report_se(const struct MedfxReport *report, size_t effect, double *value);

/**
 * # Safety
 * `report` must be a live handle and `lower`, `upper` writable.
 */
enum MedfxStatus medfx_report_ci(const struct MedfxReport *report,
                                 size_t effect,
                                 double *lower,
                                 double *upper);

/**
 * # Safety
 * `report` must be null or a handle not yet freed.
 */
void medfx_report_free(struct MedfxReport *report);

/**
 * Writes the five true effects of the built-in simulation design to
 * `values`.
 *
 * # Safety
 * `values` must have room for five doubles.
 */
enum MedfxStatus medfx_true_effects(double *values);

/**
 * Static name of effect `effect`, or null when out of range.
 */
const char *medfx_effect_name(size_t effect);

/**
 * Message for the last failed call on this thread; empty after a success.
 * Valid until the next call on the same thread.
 */
const char *medfx_last_error(void);

const char *medfx_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MEDFX_H */
