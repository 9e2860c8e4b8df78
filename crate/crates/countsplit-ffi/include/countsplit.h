/* C interface to the countsplit library. */

#ifndef COUNTSPLIT_H
#define COUNTSPLIT_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes; nonzero values match the CLI exit-code convention, with
 * two extra codes for argument problems that can only arise through C.
 */
typedef enum cs_status {
  CS_OK = 0,
  CS_ERR_CONFIG = 2,
  CS_ERR_IO = 3,
  CS_ERR_NUMERIC = 4,
  CS_ERR_NULL_ARG = 5,
  CS_ERR_UTF8 = 6,
} cs_status;

/**
 * Opaque count matrix handle.
 */
typedef struct cs_matrix cs_matrix;

/**
 * Opaque differential-expression report handle.
 */
typedef struct cs_report cs_report;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failure on this thread; empty string if none.
 * The pointer stays valid until the next failing call on the same thread.
 */
const char *cs_last_error_message(void);

/**
 * Load a matrix from `path` (.mtx/.mm MatrixMarket, anything else dense
 * CSV).
 */
enum cs_status cs_matrix_load(const char *path, struct cs_matrix **out);

/**
 * Build a matrix from a row-major buffer of `n_cells * n_genes` counts.
 */
enum cs_status cs_matrix_from_counts(size_t n_cells,
                                     size_t n_genes,
                                     const uint64_t *counts,
                                     struct cs_matrix **out);

/**
 * Write a matrix in the format implied by the path's extension.
 */
enum cs_status cs_matrix_save(const struct cs_matrix *matrix, const char *path);

/**
 * Number of rows (cells); 0 for a null handle.
 */
size_t cs_matrix_n_cells(const struct cs_matrix *matrix);

/**
 * Number of columns (genes); 0 for a null handle.
 */
size_t cs_matrix_n_genes(const struct cs_matrix *matrix);

void cs_matrix_free(struct cs_matrix *matrix);

/**
 * Thin `matrix` into independent train and test matrices; each entry of
 * train is Binomial(count, epsilon) and test is the remainder.
 */
enum cs_status cs_count_split(const struct cs_matrix *matrix,
                              double epsilon,
                              uint64_t seed,
                              struct cs_matrix **train_out,
                              struct cs_matrix **test_out);

/**
 * Run one per-gene differential-expression procedure. `config_json` is a
 * method config object, e.g. `{"method": "count_split", "epsilon": 0.5,
 * "seed": 1}`; an optional extra `"gamma": "unit"` field switches size
 * factors from per-cell estimates to all ones.
 */
enum cs_status cs_de_run(const struct cs_matrix *matrix,
                         const char *config_json,
                         struct cs_report **out);

/**
 * Number of per-gene rows in the report; 0 for a null handle.
 */
size_t cs_report_n_genes(const struct cs_report *report);

/**
 * Copy the per-gene p-values into `out`, which must hold exactly
 * `cs_report_n_genes` values. Genes without a p-value (failed fits) are
 * written as NaN.
 */
enum cs_status cs_report_pvalues(const struct cs_report *report, double *out, size_t len);

/**
 * Serialize the full report to a JSON string owned by the caller; release
 * it with `cs_string_free`.
 */
enum cs_status cs_report_to_json(const struct cs_report *report, char **out);

void cs_report_free(struct cs_report *report);

/**
 * Release a string returned by this library.
 */
void cs_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* COUNTSPLIT_H */
