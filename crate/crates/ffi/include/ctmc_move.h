#ifndef CTMC_MOVE_H
#define CTMC_MOVE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result of every fallible call.
typedef enum CmStatus {
  CM_STATUS_OK = 0,
  CM_STATUS_NULL_POINTER = 1,
  CM_STATUS_INVALID_ARGUMENT = 2,
  CM_STATUS_IO = 3,
  CM_STATUS_PARSE = 4,
  CM_STATUS_NUMERICAL = 5,
  CM_STATUS_INTERNAL = 6,
  CM_STATUS_PANIC = 7,
} CmStatus;

typedef struct CmContext CmContext;

typedef struct CmExpanded CmExpanded;

typedef struct CmFit CmFit;

typedef struct CmGrid CmGrid;

typedef struct CmPath CmPath;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread; empty after a success.
// The pointer stays valid until the next call on the same thread.
const char *cm_last_error(void);

// Library version as a static NUL-terminated string.
const char *cm_version(void);

// # Safety
// `s` must be null or a string returned by this library.
void cm_string_free(char *s);

// Reads an ESRI ASCII grid.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a writable pointer.
enum CmStatus cm_grid_read_ascii(const char *path, struct CmGrid **out);

// # Safety
// `grid`, `nrows` and `ncols` must be valid pointers.
enum CmStatus cm_grid_shape(const struct CmGrid *grid, size_t *nrows, size_t *ncols);

// # Safety
// `grid` must be null or a handle from this library, freed at most once.
void cm_grid_free(struct CmGrid *grid);

// Builds a design context from a JSON model specification, the state-space
// grid and `n_layers` named covariate grids. The inputs are copied; the
// caller keeps ownership of the grid handles.
//
// # Safety
// `names` and `layers` must each point to `n_layers` valid entries.
enum CmStatus cm_context_new(const char *model_json,
                             const struct CmGrid *grid,
                             const char *const *names,
                             const struct CmGrid *const *layers,
                             size_t n_layers,
                             struct CmContext **out);

// Number of design columns, or 0 for a null handle.
//
// # Safety
// `ctx` must be null or a valid handle.
size_t cm_context_n_columns(const struct CmContext *ctx);

// # Safety
// `ctx` must be null or a handle from this library, freed at most once.
void cm_context_free(struct CmContext *ctx);

// Simulates a path from the cell at (`row`, `col`), row 0 at the southern
// edge (the last line of an ASCII grid file).
//
// # Safety
// `coefficients` must point to `n_coefficients` values.
enum CmStatus cm_simulate(const struct CmContext *ctx,
                          const double *coefficients,
                          size_t n_coefficients,
                          size_t row,
                          size_t col,
                          double start_time,
                          double duration,
                          uint64_t seed,
                          struct CmPath **out);

// Number of cells visited, or 0 for a null handle.
//
// # Safety
// `path` must be null or a valid handle.
size_t cm_path_n_cells(const struct CmPath *path);

// Number of transitions, or 0 for a null handle.
//
// # Safety
// `path` must be null or a valid handle.
size_t cm_path_n_transitions(const struct CmPath *path);

// # Safety
// `coefficients` must point to `n_coefficients` values and `out` be writable.
enum CmStatus cm_path_log_likelihood(const struct CmPath *path,
                                     const struct CmContext *ctx,
                                     const double *coefficients,
                                     size_t n_coefficients,
                                     bool censor_final,
                                     double *out);

// # Safety
// `path` must be null or a handle from this library, freed at most once.
void cm_path_free(struct CmPath *path);

// Expands a path into Poisson rows.
//
// # Safety
// All pointers must be valid.
enum CmStatus cm_expand(const struct CmPath *path,
                        const struct CmContext *ctx,
                        bool censor_final,
                        struct CmExpanded **out);

// Number of rows, or 0 for a null handle.
//
// # Safety
// `data` must be null or a valid handle.
size_t cm_expanded_n_rows(const struct CmExpanded *data);

// # Safety
// `data` must be null or a handle from this library, freed at most once.
void cm_expanded_free(struct CmExpanded *data);

// Fits the weighted Poisson model. `l1_lambda` = 0 fits without a
// penalty; a positive value applies an L1 penalty to every column except
// the intercept.
//
// # Safety
// All pointers must be valid.
enum CmStatus cm_fit(const struct CmExpanded *data, double l1_lambda, struct CmFit **out);

// Number of coefficients, or 0 for a null handle.
//
// # Safety
// `fit` must be null or a valid handle.
size_t cm_fit_n_coefficients(const struct CmFit *fit);

// # Safety
// `fit` must be null or a valid handle.
bool cm_fit_converged(const struct CmFit *fit);

// Copies the estimates into `buf`, which must hold exactly
// `cm_fit_n_coefficients` values.
//
// # Safety
// `buf` must point to `len` writable values.
enum CmStatus cm_fit_coefficients(const struct CmFit *fit, double *buf, size_t len);

// # Safety
// `buf` must point to `len` writable values.
enum CmStatus cm_fit_standard_errors(const struct CmFit *fit, double *buf, size_t len);

// Serializes the fit as JSON. Release the string with [`cm_string_free`].
//
// # Safety
// `out` must be writable.
enum CmStatus cm_fit_to_json(const struct CmFit *fit, char **out);

// # Safety
// `fit` must be null or a handle from this library, freed at most once.
void cm_fit_free(struct CmFit *fit);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CTMC_MOVE_H */
