#ifndef WORLDLINE_H
#define WORLDLINE_H

#include <stdbool.h>
#include <stddef.h>

typedef enum WlStatus {
  WL_STATUS_OK = 0,
  WL_STATUS_NULL_POINTER = 1,
  WL_STATUS_INVALID_ARGUMENT = 2,
  WL_STATUS_INVALID_CONFIG = 3,
  WL_STATUS_NON_CONVERGENCE = 4,
  WL_STATUS_SINGULAR_SYSTEM = 5,
  WL_STATUS_DIMENSION_MISMATCH = 6,
  WL_STATUS_BUFFER_TOO_SMALL = 7,
  WL_STATUS_PANIC = 8,
  WL_STATUS_INTERNAL = 9,
} WlStatus;

typedef enum WlExample {
  WL_EXAMPLE_FREE = 0,
  WL_EXAMPLE_LINEAR = 1,
  WL_EXAMPLE_QUARTIC = 2,
} WlExample;

typedef enum WlOrder {
  WL_ORDER_SBP21 = 0,
  WL_ORDER_SBP42 = 1,
} WlOrder;

typedef enum WlBranch {
  WL_BRANCH_FORWARD = 1,
  WL_BRANCH_BACKWARD = 2,
} WlBranch;

typedef enum WlProfile {
  WL_PROFILE_TIME_MESH_VELOCITY = 0,
  WL_PROFILE_CHARGE_T = 1,
  WL_PROFILE_DELTA_E = 2,
  WL_PROFILE_DELTA_GT = 3,
  WL_PROFILE_DELTA_GX = 4,
  WL_PROFILE_H_BVP = 5,
} WlProfile;

/*
 Problem configuration.
 */
typedef struct WlConfig WlConfig;

typedef struct WlDiagnostics WlDiagnostics;

typedef struct WlOperator WlOperator;

/*
 Solver result together with the configuration it was computed for.
 */
typedef struct WlSolution WlSolution;

/*
 Solver settings. `grad_tol <= 0` and `max_iter == 0` select the defaults.
 */
typedef struct WlSolveOptions {
  double grad_tol;
  size_t max_iter;
  /*
   Fall back to continuation in the potential strength when the
   direct Newton run stalls.
   */
  bool homotopy;
} WlSolveOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message of the last failed call on this thread, or NULL. The pointer is
 valid until the next call into this library on the same thread.
 */
const char *wl_last_error_message(void);

/*
 Library version as a static NUL-terminated string.
 */
const char *wl_version(void);

/*
 Parses a JSON configuration.

 # Safety
 `json` must be a valid NUL-terminated string and `out` a valid pointer.
 */
enum WlStatus wl_config_from_json(const char *json, struct WlConfig **out);

/*
 Built-in example configuration with `n` grid points.

 # Safety
 `out` must be a valid pointer.
 */
enum WlStatus wl_config_example(enum WlExample kind,
                                enum WlOrder order,
                                size_t n,
                                struct WlConfig **out);

/*
 # Safety
 `cfg` must be NULL or a handle from this library that has not been freed.
 */
void wl_config_free(struct WlConfig *cfg);

struct WlSolveOptions wl_solve_options_default(void);

/*
 Solves the configuration; `opts` may be NULL for the defaults. On
 `NonConvergence` the best state is still returned in `out`.

 # Safety
 `cfg` must be a live handle, `opts` NULL or valid, and `out` a valid pointer.
 */
enum WlStatus wl_solve(const struct WlConfig *cfg,
                       const struct WlSolveOptions *opts,
                       struct WlSolution **out);

/*
 # Safety
 `sol` must be NULL or a live handle.
 */
void wl_solution_free(struct WlSolution *sol);

/*
 Grid size, or 0 for NULL.

 # Safety
 `sol` must be NULL or a live handle.
 */
size_t wl_solution_n(const struct WlSolution *sol);

/*
 # Safety
 `sol` must be NULL or a live handle.
 */
bool wl_solution_converged(const struct WlSolution *sol);

/*
 Final gradient norm, NaN for NULL.

 # Safety
 `sol` must be NULL or a live handle.
 */
double wl_solution_grad_norm(const struct WlSolution *sol);

/*
 # Safety
 `sol` must be NULL or a live handle.
 */
size_t wl_solution_iterations(const struct WlSolution *sol);

/*
 Copies `t` of the requested branch into `buf` (at least `n` values).

 # Safety
 `sol` must be a live handle and `buf` valid for `len` writes.
 */
enum WlStatus wl_solution_copy_t(const struct WlSolution *sol,
                                 enum WlBranch branch,
                                 double *buf,
                                 size_t len);

/*
 Copies `x` of the requested branch into `buf` (at least `n` values).

 # Safety
 `sol` must be a live handle and `buf` valid for `len` writes.
 */
enum WlStatus wl_solution_copy_x(const struct WlSolution *sol,
                                 enum WlBranch branch,
                                 double *buf,
                                 size_t len);

/*
 Copies the eight Lagrange multipliers into `buf`.

 # Safety
 `sol` must be a live handle and `buf` valid for `len` writes.
 */
enum WlStatus wl_solution_copy_lambda(const struct WlSolution *sol, double *buf, size_t len);

/*
 Evaluates all diagnostics on the forward branch of a solution.

 # Safety
 `sol` must be a live handle and `out` a valid pointer.
 */
enum WlStatus wl_diagnostics_new(const struct WlSolution *sol, struct WlDiagnostics **out);

/*
 # Safety
 `diag` must be NULL or a live handle.
 */
void wl_diagnostics_free(struct WlDiagnostics *diag);

/*
 # Safety
 `diag` must be a live handle and `buf` valid for `len` writes.
 */
enum WlStatus wl_diagnostics_copy(const struct WlDiagnostics *diag,
                                  enum WlProfile profile,
                                  double *buf,
                                  size_t len);

/*
 Largest interior charge deviation, NaN for NULL.

 # Safety
 `diag` must be NULL or a live handle.
 */
double wl_diagnostics_max_interior_delta_e(const struct WlDiagnostics *diag);

/*
 Charge deviation at the last grid point, NaN for NULL.

 # Safety
 `diag` must be NULL or a live handle.
 */
double wl_diagnostics_endpoint_delta_e(const struct WlDiagnostics *diag);

/*
 Builds a classical operator, or its regularized extension when
 `regularized` is true.

 # Safety
 `out` must be a valid pointer.
 */
enum WlStatus wl_operator_new(enum WlOrder order,
                              size_t n,
                              double dgamma,
                              bool regularized,
                              double init_value,
                              struct WlOperator **out);

/*
 # Safety
 `op` must be NULL or a live handle.
 */
void wl_operator_free(struct WlOperator *op);

/*
 Matrix dimension: `n`, or `n + 1` for a regularized operator.

 # Safety
 `op` must be NULL or a live handle.
 */
size_t wl_operator_dim(const struct WlOperator *op);

/*
 Copies the differentiation matrix row-major (`dim * dim` values).

 # Safety
 `op` must be a live handle and `buf` valid for `len` writes.
 */
enum WlStatus wl_operator_copy_d(const struct WlOperator *op, double *buf, size_t len);

/*
 Copies the quadrature matrix row-major (`dim * dim` values).

 # Safety
 `op` must be a live handle and `buf` valid for `len` writes.
 */
enum WlStatus wl_operator_copy_h(const struct WlOperator *op, double *buf, size_t len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* WORLDLINE_H */
