#ifndef STARKIT_H
#define STARKIT_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum StarkitStatus {
  STARKIT_STATUS_OK = 0,
  STARKIT_STATUS_NULL_POINTER = 1,
  STARKIT_STATUS_INVALID_UTF8 = 2,
  STARKIT_STATUS_PARSE = 3,
  STARKIT_STATUS_INVALID_INPUT = 4,
  STARKIT_STATUS_IRRATIONAL_SKELETON = 5,
  STARKIT_STATUS_NUMERIC = 6,
  STARKIT_STATUS_PANIC = 7,
  STARKIT_STATUS_OTHER = 8,
} StarkitStatus;

typedef enum StarkitDensityMethod {
  STARKIT_DENSITY_METHOD_AUTO = 0,
  STARKIT_DENSITY_METHOD_ANALYTIC = 1,
  STARKIT_DENSITY_METHOD_QUADRATURE = 2,
  STARKIT_DENSITY_METHOD_MONTE_CARLO = 3,
} StarkitDensityMethod;

// Opaque distance function.
typedef struct StarkitExpr StarkitExpr;

typedef struct StarkitSkeletonCounts {
  size_t lines;
  size_t significant;
  size_t irrational;
  bool bounded;
} StarkitSkeletonCounts;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null. The pointer stays
// valid until the next failing call on the same thread.
const char *starkit_last_error(void);

// Parses DSL or JSON text into a new handle stored in `*out`.
//
// # Safety
// `text` must be a NUL-terminated string and `out` a valid pointer.
enum StarkitStatus starkit_expr_parse(const char *text, struct StarkitExpr **out);

// Releases a handle. Null is ignored.
//
// # Safety
// `h` must come from [`starkit_expr_parse`] and not be used afterwards.
void starkit_expr_free(struct StarkitExpr *h);

// Evaluates F(x1, x2).
//
// # Safety
// `h` must be a live handle and `out` a valid pointer.
enum StarkitStatus starkit_expr_eval(const struct StarkitExpr *h,
                                     double x1,
                                     double x2,
                                     double *out);

// Canonical DSL text of the handle; free with [`starkit_string_free`].
//
// # Safety
// `h` must be a live handle and `out` a valid pointer.
enum StarkitStatus starkit_expr_to_string(const struct StarkitExpr *h, char **out);

// # Safety
// `s` must come from this library and not be used afterwards.
void starkit_string_free(char *s);

// Skeleton line counts.
//
// # Safety
// `h` must be a live handle and `out` a valid pointer.
enum StarkitStatus starkit_skeleton_counts(const struct StarkitExpr *h,
                                           struct StarkitSkeletonCounts *out);

// D_F(ε) over the unit square. `samples` and `seed` are used only by the
// Monte Carlo path; `stderr_out` may be null.
//
// # Safety
// `h` must be a live handle; `value_out` must be valid.
enum StarkitStatus starkit_density(const struct StarkitExpr *h,
                                   double epsilon,
                                   enum StarkitDensityMethod method,
                                   uint64_t samples,
                                   uint64_t seed,
                                   double *value_out,
                                   double *stderr_out);

// Whether x lies in B_q(F, ε); on success `*p_out` (two entries, may be
// null) receives the minimising numerator.
//
// # Safety
// `h` must be a live handle; `member_out` must be valid; `p_out` must be
// null or point to two writable `int64_t`.
enum StarkitStatus starkit_membership(const struct StarkitExpr *h,
                                      double x1,
                                      double x2,
                                      uint64_t q,
                                      double epsilon,
                                      bool *member_out,
                                      int64_t *p_out);

// Library version, a static NUL-terminated string.
const char *starkit_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* STARKIT_H */
