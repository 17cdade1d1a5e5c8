#ifndef JELLIUM_H
#define JELLIUM_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum JlStatus {
  JL_STATUS_OK = 0,
  JL_STATUS_NULL_POINTER = 1,
  JL_STATUS_INVALID_PARAMETER = 2,
  JL_STATUS_OUT_OF_DOMAIN = 3,
  JL_STATUS_SINGULAR_KERNEL = 4,
  JL_STATUS_BUFFER_TOO_SMALL = 5,
  JL_STATUS_INTERNAL = 6,
} JlStatus;

typedef struct JlChain JlChain;

typedef struct JlDomain JlDomain;

typedef struct JlKField JlKField;

typedef struct JlParams {
  double beta;
  double q;
  double rho;
  double w_width;
  double theta;
} JlParams;

typedef struct JlEnergy {
  double u1;
  double v2_total;
  double total;
} JlEnergy;

typedef struct JlSamplerParams {
  double sigma_x;
  double sigma_y;
  uint64_t seed;
  /**
   * Nonzero keeps every `y` fixed.
   */
  int32_t pure1d;
} JlSamplerParams;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the last error message of this thread into `buf` (NUL terminated,
 * truncated to `len`). Returns the full message length without the NUL, or
 * 0 when there is no error.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t jl_last_error_message(char *buf, size_t len);

void jl_clear_error(void);

/**
 * # Safety
 * `params` must be valid; `out` receives a handle owned by the caller.
 */
enum JlStatus jl_domain_new(const struct JlParams *params,
                            uint32_t n1,
                            uint32_t n2,
                            struct JlDomain **out);

/**
 * # Safety
 * `d` must come from [`jl_domain_new`] and not be used afterwards.
 */
void jl_domain_free(struct JlDomain *d);

/**
 * # Safety
 * Output pointers must be valid.
 */
enum JlStatus jl_domain_bounds(const struct JlDomain *d, double *l1, double *l2, double *lambda);

/**
 * # Safety
 * `d` must be valid.
 */
size_t jl_domain_particle_count(const struct JlDomain *d);

/**
 * Full pair potential in units of `q^2`.
 *
 * # Safety
 * `out` must be valid.
 */
enum JlStatus jl_v_pair(double x1, double y1, double x2, double y2, double w_width, double *out);

/**
 * Short-range part of the pair potential in units of `q^2`.
 *
 * # Safety
 * `out` must be valid.
 */
enum JlStatus jl_v2(double y1, double y2, double dx, double w_width, double *out);

/**
 * Energy of `n` particles at `(xs[i], ys[i])`, in any order.
 *
 * # Safety
 * `xs` and `ys` must hold `n` values each; `out` must be valid.
 */
enum JlStatus jl_energy(const struct JlDomain *d,
                        const double *xs,
                        const double *ys,
                        size_t n,
                        int32_t pure1d,
                        struct JlEnergy *out);

/**
 * Builds the charge field of particles at `xs` (any order).
 *
 * # Safety
 * `xs` must hold `n` values; `out` receives a caller-owned handle.
 */
enum JlStatus jl_kfield_new(const struct JlDomain *d,
                            const double *xs,
                            size_t n,
                            struct JlKField **out);

/**
 * # Safety
 * `k` must come from [`jl_kfield_new`] and not be used afterwards.
 */
void jl_kfield_free(struct JlKField *k);

/**
 * `K(u)`; `left` nonzero takes the left limit at a jump.
 *
 * # Safety
 * `k` and `out` must be valid.
 */
enum JlStatus jl_kfield_eval(const struct JlKField *k, double u, int32_t left, double *out);

/**
 * Integral of `K^power` over `[a, b]`, `power` in 1..=2.
 *
 * # Safety
 * `k` and `out` must be valid.
 */
enum JlStatus jl_kfield_integral(const struct JlKField *k,
                                 double a,
                                 double b,
                                 uint8_t power,
                                 double *out);

/**
 * Chains built here run without step-size tuning.
 *
 * # Safety
 * `d` and `sampler` must be valid; `out` receives a caller-owned handle.
 */
enum JlStatus jl_chain_new(const struct JlDomain *d,
                           const struct JlSamplerParams *sampler,
                           struct JlChain **out);

/**
 * # Safety
 * `c` must come from [`jl_chain_new`] and not be used afterwards.
 */
void jl_chain_free(struct JlChain *c);

/**
 * Runs `n` Metropolis steps; `accepted` (may be null) receives how many
 * were accepted.
 *
 * # Safety
 * `c` must be valid.
 */
enum JlStatus jl_chain_step(struct JlChain *c, uint64_t n, uint64_t *accepted);

/**
 * Copies the current positions, sorted by `x`, into `xs`/`ys` of capacity
 * `cap`. Returns `JL_STATUS_BUFFER_TOO_SMALL` if `cap` is short.
 *
 * # Safety
 * `xs` and `ys` must have room for `cap` values.
 */
enum JlStatus jl_chain_positions(const struct JlChain *c, double *xs, double *ys, size_t cap);

/**
 * Energy of the chain's current configuration, freshly recomputed.
 *
 * # Safety
 * `c` and `out` must be valid.
 */
enum JlStatus jl_chain_energy(const struct JlChain *c, struct JlEnergy *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* JELLIUM_H */
