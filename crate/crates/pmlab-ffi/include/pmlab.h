#ifndef PMLAB_H
#define PMLAB_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Cost function selector.
 */
typedef enum {
  PmLmsr = 0,
  PmInd = 1,
} PmCostKind;

/**
 * Trader dynamics selector.
 */
typedef enum {
  PmAsd = 0,
  PmSsd = 1,
} PmDynamicsKind;

/**
 * Result of every pmlab call.
 */
typedef enum {
  PmOk = 0,
  /**
   * Null pointer, bad dimension, or an argument outside its domain.
   */
  PmInvalidArgument = 1,
  /**
   * A price vector was required to be coherent / interior and is not.
   */
  PmBadPrice = 2,
  /**
   * An iterative solve failed to reach tolerance.
   */
  PmSolverFailure = 3,
  /**
   * The quantity is undefined at the given input (e.g. eta at uniform).
   */
  PmDegenerate = 4,
} PmStatus;

/**
 * Opaque trader population handle.
 */
typedef struct PmPopulation PmPopulation;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Builds a population from row-major beliefs (n x k) and per-trader risk
 * aversions. On success writes a heap-allocated handle to `out`; release it
 * with `pm_population_free`.
 */
PmStatus pm_population_new(const double *thetas,
                           const double *risk_aversions,
                           uintptr_t n,
                           uintptr_t k,
                           PmPopulation **out);

/**
 * Samples n traders with beliefs Normal(theta_true, sigma^2 I) and unit
 * risk aversion, deterministically for a fixed seed.
 */
PmStatus pm_population_sample(const double *theta_true,
                              uintptr_t k,
                              double sigma,
                              uintptr_t n,
                              uint64_t seed,
                              PmPopulation **out);

/**
 * Releases a population handle. Null is a no-op.
 */
void pm_population_free(PmPopulation *pop);

/**
 * Number of traders in the handle, or 0 for null.
 */
uintptr_t pm_population_len(const PmPopulation *pop);

/**
 * Number of securities, or 0 for null.
 */
uintptr_t pm_population_dim(const PmPopulation *pop);

/**
 * Market-clearing prices (softmax of the risk-aversion-weighted average
 * belief); writes K entries to `mu_out`.
 */
PmStatus pm_market_clearing_price(const PmPopulation *pop, double *mu_out);

/**
 * Market-maker equilibrium prices for the liquid cost (cost, b) at solver
 * tolerance `tol`; writes K prices plus the optimal potential value and the
 * final projected gradient norm.
 */
PmStatus pm_solve_equilibrium(const PmPopulation *pop,
                              PmCostKind cost,
                              double b,
                              double tol,
                              double *mu_out,
                              double *f_star_out,
                              double *grad_norm_out);

/**
 * Closed-form LMSR equilibrium prices for a market started at zero.
 */
PmStatus pm_lmsr_closed_form(const PmPopulation *pop, double b, double *mu_out);

/**
 * First-order market-maker bias at clearing prices `mu_bar` (length k).
 */
PmStatus pm_asymptotic_bias(const double *mu_bar,
                            uintptr_t k,
                            PmCostKind cost,
                            double b,
                            double a_bar,
                            uintptr_t n_traders,
                            double *bias_out);

/**
 * The IND/LMSR bias ratios eta and eta_KL at `mu_bar`. Either output may be
 * null to skip it. Returns PmDegenerate at the uniform price vector.
 */
PmStatus pm_eta(const double *mu_bar, uintptr_t k, double *eta_out, double *eta_kl_out);

/**
 * Leading-order local strong-convexity bounds at `mu_bar`. `sigma_high_out`
 * receives NaN when only a lower bound exists (SSD).
 */
PmStatus pm_sigma_bounds(PmDynamicsKind dynamics,
                         PmCostKind cost,
                         const double *mu_bar,
                         uintptr_t k,
                         const double *risk_aversions,
                         uintptr_t n,
                         double b,
                         double *sigma_low_out,
                         double *sigma_high_out);

/**
 * Effective sample size of the risk-aversion-weighted belief average.
 */
PmStatus pm_n_eff(const double *risk_aversions, uintptr_t n, double *out);

/**
 * High-probability sampling-error bound sigma sqrt(k / (n_eff delta)).
 */
PmStatus pm_sampling_error_bound(double sigma,
                                 uintptr_t k,
                                 double n_eff,
                                 double delta,
                                 double *out);

/**
 * Worst-case market-maker loss of the liquid cost over k securities.
 */
PmStatus pm_worst_case_loss(PmCostKind cost, double b, uintptr_t k, double *out);

/**
 * Simulates `trades` rounds of the given dynamics from the zero state and
 * writes the suboptimality gap after every trade (trades + 1 values,
 * including the initial state) against the supplied F*.
 */
PmStatus pm_simulate_gaps(const PmPopulation *pop,
                          PmCostKind cost,
                          double b,
                          PmDynamicsKind dynamics,
                          uintptr_t trades,
                          uint64_t seed,
                          double f_star,
                          double *gaps_out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PMLAB_H */
