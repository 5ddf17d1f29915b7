#pragma once

// Upper-level optimizer: minimize sigma(alpha) over alpha >= 0 through a
// weighted quadratic response surface. Each iteration fits the surface to
// the evaluation history (weights decay with distance from the best point,
// ridge on the curvature coefficients picked by a scalar search), steps to
// the surface's minimizer or along its negative gradient, and re-evaluates.

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "svf/errors.hpp"

namespace svf {

// One sigma evaluation. `reliable` is false when any lower-level solve did
// not converge; such points keep their geometry in the fit but carry 1e-3 of
// the weight.
struct SurrogatePoint {
  std::vector<double> alpha;
  double sigma = 0;
  bool reliable = true;
};

// Quadratic surface coefficients, flattened as: pi_ij for i <= j in row
// order (0,0), (0,1), ..., (0,n-1), (1,1), ..., then linear pi_i, then the
// constant; length n(n+3)/2 + 1.
std::size_t surrogate_coeff_count(std::int32_t n_alpha);
double surrogate_value(std::span<const double> pi, std::span<const double> alpha);
std::vector<double> surrogate_gradient(std::span<const double> pi,
                                       std::span<const double> alpha);

// Weighted ridge fit of the surface to the history, centered on the best
// point: minimizes sum_nu w_nu (sigma^nu - Pi(pi, alpha^nu))^2 + mu * sum
// pi_ij^2 with w_nu = exp(-|alpha^nu - alpha^best|) (times 1e-3 when the
// point is unreliable). The affine part is unpenalized; among exact fits the
// minimum-norm centered solution is returned, so a single-point history
// yields the constant surface through it.
std::vector<double> fit_surrogate(std::span<const SurrogatePoint> history,
                                  std::size_t best, double mu);

// Picks mu minimizing |Pi(pi(mu), alpha^best) - sigma^best| by golden-section
// search on log10(mu) over [lo, hi] to tolerance tol; a flat objective
// resolves to the bracket midpoint.
double tune_mu(std::span<const SurrogatePoint> history, std::size_t best,
               double log10_lo = -8.0, double log10_hi = 4.0,
               double log10_tol = 1e-3);

// Linearization step alpha - grad Pi(alpha), projected onto [floor, inf).
std::vector<double> next_alpha(std::span<const double> pi,
                               std::span<const double> alpha, double floor);

struct SurrogateSettings {
  int max_iterations = 20;   // main-loop oracle call cap (CVNumOfIter)
  double tol_sigma = -1.0;   // stop when |sigma' - sigma_best| < this;
                             // negative: 1e-4 * sigma(alpha0)
  std::vector<double> alpha0;  // empty: all components 1.0
  double perturbation = 0.5;   // bootstrap scaling of one component at a time
  double alpha_floor = 1e-12;
  double mu_log_lo = -8.0, mu_log_hi = 4.0, mu_log_tol = 1e-3;
};

struct SurrogateState {
  std::vector<SurrogatePoint> history;  // bootstrap points first
  std::size_t best = 0;                 // index of the least sigma
  int main_calls = 0;                   // oracle calls after bootstrap
  double mu_star = 0;                   // last tuned ridge weight
  std::vector<double> pi;               // last fitted coefficients
};

struct SurrogateResult {
  std::vector<double> alpha_star;
  double sigma_star = 0;
  SurrogateState state;
};

// Raised when the oracle fails mid-run; carries the history so far.
struct OracleFailure : Error {
  SurrogateState partial;
  OracleFailure(const std::string& msg, SurrogateState state)
      : Error(msg), partial(std::move(state)) {}
};

// sigma evaluation: returns (sigma, reliable).
using SigmaOracle =
    std::function<std::pair<double, bool>(std::span<const double>)>;

// Full loop: bootstrap (alpha0 plus n_alpha single-component perturbations),
// then fit / step / evaluate until the sigma improvement falls below the
// threshold or the iteration cap is hit. Returns the best evaluated pair.
// With n_alpha = 0 the oracle is called once and returned as-is.
SurrogateResult optimize(const SigmaOracle& oracle, std::int32_t n_alpha,
                         const SurrogateSettings& settings = {});

}  // namespace svf
