#pragma once

// Equality-constrained NLP solver for compiled problems: an augmented
// Lagrangian outer loop around a limited-memory quasi-Newton inner
// minimization. The inner iteration is preconditioned by a finite-difference
// probe of the merit Hessian, recovered with few gradient sweeps through
// structural coloring of the problem's interaction graph; on quadratic
// problems the probe is the exact Hessian and the inner loop is Newton.

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "svf/compiler.hpp"

namespace svf {

struct SolveSettings {
  int max_outer = 20;
  int max_inner = 500;
  double rho0 = 10.0;        // initial penalty
  double rho_growth = 10.0;  // multiplied in when feasibility stalls
  double eps_c = 1e-6;       // constraint tolerance
  double eps_g = 1e-6;       // gradient tolerance
  int lbfgs_memory = 10;
  int restarts = 0;          // extra jittered starts; best kept
  double jitter = 0.5;       // relative magnitude of restart perturbations
  std::uint64_t seed = 0;    // restart jitter stream
};

enum class SolveStatus { Converged, MaxIter, Degenerate };

struct SolveResult {
  std::vector<double> point;
  std::vector<double> multipliers;  // one per equality constraint
  double objective = 0.0;
  double max_violation = 0.0;
  SolveStatus status = SolveStatus::MaxIter;
  int outer_iters = 0;
  int inner_iters = 0;
  double wall_time = 0.0;  // seconds; informational only
};

// Equality ignores wall_time, which varies run to run by construction.
bool operator==(const SolveResult& a, const SolveResult& b);

// Inner-iteration history, for tests and diagnostics.
struct SolveTrace {
  std::vector<double> merit;      // accepted merit value per inner step
  std::vector<double> grad_norm;  // sup-norm of the merit gradient
};

// Minimizes the problem's objective at the given penalty weights subject to
// its equality constraints. Deterministic: identical inputs produce the
// identical iterate sequence. `init` must supply every decision variable.
SolveResult solve(const NlpProblem& p, std::span<const double> alpha,
                  std::span<const double> init, const SolveSettings& s = {},
                  SolveTrace* trace = nullptr);

// Stationarity and feasibility sup-norms at a candidate point:
// (max|∇f + J^T λ|, max|c|).
std::pair<double, double> kkt_residual(const NlpProblem& p,
                                       std::span<const double> alpha,
                                       std::span<const double> point,
                                       std::span<const double> multipliers);

// Solves a list of same-shaped problems sequentially, seeding each from the
// previous solution. A failure falls back to the original seed and does not
// abort the chain.
std::vector<SolveResult> warm_start_chain(std::span<const NlpProblem> problems,
                                          std::span<const double> alpha,
                                          std::span<const double> init,
                                          const SolveSettings& s = {});

}  // namespace svf
