#pragma once

// Cross-validation engine: sigma(alpha) over a disjoint partition of the
// measurements. Each subset's training problem is compiled once (alpha stays
// a parameter slot), so repeated evaluations at new alpha reuse the tapes and
// warm-start from the previous solution of the same subset.

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "svf/compiler.hpp"
#include "svf/dataset.hpp"
#include "svf/solver.hpp"

namespace svf {

// One solver invocation, self-contained so executors may run it in-process,
// on a thread pool, or ship it to a worker over the wire.
struct SolveJob {
  const NlpProblem* problem = nullptr;
  std::vector<double> alpha;
  std::vector<double> init;
  SolveSettings settings;
};

// Runs a batch of independent jobs; results are positionally aligned with
// the jobs regardless of completion order.
using BatchExecutor =
    std::function<std::vector<SolveResult>(std::span<const SolveJob>)>;

// Sequential in-process reference executor.
BatchExecutor local_executor();

// Sum of squared held-out errors sum_{k in rows} (z_k - P_k(x))^2, where P_k
// is the measurement stencil of item k. Pure.
double evaluate_on_test(const NlpProblem& p, const MeasurementBinding& binding,
                        std::span<const std::size_t> rows,
                        std::span<const double> x);

struct CvEvaluation {
  std::vector<double> alpha;
  double sigma = 0;  // root-mean form: sigma^2 * |K| = sum of subset errors
  std::vector<double> subset_sq_error;  // per-subset sum of squared errors
  std::vector<SolveResult> solves;      // per-subset training solves
  bool reliable = true;                 // every subset solve converged
};

struct CvHistoryEntry {
  std::vector<double> alpha;
  double sigma = 0;
  bool reliable = true;
};

struct CvReport {
  std::string label;
  std::vector<double> alpha_star;
  double sigma_star = 0;
  double rmse_star = 0;
  SolveResult full_fit;
  std::vector<CvHistoryEntry> history;
};

class CvEngine {
 public:
  CvEngine(const ModelCompiler& mc, Partition partition,
           SolveSettings settings);

  // sigma(alpha): solves the |I| training problems through exec, evaluates
  // each solution on its held-out subset, and aggregates. Deterministic for
  // a fixed call sequence: warm starts advance per subset, independent of
  // executor scheduling. Evaluating the same alpha twice in a row returns
  // the memoized result, bit-identical.
  CvEvaluation cv_error(std::span<const double> alpha,
                        const BatchExecutor& exec);

  // Full-data fit at the chosen alpha; second member is the root-mean-square
  // error of that fit over all measurements.
  std::pair<SolveResult, double> final_fit(std::span<const double> alpha,
                                           const BatchExecutor& exec);

  std::size_t subset_count() const { return test_rows_.size(); }
  const NlpProblem& subset_problem(std::size_t i) const {
    return problems_[i];
  }
  const NlpProblem& full_problem() const { return full_; }
  std::int32_t n_alpha() const { return full_.n_alpha; }

 private:
  void check_alpha(std::span<const double> alpha) const;

  const ModelCompiler* mc_;
  SolveSettings settings_;
  std::vector<std::vector<std::size_t>> test_rows_;
  std::vector<NlpProblem> problems_;
  std::vector<std::vector<double>> cold_;  // initial points
  std::vector<std::vector<double>> warm_;  // last converged solutions
  NlpProblem full_;
  std::vector<double> full_cold_, full_warm_;
  std::size_t n_measurements_ = 0;
  std::optional<CvEvaluation> memo_;
};

}  // namespace svf
