#include "svf/cv.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace svf {

BatchExecutor local_executor() {
  return [](std::span<const SolveJob> jobs) {
    std::vector<SolveResult> out;
    out.reserve(jobs.size());
    for (const SolveJob& j : jobs)
      out.push_back(solve(*j.problem, j.alpha, j.init, j.settings));
    return out;
  };
}

double evaluate_on_test(const NlpProblem& p, const MeasurementBinding& binding,
                        std::span<const std::size_t> rows,
                        std::span<const double> x) {
  const std::unordered_set<std::size_t> in(rows.begin(), rows.end());
  double sse = 0;
  for (const Measurement& m : binding.items) {
    if (!in.count(m.row)) continue;
    const VarSegment* seg = p.segment(m.var);
    if (!seg) throw Error("evaluate_on_test: no segment for " + m.var);
    const double pred = MeasurementBinding::apply(m, x.data() + seg->offset);
    const double r = m.z - pred;
    sse += r * r;
  }
  return sse;
}

CvEngine::CvEngine(const ModelCompiler& mc, Partition partition,
                   SolveSettings settings)
    : mc_(&mc), settings_(settings), test_rows_(std::move(partition.subsets)) {
  std::size_t rows = 0;
  for (const auto& s : test_rows_) rows += s.size();

  problems_.reserve(test_rows_.size());
  cold_.reserve(test_rows_.size());
  for (const auto& subset : test_rows_) {
    const std::unordered_set<std::size_t> held(subset.begin(), subset.end());
    std::vector<std::size_t> training;
    training.reserve(rows - subset.size());
    for (std::size_t k = 0; k < rows; ++k)
      if (!held.count(k)) training.push_back(k);
    problems_.push_back(mc.compile(training));
    cold_.push_back(mc.initial_point(problems_.back()));
  }
  warm_.resize(problems_.size());

  std::vector<std::size_t> all(rows);
  for (std::size_t k = 0; k < rows; ++k) all[k] = k;
  full_ = mc.compile(all);
  full_cold_ = mc.initial_point(full_);

  n_measurements_ = mc.binding().items.size();
}

void CvEngine::check_alpha(std::span<const double> alpha) const {
  if (alpha.size() != static_cast<std::size_t>(full_.n_alpha))
    throw Error("cv: alpha has " + std::to_string(alpha.size()) +
                " components, model declares " +
                std::to_string(full_.n_alpha));
  for (const double a : alpha)
    if (!(a >= 0)) throw Error("cv: alpha components must be >= 0");
}

CvEvaluation CvEngine::cv_error(std::span<const double> alpha,
                                const BatchExecutor& exec) {
  check_alpha(alpha);
  if (memo_ && std::equal(alpha.begin(), alpha.end(), memo_->alpha.begin(),
                          memo_->alpha.end()))
    return *memo_;

  std::vector<SolveJob> jobs(problems_.size());
  for (std::size_t i = 0; i < problems_.size(); ++i) {
    jobs[i].problem = &problems_[i];
    jobs[i].alpha.assign(alpha.begin(), alpha.end());
    jobs[i].init = warm_[i].empty() ? cold_[i] : warm_[i];
    jobs[i].settings = settings_;
  }

  CvEvaluation ev;
  ev.alpha.assign(alpha.begin(), alpha.end());
  ev.solves = exec(jobs);
  if (ev.solves.size() != jobs.size())
    throw Error("cv: executor returned " + std::to_string(ev.solves.size()) +
                " results for " + std::to_string(jobs.size()) + " jobs");

  double total = 0;
  ev.subset_sq_error.resize(problems_.size());
  for (std::size_t i = 0; i < problems_.size(); ++i) {
    const SolveResult& r = ev.solves[i];
    if (r.status != SolveStatus::Converged) ev.reliable = false;
    if (r.status != SolveStatus::Degenerate) warm_[i] = r.point;
    ev.subset_sq_error[i] =
        evaluate_on_test(problems_[i], mc_->binding(), test_rows_[i], r.point);
    total += ev.subset_sq_error[i];
  }
  ev.sigma = n_measurements_ ? std::sqrt(total / n_measurements_) : 0.0;

  // Aggregation identity: the root-mean form must match the per-subset sums
  // it was reduced from.
  double audit = 0;
  for (const double e : ev.subset_sq_error) audit += e;
  const double lhs = ev.sigma * ev.sigma * static_cast<double>(n_measurements_);
  if (std::abs(lhs - audit) > 1e-10 * std::max(1.0, std::abs(audit)))
    throw Error("cv: aggregation identity violated");

  memo_ = ev;
  return ev;
}

std::pair<SolveResult, double> CvEngine::final_fit(
    std::span<const double> alpha, const BatchExecutor& exec) {
  check_alpha(alpha);

  std::vector<SolveJob> jobs(1);
  jobs[0].problem = &full_;
  jobs[0].alpha.assign(alpha.begin(), alpha.end());
  jobs[0].init = full_warm_.empty() ? full_cold_ : full_warm_;
  jobs[0].settings = settings_;

  std::vector<SolveResult> res = exec(jobs);
  if (res.size() != 1) throw Error("cv: executor returned wrong batch size");
  SolveResult r = std::move(res[0]);
  if (r.status != SolveStatus::Degenerate) full_warm_ = r.point;

  const double sse =
      evaluate_on_test(full_, mc_->binding(), full_.training_rows, r.point);
  const double rmse =
      n_measurements_ ? std::sqrt(sse / n_measurements_) : 0.0;
  return {std::move(r), rmse};
}

}  // namespace svf
