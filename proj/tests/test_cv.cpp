#include <algorithm>
#include <cmath>
#include <vector>

#include "doctest.h"
#include "svf/cv.hpp"

using namespace svf;

namespace {

struct Fixture {
  TaskSpec spec;
  std::vector<Grid> grids;
  Dataset data;
  MeasurementBinding binding;
  ModelCompiler compiler;

  Fixture(const std::string& task, std::vector<double> t, std::vector<double> x)
      : spec(parse_taskfile(task)),
        grids(build_all(spec)),
        data({"t", "x"}, {std::move(t), std::move(x)}),
        binding(bind_measurements(data, spec, grids)),
        compiler(spec, grids, binding) {}

  static std::vector<Grid> build_all(const TaskSpec& s) {
    std::vector<Grid> gs;
    for (const auto& d : s.grids) gs.push_back(build_grid(d));
    return gs;
  }
};

// Smoothing-spline model over nine nodes; one alpha slot.
const char* kSplineTask =
    "CVNumOfIter 1\n"
    "CVstep 2\n"
    "Select x, t from d\n"
    "GRID: t in [0, 2, 0.25]\n"
    "VAR: x(t)\n"
    "OBJ: x.MSD() + x.Complexity(Penal[0])\n"
    "EOF\n";

// Constant-function model: the derivative constraint pins every node to one
// shared value, so each training fit is the mean of its training data.
const char* kConstantTask =
    "CVNumOfIter 1\n"
    "CVstep 2\n"
    "Select x, t from d\n"
    "GRID: t in [0, 1, 1]\n"
    "VAR: x(t)\n"
    "EQ: d/dt(x(t)) == 0;\n"
    "OBJ: x.MSD()\n"
    "EOF\n";

SolveSettings tight() {
  SolveSettings st;
  st.eps_c = 1e-13;
  st.eps_g = 1e-13;
  st.max_outer = 40;
  return st;
}

}  // namespace

TEST_SUITE_BEGIN("cv");

TEST_CASE("evaluate_on_test sums squared stencil residuals") {
  Fixture f(kSplineTask, {0.0, 1.0}, {1.0, 2.0});
  const std::vector<std::size_t> rows{0, 1};
  const NlpProblem p = f.compiler.compile(rows);

  std::vector<double> x(p.n_vars(), 0.0);
  CHECK(evaluate_on_test(p, f.binding, rows, x) == doctest::Approx(5.0));

  // Exact predictions: nodes at the measurement coordinates carry z.
  const VarSegment* seg = p.segment("x");
  REQUIRE(seg != nullptr);
  x[seg->offset + 0] = 1.0;  // t = 0
  x[seg->offset + 4] = 2.0;  // t = 1
  CHECK(evaluate_on_test(p, f.binding, rows, x) == doctest::Approx(0.0));

  CHECK(evaluate_on_test(p, f.binding, {}, x) == 0.0);

  const std::vector<std::size_t> first{0};
  x[seg->offset + 0] = 0.0;
  CHECK(evaluate_on_test(p, f.binding, first, x) == doctest::Approx(1.0));
}

TEST_CASE("leave-one-out on the two-point constant model gives sigma 2") {
  Fixture f(kConstantTask, {0.0, 1.0}, {1.0, 3.0});
  CvEngine eng(f.compiler, make_partition(2, 2), tight());
  REQUIRE(eng.subset_count() == 2);
  REQUIRE(eng.n_alpha() == 0);

  const CvEvaluation ev = eng.cv_error({}, local_executor());
  CHECK(ev.reliable);
  REQUIRE(ev.subset_sq_error.size() == 2);
  // Each training set is the other point; the constant fit equals it, so the
  // held-out error is (1-3)^2 = 4 both ways and sigma = sqrt((4+4)/2) = 2.
  CHECK(std::abs(ev.subset_sq_error[0] - 4.0) < 1e-11);
  CHECK(std::abs(ev.subset_sq_error[1] - 4.0) < 1e-11);
  CHECK(std::abs(ev.sigma - 2.0) < 1e-12);
}

TEST_CASE("engine aggregation matches an independent per-subset loop") {
  std::vector<double> t, z;
  for (int i = 0; i < 8; ++i) {
    t.push_back(0.25 * i);
    z.push_back(std::sin(1.7 * t.back()) + 0.1 * i);
  }
  Fixture f(kSplineTask, t, z);
  const Partition part = make_partition(8, 3);
  const std::vector<double> alpha{0.5};

  CvEngine eng(f.compiler, part, SolveSettings{});
  const CvEvaluation ev = eng.cv_error(alpha, local_executor());
  CHECK(ev.reliable);

  // Reference: same partition walked by hand, cold starts, no engine.
  double total = 0;
  for (std::size_t i = 0; i < part.subsets.size(); ++i) {
    const auto& held = part.subsets[i];
    std::vector<std::size_t> training;
    for (std::size_t k = 0; k < 8; ++k)
      if (std::find(held.begin(), held.end(), k) == held.end())
        training.push_back(k);
    const NlpProblem p = f.compiler.compile(training);
    const SolveResult r =
        solve(p, alpha, f.compiler.initial_point(p), SolveSettings{});
    REQUIRE(r.status == SolveStatus::Converged);
    const double sse = evaluate_on_test(p, f.binding, held, r.point);
    CHECK(ev.subset_sq_error[i] == sse);  // first call is cold: bit-identical
    total += sse;
  }
  CHECK(ev.sigma == std::sqrt(total / 8.0));

  // Aggregation identity in the reported form.
  double sum = 0;
  for (const double e : ev.subset_sq_error) sum += e;
  CHECK(ev.sigma * ev.sigma * 8.0 == doctest::Approx(sum).epsilon(1e-10));
}

TEST_CASE("repeated evaluation at the same alpha is bit-identical") {
  std::vector<double> t, z;
  for (int i = 0; i < 6; ++i) {
    t.push_back(0.3 * i);
    z.push_back(std::cos(2.0 * t.back()));
  }
  Fixture f(kSplineTask, t, z);
  CvEngine eng(f.compiler, make_partition(6, 3), SolveSettings{});

  const std::vector<double> a025{0.25};
  const CvEvaluation a = eng.cv_error(a025, local_executor());
  const CvEvaluation b = eng.cv_error(a025, local_executor());
  CHECK(a.sigma == b.sigma);
  CHECK(a.subset_sq_error == b.subset_sq_error);
  for (std::size_t i = 0; i < a.solves.size(); ++i)
    CHECK(a.solves[i] == b.solves[i]);

  // A different alpha invalidates the memo and changes the answer.
  const std::vector<double> a25{25.0};
  const CvEvaluation c = eng.cv_error(a25, local_executor());
  CHECK(c.sigma != a.sigma);
}

TEST_CASE("fresh engines evaluate identically") {
  std::vector<double> t, z;
  for (int i = 0; i < 7; ++i) {
    t.push_back(0.28 * i);
    z.push_back(std::sin(t.back()) - 0.2 * i);
  }
  Fixture f(kSplineTask, t, z);
  CvEngine e1(f.compiler, make_partition(7, 7), SolveSettings{});
  CvEngine e2(f.compiler, make_partition(7, 7), SolveSettings{});
  const std::vector<double> one{1.0};
  const CvEvaluation a = e1.cv_error(one, local_executor());
  const CvEvaluation b = e2.cv_error(one, local_executor());
  CHECK(a.sigma == b.sigma);
  CHECK(a.subset_sq_error == b.subset_sq_error);
}

TEST_CASE("alpha validation") {
  Fixture f(kSplineTask, {0.0, 1.0, 2.0}, {1.0, 2.0, 3.0});
  CvEngine eng(f.compiler, make_partition(3, 3), SolveSettings{});
  CHECK_THROWS_AS(eng.cv_error({}, local_executor()), Error);
  const std::vector<double> two{1.0, 2.0};
  CHECK_THROWS_AS(eng.cv_error(two, local_executor()), Error);
  const std::vector<double> neg{-1.0};
  CHECK_THROWS_AS(eng.cv_error(neg, local_executor()), Error);
  const std::vector<double> nan{std::nan("")};
  CHECK_THROWS_AS(eng.cv_error(nan, local_executor()), Error);
}

TEST_CASE("final_fit on noiseless linear data interpolates") {
  std::vector<double> t, z;
  for (int i = 0; i < 9; ++i) {
    t.push_back(0.25 * i);
    z.push_back(2.0 * t.back() + 1.0);
  }
  Fixture f(kSplineTask, t, z);
  CvEngine eng(f.compiler, make_partition(9, 9), SolveSettings{});

  // A line has zero curvature, so the regularizer is inactive at the optimum
  // and the fit passes through every measurement regardless of alpha.
  for (const double a : {1e-4, 1.0, 100.0}) {
    const std::vector<double> av{a};
    auto [fit, rmse] = eng.final_fit(av, local_executor());
    CHECK(fit.status == SolveStatus::Converged);
    CHECK(rmse < 1e-8);
  }
}

TEST_CASE("non-converged subsets flag the evaluation unreliable") {
  // Two training points per subset: the constant fit must average them, and
  // a single outer iteration leaves the equality constraint well above
  // tolerance (the first penalized minimizer splits the difference).
  Fixture f(kConstantTask, {0.0, 1.0, 1.0, 0.0}, {1.0, 5.0, 6.0, 2.0});
  SolveSettings starved;
  starved.max_outer = 1;
  CvEngine eng(f.compiler, make_partition(4, 2), starved);
  const CvEvaluation ev = eng.cv_error({}, local_executor());
  CHECK_FALSE(ev.reliable);
  bool any_nonconverged = false;
  for (const auto& r : ev.solves)
    any_nonconverged |= r.status != SolveStatus::Converged;
  CHECK(any_nonconverged);
  CHECK(std::isfinite(ev.sigma));
}

TEST_CASE("subset problems hold the training complement") {
  Fixture f(kSplineTask, {0.0, 0.5, 1.0, 1.5}, {1.0, 2.0, 1.5, 0.5});
  const Partition part = make_partition(4, 2);
  CvEngine eng(f.compiler, part, SolveSettings{});
  REQUIRE(eng.subset_count() == 2);
  // Strided partition: subset 0 = {0, 2}, subset 1 = {1, 3}.
  CHECK(eng.subset_problem(0).training_rows == std::vector<std::size_t>{1, 3});
  CHECK(eng.subset_problem(1).training_rows == std::vector<std::size_t>{0, 2});
  CHECK(eng.full_problem().training_rows ==
        std::vector<std::size_t>{0, 1, 2, 3});
}

TEST_CASE("local executor preserves order and handles empty batches") {
  CHECK(local_executor()({}).empty());

  Fixture f(kSplineTask, {0.0, 1.0, 2.0}, {0.0, 1.0, 0.0});
  const std::vector<std::size_t> r01{0, 1}, r12{1, 2};
  const NlpProblem p1 = f.compiler.compile(r01);
  const NlpProblem p2 = f.compiler.compile(r12);
  const std::vector<double> one{1.0};
  std::vector<SolveJob> jobs(2);
  jobs[0] = {&p1, one, f.compiler.initial_point(p1), SolveSettings{}};
  jobs[1] = {&p2, one, f.compiler.initial_point(p2), SolveSettings{}};
  const auto res = local_executor()(jobs);
  REQUIRE(res.size() == 2);
  CHECK(res[0] == solve(p1, one, f.compiler.initial_point(p1)));
  CHECK(res[1] == solve(p2, one, f.compiler.initial_point(p2)));
}

TEST_SUITE_END();
