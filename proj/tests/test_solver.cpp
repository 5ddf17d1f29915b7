#include <doctest.h>

#include <Eigen/Dense>

#include <cmath>
#include <random>
#include <vector>

#include "helpers.hpp"
#include "svf/dataset.hpp"
#include "svf/solver.hpp"

using namespace svf;
using svf::testing::rel_err;

namespace {

// Random convex quadratic min 1/2 x^T Q x + q^T x (Q SPD) with optional
// equality constraints A x = b, packaged as an NlpProblem DAG. The builder
// also returns the exact optimum from the KKT system, solved densely.
struct Quadratic {
  NlpProblem problem;
  Eigen::MatrixXd Q, A;
  Eigen::VectorXd q, b;
  Eigen::VectorXd xstar;
};

Quadratic make_quadratic(std::mt19937_64& rng, int n, int m) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  Eigen::MatrixXd M(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) M(i, j) = gauss(rng);
  Quadratic out;
  out.Q = M.transpose() * M + static_cast<double>(n) * Eigen::MatrixXd::Identity(n, n);
  out.q = Eigen::VectorXd::NullaryExpr(n, [&](Eigen::Index) { return gauss(rng); });
  out.A.resize(m, n);
  out.b.resize(m);
  for (int i = 0; i < m; ++i) {
    out.b(i) = gauss(rng);
    for (int j = 0; j < n; ++j) out.A(i, j) = gauss(rng);
  }

  out.problem.arena = std::make_shared<Arena>();
  Arena& a = *out.problem.arena;
  std::vector<NodeId> xs;
  for (int i = 0; i < n; ++i) xs.push_back(a.var("x" + std::to_string(i)));
  std::vector<NodeId> terms;
  for (int i = 0; i < n; ++i) {
    terms.push_back(a.mul(a.constant(0.5 * out.Q(i, i)), a.mul(xs[i], xs[i])));
    for (int j = i + 1; j < n; ++j)
      if (out.Q(i, j) != 0.0)
        terms.push_back(a.mul(a.constant(out.Q(i, j)), a.mul(xs[i], xs[j])));
    terms.push_back(a.mul(a.constant(out.q(i)), xs[i]));
  }
  out.problem.objective = a.sum(terms);
  for (int i = 0; i < m; ++i) {
    std::vector<NodeId> row;
    for (int j = 0; j < n; ++j)
      row.push_back(a.mul(a.constant(out.A(i, j)), xs[j]));
    row.push_back(a.constant(-out.b(i)));
    out.problem.constraints.push_back(a.sum(row));
  }

  // KKT oracle: [Q A^T; A 0] [x; lam] = [-q; b].
  Eigen::MatrixXd K = Eigen::MatrixXd::Zero(n + m, n + m);
  K.topLeftCorner(n, n) = out.Q;
  if (m) {
    K.topRightCorner(n, m) = out.A.transpose();
    K.bottomLeftCorner(m, n) = out.A;
  }
  Eigen::VectorXd rhs(n + m);
  rhs.head(n) = -out.q;
  if (m) rhs.tail(m) = out.b;
  out.xstar = K.fullPivLu().solve(rhs).head(n);
  return out;
}

}  // namespace

TEST_SUITE_BEGIN("solver");

TEST_CASE("matches the dense KKT oracle on random convex quadratics") {
  std::mt19937_64 rng(42);
  for (int trial = 0; trial < 30; ++trial) {
    const int n = std::uniform_int_distribution<int>(2, 30)(rng);
    const int m = trial % 2 ? std::uniform_int_distribution<int>(1, n - 1)(rng) : 0;
    const Quadratic qp = make_quadratic(rng, n, m);

    const std::vector<double> x0(static_cast<std::size_t>(n), 0.0);
    const SolveResult r = solve(qp.problem, {}, x0);
    CHECK(r.status == SolveStatus::Converged);
    // Stationarity and feasibility tolerances of 1e-6 bound the distance to
    // the oracle point only up to the KKT system's conditioning.
    double dx = 0;
    for (int i = 0; i < n; ++i)
      dx = std::max(dx, std::abs(r.point[static_cast<std::size_t>(i)] - qp.xstar(i)));
    CHECK(dx < 1e-5);
  }
}

TEST_CASE("symmetric constrained quadratic lands on the symmetric point") {
  // min x^2 + y^2 subject to x + y = 1.
  NlpProblem p;
  p.arena = std::make_shared<Arena>();
  Arena& a = *p.arena;
  const NodeId x = a.var("x"), y = a.var("y");
  p.objective = a.add(a.mul(x, x), a.mul(y, y));
  p.constraints.push_back(a.sub(a.add(x, y), a.constant(1.0)));

  const SolveResult r = solve(p, {}, std::vector<double>{0.0, 0.0});
  CHECK(r.status == SolveStatus::Converged);
  CHECK(std::abs(r.point[0] - 0.5) < 1e-6);
  CHECK(std::abs(r.point[1] - 0.5) < 1e-6);
  CHECK(r.max_violation <= 1e-6);

  const auto [stat, feas] = kkt_residual(p, {}, r.point, r.multipliers);
  CHECK(stat <= 1e-6);
  CHECK(feas <= 1e-6);
}

TEST_CASE("kkt residual separates stationarity from feasibility") {
  NlpProblem p;
  p.arena = std::make_shared<Arena>();
  Arena& a = *p.arena;
  const NodeId x = a.var("x"), y = a.var("y");
  p.objective = a.add(a.mul(x, x), a.mul(y, y));
  p.constraints.push_back(a.sub(a.add(x, y), a.constant(1.0)));

  // Unconstrained quadratic at its own minimizer: both residuals vanish.
  NlpProblem q;
  q.arena = std::make_shared<Arena>();
  Arena& b = *q.arena;
  const NodeId u = b.var("u");
  q.objective = b.add(b.mul(b.sub(u, b.constant(3.0)), b.sub(u, b.constant(3.0))),
                      b.constant(1.0));
  const auto [s0, f0] = kkt_residual(q, {}, std::vector<double>{3.0}, {});
  CHECK(s0 < 1e-9);
  CHECK(f0 == 0.0);

  // Feasible but non-stationary point.
  const auto [s1, f1] =
      kkt_residual(p, {}, std::vector<double>{1.0, 0.0}, std::vector<double>{0.0});
  CHECK(f1 < 1e-12);
  CHECK(s1 > 0.5);
}

TEST_CASE("merit decreases monotonically along accepted steps") {
  std::mt19937_64 rng(7);
  const Quadratic qp = make_quadratic(rng, 12, 0);
  SolveTrace trace;
  const std::vector<double> x0(12, 1.0);
  const SolveResult r = solve(qp.problem, {}, x0, {}, &trace);
  CHECK(r.status == SolveStatus::Converged);
  REQUIRE(trace.merit.size() >= 2);
  for (std::size_t i = 1; i < trace.merit.size(); ++i)
    CHECK(trace.merit[i] <= trace.merit[i - 1] + 1e-12);
}

TEST_CASE("identical inputs give bit-identical results") {
  std::mt19937_64 rng(19);
  const Quadratic qp = make_quadratic(rng, 10, 3);
  const std::vector<double> x0(10, 0.25);
  const SolveResult r1 = solve(qp.problem, {}, x0);
  const SolveResult r2 = solve(qp.problem, {}, x0);
  CHECK(r1 == r2);
  CHECK(r1.point == r2.point);
}

TEST_CASE("non-finite regions are reported as degenerate, not crashed on") {
  NlpProblem p;
  p.arena = std::make_shared<Arena>();
  Arena& a = *p.arena;
  const NodeId x = a.var("x");
  p.objective = a.log(x);  // undefined at the start point below

  const SolveResult r = solve(p, {}, std::vector<double>{-1.0});
  CHECK(r.status == SolveStatus::Degenerate);
  CHECK_THROWS_AS(
      solve(p, {}, std::vector<double>{std::numeric_limits<double>::quiet_NaN()}),
      Error);
}

TEST_CASE("ill-scaled smoothing problems still match the quadratic oracle") {
  // A small smoothing task at extreme alpha: the objective is quadratic, so
  // the dense normal-equation solve is an exact oracle.
  const TaskSpec spec = parse_taskfile(
      "CVNumOfIter 1\nCVstep 2\nSelect x, t from d\n"
      "GRID: t in [0, 2, 0.1]\nVAR: x(t)\nOBJ: x.MSD() + x.Complexity(Penal[0])\nEOF\n");
  std::vector<Grid> grids{build_grid(spec.grids[0])};
  const Dataset data({"t", "x"}, {{0.15, 0.55, 0.95, 1.35, 1.85},
                                  {1.0, 0.4, -0.2, 0.7, 1.3}});
  const MeasurementBinding binding = bind_measurements(data, spec, grids);
  const ModelCompiler mc(spec, grids, binding);
  const std::vector<std::size_t> rows{0, 1, 2, 3, 4};
  const NlpProblem p = mc.compile(rows);
  const auto n = static_cast<Eigen::Index>(p.n_vars());

  for (const double alpha : {1e-8, 1.0, 1e6}) {
    // Oracle: H = hessian of the quadratic objective via AD probing of the
    // gradient along unit directions (the gradient is affine, so this is
    // exact), then solve H x = -g(0).
    Expr obj{p.arena.get(), p.objective};
    const std::vector<double> av{alpha};
    std::vector<double> zero(p.n_vars(), 0.0);
    const auto g0 = grad(obj, zero, av);
    Eigen::MatrixXd H(n, n);
    for (Eigen::Index j = 0; j < n; ++j) {
      std::vector<double> e(p.n_vars(), 0.0);
      e[static_cast<std::size_t>(j)] = 1.0;
      const auto gj = grad(obj, e, av);
      for (Eigen::Index i = 0; i < n; ++i)
        H(i, j) = gj[static_cast<std::size_t>(i)] - g0[static_cast<std::size_t>(i)];
    }
    Eigen::VectorXd rhs(n);
    for (Eigen::Index i = 0; i < n; ++i) rhs(i) = -g0[static_cast<std::size_t>(i)];
    const Eigen::VectorXd xstar = H.ldlt().solve(rhs);

    const SolveResult r = solve(p, av, zero);
    double dx = 0;
    for (Eigen::Index i = 0; i < n; ++i)
      dx = std::max(dx, std::abs(r.point[static_cast<std::size_t>(i)] - xstar(i)));
    CHECK(dx < 1e-5);
  }
}

TEST_CASE("warm starts preserve per-item contracts and speed up repeats") {
  std::mt19937_64 rng(23);
  const Quadratic qp = make_quadratic(rng, 15, 4);
  std::vector<NlpProblem> chain;
  chain.push_back(qp.problem);
  chain.push_back(qp.problem);

  const std::vector<double> x0(15, 0.0);
  const auto results = warm_start_chain(chain, {}, x0);
  REQUIRE(results.size() == 2);
  CHECK(results[0].status == SolveStatus::Converged);
  CHECK(results[1].status == SolveStatus::Converged);
  CHECK(results[1].inner_iters <= results[0].inner_iters);

  CHECK(warm_start_chain({}, {}, x0).empty());
}

TEST_CASE("multistart keeps the best local minimum found") {
  // f(x) = (x^2 - 1)^2 + 0.1 (x - 1): two minima, the right one lower.
  NlpProblem p;
  p.arena = std::make_shared<Arena>();
  Arena& a = *p.arena;
  const NodeId x = a.var("x");
  const NodeId xx = a.mul(x, x);
  const NodeId w = a.sub(xx, a.constant(1.0));
  p.objective = a.add(a.mul(w, w),
                      a.mul(a.constant(0.1), a.sub(x, a.constant(1.0))));

  // The tilt makes the left minimum the lower one. From +1 without restarts
  // the solver stays in the right basin.
  SolveSettings st;
  const SolveResult stuck = solve(p, {}, std::vector<double>{1.0}, st);
  CHECK(stuck.point[0] > 0.0);

  st.restarts = 8;
  st.jitter = 2.5;
  st.seed = 3;
  const SolveResult best = solve(p, {}, std::vector<double>{1.0}, st);
  CHECK(best.point[0] < 0.0);
  CHECK(best.objective < stuck.objective);

  // Deterministic under the same seed.
  const SolveResult again = solve(p, {}, std::vector<double>{1.0}, st);
  CHECK(best == again);
}

TEST_SUITE_END();
