#include <doctest.h>

#include <cmath>
#include <random>

#include "helpers.hpp"
#include "svf/expr.hpp"

using namespace svf;

TEST_SUITE_BEGIN("expr");

TEST_CASE("eval and grad of x*y + sin(x)") {
  Arena a;
  Expr x{&a, a.var("x")}, y{&a, a.var("y")};
  Expr e = x * y + sin(x);
  const std::vector<double> p{2.0, 3.0};
  CHECK(eval(e, p) == doctest::Approx(6.0 + std::sin(2.0)).epsilon(1e-15));
  const auto g = grad(e, p);
  REQUIRE(g.size() == 2);
  CHECK(g[0] == doctest::Approx(3.0 + std::cos(2.0)).epsilon(1e-15));
  CHECK(g[1] == doctest::Approx(2.0).epsilon(1e-15));
}

TEST_CASE("free_vars reports reachable variables only") {
  Arena a;
  Expr x{&a, a.var("x")}, y{&a, a.var("y")};
  a.var("z");  // registered but unused
  Expr e = x * y + sin(x);
  CHECK(free_vars(e) == std::vector<std::int32_t>{0, 1});

  // grad is zero (not absent) for registered-but-unreachable variables
  const auto g = grad(e, std::vector<double>{2.0, 3.0, 7.0});
  REQUIRE(g.size() == 3);
  CHECK(g[2] == 0.0);
}

TEST_CASE("division by zero raises NonFiniteResult") {
  Arena a;
  Expr x{&a, a.var("x")}, y{&a, a.var("y")};
  Expr e = x / y;
  CHECK_THROWS_AS(eval(e, std::vector<double>{1.0, 0.0}), NonFiniteResult);
  CHECK_THROWS_AS(eval(log(y), std::vector<double>{1.0, -1.0}), NonFiniteResult);
}

TEST_CASE("unbound variable and parameter are named") {
  Arena a;
  Expr x{&a, a.var("x")}, y{&a, a.var("y")};
  Expr e = x + y;
  try {
    eval(e, std::vector<double>{1.0});
    FAIL("expected UnboundVariable");
  } catch (const UnboundVariable& u) {
    CHECK(u.name == "y");
  }
  Expr withp{&a, a.mul(a.param(1), x.id)};
  CHECK_THROWS_AS(eval(withp, std::vector<double>{1.0, 2.0},
                       std::vector<double>{0.5}),
                  UnboundVariable);
}

TEST_CASE("parameters are bound at evaluation time") {
  Arena a;
  Expr x{&a, a.var("x")};
  Expr e{&a, a.mul(a.param(0), a.mul(x.id, x.id))};
  const std::vector<double> p{3.0};
  CHECK(eval(e, p, std::vector<double>{2.0}) == doctest::Approx(18.0));
  CHECK(eval(e, p, std::vector<double>{0.0}) == 0.0);
  // same DAG, alpha enters only through the binding
  const auto g = grad(e, p, std::vector<double>{2.0});
  CHECK(g[0] == doctest::Approx(12.0).epsilon(1e-15));
}

TEST_CASE("integer powers share subexpressions") {
  Arena a;
  Expr x{&a, a.var("x")};
  const NodeId p6 = a.pow_int(x.id, 6);
  CHECK(a.pow_int(x.id, 6) == p6);       // idempotent
  const NodeId x2 = a.mul(x.id, x.id);   // already built by the powering
  const size_t before = a.size();
  (void)x2;
  CHECK(a.size() == before);
  CHECK(eval({&a, p6}, std::vector<double>{1.5}) ==
        doctest::Approx(std::pow(1.5, 6.0)).epsilon(1e-15));
  CHECK(eval({&a, a.pow_int(x.id, -2)}, std::vector<double>{2.0}) ==
        doctest::Approx(0.25).epsilon(1e-15));
  CHECK(eval({&a, a.pow_int(x.id, 0)}, std::vector<double>{2.0}) == 1.0);
}

TEST_CASE("abs_smooth is a C1 absolute value") {
  Arena a;
  Expr x{&a, a.var("x")};
  Expr e = abs_smooth(x);
  CHECK(eval(e, std::vector<double>{0.0}) == doctest::Approx(1e-8));
  CHECK(eval(e, std::vector<double>{3.0}) == doctest::Approx(3.0).epsilon(1e-15));
  CHECK(grad(e, std::vector<double>{0.0})[0] == 0.0);
  CHECK(grad(e, std::vector<double>{-2.0})[0] == doctest::Approx(-1.0).epsilon(1e-14));
}

TEST_CASE("sum matches sequential accumulation bit for bit") {
  Arena a;
  std::vector<NodeId> terms;
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> vals;
  for (int i = 0; i < 1000; ++i) {
    vals.push_back(u(rng));
    terms.push_back(a.constant(vals.back()));
  }
  const NodeId s = a.sum(terms);
  double want = 0.0;
  for (double v : vals) want += v;
  CHECK(eval({&a, s}, {}) == want);
}

TEST_CASE("constant folding keeps values exact") {
  Arena a;
  const NodeId c = a.mul(a.constant(2.0), a.constant(3.5));
  CHECK(a.node(c).op == Op::Const);
  CHECK(a.node(c).value == 7.0);
  Expr x{&a, a.var("x")};
  CHECK(a.add(x.id, a.constant(0.0)) == x.id);
  CHECK(a.mul(a.constant(1.0), x.id) == x.id);
}

TEST_CASE("reverse gradient matches central differences on random DAGs") {
  std::mt19937_64 rng(20240817);
  int checked = 0;
  for (int iter = 0; iter < 100; ++iter) {
    auto d = svf::testing::make_random_dag(rng);
    Expr e{&d.arena, d.root};
    const auto g = grad(e, d.point, d.alpha);
    const auto fd = svf::testing::fd_gradient(e, d.point, d.alpha);
    for (size_t i = 0; i < g.size(); ++i) {
      CHECK(svf::testing::rel_err(g[i], fd[i]) < 1e-6);
      ++checked;
    }
  }
  CHECK(checked > 100);
}

TEST_SUITE_END();
