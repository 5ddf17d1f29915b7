#pragma once

// Shared test utilities: a random expression-DAG generator kept away from
// singularities (bounded values, guarded denominators and log arguments) and
// a central finite-difference gradient oracle.

#include <cmath>
#include <random>
#include <vector>

#include "svf/expr.hpp"

namespace svf::testing {

struct RandomDag {
  Arena arena;
  NodeId root = kNoNode;
  std::vector<double> point;
  std::vector<double> alpha;
};

// Builds a DAG over 1..6 variables (plus an occasional alpha parameter) whose
// value and intermediates stay bounded at `point`, so central differences are
// trustworthy there.
inline RandomDag make_random_dag(std::mt19937_64& rng) {
  RandomDag d;
  Arena& a = d.arena;
  std::uniform_int_distribution<int> nvars_dist(1, 6);
  std::uniform_real_distribution<double> coord(-2.0, 2.0);
  const int nvars = nvars_dist(rng);

  struct Entry {
    NodeId id;
    double value;
  };
  std::vector<Entry> pool;
  for (int i = 0; i < nvars; ++i) {
    const double v = coord(rng);
    d.point.push_back(v);
    pool.push_back({a.var("x" + std::to_string(i)), v});
  }
  if (std::uniform_int_distribution<int>(0, 3)(rng) == 0) {
    const double v = std::abs(coord(rng)) + 0.1;
    d.alpha.push_back(v);
    pool.push_back({a.param(0), v});
  }
  for (int i = 0; i < 3; ++i) {
    const double c = coord(rng);
    pool.push_back({a.constant(c), c});
  }

  auto pick = [&]() -> Entry {
    return pool[std::uniform_int_distribution<size_t>(0, pool.size() - 1)(rng)];
  };
  const auto smooth_abs = [](double v) {
    return std::sqrt(v * v + kAbsSmoothEps * kAbsSmoothEps);
  };

  const int steps = std::uniform_int_distribution<int>(8, 30)(rng);
  for (int s = 0; s < steps; ++s) {
    const Entry x = pick();
    const Entry y = pick();
    Entry e{kNoNode, 0.0};
    switch (std::uniform_int_distribution<int>(0, 9)(rng)) {
      case 0: e = {a.add(x.id, y.id), x.value + y.value}; break;
      case 1: e = {a.sub(x.id, y.id), x.value - y.value}; break;
      case 2: e = {a.mul(x.id, y.id), x.value * y.value}; break;
      case 3: {  // guarded quotient: denominator bounded away from zero
        const NodeId den = a.add(a.abs_smooth(y.id), a.constant(0.5));
        e = {a.div(x.id, den), x.value / (smooth_abs(y.value) + 0.5)};
        break;
      }
      case 4: e = {a.sin(x.id), std::sin(x.value)}; break;
      case 5: e = {a.cos(x.id), std::cos(x.value)}; break;
      case 6: {  // damped exponent keeps higher derivatives tame
        const NodeId arg = a.mul(a.constant(0.1), x.id);
        e = {a.exp(arg), std::exp(0.1 * x.value)};
        break;
      }
      case 7: {  // guarded log argument
        const NodeId arg = a.add(a.abs_smooth(x.id), a.constant(0.5));
        e = {a.log(arg), std::log(smooth_abs(x.value) + 0.5)};
        break;
      }
      case 8: e = {a.abs_smooth(x.id), smooth_abs(x.value)}; break;
      case 9: {
        const std::int64_t k = std::uniform_int_distribution<int>(2, 4)(rng);
        if (std::abs(x.value) > 1.5) { s--; continue; }
        e = {a.pow_int(x.id, k), std::pow(x.value, static_cast<double>(k))};
        break;
      }
    }
    if (!std::isfinite(e.value) || std::abs(e.value) > 30.0) continue;
    pool.push_back(e);
    d.root = e.id;
  }
  if (d.root == kNoNode) d.root = pool.front().id;
  return d;
}

// Central finite differences with h scaled per coordinate.
inline std::vector<double> fd_gradient(Expr e, std::vector<double> point,
                                       std::span<const double> alpha,
                                       double h0 = 1e-5) {
  std::vector<double> g(point.size());
  for (size_t i = 0; i < point.size(); ++i) {
    const double h = h0 * std::max(1.0, std::abs(point[i]));
    const double save = point[i];
    point[i] = save + h;
    const double up = eval(e, point, alpha);
    point[i] = save - h;
    const double dn = eval(e, point, alpha);
    point[i] = save;
    g[i] = (up - dn) / (2.0 * h);
  }
  return g;
}

inline double rel_err(double got, double want) {
  return std::abs(got - want) / std::max({1.0, std::abs(got), std::abs(want)});
}

}  // namespace svf::testing
