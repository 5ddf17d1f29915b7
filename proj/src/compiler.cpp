#include "svf/compiler.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <unordered_map>
#include <unordered_set>
#include <utility>

namespace svf {

namespace {

// Inclusive index window; empty when lo > hi.
struct Range {
  std::int64_t lo = 0, hi = 0;
};

Range intersect(Range a, Range b) {
  return {std::max(a.lo, b.lo), std::min(a.hi, b.hi)};
}

// d^o/dx^o of x^k evaluated symbolically: k (k-1) ... (k-o+1), zero once the
// exponent is exhausted.
double falling(std::int64_t k, int o) {
  double c = 1.0;
  for (int j = 0; j < o; ++j) c *= static_cast<double>(k - j);
  return k - o < 0 ? 0.0 : c;
}

double powd(double x, std::int64_t k) {
  double r = 1.0;
  for (std::int64_t j = 0; j < k; ++j) r *= x;
  return r;
}

// Trapezoid node weights: h at interior nodes, h/2 at the ends.
std::vector<double> trapezoid_weights(const Grid& g) {
  std::vector<double> w(g.size(), g.h);
  if (w.size() == 1) {
    w[0] = 0.0;
  } else {
    w.front() = g.h / 2;
    w.back() = g.h / 2;
  }
  return w;
}

// A derivative marker chain d/dG(...d/dG'(f(args))) collapses to an exact
// polynomial derivative when every marker grid appears as exactly one bare
// argument of the innermost polynomial application.
struct AnalyticDeriv {
  const VarDecl* poly = nullptr;
  const TExpr* apply = nullptr;
  std::vector<int> orders;  // per argument position
};

std::optional<AnalyticDeriv> try_analytic(const TExpr& e, const TaskSpec& spec) {
  std::vector<std::pair<std::string, int>> axes;
  const TExpr* cur = &e;
  while (cur->kind == TExpr::Kind::Deriv) {
    axes.emplace_back(cur->name, cur->order);
    cur = cur->args[0].get();
  }
  if (cur->kind != TExpr::Kind::Apply) return std::nullopt;
  const VarDecl* decl = spec.find_var(cur->name);
  if (!decl || decl->kind != VarDecl::Kind::Polynomial) return std::nullopt;
  AnalyticDeriv out{decl, cur, std::vector<int>(cur->args.size(), 0)};
  for (const auto& [grid, order] : axes) {
    int pos = -1, hits = 0;
    for (std::size_t i = 0; i < cur->args.size(); ++i)
      if (cur->args[i]->kind == TExpr::Kind::Name && cur->args[i]->name == grid) {
        pos = static_cast<int>(i);
        ++hits;
      }
    if (hits != 1) return std::nullopt;
    out.orders[static_cast<std::size_t>(pos)] += order;
  }
  return out;
}

}  // namespace

std::vector<std::pair<int, int>> monomials_2d(std::int64_t degree) {
  std::vector<std::pair<int, int>> m;
  for (int a = 0; a <= degree; ++a)
    for (int b = 0; a + b <= degree; ++b) m.emplace_back(a, b);
  return m;
}

NodeId fd_first(Arena& a, std::span<const NodeId> nodes, const Grid& g,
                std::size_t i, FdScheme scheme) {
  const std::size_t N = nodes.size() - 1;
  switch (scheme) {
    case FdScheme::Forward:
      if (i >= N) throw StencilOutOfRange("forward difference needs node i+1");
      return a.div(a.sub(nodes[i + 1], nodes[i]), a.constant(g.h));
    case FdScheme::Backward:
      if (i == 0) throw StencilOutOfRange("backward difference needs node i-1");
      return a.div(a.sub(nodes[i], nodes[i - 1]), a.constant(g.h));
    case FdScheme::Central:
      if (i == 0 || i >= N)
        throw StencilOutOfRange("central difference needs nodes i-1 and i+1");
      return a.div(a.sub(nodes[i + 1], nodes[i - 1]), a.constant(2 * g.h));
  }
  throw CompileError("unknown finite-difference scheme");
}

NodeId fd_second(Arena& a, std::span<const NodeId> nodes, const Grid& g,
                 std::size_t i) {
  const std::size_t N = nodes.size() - 1;
  if (i == 0 || i >= N)
    throw StencilOutOfRange("second difference needs nodes i-1 and i+1");
  const NodeId num = a.sub(a.add(nodes[i + 1], nodes[i - 1]),
                           a.mul(a.constant(2.0), nodes[i]));
  return a.div(num, a.constant(g.h * g.h));
}

NodeId trapezoid(Arena& a, std::span<const NodeId> integrand, const Grid& g,
                 std::size_t lo, std::size_t hi) {
  if (lo > hi || hi >= g.size() || integrand.size() != hi - lo + 1)
    throw CompileError("trapezoid: node range does not match integrand");
  if (lo == hi) return a.constant(0.0);
  const NodeId half = a.constant(0.5);
  std::vector<NodeId> terms;
  terms.reserve(integrand.size());
  terms.push_back(a.mul(half, integrand.front()));
  for (std::size_t j = 1; j + 1 < integrand.size(); ++j)
    terms.push_back(integrand[j]);
  terms.push_back(a.mul(half, integrand.back()));
  return a.mul(a.constant(g.h), a.sum(terms));
}

NodeId expand_composition(Arena& a, std::span<const NodeId> coeffs,
                          std::int64_t degree, std::span<const NodeId> inner) {
  std::vector<NodeId> terms;
  if (inner.size() == 1) {
    if (coeffs.size() != static_cast<std::size_t>(degree + 1))
      throw ArityError(0, 0, "composition: coefficient count does not match degree");
    for (std::int64_t k = 0; k <= degree; ++k)
      terms.push_back(a.mul(coeffs[static_cast<std::size_t>(k)],
                            a.pow_int(inner[0], k)));
  } else if (inner.size() == 2) {
    const auto mono = monomials_2d(degree);
    if (coeffs.size() != mono.size())
      throw ArityError(0, 0, "composition: coefficient count does not match degree");
    for (std::size_t m = 0; m < mono.size(); ++m)
      terms.push_back(a.mul(coeffs[m], a.mul(a.pow_int(inner[0], mono[m].first),
                                             a.pow_int(inner[1], mono[m].second))));
  } else {
    throw ArityError(0, 0, "composition supports one or two inner arguments");
  }
  return a.sum(terms);
}

// ---------------------------------------------------------------------------

namespace {

// One compile() invocation's mutable state: the arena under construction,
// the variable layout, and the training measurement index.
struct Lowering {
  const TaskSpec& spec;
  const std::vector<Grid>& grids;
  const MeasurementBinding& binding;
  std::vector<std::size_t> training;

  Arena& a;
  std::vector<VarSegment> layout;
  std::unordered_map<std::string, std::vector<NodeId>> var_nodes;
  std::unordered_map<std::string, const Grid*> grid_of;
  std::unordered_set<std::size_t> in_training;

  // Grid name -> current node index; populated by equation instantiation and
  // integral expansion.
  using Ctx = std::unordered_map<std::string, std::int64_t>;

  Lowering(const TaskSpec& s, const std::vector<Grid>& g,
           const MeasurementBinding& b, std::span<const std::size_t> rows,
           Arena& arena)
      : spec(s), grids(g), binding(b),
        training(rows.begin(), rows.end()), a(arena) {
    for (const auto& gr : grids) grid_of[gr.name] = &gr;
    in_training.insert(training.begin(), training.end());
  }

  const Grid& grid(const std::string& name) const {
    auto it = grid_of.find(name);
    if (it == grid_of.end()) throw CompileError("no grid named " + name);
    return *it->second;
  }

  void register_vars() {
    for (const auto& v : spec.vars) {
      VarSegment seg;
      seg.name = v.name;
      seg.offset = static_cast<std::size_t>(a.var_count());
      seg.grids = v.arg_grids;
      std::vector<NodeId> nodes;
      switch (v.kind) {
        case VarDecl::Kind::GridFunction: {
          if (v.arg_grids.size() != 1)
            throw CompileError("grid function " + v.name +
                               ": only one-dimensional grid functions are supported");
          const Grid& g = grid(v.arg_grids[0]);
          seg.kind = VarSegment::Kind::GridFunction;
          seg.count = g.size();
          for (std::size_t i = 0; i < g.size(); ++i)
            nodes.push_back(a.var(v.name + "[" + std::to_string(i) + "]"));
          break;
        }
        case VarDecl::Kind::Polynomial: {
          seg.kind = VarSegment::Kind::PolyCoeffs;
          seg.degree = v.poly_pow;
          if (v.arg_grids.size() == 1) {
            seg.count = static_cast<std::size_t>(v.poly_pow + 1);
            for (std::int64_t k = 0; k <= v.poly_pow; ++k)
              nodes.push_back(a.var(v.name + ".p[" + std::to_string(k) + "]"));
          } else if (v.arg_grids.size() == 2) {
            const auto mono = monomials_2d(v.poly_pow);
            seg.count = mono.size();
            for (const auto& [p, q] : mono)
              nodes.push_back(a.var(v.name + ".p[" + std::to_string(p) + "," +
                                    std::to_string(q) + "]"));
          } else {
            throw CompileError("polynomial " + v.name +
                               ": arity must be one or two");
          }
          break;
        }
        case VarDecl::Kind::Scalar:
          seg.kind = VarSegment::Kind::Scalar;
          seg.count = 1;
          nodes.push_back(a.var(v.name));
          break;
      }
      layout.push_back(seg);
      var_nodes.emplace(v.name, std::move(nodes));
    }
  }

  // --- instantiation-range analysis ----------------------------------------

  // Index window over `target` at which `e` can be instantiated, given that
  // the surrounding context already displaces the target index by `shift`.
  Range walk(const TExpr& e, std::int64_t shift, const std::string& target) const {
    const Grid& g = grid(target);
    const auto N = static_cast<std::int64_t>(g.size()) - 1;
    const Range full{0, N};
    const Range here{-shift, N - shift};
    switch (e.kind) {
      case TExpr::Kind::Num:
      case TExpr::Kind::Penal:
      case TExpr::Kind::Msd:
      case TExpr::Kind::Complexity:
        return full;
      case TExpr::Kind::Name:
        return e.name == target ? here : full;
      case TExpr::Kind::Unary:
        return walk(*e.args[0], shift, target);
      case TExpr::Kind::Binary:
        return intersect(walk(*e.args[0], shift, target),
                         walk(*e.args[1], shift, target));
      case TExpr::Kind::Apply: {
        Range r = full;
        const VarDecl* decl = spec.find_var(e.name);
        if (decl && decl->kind == VarDecl::Kind::GridFunction &&
            decl->arg_grids[0] == target)
          r = here;
        for (const auto& arg : e.args)
          r = intersect(r, walk(*arg, shift, target));
        return r;
      }
      case TExpr::Kind::Deriv: {
        if (try_analytic(e, spec)) {
          Range r = full;
          const TExpr* apply = &e;
          while (apply->kind == TExpr::Kind::Deriv) apply = apply->args[0].get();
          for (const auto& arg : apply->args)
            r = intersect(r, walk(*arg, shift, target));
          return r;
        }
        if (e.name != target) return walk(*e.args[0], shift, target);
        if (e.order == 1)
          return intersect(walk(*e.args[0], shift, target),
                           walk(*e.args[0], shift + 1, target));
        return intersect(
            intersect(walk(*e.args[0], shift - 1, target),
                      walk(*e.args[0], shift, target)),
            walk(*e.args[0], shift + 1, target));
      }
      case TExpr::Kind::Integral:
        // An integral over the target grid binds it; inner references no
        // longer constrain the outer index.
        return e.name == target ? full : walk(*e.args[0], shift, target);
    }
    return full;
  }

  // Grids a constraint expression ranges over, i.e. any grid referenced
  // outside an integral that binds it.
  void free_grids(const TExpr& e, std::unordered_set<std::string>& bound,
                  std::unordered_set<std::string>& out) const {
    switch (e.kind) {
      case TExpr::Kind::Num:
      case TExpr::Kind::Penal:
        return;
      case TExpr::Kind::Msd:
      case TExpr::Kind::Complexity:
        return;
      case TExpr::Kind::Name:
        if (grid_of.count(e.name) && !bound.count(e.name)) out.insert(e.name);
        return;
      case TExpr::Kind::Unary:
      case TExpr::Kind::Binary:
        for (const auto& arg : e.args) free_grids(*arg, bound, out);
        return;
      case TExpr::Kind::Apply: {
        const VarDecl* decl = spec.find_var(e.name);
        if (decl && decl->kind == VarDecl::Kind::GridFunction &&
            !bound.count(decl->arg_grids[0]))
          out.insert(decl->arg_grids[0]);
        for (const auto& arg : e.args) free_grids(*arg, bound, out);
        return;
      }
      case TExpr::Kind::Deriv:
        if (!try_analytic(e, spec) && !bound.count(e.name)) out.insert(e.name);
        free_grids(*e.args[0], bound, out);
        return;
      case TExpr::Kind::Integral: {
        const bool added = bound.insert(e.name).second;
        free_grids(*e.args[0], bound, out);
        if (added) bound.erase(e.name);
        return;
      }
    }
  }

  // --- expression lowering --------------------------------------------------

  NodeId lower(const TExpr& e, const Ctx& ctx) {
    switch (e.kind) {
      case TExpr::Kind::Num:
        return a.constant(e.num);
      case TExpr::Kind::Penal:
        return a.param(static_cast<std::int32_t>(e.penals[0]));
      case TExpr::Kind::Name:
        return lower_name(e, ctx);
      case TExpr::Kind::Unary:
        return a.neg(lower(*e.args[0], ctx));
      case TExpr::Kind::Binary:
        return lower_binary(e, ctx);
      case TExpr::Kind::Apply:
        return lower_apply(e, ctx);
      case TExpr::Kind::Deriv:
        return lower_deriv(e, ctx);
      case TExpr::Kind::Integral:
        return lower_integral(e, ctx);
      case TExpr::Kind::Msd:
        return msd_expr(e.name);
      case TExpr::Kind::Complexity:
        return complexity_expr(e.name, e.penals);
    }
    throw CompileError("unsupported expression node");
  }

  NodeId lower_name(const TExpr& e, const Ctx& ctx) {
    if (auto it = grid_of.find(e.name); it != grid_of.end()) {
      auto jt = ctx.find(e.name);
      if (jt == ctx.end())
        throw CompileError("coordinate " + e.name +
                           " referenced outside any context on its grid");
      return a.constant(it->second->node(static_cast<std::size_t>(jt->second)));
    }
    const VarDecl* decl = spec.find_var(e.name);
    if (!decl) throw CompileError("unknown name " + e.name);
    if (decl->kind != VarDecl::Kind::Scalar)
      throw CompileError(e.name + " is a function and must be applied");
    return var_nodes.at(e.name)[0];
  }

  NodeId lower_binary(const TExpr& e, const Ctx& ctx) {
    if (e.op == '=')
      throw NonScalarEquation("equality is only allowed at the top of an EQ statement");
    if (e.op == 'p') {
      const TExpr& ex = *e.args[1];
      if (ex.kind != TExpr::Kind::Num || ex.num != std::floor(ex.num))
        throw CompileError("exponent must be an integer literal");
      return a.pow_int(lower(*e.args[0], ctx), static_cast<std::int64_t>(ex.num));
    }
    const NodeId l = lower(*e.args[0], ctx);
    const NodeId r = lower(*e.args[1], ctx);
    switch (e.op) {
      case '+': return a.add(l, r);
      case '-': return a.sub(l, r);
      case '*': return a.mul(l, r);
      case '/': return a.div(l, r);
    }
    throw CompileError("unsupported operator");
  }

  NodeId lower_apply(const TExpr& e, const Ctx& ctx) {
    const VarDecl* decl = spec.find_var(e.name);
    if (!decl) throw CompileError("unknown function " + e.name);
    if (decl->kind == VarDecl::Kind::GridFunction) {
      const std::string& g = decl->arg_grids[0];
      if (e.args.size() != 1 || e.args[0]->kind != TExpr::Kind::Name ||
          e.args[0]->name != g)
        throw IncompatibleGrid(e.name + " is a grid function over " + g +
                               " and must be applied as " + e.name + "(" + g + ")");
      auto jt = ctx.find(g);
      if (jt == ctx.end())
        throw IncompatibleGrid(e.name + "(" + g + ") referenced outside any context on " + g);
      return var_nodes.at(e.name)[static_cast<std::size_t>(jt->second)];
    }
    if (decl->kind == VarDecl::Kind::Polynomial) {
      std::vector<NodeId> inner;
      for (const auto& arg : e.args) inner.push_back(lower(*arg, ctx));
      return expand_composition(a, var_nodes.at(e.name), decl->poly_pow, inner);
    }
    throw CompileError(e.name + " is a scalar and cannot be applied");
  }

  NodeId lower_deriv(const TExpr& e, const Ctx& ctx) {
    if (auto an = try_analytic(e, spec)) return lower_analytic(*an, ctx);
    auto it = ctx.find(e.name);
    if (it == ctx.end())
      throw CompileError("derivative along " + e.name +
                         " outside any context on that grid");
    const Grid& g = grid(e.name);
    const auto N = static_cast<std::int64_t>(g.size()) - 1;
    const std::int64_t j = it->second;
    const TExpr& body = *e.args[0];
    auto at = [&](std::int64_t k) {
      if (k < 0 || k > N)
        throw StencilOutOfRange("derivative stencil leaves grid " + e.name);
      Ctx c = ctx;
      c[e.name] = k;
      return lower(body, c);
    };
    if (e.order == 1)
      return a.div(a.sub(at(j + 1), at(j)), a.constant(g.h));
    const NodeId num =
        a.sub(a.add(at(j + 1), at(j - 1)), a.mul(a.constant(2.0), at(j)));
    return a.div(num, a.constant(g.h * g.h));
  }

  NodeId lower_analytic(const AnalyticDeriv& an, const Ctx& ctx) {
    std::vector<NodeId> inner;
    for (const auto& arg : an.apply->args) inner.push_back(lower(*arg, ctx));
    const auto& coeffs = var_nodes.at(an.poly->name);
    std::vector<NodeId> terms;
    if (inner.size() == 1) {
      const int o = an.orders[0];
      for (std::int64_t k = 0; k <= an.poly->poly_pow; ++k) {
        const double c = falling(k, o);
        if (c == 0.0) continue;
        terms.push_back(a.mul(a.constant(c),
                              a.mul(coeffs[static_cast<std::size_t>(k)],
                                    a.pow_int(inner[0], k - o))));
      }
    } else {
      const auto mono = monomials_2d(an.poly->poly_pow);
      for (std::size_t m = 0; m < mono.size(); ++m) {
        const double c = falling(mono[m].first, an.orders[0]) *
                         falling(mono[m].second, an.orders[1]);
        if (c == 0.0) continue;
        terms.push_back(
            a.mul(a.constant(c),
                  a.mul(coeffs[m],
                        a.mul(a.pow_int(inner[0], mono[m].first - an.orders[0]),
                              a.pow_int(inner[1], mono[m].second - an.orders[1])))));
      }
    }
    return a.sum(terms);
  }

  NodeId lower_integral(const TExpr& e, const Ctx& ctx) {
    const Grid& g = grid(e.name);
    const TExpr& body = *e.args[0];
    // Derivative stencils inside the integrand shrink the quadrature window
    // (the integrand is undefined where its stencil leaves the grid).
    const Range r = walk(body, 0, e.name);
    if (r.lo > r.hi)
      throw CompileError("integral over " + e.name + ": integrand defined on no node");
    std::vector<NodeId> integrand;
    for (std::int64_t j = r.lo; j <= r.hi; ++j) {
      Ctx c = ctx;
      c[e.name] = j;
      integrand.push_back(lower(body, c));
    }
    return trapezoid(a, integrand, g, static_cast<std::size_t>(r.lo),
                     static_cast<std::size_t>(r.hi));
  }

  // --- objective pieces -----------------------------------------------------

  NodeId msd_expr(const std::string& var) {
    std::vector<const Measurement*> ms;
    for (const auto& m : binding.items)
      if (m.var == var && in_training.count(m.row)) ms.push_back(&m);
    if (ms.empty()) return a.constant(0.0);
    const auto& nodes = var_nodes.at(var);
    std::vector<NodeId> sq;
    sq.reserve(ms.size());
    for (const Measurement* m : ms) {
      std::vector<NodeId> parts;
      for (int j = 0; j < m->stencil_size; ++j)
        parts.push_back(a.mul(a.constant(m->weights[j]),
                              nodes[static_cast<std::size_t>(m->nodes[j])]));
      const NodeId pred = a.sum(parts);
      const NodeId res = a.sub(a.constant(m->z), pred);
      sq.push_back(a.mul(res, res));
    }
    return a.mul(a.constant(1.0 / static_cast<double>(ms.size())), a.sum(sq));
  }

  // Complexity of a grid function: the integral of the squared second
  // difference, taken over the interior nodes where the stencil exists.
  NodeId gridfn_complexity(const VarDecl& decl) {
    const Grid& g = grid(decl.arg_grids[0]);
    const auto& nodes = var_nodes.at(decl.name);
    const std::size_t N = g.size() - 1;
    if (N < 2)
      throw CompileError("grid " + g.name + " too small for a curvature penalty");
    std::vector<NodeId> integrand;
    for (std::size_t j = 1; j <= N - 1; ++j) {
      const NodeId d2 = fd_second(a, nodes, g, j);
      integrand.push_back(a.mul(d2, d2));
    }
    return trapezoid(a, integrand, g, 1, N - 1);
  }

  // Precomputed Gram matrix of derivative monomials under trapezoid
  // quadrature: A[m][m'] = sum_nodes w * D_m * D_m', so the lowered penalty
  // is the quadratic form p^T A p, numerically equal to the literal
  // trapezoid-of-squares expansion but with the constants folded.
  std::vector<std::vector<double>> gram_1d(const VarDecl& decl) {
    const Grid& g = grid(decl.arg_grids[0]);
    const auto w = trapezoid_weights(g);
    const auto n = static_cast<std::size_t>(decl.poly_pow + 1);
    std::vector<std::vector<double>> A(n, std::vector<double>(n, 0.0));
    std::vector<double> D(n);
    for (std::size_t j = 0; j < g.size(); ++j) {
      const double x = g.node(j);
      for (std::size_t k = 0; k < n; ++k)
        D[k] = falling(static_cast<std::int64_t>(k), 2) *
               powd(x, static_cast<std::int64_t>(k) - 2);
      for (std::size_t k = 0; k < n; ++k)
        for (std::size_t l = k; l < n; ++l) A[k][l] += w[j] * D[k] * D[l];
    }
    for (std::size_t k = 0; k < n; ++k)
      for (std::size_t l = 0; l < k; ++l) A[k][l] = A[l][k];
    return A;
  }

  std::vector<std::vector<double>> gram_2d(const VarDecl& decl, int ox, int ov) {
    const Grid& gx = grid(decl.arg_grids[0]);
    const Grid& gv = grid(decl.arg_grids[1]);
    const auto wx = trapezoid_weights(gx);
    const auto wv = trapezoid_weights(gv);
    const auto mono = monomials_2d(decl.poly_pow);
    const std::size_t n = mono.size();
    std::vector<std::vector<double>> A(n, std::vector<double>(n, 0.0));
    std::vector<double> D(n);
    for (std::size_t j = 0; j < gx.size(); ++j)
      for (std::size_t l = 0; l < gv.size(); ++l) {
        const double x = gx.node(j), v = gv.node(l);
        const double w = wx[j] * wv[l];
        for (std::size_t m = 0; m < n; ++m)
          D[m] = falling(mono[m].first, ox) * falling(mono[m].second, ov) *
                 powd(x, mono[m].first - ox) * powd(v, mono[m].second - ov);
        for (std::size_t m = 0; m < n; ++m)
          for (std::size_t m2 = m; m2 < n; ++m2) A[m][m2] += w * D[m] * D[m2];
      }
    for (std::size_t m = 0; m < n; ++m)
      for (std::size_t m2 = 0; m2 < m; ++m2) A[m][m2] = A[m2][m];
    return A;
  }

  NodeId quad_form(const std::vector<NodeId>& p,
                   const std::vector<std::vector<double>>& A) {
    std::vector<NodeId> terms;
    for (std::size_t k = 0; k < p.size(); ++k)
      for (std::size_t l = k; l < p.size(); ++l) {
        const double c = (l == k ? 1.0 : 2.0) * A[k][l];
        if (c == 0.0) continue;
        terms.push_back(a.mul(a.constant(c), a.mul(p[k], p[l])));
      }
    return a.sum(terms);
  }

  NodeId complexity_expr(const std::string& var,
                         std::span<const std::int64_t> penals) {
    const VarDecl* decl = spec.find_var(var);
    if (!decl) throw CompileError("unknown name " + var);
    auto alpha = [&](std::size_t i) {
      return a.param(static_cast<std::int32_t>(penals[i]));
    };
    if (decl->kind == VarDecl::Kind::GridFunction) {
      if (penals.size() != 1)
        throw CompileError(var + ".Complexity takes one penalty weight");
      return a.mul(alpha(0), gridfn_complexity(*decl));
    }
    if (decl->kind != VarDecl::Kind::Polynomial)
      throw CompileError(var + ": complexity needs a grid function or polynomial");
    if (decl->arg_grids.size() == 1) {
      if (penals.size() != 1)
        throw CompileError(var + ".Complexity takes one penalty weight");
      return a.mul(alpha(0), quad_form(var_nodes.at(var), gram_1d(*decl)));
    }
    if (penals.size() != 2)
      throw CompileError(var + ".Complexity takes two penalty weights");
    // Two-variable curvature penalty: ax^2 (f_xx)^2 + 2 ax av (f_xv)^2
    // + av^2 (f_vv)^2, integrated over the declared rectangle.
    const auto& p = var_nodes.at(var);
    const NodeId ax = alpha(0), av = alpha(1);
    const NodeId txx = a.mul(a.mul(ax, ax), quad_form(p, gram_2d(*decl, 2, 0)));
    const NodeId txv = a.mul(a.mul(a.constant(2.0), a.mul(ax, av)),
                             quad_form(p, gram_2d(*decl, 1, 1)));
    const NodeId tvv = a.mul(a.mul(av, av), quad_form(p, gram_2d(*decl, 0, 2)));
    return a.add(a.add(txx, txv), tvv);
  }

  // --- constraints ----------------------------------------------------------

  void lower_equation(const Equation& eq, std::vector<NodeId>& out) {
    std::unordered_set<std::string> bound, used;
    free_grids(*eq.lhs, bound, used);
    free_grids(*eq.rhs, bound, used);
    if (used.size() > 1) {
      std::string names;
      for (const auto& n : used) names += (names.empty() ? "" : ", ") + n;
      throw IncompatibleGrid("equation ranges over several grids: " + names);
    }
    if (used.empty()) {
      out.push_back(a.sub(lower(*eq.lhs, {}), lower(*eq.rhs, {})));
      return;
    }
    const std::string& gname = *used.begin();
    const Range r = intersect(walk(*eq.lhs, 0, gname), walk(*eq.rhs, 0, gname));
    if (r.lo > r.hi)
      throw CompileError("equation has no grid node where every stencil fits");
    for (std::int64_t i = r.lo; i <= r.hi; ++i) {
      Ctx ctx{{gname, i}};
      out.push_back(a.sub(lower(*eq.lhs, ctx), lower(*eq.rhs, ctx)));
    }
  }

  NodeId lower_objective() {
    std::vector<NodeId> terms;
    for (const auto& t : spec.objective.terms) {
      switch (t.kind) {
        case ObjectiveTerm::Kind::Msd:
          terms.push_back(msd_expr(t.var));
          break;
        case ObjectiveTerm::Kind::Complexity:
          terms.push_back(complexity_expr(t.var, t.penals));
          break;
        case ObjectiveTerm::Kind::Explicit:
          terms.push_back(lower(*t.expr, {}));
          break;
      }
    }
    return a.sum(terms);
  }
};

}  // namespace

ModelCompiler::ModelCompiler(const TaskSpec& spec, std::vector<Grid> grids,
                             MeasurementBinding binding)
    : spec_(spec), grids_(std::move(grids)), binding_(std::move(binding)) {
  for (const auto& d : spec_.grids) grid(d.name);  // every declared grid present
}

const Grid& ModelCompiler::grid(const std::string& name) const {
  for (const auto& g : grids_)
    if (g.name == name) return g;
  throw CompileError("no grid named " + name);
}

NlpProblem ModelCompiler::compile(std::span<const std::size_t> training_rows) const {
  NlpProblem p;
  p.arena = std::make_shared<Arena>();
  Lowering lw(spec_, grids_, binding_, training_rows, *p.arena);
  lw.register_vars();
  for (const auto& eq : spec_.equations) lw.lower_equation(eq, p.constraints);
  p.objective = lw.lower_objective();
  p.n_alpha = static_cast<std::int32_t>(spec_.objective.n_alpha);
  p.training_rows.assign(training_rows.begin(), training_rows.end());
  p.layout = std::move(lw.layout);
  return p;
}

std::vector<double> ModelCompiler::initial_point(const NlpProblem& p) const {
  std::vector<double> x0(p.n_vars(), 0.0);
  std::unordered_set<std::size_t> rows(p.training_rows.begin(),
                                       p.training_rows.end());

  // Measured grid functions: piecewise-linear interpolant of the training
  // measurements, held constant beyond the first/last one.
  for (const auto& seg : p.layout) {
    if (seg.kind != VarSegment::Kind::GridFunction) continue;
    std::vector<std::pair<double, double>> pts;
    for (const auto& m : binding_.items)
      if (m.var == seg.name && rows.count(m.row)) pts.emplace_back(m.coord, m.z);
    if (pts.empty()) continue;
    std::sort(pts.begin(), pts.end());
    const Grid& g = grid(seg.grids[0]);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double t = g.node(i);
      double y;
      if (t <= pts.front().first) {
        y = pts.front().second;
      } else if (t >= pts.back().first) {
        y = pts.back().second;
      } else {
        std::size_t k = 1;
        while (pts[k].first < t) ++k;
        const auto& [t0, z0] = pts[k - 1];
        const auto& [t1, z1] = pts[k];
        y = t1 == t0 ? z1 : z0 + (z1 - z0) * (t - t0) / (t1 - t0);
      }
      x0[seg.offset + i] = y;
    }
  }

  // Grid functions defined by v == d/dG(u): seed v with the finite
  // difference of u's seed. Repeated passes resolve chains.
  auto defined_pair = [&](const TExpr& l, const TExpr& r)
      -> std::optional<std::pair<std::string, std::string>> {
    if (l.kind != TExpr::Kind::Apply || r.kind != TExpr::Kind::Deriv ||
        r.order != 1)
      return std::nullopt;
    const TExpr& body = *r.args[0];
    if (body.kind != TExpr::Kind::Apply) return std::nullopt;
    const VarDecl* lv = spec_.find_var(l.name);
    const VarDecl* rv = spec_.find_var(body.name);
    if (!lv || !rv || lv->kind != VarDecl::Kind::GridFunction ||
        rv->kind != VarDecl::Kind::GridFunction)
      return std::nullopt;
    if (lv->arg_grids[0] != r.name || rv->arg_grids[0] != r.name)
      return std::nullopt;
    return std::make_pair(l.name, body.name);
  };
  for (int pass = 0; pass < 4; ++pass) {
    for (const auto& eq : spec_.equations) {
      auto pr = defined_pair(*eq.lhs, *eq.rhs);
      if (!pr) {
        pr = defined_pair(*eq.rhs, *eq.lhs);
        if (!pr) continue;
      }
      const VarSegment* dst = p.segment(pr->first);
      const VarSegment* src = p.segment(pr->second);
      if (!dst || !src || dst->count != src->count || dst->count < 2) continue;
      const Grid& g = grid(dst->grids[0]);
      const std::size_t N = dst->count - 1;
      for (std::size_t i = 0; i < N; ++i)
        x0[dst->offset + i] =
            (x0[src->offset + i + 1] - x0[src->offset + i]) / g.h;
      x0[dst->offset + N] =
          (x0[src->offset + N] - x0[src->offset + N - 1]) / g.h;
    }
  }
  return x0;
}

}  // namespace svf
