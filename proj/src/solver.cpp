#include "svf/solver.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <array>
#include <deque>
#include <limits>
#include <optional>
#include <random>

namespace svf {

bool operator==(const SolveResult& a, const SolveResult& b) {
  return a.point == b.point && a.multipliers == b.multipliers &&
         a.objective == b.objective && a.max_violation == b.max_violation &&
         a.status == b.status && a.outer_iters == b.outer_iters &&
         a.inner_iters == b.inner_iters;
}

namespace {

double sup_norm(std::span<const double> v) {
  double m = 0;
  for (const double x : v) m = std::max(m, std::abs(x));
  return m;
}

// Augmented Lagrangian merit for fixed (lambda, rho):
//   L(x) = f(x) + sum_i lambda_i c_i(x) + rho/2 sum_i c_i(x)^2.
// One forward sweep yields f and every c_i; one reverse sweep with seeds
// {f: 1, c_i: lambda_i + rho c_i} yields the full merit gradient.
struct Merit {
  const NlpProblem& p;
  std::span<const double> alpha;
  Evaluator ev;
  std::vector<double> c;
  std::vector<std::pair<NodeId, double>> seeds;

  explicit Merit(const NlpProblem& problem, std::span<const double> a)
      : p(problem), alpha(a), ev(*problem.arena), c(problem.constraints.size()) {}

  // Returns nullopt on non-finite evaluation.
  std::optional<double> value(std::span<const double> x,
                              std::span<const double> lambda, double rho,
                              double* obj_out = nullptr) {
    if (!ev.forward(x, alpha)) return std::nullopt;
    double L = ev.value(p.objective);
    if (obj_out) *obj_out = L;
    for (std::size_t i = 0; i < c.size(); ++i) {
      c[i] = ev.value(p.constraints[i]);
      L += lambda[i] * c[i] + 0.5 * rho * c[i] * c[i];
    }
    return std::isfinite(L) ? std::optional<double>(L) : std::nullopt;
  }

  // Gradient at the point of the last value() call.
  bool gradient(std::span<const double> lambda, double rho,
                std::span<double> g) {
    seeds.clear();
    seeds.emplace_back(p.objective, 1.0);
    for (std::size_t i = 0; i < c.size(); ++i)
      seeds.emplace_back(p.constraints[i], lambda[i] + rho * c[i]);
    return ev.reverse(seeds, g);
  }

  // Variables appearing in constraint i, cached across calls.
  const std::vector<std::int32_t>& support(std::size_t i) {
    if (supp_.empty()) {
      supp_.resize(p.constraints.size());
      for (std::size_t k = 0; k < supp_.size(); ++k)
        supp_[k] = free_vars(*p.arena, p.constraints[k]);
    }
    return supp_[i];
  }

 private:
  std::vector<std::vector<std::int32_t>> supp_;
};

// ---------------------------------------------------------------------------
// Structural coloring for Hessian probing.
//
// Two variables interact when they appear together in one additive piece of
// the objective or in one constraint (every constraint enters the merit
// squared, coupling all its variables pairwise). Columns of the Hessian can
// be probed together whenever no row holds nonzeros from both, i.e. their
// interaction neighborhoods are disjoint.

struct BitRows {
  std::size_t n = 0, words = 0;
  std::vector<std::uint64_t> bits;

  void init(std::size_t vars) {
    n = vars;
    words = (vars + 63) / 64;
    bits.assign(n * words, 0);
  }
  void set(std::size_t row, std::size_t col) {
    bits[row * words + col / 64] |= std::uint64_t{1} << (col % 64);
  }
  bool intersects(std::size_t r1, std::size_t r2) const {
    const std::uint64_t* a = &bits[r1 * words];
    const std::uint64_t* b = &bits[r2 * words];
    for (std::size_t w = 0; w < words; ++w)
      if (a[w] & b[w]) return true;
    return false;
  }
  void merge_into(std::size_t row, std::vector<std::uint64_t>& acc) const {
    const std::uint64_t* a = &bits[row * words];
    for (std::size_t w = 0; w < words; ++w) acc[w] |= a[w];
  }
  bool intersects_mask(std::size_t row,
                       const std::vector<std::uint64_t>& acc) const {
    const std::uint64_t* a = &bits[row * words];
    for (std::size_t w = 0; w < words; ++w)
      if (a[w] & acc[w]) return true;
    return false;
  }
  template <typename Fn>
  void for_each_set(std::size_t row, Fn fn) const {
    const std::uint64_t* a = &bits[row * words];
    for (std::size_t w = 0; w < words; ++w) {
      std::uint64_t word = a[w];
      while (word) {
        const int bit = std::countr_zero(word);
        fn(w * 64 + static_cast<std::size_t>(bit));
        word &= word - 1;
      }
    }
  }
};

// Additive pieces of an expression: descend through sums, differences and
// scalings; any other node closes a piece whose variables all interact.
void collect_cliques(const Arena& a, NodeId root,
                     std::vector<std::vector<std::int32_t>>& out) {
  const Node& n = a.node(root);
  switch (n.op) {
    case Op::Add:
    case Op::Sub:
      collect_cliques(a, n.a, out);
      collect_cliques(a, n.b, out);
      return;
    case Op::Neg:
      collect_cliques(a, n.a, out);
      return;
    case Op::Sum:
      for (const NodeId c : a.sum_children(n)) collect_cliques(a, c, out);
      return;
    case Op::Mul: {
      const auto lhs = free_vars(a, n.a);
      if (lhs.empty()) {
        collect_cliques(a, n.b, out);
        return;
      }
      const auto rhs = free_vars(a, n.b);
      if (rhs.empty()) {
        collect_cliques(a, n.a, out);
        return;
      }
      break;
    }
    default:
      break;
  }
  auto vars = free_vars(a, root);
  if (!vars.empty()) out.push_back(std::move(vars));
}

// Column groups whose interaction neighborhoods are pairwise disjoint, so a
// row of the Hessian can see at most one probed column per group.
struct Coloring {
  BitRows adj;
  std::vector<std::vector<std::int32_t>> classes;
};

Coloring color_problem(const NlpProblem& p) {
  const std::size_t n = p.n_vars();
  std::vector<std::vector<std::int32_t>> cliques;
  collect_cliques(*p.arena, p.objective, cliques);
  for (const NodeId c : p.constraints) {
    auto vars = free_vars(*p.arena, c);
    if (!vars.empty()) cliques.push_back(std::move(vars));
  }

  Coloring col;
  BitRows& adj = col.adj;
  adj.init(n);
  for (std::size_t i = 0; i < n; ++i) adj.set(i, i);
  for (const auto& clique : cliques)
    for (const std::int32_t i : clique)
      for (const std::int32_t j : clique) {
        adj.set(static_cast<std::size_t>(i), static_cast<std::size_t>(j));
      }

  std::vector<std::vector<std::uint64_t>> class_mask;
  for (std::size_t v = 0; v < n; ++v) {
    std::size_t c = 0;
    for (; c < col.classes.size(); ++c)
      if (!adj.intersects_mask(v, class_mask[c])) break;
    if (c == col.classes.size()) {
      col.classes.emplace_back();
      class_mask.emplace_back(adj.words, 0);
    }
    col.classes[c].push_back(static_cast<std::int32_t>(v));
    adj.merge_into(v, class_mask[c]);
  }
  return col;
}

// Gauss-Newton model of the merit Hessian:
//
//   H = probed Hessian of the objective  +  rho * J^T J
//
// where J is the exact constraint Jacobian (one reverse sweep per
// constraint). Dropping the constraint-curvature term sum_i (lambda_i + rho
// c_i) hess(c_i) keeps H positive semidefinite whenever the objective is
// convex, so the model is factorizable without indefiniteness repairs and its
// step lengths stay right in every curvature regime, from the stiff
// discretization block to nearly flat coefficient directions. The L-BFGS
// pairs collected on top of this seed recover the dropped curvature near the
// solution.
struct Preconditioner {
  Eigen::LLT<Eigen::MatrixXd> llt;
  Eigen::MatrixXd vecs;      // eigenvalue-modified fallback when the
  Eigen::VectorXd inv_eigs;  // objective itself is nonconvex
  bool use_eigs = false;
  bool ready = false;

  bool probe(Merit& merit, const Coloring& col, std::span<const double> x,
             std::span<const double> lambda, double rho) {
    const std::size_t n = x.size();
    const auto ni = static_cast<Eigen::Index>(n);
    Eigen::MatrixXd H = Eigen::MatrixXd::Zero(ni, ni);

    // Probe the objective Hessian by forward differences of the
    // objective-only gradient (lambda = 0, rho = 0) over the column groups.
    {
      const std::vector<double> zero_lambda(merit.c.size(), 0.0);
      std::vector<double> gobj(n);
      if (!merit.value(x, zero_lambda, 0.0) ||
          !merit.gradient(zero_lambda, 0.0, gobj)) {
        ready = false;
        return false;
      }
      std::vector<double> xp(x.begin(), x.end());
      std::vector<double> gp(n);
      std::vector<double> step(n, 0.0);
      std::vector<std::int32_t> owner(n);
      for (const auto& cls : col.classes) {
        owner.assign(n, -1);
        for (const std::int32_t i : cls) {
          const auto ui = static_cast<std::size_t>(i);
          step[ui] = 1e-6 * std::max(1.0, std::abs(x[ui]));
          xp[ui] = x[ui] + step[ui];
          col.adj.for_each_set(ui, [&](std::size_t j) { owner[j] = i; });
        }
        const bool ok = merit.value(xp, zero_lambda, 0.0) &&
                        merit.gradient(zero_lambda, 0.0, gp);
        for (const std::int32_t i : cls)
          xp[static_cast<std::size_t>(i)] = x[static_cast<std::size_t>(i)];
        if (!ok) {
          ready = false;
          return false;
        }
        // Each row can interact with at most one probed column of the class;
        // rows owned by none hold structural zeros.
        for (std::size_t j = 0; j < n; ++j) {
          if (owner[j] < 0) continue;
          const auto ui = static_cast<std::size_t>(owner[j]);
          H(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(ui)) =
              (gp[j] - gobj[j]) / step[ui];
        }
      }
      // Symmetrize (finite differencing is not exactly symmetric).
      H = 0.5 * (H + H.transpose()).eval();
    }

    // Exact Jacobian rows, one reverse sweep per constraint, accumulated as
    // rho * J^T J over each constraint's support.
    const std::size_t m = merit.c.size();
    if (m && rho > 0.0) {
      if (!merit.value(x, lambda, rho)) {
        ready = false;
        return false;
      }
      std::vector<double> row(n);
      std::array<std::pair<NodeId, double>, 1> seed;
      for (std::size_t i = 0; i < m; ++i) {
        seed[0] = {merit.p.constraints[i], 1.0};
        if (!merit.ev.reverse(seed, row)) {
          ready = false;
          return false;
        }
        const auto& supp = merit.support(i);
        for (const std::int32_t a : supp) {
          const double ra = row[static_cast<std::size_t>(a)];
          if (ra == 0.0) continue;
          for (const std::int32_t b : supp) {
            const double rb = row[static_cast<std::size_t>(b)];
            if (rb == 0.0) continue;
            H(a, b) += rho * ra * rb;
          }
        }
      }
    }

    double diag_scale = 0.0;
    for (Eigen::Index i = 0; i < ni; ++i)
      diag_scale = std::max(diag_scale, std::abs(H(i, i)));
    if (diag_scale == 0.0) diag_scale = 1.0;

    Eigen::MatrixXd Hs = H;
    Hs.diagonal().array() += 1e-12 * diag_scale;
    llt.compute(Hs);
    if (llt.info() == Eigen::Success) {
      use_eigs = false;
      ready = true;
      return true;
    }

    // Nonconvex objective: fall back to an eigenvalue modification that
    // flips negative curvature and floors near-zero curvature.
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(H);
    if (es.info() != Eigen::Success) {
      ready = false;
      return false;
    }
    const double radius = std::max(es.eigenvalues().cwiseAbs().maxCoeff(), 1.0);
    const double floor = 1e-8 * radius;
    vecs = es.eigenvectors();
    inv_eigs = es.eigenvalues().unaryExpr(
        [floor](double e) { return 1.0 / std::max(std::abs(e), floor); });
    use_eigs = true;
    ready = true;
    return true;
  }

  void apply_inverse(const std::vector<double>& v, std::vector<double>& out) const {
    Eigen::Map<const Eigen::VectorXd> mv(v.data(),
                                         static_cast<Eigen::Index>(v.size()));
    if (use_eigs) {
      Eigen::VectorXd r =
          vecs * (inv_eigs.asDiagonal() * (vecs.transpose() * mv));
      out.assign(r.data(), r.data() + r.size());
    } else {
      Eigen::VectorXd r = llt.solve(mv);
      out.assign(r.data(), r.data() + r.size());
    }
  }
};

struct LbfgsHistory {
  struct Pair {
    std::vector<double> s, y;
    double rho = 0;
  };
  std::deque<Pair> pairs;
  int capacity = 10;

  void push(std::vector<double> s, std::vector<double> y) {
    double sy = 0, ss = 0, yy = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
      sy += s[i] * y[i];
      ss += s[i] * s[i];
      yy += y[i] * y[i];
    }
    if (!(sy > 1e-12 * std::sqrt(ss * yy))) return;  // curvature guard
    pairs.push_back({std::move(s), std::move(y), 1.0 / sy});
    while (pairs.size() > static_cast<std::size_t>(capacity)) pairs.pop_front();
  }

  // Two-loop recursion; `h0` maps the seed direction (preconditioner solve
  // or identity scaling).
  template <typename H0>
  void direction(const std::vector<double>& g, const H0& h0,
                 std::vector<double>& d) const {
    d.assign(g.begin(), g.end());
    std::vector<double> alpha_i(pairs.size());
    for (std::size_t k = pairs.size(); k-- > 0;) {
      const auto& pr = pairs[k];
      double sd = 0;
      for (std::size_t i = 0; i < d.size(); ++i) sd += pr.s[i] * d[i];
      alpha_i[k] = pr.rho * sd;
      for (std::size_t i = 0; i < d.size(); ++i) d[i] -= alpha_i[k] * pr.y[i];
    }
    h0(d);
    for (std::size_t k = 0; k < pairs.size(); ++k) {
      const auto& pr = pairs[k];
      double yd = 0;
      for (std::size_t i = 0; i < d.size(); ++i) yd += pr.y[i] * d[i];
      const double beta = pr.rho * yd;
      for (std::size_t i = 0; i < d.size(); ++i)
        d[i] += (alpha_i[k] - beta) * pr.s[i];
    }
    for (auto& v : d) v = -v;
  }
};

struct InnerResult {
  double merit = 0, gnorm = 0;
  int iters = 0;
  bool finite = true;
};

// Minimizes the merit at fixed (lambda, rho) from x in place, to gradient
// tolerance eps_g (the caller tightens this across outer iterations).
InnerResult minimize_merit(Merit& merit, const Coloring& coloring,
                           std::vector<double>& x,
                           std::span<const double> lambda, double rho,
                           double eps_g, const SolveSettings& st,
                           SolveTrace* trace) {
  const std::size_t n = x.size();
  InnerResult res;

  auto Lx = merit.value(x, lambda, rho);
  if (!Lx) {
    res.finite = false;
    return res;
  }
  std::vector<double> g(n), gnew(n), d(n), xnew(n);
  if (!merit.gradient(lambda, rho, g)) {
    res.finite = false;
    return res;
  }

  Preconditioner pre;
  pre.probe(merit, coloring, x, lambda, rho);

  LbfgsHistory hist;
  hist.capacity = st.lbfgs_memory;

  double L = *Lx;
  res.merit = L;
  res.gnorm = sup_norm(g);

  // The probed Hessian is only a local model; on strongly nonlinear merits it
  // goes stale as x moves. Refresh it when the line search starts struggling
  // (and periodically regardless), discarding curvature pairs collected under
  // the old model.
  int since_probe = 0;
  bool want_reprobe = false;
  auto reprobe = [&] {
    if (pre.probe(merit, coloring, x, lambda, rho)) hist.pairs.clear();
    since_probe = 0;
    want_reprobe = false;
  };

  for (int it = 0; it < st.max_inner; ++it) {
    res.gnorm = sup_norm(g);
    if (trace) {
      trace->merit.push_back(L);
      trace->grad_norm.push_back(res.gnorm);
    }
    if (res.gnorm <= eps_g) break;
    if ((want_reprobe && since_probe >= 5) || since_probe >= 40) reprobe();

    auto h0 = [&](std::vector<double>& v) {
      if (pre.ready) {
        std::vector<double> out;
        pre.apply_inverse(v, out);
        v = std::move(out);
      }
    };
    hist.direction(g, h0, d);

    double gd = 0;
    for (std::size_t i = 0; i < n; ++i) gd += g[i] * d[i];
    if (!(gd < 0)) {  // stale curvature: fall back to steepest descent
      for (std::size_t i = 0; i < n; ++i) d[i] = -g[i];
      gd = -sup_norm(g) * sup_norm(g);
      want_reprobe = true;
    }

    double t = 1.0;
    bool accepted = false;
    double Lnew = L;
    for (int ls = 0; ls < 60; ++ls) {
      for (std::size_t i = 0; i < n; ++i) xnew[i] = x[i] + t * d[i];
      const auto cand = merit.value(xnew, lambda, rho);
      if (cand && *cand <= L + 1e-4 * t * gd) {
        Lnew = *cand;
        accepted = true;
        break;
      }
      t *= 0.5;
    }
    ++res.iters;
    ++since_probe;
    if (t < 1.0 / 16) want_reprobe = true;
    if (!accepted) {
      // A fresh model may still yield a descent direction; give up only if
      // the search fails immediately after probing.
      if (since_probe > 1) {
        reprobe();
        continue;
      }
      break;
    }

    if (!merit.gradient(lambda, rho, gnew)) break;
    std::vector<double> s(n), y(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = xnew[i] - x[i];
      y[i] = gnew[i] - g[i];
    }
    hist.push(std::move(s), std::move(y));

    const double step_size = t * sup_norm(d);
    x.swap(xnew);
    g.swap(gnew);
    L = Lnew;
    res.merit = L;
    if (step_size <= 1e-14 * std::max(1.0, sup_norm(x))) break;
  }
  res.gnorm = sup_norm(g);
  return res;
}

SolveResult solve_single(const NlpProblem& p, std::span<const double> alpha,
                         std::span<const double> init, const SolveSettings& st,
                         SolveTrace* trace) {
  const std::size_t n = p.n_vars();
  const std::size_t m = p.constraints.size();
  SolveResult out;
  out.point.assign(init.begin(), init.end());
  out.multipliers.assign(m, 0.0);

  Merit merit(p, alpha);
  const Coloring coloring = color_problem(p);

  std::vector<double> x(init.begin(), init.end());
  std::vector<double> lambda(m, 0.0);
  double rho = m ? st.rho0 : 0.0;

  {
    double f0 = 0;
    const auto L0 = merit.value(x, lambda, rho, &f0);
    if (!L0) {
      out.status = SolveStatus::Degenerate;
      return out;
    }
    out.objective = f0;
    out.max_violation = sup_norm(merit.c);
  }

  // Early subproblems are solved loosely (their multipliers are still wrong);
  // the tolerance tightens toward eps_g as the multipliers settle. Scale the
  // starting tolerance off the initial gradient so it means the same thing
  // for small and large problems.
  double inner_tol = st.eps_g;
  if (m) {
    std::vector<double> g0(n);
    if (merit.gradient(lambda, rho, g0))
      inner_tol = std::max(st.eps_g, 1e-4 * sup_norm(g0));
  }

  double prev_violation = std::numeric_limits<double>::infinity();
  const int outers = m ? st.max_outer : 1;
  for (int outer = 0; outer < outers; ++outer) {
    ++out.outer_iters;
    const InnerResult inner =
        minimize_merit(merit, coloring, x, lambda, rho, inner_tol, st, trace);
    out.inner_iters += inner.iters;
    if (!inner.finite) {
      out.status = SolveStatus::Degenerate;
      return out;
    }

    double f = 0;
    if (!merit.value(x, lambda, rho, &f)) {
      out.status = SolveStatus::Degenerate;
      return out;
    }
    const double violation = sup_norm(merit.c);
    out.point = x;
    out.objective = f;
    out.max_violation = violation;

    if (violation <= st.eps_c && inner.gnorm <= st.eps_g) {
      // First-order multiplier update keeps stationarity of the merit equal
      // to stationarity of the Lagrangian at the updated multipliers.
      for (std::size_t i = 0; i < m; ++i) lambda[i] += rho * merit.c[i];
      out.multipliers = lambda;
      out.status = SolveStatus::Converged;
      return out;
    }

    if (inner.gnorm <= inner_tol) {
      // Subproblem solved to its target: judge feasibility progress.
      if (violation <= std::max(st.eps_c, 0.25 * prev_violation)) {
        for (std::size_t i = 0; i < m; ++i) lambda[i] += rho * merit.c[i];
        out.multipliers = lambda;
      } else {
        // Feasibility is stalling; convexify the merit instead of trusting
        // multiplier estimates taken at an insufficiently feasible point.
        rho *= st.rho_growth;
      }
      prev_violation = std::min(prev_violation, violation);
      inner_tol = std::max(st.eps_g, 0.1 * inner_tol);
    } else if (violation > st.eps_c) {
      // Inner ran out of budget while still infeasible: a larger penalty
      // makes the subproblem more convex (the Gauss-Newton term dominates).
      // Multipliers stay put; estimates at non-stationary points are noise.
      rho *= st.rho_growth;
    }
  }
  out.status = SolveStatus::MaxIter;
  return out;
}

}  // namespace

SolveResult solve(const NlpProblem& p, std::span<const double> alpha,
                  std::span<const double> init, const SolveSettings& st,
                  SolveTrace* trace) {
  const auto t0 = std::chrono::steady_clock::now();
  if (init.size() != p.n_vars())
    throw Error("solve: initial point has wrong dimension");
  for (const double v : init)
    if (!std::isfinite(v)) throw Error("solve: non-finite initial point");

  SolveResult best = solve_single(p, alpha, init, st, trace);
  if (st.restarts > 0) {
    std::mt19937_64 rng(st.seed);
    std::uniform_real_distribution<double> u(-st.jitter, st.jitter);
    std::vector<double> start(init.begin(), init.end());
    for (int r = 0; r < st.restarts; ++r) {
      for (std::size_t i = 0; i < start.size(); ++i)
        start[i] = init[i] + u(rng) * std::max(1.0, std::abs(init[i]));
      const SolveResult cand = solve_single(p, alpha, start, st, nullptr);
      const bool cand_feasible = cand.max_violation <= st.eps_c;
      const bool best_feasible = best.max_violation <= st.eps_c;
      const bool better =
          cand.status != SolveStatus::Degenerate &&
          ((cand_feasible && !best_feasible) ||
           (cand_feasible == best_feasible &&
            (cand_feasible ? cand.objective < best.objective
                           : cand.max_violation < best.max_violation)));
      if (better) best = cand;
    }
  }
  best.wall_time =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
  return best;
}

std::pair<double, double> kkt_residual(const NlpProblem& p,
                                       std::span<const double> alpha,
                                       std::span<const double> point,
                                       std::span<const double> multipliers) {
  if (point.size() != p.n_vars() || multipliers.size() != p.constraints.size())
    throw Error("kkt_residual: dimension mismatch");
  Evaluator ev(*p.arena);
  if (!ev.forward(point, alpha))
    throw NonFiniteResult("kkt_residual: non-finite evaluation");
  double feas = 0;
  std::vector<std::pair<NodeId, double>> seeds;
  seeds.emplace_back(p.objective, 1.0);
  for (std::size_t i = 0; i < p.constraints.size(); ++i) {
    feas = std::max(feas, std::abs(ev.value(p.constraints[i])));
    seeds.emplace_back(p.constraints[i], multipliers[i]);
  }
  std::vector<double> g(p.n_vars());
  if (!ev.reverse(seeds, g))
    throw NonFiniteResult("kkt_residual: non-finite gradient");
  return {sup_norm(g), feas};
}

std::vector<SolveResult> warm_start_chain(std::span<const NlpProblem> problems,
                                          std::span<const double> alpha,
                                          std::span<const double> init,
                                          const SolveSettings& st) {
  std::vector<SolveResult> out;
  std::vector<double> seed(init.begin(), init.end());
  for (const auto& p : problems) {
    SolveResult r;
    try {
      r = solve(p, alpha, seed, st);
    } catch (const Error&) {
      r.status = SolveStatus::Degenerate;
      r.point = seed;
    }
    if (r.status != SolveStatus::Degenerate && r.point.size() == seed.size())
      seed = r.point;
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace svf
