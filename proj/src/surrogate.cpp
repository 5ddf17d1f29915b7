#include "svf/surrogate.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <utility>

namespace svf {

namespace {

// Flattened index of the quadratic coefficient (i, j), i <= j.
std::size_t quad_index(std::size_t n, std::size_t i, std::size_t j) {
  return i * n - i * (i - 1) / 2 + (j - i);
}

// Symmetric matrix view of the quadratic block: alpha^T Q alpha reproduces
// sum_{i<=j} pi_ij alpha_i alpha_j.
Eigen::MatrixXd quad_matrix(std::span<const double> pi, std::size_t n) {
  Eigen::MatrixXd Q(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i; j < n; ++j) {
      const double v = pi[quad_index(n, i, j)];
      if (i == j) {
        Q(i, i) = v;
      } else {
        Q(i, j) = Q(j, i) = 0.5 * v;
      }
    }
  return Q;
}

std::size_t infer_n(std::span<const double> pi) {
  // |pi| = n(n+3)/2 + 1.
  std::size_t n = 0;
  while (surrogate_coeff_count(static_cast<std::int32_t>(n)) < pi.size()) ++n;
  if (surrogate_coeff_count(static_cast<std::int32_t>(n)) != pi.size())
    throw Error("surrogate: coefficient vector has invalid length " +
                std::to_string(pi.size()));
  return n;
}

double weight_of(const SurrogatePoint& pt, std::span<const double> center) {
  double d2 = 0;
  for (std::size_t i = 0; i < center.size(); ++i) {
    const double d = pt.alpha[i] - center[i];
    d2 += d * d;
  }
  double w = std::exp(-std::sqrt(d2));
  if (!pt.reliable) w *= 1e-3;
  return w;
}

}  // namespace

std::size_t surrogate_coeff_count(std::int32_t n_alpha) {
  const auto n = static_cast<std::size_t>(n_alpha);
  return n * (n + 3) / 2 + 1;
}

double surrogate_value(std::span<const double> pi,
                       std::span<const double> alpha) {
  const std::size_t n = infer_n(pi);
  if (alpha.size() != n)
    throw Error("surrogate: alpha length " + std::to_string(alpha.size()) +
                " does not match coefficient count");
  double v = pi[pi.size() - 1];
  std::size_t k = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i; j < n; ++j) v += pi[k++] * alpha[i] * alpha[j];
  const std::size_t lin = n * (n + 1) / 2;
  for (std::size_t i = 0; i < n; ++i) v += pi[lin + i] * alpha[i];
  return v;
}

std::vector<double> surrogate_gradient(std::span<const double> pi,
                                       std::span<const double> alpha) {
  const std::size_t n = infer_n(pi);
  if (alpha.size() != n)
    throw Error("surrogate: alpha length does not match coefficient count");
  std::vector<double> g(n, 0.0);
  std::size_t k = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i; j < n; ++j) {
      const double v = pi[k++];
      if (i == j) {
        g[i] += 2.0 * v * alpha[i];
      } else {
        g[i] += v * alpha[j];
        g[j] += v * alpha[i];
      }
    }
  const std::size_t lin = n * (n + 1) / 2;
  for (std::size_t i = 0; i < n; ++i) g[i] += pi[lin + i];
  return g;
}

std::vector<double> fit_surrogate(std::span<const SurrogatePoint> history,
                                  std::size_t best, double mu) {
  if (history.empty()) throw Error("surrogate: empty history");
  if (best >= history.size()) throw Error("surrogate: best index out of range");
  if (!(mu >= 0)) throw Error("surrogate: mu must be >= 0");
  const std::size_t n = history[best].alpha.size();
  const std::size_t nq = n * (n + 1) / 2;
  const std::size_t cols = surrogate_coeff_count(static_cast<std::int32_t>(n));
  const std::span<const double> center = history[best].alpha;

  // Centered design: among exact fits, the minimum-norm solution then keeps
  // the surface flat through the center rather than tilting it.
  const std::size_t ridge_rows = mu > 0 ? nq : 0;
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(history.size() + ridge_rows, cols);
  Eigen::VectorXd b = Eigen::VectorXd::Zero(A.rows());
  for (std::size_t r = 0; r < history.size(); ++r) {
    const SurrogatePoint& pt = history[r];
    if (pt.alpha.size() != n)
      throw Error("surrogate: inconsistent alpha dimensions in history");
    const double sw = std::sqrt(weight_of(pt, center));
    std::size_t k = 0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i; j < n; ++j)
        A(r, k++) = sw * (pt.alpha[i] - center[i]) * (pt.alpha[j] - center[j]);
    for (std::size_t i = 0; i < n; ++i)
      A(r, nq + i) = sw * (pt.alpha[i] - center[i]);
    A(r, cols - 1) = sw;
    b(r) = sw * pt.sigma;
  }
  const double smu = std::sqrt(mu);
  for (std::size_t q = 0; q < ridge_rows; ++q)
    A(history.size() + q, q) = smu;

  Eigen::BDCSVD<Eigen::MatrixXd> svd(A, Eigen::ComputeThinU |
                                            Eigen::ComputeThinV);
  if (mu == 0 && svd.rank() < static_cast<Eigen::Index>(cols))
    throw SingularSystem(
        "surrogate: rank-deficient fit with mu = 0; raise mu");
  const Eigen::VectorXd pc = svd.solve(b);

  // Expand the centered polynomial to raw coefficients: the quadratic block
  // is translation invariant; the affine part shifts.
  std::vector<double> pi(pc.data(), pc.data() + pc.size());
  const Eigen::MatrixXd Q = quad_matrix(pi, n);
  Eigen::Map<const Eigen::VectorXd> c(center.data(), n);
  const Eigen::VectorXd l = pc.segment(nq, n);
  const Eigen::VectorXd raw_lin = l - 2.0 * (Q * c);
  for (std::size_t i = 0; i < n; ++i) pi[nq + i] = raw_lin(i);
  pi[cols - 1] = pc(cols - 1) - l.dot(c) + c.dot(Q * c);
  return pi;
}

double tune_mu(std::span<const SurrogatePoint> history, std::size_t best,
               double log10_lo, double log10_hi, double log10_tol) {
  const std::span<const double> center = history[best].alpha;
  const double target = history[best].sigma;
  auto phi = [&](double t) {
    const std::vector<double> pi =
        fit_surrogate(history, best, std::pow(10.0, t));
    return std::abs(surrogate_value(pi, center) - target);
  };

  double lo = log10_lo, hi = log10_hi;
  const double invphi = (std::sqrt(5.0) - 1.0) / 2.0;
  double x1 = hi - invphi * (hi - lo);
  double x2 = lo + invphi * (hi - lo);
  double f1 = phi(x1), f2 = phi(x2);
  double fmin = std::min(f1, f2), fmax = std::max(f1, f2);
  double tbest = f1 <= f2 ? x1 : x2;
  double fbest = std::min(f1, f2);
  while (hi - lo > log10_tol) {
    if (f1 <= f2) {
      hi = x2;
      x2 = x1;
      f2 = f1;
      x1 = hi - invphi * (hi - lo);
      f1 = phi(x1);
    } else {
      lo = x1;
      x1 = x2;
      f1 = f2;
      x2 = lo + invphi * (hi - lo);
      f2 = phi(x2);
    }
    const double fn = std::min(f1, f2);
    if (fn < fbest) {
      fbest = fn;
      tbest = f1 <= f2 ? x1 : x2;
    }
    fmin = std::min(fmin, fn);
    fmax = std::max(fmax, std::max(f1, f2));
  }
  // Flat objective (e.g. the fit interpolates the center for every mu):
  // resolve to the bracket midpoint.
  if (fmax - fmin <= 1e-14 * std::max(1.0, fmax))
    return std::pow(10.0, (log10_lo + log10_hi) / 2.0);
  return std::pow(10.0, tbest);
}

std::vector<double> next_alpha(std::span<const double> pi,
                               std::span<const double> alpha, double floor) {
  const std::vector<double> g = surrogate_gradient(pi, alpha);
  std::vector<double> out(alpha.begin(), alpha.end());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = std::max(out[i] - g[i], floor);
  return out;
}

SurrogateResult optimize(const SigmaOracle& oracle, std::int32_t n_alpha,
                         const SurrogateSettings& settings) {
  SurrogateResult res;
  SurrogateState& st = res.state;
  const auto n = static_cast<std::size_t>(n_alpha);

  auto call = [&](std::vector<double> alpha) {
    std::pair<double, bool> sv;
    try {
      sv = oracle(alpha);
    } catch (const std::exception& e) {
      throw OracleFailure(std::string("surrogate: oracle failed: ") + e.what(),
                          st);
    }
    if (!std::isfinite(sv.first))
      throw OracleFailure("surrogate: oracle returned non-finite sigma", st);
    st.history.push_back({std::move(alpha), sv.first, sv.second});
    if (sv.first < st.history[st.best].sigma) st.best = st.history.size() - 1;
  };

  if (n == 0) {
    call({});
    res.alpha_star = {};
    res.sigma_star = st.history[0].sigma;
    return res;
  }

  std::vector<double> a0 = settings.alpha0;
  if (a0.empty()) a0.assign(n, 1.0);
  if (a0.size() != n)
    throw Error("surrogate: alpha0 has wrong dimension");
  for (double& a : a0) a = std::max(a, settings.alpha_floor);

  call(a0);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> p = a0;
    p[i] = std::max(p[i] * (1.0 + settings.perturbation), settings.alpha_floor);
    call(p);
  }

  const double delta = settings.tol_sigma >= 0
                           ? settings.tol_sigma
                           : 1e-4 * std::abs(st.history[0].sigma);

  // Gain on the linearization step: doubled while such steps keep improving
  // sigma, reset by any setback or Newton jump. A shallow one-sided start
  // would otherwise crawl and exhaust the call budget.
  double gain = 1.0;

  while (st.main_calls < settings.max_iterations) {
    st.mu_star = tune_mu(st.history, st.best, settings.mu_log_lo,
                         settings.mu_log_hi, settings.mu_log_tol);
    st.pi = fit_surrogate(st.history, st.best, st.mu_star);
    const std::vector<double>& abest = st.history[st.best].alpha;
    const double sigma_prev = st.history[st.best].sigma;

    // When the fitted surface is convex, jump to its minimizer (guarded
    // against runaway extrapolation); otherwise take the linearization step.
    std::vector<double> cand;
    const Eigen::MatrixXd Q = quad_matrix(st.pi, n);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(Q);
    const double emax = es.eigenvalues().cwiseAbs().maxCoeff();
    if (es.info() == Eigen::Success &&
        es.eigenvalues().minCoeff() > 1e-12 * std::max(1.0, emax)) {
      const std::size_t nq = n * (n + 1) / 2;
      Eigen::Map<const Eigen::VectorXd> l(st.pi.data() + nq, n);
      Eigen::Map<const Eigen::VectorXd> ab(abest.data(), n);
      const Eigen::VectorXd amin = Q.ldlt().solve(-0.5 * l);
      const double guard = 2.0 * (1.0 + ab.norm());
      if ((amin - ab).norm() <= guard) {
        cand.assign(amin.data(), amin.data() + n);
        for (double& a : cand) a = std::max(a, settings.alpha_floor);
      }
    }
    const bool fallback = cand.empty();
    if (fallback) {
      // Per-component relative trust region: one step moves at most a factor
      // of 16, so an accelerated descent cannot leap over an interior dip.
      const std::vector<double> g = surrogate_gradient(st.pi, abest);
      cand = abest;
      for (std::size_t i = 0; i < n; ++i) {
        const double step = abest[i] - gain * g[i];
        cand[i] = std::max(settings.alpha_floor,
                           std::clamp(step, abest[i] / 16.0, abest[i] * 16.0));
      }
    } else {
      gain = 1.0;
    }

    // A proposal that repeats an evaluated point carries no new information:
    // probe between the two best distinct points instead, and stop when that
    // is exhausted too.
    const auto seen = [&](const std::vector<double>& a) {
      for (const SurrogatePoint& p : st.history)
        if (p.alpha == a) return true;
      return false;
    };
    if (seen(cand)) {
      std::size_t ru = st.history.size();
      for (std::size_t i = 0; i < st.history.size(); ++i) {
        if (st.history[i].alpha == abest) continue;
        if (ru == st.history.size() ||
            st.history[i].sigma < st.history[ru].sigma)
          ru = i;
      }
      if (ru == st.history.size()) break;
      cand = abest;
      for (std::size_t i = 0; i < n; ++i)
        cand[i] = std::max(settings.alpha_floor,
                           0.5 * (abest[i] + st.history[ru].alpha[i]));
      gain = 1.0;
      if (seen(cand)) break;
    }

    call(std::move(cand));
    ++st.main_calls;
    const double sigma_new = st.history.back().sigma;
    if (fallback) gain = sigma_new < sigma_prev ? gain * 2.0 : 1.0;
    if (std::abs(sigma_new - sigma_prev) < delta) break;
  }

  res.alpha_star = st.history[st.best].alpha;
  res.sigma_star = st.history[st.best].sigma;
  return res;
}

}  // namespace svf
