#pragma once

// Discretizer: turns a validated TaskSpec plus measurement binding into a
// finite-dimensional NLP. Grid functions become one decision variable per
// node, polynomial functions become coefficient variables, derivative
// markers become finite differences, integral markers become trapezoid sums,
// and the objective becomes fit + alpha-weighted complexity, with the alpha
// values left as parameter slots so one compiled problem serves every alpha.

#include <memory>
#include <span>
#include <string>
#include <vector>

#include "svf/dataset.hpp"
#include "svf/expr.hpp"
#include "svf/grid.hpp"
#include "svf/taskfile.hpp"

namespace svf {

struct StencilOutOfRange : CompileError {
  using CompileError::CompileError;
};

enum class FdScheme { Forward, Central, Backward };

// Where each declared unknown lives inside the flat decision vector.
struct VarSegment {
  enum class Kind { GridFunction, PolyCoeffs, Scalar };
  Kind kind = Kind::Scalar;
  std::string name;
  std::vector<std::string> grids;
  std::size_t offset = 0, count = 0;
  std::int64_t degree = 0;  // PolyCoeffs only
};

struct NlpProblem {
  std::shared_ptr<Arena> arena;
  NodeId objective = kNoNode;
  std::vector<NodeId> constraints;
  std::int32_t n_alpha = 0;
  std::vector<std::size_t> training_rows;
  std::vector<VarSegment> layout;

  std::size_t n_vars() const {
    return arena ? static_cast<std::size_t>(arena->var_count()) : 0;
  }
  const VarSegment* segment(const std::string& name) const {
    for (const auto& s : layout)
      if (s.name == name) return &s;
    return nullptr;
  }
};

// Monomial exponents of a bivariate polynomial of total degree <= K, in the
// fixed order a = 0..K, b = 0..K-a; coefficient count (K+1)(K+2)/2.
std::vector<std::pair<int, int>> monomials_2d(std::int64_t degree);

// Finite-difference stencils over one grid function's node variables.
// Preconditions per scheme: forward i < N, backward i > 0, central 0 < i < N,
// second derivative 0 < i < N, where N is the last node index.
NodeId fd_first(Arena& a, std::span<const NodeId> nodes, const Grid& g,
                std::size_t i, FdScheme scheme);
NodeId fd_second(Arena& a, std::span<const NodeId> nodes, const Grid& g,
                 std::size_t i);

// Trapezoid rule h*(g_lo/2 + g_{lo+1} + ... + g_hi/2) over the node subrange
// [lo, hi]; integrand[j] is the expression at node lo+j.
NodeId trapezoid(Arena& a, std::span<const NodeId> integrand, const Grid& g,
                 std::size_t lo, std::size_t hi);

// Polynomial composition per the monomial expansion: sum_k p_k * inner^k and
// the bivariate analogue, with powers of the inner expressions shared.
NodeId expand_composition(Arena& a, std::span<const NodeId> coeffs,
                          std::int64_t degree, std::span<const NodeId> inner);

class ModelCompiler {
 public:
  ModelCompiler(const TaskSpec& spec, std::vector<Grid> grids,
                MeasurementBinding binding);

  // One NLP per training set; alpha stays a parameter of the compiled form.
  NlpProblem compile(std::span<const std::size_t> training_rows) const;

  // Initial point: measured grid functions start at the measurement
  // interpolant, variables defined by a first-derivative equation start at
  // the finite difference of their source's seed, everything else at zero.
  std::vector<double> initial_point(const NlpProblem& p) const;

  const std::vector<Grid>& grids() const { return grids_; }
  const Grid& grid(const std::string& name) const;
  const MeasurementBinding& binding() const { return binding_; }
  const TaskSpec& spec() const { return spec_; }

 private:
  TaskSpec spec_;
  std::vector<Grid> grids_;
  MeasurementBinding binding_;
};

// Portable text form (version tag "svfnlp/1"): variable table, layout,
// node list in arena order, objective/constraint roots, training rows.
// Deserialization reproduces the arena node for node, so evaluation of the
// round-tripped problem is bit-identical.
std::string serialize_problem(const NlpProblem& p);
NlpProblem deserialize_problem(const std::string& text);
bool structurally_equal(const NlpProblem& a, const NlpProblem& b);

}  // namespace svf
