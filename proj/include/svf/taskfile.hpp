#pragma once

// Task-file notation: a small declaration language for identification
// problems. A document names its data source, the discretization grids, the
// unknown functions, the model equations, and the objective; see
// docs/taskfile.md for the grammar.

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "svf/errors.hpp"

namespace svf {

struct DuplicateName : ParseError {
  DuplicateName(std::size_t line, std::size_t col, const std::string& name)
      : ParseError(line, col, "duplicate name: " + name) {}
};

struct UnknownDirective : ParseError {
  UnknownDirective(std::size_t line, std::size_t col, const std::string& name)
      : ParseError(line, col, "unknown directive: " + name) {}
};

struct UnknownName : ParseError {
  UnknownName(std::size_t line, std::size_t col, const std::string& name)
      : ParseError(line, col, "unknown name: " + name) {}
};

struct ArityError : ParseError {
  using ParseError::ParseError;
};

// Expression AST with derivative/integral marker nodes. Markers carry the
// grid name they act along; the compiler resolves them to finite differences
// and quadrature during discretization.
struct TExpr;
using TExprPtr = std::shared_ptr<const TExpr>;

struct TExpr {
  enum class Kind {
    Num,        // literal
    Name,       // variable / grid / scalar reference
    Penal,      // Penal[i]
    Unary,      // -x
    Binary,     // + - * / ** ==
    Apply,      // name(args...)
    Deriv,      // d/dG(body) or d2/dG2(body)
    Integral,   // integ d(G) * body
    Msd,        // var.MSD()
    Complexity, // var.Complexity(Penal[i], ...)
  };
  Kind kind;
  double num = 0.0;                // Num
  std::string name;                // Name/Apply var name, Deriv/Integral grid,
                                   // Msd/Complexity target
  char op = 0;                     // Binary: + - * / p(power) =(equality); Unary: -
  int order = 0;                   // Deriv order (1 or 2)
  std::vector<std::int64_t> penals;  // Penal / Complexity indices
  std::vector<TExprPtr> args;      // operands / call args / marker body
};

std::string to_string(const TExpr& e);
bool equal(const TExpr& a, const TExpr& b);

enum class RunMode { Local, LocalParallel, ServerParallel };

struct GridDecl {
  std::string name;
  double min = 0, max = 0, step = 0;
  std::size_t line = 0;
};

struct VarDecl {
  enum class Kind { GridFunction, Polynomial, Scalar };
  Kind kind = Kind::Scalar;
  std::string name;
  std::vector<std::string> arg_grids;  // empty for scalars
  std::int64_t poly_pow = 0;           // Polynomial only
  std::size_t line = 0;
};

struct Equation {
  TExprPtr lhs, rhs;
  std::size_t line = 0;
};

// One additive term of the objective.
struct ObjectiveTerm {
  enum class Kind { Msd, Complexity, Explicit };
  Kind kind;
  std::string var;                   // Msd / Complexity target
  std::vector<std::int64_t> penals;  // Complexity indices
  TExprPtr expr;                     // Explicit term (may reference Penal[i])
};

struct ObjectiveDecl {
  std::vector<ObjectiveTerm> terms;
  std::int64_t n_alpha = 0;  // penal arity; 0 for purely parametric models
};

struct TaskSpec {
  std::int64_t cv_num_of_iter = 0;
  std::int64_t cv_step = 0;  // number of CV subsets (see docs on the name)
  RunMode run_solver = RunMode::Local;
  std::string data_path;
  std::vector<std::string> data_columns;
  std::vector<GridDecl> grids;
  std::vector<VarDecl> vars;
  std::vector<Equation> equations;
  ObjectiveDecl objective;
  bool draw = false;

  const GridDecl* find_grid(const std::string& name) const;
  const VarDecl* find_var(const std::string& name) const;
};

bool operator==(const TaskSpec& a, const TaskSpec& b);

// Parses a complete task-file. Unrecognized directives are errors.
TaskSpec parse_taskfile(const std::string& text);

// Parses one expression against a set of declared names (grids and vars).
TExprPtr parse_expression(const std::string& text,
                          const std::vector<std::string>& scope);

// Canonical pretty-printer; parse_taskfile(print_taskfile(s)) == s.
std::string print_taskfile(const TaskSpec& spec);

class Dataset;  // dataset.hpp

// Cross-reference and coverage checks, returned as human-readable
// diagnostics (empty = valid). The dataset argument enables the
// data-coverage checks and may be null.
std::vector<std::string> validate(const TaskSpec& spec,
                                  const Dataset* data = nullptr);

}  // namespace svf
