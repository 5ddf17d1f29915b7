#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "svf/errors.hpp"

namespace svf {

// Expression DAGs live in an append-only arena. Node ids are indices into the
// arena; children always have smaller ids than their parents, so ascending id
// order is a topological order and a single forward sweep evaluates every
// node. Identical (op, children) combinations are hash-consed, which is what
// makes repeated stencils and shared powers cheap.
using NodeId = std::int32_t;
inline constexpr NodeId kNoNode = -1;

enum class Op : std::uint8_t {
  Const,
  Var,    // decision variable, index into the arena's variable table
  Param,  // penalty weight alpha[index]; bound at evaluation time
  Add,
  Sub,
  Mul,
  Div,
  Neg,
  Sin,
  Cos,
  Exp,
  Log,
  AbsSmooth,  // sqrt(x^2 + eps^2), eps = 1e-8; a C1 stand-in for |x|
  Sum,        // n-ary add; children stored in the arena's aux array
};

inline constexpr double kAbsSmoothEps = 1e-8;

struct Node {
  Op op;
  NodeId a = kNoNode;  // for Sum: offset into aux
  NodeId b = kNoNode;  // for Sum: child count
  std::int32_t index = -1;  // Var / Param slot
  double value = 0.0;       // Const payload
};

class Arena {
 public:
  NodeId constant(double v);
  NodeId var(const std::string& name);
  NodeId param(std::int32_t index);

  NodeId add(NodeId x, NodeId y);
  NodeId sub(NodeId x, NodeId y);
  NodeId mul(NodeId x, NodeId y);
  NodeId div(NodeId x, NodeId y);
  NodeId neg(NodeId x);
  NodeId sin(NodeId x);
  NodeId cos(NodeId x);
  NodeId exp(NodeId x);
  NodeId log(NodeId x);
  NodeId abs_smooth(NodeId x);
  NodeId sum(std::span<const NodeId> terms);

  // b^k for integer k, expanded by squaring so powers share sub-DAGs.
  // Negative k divides 1 by the positive power. b^0 is the constant 1.
  NodeId pow_int(NodeId base, std::int64_t k);

  const Node& node(NodeId id) const { return nodes_[static_cast<size_t>(id)]; }
  std::size_t size() const { return nodes_.size(); }
  std::span<const NodeId> sum_children(const Node& n) const {
    return {aux_.data() + n.a, static_cast<std::size_t>(n.b)};
  }

  // Deserialization support: verbatim append with no interning or folding,
  // so a restored arena matches the original node for node.
  void add_var_name(const std::string& name);
  NodeId push_raw(const Node& n, std::span<const NodeId> sum_children = {});

  std::int32_t var_count() const { return static_cast<std::int32_t>(var_names_.size()); }
  std::int32_t param_count() const { return max_param_ + 1; }
  const std::string& var_name(std::int32_t i) const { return var_names_[static_cast<size_t>(i)]; }
  // Returns the variable's index, or -1 if it was never registered.
  std::int32_t find_var(const std::string& name) const;
  NodeId var_node(std::int32_t index) const { return var_nodes_[static_cast<size_t>(index)]; }

 private:
  NodeId push(Node n);
  NodeId intern(Op op, NodeId a, NodeId b);

  std::vector<Node> nodes_;
  std::vector<NodeId> aux_;
  std::vector<std::string> var_names_;
  std::vector<NodeId> var_nodes_;
  std::unordered_map<std::string, std::int32_t> var_index_;
  std::unordered_map<std::uint64_t, NodeId> const_cache_;
  std::unordered_map<std::uint64_t, NodeId> op_cache_;
  std::unordered_map<std::uint64_t, NodeId> param_cache_;
  std::int32_t max_param_ = -1;
};

// Lightweight handle used by tests and bindings; the compiler talks to the
// arena directly.
struct Expr {
  Arena* arena = nullptr;
  NodeId id = kNoNode;
};

Expr operator+(Expr x, Expr y);
Expr operator-(Expr x, Expr y);
Expr operator*(Expr x, Expr y);
Expr operator/(Expr x, Expr y);
Expr operator-(Expr x);
Expr operator+(Expr x, double c);
Expr operator+(double c, Expr x);
Expr operator-(Expr x, double c);
Expr operator-(double c, Expr x);
Expr operator*(double c, Expr x);
Expr operator*(Expr x, double c);
Expr operator/(Expr x, double c);
Expr operator/(double c, Expr x);
Expr sin(Expr x);
Expr cos(Expr x);
Expr exp(Expr x);
Expr log(Expr x);
Expr abs_smooth(Expr x);
Expr pow_int(Expr x, std::int64_t k);

// Forward/reverse evaluation workspace over one arena. Reusable across calls;
// all scratch is owned here, so distinct instances may run on distinct
// threads over the same arena.
class Evaluator {
 public:
  explicit Evaluator(const Arena& a);

  // Evaluates every node. Returns false if any node value is non-finite.
  bool forward(std::span<const double> x, std::span<const double> alpha);

  double value(NodeId id) const { return values_[static_cast<size_t>(id)]; }

  // Reverse sweep accumulating d(sum_i w_i * root_i)/dx into g (size
  // var_count, zeroed here). Must follow a forward() over the same point.
  // Returns false if any accumulated adjoint is non-finite.
  bool reverse(std::span<const std::pair<NodeId, double>> seeds,
               std::span<double> g);

  const Arena& arena() const { return *arena_; }

 private:
  const Arena* arena_;
  std::vector<double> values_;
  std::vector<double> adjoints_;
};

// One-shot helpers. `point` must supply every registered variable and `alpha`
// every referenced parameter; missing entries raise UnboundVariable, and a
// non-finite result raises NonFiniteResult.
double eval(Expr e, std::span<const double> point, std::span<const double> alpha = {});
std::vector<double> grad(Expr e, std::span<const double> point, std::span<const double> alpha = {});

// Variables reachable from e, ascending by index.
std::vector<std::int32_t> free_vars(Expr e);
std::vector<std::int32_t> free_vars(const Arena& a, NodeId root);

}  // namespace svf
