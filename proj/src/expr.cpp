#include "svf/expr.hpp"

#include <algorithm>
#include <bit>
#include <cmath>

namespace svf {

namespace {

inline std::uint64_t pack_key(Op op, NodeId a, NodeId b) {
  // 4 bits op, 30 bits per child; exact as long as the arena stays < 2^30.
  return static_cast<std::uint64_t>(op) |
         (static_cast<std::uint64_t>(static_cast<std::uint32_t>(a)) << 4) |
         (static_cast<std::uint64_t>(static_cast<std::uint32_t>(b)) << 34);
}

inline bool is_const(const Node& n, double v) {
  return n.op == Op::Const && n.value == v;
}

}  // namespace

NodeId Arena::push(Node n) {
  nodes_.push_back(n);
  return static_cast<NodeId>(nodes_.size() - 1);
}

NodeId Arena::constant(double v) {
  const std::uint64_t key = std::bit_cast<std::uint64_t>(v);
  auto [it, inserted] = const_cache_.try_emplace(key, kNoNode);
  if (inserted) it->second = push({.op = Op::Const, .value = v});
  return it->second;
}

NodeId Arena::var(const std::string& name) {
  auto [it, inserted] = var_index_.try_emplace(name, var_count());
  if (inserted) {
    var_names_.push_back(name);
    var_nodes_.push_back(push({.op = Op::Var, .index = it->second}));
  }
  return var_nodes_[static_cast<size_t>(it->second)];
}

std::int32_t Arena::find_var(const std::string& name) const {
  auto it = var_index_.find(name);
  return it == var_index_.end() ? -1 : it->second;
}

void Arena::add_var_name(const std::string& name) {
  auto [it, inserted] = var_index_.try_emplace(name, var_count());
  if (!inserted) throw Error("duplicate variable name: " + name);
  var_names_.push_back(name);
  var_nodes_.push_back(kNoNode);
}

NodeId Arena::push_raw(const Node& n, std::span<const NodeId> sum_children) {
  Node copy = n;
  if (n.op == Op::Sum) {
    copy.a = static_cast<NodeId>(aux_.size());
    copy.b = static_cast<NodeId>(sum_children.size());
    aux_.insert(aux_.end(), sum_children.begin(), sum_children.end());
  }
  const NodeId id = push(copy);
  if (n.op == Op::Var) {
    if (n.index < 0 || n.index >= var_count())
      throw Error("variable node index out of range");
    var_nodes_[static_cast<std::size_t>(n.index)] = id;
  }
  if (n.op == Op::Param) max_param_ = std::max(max_param_, n.index);
  return id;
}

NodeId Arena::param(std::int32_t index) {
  auto [it, inserted] = param_cache_.try_emplace(static_cast<std::uint64_t>(index), kNoNode);
  if (inserted) {
    it->second = push({.op = Op::Param, .index = index});
    max_param_ = std::max(max_param_, index);
  }
  return it->second;
}

NodeId Arena::intern(Op op, NodeId a, NodeId b) {
  const Node& na = node(a);
  const Node& nb = b == kNoNode ? na : node(b);

  // Fold constant operands and the cheap exact identities. x*0 is kept so
  // that non-finite x still propagates.
  if (na.op == Op::Const && (b == kNoNode || nb.op == Op::Const)) {
    double v = 0;
    switch (op) {
      case Op::Add: v = na.value + nb.value; break;
      case Op::Sub: v = na.value - nb.value; break;
      case Op::Mul: v = na.value * nb.value; break;
      case Op::Div: v = na.value / nb.value; break;
      case Op::Neg: v = -na.value; break;
      case Op::Sin: v = std::sin(na.value); break;
      case Op::Cos: v = std::cos(na.value); break;
      case Op::Exp: v = std::exp(na.value); break;
      case Op::Log: v = std::log(na.value); break;
      case Op::AbsSmooth:
        v = std::sqrt(na.value * na.value + kAbsSmoothEps * kAbsSmoothEps);
        break;
      default: v = 0; break;
    }
    return constant(v);
  }
  if (op == Op::Add && is_const(nb, 0.0)) return a;
  if (op == Op::Add && is_const(na, 0.0)) return b;
  if (op == Op::Sub && is_const(nb, 0.0)) return a;
  if (op == Op::Mul && is_const(nb, 1.0)) return a;
  if (op == Op::Mul && is_const(na, 1.0)) return b;
  if (op == Op::Div && is_const(nb, 1.0)) return a;

  const std::uint64_t key = pack_key(op, a, b);
  auto [it, inserted] = op_cache_.try_emplace(key, kNoNode);
  if (inserted) it->second = push({.op = op, .a = a, .b = b});
  return it->second;
}

NodeId Arena::add(NodeId x, NodeId y) { return intern(Op::Add, x, y); }
NodeId Arena::sub(NodeId x, NodeId y) { return intern(Op::Sub, x, y); }
NodeId Arena::mul(NodeId x, NodeId y) { return intern(Op::Mul, x, y); }
NodeId Arena::div(NodeId x, NodeId y) { return intern(Op::Div, x, y); }
NodeId Arena::neg(NodeId x) { return intern(Op::Neg, x, kNoNode); }
NodeId Arena::sin(NodeId x) { return intern(Op::Sin, x, kNoNode); }
NodeId Arena::cos(NodeId x) { return intern(Op::Cos, x, kNoNode); }
NodeId Arena::exp(NodeId x) { return intern(Op::Exp, x, kNoNode); }
NodeId Arena::log(NodeId x) { return intern(Op::Log, x, kNoNode); }
NodeId Arena::abs_smooth(NodeId x) { return intern(Op::AbsSmooth, x, kNoNode); }

NodeId Arena::sum(std::span<const NodeId> terms) {
  if (terms.empty()) return constant(0.0);
  if (terms.size() == 1) return terms[0];
  const auto offset = static_cast<NodeId>(aux_.size());
  aux_.insert(aux_.end(), terms.begin(), terms.end());
  return push({.op = Op::Sum, .a = offset, .b = static_cast<NodeId>(terms.size())});
}

NodeId Arena::pow_int(NodeId base, std::int64_t k) {
  if (k == 0) return constant(1.0);
  if (k == 1) return base;
  if (k < 0) return div(constant(1.0), pow_int(base, -k));
  // Binary powering; hash-consing shares the squarings across exponents.
  if (k % 2 == 0) {
    NodeId h = pow_int(base, k / 2);
    return mul(h, h);
  }
  return mul(pow_int(base, k - 1), base);
}

Expr operator+(Expr x, Expr y) { return {x.arena, x.arena->add(x.id, y.id)}; }
Expr operator-(Expr x, Expr y) { return {x.arena, x.arena->sub(x.id, y.id)}; }
Expr operator*(Expr x, Expr y) { return {x.arena, x.arena->mul(x.id, y.id)}; }
Expr operator/(Expr x, Expr y) { return {x.arena, x.arena->div(x.id, y.id)}; }
Expr operator-(Expr x) { return {x.arena, x.arena->neg(x.id)}; }
Expr operator+(Expr x, double c) { return {x.arena, x.arena->add(x.id, x.arena->constant(c))}; }
Expr operator+(double c, Expr x) { return x + c; }
Expr operator-(Expr x, double c) { return {x.arena, x.arena->sub(x.id, x.arena->constant(c))}; }
Expr operator-(double c, Expr x) { return {x.arena, x.arena->sub(x.arena->constant(c), x.id)}; }
Expr operator*(double c, Expr x) { return {x.arena, x.arena->mul(x.arena->constant(c), x.id)}; }
Expr operator*(Expr x, double c) { return c * x; }
Expr operator/(Expr x, double c) { return {x.arena, x.arena->div(x.id, x.arena->constant(c))}; }
Expr operator/(double c, Expr x) { return {x.arena, x.arena->div(x.arena->constant(c), x.id)}; }
Expr sin(Expr x) { return {x.arena, x.arena->sin(x.id)}; }
Expr cos(Expr x) { return {x.arena, x.arena->cos(x.id)}; }
Expr exp(Expr x) { return {x.arena, x.arena->exp(x.id)}; }
Expr log(Expr x) { return {x.arena, x.arena->log(x.id)}; }
Expr abs_smooth(Expr x) { return {x.arena, x.arena->abs_smooth(x.id)}; }
Expr pow_int(Expr x, std::int64_t k) { return {x.arena, x.arena->pow_int(x.id, k)}; }

Evaluator::Evaluator(const Arena& a) : arena_(&a) {
  values_.resize(a.size());
  adjoints_.resize(a.size());
}

bool Evaluator::forward(std::span<const double> x, std::span<const double> alpha) {
  values_.resize(arena_->size());
  const auto n = static_cast<NodeId>(arena_->size());
  bool ok = true;
  for (NodeId i = 0; i < n; ++i) {
    const Node& nd = arena_->node(i);
    double v;
    switch (nd.op) {
      case Op::Const: v = nd.value; break;
      case Op::Var: v = x[static_cast<size_t>(nd.index)]; break;
      case Op::Param: v = alpha[static_cast<size_t>(nd.index)]; break;
      case Op::Add: v = values_[nd.a] + values_[nd.b]; break;
      case Op::Sub: v = values_[nd.a] - values_[nd.b]; break;
      case Op::Mul: v = values_[nd.a] * values_[nd.b]; break;
      case Op::Div: v = values_[nd.a] / values_[nd.b]; break;
      case Op::Neg: v = -values_[nd.a]; break;
      case Op::Sin: v = std::sin(values_[nd.a]); break;
      case Op::Cos: v = std::cos(values_[nd.a]); break;
      case Op::Exp: v = std::exp(values_[nd.a]); break;
      case Op::Log: v = std::log(values_[nd.a]); break;
      case Op::AbsSmooth: {
        const double u = values_[nd.a];
        v = std::sqrt(u * u + kAbsSmoothEps * kAbsSmoothEps);
        break;
      }
      case Op::Sum: {
        double s = 0.0;
        for (NodeId c : arena_->sum_children(nd)) s += values_[c];
        v = s;
        break;
      }
    }
    values_[static_cast<size_t>(i)] = v;
    ok &= std::isfinite(v);
  }
  return ok;
}

bool Evaluator::reverse(std::span<const std::pair<NodeId, double>> seeds,
                        std::span<double> g) {
  adjoints_.assign(arena_->size(), 0.0);
  NodeId top = -1;
  for (const auto& [id, w] : seeds) {
    adjoints_[static_cast<size_t>(id)] += w;
    top = std::max(top, id);
  }
  for (NodeId i = top; i >= 0; --i) {
    const double w = adjoints_[static_cast<size_t>(i)];
    if (w == 0.0) continue;
    const Node& nd = arena_->node(i);
    switch (nd.op) {
      case Op::Const:
      case Op::Var:
      case Op::Param:
        break;
      case Op::Add:
        adjoints_[nd.a] += w;
        adjoints_[nd.b] += w;
        break;
      case Op::Sub:
        adjoints_[nd.a] += w;
        adjoints_[nd.b] -= w;
        break;
      case Op::Mul:
        adjoints_[nd.a] += w * values_[nd.b];
        adjoints_[nd.b] += w * values_[nd.a];
        break;
      case Op::Div: {
        const double vb = values_[nd.b];
        adjoints_[nd.a] += w / vb;
        adjoints_[nd.b] -= w * values_[static_cast<size_t>(i)] / vb;
        break;
      }
      case Op::Neg:
        adjoints_[nd.a] -= w;
        break;
      case Op::Sin:
        adjoints_[nd.a] += w * std::cos(values_[nd.a]);
        break;
      case Op::Cos:
        adjoints_[nd.a] -= w * std::sin(values_[nd.a]);
        break;
      case Op::Exp:
        adjoints_[nd.a] += w * values_[static_cast<size_t>(i)];
        break;
      case Op::Log:
        adjoints_[nd.a] += w / values_[nd.a];
        break;
      case Op::AbsSmooth:
        adjoints_[nd.a] += w * values_[nd.a] / values_[static_cast<size_t>(i)];
        break;
      case Op::Sum:
        for (NodeId c : arena_->sum_children(nd)) adjoints_[c] += w;
        break;
    }
  }
  bool ok = true;
  for (std::int32_t v = 0; v < arena_->var_count(); ++v) {
    const double gv = adjoints_[static_cast<size_t>(arena_->var_node(v))];
    g[static_cast<size_t>(v)] = gv;
    ok &= std::isfinite(gv);
  }
  return ok;
}

namespace {

void check_bound(const Arena& a, std::span<const double> point,
                 std::span<const double> alpha) {
  if (point.size() < static_cast<size_t>(a.var_count()))
    throw UnboundVariable(a.var_name(static_cast<std::int32_t>(point.size())));
  if (alpha.size() < static_cast<size_t>(a.param_count()))
    throw UnboundVariable("Penal[" + std::to_string(alpha.size()) + "]");
}

}  // namespace

double eval(Expr e, std::span<const double> point, std::span<const double> alpha) {
  check_bound(*e.arena, point, alpha);
  Evaluator ev(*e.arena);
  ev.forward(point, alpha);
  const double v = ev.value(e.id);
  if (!std::isfinite(v)) throw NonFiniteResult("eval produced a non-finite value");
  return v;
}

std::vector<double> grad(Expr e, std::span<const double> point,
                         std::span<const double> alpha) {
  check_bound(*e.arena, point, alpha);
  Evaluator ev(*e.arena);
  ev.forward(point, alpha);
  if (!std::isfinite(ev.value(e.id)))
    throw NonFiniteResult("eval produced a non-finite value");
  std::vector<double> g(static_cast<size_t>(e.arena->var_count()));
  const std::pair<NodeId, double> seed[] = {{e.id, 1.0}};
  if (!ev.reverse(seed, g))
    throw NonFiniteResult("gradient produced a non-finite value");
  return g;
}

std::vector<std::int32_t> free_vars(const Arena& a, NodeId root) {
  std::vector<bool> seen(a.size(), false);
  std::vector<NodeId> stack{root};
  std::vector<std::int32_t> out;
  while (!stack.empty()) {
    const NodeId id = stack.back();
    stack.pop_back();
    if (seen[static_cast<size_t>(id)]) continue;
    seen[static_cast<size_t>(id)] = true;
    const Node& nd = a.node(id);
    switch (nd.op) {
      case Op::Var: out.push_back(nd.index); break;
      case Op::Sum:
        for (NodeId c : a.sum_children(nd)) stack.push_back(c);
        break;
      default:
        if (nd.a != kNoNode && nd.op != Op::Const && nd.op != Op::Param) {
          stack.push_back(nd.a);
          if (nd.b != kNoNode) stack.push_back(nd.b);
        }
        break;
    }
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

std::vector<std::int32_t> free_vars(Expr e) { return free_vars(*e.arena, e.id); }

}  // namespace svf
