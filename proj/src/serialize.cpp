#include <algorithm>
#include <bit>
#include <cstdlib>
#include <sstream>
#include <string>

#include "svf/compiler.hpp"
#include "svf/util.hpp"

// Portable text form of an NlpProblem. The node list is written in arena
// order and restored verbatim (no interning), so evaluation of the restored
// problem is bit-identical to the original. Constants travel as hexfloats.

namespace svf {

namespace {

constexpr const char* kTag = "svfnlp/1";

const char* op_word(Op op) {
  switch (op) {
    case Op::Const: return "const";
    case Op::Var: return "var";
    case Op::Param: return "param";
    case Op::Add: return "add";
    case Op::Sub: return "sub";
    case Op::Mul: return "mul";
    case Op::Div: return "div";
    case Op::Neg: return "neg";
    case Op::Sin: return "sin";
    case Op::Cos: return "cos";
    case Op::Exp: return "exp";
    case Op::Log: return "log";
    case Op::AbsSmooth: return "abss";
    case Op::Sum: return "sum";
  }
  return "?";
}

char seg_kind_char(VarSegment::Kind k) {
  switch (k) {
    case VarSegment::Kind::GridFunction: return 'g';
    case VarSegment::Kind::PolyCoeffs: return 'p';
    case VarSegment::Kind::Scalar: return 's';
  }
  return '?';
}

VarSegment::Kind seg_kind_from(const std::string& s) {
  if (s == "g") return VarSegment::Kind::GridFunction;
  if (s == "p") return VarSegment::Kind::PolyCoeffs;
  if (s == "s") return VarSegment::Kind::Scalar;
  throw MalformedFrame("bad segment kind: " + s);
}

// Token reader with uniform error reporting.
struct Scanner {
  std::istringstream in;
  explicit Scanner(const std::string& text) : in(text) {}

  std::string word() {
    std::string t;
    if (!(in >> t)) throw MalformedFrame("unexpected end of problem text");
    return t;
  }
  void expect(const std::string& kw) {
    const std::string t = word();
    if (t != kw) throw MalformedFrame("expected '" + kw + "', got '" + t + "'");
  }
  std::int64_t integer() {
    const std::string t = word();
    char* end = nullptr;
    const long long v = std::strtoll(t.c_str(), &end, 10);
    if (end == t.c_str() || *end) throw MalformedFrame("bad integer: " + t);
    return v;
  }
  double real() {
    const std::string t = word();
    char* end = nullptr;
    const double v = std::strtod(t.c_str(), &end);
    if (end == t.c_str() || *end) throw MalformedFrame("bad number: " + t);
    return v;
  }
};

}  // namespace

std::string serialize_problem(const NlpProblem& p) {
  if (!p.arena) throw MalformedFrame("cannot serialize an empty problem");
  const Arena& a = *p.arena;
  std::ostringstream out;
  out << kTag << "\n";

  out << "vars " << a.var_count() << "\n";
  for (std::int32_t i = 0; i < a.var_count(); ++i) out << a.var_name(i) << "\n";

  out << "layout " << p.layout.size() << "\n";
  for (const auto& s : p.layout) {
    out << seg_kind_char(s.kind) << " " << s.offset << " " << s.count << " "
        << s.degree << " " << s.grids.size() << " " << s.name;
    for (const auto& g : s.grids) out << " " << g;
    out << "\n";
  }

  out << "alpha " << p.n_alpha << "\n";
  out << "training " << p.training_rows.size();
  for (const std::size_t r : p.training_rows) out << " " << r;
  out << "\n";

  out << "nodes " << a.size() << "\n";
  for (std::size_t i = 0; i < a.size(); ++i) {
    const Node& n = a.node(static_cast<NodeId>(i));
    out << op_word(n.op);
    switch (n.op) {
      case Op::Const: out << " " << format_hex(n.value); break;
      case Op::Var:
      case Op::Param: out << " " << n.index; break;
      case Op::Add:
      case Op::Sub:
      case Op::Mul:
      case Op::Div: out << " " << n.a << " " << n.b; break;
      case Op::Neg:
      case Op::Sin:
      case Op::Cos:
      case Op::Exp:
      case Op::Log:
      case Op::AbsSmooth: out << " " << n.a; break;
      case Op::Sum: {
        const auto kids = a.sum_children(n);
        out << " " << kids.size();
        for (const NodeId c : kids) out << " " << c;
        break;
      }
    }
    out << "\n";
  }

  out << "objective " << p.objective << "\n";
  out << "constraints " << p.constraints.size();
  for (const NodeId c : p.constraints) out << " " << c;
  out << "\nend\n";
  return out.str();
}

NlpProblem deserialize_problem(const std::string& text) {
  Scanner sc(text);
  {
    std::string tag;
    if (!(sc.in >> tag)) throw MalformedFrame("empty problem text");
    if (tag != kTag) throw VersionError("unsupported problem format: " + tag);
  }

  NlpProblem p;
  p.arena = std::make_shared<Arena>();
  Arena& a = *p.arena;

  sc.expect("vars");
  const std::int64_t nvars = sc.integer();
  if (nvars < 0) throw MalformedFrame("negative variable count");
  for (std::int64_t i = 0; i < nvars; ++i) a.add_var_name(sc.word());

  sc.expect("layout");
  const std::int64_t nsegs = sc.integer();
  for (std::int64_t i = 0; i < nsegs; ++i) {
    VarSegment s;
    s.kind = seg_kind_from(sc.word());
    s.offset = static_cast<std::size_t>(sc.integer());
    s.count = static_cast<std::size_t>(sc.integer());
    s.degree = sc.integer();
    const std::int64_t ngrids = sc.integer();
    s.name = sc.word();
    for (std::int64_t g = 0; g < ngrids; ++g) s.grids.push_back(sc.word());
    if (s.offset + s.count > static_cast<std::size_t>(nvars))
      throw MalformedFrame("segment " + s.name + " exceeds the variable table");
    p.layout.push_back(std::move(s));
  }

  sc.expect("alpha");
  p.n_alpha = static_cast<std::int32_t>(sc.integer());
  sc.expect("training");
  const std::int64_t nrows = sc.integer();
  for (std::int64_t i = 0; i < nrows; ++i)
    p.training_rows.push_back(static_cast<std::size_t>(sc.integer()));

  sc.expect("nodes");
  const std::int64_t nnodes = sc.integer();
  std::vector<NodeId> kids;
  for (std::int64_t i = 0; i < nnodes; ++i) {
    const std::string op = sc.word();
    Node n{.op = Op::Const};
    auto child = [&]() {
      const std::int64_t c = sc.integer();
      if (c < 0 || c >= i) throw MalformedFrame("child id out of order");
      return static_cast<NodeId>(c);
    };
    kids.clear();
    if (op == "const") {
      n.value = sc.real();
    } else if (op == "var" || op == "param") {
      n.op = op == "var" ? Op::Var : Op::Param;
      n.index = static_cast<std::int32_t>(sc.integer());
      if (n.index < 0 || (n.op == Op::Var && n.index >= nvars))
        throw MalformedFrame("bad " + op + " index");
    } else if (op == "add" || op == "sub" || op == "mul" || op == "div") {
      n.op = op == "add" ? Op::Add
             : op == "sub" ? Op::Sub
             : op == "mul" ? Op::Mul
                           : Op::Div;
      n.a = child();
      n.b = child();
    } else if (op == "neg" || op == "sin" || op == "cos" || op == "exp" ||
               op == "log" || op == "abss") {
      n.op = op == "neg" ? Op::Neg
             : op == "sin" ? Op::Sin
             : op == "cos" ? Op::Cos
             : op == "exp" ? Op::Exp
             : op == "log" ? Op::Log
                           : Op::AbsSmooth;
      n.a = child();
    } else if (op == "sum") {
      n.op = Op::Sum;
      const std::int64_t count = sc.integer();
      if (count < 0) throw MalformedFrame("negative sum arity");
      for (std::int64_t c = 0; c < count; ++c) kids.push_back(child());
    } else {
      throw MalformedFrame("unknown node op: " + op);
    }
    a.push_raw(n, kids);
  }

  sc.expect("objective");
  const std::int64_t obj = sc.integer();
  if (obj < 0 || obj >= nnodes) throw MalformedFrame("objective id out of range");
  p.objective = static_cast<NodeId>(obj);

  sc.expect("constraints");
  const std::int64_t ncons = sc.integer();
  for (std::int64_t i = 0; i < ncons; ++i) {
    const std::int64_t c = sc.integer();
    if (c < 0 || c >= nnodes) throw MalformedFrame("constraint id out of range");
    p.constraints.push_back(static_cast<NodeId>(c));
  }
  sc.expect("end");
  return p;
}

bool structurally_equal(const NlpProblem& x, const NlpProblem& y) {
  if (!x.arena || !y.arena) return x.arena == y.arena;
  const Arena& a = *x.arena;
  const Arena& b = *y.arena;
  if (a.var_count() != b.var_count() || a.size() != b.size()) return false;
  for (std::int32_t i = 0; i < a.var_count(); ++i)
    if (a.var_name(i) != b.var_name(i)) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const Node& na = a.node(static_cast<NodeId>(i));
    const Node& nb = b.node(static_cast<NodeId>(i));
    if (na.op != nb.op || na.index != nb.index) return false;
    if (std::bit_cast<std::uint64_t>(na.value) !=
        std::bit_cast<std::uint64_t>(nb.value))
      return false;
    if (na.op == Op::Sum) {
      const auto ka = a.sum_children(na);
      const auto kb = b.sum_children(nb);
      if (!std::equal(ka.begin(), ka.end(), kb.begin(), kb.end())) return false;
    } else if (na.a != nb.a || na.b != nb.b) {
      return false;
    }
  }
  if (x.objective != y.objective || x.constraints != y.constraints ||
      x.n_alpha != y.n_alpha || x.training_rows != y.training_rows)
    return false;
  if (x.layout.size() != y.layout.size()) return false;
  for (std::size_t i = 0; i < x.layout.size(); ++i) {
    const auto& sa = x.layout[i];
    const auto& sb = y.layout[i];
    if (sa.kind != sb.kind || sa.name != sb.name || sa.grids != sb.grids ||
        sa.offset != sb.offset || sa.count != sb.count || sa.degree != sb.degree)
      return false;
  }
  return true;
}

}  // namespace svf
