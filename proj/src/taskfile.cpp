#include "svf/taskfile.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <set>
#include <sstream>

#include "svf/dataset.hpp"
#include "svf/util.hpp"

namespace svf {

namespace {

// ---------------------------------------------------------------------------
// Lexer

struct Token {
  enum class Kind { Ident, Number, Punct, Newline, End };
  Kind kind = Kind::End;
  std::string text;   // Ident name or Punct spelling ("**", "==", "(", ...)
  double num = 0.0;   // Number payload
  std::size_t line = 1, col = 1;
};

class Lexer {
 public:
  explicit Lexer(const std::string& text) : s_(text) {}

  std::vector<Token> run() {
    std::vector<Token> out;
    while (true) {
      Token t = next();
      out.push_back(t);
      if (t.kind == Token::Kind::End) break;
    }
    return out;
  }

 private:
  char peek(std::size_t ahead = 0) const {
    return pos_ + ahead < s_.size() ? s_[pos_ + ahead] : '\0';
  }
  char take() {
    char c = s_[pos_++];
    if (c == '\n') {
      ++line_;
      col_ = 1;
    } else {
      ++col_;
    }
    return c;
  }
  Token make(Token::Kind k, std::string text, std::size_t line, std::size_t col) {
    Token t;
    t.kind = k;
    t.text = std::move(text);
    t.line = line;
    t.col = col;
    return t;
  }

  Token next() {
    // skip horizontal whitespace and comments
    while (pos_ < s_.size()) {
      char c = peek();
      if (c == ' ' || c == '\t' || c == '\r') {
        take();
      } else if (c == '#') {
        while (pos_ < s_.size() && peek() != '\n') take();
      } else {
        break;
      }
    }
    const std::size_t line = line_, col = col_;
    if (pos_ >= s_.size()) return make(Token::Kind::End, "", line, col);

    char c = peek();
    if (c == '\n') {
      take();
      return make(Token::Kind::Newline, "\n", line, col);
    }

    // UTF-8 aliases: '∈' (E2 88 88) and '∫' (E2 88 AB)
    if (static_cast<unsigned char>(c) == 0xE2 && pos_ + 2 < s_.size() + 1) {
      const unsigned char b1 = static_cast<unsigned char>(peek(1));
      const unsigned char b2 = static_cast<unsigned char>(peek(2));
      if (b1 == 0x88 && (b2 == 0x88 || b2 == 0xAB)) {
        take(); take(); take();
        return make(Token::Kind::Punct, b2 == 0x88 ? "in" : "integ", line, col);
      }
    }

    if (std::isdigit(static_cast<unsigned char>(c)) ||
        (c == '.' && std::isdigit(static_cast<unsigned char>(peek(1))))) {
      std::string num;
      while (std::isdigit(static_cast<unsigned char>(peek()))) num += take();
      if (peek() == '.') {
        num += take();
        while (std::isdigit(static_cast<unsigned char>(peek()))) num += take();
      }
      if (peek() == 'e' || peek() == 'E') {
        std::size_t save = pos_;
        std::string exp;
        exp += take();
        if (peek() == '+' || peek() == '-') exp += take();
        if (std::isdigit(static_cast<unsigned char>(peek()))) {
          while (std::isdigit(static_cast<unsigned char>(peek()))) exp += take();
          num += exp;
        } else {
          pos_ = save;  // "2e" is number 2 followed by ident e
        }
      }
      Token t = make(Token::Kind::Number, num, line, col);
      t.num = std::strtod(num.c_str(), nullptr);
      return t;
    }

    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
      std::string id;
      while (std::isalnum(static_cast<unsigned char>(peek())) || peek() == '_')
        id += take();
      if (id == "in" || id == "integ")
        return make(Token::Kind::Punct, id, line, col);
      return make(Token::Kind::Ident, id, line, col);
    }

    // multi-char operators first
    if (c == '*' && peek(1) == '*') {
      take(); take();
      return make(Token::Kind::Punct, "**", line, col);
    }
    if (c == '=' && peek(1) == '=') {
      take(); take();
      return make(Token::Kind::Punct, "==", line, col);
    }
    static const std::string singles = "()[],;+-*/=.:";
    if (singles.find(c) != std::string::npos) {
      take();
      return make(Token::Kind::Punct, std::string(1, c), line, col);
    }
    throw ParseError(line, col, std::string("unexpected character '") + c + "'");
  }

  const std::string& s_;
  std::size_t pos_ = 0, line_ = 1, col_ = 1;
};

bool is_directive(const Token& t) {
  if (t.kind != Token::Kind::Ident) return false;
  static const std::set<std::string> kw = {
      "CVNumOfIter", "CVstep", "RunSolver", "Select", "GRID",
      "VAR",         "EQ",     "OBJ",       "Draw",   "EOF"};
  return kw.count(t.text) > 0;
}

// ---------------------------------------------------------------------------
// Parser

TExprPtr mk(TExpr e) { return std::make_shared<const TExpr>(std::move(e)); }

class Parser {
 public:
  Parser(std::vector<Token> toks, std::vector<std::string> scope_names)
      : toks_(std::move(toks)) {
    for (auto& n : scope_names) scope_.insert(std::move(n));
  }

  // --- token helpers -------------------------------------------------------
  const Token& cur() const { return toks_[i_]; }
  const Token& ahead(std::size_t n) const {
    return toks_[std::min(i_ + n, toks_.size() - 1)];
  }
  void bump() {
    if (cur().kind != Token::Kind::End) ++i_;
  }
  // Newlines are statement separators at depth 0 but transparent inside
  // brackets, so multi-line parenthesized expressions read naturally.
  void skip_transparent() {
    while (depth_ > 0 && cur().kind == Token::Kind::Newline) bump();
  }
  bool is_punct(const std::string& p, std::size_t n = 0) const {
    const Token& t = ahead(n);
    return t.kind == Token::Kind::Punct && t.text == p;
  }
  bool eat_punct(const std::string& p) {
    skip_transparent();
    if (is_punct(p)) {
      bump();
      return true;
    }
    return false;
  }
  void expect_punct(const std::string& p) {
    skip_transparent();
    if (!eat_punct(p))
      throw ParseError(cur().line, cur().col,
                       "expected '" + p + "', got '" + describe(cur()) + "'");
  }
  static std::string describe(const Token& t) {
    switch (t.kind) {
      case Token::Kind::End: return "end of input";
      case Token::Kind::Newline: return "end of line";
      default: return t.text;
    }
  }
  [[noreturn]] void fail(const std::string& msg) const {
    throw ParseError(cur().line, cur().col, msg);
  }

  std::string expect_ident(const std::string& what) {
    skip_transparent();
    if (cur().kind != Token::Kind::Ident)
      fail("expected " + what + ", got '" + describe(cur()) + "'");
    std::string n = cur().text;
    bump();
    return n;
  }

  double expect_number(const std::string& what) {
    skip_transparent();
    bool negate = false;
    if (is_punct("-")) {
      bump();
      negate = true;
    }
    if (cur().kind != Token::Kind::Number)
      fail("expected " + what + ", got '" + describe(cur()) + "'");
    double v = cur().num;
    bump();
    return negate ? -v : v;
  }

  std::int64_t expect_int(const std::string& what, std::int64_t lo,
                          std::int64_t hi) {
    const Token at = cur();
    double v = expect_number(what);
    if (v != std::floor(v) || v < static_cast<double>(lo) ||
        v > static_cast<double>(hi))
      throw ParseError(at.line, at.col,
                       what + " must be an integer in [" + std::to_string(lo) +
                           ", " + std::to_string(hi) + "]");
    return static_cast<std::int64_t>(v);
  }

  // --- expressions ---------------------------------------------------------
  // precedence: == | + - | * / | unary - | ** | postfix .method | primary

  TExprPtr expression() { return equality(); }

  TExprPtr equality() {
    TExprPtr lhs = additive();
    skip_transparent();
    if (is_punct("==")) {
      bump();
      TExprPtr rhs = additive();
      return mk({.kind = TExpr::Kind::Binary, .op = '=', .args = {lhs, rhs}});
    }
    return lhs;
  }

  TExprPtr additive() {
    TExprPtr lhs = multiplicative();
    while (true) {
      skip_transparent();
      if (is_punct("+") || is_punct("-")) {
        const char op = cur().text[0];
        bump();
        TExprPtr rhs = multiplicative();
        lhs = mk({.kind = TExpr::Kind::Binary, .op = op, .args = {lhs, rhs}});
      } else {
        return lhs;
      }
    }
  }

  TExprPtr multiplicative() {
    TExprPtr lhs = unary();
    while (true) {
      skip_transparent();
      if (is_punct("*") || is_punct("/")) {
        const char op = cur().text[0];
        bump();
        TExprPtr rhs = unary();
        lhs = mk({.kind = TExpr::Kind::Binary, .op = op, .args = {lhs, rhs}});
      } else {
        return lhs;
      }
    }
  }

  TExprPtr unary() {
    skip_transparent();
    if (is_punct("-")) {
      bump();
      TExprPtr x = unary();
      return mk({.kind = TExpr::Kind::Unary, .op = '-', .args = {x}});
    }
    return power();
  }

  TExprPtr power() {
    TExprPtr base = postfix();
    skip_transparent();
    if (is_punct("**")) {
      bump();
      // right-assoc; exponent may be negated: x ** -2
      TExprPtr exp = is_punct("-") ? unary() : power();
      return mk({.kind = TExpr::Kind::Binary, .op = 'p', .args = {base, exp}});
    }
    return base;
  }

  TExprPtr postfix() {
    TExprPtr e = primary();
    while (true) {
      skip_transparent();
      if (!is_punct(".")) return e;
      bump();
      const Token at = cur();
      const std::string method = expect_ident("method name");
      if (e->kind != TExpr::Kind::Name)
        throw ParseError(at.line, at.col, "method call on non-variable");
      if (method == "MSD") {
        expect_punct("(");
        expect_punct(")");
        e = mk({.kind = TExpr::Kind::Msd, .name = e->name});
      } else if (method == "Complexity") {
        expect_punct("(");
        std::vector<std::int64_t> idx;
        while (true) {
          TExprPtr a = expression();
          if (a->kind != TExpr::Kind::Penal)
            throw ParseError(at.line, at.col,
                             "Complexity arguments must be Penal[i]");
          idx.push_back(a->penals[0]);
          if (!eat_punct(",")) break;
        }
        expect_punct(")");
        e = mk({.kind = TExpr::Kind::Complexity, .name = e->name,
                .penals = std::move(idx)});
      } else {
        throw ParseError(at.line, at.col, "unknown method: " + method);
      }
    }
  }

  // Recognizes "d/dG(" and "d2/dG2(" where G names a known grid-or-name.
  bool deriv_marker(int& order, std::string& grid) const {
    const Token& t0 = toks_[i_];
    if (t0.kind != Token::Kind::Ident) return false;
    if (t0.text != "d" && t0.text != "d2") return false;
    if (!(ahead(1).kind == Token::Kind::Punct && ahead(1).text == "/")) return false;
    const Token& t2 = ahead(2);
    if (t2.kind != Token::Kind::Ident || t2.text.size() < 2 ||
        t2.text[0] != 'd')
      return false;
    if (!(ahead(3).kind == Token::Kind::Punct && ahead(3).text == "("))
      return false;
    std::string g = t2.text.substr(1);
    if (t0.text == "d2") {
      if (g.size() < 2 || g.back() != '2') return false;
      g.pop_back();
      order = 2;
    } else {
      order = 1;
    }
    grid = g;
    return true;
  }

  TExprPtr integral() {
    // after 'integ': [ '(' ] d '(' GRID ')' [ '*' ] integrand [ ')' ]
    const bool wrapped = eat_punct("(");
    if (wrapped) ++depth_;
    skip_transparent();
    const Token at = cur();
    if (!(cur().kind == Token::Kind::Ident && cur().text == "d"))
      throw ParseError(at.line, at.col, "expected d(GRID) after integral sign");
    bump();
    expect_punct("(");
    ++depth_;
    const std::string grid = expect_ident("grid name");
    check_known(grid, at);
    --depth_;
    expect_punct(")");
    eat_punct("*");
    TExprPtr body = wrapped ? expression() : multiplicative();
    if (wrapped) {
      --depth_;
      expect_punct(")");
    }
    return mk({.kind = TExpr::Kind::Integral, .name = grid, .args = {body}});
  }

  void check_known(const std::string& name, const Token& at) const {
    if (!scope_.count(name))
      throw UnknownName(at.line, at.col, name);
  }

  TExprPtr primary() {
    skip_transparent();
    const Token at = cur();
    if (at.kind == Token::Kind::Number) {
      bump();
      return mk({.kind = TExpr::Kind::Num, .num = at.num});
    }
    if (is_punct("(")) {
      bump();
      ++depth_;
      TExprPtr e = expression();
      --depth_;
      expect_punct(")");
      return e;
    }
    if (is_punct("integ")) {
      bump();
      return integral();
    }
    int order = 0;
    std::string dgrid;
    if (deriv_marker(order, dgrid)) {
      // only a declared grid turns d/dG into a marker; otherwise fall
      // through and read it as division
      if (scope_.count(dgrid)) {
        bump(); bump(); bump();  // d[2] / dG[2]
        expect_punct("(");
        ++depth_;
        TExprPtr body = expression();
        --depth_;
        expect_punct(")");
        return mk({.kind = TExpr::Kind::Deriv, .name = dgrid, .order = order,
                   .args = {body}});
      }
    }
    if (at.kind == Token::Kind::Ident) {
      bump();
      if (at.text == "Penal") {
        expect_punct("[");
        ++depth_;
        const std::int64_t idx = expect_int("penal index", 0, 1'000'000);
        --depth_;
        expect_punct("]");
        return mk({.kind = TExpr::Kind::Penal, .penals = {idx}});
      }
      if (is_punct("(")) {
        check_known(at.text, at);
        bump();
        ++depth_;
        std::vector<TExprPtr> args;
        if (!is_punct(")")) {
          while (true) {
            args.push_back(expression());
            if (!eat_punct(",")) break;
          }
        }
        --depth_;
        expect_punct(")");
        if (arity_) {
          auto it = arity_->find(at.text);
          if (it != arity_->end() && it->second != args.size())
            throw ArityError(at.line, at.col,
                             at.text + " expects " + std::to_string(it->second) +
                                 " argument(s), got " + std::to_string(args.size()));
        }
        return mk({.kind = TExpr::Kind::Apply, .name = at.text,
                   .args = std::move(args)});
      }
      check_known(at.text, at);
      return mk({.kind = TExpr::Kind::Name, .name = at.text});
    }
    fail("expected expression, got '" + describe(cur()) + "'");
  }

  // --- task-file ------------------------------------------------------------

  TaskSpec parse_file() {
    TaskSpec spec;
    bool saw_select = false, saw_cviter = false, saw_cvstep = false,
         saw_obj = false, saw_eof = false;
    while (!saw_eof) {
      // skip blank lines between directives
      while (cur().kind == Token::Kind::Newline) bump();
      if (cur().kind == Token::Kind::End) break;
      const Token at = cur();
      if (at.kind != Token::Kind::Ident)
        fail("expected a directive, got '" + describe(cur()) + "'");
      const std::string kw = at.text;
      if (!is_directive(at)) throw UnknownDirective(at.line, at.col, kw);
      bump();
      if (kw == "CVNumOfIter") {
        spec.cv_num_of_iter = expect_int("CVNumOfIter", 1, 1'000'000);
        saw_cviter = true;
      } else if (kw == "CVstep") {
        spec.cv_step = expect_int("CVstep", 2, 1'000'000'000);
        saw_cvstep = true;
      } else if (kw == "RunSolver") {
        const Token mt = cur();
        const std::string m = expect_ident("run mode");
        if (m == "Local") spec.run_solver = RunMode::Local;
        else if (m == "LocalParallel") spec.run_solver = RunMode::LocalParallel;
        else if (m == "ServerParallel") spec.run_solver = RunMode::ServerParallel;
        else throw ParseError(mt.line, mt.col, "unknown run mode: " + m);
      } else if (kw == "Select") {
        parse_select(spec);
        saw_select = true;
      } else if (kw == "GRID") {
        eat_punct(":");
        parse_grid_section(spec);
      } else if (kw == "VAR") {
        eat_punct(":");
        parse_var_section(spec);
      } else if (kw == "EQ") {
        eat_punct(":");
        parse_eq_section(spec);
      } else if (kw == "OBJ") {
        eat_punct(":");
        parse_obj_section(spec, at);
        saw_obj = true;
      } else if (kw == "Draw") {
        spec.draw = true;
      } else if (kw == "EOF") {
        saw_eof = true;
        continue;
      }
      end_of_statement();
    }
    if (!saw_select) throw ParseError(1, 1, "missing Select section");
    if (spec.vars.empty()) throw ParseError(1, 1, "missing VAR section");
    if (!saw_obj) throw ParseError(1, 1, "missing OBJ section");
    if (!saw_cvstep) throw ParseError(1, 1, "missing CVstep");
    if (!saw_cviter) throw ParseError(1, 1, "missing CVNumOfIter");
    finish_objective(spec);
    return spec;
  }

  void end_of_statement() {
    skip_transparent();
    while (eat_punct(";")) {}
    if (cur().kind == Token::Kind::Newline || cur().kind == Token::Kind::End)
      return;
    if (cur().kind == Token::Kind::Ident && is_directive(cur())) return;
    fail("unexpected '" + describe(cur()) + "' after statement");
  }

  // True when the upcoming token opens a new directive (section end).
  bool at_section_end() {
    std::size_t save = i_;
    while (toks_[save].kind == Token::Kind::Newline) ++save;
    const Token& t = toks_[save];
    if (t.kind == Token::Kind::End) return true;
    return is_directive(t);
  }

  // Advances over separators between statements of one section; false when
  // the section is over.
  bool next_statement() {
    while (cur().kind == Token::Kind::Newline || is_punct(";")) bump();
    if (cur().kind == Token::Kind::End) return false;
    return !is_directive(cur());
  }

  void parse_select(TaskSpec& spec) {
    while (true) {
      spec.data_columns.push_back(expect_ident("column name"));
      if (!eat_punct(",")) break;
    }
    if (!(cur().kind == Token::Kind::Ident && cur().text == "from"))
      fail("expected 'from'");
    bump();
    // path: raw text to end of line
    std::string path;
    while (cur().kind != Token::Kind::Newline && cur().kind != Token::Kind::End) {
      path += cur().kind == Token::Kind::Number ? cur().text : describe(cur());
      bump();
    }
    if (path.empty()) fail("expected data path after 'from'");
    spec.data_path = path;
    std::set<std::string> seen;
    for (auto& c : spec.data_columns)
      if (!seen.insert(c).second)
        throw DuplicateName(toks_[i_ ? i_ - 1 : 0].line, 1, c);
  }

  void declare(TaskSpec& spec, const std::string& name, const Token& at) {
    if (scope_.count(name)) throw DuplicateName(at.line, at.col, name);
    scope_.insert(name);
    (void)spec;
  }

  void parse_grid_section(TaskSpec& spec) {
    do {
      if (at_section_end()) break;
      skip_newlines_shallow();
      const Token at = cur();
      GridDecl g;
      g.line = at.line;
      g.name = expect_ident("grid name");
      declare(spec, g.name, at);
      expect_punct("in");
      expect_punct("[");
      ++depth_;
      g.min = expect_number("grid min");
      expect_punct(",");
      g.max = expect_number("grid max");
      expect_punct(",");
      g.step = expect_number("grid step");
      --depth_;
      expect_punct("]");
      if (!(g.min < g.max))
        throw ParseError(at.line, at.col, "grid min must be < max");
      if (!(g.step > 0))
        throw ParseError(at.line, at.col, "grid step must be positive");
      if (g.step > g.max - g.min)
        throw ParseError(at.line, at.col, "grid step exceeds span");
      spec.grids.push_back(std::move(g));
    } while (next_statement());
  }

  void skip_newlines_shallow() {
    while (cur().kind == Token::Kind::Newline) bump();
  }

  void parse_var_section(TaskSpec& spec) {
    do {
      if (at_section_end()) break;
      skip_newlines_shallow();
      const Token at = cur();
      const std::string name = expect_ident("variable name");
      if (name == "PolyPow") {
        if (spec.vars.empty())
          throw ParseError(at.line, at.col, "PolyPow before any variable");
        eat_punct("=");
        const Token nt = cur();
        const std::int64_t p = expect_int("PolyPow", 1, 64);
        VarDecl& v = spec.vars.back();
        if (v.kind == VarDecl::Kind::Scalar)
          throw ParseError(nt.line, nt.col,
                           "PolyPow applies to a function variable");
        v.kind = VarDecl::Kind::Polynomial;
        v.poly_pow = p;
        continue;
      }
      VarDecl v;
      v.line = at.line;
      v.name = name;
      if (eat_punct("(")) {
        ++depth_;
        while (true) {
          const Token gt = cur();
          const std::string g = expect_ident("grid name");
          check_known(g, gt);
          bool is_grid = false;
          for (auto& gd : spec.grids) is_grid |= gd.name == g;
          if (!is_grid)
            throw ParseError(gt.line, gt.col, g + " is not a grid");
          v.arg_grids.push_back(g);
          if (!eat_punct(",")) break;
        }
        --depth_;
        expect_punct(")");
        if (v.arg_grids.size() > 2)
          throw ParseError(at.line, at.col,
                           "functions take one or two grid arguments");
        v.kind = VarDecl::Kind::GridFunction;
      } else {
        v.kind = VarDecl::Kind::Scalar;
      }
      declare(spec, v.name, at);
      spec.vars.push_back(std::move(v));
    } while (next_statement());
    // expression parsing below needs declared arities
    if (!arity_storage_) arity_storage_.emplace();
    for (auto& v : spec.vars)
      if (v.kind != VarDecl::Kind::Scalar)
        (*arity_storage_)[v.name] = v.arg_grids.size();
    arity_ = &*arity_storage_;
  }

  void parse_eq_section(TaskSpec& spec) {
    do {
      if (at_section_end()) break;
      skip_newlines_shallow();
      const Token at = cur();
      TExprPtr e = expression();
      if (!(e->kind == TExpr::Kind::Binary && e->op == '='))
        throw ParseError(at.line, at.col, "equation must contain '=='");
      spec.equations.push_back({e->args[0], e->args[1], at.line});
    } while (next_statement());
  }

  void parse_obj_section(TaskSpec& spec, const Token& at) {
    if (!spec.objective.terms.empty())
      throw ParseError(at.line, at.col, "multiple OBJ sections");
    do {
      if (at_section_end()) break;
      skip_newlines_shallow();
      TExprPtr e = expression();
      if (e->kind == TExpr::Kind::Binary && e->op == '=')
        fail("objective cannot contain '=='");
      append_objective(spec.objective, e);
    } while (next_statement());
    if (spec.objective.terms.empty())
      throw ParseError(at.line, at.col, "empty OBJ section");
  }

  // Splits the top-level '+' chain into terms and classifies each.
  void append_objective(ObjectiveDecl& obj, const TExprPtr& e) {
    if (e->kind == TExpr::Kind::Binary && e->op == '+') {
      append_objective(obj, e->args[0]);
      append_objective(obj, e->args[1]);
      return;
    }
    ObjectiveTerm t;
    if (e->kind == TExpr::Kind::Msd) {
      t.kind = ObjectiveTerm::Kind::Msd;
      t.var = e->name;
    } else if (e->kind == TExpr::Kind::Complexity) {
      t.kind = ObjectiveTerm::Kind::Complexity;
      t.var = e->name;
      t.penals = e->penals;
    } else {
      t.kind = ObjectiveTerm::Kind::Explicit;
      t.expr = e;
    }
    obj.terms.push_back(std::move(t));
  }

  void finish_objective(TaskSpec& spec) {
    // Penal arity: defined by Complexity declarations when present,
    // otherwise by the largest explicit Penal reference.
    std::int64_t max_complexity = -1, max_any = -1;
    bool has_fit = false;
    for (const auto& t : spec.objective.terms) {
      if (t.kind == ObjectiveTerm::Kind::Msd) has_fit = true;
      for (std::int64_t p : t.penals)
        max_complexity = std::max(max_complexity, p);
      if (t.expr) {
        walk_penals(*t.expr, max_any);
        has_fit |= contains_msd(*t.expr);
      }
    }
    max_any = std::max(max_any, max_complexity);
    spec.objective.n_alpha =
        (max_complexity >= 0 ? max_complexity : max_any) + 1;
    if (!has_fit)
      throw ParseError(1, 1, "objective must contain at least one MSD() term");
  }

  static void walk_penals(const TExpr& e, std::int64_t& mx) {
    if (e.kind == TExpr::Kind::Penal) mx = std::max(mx, e.penals[0]);
    for (const auto& a : e.args) walk_penals(*a, mx);
  }
  static bool contains_msd(const TExpr& e) {
    if (e.kind == TExpr::Kind::Msd) return true;
    for (const auto& a : e.args)
      if (contains_msd(*a)) return true;
    return false;
  }

 private:
  std::vector<Token> toks_;
  std::size_t i_ = 0;
  int depth_ = 0;
  std::set<std::string> scope_;
  std::optional<std::unordered_map<std::string, std::size_t>> arity_storage_;
  const std::unordered_map<std::string, std::size_t>* arity_ = nullptr;
};

int precedence(const TExpr& e) {
  switch (e.kind) {
    case TExpr::Kind::Binary:
      switch (e.op) {
        case '=': return 0;
        case '+': case '-': return 1;
        case '*': case '/': return 2;
        case 'p': return 4;
        default: return 5;
      }
    case TExpr::Kind::Unary: return 3;
    default: return 6;
  }
}

void print_expr(std::ostringstream& os, const TExpr& e, int parent_prec) {
  const int prec = precedence(e);
  const bool paren = prec < parent_prec;
  if (paren) os << '(';
  switch (e.kind) {
    case TExpr::Kind::Num: os << format_double(e.num); break;
    case TExpr::Kind::Name: os << e.name; break;
    case TExpr::Kind::Penal: os << "Penal[" << e.penals[0] << ']'; break;
    case TExpr::Kind::Unary:
      os << '-';
      print_expr(os, *e.args[0], prec + 1);
      break;
    case TExpr::Kind::Binary: {
      const char* op = e.op == 'p' ? "**" : (e.op == '=' ? " == " : nullptr);
      print_expr(os, *e.args[0], e.op == 'p' ? prec + 1 : prec);
      if (op) os << op;
      else os << e.op;
      // left-assoc operators need parens on right child of equal precedence
      print_expr(os, *e.args[1], e.op == 'p' ? prec : prec + 1);
      break;
    }
    case TExpr::Kind::Apply: {
      os << e.name << '(';
      for (std::size_t i = 0; i < e.args.size(); ++i) {
        if (i) os << ", ";
        print_expr(os, *e.args[i], 0);
      }
      os << ')';
      break;
    }
    case TExpr::Kind::Deriv:
      if (e.order == 1) os << "d/d" << e.name << '(';
      else os << "d2/d" << e.name << "2(";
      print_expr(os, *e.args[0], 0);
      os << ')';
      break;
    case TExpr::Kind::Integral:
      os << "integ(d(" << e.name << ")*(";
      print_expr(os, *e.args[0], 0);
      os << "))";
      break;
    case TExpr::Kind::Msd: os << e.name << ".MSD()"; break;
    case TExpr::Kind::Complexity:
      os << e.name << ".Complexity(";
      for (std::size_t i = 0; i < e.penals.size(); ++i) {
        if (i) os << ", ";
        os << "Penal[" << e.penals[i] << ']';
      }
      os << ')';
      break;
  }
  if (paren) os << ')';
}

}  // namespace

std::string to_string(const TExpr& e) {
  std::ostringstream os;
  print_expr(os, e, 0);
  return os.str();
}

bool equal(const TExpr& a, const TExpr& b) {
  return to_string(a) == to_string(b);
}

const GridDecl* TaskSpec::find_grid(const std::string& name) const {
  for (const auto& g : grids)
    if (g.name == name) return &g;
  return nullptr;
}

const VarDecl* TaskSpec::find_var(const std::string& name) const {
  for (const auto& v : vars)
    if (v.name == name) return &v;
  return nullptr;
}

TaskSpec parse_taskfile(const std::string& text) {
  Parser p(Lexer(text).run(), {});
  return p.parse_file();
}

TExprPtr parse_expression(const std::string& text,
                          const std::vector<std::string>& scope) {
  Parser p(Lexer(text).run(), scope);
  TExprPtr e = p.expression();
  return e;
}

std::string print_taskfile(const TaskSpec& spec) {
  std::ostringstream os;
  os << "CVNumOfIter " << spec.cv_num_of_iter << '\n';
  os << "CVstep " << spec.cv_step << '\n';
  os << "RunSolver "
     << (spec.run_solver == RunMode::Local ? "Local"
         : spec.run_solver == RunMode::LocalParallel ? "LocalParallel"
                                                     : "ServerParallel")
     << '\n';
  os << "Select ";
  for (std::size_t i = 0; i < spec.data_columns.size(); ++i) {
    if (i) os << ", ";
    os << spec.data_columns[i];
  }
  os << " from " << spec.data_path << '\n';
  if (!spec.grids.empty()) {
    os << "GRID:";
    for (const auto& g : spec.grids)
      os << ' ' << g.name << " in [" << format_double(g.min) << ", "
         << format_double(g.max) << ", " << format_double(g.step) << "];";
    os << '\n';
  }
  os << "VAR:";
  for (const auto& v : spec.vars) {
    os << ' ' << v.name;
    if (v.kind != VarDecl::Kind::Scalar) {
      os << '(';
      for (std::size_t i = 0; i < v.arg_grids.size(); ++i) {
        if (i) os << ", ";
        os << v.arg_grids[i];
      }
      os << ')';
    }
    os << ';';
    if (v.kind == VarDecl::Kind::Polynomial)
      os << " PolyPow = " << v.poly_pow << ';';
  }
  os << '\n';
  if (!spec.equations.empty()) {
    os << "EQ:";
    for (const auto& eq : spec.equations)
      os << ' ' << to_string(*eq.lhs) << " == " << to_string(*eq.rhs) << ';';
    os << '\n';
  }
  os << "OBJ: ";
  for (std::size_t i = 0; i < spec.objective.terms.size(); ++i) {
    const auto& t = spec.objective.terms[i];
    if (i) os << " + ";
    switch (t.kind) {
      case ObjectiveTerm::Kind::Msd: os << t.var << ".MSD()"; break;
      case ObjectiveTerm::Kind::Complexity:
        os << t.var << ".Complexity(";
        for (std::size_t j = 0; j < t.penals.size(); ++j) {
          if (j) os << ", ";
          os << "Penal[" << t.penals[j] << ']';
        }
        os << ')';
        break;
      case ObjectiveTerm::Kind::Explicit: os << to_string(*t.expr); break;
    }
  }
  os << '\n';
  if (spec.draw) os << "Draw\n";
  os << "EOF\n";
  return os.str();
}

bool operator==(const TaskSpec& a, const TaskSpec& b) {
  // the printer is canonical and injective on parsed specs
  return print_taskfile(a) == print_taskfile(b);
}

namespace {

void collect_refs(const TExpr& e, std::vector<const TExpr*>& out) {
  out.push_back(&e);
  for (const auto& a : e.args) collect_refs(*a, out);
}

}  // namespace

std::vector<std::string> validate(const TaskSpec& spec, const Dataset* data) {
  std::vector<std::string> diags;
  auto is_grid = [&](const std::string& n) { return spec.find_grid(n) != nullptr; };
  auto is_name = [&](const std::string& n) {
    return is_grid(n) || spec.find_var(n) != nullptr;
  };

  for (const auto& g : spec.grids) {
    std::string warning;
    build_grid(g, &warning);
    if (!warning.empty()) diags.push_back(warning);
  }

  for (const auto& v : spec.vars) {
    for (const auto& g : v.arg_grids)
      if (!is_grid(g))
        diags.push_back("variable " + v.name + ": " + g + " is not a grid");
    if (v.kind == VarDecl::Kind::GridFunction && v.arg_grids.size() == 2)
      diags.push_back("variable " + v.name +
                      ": two-argument grid functions are not supported; "
                      "declare PolyPow to make it a polynomial");
  }

  // name and marker cross-references in equations and explicit objective terms
  std::vector<const TExpr*> refs;
  for (const auto& eq : spec.equations) {
    collect_refs(*eq.lhs, refs);
    collect_refs(*eq.rhs, refs);
  }
  for (const auto& t : spec.objective.terms)
    if (t.expr) collect_refs(*t.expr, refs);
  for (const TExpr* e : refs) {
    if (e->kind == TExpr::Kind::Name || e->kind == TExpr::Kind::Apply) {
      if (!is_name(e->name)) diags.push_back("unknown name: " + e->name);
    } else if (e->kind == TExpr::Kind::Deriv || e->kind == TExpr::Kind::Integral) {
      if (!is_grid(e->name))
        diags.push_back("marker references unknown grid: " + e->name);
    }
  }

  // penal coverage
  const std::int64_t n_alpha = spec.objective.n_alpha;
  std::vector<bool> used(static_cast<std::size_t>(std::max<std::int64_t>(n_alpha, 0)), false);
  auto use = [&](std::int64_t i, const char* where) {
    if (i >= n_alpha)
      diags.push_back(std::string("penal index out of range: Penal[") +
                      std::to_string(i) + "] in " + where);
    else
      used[static_cast<std::size_t>(i)] = true;
  };
  for (const auto& t : spec.objective.terms) {
    for (std::int64_t p : t.penals) use(p, "Complexity");
    if (t.expr) {
      std::vector<const TExpr*> es;
      collect_refs(*t.expr, es);
      for (const TExpr* e : es)
        if (e->kind == TExpr::Kind::Penal) use(e->penals[0], "objective");
    }
  }
  for (std::size_t i = 0; i < used.size(); ++i)
    if (!used[i])
      diags.push_back("penal index " + std::to_string(i) + " never referenced");

  // Complexity / MSD targets
  for (const auto& t : spec.objective.terms) {
    if (t.kind == ObjectiveTerm::Kind::Msd) {
      const VarDecl* v = spec.find_var(t.var);
      if (!v) diags.push_back("MSD target not declared: " + t.var);
      else if (v->kind != VarDecl::Kind::GridFunction)
        diags.push_back("MSD target must be a measured grid function: " + t.var);
    } else if (t.kind == ObjectiveTerm::Kind::Complexity) {
      const VarDecl* v = spec.find_var(t.var);
      if (!v) {
        diags.push_back("Complexity target not declared: " + t.var);
      } else if (v->kind == VarDecl::Kind::Scalar) {
        diags.push_back("Complexity target must be a function: " + t.var);
      } else {
        const std::size_t arity =
            v->kind == VarDecl::Kind::GridFunction ? 1 : v->arg_grids.size();
        if (t.penals.size() != arity)
          diags.push_back("Complexity(" + t.var + "): expected " +
                          std::to_string(arity) + " penal argument(s), got " +
                          std::to_string(t.penals.size()));
      }
    }
  }

  if (data) {
    for (const auto& v : spec.vars) {
      if (v.kind != VarDecl::Kind::GridFunction || !data->has_column(v.name))
        continue;
      const GridDecl* g = spec.find_grid(v.arg_grids[0]);
      if (!g) continue;
      if (!data->has_column(g->name)) {
        diags.push_back("measured variable " + v.name +
                        " needs coordinate column " + g->name);
        continue;
      }
      const auto& coords = data->column(g->name);
      for (std::size_t k = 0; k < coords.size(); ++k)
        if (coords[k] < g->min - 1e-9 * g->step ||
            coords[k] > g->max + 1e-9 * g->step)
          diags.push_back("measurement outside grid domain: row " +
                          std::to_string(k) + ", " + g->name + "=" +
                          format_double(coords[k]));
    }
    if (spec.cv_step > static_cast<std::int64_t>(data->rows()))
      diags.push_back("CVstep " + std::to_string(spec.cv_step) +
                      " exceeds row count " + std::to_string(data->rows()));
    bool any_measured = false;
    for (const auto& v : spec.vars)
      any_measured |= v.kind == VarDecl::Kind::GridFunction && data->has_column(v.name);
    if (!any_measured)
      diags.push_back("no declared variable matches a selected data column");
  }
  return diags;
}

}  // namespace svf
