#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "svf/dataset.hpp"
#include "svf/taskfile.hpp"

using namespace svf;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  REQUIRE(in.good());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

std::vector<std::filesystem::path> golden_files() {
  std::vector<std::filesystem::path> out;
  for (const char* dir : {SVF_GOLDEN_DIR, SVF_GOLDEN_DIR "/../../models"})
    for (const auto& e : std::filesystem::directory_iterator(dir))
      if (e.path().extension() == ".svf") out.push_back(e.path());
  REQUIRE(!out.empty());
  return out;
}

}  // namespace

TEST_SUITE_BEGIN("taskfile");

TEST_CASE("verbatim oscillator task-file parses to the documented spec") {
  const TaskSpec s = parse_taskfile(slurp(std::filesystem::path(SVF_GOLDEN_DIR) / "fig5.svf"));
  CHECK(s.cv_num_of_iter == 20);
  CHECK(s.cv_step == 21);
  CHECK(s.run_solver == RunMode::ServerParallel);
  CHECK(s.data_path == "../DATA/Spring5.dat");
  CHECK(s.data_columns == std::vector<std::string>{"x", "t"});
  REQUIRE(s.grids.size() == 3);
  CHECK(s.grids[0].name == "t");
  CHECK(s.grids[0].min == -1.0);
  CHECK(s.grids[0].max == 2.5);
  CHECK(s.grids[0].step == 0.025);
  CHECK(s.grids[1].name == "X");
  CHECK(s.grids[2].name == "V");
  REQUIRE(s.vars.size() == 3);
  CHECK(s.vars[0].kind == VarDecl::Kind::GridFunction);
  CHECK(s.vars[0].arg_grids == std::vector<std::string>{"t"});
  CHECK(s.vars[1].name == "v");
  CHECK(s.vars[2].kind == VarDecl::Kind::Polynomial);
  CHECK(s.vars[2].poly_pow == 6);
  CHECK(s.vars[2].arg_grids == std::vector<std::string>{"X", "V"});
  REQUIRE(s.equations.size() == 2);
  CHECK(to_string(*s.equations[0].lhs) == "d2/dt2(x(t))");
  CHECK(to_string(*s.equations[0].rhs) == "f(x(t), v(t))");
  REQUIRE(s.objective.terms.size() == 2);
  CHECK(s.objective.terms[0].kind == ObjectiveTerm::Kind::Msd);
  CHECK(s.objective.terms[0].var == "x");
  CHECK(s.objective.terms[1].kind == ObjectiveTerm::Kind::Complexity);
  CHECK(s.objective.terms[1].var == "f");
  CHECK(s.objective.terms[1].penals == std::vector<std::int64_t>{0, 1});
  CHECK(s.objective.n_alpha == 2);
  CHECK(s.draw);
  CHECK(validate(s).empty());
}

TEST_CASE("round-trip print/parse is the identity on all golden files") {
  for (const auto& p : golden_files()) {
    CAPTURE(p.string());
    const TaskSpec s = parse_taskfile(slurp(p));
    const std::string printed = print_taskfile(s);
    const TaskSpec again = parse_taskfile(printed);
    CHECK(again == s);
    CHECK(print_taskfile(again) == printed);
  }
}

TEST_CASE("empty input reports the missing Select section") {
  try {
    parse_taskfile("");
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.detail == "missing Select section");
  }
}

TEST_CASE("PolyPow must be at least one") {
  const std::string text =
      "CVNumOfIter 1\nCVstep 2\nSelect x, t from d.dat\n"
      "GRID: t in [0, 1, 0.5]; X in [0, 1, 0.5]\n"
      "VAR: x(t); f(X); PolyPow = 0\nOBJ: x.MSD()\nEOF\n";
  CHECK_THROWS_AS(parse_taskfile(text), ParseError);
}

TEST_CASE("errors carry positions and expected tokens") {
  try {
    parse_taskfile("CVNumOfIter oops\n");
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.line == 1);
    CHECK(e.col == 13);
    CHECK(e.detail.find("CVNumOfIter") != std::string::npos);
  }
  CHECK_THROWS_AS(parse_taskfile("Frobnicate 3\n"), UnknownDirective);
  // duplicate names share one namespace across grids and vars
  CHECK_THROWS_AS(
      parse_taskfile("CVNumOfIter 1\nCVstep 2\nSelect x, t from d\n"
                     "GRID: t in [0,1,0.5]; t in [0,1,0.5]\n"
                     "VAR: x(t)\nOBJ: x.MSD()\nEOF\n"),
      DuplicateName);
  CHECK_THROWS_AS(
      parse_taskfile("CVNumOfIter 1\nCVstep 2\nSelect x, t from d\n"
                     "GRID: t in [0,1,0.5]\nVAR: x(t); x\nOBJ: x.MSD()\nEOF\n"),
      DuplicateName);
}

TEST_CASE("expression markers parse to the documented shapes") {
  const std::vector<std::string> scope{"t", "X", "V", "x", "v", "f"};
  const TExprPtr eq = parse_expression("d2/dt2(x(t)) == f(x(t),v(t))", scope);
  REQUIRE(eq->kind == TExpr::Kind::Binary);
  CHECK(eq->op == '=');
  CHECK(eq->args[0]->kind == TExpr::Kind::Deriv);
  CHECK(eq->args[0]->order == 2);
  CHECK(eq->args[0]->name == "t");
  CHECK(eq->args[1]->kind == TExpr::Kind::Apply);
  CHECK(eq->args[1]->args.size() == 2);

  const TExprPtr x = parse_expression("x(t)", scope);
  CHECK(x->kind == TExpr::Kind::Apply);
  CHECK(x->args[0]->kind == TExpr::Kind::Name);

  // the explicit complexity integral, verbatim
  const TExprPtr c = parse_expression(
      "Penal[0]**2 *∫ d(X)*∫( d(X)*(d2/dX2(f(X,V)))**2)", scope);
  REQUIRE(c->kind == TExpr::Kind::Binary);
  CHECK(c->op == '*');
  CHECK(c->args[0]->kind == TExpr::Kind::Binary);
  CHECK(c->args[0]->op == 'p');
  CHECK(c->args[0]->args[0]->kind == TExpr::Kind::Penal);
  const TExpr& outer = *c->args[1];
  REQUIRE(outer.kind == TExpr::Kind::Integral);
  CHECK(outer.name == "X");
  const TExpr& inner = *outer.args[0];
  REQUIRE(inner.kind == TExpr::Kind::Integral);
  CHECK(inner.name == "X");
  const TExpr& body = *inner.args[0];
  REQUIRE(body.kind == TExpr::Kind::Binary);
  CHECK(body.op == 'p');
  CHECK(body.args[0]->kind == TExpr::Kind::Deriv);
  CHECK(body.args[0]->order == 2);
  CHECK(body.args[0]->name == "X");
}

TEST_CASE("unknown names and bad arity are rejected") {
  CHECK_THROWS_AS(parse_expression("q(t)", {"t"}), UnknownName);
  CHECK_THROWS_AS(
      parse_taskfile("CVNumOfIter 1\nCVstep 2\nSelect x, t from d\n"
                     "GRID: t in [0,1,0.5]; V in [0,1,0.5]\nVAR: x(t)\n"
                     "EQ: x(t, V) == 0;\nOBJ: x.MSD()\nEOF\n"),
      ArityError);
}

TEST_CASE("division still works where a marker does not match") {
  // d and dt are plain names here, not a derivative marker
  const TExprPtr e = parse_expression("d/dt(x)", {"d", "dt", "x"});
  REQUIRE(e->kind == TExpr::Kind::Binary);
  CHECK(e->op == '/');
  CHECK(e->args[1]->kind == TExpr::Kind::Apply);
}

TEST_CASE("validate flags penal gaps and out-of-range indices") {
  const std::string text =
      "CVNumOfIter 1\nCVstep 2\nSelect x, t from d\n"
      "GRID: t in [0, 1, 0.25]\nVAR: x(t)\n"
      "OBJ: x.MSD() + x.Complexity(Penal[0]) + Penal[2] * integ d(t) * x(t)\n"
      "EOF\n";
  const TaskSpec s = parse_taskfile(text);
  const auto diags = validate(s);
  REQUIRE(!diags.empty());
  bool saw_range = false;
  for (const auto& d : diags)
    saw_range |= d.find("penal index out of range") != std::string::npos;
  CHECK(saw_range);
}

TEST_CASE("validate flags measurements outside the grid domain") {
  const std::string text =
      "CVNumOfIter 1\nCVstep 2\nSelect x, t from d\n"
      "GRID: t in [0, 1, 0.25]\nVAR: x(t)\nOBJ: x.MSD()\nEOF\n";
  const TaskSpec s = parse_taskfile(text);
  Dataset data({"x", "t"}, {{1.0, 2.0}, {0.5, 3.0}});  // t=3 outside [0,1]
  const auto diags = validate(s, &data);
  REQUIRE(diags.size() == 1);
  CHECK(diags[0].find("measurement outside grid domain") != std::string::npos);
}

TEST_CASE("fuzzed inputs yield positioned errors, never crashes") {
  std::vector<std::string> corpus;
  for (const auto& p : golden_files()) corpus.push_back(slurp(p));
  std::mt19937_64 rng(99);
  std::uniform_int_distribution<int> byte(32, 126);
  int parsed = 0, rejected = 0;
  for (int iter = 0; iter < 1000; ++iter) {
    std::string input;
    if (iter % 3 == 0) {
      // random printable soup with some structure characters
      const int len = std::uniform_int_distribution<int>(0, 200)(rng);
      for (int i = 0; i < len; ++i) {
        const int r = std::uniform_int_distribution<int>(0, 9)(rng);
        if (r == 0) input += '\n';
        else if (r == 1) input += "∈";
        else if (r == 2) input += "∫";
        else input += static_cast<char>(byte(rng));
      }
    } else {
      // mutate a golden file
      input = corpus[std::uniform_int_distribution<size_t>(0, corpus.size() - 1)(rng)];
      const int edits = std::uniform_int_distribution<int>(1, 8)(rng);
      for (int e = 0; e < edits && !input.empty(); ++e) {
        const auto pos = std::uniform_int_distribution<size_t>(0, input.size() - 1)(rng);
        switch (std::uniform_int_distribution<int>(0, 3)(rng)) {
          case 0: input.erase(pos, std::min<size_t>(input.size() - pos, 1 + pos % 7)); break;
          case 1: input.insert(pos, 1, static_cast<char>(byte(rng))); break;
          case 2: input[pos] = static_cast<char>(byte(rng)); break;
          case 3: input.insert(pos, input.substr(0, std::min<size_t>(16, input.size()))); break;
        }
      }
    }
    try {
      (void)parse_taskfile(input);
      ++parsed;
    } catch (const ParseError& e) {
      CHECK(e.line >= 1);
      ++rejected;
    }
    // any other exception type propagates and fails the test
  }
  CHECK(parsed + rejected == 1000);
  CHECK(rejected > 0);
}

TEST_SUITE_END();
