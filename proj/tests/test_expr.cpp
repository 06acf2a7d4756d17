#include "doctest.h"
#include "fkpde/expr.hpp"
#include "fkpde/rng.hpp"

using namespace fkpde;

namespace {
double eval_src(const std::string& src, std::vector<double> x = {}) {
  return CompiledExpr::from_source(src).eval(x.data());
}
}  // namespace

TEST_CASE("operator precedence and associativity") {
  CHECK(eval_src("1+2*3") == doctest::Approx(7));
  CHECK(eval_src("2*3+1") == doctest::Approx(7));
  CHECK(eval_src("8-4-2") == doctest::Approx(2));   // left assoc
  CHECK(eval_src("8/4/2") == doctest::Approx(1));   // left assoc
  CHECK(eval_src("2^3^2") == doctest::Approx(512)); // right assoc
  CHECK(eval_src("-2^2") == doctest::Approx(-4));   // ^ binds tighter than unary -
  CHECK(eval_src("2^-1") == doctest::Approx(0.5));
  CHECK(eval_src("(1+2)*3") == doctest::Approx(9));
}

TEST_CASE("variables and functions") {
  CHECK(eval_src("x1^2 + sin(x2)", {1, 0}) == doctest::Approx(1));
  CHECK(eval_src("cos(0)") == doctest::Approx(1));
  CHECK(eval_src("exp(1)") == doctest::Approx(std::exp(1.0)));
  CHECK(eval_src("tanh(0)") == doctest::Approx(0));
  CHECK(eval_src("abs(-3)") == doctest::Approx(3));
  CHECK(eval_src("min(2, x1)", {5}) == doctest::Approx(2));
  CHECK(eval_src("max(2, x1)", {5}) == doctest::Approx(5));
  CHECK(eval_src("pi") == doctest::Approx(kPi));
  CHECK(eval_src("1.5e-2") == doctest::Approx(0.015));
}

TEST_CASE("parse errors carry byte offsets") {
  CHECK_THROWS_AS(parse_field_expr(""), Error);
  CHECK_THROWS_AS(parse_field_expr("   "), Error);
  CHECK_THROWS_AS(parse_field_expr("1+"), Error);
  CHECK_THROWS_AS(parse_field_expr("(1+2"), Error);
  CHECK_THROWS_AS(parse_field_expr("foo(1)"), Error);   // unknown identifier
  CHECK_THROWS_AS(parse_field_expr("sin(1,2)"), Error); // arity mismatch
  CHECK_THROWS_AS(parse_field_expr("min(1)"), Error);   // arity mismatch
  CHECK_THROWS_AS(parse_field_expr("x0"), Error);
  try {
    parse_field_expr("1 + @");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrKind::parse);
    CHECK(std::string(e.what()).find("byte 4") != std::string::npos);
  }
}

TEST_CASE("evaluation errors") {
  // parse succeeds, evaluation fails
  CompiledExpr e = CompiledExpr::from_source("x1/0");
  double x = 3;
  CHECK_THROWS_AS(e.eval(&x), Error);

  CompiledExpr zp = CompiledExpr::from_source("x1^-1");
  double z = 0;
  CHECK_THROWS_AS(zp.eval(&z), Error);
  double two = 2;
  CHECK(zp.eval(&two) == doctest::Approx(0.5));

  // constant-folded non-finite values surface as eval errors too
  CompiledExpr cf = CompiledExpr::from_source("1/0");
  CHECK_THROWS_AS(cf.eval(nullptr), Error);

  CompiledExpr ovf = CompiledExpr::from_source("exp(x1)");
  double big = 1e9;
  CHECK_THROWS_AS(ovf.eval(&big), Error);
}

TEST_CASE("constant folding") {
  CompiledExpr e = CompiledExpr::from_source("1 + 2*3 - sin(0)");
  CHECK(e.is_constant());
  CHECK(e.constant_value() == doctest::Approx(7));
  CHECK_FALSE(CompiledExpr::from_source("1 + x1").is_constant());
}

TEST_CASE("parse -> print -> parse round-trips to the identical AST") {
  const char* cases[] = {
      "1+2*3",
      "x1^2 + sin(x2)",
      "-x1*(x2 - 3.5)/max(x1, 0.1)",
      "2^-x1^2",
      "abs(min(x1, -x2)) + exp(tanh(x3))",
      "((x1))",
  };
  for (const char* src : cases) {
    FieldExpr a = parse_field_expr(src);
    FieldExpr b = parse_field_expr(print_field_expr(a));
    CHECK_MESSAGE(field_expr_equal(a, b), src);
    // and printing again is a fixed point of the text form
    CHECK(print_field_expr(a) == print_field_expr(b));
  }

  // randomized: random trees via random sources made of template fragments
  PathRng rng(2024, 7);
  const char* frag[] = {"x1", "x2", "1.25", "sin(x1)", "(x1+x2)", "max(x1,0.5)"};
  for (int trial = 0; trial < 50; ++trial) {
    std::string src = frag[static_cast<int>(rng.uniform(3, trial, 0) * 6)];
    for (int j = 0; j < 4; ++j) {
      const char* ops[] = {"+", "-", "*", "/"};
      src += ops[static_cast<int>(rng.uniform(3, trial, 2 * j + 1) * 4)];
      src += frag[static_cast<int>(rng.uniform(3, trial, 2 * j + 2) * 6)];
    }
    FieldExpr a = parse_field_expr(src);
    FieldExpr b = parse_field_expr(print_field_expr(a));
    CHECK_MESSAGE(field_expr_equal(a, b), src);
  }
}

TEST_CASE("compiled program matches a reference at random points") {
  CompiledExpr e = CompiledExpr::from_source("x1*x2 + sin(x1)*exp(x2/4) - x1^3");
  PathRng rng(11, 0);
  for (int i = 0; i < 100; ++i) {
    double x[2] = {4 * rng.uniform(2, i, 0) - 2, 4 * rng.uniform(2, i, 1) - 2};
    double ref = x[0] * x[1] + std::sin(x[0]) * std::exp(x[1] / 4) - std::pow(x[0], 3);
    CHECK(e.eval(x) == doctest::Approx(ref).epsilon(1e-12));
  }
}
