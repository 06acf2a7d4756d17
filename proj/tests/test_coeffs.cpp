#include "doctest.h"
#include "fkpde/coeffs.hpp"
#include "fkpde/quad.hpp"
#include "fkpde/rng.hpp"

using namespace fkpde;

namespace {

CompiledExpr cx(const std::string& s) { return CompiledExpr::from_source(s); }

CoefficientSet make_cs(int d, Domain dom, std::vector<std::string> A, std::vector<std::string> b,
                       std::vector<std::string> bhat, std::string c, std::string g,
                       double p = 2.5, double lambda = 0.5) {
  std::vector<CompiledExpr> Ae, be, bhe;
  for (auto& s : A) Ae.push_back(cx(s));
  for (auto& s : b) be.push_back(cx(s));
  for (auto& s : bhat) bhe.push_back(cx(s));
  return CoefficientSet(d, p, lambda, std::move(dom), std::move(Ae), std::move(be),
                        std::move(bhe), cx(c), cx(g));
}

CoefficientSet identity_cs2() {
  return make_cs(2, Domain::ball({0, 0}, 1), {"1", "0", "0", "1"}, {"0", "0"}, {"0", "0"}, "0",
                 "0", 2.5, 1.0);
}

}  // namespace

TEST_CASE("symmetrize") {
  std::vector<double> a{1, 0.4, 0, 1};
  auto s = symmetrize(a, 2);
  CHECK(s[0] == 1);
  CHECK(s[1] == doctest::Approx(0.2));
  CHECK(s[2] == doctest::Approx(0.2));
  CHECK(s[3] == 1);

  // symmetric input is a fixed point; purely antisymmetric input vanishes
  auto s2 = symmetrize(s, 2);
  for (int i = 0; i < 4; ++i) CHECK(s2[i] == s[i]);
  std::vector<double> anti{0, 1, -1, 0};
  auto z = symmetrize(anti, 2);
  for (double v : z) CHECK(v == 0);

  // idempotent and linear on random matrices
  PathRng rng(5, 0);
  for (int t = 0; t < 20; ++t) {
    std::vector<double> m(9), n(9);
    for (int i = 0; i < 9; ++i) {
      m[i] = rng.uniform(2, t, i) - 0.5;
      n[i] = rng.uniform(2, t, 9 + i) - 0.5;
    }
    auto sm = symmetrize(m, 3), sn = symmetrize(n, 3), ssm = symmetrize(sm, 3);
    for (int i = 0; i < 9; ++i) {
      CHECK(ssm[i] == doctest::Approx(sm[i]));
      std::vector<double> lin(9);
      for (int j = 0; j < 9; ++j) lin[j] = 2 * m[j] + 3 * n[j];
      auto slin = symmetrize(lin, 3);
      CHECK(slin[i] == doctest::Approx(2 * sm[i] + 3 * sn[i]));
    }
  }
}

TEST_CASE("eval_matrix honours the extension rule") {
  auto cs = make_cs(2, Domain::ball({0, 0}, 1), {"1", "0.4", "0", "1"}, {"0", "0"}, {"0", "0"},
                    "0", "0");
  double a[4];
  double inside[2] = {0.3, 0.1};
  cs.eval_matrix(inside, a);
  CHECK(a[0] == 1);
  CHECK(a[1] == 0.4);
  CHECK(a[2] == 0);
  CHECK(a[3] == 1);

  double outside[2] = {2.0, 0.0};
  cs.eval_matrix(outside, a);
  CHECK(a[0] == 1);
  CHECK(a[1] == 0);
  CHECK(a[2] == 0);
  CHECK(a[3] == 1);

  double bvec[2] = {1, 1};
  auto csb = make_cs(2, Domain::ball({0, 0}, 1), {"1", "0", "0", "1"}, {"x1", "5"}, {"1", "1"},
                     "3", "3");
  csb.eval_b(outside, bvec);
  CHECK(bvec[0] == 0);
  CHECK(bvec[1] == 0);
  CHECK(csb.eval_c(outside) == 0);
  CHECK(csb.eval_g(outside) == 0);
}

TEST_CASE("uniform ellipticity check") {
  std::vector<Point> grid;
  for (double x = -0.8; x <= 0.8; x += 0.4)
    for (double y = -0.8; y <= 0.8; y += 0.4)
      if (x * x + y * y < 1) grid.push_back({x, y});

  auto id = identity_cs2();
  auto rep = check_uniform_ellipticity(id, grid);
  CHECK(rep.pass);
  CHECK(rep.min_eig == doctest::Approx(1.0));
  CHECK(rep.max_abs_entry == doctest::Approx(1.0));

  // symmetric part of [[1,3],[3,1]] has eigenvalues {-2, 4}: fails for any lambda
  auto bad = make_cs(2, Domain::ball({0, 0}, 1), {"1", "3", "3", "1"}, {"0", "0"}, {"0", "0"},
                     "0", "0", 2.5, 0.5);
  rep = check_uniform_ellipticity(bad, grid);
  CHECK_FALSE(rep.pass);
  CHECK(rep.min_eig == doctest::Approx(-2.0));

  // [[1,0.4],[0,1]] with lambda=0.5: symmetrized eigenvalues {0.8, 1.2}
  auto ok = make_cs(2, Domain::ball({0, 0}, 1), {"1", "0.4", "0", "1"}, {"0", "0"}, {"0", "0"},
                    "0", "0", 2.5, 0.5);
  rep = check_uniform_ellipticity(ok, grid);
  CHECK(rep.pass);
  CHECK(rep.min_eig == doctest::Approx(0.8));

  // quadratic form of the symmetrized matrix on the unit sphere stays within
  // [lambda, d^2/lambda] whenever the check passes
  PathRng rng(17, 3);
  double a[4], as[4];
  for (int t = 0; t < 200; ++t) {
    double ang = 2 * kPi * rng.uniform(2, t, 0);
    double xi[2] = {std::cos(ang), std::sin(ang)};
    const Point& x = grid[t % grid.size()];
    ok.eval_matrix(x.data(), a);
    symmetrize(a, 2, as);
    double q = as[0] * xi[0] * xi[0] + (as[1] + as[2]) * xi[0] * xi[1] + as[3] * xi[1] * xi[1];
    CHECK(q >= 0.5 - 1e-12);
    CHECK(q <= 4 / 0.5 + 1e-12);
  }
}

TEST_CASE("mollifier kernel: support, scaling, unit mass") {
  MollifierParams mp{4, 16};
  double x1[1] = {0.3};  // |x| >= 1/k
  CHECK(mollifier_kernel(mp, std::span<const double>(x1, 1)) == 0.0);
  double x2[1] = {0.25};
  CHECK(mollifier_kernel(mp, std::span<const double>(x2, 1)) == 0.0);

  // J_k(0) = k^d J(0)
  double zero2[2] = {0, 0};
  MollifierParams unit{1, 16};
  double j0 = mollifier_kernel(unit, std::span<const double>(zero2, 2));
  double jk = mollifier_kernel(MollifierParams{3, 16}, std::span<const double>(zero2, 2));
  CHECK(jk == doctest::Approx(9 * j0).epsilon(1e-12));

  // unit mass, checked against an independent radial quadrature oracle
  for (int d = 1; d <= 2; ++d) {
    double omega = d == 1 ? 2.0 : 2 * kPi;  // surface measure of S^{d-1}
    double radial = omega * integrate_adaptive(
                                [&](double r) {
                                  return std::exp(-1.0 / (1.0 - r * r)) * std::pow(r, d - 1);
                                },
                                0, 1 - 1e-14, 1e-12);
    double mass_quad = detail::bump_normalizer(d);
    CHECK(mass_quad == doctest::Approx(radial).epsilon(1e-8));
  }
}

TEST_CASE("mollify_field") {
  MollifierParams mp{8, 16};

  // constants are exact up to the renormalized quadrature (1e-8 contract)
  MollifiedField fc = mollify_field([](const double*) { return 3.25; }, 2, mp);
  double x[2] = {0.2, -0.1};
  CHECK(fc(x) == doctest::Approx(3.25).epsilon(1e-8));

  // linear fields are fixed points for the even kernel
  MollifiedField fl = mollify_field([](const double* y) { return y[0]; }, 2, mp);
  CHECK(fl(x) == doctest::Approx(0.2).epsilon(1e-6));

  // step function: even-kernel convolution gives 1/2 at the jump
  MollifiedField fs =
      mollify_field([](const double* y) { return y[0] > 0 ? 1.0 : 0.0; }, 1, MollifierParams{4, 24});
  double zero[1] = {0};
  CHECK(fs(zero) == doctest::Approx(0.5).epsilon(1e-7));

  // nonnegativity is preserved
  MollifiedField fn = mollify_field(
      [](const double* y) { return std::max(0.0, std::sin(7 * y[0])); }, 1, MollifierParams{6, 12});
  for (double t = -1; t <= 1; t += 0.05) {
    double pt[1] = {t};
    CHECK(fn(pt) >= 0);
  }

  // smooth fields converge in sup norm as k grows
  auto smooth = [](const double* y) { return std::sin(2 * y[0]) * std::cos(y[1]); };
  double worst8 = 0, worst32 = 0;
  MollifiedField m8 = mollify_field(smooth, 2, MollifierParams{8, 16});
  MollifiedField m32 = mollify_field(smooth, 2, MollifierParams{32, 16});
  for (double u = -0.5; u <= 0.5; u += 0.25)
    for (double v = -0.5; v <= 0.5; v += 0.25) {
      double pt[2] = {u, v};
      worst8 = std::max(worst8, std::fabs(m8(pt) - smooth(pt)));
      worst32 = std::max(worst32, std::fabs(m32(pt) - smooth(pt)));
    }
  CHECK(worst32 < worst8);
  CHECK(worst32 < 1e-3);

  CHECK_THROWS_AS(mollify_field([](const double*) { return 0.0; }, 1, MollifierParams{4, 7}),
                  Error);
}

TEST_CASE("coefficient set validation") {
  CHECK_THROWS_AS(make_cs(2, Domain::ball({0, 0}, 1), {"1", "0", "0", "1"}, {"0", "0"},
                          {"0", "0"}, "0", "0", 0.9 /* p <= d/2 */),
                  Error);
  CHECK_THROWS_AS(make_cs(2, Domain::ball({0, 0}, 1), {"x3", "0", "0", "1"}, {"0", "0"},
                          {"0", "0"}, "0", "0"),
                  Error);
  CHECK_THROWS_AS(make_cs(2, Domain::ball({0, 0}, 1), {"1", "0", "0", "1"}, {"0", "0"},
                          {"0", "0"}, "0", "-1" /* g < 0 */),
                  Error);
}
