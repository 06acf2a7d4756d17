#include "doctest.h"
#include "fkpde/pathsim.hpp"

using namespace fkpde;

namespace {

CoefficientSet simple_cs(int d, Domain dom, std::vector<std::string> A) {
  std::vector<CompiledExpr> Ae, be, bhe;
  for (auto& s : A) Ae.push_back(CompiledExpr::from_source(s));
  for (int i = 0; i < d; ++i) {
    be.push_back(CompiledExpr::from_source("0"));
    bhe.push_back(CompiledExpr::from_source("0"));
  }
  return CoefficientSet(d, d, 0.25, std::move(dom), std::move(Ae), std::move(be), std::move(bhe),
                        CompiledExpr::from_source("0"), CompiledExpr::from_source("0"));
}

}  // namespace

TEST_CASE("domain geometry") {
  CHECK(Domain::interval(0, 2).volume() == doctest::Approx(2.0));
  CHECK(Domain::hyperrectangle({0, 0}, {2, 3}).volume() == doctest::Approx(6.0));
  CHECK(Domain::ball({0}, 1.5).volume() == doctest::Approx(3.0));
  CHECK(Domain::ball({0, 0}, 2).volume() == doctest::Approx(kPi * 4));
  CHECK(Domain::ball({0, 0, 0}, 1).volume() == doctest::Approx(4 * kPi / 3));
  CHECK(Domain::ball({0, 0, 0}, 1).diameter() == doctest::Approx(2.0));
  CHECK(Domain::hyperrectangle({0, 0}, {1, 1}).diameter() == doctest::Approx(std::sqrt(2.0)));
  CHECK(Domain::hyperrectangle({0, 0}, {1, 2}).inradius() == doctest::Approx(0.5));
}

TEST_CASE("sigma_factor") {
  auto id = sigma_factor(std::vector<double>{1, 0, 0, 1}, 2);
  CHECK(id[0] == 1);
  CHECK(id[3] == 1);
  CHECK(id[1] == 0);
  CHECK(id[2] == 0);

  auto dg = sigma_factor(std::vector<double>{4, 0, 0, 9}, 2);
  CHECK(dg[0] == doctest::Approx(2));
  CHECK(dg[3] == doctest::Approx(3));

  std::vector<double> a{1, 0.2, 0.2, 1};
  auto L = sigma_factor(a, 2);
  double frob = 0;
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) {
      double s = 0;
      for (int k = 0; k < 2; ++k) s += L[i * 2 + k] * L[j * 2 + k];
      frob += sqr(s - a[i * 2 + j]);
    }
  CHECK(std::sqrt(frob) <= 1e-12);
  CHECK(L[1] == 0);  // lower triangular

  CHECK_THROWS_AS(sigma_factor(std::vector<double>{1, 2, 2, 1}, 2), Error);  // indefinite
}

TEST_CASE("drift_correction") {
  double beta[2];

  auto id = simple_cs(2, Domain::ball({0, 0}, 2), {"1", "0", "0", "1"});
  double x[2] = {0.5, 0};
  drift_correction(id, x, 1e-5, beta);
  CHECK(beta[0] == 0);
  CHECK(beta[1] == 0);

  // A = (1 + x1^2) I: beta = (x1, 0)
  auto var = simple_cs(2, Domain::ball({0, 0}, 2), {"1 + x1^2", "0", "0", "1 + x1^2"});
  drift_correction(var, x, 1e-5, beta);
  CHECK(beta[0] == doctest::Approx(0.5).epsilon(1e-6));
  CHECK(beta[1] == doctest::Approx(0.0));

  auto nonsym = simple_cs(2, Domain::ball({0, 0}, 2), {"1", "0.4", "0", "1"});
  drift_correction(nonsym, x, 1e-5, beta);
  CHECK(beta[0] == 0);
  CHECK(beta[1] == 0);
}

TEST_CASE("step_euler basics") {
  auto id = simple_cs(2, Domain::ball({0, 0}, 2), {"1", "0", "0", "1"});
  double x[2] = {0.1, 0.2}, xn[2], dm[2];
  double zero_noise[2] = {0, 0};
  step_euler(id, id.domain(), x, 0.01, zero_noise, xn, dm);
  CHECK(xn[0] == x[0]);
  CHECK(xn[1] == x[1]);
  CHECK(dm[0] == 0);

  double noise[2] = {1.5, -0.5};
  step_euler(id, id.domain(), x, 0.01, noise, xn, dm);
  CHECK(dm[0] == doctest::Approx(0.15));
  CHECK(dm[1] == doctest::Approx(-0.05));
}

TEST_CASE("step increments reproduce h * Asym in sample covariance") {
  auto cs = simple_cs(2, Domain::ball({0, 0}, 4), {"1", "0.4", "0", "1"});
  const double h = 0.01;
  const int n = 100000;
  Stepper st(cs, cs.domain(), h, 1e-9, 0);
  PathRng rng(99, 0);
  double noise[2], dm[2];
  double c11 = 0, c12 = 0, c22 = 0;
  for (int i = 0; i < n; ++i) {
    double x[2] = {0, 0};
    rng.step_normals(i, 2, noise);
    st.advance(x, noise, dm);
    c11 += dm[0] * dm[0];
    c12 += dm[0] * dm[1];
    c22 += dm[1] * dm[1];
  }
  c11 /= n;
  c12 /= n;
  c22 /= n;
  // Asym = [[1, 0.2], [0.2, 1]]; SE of a Gaussian covariance entry
  auto se = [&](double aii, double ajj, double aij) {
    return h * std::sqrt((aii * ajj + aij * aij) / n);
  };
  CHECK(std::fabs(c11 - h * 1.0) <= 3 * se(1, 1, 1));
  CHECK(std::fabs(c22 - h * 1.0) <= 3 * se(1, 1, 1));
  CHECK(std::fabs(c12 - h * 0.2) <= 3 * se(1, 1, 0.2));
}

TEST_CASE("detect_exit") {
  Domain d1 = Domain::interval(0, 1);
  double a[1] = {0.5}, b[1] = {0.7};
  auto info = detect_exit(d1, a, b, 1e-9);
  CHECK_FALSE(info.exited);

  double p[1] = {0.9}, q[1] = {1.1};
  info = detect_exit(d1, p, q, 1e-9);
  CHECK(info.exited);
  CHECK(info.x_boundary[0] == doctest::Approx(1.0).epsilon(1e-8));
  CHECK(info.theta == doctest::Approx(0.5).epsilon(1e-6));

  Domain ball = Domain::ball({0, 0}, 1);
  double u[2] = {0.9, 0}, v[2] = {1.2, 0};
  info = detect_exit(ball, u, v, 1e-9);
  CHECK(info.exited);
  CHECK(info.x_boundary[0] == doctest::Approx(1.0).epsilon(1e-8));
  CHECK(info.x_boundary[1] == doctest::Approx(0.0));
}

TEST_CASE("mean exit time of the 1d unit interval from the midpoint") {
  // 1/2 u'' = -1, u(0)=u(1)=0  =>  E[tau] = x(1-x) = 1/4 at x = 1/2
  auto cs = simple_cs(1, Domain::interval(0, 1), {"1"});
  PathConfig pc;
  pc.step_h = 1e-3;
  pc.t_max = 50;
  pc.seed = 31;
  const int n = 10000;
  double sum = 0, sumsq = 0;
  for (int i = 0; i < n; ++i) {
    pc.substream = i;
    DiffusionPath p = simulate_path(cs, cs.domain(), pc, {0.5});
    REQUIRE(p.exited);
    sum += p.tau;
    sumsq += p.tau * p.tau;
  }
  double mean = sum / n;
  double se = std::sqrt((sumsq / n - mean * mean) / n);
  // discrete exit detection is late by ~0.58 sqrt(h) (Broadie-Glasserman-Kou)
  CHECK(std::fabs(mean - 0.25) <= 3 * se + 0.7 * std::sqrt(pc.step_h));
}

TEST_CASE("trajectories are deterministic in (seed, substream)") {
  auto cs = simple_cs(2, Domain::ball({0, 0}, 1), {"1", "0", "0", "1"});
  PathConfig pc;
  pc.step_h = 1e-2;
  pc.t_max = 50;
  pc.seed = 7;
  pc.substream = 12345;
  DiffusionPath a = simulate_path(cs, cs.domain(), pc, {0.2, 0.1});
  DiffusionPath b = simulate_path(cs, cs.domain(), pc, {0.2, 0.1});
  REQUIRE(a.states.size() == b.states.size());
  for (std::size_t i = 0; i < a.states.size(); ++i) CHECK(a.states[i] == b.states[i]);
  for (std::size_t i = 0; i < a.dM.size(); ++i) CHECK(a.dM[i] == b.dM[i]);
}

TEST_CASE("noise layout is step-indexed: horizons share a bitwise prefix") {
  auto cs = simple_cs(1, Domain::interval(-5, 5), {"1"});
  PathConfig pc;
  pc.step_h = 1e-2;
  pc.seed = 3;
  pc.substream = 4;
  pc.t_max = 0.2;
  DiffusionPath shorter = simulate_path(cs, cs.domain(), pc, {0.0});
  pc.t_max = 0.5;
  DiffusionPath longer = simulate_path(cs, cs.domain(), pc, {0.0});
  REQUIRE(shorter.truncated);
  for (std::size_t i = 0; i < shorter.states.size(); ++i)
    CHECK(shorter.states[i] == longer.states[i]);
}

TEST_CASE("interior states stay in D and the final state lands on the boundary") {
  auto cs = simple_cs(2, Domain::ball({0, 0}, 1), {"1", "0", "0", "1"});
  PathConfig pc;
  pc.step_h = 5e-3;
  pc.t_max = 100;
  pc.seed = 8;
  pc.exit_tol = 1e-8;
  for (int trial = 0; trial < 20; ++trial) {
    pc.substream = trial;
    DiffusionPath p = simulate_path(cs, cs.domain(), pc, {0.0, 0.0});
    REQUIRE(p.exited);
    for (int k = 0; k + 1 < static_cast<int>(p.times.size()); ++k)
      CHECK(cs.domain().contains(p.state(k)));
    double r = std::sqrt(sqr(p.state(p.steps())[0]) + sqr(p.state(p.steps())[1]));
    CHECK(r == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("exit angles from the center of the disk are uniform (KS)") {
  auto cs = simple_cs(2, Domain::ball({0, 0}, 1), {"1", "0", "0", "1"});
  PathConfig pc;
  pc.step_h = 2e-3;
  pc.t_max = 100;
  pc.seed = 21;
  const int n = 10000;
  std::vector<double> u(n);
  for (int i = 0; i < n; ++i) {
    pc.substream = i;
    DiffusionPath p = simulate_path(cs, cs.domain(), pc, {0.0, 0.0});
    REQUIRE(p.exited);
    const double* xe = p.state(p.steps());
    double ang = std::atan2(xe[1], xe[0]);
    u[i] = (ang + kPi) / (2 * kPi);
  }
  std::sort(u.begin(), u.end());
  double dks = 0;
  for (int i = 0; i < n; ++i) {
    dks = std::max(dks, std::fabs(u[i] - (i + 1.0) / n));
    dks = std::max(dks, std::fabs(u[i] - static_cast<double>(i) / n));
  }
  // p > 0.01  <=>  D_n < 1.628 / sqrt(n)
  CHECK(dks < 1.628 / std::sqrt(static_cast<double>(n)));
}

TEST_CASE("exit times are monotone under domain inclusion on coupled paths") {
  auto big = simple_cs(2, Domain::ball({0, 0}, 1), {"1", "0", "0", "1"});
  auto small = simple_cs(2, Domain::ball({0, 0}, 0.5), {"1", "0", "0", "1"});
  PathConfig pc;
  pc.step_h = 2e-3;
  pc.t_max = 100;
  pc.seed = 13;
  for (int i = 0; i < 100; ++i) {
    pc.substream = i;
    DiffusionPath ps = simulate_path(small, small.domain(), pc, {0.0, 0.0});
    DiffusionPath pb = simulate_path(big, big.domain(), pc, {0.0, 0.0});
    REQUIRE(ps.exited);
    REQUIRE(pb.exited);
    CHECK(ps.tau <= pb.tau + 1e-12);
  }
}

TEST_CASE("simulate_path validates its inputs") {
  auto cs = simple_cs(1, Domain::interval(0, 1), {"1"});
  PathConfig pc;
  pc.step_h = 1e-2;
  pc.t_max = 1;
  CHECK_THROWS_AS(simulate_path(cs, cs.domain(), pc, {2.0}), Error);  // outside D
  pc.exit_tol = 10;                                                   // >= inradius
  CHECK_THROWS_AS(simulate_path(cs, cs.domain(), pc, {0.5}), Error);
}

TEST_CASE("truncation is reported when t_max is reached first") {
  auto cs = simple_cs(1, Domain::interval(-50, 50), {"1"});
  PathConfig pc;
  pc.step_h = 1e-2;
  pc.t_max = 0.1;
  DiffusionPath p = simulate_path(cs, cs.domain(), pc, {0.0});
  CHECK(p.truncated);
  CHECK_FALSE(p.exited);
}
