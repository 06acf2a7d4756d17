#include "doctest.h"
#include "fkpde/driver.hpp"

using namespace fkpde;

namespace {

const char* kHarmonicDisk = R"(
d = 2
p = 2.5
lambda = 1
domain.kind = ball
domain.center.1 = 0
domain.center.2 = 0
domain.radius = 1
boundary.f = x1
path.step_h = 5e-3
mc.paths = 2000
mc.seed = 11
probe.1 = 0.5 0.0
)";

const char* kFull1d = R"(
d = 1
p = 1.6
lambda = 0.5
domain.kind = interval
domain.lo.1 = 0
domain.hi.1 = 1
A.11 = 1
b.1 = 0.3*sin(pi*x1)
bhat.1 = 0.2*x1*(1-x1)
c = -0.4 + 0.1*x1
g = 0.1*x1 + 0.001
boundary.f = 1 + 0.2*x1
path.step_h = 1e-3
mc.paths = 4000
mc.seed = 7
probe.1 = 0.5
grid.delta = 0.005
semigroup.f = sin(pi*x1)
semigroup.g = sin(pi*x1)
semigroup.t = 0.1
semigroup.paths = 20000
)";

}  // namespace

TEST_CASE("config parsing") {
  RunConfig rc = parse_run_config(kHarmonicDisk);
  CHECK(rc.d == 2);
  CHECK(rc.domain.kind() == DomainKind::ball);
  CHECK(rc.n_paths == 2000);
  CHECK(rc.probes.size() == 1);
  CHECK(rc.probes[0][0] == 0.5);
  CHECK(rc.coeffs->A_constant());
  CHECK(rc.coeffs->b_zero());
  // A=I defaults for the kernel constants
  CHECK(rc.kernel.sigma1 == doctest::Approx(std::pow(2 * kPi, -1.0)));
  CHECK(rc.kernel.sigma2 == doctest::Approx(0.5));

  CHECK_THROWS_AS(parse_run_config("nonsense_key = 1\n"), Error);
  CHECK_THROWS_AS(parse_run_config("d = 1\nd = 2\n"), Error);
  CHECK_THROWS_AS(parse_run_config("d = 1\nprobe.1 = 7\n"), Error);   // outside D
  CHECK_THROWS_AS(parse_run_config("d = 1\nmc.paths = 10\n"), Error); // < 100
  CHECK_THROWS_AS(parse_run_config("d = 1\np = 0.2\n"), Error);       // p <= d/2
}

TEST_CASE("harmonic disk estimate and bit-exact worker independence") {
  RunConfig rc = parse_run_config(kHarmonicDisk);
  RuntimeFields rf = prepare_fields(rc);

  rc.workers = 1;
  auto r1 = run_mc_estimate(rc, rf);
  REQUIRE(r1.size() == 1);
  CHECK(std::fabs(r1[0].mean - 0.5) <=
        3 * r1[0].stderror + 0.7 * std::sqrt(rc.path.step_h));
  CHECK(r1[0].excluded == 0);
  CHECK(r1[0].reliable);

  rc.workers = 4;
  auto r4 = run_mc_estimate(rc, rf);
  rc.workers = 8;
  auto r8 = run_mc_estimate(rc, rf);
  CHECK(r1[0].mean == r4[0].mean);
  CHECK(r1[0].stderror == r4[0].stderror);
  CHECK(r4[0].mean == r8[0].mean);
  CHECK(r4[0].stderror == r8[0].stderror);
  CHECK(r1[0].n_effective == r8[0].n_effective);
}

TEST_CASE("estimator merge associativity") {
  PathRng rng(2, 9);
  const long n = 10000;
  std::vector<double> pay(n);
  std::vector<std::uint8_t> ok(n, 1);
  for (long i = 0; i < n; ++i) pay[i] = std::exp(rng.uniform(4, i, 0)) - 1.2;
  PathStats tree = reduce_paths(pay, ok);

  // arbitrary contiguous batches, merged sequentially by (n, sum, sumsq)
  for (long batch : {1L, 7L, 64L, 999L, n}) {
    double s = 0, ss = 0;
    for (long lo = 0; lo < n; lo += batch) {
      long hi = std::min(n, lo + batch);
      double bs = 0, bss = 0;
      for (long i = lo; i < hi; ++i) {
        bs += pay[i];
        bss += pay[i] * pay[i];
      }
      s += bs;
      ss += bss;
    }
    double mean = s / n;
    double var = (ss - s * s / n) / (n - 1);
    double se = std::sqrt(var / n);
    CHECK(std::fabs(mean - tree.mean) <= 1e-14 * std::max(1.0, std::fabs(tree.mean)));
    CHECK(std::fabs(se - tree.stderror) <= 1e-14 * std::max(1.0, tree.stderror));
  }
}

TEST_CASE("exit weight satisfies the 1/(1-theta) bound for a small g budget") {
  // c = g = kappa > 0 with sup-occupation kappa x(1-x) <= kappa/4 = theta
  const char* cfg = R"(
d = 1
domain.kind = interval
domain.lo.1 = 0
domain.hi.1 = 1
c = 1.5
g = 1.5
boundary.f = 1
path.step_h = 2e-4
mc.paths = 10000
mc.seed = 3
probe.1 = 0.5
)";
  RunConfig rc = parse_run_config(cfg);
  RuntimeFields rf = prepare_fields(rc);
  auto res = run_mc_estimate(rc, rf);
  double theta = 1.5 / 4;
  // late exit detection inflates tau by ~0.58 sqrt(h); allow for it explicitly
  double bias_allow = 1.5 * 0.7 * std::sqrt(rc.path.step_h) * res[0].mean;
  CHECK(res[0].mean <=
        1.0 / (1 - theta) * (1 + 3 * res[0].stderror / res[0].mean) + bias_allow);
  // and the analytic value 1/cos(sqrt(2 kappa)/2) is reproduced within band
  double exact = 1.0 / std::cos(std::sqrt(2 * 1.5) / 2);
  CHECK(std::fabs(res[0].mean - exact) <= 3 * res[0].stderror + bias_allow);
}

TEST_CASE("compare_to_oracle on the full 1d coefficient case") {
  RunConfig rc = parse_run_config(kFull1d);
  RuntimeFields rf = prepare_fields(rc);
  auto rep = compare_to_oracle(rc, rf);
  REQUIRE(rep.rows.size() == 1);
  CHECK(rep.rows[0].within_budget);
  CHECK(rep.all_within);
  // both divergence routes agree on identical noise
  CHECK(rep.dual_checked);
  CHECK(std::fabs(rep.dual_mean_dev) <= 3 * rep.dual_se + 5e-3);
}

TEST_CASE("martingale flatness for the harmonic square") {
  const char* cfg = R"(
d = 2
domain.kind = hyperrectangle
domain.lo.1 = 0
domain.hi.1 = 1
domain.lo.2 = 0
domain.hi.2 = 1
boundary.f = x1
path.step_h = 2e-3
mc.paths = 5000
mc.seed = 19
probe.1 = 0.3 0.4
grid.delta = 0.03125
)";
  RunConfig rc = parse_run_config(cfg);
  RuntimeFields rf = prepare_fields(rc);
  GridFunction u = oracle_solution(rc, rf);
  std::vector<double> times{0.0, 0.05, 0.1, 0.2};
  auto rep = martingale_check(rc, rf, u, times, rc.probes[0]);
  CHECK(rep.u_ref == doctest::Approx(0.3).epsilon(1e-6));
  CHECK(rep.rows[0].mean == doctest::Approx(rep.u_ref));  // t = 0: no evolution
  for (const auto& row : rep.rows) {
    // discrete-exit bias budget on top of the statistical band
    CHECK(std::fabs(row.mean - rep.u_ref) <=
          3 * row.se + 0.5 * (std::sqrt(rc.path.step_h) + sqr(rc.grid_delta)));
  }
}

TEST_CASE("semigroup check: identity at t -> 0 and eigen-decay") {
  const char* cfg = R"(
d = 1
domain.kind = interval
domain.lo.1 = 0
domain.hi.1 = 1
boundary.f = 0
path.step_h = 1e-3
mc.paths = 1000
mc.seed = 23
probe.1 = 0.5
grid.delta = 0.01
semigroup.f = sin(pi*x1)
semigroup.g = sin(pi*x1)
semigroup.t = 0.1
semigroup.paths = 30000
)";
  RunConfig rc = parse_run_config(cfg);
  RuntimeFields rf = prepare_fields(rc);
  auto rep = run_semigroup_check(rc, rf);
  CHECK(rep.t0_rel_err <= 1e-3);
  REQUIRE(rep.rows.size() == 1);
  const auto& row = rep.rows[0];
  double exact = 0.5 * std::exp(-0.5 * sqr(kPi) * 0.1);
  CHECK(std::fabs(row.oracle - exact) / exact <= 1e-3);
  // survival is detected ~0.58 sqrt(h) late, inflating the MC side; the
  // allowance scales with sqrt(h) (acceptance runs use a finer step)
  CHECK(std::fabs(row.mc - row.oracle) <=
        3 * row.mc_se + 2.0 * std::sqrt(rc.path.step_h) * row.oracle);
  CHECK(row.survived > 0);
  // with c = 0 the restricted moment E[exp(∫c); t < tau] is the survival rate
  CHECK(row.moment ==
        doctest::Approx(static_cast<double>(row.survived) / rc.semi_paths).epsilon(1e-12));
}

TEST_CASE("variable antisymmetric part of A: MC and oracle agree") {
  // a skew part with nonconstant entries drives a genuine drift
  // beta_i = 1/2 sum_j d_j a_ij; both routes must see it identically
  const char* cfg = R"(
d = 2
p = 2.5
lambda = 0.5
domain.kind = hyperrectangle
domain.lo.1 = 0
domain.hi.1 = 1
domain.lo.2 = 0
domain.hi.2 = 1
A.11 = 1
A.12 = 0.4*x1
A.21 = -0.4*x1
A.22 = 1
boundary.f = x1 + 0.5*x2
path.step_h = 1e-3
mc.paths = 10000
mc.seed = 5
probe.1 = 0.5 0.5
grid.delta = 0.015625
)";
  RunConfig rc = parse_run_config(cfg);
  RuntimeFields rf = prepare_fields(rc);
  auto mc = run_mc_estimate(rc, rf);
  GridFunction u = oracle_solution(rc, rf);
  double oracle = u.value_at(rc.probes[0].data());
  // the skew drift shifts the solution away from the harmonic value x1+0.5*x2
  CHECK(std::fabs(oracle - 0.75) > 0.003);
  CHECK(std::fabs(mc[0].mean - oracle) <=
        3 * mc[0].stderror + 0.7 * std::sqrt(rc.path.step_h));
}

TEST_CASE("weak solutions obey the discrete maximum bound") {
  // ||u||_inf <= ||f||_inf / (1 - theta_hat), theta_hat the measured
  // occupation of the budget field g under the Q-dynamics
  RunConfig rc = parse_run_config(kFull1d);
  RuntimeFields rf = prepare_fields(rc);
  GridFunction u = oracle_solution(rc, rf);
  double u_inf = 0;
  for (double v : u.values) u_inf = std::max(u_inf, std::fabs(v));

  auto occ = occupation_bound_mc(
      *rc.coeffs, rc.domain, [&](const double* x) { return rc.coeffs->eval_g(x); },
      {{0.5}}, 2000, rc.path, rc.kernel.theta);
  double theta_hat = occ.probes[0].mean_occupation + 3 * occ.probes[0].se_occupation;
  REQUIRE(theta_hat < 1.0);
  double f_inf = 1.2;  // sup of 1 + 0.2 x1 on [0,1]
  CHECK(u_inf <= f_inf / (1 - theta_hat) + 1e-12);
}

TEST_CASE("halving the step moves the estimate within the sqrt(h) budget") {
  RunConfig rc = parse_run_config(kFull1d);
  rc.n_paths = 20000;
  RuntimeFields rf = prepare_fields(rc);
  auto coarse = run_mc_estimate(rc, rf);
  RunConfig rc2 = rc;
  rc2.path.step_h = rc.path.step_h / 2;
  auto fine = run_mc_estimate(rc2, rf);
  double joint_se = std::sqrt(sqr(coarse[0].stderror) + sqr(fine[0].stderror));
  double budget = 0.7 * std::sqrt(rc.path.step_h) * std::fabs(coarse[0].mean);
  CHECK(std::fabs(coarse[0].mean - fine[0].mean) <= 3 * joint_se + budget);
}

TEST_CASE("emit_report determinism, round-trip, and validation") {
  std::vector<EstimateResult> results;
  EstimateResult r;
  r.point = {0.5, -0.25};
  r.mean = 1.0 / 3;
  r.stderror = 0.001234567890123456;
  r.n_effective = 9990;
  r.excluded = 10;
  r.config_hash = 0xabcdef0123456789ull;
  results.push_back(r);
  r.point = {0.1, 0.9};
  r.mean = -2.5e-7;
  results.push_back(r);

  CHECK_THROWS_AS(emit_report({}, ReportFormat::csv, "/tmp", "fkpde_empty"), Error);

  std::string p1 = emit_report(results, ReportFormat::csv, "/tmp/fkpde_rep", "est");
  std::string p2 = emit_report(results, ReportFormat::csv, "/tmp/fkpde_rep2", "est");
  std::ifstream f1(p1), f2(p2);
  std::stringstream s1, s2;
  s1 << f1.rdbuf();
  s2 << f2.rdbuf();
  CHECK(s1.str() == s2.str());  // byte-identical across emissions

  auto back = read_report_csv(p1);
  REQUIRE(back.size() == 2);
  CHECK(back[0].mean == results[0].mean);  // exact float round-trip
  CHECK(back[0].stderror == results[0].stderror);
  CHECK(back[0].point[0] == 0.5);
  CHECK(back[0].point[1] == -0.25);
  CHECK(back[1].mean == results[1].mean);
  CHECK(back[0].config_hash == results[0].config_hash);

  std::string pj = emit_report(results, ReportFormat::json, "/tmp/fkpde_rep", "est");
  std::ifstream jf(pj);
  std::stringstream js;
  js << jf.rdbuf();
  CHECK(js.str().find("\"schema_version\": 1") != std::string::npos);

  std::string pt = emit_report(results, ReportFormat::text, "/tmp/fkpde_rep", "est");
  std::ifstream tf(pt);
  CHECK(tf.good());
}
