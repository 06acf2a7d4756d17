#pragma once

// Flat key=value run configuration (dotted keys, '#' comments).  One file
// drives every subcommand; unknown keys are rejected so typos surface early.

#include <fstream>
#include <map>
#include <sstream>

#include "fkpde/bounds.hpp"
#include "fkpde/coeffs.hpp"
#include "fkpde/functionals.hpp"
#include "fkpde/pathsim.hpp"

namespace fkpde {

enum class ReportFormat { csv, json, text };

struct RunConfig {
  int d = 1;
  double p = 2, lambda = 1;
  Domain domain = Domain::interval(0, 1);
  std::shared_ptr<CoefficientSet> coeffs;
  CompiledExpr boundary_f;

  PathConfig path;  // seed doubles as the run seed
  long n_paths = 1000;
  int workers = 0;  // 0: hardware concurrency

  std::vector<Point> probes;
  DivergenceMode div_mode = DivergenceMode::direct;
  int mollify_k = 0;  // 0: fields used as written
  int mollify_quad = 16;

  double grid_delta = 1.0 / 64;
  double pad_factor = 0.5;  // xi^H box padding, in units of the diameter

  KernelConstants kernel;
  bool kernel_explicit = false;  // sigma's supplied rather than defaulted
  double exp_p1 = 0, exp_p2 = 0;
  std::vector<double> kato_eps{0.1, 0.5};

  std::vector<double> semigroup_times{0.05, 0.2};
  CompiledExpr semi_f, semi_g;
  long semi_paths = 100000;

  std::vector<double> martingale_times{0.05, 0.1, 0.2, 0.4};

  double compare_budget = 0.5;  // C in 3*stderr + C*(sqrt(h) + delta^2)

  std::string out_dir = ".";
  ReportFormat format = ReportFormat::csv;

  std::uint64_t config_hash = 0;
  std::string raw_text;
};

namespace detail {

inline std::string trim(std::string s) {
  auto issp = [](unsigned char c) { return std::isspace(c); };
  while (!s.empty() && issp(s.front())) s.erase(s.begin());
  while (!s.empty() && issp(s.back())) s.pop_back();
  if (s.size() >= 2 && s.front() == '"' && s.back() == '"') s = s.substr(1, s.size() - 2);
  return s;
}

inline std::vector<double> parse_numbers(const std::string& s, const std::string& key) {
  std::istringstream is(s);
  std::vector<double> out;
  double v;
  while (is >> v) out.push_back(v);
  if (out.empty()) fail(ErrKind::config, "no numbers in value of " + key);
  return out;
}

}  // namespace detail

inline RunConfig parse_run_config(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    std::string t = detail::trim(line);
    if (t.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      fail(ErrKind::config, "line " + std::to_string(lineno) + ": expected key=value");
    std::string key = detail::trim(line.substr(0, eq));
    std::string val = detail::trim(line.substr(eq + 1));
    if (key.empty() || val.empty())
      fail(ErrKind::config, "line " + std::to_string(lineno) + ": empty key or value");
    if (kv.count(key)) fail(ErrKind::config, "duplicate key " + key);
    kv[key] = val;
  }

  RunConfig rc;
  rc.raw_text = text;
  rc.config_hash = fnv1a(text);

  auto take = [&](const std::string& key) -> std::string {
    auto it = kv.find(key);
    if (it == kv.end()) return {};
    std::string v = it->second;
    kv.erase(it);
    return v;
  };
  auto take_num = [&](const std::string& key, double dflt) {
    std::string v = take(key);
    return v.empty() ? dflt : std::stod(v);
  };

  rc.d = static_cast<int>(take_num("d", 1));
  if (rc.d < 1 || rc.d > 8) fail(ErrKind::config, "d must lie in [1, 8]");
  rc.p = take_num("p", rc.d / 2.0 + 0.5001);
  rc.lambda = take_num("lambda", 1.0);

  // domain
  std::string kind = take("domain.kind");
  if (kind.empty()) kind = rc.d == 1 ? "interval" : "hyperrectangle";
  if (kind == "interval") {
    rc.domain = Domain::interval(take_num("domain.lo.1", 0), take_num("domain.hi.1", 1));
  } else if (kind == "hyperrectangle") {
    Point lo(rc.d), hi(rc.d);
    for (int i = 0; i < rc.d; ++i) {
      lo[i] = take_num("domain.lo." + std::to_string(i + 1), 0);
      hi[i] = take_num("domain.hi." + std::to_string(i + 1), 1);
    }
    rc.domain = Domain::hyperrectangle(lo, hi);
  } else if (kind == "ball") {
    Point c(rc.d);
    for (int i = 0; i < rc.d; ++i) c[i] = take_num("domain.center." + std::to_string(i + 1), 0);
    rc.domain = Domain::ball(c, take_num("domain.radius", 1));
  } else {
    fail(ErrKind::config, "domain.kind must be interval, hyperrectangle or ball");
  }
  if (rc.domain.dim() != rc.d) fail(ErrKind::config, "domain dimension mismatch");

  // coefficient expressions
  auto expr_or = [&](const std::string& key, const std::string& dflt) {
    std::string v = take(key);
    return CompiledExpr::from_source(v.empty() ? dflt : v);
  };
  std::vector<CompiledExpr> A, b, bhat;
  for (int i = 0; i < rc.d; ++i)
    for (int j = 0; j < rc.d; ++j)
      A.push_back(expr_or("A." + std::to_string(i + 1) + std::to_string(j + 1),
                          i == j ? "1" : "0"));
  for (int i = 0; i < rc.d; ++i) {
    b.push_back(expr_or("b." + std::to_string(i + 1), "0"));
    bhat.push_back(expr_or("bhat." + std::to_string(i + 1), "0"));
  }
  CompiledExpr c = expr_or("c", "0");
  CompiledExpr g = expr_or("g", "0");
  rc.coeffs = std::make_shared<CoefficientSet>(rc.d, rc.p, rc.lambda, rc.domain, std::move(A),
                                               std::move(b), std::move(bhat), std::move(c),
                                               std::move(g));

  rc.boundary_f = expr_or("boundary.f", "0");
  if (rc.boundary_f.max_var() > rc.d) fail(ErrKind::config, "boundary.f references x beyond d");

  rc.path.step_h = take_num("path.step_h", 1e-3);
  rc.path.t_max = take_num("path.t_max", 50 * sqr(rc.domain.diameter()));
  rc.path.exit_tol = take_num("path.exit_tol", 1e-9);
  rc.path.fd_step = take_num("path.fd_step", 0);
  rc.path.seed = static_cast<std::uint64_t>(take_num("mc.seed", 1));
  rc.n_paths = static_cast<long>(take_num("mc.paths", 1000));
  if (rc.n_paths < 100) fail(ErrKind::config, "mc.paths must be >= 100");
  rc.workers = static_cast<int>(take_num("mc.workers", 0));

  for (int i = 1;; ++i) {
    std::string v = take("probe." + std::to_string(i));
    if (v.empty()) break;
    Point pt = detail::parse_numbers(v, "probe");
    if (static_cast<int>(pt.size()) != rc.d) fail(ErrKind::config, "probe dimension mismatch");
    if (!rc.domain.contains(pt.data())) fail(ErrKind::config, "probe point must lie inside D");
    rc.probes.push_back(std::move(pt));
  }

  std::string mode = take("functionals.divergence_mode");
  if (mode == "resolvent")
    rc.div_mode = DivergenceMode::resolvent;
  else if (!mode.empty() && mode != "direct")
    fail(ErrKind::config, "functionals.divergence_mode must be direct or resolvent");

  rc.mollify_k = static_cast<int>(take_num("mollify.k", 0));
  rc.mollify_quad = static_cast<int>(take_num("mollify.quad_pts", 16));
  rc.grid_delta = take_num("grid.delta", 1.0 / 64);
  rc.pad_factor = take_num("grid.pad", 0.5);

  rc.kernel = default_kernel_constants(rc.d, rc.domain.diameter());
  std::string s1 = take("kernel.sigma1"), s2 = take("kernel.sigma2"), s3 = take("kernel.sigma3");
  if (!s1.empty()) rc.kernel.sigma1 = std::stod(s1);
  if (!s2.empty()) rc.kernel.sigma2 = std::stod(s2);
  if (!s3.empty()) rc.kernel.sigma3 = std::stod(s3);
  rc.kernel_explicit = !s1.empty() || !s2.empty() || !s3.empty();
  rc.kernel.theta = take_num("kernel.theta", 0.25);
  rc.kernel.validate();

  rc.exp_p1 = take_num("exponents.p1", rc.d + 1.0);
  rc.exp_p2 = take_num("exponents.p2", rc.d / 2.0 + 0.5);

  std::string ke = take("kato.eps");
  if (!ke.empty()) rc.kato_eps = detail::parse_numbers(ke, "kato.eps");

  std::string st = take("semigroup.t");
  if (!st.empty()) rc.semigroup_times = detail::parse_numbers(st, "semigroup.t");
  rc.semi_f = expr_or("semigroup.f", "1");
  rc.semi_g = expr_or("semigroup.g", "1");
  rc.semi_paths = static_cast<long>(take_num("semigroup.paths", 100000));

  std::string mt = take("martingale.times");
  if (!mt.empty()) rc.martingale_times = detail::parse_numbers(mt, "martingale.times");

  rc.compare_budget = take_num("compare.budget_C", 0.5);

  std::string od = take("output.dir");
  if (!od.empty()) rc.out_dir = od;
  std::string fmt = take("output.format");
  if (fmt == "json")
    rc.format = ReportFormat::json;
  else if (fmt == "text")
    rc.format = ReportFormat::text;
  else if (!fmt.empty() && fmt != "csv")
    fail(ErrKind::config, "output.format must be csv, json or text");

  if (!kv.empty()) fail(ErrKind::config, "unknown config key: " + kv.begin()->first);
  return rc;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) fail(ErrKind::io, "cannot read config file " + path);
  std::ostringstream ss;
  ss << is.rdbuf();
  return parse_run_config(ss.str());
}

}  // namespace fkpde
