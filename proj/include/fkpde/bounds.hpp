#pragma once

// Explicit constants and inequalities of the kernel-estimate machinery:
// Gaussian majorant h(t,x,y), the exponent/bump constants, the two
// kernel-integral bounds, the Khasminskii threshold M and the occupation /
// exponential-moment chain, and the Kato-class constant A(eps).

#include <Eigen/Sparse>
#include <thread>

#include "fkpde/oracle.hpp"
#include "fkpde/pathsim.hpp"
#include "fkpde/quad.hpp"

namespace fkpde {

struct KernelConstants {
  double sigma1 = 1;   // majorant amplitude
  double sigma2 = 1;   // majorant exponential rate
  double sigma3 = 1;   // Green-function constant
  double theta = 0.25; // occupation budget, strictly below 1/2
  double varsigma = 1; // diameter of D

  void validate() const {
    if (!(sigma1 > 0 && sigma2 > 0 && sigma3 > 0 && varsigma > 0))
      fail(ErrKind::config, "kernel constants must be positive");
    if (!(theta > 0 && theta < 0.5)) fail(ErrKind::config, "theta must lie in (0, 1/2)");
  }
};

/// Analytic values for A = I (exact Gaussian transition kernel; free-space
/// Green constant for d >= 3).
inline KernelConstants default_kernel_constants(int d, double varsigma, double theta = 0.25) {
  KernelConstants kc;
  kc.sigma1 = std::pow(2 * kPi, -d / 2.0);
  kc.sigma2 = 0.5;
  kc.sigma3 = d >= 3 ? std::exp(std::lgamma(d / 2.0 - 1)) / (2 * std::pow(kPi, d / 2.0)) : 1.0;
  kc.theta = theta;
  kc.varsigma = varsigma;
  return kc;
}

/// Largest M with e^|x| >= M |x|^gamma for all x: the minimum of e^r / r^gamma
/// sits at r = gamma.
inline double bump_constant(double gamma) {
  if (!(gamma > 0)) fail(ErrKind::config, "bump_constant needs gamma > 0");
  return std::pow(std::exp(1.0) / gamma, gamma);
}

struct ExponentChoices {
  double p1 = 0, q1 = 0, alpha = 0;
  double p2 = 0, q2 = 0, beta = 0;
  double M1 = 0, M2 = 0, M3 = 0;
  double div_r_integral = 0;  // ∫_0^ς r^{d - q1(d-alpha) - 1} dr, closed form
  double pot_r_integral = 0;  // ∫_0^ς r^{d - 2 beta q2 - 1} dr, closed form
};

/// Midpoint picks of alpha and beta in their admissible intervals, with the
/// r-integrals evaluated in closed form over (0, varsigma).
inline ExponentChoices choose_exponents(int d, double p1, double p2, double varsigma) {
  if (d < 2) fail(ErrKind::config, "exponent choices apply to d >= 2");
  if (!(p1 > d)) fail(ErrKind::config, "need p1 > d");
  if (!(p2 > d / 2.0)) fail(ErrKind::config, "need p2 > d/2");
  ExponentChoices ec;
  ec.p1 = p1;
  ec.q1 = p1 / (p1 - 1);
  ec.p2 = p2;
  ec.q2 = p2 / (p2 - 1);
  // q1 < d/(d-alpha)  <=>  alpha > d/p1;  alpha in (d/p1, 1)
  double alo = d / p1;
  if (!(alo < 1)) fail(ErrKind::config, "empty alpha interval");
  ec.alpha = 0.5 * (alo + 1.0);
  // beta in (d/2 - 1, d/(2 q2)), lower end clipped at 0
  double blo = std::max(0.0, d / 2.0 - 1.0), bhi = d / (2 * ec.q2);
  if (!(blo < bhi)) fail(ErrKind::config, "empty beta interval");
  ec.beta = 0.5 * (blo + bhi);
  ec.M1 = bump_constant((d - ec.alpha + 1) / 2);
  ec.M2 = bump_constant(ec.beta);
  ec.M3 = bump_constant(5.0 / 8);
  double s1 = d - ec.q1 * (d - ec.alpha);
  double s2 = d - 2 * ec.beta * ec.q2;
  if (!(s1 > 0) || !(s2 > 0)) fail(ErrKind::config, "r-integral exponent not integrable");
  ec.div_r_integral = std::pow(varsigma, s1) / s1;
  ec.pot_r_integral = std::pow(varsigma, s2) / s2;
  return ec;
}

/// h(t,x,y) = sigma1 t^{-d/2} exp(-sigma2 |x-y|^2 / t).
inline double aronson_majorant(const KernelConstants& kc, int d, double t, const double* x,
                               const double* y) {
  if (!(t > 0)) fail(ErrKind::config, "majorant needs t > 0");
  double r2 = 0;
  for (int i = 0; i < d; ++i) r2 += sqr(x[i] - y[i]);
  return kc.sigma1 * std::pow(t, -d / 2.0) * std::exp(-kc.sigma2 * r2 / t);
}

/// Bound on |∫_D h(t,x,y) div mu(y) dy| in terms of ||mu||_{L^{p1}} (d >= 2)
/// or ||mu||_{L^2} (d = 1).
inline double kernel_div_bound(const KernelConstants& kc, const ExponentChoices& ec, int d,
                                double t, double mu_norm, double varsigma) {
  if (!(t > 0)) fail(ErrKind::config, "bound needs t > 0");
  if (d == 1) {
    double M3 = bump_constant(5.0 / 8);
    return std::pow(2.0, 1.5) * kc.sigma1 * std::pow(kc.sigma2, 3.0 / 8) *
           std::pow(varsigma, 0.25) / (M3 * std::pow(t, 7.0 / 8)) * mu_norm;
  }
  double pre = 2 * kc.sigma1 /
               (std::pow(kc.sigma2, (d - ec.alpha - 1) / 2) * ec.M1 *
                std::pow(t, (1 + ec.alpha) / 2));
  return pre * std::pow(ec.div_r_integral, 1.0 / ec.q1) * mu_norm;
}

/// Bound on |∫_D h(t,x,y) nu(y) dy| in terms of ||nu||_{L^{p2}} (d >= 2) or
/// ||nu||_{L^1} (d = 1).
inline double kernel_pot_bound(const KernelConstants& kc, const ExponentChoices& ec, int d,
                                double t, double nu_norm, double varsigma) {
  (void)varsigma;
  if (!(t > 0)) fail(ErrKind::config, "bound needs t > 0");
  if (d == 1) return kc.sigma1 / std::sqrt(t) * nu_norm;
  double pre = kc.sigma1 / (std::pow(kc.sigma2, ec.beta) * ec.M2 *
                            std::pow(t, d / 2.0 - ec.beta));
  return pre * std::pow(ec.pot_r_integral, 1.0 / ec.q2) * nu_norm;
}

/// M = theta [d - q(d-2)]^{1/q} / (sigma3 varsigma^{d/q - (d-2)}), q conjugate
/// to p.  Defined for d >= 3; d in {1,2} fall back to the occupation check.
inline double khasminskii_threshold(const KernelConstants& kc, int d, double p) {
  if (d < 3) fail(ErrKind::config, "khasminskii_threshold requires d >= 3");
  if (!(p > d / 2.0)) fail(ErrKind::config, "need p > d/2");
  kc.validate();
  double q = p / (p - 1);
  double s = d - q * (d - 2);
  if (!(s > 0)) fail(ErrKind::numerical, "internal: d - q(d-2) must be positive");
  return kc.theta * std::pow(s, 1.0 / q) /
         (kc.sigma3 * std::pow(kc.varsigma, d / q - (d - 2)));
}

// --- kernel-integral quadrature (left-hand sides of the bound checks) -----

/// ∫_rect h(t,x,y) w(y) dy by adaptive quadrature (d = 1 or 2).
inline double kernel_integral_rect(const KernelConstants& kc, int d, double t, const double* x,
                                   const std::function<double(const double*)>& w,
                                   const BoundingBox& rect, double tol = 1e-6) {
  if (d == 1) {
    return integrate_adaptive(
        [&](double y) {
          double yy[1] = {y};
          return aronson_majorant(kc, 1, t, x, yy) * w(yy);
        },
        rect.lo[0], rect.hi[0], tol);
  }
  if (d == 2) {
    return integrate_adaptive_2d(
        [&](double y1, double y2) {
          double yy[2] = {y1, y2};
          return aronson_majorant(kc, 2, t, x, yy) * w(yy);
        },
        rect.lo[0], rect.hi[0], rect.lo[1], rect.hi[1], tol);
  }
  fail(ErrKind::config, "kernel quadrature supports d in {1,2}");
}

/// L^p norm of a field over a rectangle by the same adaptive quadrature.
inline double lp_norm_rect(const std::function<double(const double*)>& f, int d, double p,
                           const BoundingBox& rect, double tol = 1e-8) {
  std::function<double(const double*)> absp = [&](const double* y) {
    return std::pow(std::fabs(f(y)), p);
  };
  double integral;
  if (d == 1) {
    integral = integrate_adaptive(
        [&](double y) {
          double yy[1] = {y};
          return absp(yy);
        },
        rect.lo[0], rect.hi[0], tol);
  } else if (d == 2) {
    integral = integrate_adaptive_2d(
        [&](double y1, double y2) {
          double yy[2] = {y1, y2};
          return absp(yy);
        },
        rect.lo[0], rect.hi[0], rect.lo[1], rect.hi[1], tol);
  } else {
    fail(ErrKind::config, "Lp quadrature supports d in {1,2}");
  }
  return std::pow(integral, 1.0 / p);
}

// --- occupation / exponential moment Monte Carlo ------------------------------

struct OccupationProbe {
  Point x;
  double mean_occupation = 0;
  double se_occupation = 0;
  double exp_moment = 0;
  double se_exp = 0;
};

struct OccupationReport {
  std::vector<OccupationProbe> probes;
  double max_occupation = 0;
  double max_exp_moment = 0;
  bool khasminskii_consistent = true;  // occ <= theta  =>  exp <= 1/(1-theta)
  long truncated = 0;
};

namespace detail {

// deterministic tree mean/se over per-path slots
inline void slot_stats(std::span<const double> v, double* mean, double* se) {
  long n = static_cast<long>(v.size());
  std::vector<double> sq(v.size());
  for (long i = 0; i < n; ++i) sq[i] = v[i] * v[i];
  auto tree = [&](std::span<const double> a) {
    std::function<double(long, long)> go = [&](long lo, long hi) -> double {
      if (hi - lo <= 8) {
        double s = 0;
        for (long i = lo; i < hi; ++i) s += a[i];
        return s;
      }
      long mid = lo + (hi - lo) / 2;
      return go(lo, mid) + go(mid, hi);
    };
    return go(0, n);
  };
  double s = tree(v), ss = tree(sq);
  *mean = s / n;
  *se = std::sqrt(std::max(0.0, ss / n - sqr(*mean)) / n);
}

}  // namespace detail

/// E[∫_0^tau |w|(X_s) ds] and E[exp ∫ |w| ds] under the Q-dynamics (explicit
/// drift b), at each probe point.  Slot-indexed and tree-reduced, so the
/// result is independent of the worker count.
inline OccupationReport occupation_bound_mc(const CoefficientSet& cs, const Domain& dom,
                                            const std::function<double(const double*)>& w,
                                            const std::vector<Point>& probes, long n_paths,
                                            const PathConfig& pc, double theta, int workers = 1) {
  OccupationReport rep;
  int d = cs.dim();
  for (const Point& probe : probes) {
    OccupationProbe pr;
    pr.x = probe;
    std::vector<double> occ_slot(n_paths, 0.0), exp_slot(n_paths, 0.0);
    std::vector<std::uint8_t> trunc(n_paths, 0);
    auto work = [&](long lo, long hi) {
      std::vector<double> noise(d), dm(d);
      Point x(d), xprev(d);
      Stepper st(cs, dom, pc.step_h, pc.exit_tol, pc.fd_step, /*add_b_drift=*/true);
      for (long p = lo; p < hi; ++p) {
        PathRng rng(pc.seed, p);
        x = probe;
        double occ = 0;
        bool exited = false;
        double t = 0;
        for (std::uint64_t k = 0; t < pc.t_max; ++k) {
          rng.step_normals(k, d, noise.data());
          xprev = x;
          auto r = st.advance(x.data(), noise.data(), dm.data());
          occ += std::fabs(w(xprev.data())) * r.dt;
          t += r.dt;
          if (r.exited) {
            exited = true;
            break;
          }
        }
        if (!exited) trunc[p] = 1;
        occ_slot[p] = occ;
        exp_slot[p] = std::exp(occ);
      }
    };
    if (workers <= 1) {
      work(0, n_paths);
    } else {
      std::vector<std::thread> pool;
      long chunk = (n_paths + workers - 1) / workers;
      for (int t = 0; t < workers; ++t) {
        long lo = t * chunk, hi = std::min(n_paths, lo + chunk);
        if (lo < hi) pool.emplace_back(work, lo, hi);
      }
      for (auto& th : pool) th.join();
    }
    long truncated = 0;
    for (long p = 0; p < n_paths; ++p) truncated += trunc[p];
    if (truncated > 0.01 * n_paths)
      fail(ErrKind::numerical, "occupation MC: >1% truncated paths (raise t_max)");
    rep.truncated += truncated;
    detail::slot_stats(occ_slot, &pr.mean_occupation, &pr.se_occupation);
    detail::slot_stats(exp_slot, &pr.exp_moment, &pr.se_exp);
    rep.max_occupation = std::max(rep.max_occupation, pr.mean_occupation);
    rep.max_exp_moment = std::max(rep.max_exp_moment, pr.exp_moment);
    if (pr.mean_occupation <= theta &&
        pr.exp_moment > 1.0 / (1.0 - theta) * (1 + 3 * pr.se_exp / std::max(pr.exp_moment, 1e-12)))
      rep.khasminskii_consistent = false;
    rep.probes.push_back(std::move(pr));
  }
  return rep;
}

// --- Aronson majorant empirical check -------------------------------------------

struct AronsonCheck {
  double t = 0;
  long cells = 0, occupied = 0, violations = 0;
  double max_ratio = 0;  // max over cells of density / majorant
};

/// Histograms the killed process at time t against h(t,x0,.) cell by cell.
/// A cell counts as a violation only when its density exceeds the majorant by
/// more than 3 binomial standard errors.
inline AronsonCheck aronson_empirical_check(const CoefficientSet& cs, const Domain& dom,
                                            const KernelConstants& kc, double t, const Point& x0,
                                            long n_paths, const PathConfig& pc, int cells_axis) {
  int d = cs.dim();
  if (d > 3) fail(ErrKind::config, "empirical check supports d <= 3");
  BoundingBox bb = dom.bbox();
  long n_cells = 1;
  for (int i = 0; i < d; ++i) n_cells *= cells_axis;
  std::vector<long> counts(n_cells, 0);

  Stepper st(cs, dom, pc.step_h, pc.exit_tol, pc.fd_step);
  std::vector<double> noise(d), dm(d);
  Point x(d);
  for (long p = 0; p < n_paths; ++p) {
    PathRng rng(pc.seed, p);
    x = x0;
    bool alive = true;
    double tt = 0;
    for (std::uint64_t k = 0; tt < t; ++k) {
      rng.step_normals(k, d, noise.data());
      auto r = st.advance(x.data(), noise.data(), dm.data());
      tt += r.dt;
      if (r.exited) {
        alive = false;
        break;
      }
    }
    if (!alive) continue;
    long idx = 0;
    for (int i = 0; i < d; ++i) {
      int c = static_cast<int>((x[i] - bb.lo[i]) / (bb.hi[i] - bb.lo[i]) * cells_axis);
      c = std::clamp(c, 0, cells_axis - 1);
      idx = idx * cells_axis + c;
    }
    ++counts[idx];
  }

  AronsonCheck chk;
  chk.t = t;
  chk.cells = n_cells;
  double cell_vol = 1;
  for (int i = 0; i < d; ++i) cell_vol *= (bb.hi[i] - bb.lo[i]) / cells_axis;
  Point center(d);
  std::vector<int> idx(d, 0);
  for (long c = 0; c < n_cells; ++c) {
    long rem = c;
    for (int i = d - 1; i >= 0; --i) {
      idx[i] = static_cast<int>(rem % cells_axis);
      rem /= cells_axis;
    }
    if (counts[c] == 0) continue;
    ++chk.occupied;
    // majorant at the cell point closest to x0: the cell maximum of the
    // radial kernel, a valid upper bound for the cell-averaged density
    for (int i = 0; i < d; ++i) {
      double lo = bb.lo[i] + (bb.hi[i] - bb.lo[i]) * idx[i] / static_cast<double>(cells_axis);
      double hi = lo + (bb.hi[i] - bb.lo[i]) / cells_axis;
      center[i] = std::clamp(x0[i], lo, hi);
    }
    double density = counts[c] / (static_cast<double>(n_paths) * cell_vol);
    double se = std::sqrt(counts[c]) / (static_cast<double>(n_paths) * cell_vol);
    double maj = aronson_majorant(kc, d, t, x0.data(), center.data());
    // the ratio display is restricted to cells whose density is resolved
    if (counts[c] >= 20)
      chk.max_ratio = std::max(chk.max_ratio, density / std::max(maj, 1e-300));
    if (density - 3 * se > maj) ++chk.violations;
  }
  return chk;
}

// --- Kato-class constant -------------------------------------------------------

struct KatoResult {
  double value = 0;
  int iterations = 0;
  std::vector<double> rayleigh_history;
};

/// Smallest A(eps) with ∫ (sum b_i^2 + bhat_i^2 + |c|) eta^2 <= eps ∫ |grad
/// eta|^2 + A(eps) ∫ eta^2: the largest generalized eigenvalue of
/// (W - eps S, Mass) on the free grid, by shifted power iteration.
inline KatoResult kato_constant(const CoefficientSet& cs, std::shared_ptr<const Grid> grid,
                                double eps, double rel_tol = 1e-8, int max_iter = 500) {
  if (!(eps >= 0)) fail(ErrKind::config, "kato_constant needs eps >= 0");
  const Grid& g = *grid;
  int d = cs.dim();
  long n = g.n_nodes();

  // nodal weight sum b_i^2 + bhat_i^2 + |c|, sampled on the closure of D so
  // that a constant c contributes a genuinely constant weight on D-sized grids
  Eigen::VectorXd wdiag(n);
  std::vector<double> x(d);
  for (long node = 0; node < n; ++node) {
    g.node_coords(node, x.data());
    double s = 0;
    if (cs.domain().contains_closed(x.data())) {
      s = std::fabs(cs.c_expr().eval(x.data()));
      for (int i = 0; i < d; ++i)
        s += sqr(cs.b_entry(i).eval(x.data())) + sqr(cs.bhat_entry(i).eval(x.data()));
    }
    wdiag[node] = s;
  }

  // unhalved stiffness ∫ |grad eta|^2, natural boundary (constants admissible)
  std::vector<Eigen::Triplet<double>> trip;
  double vol = g.cell_volume();
  for (long node = 0; node < n; ++node) {
    for (int ax = 0; ax < d; ++ax) {
      long nb = g.neighbor(node, ax, +1);
      if (nb < 0) continue;
      double w = vol / sqr(g.step(ax));
      trip.emplace_back(node, node, w);
      trip.emplace_back(nb, nb, w);
      trip.emplace_back(node, nb, -w);
      trip.emplace_back(nb, node, -w);
    }
  }
  Eigen::SparseMatrix<double> S(n, n);
  S.setFromTriplets(trip.begin(), trip.end());

  // lambda_max(B) <= max(w) because -eps S is negative semidefinite, so the
  // resolvent (sigma I - B) with sigma = max(w)+1 is SPD; power iteration on
  // it picks out the top eigenvalue of B with a healthy gap
  double sigma = wdiag.maxCoeff() + 1.0;
  Eigen::SparseMatrix<double> M = (eps / vol) * S;
  for (long node = 0; node < n; ++node) M.coeffRef(node, node) += sigma - wdiag[node];
  M.makeCompressed();
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> solver(M);
  if (solver.info() != Eigen::Success)
    fail(ErrKind::numerical, "kato_constant: resolvent factorization failed");

  Eigen::VectorXd v = Eigen::VectorXd::Ones(n) + 0.001 * Eigen::VectorXd::Random(n);
  v.normalize();
  KatoResult res;
  double prev_q = std::numeric_limits<double>::infinity();
  double abs_floor = 1e-12 * (wdiag.maxCoeff() + 1.0);  // handles w == 0 exactly
  for (int it = 0; it < max_iter; ++it) {
    v = solver.solve(v);
    v.normalize();
    double q = v.dot(wdiag.cwiseProduct(v)) - (eps / vol) * v.dot(S * v);
    res.rayleigh_history.push_back(q);
    res.iterations = it + 1;
    if (it > 0 && std::fabs(q - prev_q) <= rel_tol * std::fabs(q) + abs_floor) {
      res.value = q;
      return res;
    }
    prev_q = q;
  }
  std::string hist;
  for (std::size_t i = res.rayleigh_history.size() > 6 ? res.rayleigh_history.size() - 6 : 0;
       i < res.rayleigh_history.size(); ++i)
    hist += " " + std::to_string(res.rayleigh_history[i]);
  fail(ErrKind::numerical, "kato_constant: power iteration stagnated; Rayleigh tail:" + hist);
}

}  // namespace fkpde
