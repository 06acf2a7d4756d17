#pragma once

// Euler-Maruyama simulation of the diffusion generated by the Dirichlet form
//   E0(u,v) = 1/2 ∫ sum_ij a_ij d_i u d_j v dx
// i.e. dX = beta(X) dt + sigma(X) dW with sigma sigma^T = Asym and
// beta_i = 1/2 sum_j d_j a_ij (the full matrix A, not just its symmetric
// part).  Exit from D is localized by bisecting the offending step.

#include "fkpde/coeffs.hpp"
#include "fkpde/rng.hpp"

namespace fkpde {

struct PathConfig {
  double step_h = 1e-3;
  double t_max = 10.0;
  std::uint64_t seed = 1;
  std::uint64_t substream = 0;  // path index
  double exit_tol = 1e-9;
  double fd_step = 0;  // 0: default 1e-5 * diameter
};

struct DiffusionPath {
  int d = 0;
  std::vector<double> times;   // t_0 = 0 < ... < t_n
  std::vector<double> states;  // (n+1) x d, row-major
  std::vector<double> dM;      // n x d martingale increments
  bool exited = false;
  double tau = 0;
  bool truncated = false;

  int steps() const { return static_cast<int>(times.size()) - 1; }
  const double* state(int k) const { return states.data() + static_cast<std::size_t>(k) * d; }
  const double* increment(int k) const { return dM.data() + static_cast<std::size_t>(k) * d; }
};

/// Lower-triangular L with L L^T = A_sym (exact small Cholesky).
inline void sigma_factor(const double* a_sym, int d, double* lower) {
  for (int i = 0; i < d * d; ++i) lower[i] = 0;
  for (int j = 0; j < d; ++j) {
    double s = a_sym[j * d + j];
    for (int k = 0; k < j; ++k) s -= sqr(lower[j * d + k]);
    if (!(s > 0)) fail(ErrKind::numerical, "sigma_factor: matrix is not positive definite");
    lower[j * d + j] = std::sqrt(s);
    for (int i = j + 1; i < d; ++i) {
      double t = a_sym[i * d + j];
      for (int k = 0; k < j; ++k) t -= lower[i * d + k] * lower[j * d + k];
      lower[i * d + j] = t / lower[j * d + j];
    }
  }
}

inline std::vector<double> sigma_factor(const std::vector<double>& a_sym, int d) {
  std::vector<double> lower(d * d);
  sigma_factor(a_sym.data(), d, lower.data());
  return lower;
}

/// beta_i(x) = 1/2 sum_j d a_ij / d x_j by central differences.
inline void drift_correction(const CoefficientSet& cs, const double* x, double fd_step,
                             double* beta) {
  int d = cs.dim();
  if (cs.A_constant()) {
    std::fill(beta, beta + d, 0.0);
    return;
  }
  std::fill(beta, beta + d, 0.0);
  std::vector<double> xp(x, x + d), ap(d * d), am(d * d);
  for (int j = 0; j < d; ++j) {
    xp[j] = x[j] + fd_step;
    cs.eval_matrix(xp.data(), ap.data());
    xp[j] = x[j] - fd_step;
    cs.eval_matrix(xp.data(), am.data());
    xp[j] = x[j];
    for (int i = 0; i < d; ++i) beta[i] += 0.5 * (ap[i * d + j] - am[i * d + j]) / (2 * fd_step);
  }
}

struct ExitInfo {
  bool exited = false;
  Point x_boundary;
  double theta = 1.0;  // fraction of the step at which the segment crosses
};

/// Bisects [x_prev, x_next] down to exit_tol when x_next leaves D.
inline ExitInfo detect_exit(const Domain& dom, const double* x_prev, const double* x_next,
                            double exit_tol) {
  int d = dom.dim();
  ExitInfo info;
  if (dom.contains(x_next)) return info;
  info.exited = true;
  double lo = 0, hi = 1;  // segment parameter; lo inside, hi outside
  double seg = 0;
  for (int i = 0; i < d; ++i) seg += sqr(x_next[i] - x_prev[i]);
  seg = std::sqrt(seg);
  Point mid(d);
  if (seg > 0) {
    while ((hi - lo) * seg > exit_tol) {
      double m = 0.5 * (lo + hi);
      for (int i = 0; i < d; ++i) mid[i] = x_prev[i] + m * (x_next[i] - x_prev[i]);
      (dom.contains(mid.data()) ? lo : hi) = m;
    }
  }
  info.theta = std::max(0.5 * (lo + hi), 1e-12);
  info.x_boundary.resize(d);
  for (int i = 0; i < d; ++i)
    info.x_boundary[i] = x_prev[i] + info.theta * (x_next[i] - x_prev[i]);
  dom.project_to_boundary(info.x_boundary.data(), info.x_boundary.data());
  return info;
}

/// One Euler step of the E0-process (P-dynamics).
inline void step_euler(const CoefficientSet& cs, const Domain& dom, const double* x, double h,
                       const double* noise, double* x_next, double* dM) {
  (void)dom;
  int d = cs.dim();
  std::vector<double> a(d * d), as(d * d), lower(d * d), beta(d);
  cs.eval_matrix(x, a.data());
  symmetrize(a.data(), d, as.data());
  sigma_factor(as.data(), d, lower.data());
  double fd = cs.domain().diameter() * 1e-5;
  drift_correction(cs, x, fd, beta.data());
  double sh = std::sqrt(h);
  for (int i = 0; i < d; ++i) {
    double s = 0;
    for (int j = 0; j <= i; ++j) s += lower[i * d + j] * noise[j];
    dM[i] = sh * s;
    x_next[i] = x[i] + beta[i] * h + dM[i];
  }
}

/// Reusable stepping engine.  Holds per-path scratch so the hot loop does not
/// allocate; `add_b_drift` switches to the Q-dynamics (generator L0 + b.grad).
class Stepper {
public:
  struct Result {
    bool exited = false;
    double dt = 0;     // h, or theta*h on the exit step
    double theta = 1;  // fraction of the step taken
  };

  Stepper(const CoefficientSet& cs, const Domain& dom, double h, double exit_tol, double fd_step,
          bool add_b_drift = false)
      : cs_(cs),
        dom_(dom),
        d_(cs.dim()),
        h_(h),
        sqrt_h_(std::sqrt(h)),
        exit_tol_(exit_tol),
        fd_step_(fd_step > 0 ? fd_step : 1e-5 * dom.diameter()),
        add_b_(add_b_drift),
        a_(d_ * d_),
        as_(d_ * d_),
        lower_(d_ * d_),
        beta_(d_),
        bvec_(d_),
        prop_(d_) {
    if (cs.A_constant()) {
      for (int i = 0; i < d_ * d_; ++i) a_[i] = cs.A_entry(i / d_, i % d_).constant_value();
      symmetrize(a_.data(), d_, as_.data());
      sigma_factor(as_.data(), d_, lower_.data());
      const_factor_ = true;
    }
  }

  int dim() const { return d_; }
  double h() const { return h_; }

  /// Solves Asym y = rhs with the Cholesky factor from the latest advance()
  /// (i.e. at the step's starting point), valid only right after that call.
  void solve_last_asym(const double* rhs, double* y) const {
    for (int i = 0; i < d_; ++i) {
      double s = rhs[i];
      for (int j = 0; j < i; ++j) s -= lower_[i * d_ + j] * y[j];
      y[i] = s / lower_[i * d_ + i];
    }
    for (int i = d_ - 1; i >= 0; --i) {
      double s = y[i];
      for (int j = i + 1; j < d_; ++j) s -= lower_[j * d_ + i] * y[j];
      y[i] = s / lower_[i * d_ + i];
    }
  }

  /// Advances x in place; dM_out receives the martingale increment actually
  /// applied (theta-truncated on the exit step, consistent with the clamped
  /// final state).
  Result advance(double* x, const double* noise, double* dM_out) {
    Result res;
    if (!const_factor_) {
      cs_.eval_matrix(x, a_.data());
      symmetrize(a_.data(), d_, as_.data());
      sigma_factor(as_.data(), d_, lower_.data());
    }
    if (const_factor_) {
      std::fill(beta_.begin(), beta_.end(), 0.0);
    } else {
      drift_correction(cs_, x, fd_step_, beta_.data());
    }
    if (add_b_) {
      cs_.eval_b(x, bvec_.data());
      for (int i = 0; i < d_; ++i) beta_[i] += bvec_[i];
    }
    for (int i = 0; i < d_; ++i) {
      double s = 0;
      for (int j = 0; j <= i; ++j) s += lower_[i * d_ + j] * noise[j];
      dM_out[i] = sqrt_h_ * s;
      prop_[i] = x[i] + beta_[i] * h_ + dM_out[i];
    }
    ExitInfo info = detect_exit(dom_, x, prop_.data(), exit_tol_);
    if (!info.exited) {
      res.dt = h_;
      std::copy(prop_.begin(), prop_.end(), x);
      return res;
    }
    res.exited = true;
    res.theta = info.theta;
    res.dt = info.theta * h_;
    // martingale increment of the partial step, consistent with the clamped
    // boundary state: dM = X_tau - X_prev - drift * (theta h)
    for (int i = 0; i < d_; ++i) dM_out[i] = info.x_boundary[i] - x[i] - beta_[i] * res.dt;
    std::copy(info.x_boundary.begin(), info.x_boundary.end(), x);
    return res;
  }

private:
  const CoefficientSet& cs_;
  const Domain& dom_;
  int d_;
  double h_, sqrt_h_, exit_tol_, fd_step_;
  bool add_b_;
  bool const_factor_ = false;
  std::vector<double> a_, as_, lower_, beta_, bvec_, prop_;
};

/// Full trajectory up to exit or t_max; deterministic in (seed, substream).
inline DiffusionPath simulate_path(const CoefficientSet& cs, const Domain& dom,
                                   const PathConfig& pc, const Point& x0,
                                   bool add_b_drift = false) {
  int d = cs.dim();
  if (static_cast<int>(x0.size()) != d) fail(ErrKind::config, "x0 dimension mismatch");
  if (!dom.contains(x0.data())) fail(ErrKind::config, "x0 must lie inside D");
  if (!(pc.step_h > 0) || pc.step_h > pc.t_max)
    fail(ErrKind::config, "need 0 < step_h <= t_max");
  if (!(pc.exit_tol > 0) || pc.exit_tol >= dom.inradius())
    fail(ErrKind::config, "exit_tol must lie in (0, inradius)");

  DiffusionPath path;
  path.d = d;
  path.times.push_back(0.0);
  path.states.insert(path.states.end(), x0.begin(), x0.end());

  Stepper stepper(cs, dom, pc.step_h, pc.exit_tol, pc.fd_step, add_b_drift);
  PathRng rng(pc.seed, pc.substream);
  Point x = x0;
  std::vector<double> noise(d), dm(d);
  double t = 0;
  std::uint64_t k = 0;
  while (t < pc.t_max) {
    rng.step_normals(k, d, noise.data());
    Stepper::Result r = stepper.advance(x.data(), noise.data(), dm.data());
    t += r.dt;
    ++k;
    path.times.push_back(t);
    path.states.insert(path.states.end(), x.begin(), x.end());
    path.dM.insert(path.dM.end(), dm.begin(), dm.end());
    if (r.exited) {
      path.exited = true;
      path.tau = t;
      return path;
    }
  }
  path.truncated = true;
  return path;
}

}  // namespace fkpde
