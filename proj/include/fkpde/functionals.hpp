#pragma once

// Per-path accumulation of the Feynman-Kac exponent
//   Z_t = exp( ∫ (asym^-1 b)* dM  -  1/2 ∫ b* asym^-1 b ds  +  ∫ c ds  +  D_t )
// where D_t is the divergence functional: either -∫ div bhat ds evaluated on a
// smooth (possibly mollified) bhat, or the resolvent route
//   D_t = [xiH(X_t) - xiH(X_0) - ∫ grad xiH * dM] - ∫ xiH ds
// built from the discrete solution of the resolvent identity.

#include "fkpde/grid.hpp"
#include "fkpde/pathsim.hpp"

namespace fkpde {

enum class DivergenceMode { direct, resolvent };

struct ExponentAccumulator {
  double girsanov = 0;    // ∫ (asym^-1 b)* dM
  double quad = 0;        // 1/2 ∫ b* asym^-1 b ds, nondecreasing
  double potential = 0;   // ∫ c ds
  double divergence = 0;  // divergence functional
  DivergenceMode mode = DivergenceMode::direct;

  double exponent() const { return girsanov - quad + potential + divergence; }
};

/// Left-endpoint Ito increments of the Girsanov factor:
///   dG = (asym^-1 b)(x)^T dM,   dQ = 1/2 b^T asym^-1 b (x) h.
inline void girsanov_increment(const CoefficientSet& cs, const double* x, const double* dM,
                               double h, double* dG, double* dQ) {
  int d = cs.dim();
  std::vector<double> b(d);
  cs.eval_b(x, b.data());
  bool zero = true;
  for (double v : b) zero = zero && v == 0.0;
  if (zero) {
    *dG = 0;
    *dQ = 0;
    return;
  }
  std::vector<double> a(d * d), as(d * d), lower(d * d), y(b);
  cs.eval_matrix(x, a.data());
  symmetrize(a.data(), d, as.data());
  sigma_factor(as.data(), d, lower.data());  // throws on singular Asym
  // solve L L^T y = b
  for (int i = 0; i < d; ++i) {
    double s = y[i];
    for (int j = 0; j < i; ++j) s -= lower[i * d + j] * y[j];
    y[i] = s / lower[i * d + i];
  }
  for (int i = d - 1; i >= 0; --i) {
    double s = y[i];
    for (int j = i + 1; j < d; ++j) s -= lower[j * d + i] * y[j];
    y[i] = s / lower[i * d + i];
  }
  double g = 0, q = 0;
  for (int i = 0; i < d; ++i) {
    g += y[i] * dM[i];
    q += y[i] * b[i];
  }
  *dG = g;
  *dQ = 0.5 * q * h;
}

inline double potential_increment(const CoefficientSet& cs, const double* x, double h) {
  return cs.eval_c(x) * h;
}

/// -div bhat(x) * h with the divergence by central differences.  `bhat` is any
/// callable (const double* x, double* out) smooth at x.
template <class VecField>
double divergence_direct(const VecField& bhat, int d, const double* x, double h, double fd_step) {
  std::vector<double> xp(x, x + d), vp(d), vm(d);
  double div = 0;
  for (int i = 0; i < d; ++i) {
    xp[i] = x[i] + fd_step;
    bhat(xp.data(), vp.data());
    xp[i] = x[i] - fd_step;
    bhat(xp.data(), vm.data());
    xp[i] = x[i];
    div += (vp[i] - vm[i]) / (2 * fd_step);
  }
  return -div * h;
}

/// Streaming form of the resolvent-route divergence functional.  Feed the
/// path in step order; the result matches divergence_resolvent on the stored
/// trajectory exactly.
class ResolventDivergence {
public:
  explicit ResolventDivergence(const GridFunction* xiH) : xiH_(xiH) {}

  void start(const double* x0) {
    xi0_ = xiH_->value_at(x0);
    mart_ = 0;
    time_int_ = 0;
  }

  /// x_prev is the state before the step, dM the realized increment, dt the
  /// effective step length (theta-truncated at exit).
  void step(const double* x_prev, const double* dM, double dt) {
    int d = xiH_->grid->dim();
    double grad[8];
    xiH_->gradient_at(x_prev, grad);
    for (int i = 0; i < d; ++i) mart_ += grad[i] * dM[i];
    time_int_ += xiH_->value_at(x_prev) * dt;
  }

  double finish(const double* x_final) const {
    return (xiH_->value_at(x_final) - xi0_ - mart_) - time_int_;
  }

private:
  const GridFunction* xiH_;
  double xi0_ = 0, mart_ = 0, time_int_ = 0;
};

/// Divergence functional along a stored path, up to step index `upto`
/// (exclusive; pass path.steps() for the whole trajectory).
inline double divergence_resolvent(const GridFunction& xiH, const DiffusionPath& path, int upto) {
  if (upto < 0 || upto > path.steps()) fail(ErrKind::config, "bad step range");
  if (upto == 0) return 0.0;
  ResolventDivergence acc(&xiH);
  acc.start(path.state(0));
  for (int k = 0; k < upto; ++k)
    acc.step(path.state(k), path.increment(k), path.times[k + 1] - path.times[k]);
  return acc.finish(path.state(upto));
}

constexpr double kExpOverflow = 700.0;

/// Z = exp(girsanov - quad + potential + divergence).  Throws on exponent
/// overflow; the estimator flags and excludes such paths rather than clamping.
inline double fk_weight(const ExponentAccumulator& acc) {
  double e = acc.exponent();
  if (e > kExpOverflow)
    fail(ErrKind::numerical, "Feynman-Kac exponent overflow (" + std::to_string(e) + ")");
  return std::exp(e);
}

/// Z_tau * f(X_tau) for an exited path.
template <class BoundaryFn>
double fk_payoff(const DiffusionPath& path, const ExponentAccumulator& acc, const BoundaryFn& f) {
  if (!path.exited) fail(ErrKind::numerical, "fk_payoff requires an exited path");
  return fk_weight(acc) * f(path.state(path.steps()));
}

}  // namespace fkpde
