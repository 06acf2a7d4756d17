#pragma once

// Gauss-Legendre rules and a small adaptive quadrature, shared by the
// mollifier convolution and the kernel-bound checks.

#include <functional>

#include "fkpde/common.hpp"

namespace fkpde {

struct GaussRule {
  std::vector<double> nodes;    // on (-1, 1)
  std::vector<double> weights;  // sum to 2
};

/// n-point Gauss-Legendre rule via Newton iteration on P_n.
inline GaussRule gauss_legendre(int n) {
  if (n < 1) fail(ErrKind::numerical, "gauss_legendre needs n >= 1");
  GaussRule r;
  r.nodes.resize(n);
  r.weights.resize(n);
  for (int i = 0; i < (n + 1) / 2; ++i) {
    double x = std::cos(kPi * (i + 0.75) / (n + 0.5));
    double dp = 0;
    for (int it = 0; it < 100; ++it) {
      double p0 = 1, p1 = x;
      for (int k = 2; k <= n; ++k) {
        double p2 = ((2 * k - 1) * x * p1 - (k - 1) * p0) / k;
        p0 = p1;
        p1 = p2;
      }
      dp = n * (x * p1 - p0) / (x * x - 1);
      double dx = p1 / dp;
      x -= dx;
      if (std::fabs(dx) < 1e-15) break;
    }
    double w = 2.0 / ((1 - x * x) * dp * dp);
    r.nodes[i] = -x;
    r.weights[i] = w;
    r.nodes[n - 1 - i] = x;
    r.weights[n - 1 - i] = w;
  }
  return r;
}

/// ∫_a^b f by a fixed n-point rule.
inline double integrate_gl(const std::function<double(double)>& f, double a, double b, int n = 16) {
  GaussRule r = gauss_legendre(n);
  double mid = 0.5 * (a + b), half = 0.5 * (b - a);
  double s = 0;
  for (int i = 0; i < n; ++i) s += r.weights[i] * f(mid + half * r.nodes[i]);
  return s * half;
}

namespace detail {

inline double adapt_1d(const std::function<double(double)>& f, double a, double b, double whole,
                       double tol, int depth, const GaussRule& rule) {
  double m = 0.5 * (a + b);
  auto panel = [&](double lo, double hi) {
    double mid = 0.5 * (lo + hi), half = 0.5 * (hi - lo);
    double s = 0;
    for (std::size_t i = 0; i < rule.nodes.size(); ++i)
      s += rule.weights[i] * f(mid + half * rule.nodes[i]);
    return s * half;
  };
  double left = panel(a, m), right = panel(m, b);
  if (depth <= 0 || std::fabs(left + right - whole) <= tol * (1 + std::fabs(left + right)))
    return left + right;
  return adapt_1d(f, a, m, left, tol / 1.4, depth - 1, rule) +
         adapt_1d(f, m, b, right, tol / 1.4, depth - 1, rule);
}

}  // namespace detail

/// Adaptive 1-d quadrature, relative tolerance `tol`.
inline double integrate_adaptive(const std::function<double(double)>& f, double a, double b,
                                 double tol = 1e-6, int max_depth = 24) {
  GaussRule rule = gauss_legendre(8);
  double mid = 0.5 * (a + b), half = 0.5 * (b - a);
  double whole = 0;
  for (std::size_t i = 0; i < rule.nodes.size(); ++i)
    whole += rule.weights[i] * f(mid + half * rule.nodes[i]);
  whole *= half;
  return detail::adapt_1d(f, a, b, whole, tol, max_depth, rule);
}

/// Adaptive quadrature over the rectangle [ax,bx]x[ay,by]: y-adaptive inside
/// x-adaptive.  Tolerances loosen on the inner axis to keep cost sane.
inline double integrate_adaptive_2d(const std::function<double(double, double)>& f, double ax,
                                    double bx, double ay, double by, double tol = 1e-6) {
  return integrate_adaptive(
      [&](double x) {
        return integrate_adaptive([&](double y) { return f(x, y); }, ay, by, tol * 0.5);
      },
      ax, bx, tol);
}

}  // namespace fkpde
