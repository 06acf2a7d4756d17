#pragma once

// Coefficient fields A, b, bhat, c, g of the operator
//   Lu = 1/2 sum_ij d_j(a_ij d_i u) + b.grad u + (c - div bhat) u
// together with the off-domain extension rule (A=I, b=bhat=0, c=g=0 outside D),
// the uniform-ellipticity check and the mollification machinery.

#include <Eigen/Dense>
#include <functional>
#include <map>
#include <mutex>

#include "fkpde/domain.hpp"
#include "fkpde/expr.hpp"
#include "fkpde/quad.hpp"

namespace fkpde {

/// Asym = (A + A^T)/2, row-major d x d buffers.  out must not alias a.
inline void symmetrize(const double* a, int d, double* out) {
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) out[i * d + j] = 0.5 * (a[i * d + j] + a[j * d + i]);
}

inline std::vector<double> symmetrize(const std::vector<double>& a, int d) {
  std::vector<double> out(d * d);
  symmetrize(a.data(), d, out.data());
  return out;
}

struct MollifierParams {
  int k = 1;          // support radius is 1/k
  int quad_pts = 16;  // Gauss-Legendre points per axis for the convolution
};

namespace detail {

// sum of exp(-1/(1-|x|^2)) over the tensor Gauss rule on [-1,1]^d, zeroed
// outside the unit ball
inline double bump_mass_tensor(int d, int pts) {
  GaussRule r = gauss_legendre(pts);
  std::vector<int> idx(d, 0);
  double total = 0;
  while (true) {
    double w = 1, r2 = 0;
    for (int i = 0; i < d; ++i) {
      w *= r.weights[idx[i]];
      r2 += sqr(r.nodes[idx[i]]);
    }
    if (r2 < 1) total += w * std::exp(-1.0 / (1.0 - r2));
    int axis = 0;
    while (axis < d && ++idx[axis] == pts) idx[axis++] = 0;
    if (axis == d) break;
  }
  return total;
}

// normalizer of J per dimension, cached; 64 points/axis keeps it well below
// the 1e-8 tolerance the mollifier contract promises
inline double bump_normalizer(int d) {
  static std::map<int, double> cache;
  static std::mutex mu;
  std::lock_guard<std::mutex> lock(mu);
  auto it = cache.find(d);
  if (it != cache.end()) return it->second;
  int pts = d <= 2 ? 64 : (d == 3 ? 48 : 24);
  double c = bump_mass_tensor(d, pts);
  cache[d] = c;
  return c;
}

}  // namespace detail

/// J_k(x) = k^d J(kx), J the unit-mass bump supported on the unit ball.
inline double mollifier_kernel(const MollifierParams& mp, std::span<const double> x) {
  int d = static_cast<int>(x.size());
  double r2 = 0;
  for (double xi : x) r2 += sqr(xi * mp.k);
  if (r2 >= 1.0) return 0.0;
  double j = std::exp(-1.0 / (1.0 - r2)) / detail::bump_normalizer(d);
  return std::pow(static_cast<double>(mp.k), d) * j;
}

/// f_k(x) = ∫ f(x-y) J_k(y) dy by tensor Gauss-Legendre over the support ball.
/// The discrete kernel weights are renormalized to unit mass, so constants
/// (and hence nonnegativity and linear fields, J being even) are preserved
/// exactly up to roundoff.
class MollifiedField {
public:
  MollifiedField() = default;

  MollifiedField(std::function<double(const double*)> f, int d, const MollifierParams& mp)
      : f_(std::move(f)), d_(d) {
    if (mp.k < 1) fail(ErrKind::config, "mollifier index k must be >= 1");
    if (mp.quad_pts < 8) fail(ErrKind::config, "mollifier needs quad_pts >= 8");
    GaussRule r = gauss_legendre(mp.quad_pts);
    double h = 1.0 / mp.k;  // support radius
    std::vector<int> idx(d, 0);
    double mass = 0;
    while (true) {
      double w = 1, r2 = 0;
      std::vector<double> y(d);
      for (int i = 0; i < d; ++i) {
        y[i] = h * r.nodes[idx[i]];
        w *= h * r.weights[idx[i]];
        r2 += sqr(r.nodes[idx[i]]);
      }
      if (r2 < 1) {
        MollifierParams unit{mp.k, mp.quad_pts};
        double jk = mollifier_kernel(unit, y);
        if (jk > 0) {
          offsets_.push_back(std::move(y));
          weights_.push_back(w * jk);
          mass += w * jk;
        }
      }
      int axis = 0;
      while (axis < d && ++idx[axis] == mp.quad_pts) idx[axis++] = 0;
      if (axis == d) break;
    }
    for (double& w : weights_) w /= mass;
  }

  double operator()(const double* x) const {
    double s = 0;
    std::vector<double> z(d_);
    for (std::size_t q = 0; q < weights_.size(); ++q) {
      for (int i = 0; i < d_; ++i) z[i] = x[i] - offsets_[q][i];
      s += weights_[q] * f_(z.data());
    }
    return s;
  }
  double operator()(std::span<const double> x) const { return (*this)(x.data()); }

  int dim() const { return d_; }

private:
  std::function<double(const double*)> f_;
  int d_ = 0;
  std::vector<std::vector<double>> offsets_;
  std::vector<double> weights_;
};

inline MollifiedField mollify_field(std::function<double(const double*)> f, int d,
                                    const MollifierParams& mp) {
  return MollifiedField(std::move(f), d, mp);
}

inline std::vector<MollifiedField> mollify_field(
    const std::vector<std::function<double(const double*)>>& comps, int d,
    const MollifierParams& mp) {
  std::vector<MollifiedField> out;
  out.reserve(comps.size());
  for (const auto& f : comps) out.emplace_back(f, d, mp);
  return out;
}

struct EllipticityReport {
  double min_eig = 0;
  double max_abs_entry = 0;
  bool pass = false;
};

/// Coefficient set on D with the off-D extension rule baked into every eval.
class CoefficientSet {
public:
  CoefficientSet(int d, double p, double lambda, Domain dom, std::vector<CompiledExpr> A,
                 std::vector<CompiledExpr> b, std::vector<CompiledExpr> bhat, CompiledExpr c,
                 CompiledExpr g)
      : d_(d),
        p_(p),
        lambda_(lambda),
        dom_(std::move(dom)),
        A_(std::move(A)),
        b_(std::move(b)),
        bhat_(std::move(bhat)),
        c_(std::move(c)),
        g_(std::move(g)) {
    if (d_ < 1) fail(ErrKind::config, "dimension must be >= 1");
    if (!(p_ > d_ / 2.0)) fail(ErrKind::config, "exponent p must exceed d/2");
    if (!(lambda_ > 0 && lambda_ <= 1)) fail(ErrKind::config, "lambda must lie in (0,1]");
    if (dom_.dim() != d_) fail(ErrKind::config, "domain dimension mismatch");
    if (A_.size() != static_cast<std::size_t>(d_ * d_) ||
        b_.size() != static_cast<std::size_t>(d_) || bhat_.size() != static_cast<std::size_t>(d_))
      fail(ErrKind::config, "coefficient arity mismatch");
    auto check_vars = [&](const CompiledExpr& e) {
      if (e.max_var() > d_)
        fail(ErrKind::config, "expression '" + e.source() + "' references x" +
                                  std::to_string(e.max_var()) + " but d=" + std::to_string(d_));
    };
    for (const auto& e : A_) check_vars(e);
    for (const auto& e : b_) check_vars(e);
    for (const auto& e : bhat_) check_vars(e);
    check_vars(c_);
    check_vars(g_);

    A_constant_ = std::all_of(A_.begin(), A_.end(),
                              [](const CompiledExpr& e) { return e.is_constant(); });
    if (A_constant_) {
      A0_.resize(d_ * d_);
      for (int i = 0; i < d_ * d_; ++i) A0_[i] = A_[i].constant_value();
      Asym0_ = symmetrize(A0_, d_);
    }
    auto zerov = [](const std::vector<CompiledExpr>& v) {
      return std::all_of(v.begin(), v.end(), [](const CompiledExpr& e) {
        return e.is_constant() && e.constant_value() == 0.0;
      });
    };
    b_zero_ = zerov(b_);
    bhat_zero_ = zerov(bhat_);
    c_zero_ = c_.is_constant() && c_.constant_value() == 0.0;

    validate_g_nonneg();
  }

  int dim() const { return d_; }
  double p() const { return p_; }
  double lambda() const { return lambda_; }
  const Domain& domain() const { return dom_; }
  bool A_constant() const { return A_constant_; }
  bool b_zero() const { return b_zero_; }
  bool bhat_zero() const { return bhat_zero_; }
  bool c_zero() const { return c_zero_; }
  const CompiledExpr& A_entry(int i, int j) const { return A_[i * d_ + j]; }
  const CompiledExpr& b_entry(int i) const { return b_[i]; }
  const CompiledExpr& bhat_entry(int i) const { return bhat_[i]; }
  const CompiledExpr& c_expr() const { return c_; }
  const CompiledExpr& g_expr() const { return g_; }

  /// A(x) for x in D, identity outside (extension rule).
  void eval_matrix(const double* x, double* out) const {
    if (!dom_.contains(x)) {
      for (int i = 0; i < d_; ++i)
        for (int j = 0; j < d_; ++j) out[i * d_ + j] = i == j ? 1.0 : 0.0;
      return;
    }
    if (A_constant_) {
      std::copy(A0_.begin(), A0_.end(), out);
      return;
    }
    for (int i = 0; i < d_ * d_; ++i) out[i] = A_[i].eval(x);
  }

  void eval_b(const double* x, double* out) const {
    if (b_zero_ || !dom_.contains(x)) {
      std::fill(out, out + d_, 0.0);
      return;
    }
    for (int i = 0; i < d_; ++i) out[i] = b_[i].eval(x);
  }

  void eval_bhat(const double* x, double* out) const {
    if (bhat_zero_ || !dom_.contains(x)) {
      std::fill(out, out + d_, 0.0);
      return;
    }
    for (int i = 0; i < d_; ++i) out[i] = bhat_[i].eval(x);
  }

  double eval_c(const double* x) const {
    if (c_zero_ || !dom_.contains(x)) return 0.0;
    return c_.eval(x);
  }

  double eval_g(const double* x) const {
    if (!dom_.contains(x)) return 0.0;
    return g_.eval(x);
  }

private:
  int d_;
  double p_, lambda_;
  Domain dom_;
  std::vector<CompiledExpr> A_, b_, bhat_;
  CompiledExpr c_, g_;
  bool A_constant_ = false, b_zero_ = false, bhat_zero_ = false, c_zero_ = false;
  std::vector<double> A0_, Asym0_;

  void validate_g_nonneg() const {
    BoundingBox bb = dom_.bbox();
    int n = 9;
    std::vector<int> idx(d_, 0);
    std::vector<double> x(d_);
    while (true) {
      for (int i = 0; i < d_; ++i)
        x[i] = bb.lo[i] + (bb.hi[i] - bb.lo[i]) * (idx[i] + 0.5) / n;
      if (dom_.contains(x.data()) && g_.eval(x.data()) < 0)
        fail(ErrKind::config, "g must be nonnegative on D (negative at a sample point)");
      int axis = 0;
      while (axis < d_ && ++idx[axis] == n) idx[axis++] = 0;
      if (axis == d_) break;
    }
  }
};

/// min over the grid of the smallest eigenvalue of Asym(x), and the largest
/// |a_ij(x)|; passes iff min_eig >= lambda and max |a_ij| <= 1/lambda.
inline EllipticityReport check_uniform_ellipticity(const CoefficientSet& cs,
                                                   const std::vector<Point>& sample_grid) {
  if (sample_grid.empty()) fail(ErrKind::config, "ellipticity check needs a non-empty grid");
  int d = cs.dim();
  EllipticityReport rep;
  rep.min_eig = std::numeric_limits<double>::infinity();
  rep.max_abs_entry = 0;
  std::vector<double> a(d * d), as(d * d);
  Eigen::MatrixXd m(d, d);
  for (const Point& x : sample_grid) {
    try {
      cs.eval_matrix(x.data(), a.data());
    } catch (const Error& e) {
      std::string pt;
      for (double xi : x) pt += (pt.empty() ? "" : ", ") + std::to_string(xi);
      fail(e.kind(), std::string(e.what()) + " at grid point (" + pt + ")");
    }
    for (double v : a) rep.max_abs_entry = std::max(rep.max_abs_entry, std::fabs(v));
    symmetrize(a.data(), d, as.data());
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j) m(i, j) = as[i * d + j];
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m, Eigen::EigenvaluesOnly);
    rep.min_eig = std::min(rep.min_eig, es.eigenvalues().minCoeff());
  }
  rep.pass = rep.min_eig >= cs.lambda() && rep.max_abs_entry <= 1.0 / cs.lambda();
  return rep;
}

}  // namespace fkpde
