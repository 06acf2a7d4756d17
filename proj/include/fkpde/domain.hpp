#pragma once

#include <algorithm>

#include "fkpde/common.hpp"

namespace fkpde {

enum class DomainKind { interval, hyperrectangle, ball };

struct BoundingBox {
  Point lo, hi;
};

/// Bounded simulation domain D.  Intervals are 1-d hyperrectangles kept as a
/// separate kind so configs read naturally.
class Domain {
public:
  static Domain interval(double a, double b) {
    if (!(a < b)) fail(ErrKind::config, "interval needs a < b");
    Domain d;
    d.kind_ = DomainKind::interval;
    d.dim_ = 1;
    d.lo_ = {a};
    d.hi_ = {b};
    return d;
  }

  static Domain hyperrectangle(Point lo, Point hi) {
    if (lo.size() != hi.size() || lo.empty()) fail(ErrKind::config, "bad hyperrectangle bounds");
    for (std::size_t i = 0; i < lo.size(); ++i)
      if (!(lo[i] < hi[i])) fail(ErrKind::config, "hyperrectangle needs lo < hi per axis");
    Domain d;
    d.kind_ = lo.size() == 1 ? DomainKind::interval : DomainKind::hyperrectangle;
    d.dim_ = static_cast<int>(lo.size());
    d.lo_ = std::move(lo);
    d.hi_ = std::move(hi);
    return d;
  }

  static Domain ball(Point center, double radius) {
    if (center.empty() || !(radius > 0)) fail(ErrKind::config, "ball needs center and radius > 0");
    Domain d;
    d.kind_ = DomainKind::ball;
    d.dim_ = static_cast<int>(center.size());
    d.center_ = std::move(center);
    d.radius_ = radius;
    return d;
  }

  DomainKind kind() const { return kind_; }
  int dim() const { return dim_; }
  double radius() const { return radius_; }
  const Point& center() const { return center_; }
  const Point& lo() const { return lo_; }
  const Point& hi() const { return hi_; }

  bool contains(const double* x) const {
    if (kind_ == DomainKind::ball) {
      double r2 = 0;
      for (int i = 0; i < dim_; ++i) r2 += sqr(x[i] - center_[i]);
      return r2 < radius_ * radius_;
    }
    for (int i = 0; i < dim_; ++i)
      if (!(lo_[i] < x[i] && x[i] < hi_[i])) return false;
    return true;
  }
  bool contains(std::span<const double> x) const { return contains(x.data()); }

  bool contains_closed(const double* x, double tol = 1e-12) const {
    if (kind_ == DomainKind::ball) {
      double r2 = 0;
      for (int i = 0; i < dim_; ++i) r2 += sqr(x[i] - center_[i]);
      return r2 <= sqr(radius_ + tol);
    }
    for (int i = 0; i < dim_; ++i)
      if (x[i] < lo_[i] - tol || x[i] > hi_[i] + tol) return false;
    return true;
  }

  /// Diameter ς of D.
  double diameter() const {
    if (kind_ == DomainKind::ball) return 2 * radius_;
    double s = 0;
    for (int i = 0; i < dim_; ++i) s += sqr(hi_[i] - lo_[i]);
    return std::sqrt(s);
  }

  double inradius() const {
    if (kind_ == DomainKind::ball) return radius_;
    double r = std::numeric_limits<double>::infinity();
    for (int i = 0; i < dim_; ++i) r = std::min(r, (hi_[i] - lo_[i]) / 2);
    return r;
  }

  double volume() const {
    if (kind_ == DomainKind::ball) {
      // V_d = (2 pi / d) V_{d-2}, V_0 = 1, V_1 = 2
      double v_prev = 1, v = 2;
      if (dim_ == 0) return 1;
      for (int k = 2; k <= dim_; ++k) {
        double next = 2 * kPi * v_prev / k;
        v_prev = v;
        v = next;
      }
      return v * std::pow(radius_, dim_);
    }
    double v = 1;
    for (int i = 0; i < dim_; ++i) v *= hi_[i] - lo_[i];
    return v;
  }

  BoundingBox bbox() const {
    if (kind_ == DomainKind::ball) {
      BoundingBox b;
      b.lo = center_;
      b.hi = center_;
      for (int i = 0; i < dim_; ++i) {
        b.lo[i] -= radius_;
        b.hi[i] += radius_;
      }
      return b;
    }
    return BoundingBox{lo_, hi_};
  }

  /// Nearest point of ∂D (used to clamp detected crossings and to place
  /// boundary data for grid nodes just outside D).
  void project_to_boundary(const double* x, double* out) const {
    if (kind_ == DomainKind::ball) {
      double r = 0;
      for (int i = 0; i < dim_; ++i) r += sqr(x[i] - center_[i]);
      r = std::sqrt(r);
      if (r == 0) {  // center: pick an arbitrary direction
        for (int i = 0; i < dim_; ++i) out[i] = center_[i];
        out[0] += radius_;
        return;
      }
      for (int i = 0; i < dim_; ++i) out[i] = center_[i] + (x[i] - center_[i]) * radius_ / r;
      return;
    }
    // clamp into the closed box, then push the closest coordinate to its face
    double best_gap = std::numeric_limits<double>::infinity();
    int best_axis = 0;
    double best_val = lo_[0];
    bool inside = true;
    for (int i = 0; i < dim_; ++i) {
      out[i] = std::clamp(x[i], lo_[i], hi_[i]);
      if (x[i] <= lo_[i] || x[i] >= hi_[i]) inside = false;
      double gap_lo = out[i] - lo_[i], gap_hi = hi_[i] - out[i];
      if (gap_lo < best_gap) {
        best_gap = gap_lo;
        best_axis = i;
        best_val = lo_[i];
      }
      if (gap_hi < best_gap) {
        best_gap = gap_hi;
        best_axis = i;
        best_val = hi_[i];
      }
    }
    if (inside) out[best_axis] = best_val;
  }

private:
  DomainKind kind_ = DomainKind::interval;
  int dim_ = 1;
  Point lo_, hi_;
  Point center_;
  double radius_ = 0;
};

}  // namespace fkpde
