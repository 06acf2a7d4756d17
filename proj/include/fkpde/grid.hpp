#pragma once

// Uniform tensor grids over a box, with node classification against a domain
// (interior unknowns / Dirichlet boundary carriers / exterior) and multilinear
// interpolation of nodal data.  The same structure serves the weak solver, the
// xi^H resolvent box and tabulated fields.

#include <memory>

#include "fkpde/domain.hpp"

namespace fkpde {

enum class NodeRole : std::uint8_t { interior, boundary, exterior };

class Grid {
public:
  /// Grid over the bounding box of D with Dirichlet classification.
  static std::shared_ptr<Grid> dirichlet(const Domain& dom, double delta) {
    auto g = std::make_shared<Grid>();
    g->init_box(dom.bbox(), delta, dom.dim());
    g->dom_ = dom;
    g->has_domain_ = true;
    g->classify();
    return g;
  }

  /// Grid over an arbitrary box, every node an unknown (natural boundary).
  static std::shared_ptr<Grid> free_box(const BoundingBox& box, double delta, int dim) {
    auto g = std::make_shared<Grid>();
    g->init_box(box, delta, dim);
    g->roles_.assign(g->n_nodes_, NodeRole::interior);
    g->build_unknowns();
    return g;
  }

  int dim() const { return d_; }
  double delta() const { return delta_; }
  long n_nodes() const { return n_nodes_; }
  long n_unknowns() const { return static_cast<long>(unknowns_.size()); }
  int extent(int axis) const { return n_[axis]; }
  const BoundingBox& box() const { return box_; }
  bool has_domain() const { return has_domain_; }
  const Domain& domain() const { return dom_; }

  NodeRole role(long node) const { return roles_[node]; }
  long unknown_id(long node) const { return unknown_of_node_[node]; }  // -1 if none
  long unknown_node(long uid) const { return unknowns_[uid]; }

  double cell_volume() const {
    double v = 1;
    for (int i = 0; i < d_; ++i) v *= step_[i];
    return v;
  }
  double step(int axis) const { return step_[axis]; }

  void node_coords(long node, double* x) const {
    for (int i = d_ - 1; i >= 0; --i) {
      long q = node / n_[i];
      int r = static_cast<int>(node - q * n_[i]);
      x[i] = box_.lo[i] + r * step_[i];
      node = q;
    }
  }
  Point node_point(long node) const {
    Point x(d_);
    node_coords(node, x.data());
    return x;
  }

  long node_index(const int* idx) const {
    long flat = 0;
    for (int i = 0; i < d_; ++i) flat = flat * n_[i] + idx[i];
    return flat;
  }
  void node_multi_index(long node, int* idx) const {
    for (int i = d_ - 1; i >= 0; --i) {
      long q = node / n_[i];
      idx[i] = static_cast<int>(node - q * n_[i]);
      node = q;
    }
  }
  long neighbor(long node, int axis, int dir) const {
    int idx[8];
    node_multi_index(node, idx);
    idx[axis] += dir;
    if (idx[axis] < 0 || idx[axis] >= n_[axis]) return -1;
    return node_index(idx);
  }

  /// Position of the Dirichlet data carried by a boundary node: its
  /// projection onto ∂D (coincides with the node for aligned faces).
  Point boundary_data_point(long node) const {
    Point x = node_point(node);
    if (has_domain_) dom_.project_to_boundary(x.data(), x.data());
    return x;
  }

  bool covers(const double* x, double slack = 1e-9) const {
    for (int i = 0; i < d_; ++i)
      if (x[i] < box_.lo[i] - slack || x[i] > box_.hi[i] + slack) return false;
    return true;
  }

  /// Multilinear interpolation of a nodal array.
  double interpolate(std::span<const double> nodal, const double* x) const {
    if (!covers(x))
      fail(ErrKind::numerical, "point leaves the grid coverage box");
    int base[8];
    double frac[8];
    locate(x, base, frac);
    double acc = 0;
    int corners = 1 << d_;
    int idx[8];
    for (int c = 0; c < corners; ++c) {
      double w = 1;
      for (int i = 0; i < d_; ++i) {
        bool hi = c & (1 << i);
        w *= hi ? frac[i] : 1 - frac[i];
        idx[i] = base[i] + (hi ? 1 : 0);
      }
      if (w != 0) acc += w * nodal[node_index(idx)];
    }
    return acc;
  }

  /// Central-difference nodal gradient of a nodal array (one-sided at the box
  /// faces), returned as n_nodes x d.
  std::vector<double> nodal_gradient(std::span<const double> nodal) const {
    std::vector<double> grad(static_cast<std::size_t>(n_nodes_) * d_);
    for (long node = 0; node < n_nodes_; ++node) {
      for (int ax = 0; ax < d_; ++ax) {
        long p = neighbor(node, ax, +1), m = neighbor(node, ax, -1);
        double v;
        if (p >= 0 && m >= 0)
          v = (nodal[p] - nodal[m]) / (2 * step_[ax]);
        else if (p >= 0)
          v = (nodal[p] - nodal[node]) / step_[ax];
        else
          v = (nodal[node] - nodal[m]) / step_[ax];
        grad[static_cast<std::size_t>(node) * d_ + ax] = v;
      }
    }
    return grad;
  }

  void interpolate_vector(std::span<const double> nodal_vec, int ncomp, const double* x,
                          double* out) const {
    if (!covers(x))
      fail(ErrKind::numerical, "point leaves the grid coverage box");
    int base[8];
    double frac[8];
    locate(x, base, frac);
    std::fill(out, out + ncomp, 0.0);
    int corners = 1 << d_;
    int idx[8];
    for (int c = 0; c < corners; ++c) {
      double w = 1;
      for (int i = 0; i < d_; ++i) {
        bool hi = c & (1 << i);
        w *= hi ? frac[i] : 1 - frac[i];
        idx[i] = base[i] + (hi ? 1 : 0);
      }
      if (w == 0) continue;
      long node = node_index(idx);
      for (int k = 0; k < ncomp; ++k) out[k] += w * nodal_vec[node * ncomp + k];
    }
  }

  /// Cell containing x: base node multi-index and fractional offsets in [0,1].
  void locate(const double* x, int* base, double* frac) const {
    for (int i = 0; i < d_; ++i) {
      double s = (x[i] - box_.lo[i]) / step_[i];
      int c = static_cast<int>(std::floor(s));
      c = std::clamp(c, 0, n_[i] - 2);
      base[i] = c;
      frac[i] = std::clamp(s - c, 0.0, 1.0);
    }
  }

  void init_box(const BoundingBox& box, double delta, int dim) {
    if (dim < 1 || dim > 8) fail(ErrKind::config, "grid supports 1 <= d <= 8");
    if (!(delta > 0)) fail(ErrKind::config, "grid spacing must be positive");
    d_ = dim;
    box_ = box;
    delta_ = 0;
    n_nodes_ = 1;
    for (int i = 0; i < d_; ++i) {
      double len = box.hi[i] - box.lo[i];
      int cells = std::max(2, static_cast<int>(std::lround(len / delta)));
      n_[i] = cells + 1;
      step_[i] = len / cells;
      delta_ = std::max(delta_, step_[i]);
      n_nodes_ *= n_[i];
    }
  }

private:
  int d_ = 0;
  int n_[8] = {0};
  double step_[8] = {0};
  double delta_ = 0;
  long n_nodes_ = 0;
  BoundingBox box_;
  Domain dom_ = Domain::interval(0, 1);
  bool has_domain_ = false;
  std::vector<NodeRole> roles_;
  std::vector<long> unknowns_;         // unknown id -> node
  std::vector<long> unknown_of_node_;  // node -> unknown id or -1

  void classify() {
    roles_.assign(n_nodes_, NodeRole::exterior);
    Point x(d_);
    for (long node = 0; node < n_nodes_; ++node) {
      node_coords(node, x.data());
      if (dom_.contains(x.data())) roles_[node] = NodeRole::interior;
    }
    for (long node = 0; node < n_nodes_; ++node) {
      if (roles_[node] != NodeRole::exterior) continue;
      for (int ax = 0; ax < d_ && roles_[node] == NodeRole::exterior; ++ax) {
        for (int dir = -1; dir <= 1; dir += 2) {
          long nb = neighbor(node, ax, dir);
          if (nb >= 0 && roles_[nb] == NodeRole::interior) {
            roles_[node] = NodeRole::boundary;
            break;
          }
        }
      }
    }
    build_unknowns();
  }

  void build_unknowns() {
    unknown_of_node_.assign(n_nodes_, -1);
    unknowns_.clear();
    for (long node = 0; node < n_nodes_; ++node) {
      if (roles_[node] == NodeRole::interior) {
        unknown_of_node_[node] = static_cast<long>(unknowns_.size());
        unknowns_.push_back(node);
      }
    }
  }
};

/// Nodal scalar field with optional precomputed gradient, interpolated
/// multilinearly.  This is the carrier for discrete solutions (u, xi^H).
struct GridFunction {
  std::shared_ptr<const Grid> grid;
  std::vector<double> values;     // one per node
  std::vector<double> gradients;  // n_nodes x d, optional

  double value_at(const double* x) const { return grid->interpolate(values, x); }
  void gradient_at(const double* x, double* out) const {
    grid->interpolate_vector(gradients, grid->dim(), x, out);
  }
  void build_gradients() { gradients = grid->nodal_gradient(values); }
};

}  // namespace fkpde
