#pragma once

// Deterministic grid counterpart of the Monte Carlo solver: finite-difference
// discretization of the bilinear forms
//   E0_g(u,v) = 1/2 ∫ sum_ij a_ij d_i u d_j v dx + g ∫ u v dx
//   E(u,v)    = E0_0(u,v) - ∫ b.grad(u) v - ∫ bhat . grad(uv) - ∫ c u v
// with midpoint coefficient sampling for the flux (diagonal) part and nodal
// central differences elsewhere.  Matrix convention: K(t,s) ~ form(phi_s,
// phi_t), so v^T K u approximates form(u, v) for nodal samples.

#include <Eigen/Sparse>
#include <Eigen/SparseLU>
#include <fstream>
#include <unsupported/Eigen/MatrixFunctions>

#include "fkpde/coeffs.hpp"
#include "fkpde/grid.hpp"

namespace fkpde {

enum class FormKind { E0_1, E0, E_full, generator };

struct DiscreteBilinearForm {
  Eigen::SparseMatrix<double> matrix;  // n_nodes x n_nodes
  FormKind kind = FormKind::E0;
  std::shared_ptr<const Grid> grid;
};

/// Optional replacements for the lower-order fields (e.g. mollified b̂_k,
/// c_k).  These are used as-is, without the off-D clipping: a mollified field
/// legitimately spills 1/k past ∂D.
struct CoefficientOverrides {
  std::function<void(const double*, double*)> bhat;
  std::function<double(const double*)> c;
};

namespace detail {

inline DiscreteBilinearForm assemble_form(const CoefficientSet& cs,
                                          std::shared_ptr<const Grid> grid, double gamma_mass,
                                          bool lower_order,
                                          const CoefficientOverrides* ov = nullptr) {
  const int d = cs.dim();
  const Grid& g = *grid;
  const double vol = g.cell_volume();
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(static_cast<std::size_t>(g.n_nodes()) * (2 * d + 1));

  std::vector<double> x(d), xm(d), a(d * d), bv(d), bh(d);
  const Domain& dom = cs.domain();

  auto bhat_at = [&](const double* p, double* out) {
    if (ov && ov->bhat) {
      ov->bhat(p, out);
      return;
    }
    cs.eval_bhat(p, out);
  };
  auto c_at = [&](const double* p) { return ov && ov->c ? ov->c(p) : cs.eval_c(p); };
  auto a_entry = [&](int i, int j, const double* p) {
    if (!dom.contains(p)) return i == j ? 1.0 : 0.0;
    return cs.A_entry(i, j).eval(p);
  };

  for (long node = 0; node < g.n_nodes(); ++node) {
    g.node_coords(node, x.data());

    // flux form of the diagonal a_ii, midpoint sampling per edge
    for (int ax = 0; ax < d; ++ax) {
      long nb = g.neighbor(node, ax, +1);
      if (nb < 0) continue;
      for (int i = 0; i < d; ++i) xm[i] = x[i];
      xm[ax] += 0.5 * g.step(ax);
      double w = 0.5 * a_entry(ax, ax, xm.data()) * vol / sqr(g.step(ax));
      trip.emplace_back(node, node, w);
      trip.emplace_back(nb, nb, w);
      trip.emplace_back(node, nb, -w);
      trip.emplace_back(nb, node, -w);
    }

    // off-diagonal a_ij by nodal central differences
    for (int i = 0; i < d; ++i) {
      long sip = g.neighbor(node, i, +1), sim = g.neighbor(node, i, -1);
      if (sip < 0 || sim < 0) continue;
      for (int j = 0; j < d; ++j) {
        if (j == i) continue;
        long tjp = g.neighbor(node, j, +1), tjm = g.neighbor(node, j, -1);
        if (tjp < 0 || tjm < 0) continue;
        double aij = a_entry(i, j, x.data());
        if (aij == 0) continue;
        double w = 0.5 * aij * vol / (4 * g.step(i) * g.step(j));
        trip.emplace_back(tjp, sip, w);
        trip.emplace_back(tjp, sim, -w);
        trip.emplace_back(tjm, sip, -w);
        trip.emplace_back(tjm, sim, w);
      }
    }

    if (gamma_mass != 0) trip.emplace_back(node, node, gamma_mass * vol);

    if (!lower_order) continue;

    // -∫ b.grad(u) v: test row at the node, trial columns at its neighbors
    cs.eval_b(x.data(), bv.data());
    for (int i = 0; i < d; ++i) {
      if (bv[i] == 0) continue;
      long sp = g.neighbor(node, i, +1), sm = g.neighbor(node, i, -1);
      if (sp < 0 || sm < 0) continue;
      double w = bv[i] * vol / (2 * g.step(i));
      trip.emplace_back(node, sp, -w);
      trip.emplace_back(node, sm, w);
    }

    // -∫ bhat . grad(uv) expanded as u dv + v du
    bhat_at(x.data(), bh.data());
    for (int i = 0; i < d; ++i) {
      if (bh[i] == 0) continue;
      long np = g.neighbor(node, i, +1), nm = g.neighbor(node, i, -1);
      if (np < 0 || nm < 0) continue;
      double w = bh[i] * vol / (2 * g.step(i));
      // u at the node, grad of the test function
      trip.emplace_back(np, node, -w);
      trip.emplace_back(nm, node, w);
      // test at the node, grad of the trial function
      trip.emplace_back(node, np, -w);
      trip.emplace_back(node, nm, w);
    }

    // -∫ c u v
    double cv = c_at(x.data());
    if (cv != 0) trip.emplace_back(node, node, -cv * vol);
  }

  DiscreteBilinearForm form;
  form.grid = grid;
  form.matrix.resize(g.n_nodes(), g.n_nodes());
  form.matrix.setFromTriplets(trip.begin(), trip.end());
  form.matrix.makeCompressed();
  return form;
}

}  // namespace detail

/// E0_1 = E0 + ∫uv (the gamma = 1 coercive form used by the xi^H solve).
inline DiscreteBilinearForm assemble_E0_1(const CoefficientSet& cs,
                                          std::shared_ptr<const Grid> grid) {
  auto f = detail::assemble_form(cs, std::move(grid), 1.0, false);
  f.kind = FormKind::E0_1;
  return f;
}

inline DiscreteBilinearForm assemble_E0(const CoefficientSet& cs,
                                        std::shared_ptr<const Grid> grid) {
  auto f = detail::assemble_form(cs, std::move(grid), 0.0, false);
  f.kind = FormKind::E0;
  return f;
}

/// Full form of the operator L (all four terms of the bilinear form).
inline DiscreteBilinearForm assemble_E(const CoefficientSet& cs, std::shared_ptr<const Grid> grid,
                                       const CoefficientOverrides* ov = nullptr) {
  auto f = detail::assemble_form(cs, std::move(grid), 0.0, true, ov);
  f.kind = FormKind::E_full;
  return f;
}

/// Discrete ∫ <xi, grad h> dx for a nodal test vector h (same quadrature the
/// xi^H right-hand side uses, so the defining identity is checkable exactly).
inline double grad_pairing(const Grid& g, const std::vector<std::vector<double>>& xi_nodal,
                           std::span<const double> h) {
  int d = g.dim();
  double vol = g.cell_volume();
  double acc = 0;
  for (long node = 0; node < g.n_nodes(); ++node) {
    for (int i = 0; i < d; ++i) {
      long p = g.neighbor(node, i, +1), m = g.neighbor(node, i, -1);
      if (p < 0 || m < 0) continue;
      acc += xi_nodal[i][node] * (h[p] - h[m]) / (2 * g.step(i)) * vol;
    }
  }
  return acc;
}

struct XiHSolution {
  GridFunction fn;                            // nodal xi^H with gradients
  std::vector<std::vector<double>> xi_nodal;  // sampled input field
  double residual = 0;                        // scaled linear-system residual
};

/// Solves the resolvent identity  ∫<xi, grad h> = -E0_1(xi^H, h)  for all grid
/// test functions h, on the given (usually padded free-box) grid.
inline XiHSolution solve_xiH(const std::vector<std::function<double(const double*)>>& xi,
                             const CoefficientSet& cs, std::shared_ptr<const Grid> grid) {
  const Grid& g = *grid;
  int d = cs.dim();
  if (static_cast<int>(xi.size()) != d) fail(ErrKind::config, "xi must have d components");

  XiHSolution sol;
  sol.xi_nodal.assign(d, std::vector<double>(g.n_nodes()));
  std::vector<double> x(d);
  for (long node = 0; node < g.n_nodes(); ++node) {
    g.node_coords(node, x.data());
    for (int i = 0; i < d; ++i) sol.xi_nodal[i][node] = xi[i](x.data());
  }

  DiscreteBilinearForm form = assemble_E0_1(cs, grid);

  // r_t = -∫ <xi, grad phi_t>, assembled by scattering each nodal xi value
  // onto the neighbours its central difference touches
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(g.n_nodes());
  double vol = g.cell_volume();
  for (long node = 0; node < g.n_nodes(); ++node) {
    for (int i = 0; i < d; ++i) {
      long p = g.neighbor(node, i, +1), m = g.neighbor(node, i, -1);
      if (p < 0 || m < 0) continue;
      double w = sol.xi_nodal[i][node] * vol / (2 * g.step(i));
      rhs[p] -= w;
      rhs[m] += w;
    }
  }

  Eigen::SparseLU<Eigen::SparseMatrix<double>> lu(form.matrix);
  if (lu.info() != Eigen::Success)
    fail(ErrKind::numerical, "xi^H solve: factorization failed (singular E0_1?)");
  Eigen::VectorXd v = lu.solve(rhs);
  double scale = rhs.norm() + form.matrix.norm() * v.norm();
  sol.residual = scale > 0 ? (form.matrix * v - rhs).norm() / scale : 0.0;
  if (sol.residual > 1e-10)
    fail(ErrKind::numerical, "xi^H solve: residual above tolerance");

  sol.fn.grid = grid;
  sol.fn.values.assign(v.data(), v.data() + v.size());
  sol.fn.build_gradients();
  return sol;
}

/// 1-d periodic surrogate of the resolvent solve on [0, 2pi) with A = 1:
/// -(xi^H)''/2 + xi^H = div xi.  Returns nodal values at x_j = 2 pi j / n.
inline std::vector<double> solve_xiH_periodic_1d(const std::function<double(double)>& xi, int n) {
  double delta = 2 * kPi / n;
  Eigen::SparseMatrix<double> K(n, n);
  std::vector<Eigen::Triplet<double>> trip;
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(n);
  for (int t = 0; t < n; ++t) {
    int p = (t + 1) % n, m = (t + n - 1) % n;
    trip.emplace_back(t, t, delta * (1.0 / sqr(delta) + 1.0));
    trip.emplace_back(t, p, -0.5 * delta / sqr(delta));
    trip.emplace_back(t, m, -0.5 * delta / sqr(delta));
    double w = xi(t * delta) * delta / (2 * delta);
    rhs[p] += w;  // r = -(scatter), signs as in the box solve
    rhs[m] -= w;
  }
  K.setFromTriplets(trip.begin(), trip.end());
  Eigen::SparseLU<Eigen::SparseMatrix<double>> lu(K);
  if (lu.info() != Eigen::Success) fail(ErrKind::numerical, "periodic xi^H solve failed");
  Eigen::VectorXd v = lu.solve(-rhs);
  return std::vector<double>(v.data(), v.data() + n);
}

/// Weak Dirichlet solve: E(u, phi_t) = 0 for interior test functions, u = f
/// on the boundary nodes (data at their projections onto ∂D).
template <class BoundaryFn>
GridFunction solve_dirichlet_weak(const CoefficientSet& cs, std::shared_ptr<const Grid> grid,
                                  const BoundaryFn& f, const CoefficientOverrides* ov = nullptr) {
  const Grid& g = *grid;
  if (!g.has_domain()) fail(ErrKind::config, "weak solve needs a Dirichlet-classified grid");
  DiscreteBilinearForm form = assemble_E(cs, grid, ov);

  long m = g.n_unknowns();
  GridFunction u;
  u.grid = grid;
  u.values.assign(g.n_nodes(), 0.0);
  for (long node = 0; node < g.n_nodes(); ++node) {
    if (g.role(node) != NodeRole::interior) {
      Point bp = g.boundary_data_point(node);
      u.values[node] = f(bp.data());
    }
  }

  std::vector<Eigen::Triplet<double>> trip;
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(m);
  for (int col = 0; col < form.matrix.outerSize(); ++col) {
    for (Eigen::SparseMatrix<double>::InnerIterator it(form.matrix, col); it; ++it) {
      long t = it.row(), s = it.col();
      if (g.role(t) != NodeRole::interior) continue;
      long tu = g.unknown_id(t);
      if (g.role(s) == NodeRole::interior)
        trip.emplace_back(tu, g.unknown_id(s), it.value());
      else
        rhs[tu] -= it.value() * u.values[s];
    }
  }
  Eigen::SparseMatrix<double> Kii(m, m);
  Kii.setFromTriplets(trip.begin(), trip.end());
  Kii.makeCompressed();
  Eigen::SparseLU<Eigen::SparseMatrix<double>> lu(Kii);
  if (lu.info() != Eigen::Success)
    fail(ErrKind::numerical,
         "weak solve: reduced system is singular (form may have lost coercivity; check ||g|| <= M)");
  Eigen::VectorXd ui = lu.solve(rhs);
  double scale = rhs.norm() + Kii.norm() * ui.norm();
  if (scale > 0 && (Kii * ui - rhs).norm() / scale > 1e-10)
    fail(ErrKind::numerical, "weak solve: residual above tolerance");

  for (long uid = 0; uid < m; ++uid) u.values[g.unknown_node(uid)] = ui[uid];
  u.build_gradients();
  return u;
}

/// Discrete Dirichlet generator: interior rows of -K_E / cell volume; rows of
/// boundary and exterior nodes are zero.
inline DiscreteBilinearForm generator_matrix(const CoefficientSet& cs,
                                             std::shared_ptr<const Grid> grid,
                                             const CoefficientOverrides* ov = nullptr) {
  const Grid& g = *grid;
  DiscreteBilinearForm form = assemble_E(cs, grid, ov);
  double vol = g.cell_volume();
  std::vector<Eigen::Triplet<double>> trip;
  for (int col = 0; col < form.matrix.outerSize(); ++col) {
    for (Eigen::SparseMatrix<double>::InnerIterator it(form.matrix, col); it; ++it) {
      if (!g.has_domain() || g.role(it.row()) == NodeRole::interior)
        trip.emplace_back(it.row(), it.col(), -it.value() / vol);
    }
  }
  DiscreteBilinearForm gen;
  gen.kind = FormKind::generator;
  gen.grid = grid;
  gen.matrix.resize(g.n_nodes(), g.n_nodes());
  gen.matrix.setFromTriplets(trip.begin(), trip.end());
  gen.matrix.makeCompressed();
  return gen;
}

/// Dense generator restricted to the interior unknowns (Dirichlet condition
/// eliminates everything else), for the matrix exponential.
inline Eigen::MatrixXd interior_generator(const CoefficientSet& cs,
                                          std::shared_ptr<const Grid> grid,
                                          const CoefficientOverrides* ov = nullptr) {
  const Grid& g = *grid;
  DiscreteBilinearForm form = assemble_E(cs, grid, ov);
  long m = g.n_unknowns();
  Eigen::MatrixXd L = Eigen::MatrixXd::Zero(m, m);
  double vol = g.cell_volume();
  for (int col = 0; col < form.matrix.outerSize(); ++col) {
    for (Eigen::SparseMatrix<double>::InnerIterator it(form.matrix, col); it; ++it) {
      if (g.role(it.row()) == NodeRole::interior && g.role(it.col()) == NodeRole::interior)
        L(g.unknown_id(it.row()), g.unknown_id(it.col())) = -it.value() / vol;
    }
  }
  return L;
}

struct PairingReport {
  double lhs = 0;      // f^T M expm(tL) g on the grid
  double rhs = 0;      // supplied Monte Carlo estimate
  double rel_err = 0;  // |lhs - rhs| / max(|lhs|, tiny)
};

inline Eigen::MatrixXd expm_generator(const Eigen::MatrixXd& L, double t) {
  double scaled = t * L.cwiseAbs().rowwise().sum().maxCoeff();
  if (scaled > 1e6) {
    int depth = static_cast<int>(std::ceil(std::log2(scaled / 16.0)));
    fail(ErrKind::numerical, "expm: t*||L|| too large (" + std::to_string(scaled) +
                                 "); would need squaring depth ~" + std::to_string(depth));
  }
  return (t * L).exp();
}

/// Semigroup pairing ∫ f T_t g dx against a Monte Carlo estimate.
template <class FnF, class FnG>
PairingReport semigroup_pairing(const CoefficientSet& cs, std::shared_ptr<const Grid> grid,
                                const FnF& f, const FnG& g_fn, double t, double mc_estimate,
                                const CoefficientOverrides* ov = nullptr) {
  if (!(t > 0)) fail(ErrKind::config, "pairing needs t > 0");
  const Grid& g = *grid;
  Eigen::MatrixXd L = interior_generator(cs, grid, ov);
  long m = g.n_unknowns();
  Eigen::VectorXd fv(m), gv(m);
  std::vector<double> x(g.dim());
  for (long uid = 0; uid < m; ++uid) {
    g.node_coords(g.unknown_node(uid), x.data());
    fv[uid] = f(x.data());
    gv[uid] = g_fn(x.data());
  }
  Eigen::MatrixXd E = expm_generator(L, t);
  PairingReport rep;
  rep.lhs = g.cell_volume() * fv.dot(E * gv);
  rep.rhs = mc_estimate;
  rep.rel_err = std::fabs(rep.lhs - rep.rhs) / std::max(std::fabs(rep.lhs), 1e-300);
  return rep;
}

/// Nodal quadrature of ∫ f g dx over the interior (the t -> 0 limit of the
/// pairing on the same grid).
template <class FnF, class FnG>
double pairing_t0(const Grid& g, const FnF& f, const FnG& g_fn) {
  double acc = 0;
  std::vector<double> x(g.dim());
  for (long uid = 0; uid < g.n_unknowns(); ++uid) {
    g.node_coords(g.unknown_node(uid), x.data());
    acc += f(x.data()) * g_fn(x.data());
  }
  return acc * g.cell_volume();
}

// --- discrete-solution export ------------------------------------------------

inline void write_solution_csv(const GridFunction& u, const std::string& path) {
  std::ofstream os(path);
  if (!os) fail(ErrKind::io, "cannot open " + path);
  const Grid& g = *u.grid;
  int d = g.dim();
  for (int i = 0; i < d; ++i) os << "x" << i + 1 << ",";
  os << "value\n";
  std::vector<double> x(d);
  char buf[64];
  for (long node = 0; node < g.n_nodes(); ++node) {
    g.node_coords(node, x.data());
    for (int i = 0; i < d; ++i) {
      std::snprintf(buf, sizeof buf, "%.17g", x[i]);
      os << buf << ",";
    }
    std::snprintf(buf, sizeof buf, "%.17g", u.values[node]);
    os << buf << "\n";
  }
  if (!os) fail(ErrKind::io, "write failed: " + path);
}

/// Text header (dims=..., delta=..., bbox=...) followed by the row-major
/// float64 nodal array.
inline void write_solution_binary(const GridFunction& u, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) fail(ErrKind::io, "cannot open " + path);
  const Grid& g = *u.grid;
  os << "dims=";
  for (int i = 0; i < g.dim(); ++i) os << (i ? " " : "") << g.extent(i);
  os << "\n";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", g.delta());
  os << "delta=" << buf << "\n";
  os << "bbox=";
  for (int i = 0; i < g.dim(); ++i) {
    std::snprintf(buf, sizeof buf, "%.17g %.17g", g.box().lo[i], g.box().hi[i]);
    os << (i ? " " : "") << buf;
  }
  os << "\n";
  os.write(reinterpret_cast<const char*>(u.values.data()),
           static_cast<std::streamsize>(u.values.size() * sizeof(double)));
  if (!os) fail(ErrKind::io, "write failed: " + path);
}

}  // namespace fkpde
