#pragma once

// Orchestration: Monte Carlo estimation of the boundary-value representation,
// oracle comparison, the martingale flatness test, the semigroup pairing test,
// and report emission.

#include <filesystem>
#include <fstream>

#include "fkpde/config.hpp"
#include "fkpde/estimator.hpp"
#include "fkpde/functionals.hpp"
#include "fkpde/oracle.hpp"

namespace fkpde {

/// Fields prepared once per run: mollified replacements (when mollify.k is
/// set) tabulated for fast interpolation, and the xi^H solution for the
/// resolvent divergence route.
struct RuntimeFields {
  std::shared_ptr<GridFunction> c_tab;        // mollified c_k, or null
  std::shared_ptr<GridFunction> div_bhat_tab; // div of mollified bhat_k, or null
  std::shared_ptr<GridFunction> xiH;          // resolvent solution, or null
  std::shared_ptr<std::vector<MollifiedField>> bhat_moll;
  std::shared_ptr<MollifiedField> c_moll;

  CoefficientOverrides oracle_overrides() const {
    CoefficientOverrides ov;
    if (bhat_moll) {
      auto bm = bhat_moll;
      ov.bhat = [bm](const double* x, double* out) {
        for (std::size_t i = 0; i < bm->size(); ++i) out[i] = (*bm)[i](x);
      };
    }
    if (c_moll) {
      auto cm = c_moll;
      ov.c = [cm](const double* x) { return (*cm)(x); };
    }
    return ov;
  }
};

inline std::shared_ptr<const Grid> xih_box_grid(const RunConfig& rc) {
  BoundingBox box = rc.domain.bbox();
  double pad = rc.pad_factor * rc.domain.diameter();
  for (int i = 0; i < rc.d; ++i) {
    box.lo[i] -= pad;
    box.hi[i] += pad;
  }
  return Grid::free_box(box, rc.grid_delta, rc.d);
}

inline RuntimeFields prepare_fields(const RunConfig& rc) {
  RuntimeFields rf;
  const CoefficientSet& cs = *rc.coeffs;
  const int d = rc.d;

  if (rc.mollify_k > 0) {
    MollifierParams mp{rc.mollify_k, rc.mollify_quad};
    rf.bhat_moll = std::make_shared<std::vector<MollifiedField>>();
    for (int i = 0; i < d; ++i) {
      auto comp = [i, &cs](const double* x) {
        double out[8];
        cs.eval_bhat(x, out);
        return out[i];
      };
      rf.bhat_moll->push_back(mollify_field(comp, d, mp));
    }
    rf.c_moll = std::make_shared<MollifiedField>(
        mollify_field([&cs](const double* x) { return cs.eval_c(x); }, d, mp));

    // tabulate c_k and div bhat_k on a grid padded past the mollification
    // spillover, so per-step evaluation is an interpolation, not a quadrature
    BoundingBox box = rc.domain.bbox();
    double pad = 2.0 / rc.mollify_k;
    for (int i = 0; i < d; ++i) {
      box.lo[i] -= pad;
      box.hi[i] += pad;
    }
    auto tg = Grid::free_box(box, rc.grid_delta, d);
    auto ctab = std::make_shared<GridFunction>();
    ctab->grid = tg;
    ctab->values.resize(tg->n_nodes());
    auto dtab = std::make_shared<GridFunction>();
    dtab->grid = tg;
    dtab->values.resize(tg->n_nodes());
    double fd = 1e-4 / rc.mollify_k;
    Point x(d), xp(d);
    for (long node = 0; node < tg->n_nodes(); ++node) {
      tg->node_coords(node, x.data());
      ctab->values[node] = (*rf.c_moll)(x.data());
      double div = 0;
      for (int i = 0; i < d; ++i) {
        xp = x;
        xp[i] = x[i] + fd;
        double hi = (*rf.bhat_moll)[i](xp.data());
        xp[i] = x[i] - fd;
        double lo = (*rf.bhat_moll)[i](xp.data());
        div += (hi - lo) / (2 * fd);
      }
      dtab->values[node] = div;
    }
    rf.c_tab = ctab;
    rf.div_bhat_tab = dtab;
  }

  if (rc.div_mode == DivergenceMode::resolvent && !cs.bhat_zero()) {
    std::vector<std::function<double(const double*)>> comps;
    for (int i = 0; i < d; ++i) {
      if (rf.bhat_moll) {
        auto bm = rf.bhat_moll;
        comps.push_back([bm, i](const double* x) { return (*bm)[i](x); });
      } else {
        comps.push_back([i, &cs](const double* x) {
          double out[8];
          cs.eval_bhat(x, out);
          return out[i];
        });
      }
    }
    auto sol = solve_xiH(comps, cs, xih_box_grid(rc));
    rf.xiH = std::make_shared<GridFunction>(std::move(sol.fn));
  }
  return rf;
}

enum class WalkStatus { exited, reached_t_stop, truncated, overflow };

/// Streams one path and the Feynman-Kac exponent along it.  All scratch is
/// preallocated; one walker serves one worker thread.
class FkWalker {
public:
  FkWalker(const RunConfig& rc, const RuntimeFields& rf)
      : cs_(*rc.coeffs),
        dom_(rc.domain),
        d_(rc.d),
        pc_(rc.path),
        mode_(rc.div_mode),
        rf_(rf),
        stepper_(cs_, dom_, rc.path.step_h, rc.path.exit_tol, rc.path.fd_step),
        fd_div_(rc.path.fd_step > 0 ? rc.path.fd_step : 1e-5 * dom_.diameter()),
        x_(rc.d),
        xprev_(rc.d),
        noise_(rc.d),
        dm_(rc.d),
        bvec_(rc.d),
        yvec_(rc.d),
        scratch_(rc.d),
        vp_(rc.d),
        vm_(rc.d),
        rdiv_(rf.xiH ? rf.xiH.get() : nullptr) {
    if (mode_ == DivergenceMode::resolvent && !cs_.bhat_zero() && !rf.xiH)
      fail(ErrKind::config, "resolvent mode requires the xi^H solution");
  }

  /// Walk from x0 until exit or t_stop; on_step(t, exited) fires after every
  /// step with the walker state updated.
  template <class OnStep>
  WalkStatus walk(std::uint64_t path_index, const double* x0, double t_stop, OnStep&& on_step) {
    PathRng rng(pc_.seed, path_index);
    std::copy(x0, x0 + d_, x_.begin());
    acc_ = ExponentAccumulator{};
    acc_.mode = mode_;
    t_ = 0;
    tau_ = 0;
    if (use_resolvent()) rdiv_.start(x_.data());

    for (std::uint64_t k = 0;; ++k) {
      if (t_ >= t_stop) return WalkStatus::reached_t_stop;
      if (t_ >= pc_.t_max) return WalkStatus::truncated;
      rng.step_normals(k, d_, noise_.data());
      std::copy(x_.begin(), x_.end(), xprev_.begin());
      Stepper::Result r = stepper_.advance(x_.data(), noise_.data(), dm_.data());

      if (!cs_.b_zero()) {
        cs_.eval_b(xprev_.data(), bvec_.data());
        stepper_.solve_last_asym(bvec_.data(), yvec_.data());
        double dg = 0, bq = 0;
        for (int i = 0; i < d_; ++i) {
          dg += yvec_[i] * dm_[i];
          bq += yvec_[i] * bvec_[i];
        }
        acc_.girsanov += dg;
        acc_.quad += 0.5 * bq * r.dt;
      }
      acc_.potential += c_at(xprev_.data()) * r.dt;
      if (!cs_.bhat_zero()) {
        if (use_resolvent())
          rdiv_.step(xprev_.data(), dm_.data(), r.dt);
        else
          acc_.divergence -= div_bhat_at(xprev_.data()) * r.dt;
      }
      t_ += r.dt;
      on_step(t_, r.exited);
      if (r.exited) {
        tau_ = t_;
        if (use_resolvent()) acc_.divergence = rdiv_.finish(x_.data());
        return exponent_ok() ? WalkStatus::exited : WalkStatus::overflow;
      }
    }
  }

  WalkStatus walk(std::uint64_t path_index, const double* x0, double t_stop) {
    return walk(path_index, x0, t_stop, [](double, bool) {});
  }

  /// Exponent of Z at the current state (resolvent route included).
  double log_weight() {
    if (use_resolvent()) acc_.divergence = rdiv_.finish(x_.data());
    return acc_.exponent();
  }
  bool exponent_ok() { return log_weight() <= kExpOverflow; }

  const double* state() const { return x_.data(); }
  double time() const { return t_; }
  double tau() const { return tau_; }
  const ExponentAccumulator& acc() const { return acc_; }
  int dim() const { return d_; }

private:
  const CoefficientSet& cs_;
  const Domain& dom_;
  int d_;
  PathConfig pc_;
  DivergenceMode mode_;
  const RuntimeFields& rf_;
  Stepper stepper_;
  double fd_div_;
  Point x_, xprev_;
  std::vector<double> noise_, dm_, bvec_, yvec_, scratch_, vp_, vm_;
  ResolventDivergence rdiv_;
  ExponentAccumulator acc_;
  double t_ = 0, tau_ = 0;

  bool use_resolvent() const { return mode_ == DivergenceMode::resolvent && !cs_.bhat_zero(); }

  double c_at(const double* p) {
    if (rf_.c_tab) return rf_.c_tab->value_at(p);
    return cs_.eval_c(p);
  }

  double div_bhat_at(const double* p) {
    if (rf_.div_bhat_tab) return rf_.div_bhat_tab->value_at(p);
    double div = 0;
    for (int i = 0; i < d_; ++i) {
      std::copy(p, p + d_, scratch_.begin());
      scratch_[i] = p[i] + fd_div_;
      cs_.eval_bhat(scratch_.data(), vp_.data());
      scratch_[i] = p[i] - fd_div_;
      cs_.eval_bhat(scratch_.data(), vm_.data());
      div += (vp_[i] - vm_[i]) / (2 * fd_div_);
    }
    return div;
  }
};

// --- the boundary-value estimator -----------------------------------------------

inline std::vector<EstimateResult> run_mc_estimate(const RunConfig& rc, const RuntimeFields& rf) {
  if (rc.probes.empty()) fail(ErrKind::config, "no probe points configured");
  std::vector<EstimateResult> out;
  int workers = resolve_workers(rc.workers);
  for (const Point& probe : rc.probes) {
    std::vector<double> payoff(rc.n_paths, 0.0);
    std::vector<std::uint8_t> ok(rc.n_paths, 0);
    parallel_for(rc.n_paths, workers, [&](long lo, long hi) {
      FkWalker walker(rc, rf);
      for (long p = lo; p < hi; ++p) {
        WalkStatus st = walker.walk(static_cast<std::uint64_t>(p), probe.data(),
                                    std::numeric_limits<double>::infinity());
        if (st != WalkStatus::exited) continue;
        double e = walker.log_weight();
        payoff[p] = std::exp(e) * rc.boundary_f.eval(walker.state());
        ok[p] = 1;
      }
    });
    PathStats st = reduce_paths(payoff, ok);
    EstimateResult er;
    er.point = probe;
    er.mean = st.mean;
    er.stderror = st.stderror;
    er.n_effective = st.n_effective;
    er.excluded = st.excluded;
    er.reliable = st.reliable;
    er.config_hash = rc.config_hash;
    out.push_back(std::move(er));
  }
  return out;
}

// --- oracle comparison ----------------------------------------------------------

struct CompareRow {
  Point probe;
  double mc_mean = 0, mc_se = 0;
  double oracle = 0;
  double abs_err = 0, rel_err = 0;
  double budget = 0;
  bool within_budget = false;
};

struct CompareReport {
  std::vector<CompareRow> rows;
  bool all_within = true;
  // dual divergence-route consistency (populated when bhat != 0)
  bool dual_checked = false;
  double dual_mean_dev = 0, dual_se = 0;
};

inline GridFunction oracle_solution(const RunConfig& rc, const RuntimeFields& rf) {
  auto grid = Grid::dirichlet(rc.domain, rc.grid_delta);
  CoefficientOverrides ov = rf.oracle_overrides();
  bool has_ov = static_cast<bool>(ov.bhat) || static_cast<bool>(ov.c);
  return solve_dirichlet_weak(*rc.coeffs, grid,
                              [&](const double* x) { return rc.boundary_f.eval(x); },
                              has_ov ? &ov : nullptr);
}

inline CompareReport compare_to_oracle(const RunConfig& rc, const RuntimeFields& rf) {
  CompareReport rep;
  GridFunction u = oracle_solution(rc, rf);
  auto mc = run_mc_estimate(rc, rf);
  for (std::size_t i = 0; i < mc.size(); ++i) {
    CompareRow row;
    row.probe = mc[i].point;
    row.mc_mean = mc[i].mean;
    row.mc_se = mc[i].stderror;
    row.oracle = u.value_at(row.probe.data());
    row.abs_err = std::fabs(row.mc_mean - row.oracle);
    row.rel_err = row.abs_err / std::max(std::fabs(row.oracle), 1e-300);
    row.budget = 3 * row.mc_se +
                 rc.compare_budget * (std::sqrt(rc.path.step_h) + sqr(rc.grid_delta));
    row.within_budget = row.abs_err <= row.budget;
    rep.all_within = rep.all_within && row.within_budget;
    rep.rows.push_back(std::move(row));
  }

  if (!rc.coeffs->bhat_zero() && !rc.probes.empty()) {
    // both divergence routes on identical noise: per-path differences
    RunConfig rc_dir = rc, rc_res = rc;
    rc_dir.div_mode = DivergenceMode::direct;
    rc_res.div_mode = DivergenceMode::resolvent;
    RuntimeFields rf_res = rf.xiH ? rf : prepare_fields(rc_res);
    long n = std::min<long>(rc.n_paths, 20000);
    std::vector<double> diff(n, 0.0);
    std::vector<std::uint8_t> ok(n, 0);
    const Point& probe = rc.probes.front();
    int workers = resolve_workers(rc.workers);
    parallel_for(n, workers, [&](long lo, long hi) {
      FkWalker wd(rc_dir, rf);
      FkWalker wr(rc_res, rf_res);
      for (long p = lo; p < hi; ++p) {
        WalkStatus s1 = wd.walk(p, probe.data(), std::numeric_limits<double>::infinity());
        WalkStatus s2 = wr.walk(p, probe.data(), std::numeric_limits<double>::infinity());
        if (s1 != WalkStatus::exited || s2 != WalkStatus::exited) continue;
        double f = rc.boundary_f.eval(wd.state());
        diff[p] = (std::exp(wd.log_weight()) - std::exp(wr.log_weight())) * f;
        ok[p] = 1;
      }
    });
    PathStats st = reduce_paths(diff, ok);
    rep.dual_checked = true;
    rep.dual_mean_dev = st.mean;
    rep.dual_se = std::max(st.stderror, 1e-300);
  }
  return rep;
}

// --- martingale flatness (E[u(X_{t^tau}) Z_{t^tau}] = u(x)) ---------------------

struct MartingaleRow {
  double t = 0;
  double mean = 0, se = 0;
  double dev_in_se = 0;
};

struct MartingaleReport {
  Point x0;
  double u_ref = 0;
  std::vector<MartingaleRow> rows;
  double max_dev_se = 0;
  long excluded = 0;
};

inline MartingaleReport martingale_check(const RunConfig& rc, const RuntimeFields& rf,
                                         const GridFunction& u_oracle,
                                         const std::vector<double>& times, const Point& x0) {
  MartingaleReport rep;
  rep.x0 = x0;
  rep.u_ref = u_oracle.value_at(x0.data());
  std::size_t nt = times.size();
  double t_stop = *std::max_element(times.begin(), times.end()) + 1e-12;
  long n = rc.n_paths;
  std::vector<double> snap(static_cast<std::size_t>(n) * nt, 0.0);
  std::vector<std::uint8_t> ok(n, 0);

  int workers = resolve_workers(rc.workers);
  parallel_for(n, workers, [&](long lo, long hi) {
    FkWalker walker(rc, rf);
    std::vector<double> vals(nt);
    for (long p = lo; p < hi; ++p) {
      std::size_t next = 0;
      for (std::size_t j = 0; j < nt; ++j)
        if (times[j] <= 0) {
          vals[j] = rep.u_ref;
          ++next;
        }
      bool bad = false;
      WalkStatus st = walker.walk(
          p, x0.data(), t_stop, [&](double t, bool exited) {
            if (bad) return;
            if (!exited && next < nt && t >= times[next]) {
              double e = walker.log_weight();
              if (e > kExpOverflow) {
                bad = true;
                return;
              }
              double uval = u_oracle.value_at(walker.state());
              while (next < nt && times[next] <= t) vals[next++] = uval * std::exp(e);
            }
          });
      if (bad) continue;
      if (st == WalkStatus::exited) {
        double e = walker.log_weight();
        if (e > kExpOverflow) continue;
        double frozen = u_oracle.value_at(walker.state()) * std::exp(e);
        while (next < nt) vals[next++] = frozen;
      } else if (st == WalkStatus::truncated) {
        continue;  // horizon too short; path dropped and counted
      }
      for (std::size_t j = 0; j < nt; ++j) snap[static_cast<std::size_t>(p) * nt + j] = vals[j];
      ok[p] = 1;
    }
  });

  std::vector<double> col(n);
  for (std::size_t j = 0; j < nt; ++j) {
    for (long p = 0; p < n; ++p) col[p] = ok[p] ? snap[static_cast<std::size_t>(p) * nt + j] : 0;
    PathStats st = reduce_paths(col, ok);
    MartingaleRow row;
    row.t = times[j];
    row.mean = st.mean;
    row.se = std::max(st.stderror, 1e-300);
    row.dev_in_se = std::fabs(st.mean - rep.u_ref) / row.se;
    rep.max_dev_se = std::max(rep.max_dev_se, row.dev_in_se);
    rep.excluded = st.excluded;
    rep.rows.push_back(row);
  }
  return rep;
}

// --- semigroup pairing ----------------------------------------------------------

struct SemigroupRow {
  double t = 0;
  double mc = 0, mc_se = 0;
  double oracle = 0;
  double rel_err = 0;
  double moment = 0, moment_se = 0;  // E_unif[exp(∫ c ds); t < tau]
  double sup_moment = 0;             // max over probes of E_x[exp(∫ c ds); t < tau]
  long survived = 0, excluded = 0;
};

struct SemigroupReport {
  std::vector<SemigroupRow> rows;
  double t0_lhs = 0, t0_ref = 0, t0_rel_err = 0;
};

inline SemigroupReport run_semigroup_check(const RunConfig& rc, const RuntimeFields& rf) {
  SemigroupReport rep;
  const Domain& dom = rc.domain;
  double vol = dom.volume();
  BoundingBox bb = dom.bbox();
  auto grid = Grid::dirichlet(dom, rc.grid_delta);
  CoefficientOverrides ov = rf.oracle_overrides();
  bool has_ov = static_cast<bool>(ov.bhat) || static_cast<bool>(ov.c);
  const CoefficientOverrides* ovp = has_ov ? &ov : nullptr;

  auto f_fn = [&](const double* x) { return rc.semi_f.eval(x); };
  auto g_fn = [&](const double* x) { return rc.semi_g.eval(x); };

  rep.t0_ref = pairing_t0(*grid, f_fn, g_fn);
  rep.t0_lhs = semigroup_pairing(*rc.coeffs, grid, f_fn, g_fn, 1e-6, 0.0, ovp).lhs;
  rep.t0_rel_err = std::fabs(rep.t0_lhs - rep.t0_ref) / std::max(std::fabs(rep.t0_ref), 1e-300);

  int workers = resolve_workers(rc.workers);
  for (double t : rc.semigroup_times) {
    long n = rc.semi_paths;
    std::vector<double> pay(n, 0.0), mom(n, 0.0);
    std::vector<std::uint8_t> ok(n, 1);
    std::vector<long> surv_flag(n, 0);
    parallel_for(n, workers, [&](long lo, long hi) {
      FkWalker walker(rc, rf);
      Point x0(rc.d);
      for (long p = lo; p < hi; ++p) {
        // uniform start by rejection from the bounding box, aux stream
        PathRng rng(rc.path.seed, p);
        for (std::uint64_t attempt = 0;; ++attempt) {
          for (int i = 0; i < rc.d; ++i)
            x0[i] = bb.lo[i] + (bb.hi[i] - bb.lo[i]) * rng.aux_uniform(attempt, i);
          if (dom.contains(x0.data())) break;
          if (attempt > 10000) fail(ErrKind::numerical, "rejection sampling stalled");
        }
        double f0 = rc.semi_f.eval(x0.data());
        WalkStatus st = walker.walk(p, x0.data(), t);
        if (st != WalkStatus::reached_t_stop) continue;  // exited: contributes zero
        double e = walker.log_weight();
        if (e > kExpOverflow) {
          ok[p] = 0;
          continue;
        }
        surv_flag[p] = 1;
        pay[p] = vol * f0 * rc.semi_g.eval(walker.state()) * std::exp(e);
        mom[p] = std::exp(walker.acc().potential);
      }
    });
    PathStats ps = reduce_paths(pay, ok);
    PathStats ms = reduce_paths(mom, ok);
    SemigroupRow row;
    row.t = t;
    row.mc = ps.mean;
    row.mc_se = ps.stderror;
    row.oracle = semigroup_pairing(*rc.coeffs, grid, f_fn, g_fn, t, ps.mean, ovp).lhs;
    row.rel_err = std::fabs(row.mc - row.oracle) / std::max(std::fabs(row.oracle), 1e-300);
    row.moment = ms.mean;
    row.moment_se = ms.stderror;
    row.excluded = ps.excluded;
    for (long p = 0; p < n; ++p) row.survived += surv_flag[p];

    // integrability-moment sanity curve: sup over the probe points of the
    // restricted exponential moment, at a tenth of the path budget each
    long n_probe = std::max<long>(100, rc.semi_paths / 10);
    for (const Point& probe : rc.probes) {
      std::vector<double> pm(n_probe, 0.0);
      std::vector<std::uint8_t> pok(n_probe, 1);
      parallel_for(n_probe, workers, [&](long lo, long hi) {
        FkWalker walker(rc, rf);
        for (long p = lo; p < hi; ++p) {
          WalkStatus st = walker.walk(p, probe.data(), t);
          if (st == WalkStatus::reached_t_stop) pm[p] = std::exp(walker.acc().potential);
        }
      });
      PathStats pst = reduce_paths(pm, pok);
      row.sup_moment = std::max(row.sup_moment, pst.mean);
    }
    rep.rows.push_back(row);
  }
  return rep;
}

// --- pathwise divergence-route refinement study ----------------------------------

struct DivergenceStudyLevel {
  double h = 0, delta = 0;
  double rms = 0;  // RMS over paths of (direct - resolvent)
};

struct DivergenceStudyReport {
  std::vector<DivergenceStudyLevel> levels;
  std::vector<double> ratios;  // rms[l] / rms[l+1]
};

/// Compares the two divergence functionals along Brownian-coupled paths while
/// halving both the time step and the xi^H grid spacing per level.  Coupling:
/// every level consumes the same fine-step Gaussian increments, aggregated to
/// its own step size, so the refinement ratios are not washed out by fresh
/// Monte Carlo noise.
inline DivergenceStudyReport divergence_refinement_study(const RunConfig& rc, int n_levels, long n_paths,
                                    double t_horizon) {
  const CoefficientSet& cs = *rc.coeffs;
  const Domain& dom = rc.domain;
  const int d = rc.d;
  if (cs.bhat_zero()) fail(ErrKind::config, "verify-lemma22 needs a nonzero bhat");

  std::vector<std::function<double(const double*)>> comps;
  for (int i = 0; i < d; ++i)
    comps.push_back([i, &cs](const double* x) {
      double out[8];
      cs.eval_bhat(x, out);
      return out[i];
    });

  DivergenceStudyReport rep;
  const Point x0 = rc.probes.empty() ? Point(d, 0.5) : rc.probes.front();
  double fd_div = 1e-5 * dom.diameter();

  for (int level = 0; level < n_levels; ++level) {
    double h = rc.path.step_h / (1 << level);
    double delta = rc.grid_delta / (1 << level);
    RunConfig rcl = rc;
    rcl.grid_delta = delta;
    auto sol = solve_xiH(comps, cs, xih_box_grid(rcl));

    long fine_per = 1L << (n_levels - 1 - level);
    double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(fine_per));

    Stepper stepper(cs, dom, h, rc.path.exit_tol, rc.path.fd_step);
    std::vector<double> noise(d), fine(d), dm(d), vp(d), vm(d);
    Point x(d), xprev(d), scratch(d);
    double ss = 0;
    for (long p = 0; p < n_paths; ++p) {
      PathRng rng(rc.path.seed, p);
      x = x0;
      ResolventDivergence rdiv(&sol.fn);
      rdiv.start(x.data());
      double direct = 0, t = 0;
      for (std::uint64_t k = 0; t < t_horizon; ++k) {
        std::fill(noise.begin(), noise.end(), 0.0);
        for (long j = 0; j < fine_per; ++j) {
          rng.step_normals(k * fine_per + j, d, fine.data());
          for (int i = 0; i < d; ++i) noise[i] += fine[i];
        }
        for (int i = 0; i < d; ++i) noise[i] *= inv_sqrt;
        xprev = x;
        Stepper::Result r = stepper.advance(x.data(), noise.data(), dm.data());
        double div = 0;
        for (int i = 0; i < d; ++i) {
          scratch = xprev;
          scratch[i] = xprev[i] + fd_div;
          cs.eval_bhat(scratch.data(), vp.data());
          scratch[i] = xprev[i] - fd_div;
          cs.eval_bhat(scratch.data(), vm.data());
          div += (vp[i] - vm[i]) / (2 * fd_div);
        }
        direct -= div * r.dt;
        rdiv.step(xprev.data(), dm.data(), r.dt);
        t += r.dt;
        if (r.exited) break;
      }
      ss += sqr(direct - rdiv.finish(x.data()));
    }
    DivergenceStudyLevel lv;
    lv.h = h;
    lv.delta = delta;
    lv.rms = std::sqrt(ss / n_paths);
    rep.levels.push_back(lv);
  }
  for (std::size_t l = 0; l + 1 < rep.levels.size(); ++l)
    rep.ratios.push_back(rep.levels[l].rms / std::max(rep.levels[l + 1].rms, 1e-300));
  return rep;
}

// --- report emission -------------------------------------------------------------

namespace detail {

inline std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string hash_hex(std::uint64_t h) {
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace detail

inline void write_report(const std::vector<EstimateResult>& results, ReportFormat format,
                         std::ostream& os) {
  if (results.empty()) fail(ErrKind::config, "refusing to write an empty report");
  int d = static_cast<int>(results.front().point.size());
  switch (format) {
    case ReportFormat::csv: {
      for (int i = 0; i < d; ++i) os << "x" << i + 1 << ",";
      os << "mean,stderr,n_effective,excluded,config_hash\n";
      for (const auto& r : results) {
        for (double xi : r.point) os << detail::fmt17(xi) << ",";
        os << detail::fmt17(r.mean) << "," << detail::fmt17(r.stderror) << "," << r.n_effective
           << "," << r.excluded << "," << detail::hash_hex(r.config_hash) << "\n";
      }
      break;
    }
    case ReportFormat::json: {
      os << "{\n  \"schema_version\": 1,\n  \"results\": [\n";
      for (std::size_t i = 0; i < results.size(); ++i) {
        const auto& r = results[i];
        os << "    {\"point\": [";
        for (int k = 0; k < d; ++k) os << (k ? ", " : "") << detail::fmt17(r.point[k]);
        os << "], \"mean\": " << detail::fmt17(r.mean)
           << ", \"stderr\": " << detail::fmt17(r.stderror)
           << ", \"n_effective\": " << r.n_effective << ", \"excluded\": " << r.excluded
           << ", \"reliable\": " << (r.reliable ? "true" : "false") << ", \"config_hash\": \""
           << detail::hash_hex(r.config_hash) << "\"}";
        os << (i + 1 < results.size() ? ",\n" : "\n");
      }
      os << "  ]\n}\n";
      break;
    }
    case ReportFormat::text: {
      os << "point | mean | stderr | n_eff | excluded | hash\n";
      for (const auto& r : results) {
        os << "(";
        for (int k = 0; k < d; ++k) os << (k ? ", " : "") << detail::fmt17(r.point[k]);
        os << ") | " << detail::fmt17(r.mean) << " | " << detail::fmt17(r.stderror) << " | "
           << r.n_effective << " | " << r.excluded << " | " << detail::hash_hex(r.config_hash)
           << (r.reliable ? "" : "  [UNRELIABLE]") << "\n";
      }
      break;
    }
  }
}

/// Writes results to <dir>/<stem>.<ext>; returns the path.
inline std::string emit_report(const std::vector<EstimateResult>& results, ReportFormat format,
                               const std::string& dir, const std::string& stem) {
  if (results.empty()) fail(ErrKind::config, "refusing to write an empty report");
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  const char* ext = format == ReportFormat::csv    ? ".csv"
                    : format == ReportFormat::json ? ".json"
                                                   : ".txt";
  std::string path = (std::filesystem::path(dir) / (stem + ext)).string();
  std::ofstream os(path, std::ios::binary);
  if (!os) fail(ErrKind::io, "cannot open " + path);
  write_report(results, format, os);
  os.flush();
  if (!os) fail(ErrKind::io, "write failed: " + path);
  return path;
}

/// Reads back a CSV report (full 17-digit precision round-trips exactly).
inline std::vector<EstimateResult> read_report_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) fail(ErrKind::io, "cannot read " + path);
  std::string header;
  if (!std::getline(is, header)) fail(ErrKind::io, "empty report " + path);
  int d = 0;
  {
    std::istringstream hs(header);
    std::string col;
    while (std::getline(hs, col, ','))
      if (!col.empty() && col[0] == 'x') ++d;
  }
  std::vector<EstimateResult> out;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string cell;
    EstimateResult r;
    for (int i = 0; i < d; ++i) {
      std::getline(ls, cell, ',');
      r.point.push_back(std::strtod(cell.c_str(), nullptr));
    }
    std::getline(ls, cell, ',');
    r.mean = std::strtod(cell.c_str(), nullptr);
    std::getline(ls, cell, ',');
    r.stderror = std::strtod(cell.c_str(), nullptr);
    std::getline(ls, cell, ',');
    r.n_effective = std::strtol(cell.c_str(), nullptr, 10);
    std::getline(ls, cell, ',');
    r.excluded = std::strtol(cell.c_str(), nullptr, 10);
    std::getline(ls, cell, ',');
    r.config_hash = std::strtoull(cell.c_str(), nullptr, 16);
    r.reliable = r.excluded <= 0.01 * (r.n_effective + r.excluded);
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace fkpde
