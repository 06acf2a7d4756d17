#pragma once

// Deterministic parallel estimation: payoffs land in a per-path slot, the
// reduction is a fixed pairwise tree over path indices, so any worker count
// and any batch layout produce bit-identical means and standard errors.

#include <mutex>
#include <thread>

#include "fkpde/common.hpp"

namespace fkpde {

inline int resolve_workers(int requested) {
  if (requested > 0) return requested;
  unsigned hc = std::thread::hardware_concurrency();
  return hc == 0 ? 1 : static_cast<int>(hc);
}

/// Runs fn(lo, hi) over a partition of [0, n) on `workers` threads.  The
/// first exception raised in any worker is rethrown on the caller.
template <class Fn>
void parallel_for(long n, int workers, const Fn& fn) {
  workers = static_cast<int>(std::max<long>(1, std::min<long>(workers, n)));
  if (workers == 1) {
    fn(0L, n);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(workers);
  std::exception_ptr first_error;
  std::mutex err_mu;
  long chunk = (n + workers - 1) / workers;
  for (int w = 0; w < workers; ++w) {
    long lo = w * chunk, hi = std::min(n, lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back([&, lo, hi] {
      try {
        fn(lo, hi);
      } catch (...) {
        std::lock_guard<std::mutex> lock(err_mu);
        if (!first_error) first_error = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

/// Pairwise tree sum over [lo, hi): the association is a function of the
/// index range only, never of the thread layout.
inline double pairwise_sum(std::span<const double> v, long lo, long hi) {
  if (hi - lo <= 8) {
    double s = 0;
    for (long i = lo; i < hi; ++i) s += v[i];
    return s;
  }
  long mid = lo + (hi - lo) / 2;
  return pairwise_sum(v, lo, mid) + pairwise_sum(v, mid, hi);
}

struct PathStats {
  double mean = 0;
  double stderror = 0;
  long n_effective = 0;
  long excluded = 0;
  bool reliable = true;  // excluded fraction <= 1%
};

/// Valid slots carry payoffs; excluded slots must have been zeroed.
inline PathStats reduce_paths(std::span<const double> payoff, std::span<const std::uint8_t> ok) {
  PathStats st;
  long n = static_cast<long>(payoff.size());
  std::vector<double> sq(payoff.size());
  for (long i = 0; i < n; ++i) {
    sq[i] = payoff[i] * payoff[i];
    if (!ok[i]) ++st.excluded;
  }
  st.n_effective = n - st.excluded;
  if (st.n_effective == 0) {
    st.reliable = false;
    return st;
  }
  double s = pairwise_sum(payoff, 0, n);
  double ss = pairwise_sum(sq, 0, n);
  st.mean = s / st.n_effective;
  if (st.n_effective > 1) {
    double var = (ss - s * s / st.n_effective) / (st.n_effective - 1);
    st.stderror = std::sqrt(std::max(0.0, var) / st.n_effective);
  }
  st.reliable = st.excluded <= 0.01 * n;
  return st;
}

struct EstimateResult {
  Point point;
  double mean = 0;
  double stderror = 0;
  long n_effective = 0;
  long excluded = 0;
  bool reliable = true;
  std::uint64_t config_hash = 0;
};

}  // namespace fkpde
