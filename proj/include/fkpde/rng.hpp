#pragma once

// Counter-based noise: every Gaussian is a pure function of
// (seed, path, stream, step, lane), so batches of paths can run on any number
// of workers in any order and still produce bit-identical trajectories.

#include "fkpde/common.hpp"

namespace fkpde {

namespace detail {

inline std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ull;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

inline double to_unit(std::uint64_t v) {
  // strictly inside (0,1) so log() below is always finite
  return (static_cast<double>(v >> 11) + 0.5) * (1.0 / 9007199254740992.0);
}

}  // namespace detail

class PathRng {
public:
  PathRng(std::uint64_t seed, std::uint64_t path)
      : base_(detail::mix64(detail::mix64(seed) ^ detail::mix64(path + 0x517cc1b727220a95ull))) {}

  /// Lane `i` uniform of a (stream, counter) cell.
  double uniform(std::uint64_t stream, std::uint64_t counter, std::uint64_t lane) const {
    std::uint64_t h = detail::mix64(base_ ^ detail::mix64(stream * 0xd1342543de82ef95ull + counter));
    return detail::to_unit(detail::mix64(h + lane * 0x2545f4914f6cdd1dull));
  }

  /// d standard normals for a step, stream 0, Box-Muller in lane pairs.
  void step_normals(std::uint64_t step, int d, double* out) const {
    for (int j = 0; 2 * j < d; ++j) {
      double u1 = uniform(0, step, 2 * j);
      double u2 = uniform(0, step, 2 * j + 1);
      double r = std::sqrt(-2.0 * std::log(u1));
      double a = 2.0 * kPi * u2;
      out[2 * j] = r * std::cos(a);
      if (2 * j + 1 < d) out[2 * j + 1] = r * std::sin(a);
    }
  }

  /// Auxiliary uniforms (initial-state sampling, rejection loops); stream 1.
  double aux_uniform(std::uint64_t counter, std::uint64_t lane) const {
    return uniform(1, counter, lane);
  }

private:
  std::uint64_t base_;
};

}  // namespace fkpde
