#pragma once

#include <cstdint>
#include <cmath>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace fkpde {

using Point = std::vector<double>;

/// Error category carried by every exception the library throws.
enum class ErrKind {
  parse,      // bad expression / config text
  eval,       // runtime field evaluation failure (div by zero, 0^neg, non-finite)
  config,     // semantic config problem (bad key, missing field, invariant broken)
  numerical,  // solver breakdown, overflow, flagged results
  io,         // file read/write failure
};

class Error : public std::runtime_error {
public:
  Error(ErrKind kind, std::string msg) : std::runtime_error(std::move(msg)), kind_(kind) {}
  ErrKind kind() const { return kind_; }

private:
  ErrKind kind_;
};

[[noreturn]] inline void fail(ErrKind k, const std::string& msg) { throw Error(k, msg); }

inline double sqr(double x) { return x * x; }

inline double norm2(std::span<const double> v) {
  double s = 0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// FNV-1a, used for config hashes in reports.
inline std::uint64_t fnv1a(std::string_view s, std::uint64_t h = 0xcbf29ce484222325ull) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

constexpr double kPi = 3.14159265358979323846;

}  // namespace fkpde
