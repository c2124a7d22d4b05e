#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace taurus {

using Index = std::ptrdiff_t;

inline constexpr double kTwoPi = 2.0 * std::numbers::pi;

/// Base of every error thrown by the library.
struct Error : std::runtime_error
{
  using std::runtime_error::runtime_error;
};

/// An argument lies outside the domain of the operation (e.g. time outside the scan).
struct DomainError : Error
{
  using Error::Error;
};

/// Inconsistent or invalid parameters.
struct ValidationError : Error
{
  using Error::Error;
};

/// Numerical failure (singular system, empty weights, violated assumption).
struct NumericalError : Error
{
  using Error::Error;
};

/// Malformed input file. `offset` is the byte (or line, for text formats) where parsing failed.
struct ParseError : Error
{
  ParseError(std::string const &what, std::uint64_t off)
    : Error{what + " (at offset " + std::to_string(off) + ")"}
    , offset{off}
  {
  }
  std::uint64_t offset;
};

struct Vec3
{
  double x = 0.0, y = 0.0, z = 0.0;

  constexpr auto operator+(Vec3 const &o) const -> Vec3 { return {x + o.x, y + o.y, z + o.z}; }
  constexpr auto operator-(Vec3 const &o) const -> Vec3 { return {x - o.x, y - o.y, z - o.z}; }
  constexpr auto operator*(double s) const -> Vec3 { return {x * s, y * s, z * s}; }
  constexpr auto operator==(Vec3 const &o) const -> bool = default;
  auto norm() const -> double { return std::sqrt(x * x + y * y + z * z); }
};

/// Uniformly sampled real time series. `t0` is the drive-clock time of the first sample.
struct SampledSignal
{
  std::vector<double> samples;
  double              rate = 0.0;
  double              t0 = 0.0;

  auto size() const -> Index { return static_cast<Index>(samples.size()); }
  auto dt() const -> double { return 1.0 / rate; }
  auto time(Index i) const -> double { return t0 + static_cast<double>(i) / rate; }
  auto duration() const -> double { return static_cast<double>(samples.size()) / rate; }
  auto peak() const -> double
  {
    double p = 0.0;
    for (double v : samples) { p = std::max(p, std::abs(v)); }
    return p;
  }
};

inline void check_signal(SampledSignal const &s, char const *who)
{
  if (!(s.rate > 0.0)) { throw ValidationError(std::string(who) + ": sampling rate must be positive"); }
  for (double v : s.samples) {
    if (!std::isfinite(v)) { throw ValidationError(std::string(who) + ": non-finite sample"); }
  }
}

/// Nearest integer ratio a/b, throwing if it is not (close to) an integer.
inline auto integer_ratio(double a, double b, char const *what) -> Index
{
  double const r = a / b;
  auto const   n = static_cast<Index>(std::llround(r));
  if (n < 1 || std::abs(r - static_cast<double>(n)) > 1e-9 * r) {
    throw ValidationError(std::string(what) + " must be an integer ratio");
  }
  return n;
}

} // namespace taurus
