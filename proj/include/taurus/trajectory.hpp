#pragma once

#include "common.hpp"

#include <algorithm>
#include <optional>
#include <string>
#include <string_view>

namespace taurus {

/// Static scanner parameters. Gradients are signed (T/m), drive along z.
struct ScannerConfig
{
  Vec3   gradient{-4.8, 2.4, 2.4};
  double drive_amplitude = 15e-3;  // Bp, T
  double drive_frequency = 10e3;   // fd, Hz
  double oversample_rate = 100e6;  // fs_hi, samples/s
  double acquisition_rate = 2e6;   // fs, samples/s
  Index  retained_harmonics = 45;  // highest harmonic of fd the acquisition must carry

  auto period() const -> double { return 1.0 / drive_frequency; }
  auto samples_per_period() const -> Index { return integer_ratio(acquisition_rate, drive_frequency, "fs/fd"); }
  auto half_samples() const -> Index { return samples_per_period() / 2; }
  auto oversample_factor() const -> Index { return integer_ratio(oversample_rate, acquisition_rate, "fs_hi/fs"); }
  auto pfov_width() const -> double { return 2.0 * drive_amplitude / std::abs(gradient.z); }
  /// Peak drive-field slew, Bp·2π·fd (T/s).
  auto drive_slew() const -> double { return drive_amplitude * kTwoPi * drive_frequency; }

  void validate() const
  {
    if (!(drive_frequency > 0.0)) { throw ValidationError("scanner: drive frequency must be positive"); }
    if (!(drive_amplitude > 0.0)) { throw ValidationError("scanner: drive amplitude must be positive"); }
    if (gradient.z == 0.0) { throw ValidationError("scanner: drive-axis gradient Gz must be nonzero"); }
    if (!(acquisition_rate > 2.0 * static_cast<double>(retained_harmonics) * drive_frequency)) {
      throw ValidationError("scanner: acquisition rate must exceed twice the highest retained harmonic");
    }
    if (oversample_rate < acquisition_rate) { throw ValidationError("scanner: fs_hi must be >= fs"); }
    oversample_factor();
    if (samples_per_period() % 2 != 0) { throw ValidationError("scanner: fs/fd must be even"); }
  }
};

enum struct TrajectoryKind
{
  PWT,
  LLT,
  TriangleRaster2D,
  Custom
};

inline auto to_string(TrajectoryKind k) -> std::string_view
{
  switch (k) {
  case TrajectoryKind::PWT: return "PWT";
  case TrajectoryKind::LLT: return "LLT";
  case TrajectoryKind::TriangleRaster2D: return "2DTT";
  case TrajectoryKind::Custom: return "Custom";
  }
  return "?";
}

inline auto parse_trajectory_kind(std::string_view s) -> TrajectoryKind
{
  if (s == "PWT" || s == "pwt") { return TrajectoryKind::PWT; }
  if (s == "LLT" || s == "llt") { return TrajectoryKind::LLT; }
  if (s == "2DTT" || s == "2dtt" || s == "TriangleRaster2D") { return TrajectoryKind::TriangleRaster2D; }
  if (s == "Custom" || s == "custom") { return TrajectoryKind::Custom; }
  throw ValidationError("unknown trajectory kind '" + std::string(s) + "'");
}

enum struct ScanOrder
{
  RowMajor,
  Serpentine
};

/// Inputs to build_trajectory. Which fields matter depends on the kind.
struct TrajectoryParams
{
  double    fov_x = 0.05;        // m
  double    fov_z = 0.06;        // m
  Index     lines = 100;         // stepped x lines (PWT, LLT)
  Index     points_z = 100;      // stepped z points (PWT)
  double    dwell = 10e-3;       // s per PWT step
  double    idle_per_step = 0.0; // s, PWT step or LLT line
  Vec3      slew{};              // R_s,i, T/s
  Vec3      focus_field{};       // B_F,i at t = 0 (Custom)
  double    scan_time = 0.0;     // s (Custom)
  ScanOrder order = ScanOrder::RowMajor;
};

struct FFPState
{
  Vec3 position;
  Vec3 velocity;
};

/// A fully derived trajectory. Immutable once built; evaluate with ffp_state().
struct TrajectorySpec
{
  TrajectoryKind    kind = TrajectoryKind::Custom;
  Vec3              gradient{};
  double            drive_amplitude = 0.0;
  double            drive_frequency = 0.0;
  Vec3              slew{};
  Vec3              focus_field{};
  double            fov_x = 0.0, fov_z = 0.0;
  Index             lines = 0, points_z = 0;
  double            dwell = 0.0;      // PWT step duration
  double            line_time = 0.0;  // LLT single line duration
  double            triangle_frequency = 0.0;
  double            scan_time = 0.0;  // active time
  double            idle_time = 0.0;  // total idle, reported separately
  double            pfov_width = 0.0;
  double            overlap = 0.0;
  std::vector<Vec3> steps; // PWT step centres or LLT line origins, in scan order (m)

  auto total_time() const -> double { return scan_time + idle_time; }
  auto periods() const -> Index { return static_cast<Index>(std::floor(scan_time * drive_frequency + 1e-9)); }
  auto max_slew_z() const -> double
  {
    return kind == TrajectoryKind::PWT ? 0.0 : std::abs(slew.z);
  }

  /// Focus-field-only FFP position and velocity (drive removed).
  auto focus_state(double t) const -> FFPState
  {
    switch (kind) {
    case TrajectoryKind::PWT: {
      auto const i = std::clamp<Index>(static_cast<Index>(std::floor(t / dwell)), 0, static_cast<Index>(steps.size()) - 1);
      return {steps[i], {}};
    }
    case TrajectoryKind::LLT: {
      auto const i = std::clamp<Index>(static_cast<Index>(std::floor(t / line_time)), 0, lines - 1);
      double const local = t - static_cast<double>(i) * line_time;
      double const vz = slew.z / std::abs(gradient.z);
      Vec3 const   o = steps[i];
      return {{o.x, o.y, o.z + vz * local}, {0.0, 0.0, vz}};
    }
    case TrajectoryKind::TriangleRaster2D: {
      double const u = kTwoPi * triangle_frequency * t;
      double const x = fov_x / std::numbers::pi * std::asin(std::clamp(std::sin(u), -1.0, 1.0));
      // Sign of cos(u) picks the branch; at the corners the derivative is taken from the right.
      double       c = std::cos(u);
      if (std::abs(c) < 1e-12) { c = -std::sin(u); }
      double const vx = (c >= 0.0 ? 1.0 : -1.0) * 2.0 * fov_x * triangle_frequency;
      double const vz = slew.z / std::abs(gradient.z);
      return {{x, 0.0, -0.5 * fov_z + vz * t}, {vx, 0.0, vz}};
    }
    case TrajectoryKind::Custom: {
      Vec3 p{(focus_field.x + slew.x * t) / gradient.x,
             gradient.y != 0.0 ? (focus_field.y + slew.y * t) / gradient.y : 0.0,
             (focus_field.z + slew.z * t) / gradient.z};
      Vec3 v{slew.x / gradient.x, gradient.y != 0.0 ? slew.y / gradient.y : 0.0, slew.z / gradient.z};
      return {p, v};
    }
    }
    return {};
  }
};

/// FFP position (m) and velocity (m/s) at time t of the active scan axis.
inline auto ffp_state(TrajectorySpec const &spec, double t) -> FFPState
{
  if (!(t >= 0.0 && t <= spec.scan_time)) { throw DomainError("ffp_state: t outside [0, T_s]"); }
  auto         s = spec.focus_state(t);
  double const w = kTwoPi * spec.drive_frequency;
  s.position.z += spec.drive_amplitude / spec.gradient.z * std::cos(w * t);
  s.velocity.z += -spec.drive_amplitude / spec.gradient.z * w * std::sin(w * t);
  return s;
}

inline auto ffp_state(ScannerConfig const &, TrajectorySpec const &spec, double t) -> FFPState
{
  return ffp_state(spec, t);
}

/// FF-only FFP position at the temporal midpoint of drive period `period`.
inline auto pfov_center(TrajectorySpec const &spec, Index period) -> Vec3
{
  if (period < 0 || period >= spec.periods()) { throw DomainError("pfov_center: period index out of range"); }
  double const t = (static_cast<double>(period) + 0.5) / spec.drive_frequency;
  return spec.focus_state(t).position;
}

inline auto pfov_center(ScannerConfig const &, TrajectorySpec const &spec, Index period) -> Vec3
{
  return pfov_center(spec, period);
}

/// Bp·2π·fd over the largest z slew; +inf when the z focus field never moves.
inline auto dominance_ratio(ScannerConfig const &scanner, TrajectorySpec const &spec) -> double
{
  double const m = spec.max_slew_z();
  if (m == 0.0) { return std::numeric_limits<double>::infinity(); }
  return scanner.drive_slew() / m;
}

inline auto build_trajectory(TrajectoryKind kind, ScannerConfig const &scanner, TrajectoryParams const &p) -> TrajectorySpec
{
  scanner.validate();
  TrajectorySpec s;
  s.kind = kind;
  s.gradient = scanner.gradient;
  s.drive_amplitude = scanner.drive_amplitude;
  s.drive_frequency = scanner.drive_frequency;
  s.slew = p.slew;
  s.focus_field = p.focus_field;
  s.fov_x = p.fov_x;
  s.fov_z = p.fov_z;
  s.pfov_width = scanner.pfov_width();

  if (p.slew.x < 0.0 || p.slew.y < 0.0 || p.slew.z < 0.0) { throw ValidationError("trajectory: slew rates must be >= 0"); }
  if (p.idle_per_step < 0.0) { throw ValidationError("trajectory: idle time must be >= 0"); }
  if (kind != TrajectoryKind::Custom && !(p.fov_x > 0.0 && p.fov_z > 0.0)) {
    throw ValidationError("trajectory: FOV must be positive");
  }
  double const gz = std::abs(scanner.gradient.z);
  auto continuous_overlap = [&](double rz) { return 1.0 - (rz / (scanner.drive_frequency * gz)) / s.pfov_width; };

  switch (kind) {
  case TrajectoryKind::PWT: {
    if (p.lines < 1 || p.points_z < 1) { throw ValidationError("PWT: point counts must be >= 1"); }
    if (!(p.dwell > 0.0)) { throw ValidationError("PWT: dwell must be positive"); }
    s.lines = p.lines;
    s.points_z = p.points_z;
    s.dwell = p.dwell;
    s.slew = {};
    double const dx = p.fov_x / static_cast<double>(p.lines);
    double const dz = p.fov_z / static_cast<double>(p.points_z);
    for (Index i = 0; i < p.lines; i++) {
      double const x = -0.5 * p.fov_x + (static_cast<double>(i) + 0.5) * dx;
      for (Index j = 0; j < p.points_z; j++) {
        Index const  jj = (p.order == ScanOrder::Serpentine && i % 2 == 1) ? p.points_z - 1 - j : j;
        double const z = -0.5 * p.fov_z + (static_cast<double>(jj) + 0.5) * dz;
        s.steps.push_back({x, 0.0, z});
      }
    }
    s.scan_time = p.dwell * static_cast<double>(s.steps.size());
    s.idle_time = p.idle_per_step * static_cast<double>(s.steps.size());
    s.overlap = p.points_z > 1 ? 1.0 - dz / s.pfov_width : 0.0;
    break;
  }
  case TrajectoryKind::LLT: {
    if (p.lines < 1) { throw ValidationError("LLT: line count must be >= 1"); }
    if (!(p.slew.z > 0.0)) { throw ValidationError("LLT: needs a positive z slew rate"); }
    s.lines = p.lines;
    s.slew.x = s.slew.y = 0.0;
    s.line_time = p.fov_z * gz / p.slew.z;
    double const dx = p.fov_x / static_cast<double>(p.lines);
    for (Index i = 0; i < p.lines; i++) {
      s.steps.push_back({-0.5 * p.fov_x + (static_cast<double>(i) + 0.5) * dx, 0.0, -0.5 * p.fov_z});
    }
    s.scan_time = s.line_time * static_cast<double>(p.lines);
    s.idle_time = p.idle_per_step * static_cast<double>(p.lines);
    s.overlap = continuous_overlap(p.slew.z);
    break;
  }
  case TrajectoryKind::TriangleRaster2D: {
    if (!(p.slew.x > 0.0)) { throw ValidationError("2DTT: needs a positive x slew rate"); }
    if (!(p.slew.z > 0.0)) { throw ValidationError("2DTT: needs a positive z slew rate"); }
    s.slew.y = 0.0;
    s.triangle_frequency = p.slew.x / (2.0 * p.fov_x * std::abs(scanner.gradient.x));
    s.scan_time = p.fov_z / (p.slew.z / gz);
    s.idle_time = 0.0;
    s.overlap = continuous_overlap(p.slew.z);
    break;
  }
  case TrajectoryKind::Custom: {
    if (!(p.scan_time > 0.0)) { throw ValidationError("Custom: scan time must be positive"); }
    if ((p.slew.x != 0.0 || p.focus_field.x != 0.0) && scanner.gradient.x == 0.0) {
      throw ValidationError("Custom: x focus field needs a nonzero Gx");
    }
    s.scan_time = p.scan_time;
    s.overlap = continuous_overlap(p.slew.z);
    break;
  }
  }
  if (s.max_slew_z() > 0.0 && s.overlap < 0.0) {
    throw ValidationError("trajectory: z slew too large, consecutive pFOVs do not overlap");
  }
  return s;
}

} // namespace taurus
