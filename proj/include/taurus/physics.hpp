#pragma once

#include "dsp.hpp"
#include "trajectory.hpp"

#include <array>
#include <optional>
#include <random>
#include <string>

namespace taurus {

inline constexpr double kBoltzmann = 1.380649e-23;            // J/K
inline constexpr double kMu0 = 1.25663706212e-6;              // T·m/A
inline constexpr double kMagnetiteMs = 0.6 / kMu0;            // A/m, bulk magnetite (μ0·Ms = 0.6 T)

namespace detail {

// a_n = 2^{2n} B_{2n} / (2n)!, so that L(x) = Σ a_n x^{2n-1}.
inline constexpr std::array<double, 10> kLangevinSeries = {
  1.0 / 3.0,
  -1.0 / 45.0,
  2.0 / 945.0,
  -1.0 / 4725.0,
  2.0 / 93555.0,
  -1382.0 / 638512875.0,
  4.0 / 18243225.0,
  -3617.0 / 162820783125.0,
  87734.0 / 38979295480125.0,
  -349222.0 / 1531329465290625.0,
};

inline constexpr double kSeriesLimit = 0.5;

} // namespace detail

/// L(x) = coth(x) − 1/x, evaluated by its Taylor series near the removable singularity.
inline auto langevin(double x) -> double
{
  if (std::abs(x) < detail::kSeriesLimit) {
    double const x2 = x * x;
    double       acc = 0.0;
    for (auto it = detail::kLangevinSeries.rbegin(); it != detail::kLangevinSeries.rend(); ++it) { acc = acc * x2 + *it; }
    return acc * x;
  }
  return 1.0 / std::tanh(x) - 1.0 / x;
}

/// dL/dx = 1/x² − 1/sinh²(x).
inline auto langevin_derivative(double x) -> double
{
  if (std::abs(x) < detail::kSeriesLimit) {
    double const x2 = x * x;
    double       acc = 0.0;
    for (Index n = static_cast<Index>(detail::kLangevinSeries.size()); n >= 1; n--) {
      acc = acc * x2 + static_cast<double>(2 * n - 1) * detail::kLangevinSeries[n - 1];
    }
    return acc;
  }
  double const s = std::sinh(x);
  return 1.0 / (x * x) - 1.0 / (s * s);
}

namespace detail {

// h(x) = L(x)/x and q(x) = h'(x)/x, both smooth and even.
inline auto langevin_ratio(double x) -> double
{
  if (std::abs(x) < kSeriesLimit) {
    double const x2 = x * x;
    double       acc = 0.0;
    for (auto it = kLangevinSeries.rbegin(); it != kLangevinSeries.rend(); ++it) { acc = acc * x2 + *it; }
    return acc;
  }
  return langevin(x) / x;
}

inline auto langevin_ratio_slope(double x) -> double
{
  if (std::abs(x) < kSeriesLimit) {
    double const x2 = x * x;
    double       acc = 0.0;
    for (Index n = static_cast<Index>(kLangevinSeries.size()); n >= 2; n--) {
      acc = acc * x2 + static_cast<double>(2 * n - 2) * kLangevinSeries[n - 1];
    }
    return acc;
  }
  return (x * langevin_derivative(x) - langevin(x)) / (x * x * x);
}

} // namespace detail

struct MNPSpecies
{
  std::string name = "mnp";
  double      diameter = 25e-9;   // m, core
  double      tau = 0.0;          // s
  double      temperature = 300.0;
  double      saturation = kMagnetiteMs; // A/m

  auto moment() const -> double { return saturation * std::numbers::pi * diameter * diameter * diameter / 6.0; }
  /// ξ per tesla of applied field.
  auto field_scale() const -> double { return moment() / (kBoltzmann * temperature); }

  void validate() const
  {
    if (!(diameter > 0.0)) { throw ValidationError("species '" + name + "': diameter must be positive"); }
    if (!(tau >= 0.0)) { throw ValidationError("species '" + name + "': tau must be >= 0"); }
    if (!(temperature > 0.0 && saturation > 0.0)) { throw ValidationError("species '" + name + "': bad temperature or Ms"); }
  }

  auto same_physics(MNPSpecies const &o) const -> bool
  {
    return diameter == o.diameter && tau == o.tau && temperature == o.temperature && saturation == o.saturation;
  }
};

/// A rectangular x–z footprint of uniformly distributed particles (zero extent = point source).
struct Source
{
  std::string name;
  Vec3        position;
  double      width_x = 0.0, width_z = 0.0;
  MNPSpecies  species;
  double      concentration = 1.0;
};

struct Phantom
{
  std::vector<Source> sources;
  double              render_spacing = 0.4e-3; // m, point spacing used to discretise footprints

  void validate() const
  {
    if (sources.empty()) { throw ValidationError("phantom: needs at least one source"); }
    if (!(render_spacing > 0.0)) { throw ValidationError("phantom: render spacing must be positive"); }
    for (auto const &s : sources) {
      if (s.width_x < 0.0 || s.width_z < 0.0) { throw ValidationError("phantom: source extents must be >= 0"); }
      s.species.validate();
    }
  }
};

struct NoiseSpec
{
  double        snr = 10.0;
  std::uint64_t seed = 0;
};

struct PointMass
{
  Vec3   position;
  double weight;
};

/// Sources sharing identical particle physics, rendered to weighted points.
struct SpeciesGroup
{
  MNPSpecies             species;
  std::vector<PointMass> points;
};

inline auto render(Phantom const &ph) -> std::vector<SpeciesGroup>
{
  ph.validate();
  std::vector<SpeciesGroup> groups;
  for (auto const &s : ph.sources) {
    auto it = std::find_if(groups.begin(), groups.end(), [&](auto const &g) { return g.species.same_physics(s.species); });
    if (it == groups.end()) {
      groups.push_back({s.species, {}});
      it = groups.end() - 1;
    }
    auto count = [&](double w) { return w > 0.0 ? std::max<Index>(1, static_cast<Index>(std::ceil(w / ph.render_spacing - 1e-9))) : 1; };
    Index const  nx = count(s.width_x), nz = count(s.width_z);
    double const w = s.concentration / static_cast<double>(nx * nz);
    for (Index i = 0; i < nx; i++) {
      for (Index j = 0; j < nz; j++) {
        Vec3 p = s.position;
        p.x += s.width_x * ((static_cast<double>(i) + 0.5) / static_cast<double>(nx) - 0.5);
        p.z += s.width_z * ((static_cast<double>(j) + 0.5) / static_cast<double>(nz) - 0.5);
        it->points.push_back({p, w});
      }
    }
  }
  return groups;
}

/// z-magnetisation rate dM_z/dt of unit-saturation particles at `r`, for FFP state (p, v).
/// Evaluated analytically through the chain rule on M = L(k|B|)·B/|B|, B = G⊙(r − p).
inline auto magnetization_rate(Vec3 const &g, double k, Vec3 const &r, Vec3 const &p, Vec3 const &v) -> double
{
  Vec3 const   B{g.x * (r.x - p.x), g.y * (r.y - p.y), g.z * (r.z - p.z)};
  Vec3 const   dB{-g.x * v.x, -g.y * v.y, -g.z * v.z};
  double const b = B.norm();
  double const x = k * b;
  double const dot = B.x * dB.x + B.y * dB.y + B.z * dB.z;
  return k * detail::langevin_ratio(x) * dB.z + k * k * k * detail::langevin_ratio_slope(x) * B.z * dot;
}

struct SynthesisOptions
{
  double t_begin = 0.0;
  double t_end = -1.0;       // negative: scan end
  double cull_field = 0.1;   // T; points whose field stays above this over a drive period are skipped. <= 0 disables
  double aa_attenuation = 80.0;
};

namespace detail {

struct Window
{
  double t0;
  Index  n;
};

inline auto sample_window(ScannerConfig const &sc, TrajectorySpec const &spec, SynthesisOptions const &o, double rate, Index align)
  -> Window
{
  double const t1 = o.t_end < 0.0 ? spec.scan_time : o.t_end;
  if (o.t_begin < 0.0 || t1 > spec.scan_time * (1 + 1e-12) || !(t1 > o.t_begin)) {
    throw DomainError("synthesis window must lie inside [0, T_s]");
  }
  auto n = static_cast<Index>(std::floor((t1 - o.t_begin) * rate + 1e-6));
  n -= n % align;
  if (n < align) { throw DomainError("synthesis window shorter than one output sample"); }
  (void)sc;
  return {o.t_begin, n};
}

/// Adds the adiabatic contribution of `points` over a block of FFP states into `out`.
/// Returns false if every point was culled.
inline auto adiabatic_block(Vec3 const &g, double k, std::span<PointMass const> points, std::span<Vec3 const> pos,
                            std::span<Vec3 const> vel, double cull_field, std::span<double> out) -> bool
{
  Vec3 lo = pos[0], hi = pos[0];
  for (auto const &p : pos) {
    lo = {std::min(lo.x, p.x), std::min(lo.y, p.y), std::min(lo.z, p.z)};
    hi = {std::max(hi.x, p.x), std::max(hi.y, p.y), std::max(hi.z, p.z)};
  }
  bool any = false;
  for (auto const &pt : points) {
    if (cull_field > 0.0) {
      auto gap = [](double r, double a, double b) { return r < a ? a - r : (r > b ? r - b : 0.0); };
      Vec3 const d{g.x * gap(pt.position.x, lo.x, hi.x), g.y * gap(pt.position.y, lo.y, hi.y), g.z * gap(pt.position.z, lo.z, hi.z)};
      if (d.norm() > cull_field) { continue; }
    }
    any = true;
    for (size_t i = 0; i < out.size(); i++) { out[i] += pt.weight * magnetization_rate(g, k, pt.position, pos[i], vel[i]); }
  }
  return any;
}

template <typename Sink>
void stream_signal(ScannerConfig const &sc, TrajectorySpec const &spec, Phantom const &ph, Window w, double cull_field,
                   bool relax, Sink &&sink)
{
  auto const   groups = render(ph);
  double const rate = sc.oversample_rate;
  Index const  block = integer_ratio(rate, sc.drive_frequency, "fs_hi/fd");
  std::vector<Vec3>   pos(static_cast<size_t>(block)), vel(static_cast<size_t>(block));
  std::vector<double> sum(static_cast<size_t>(block)), tmp(static_cast<size_t>(block));
  struct IIR
  {
    double a, g, y;
  };
  std::vector<IIR> iir;
  for (auto const &gr : groups) {
    double const tau = relax ? gr.species.tau : 0.0;
    double const a = tau > 0.0 ? std::exp(-1.0 / (tau * rate)) : 0.0;
    double const g = tau > 0.0 ? -std::expm1(-1.0 / (tau * rate)) / -std::expm1(static_cast<double>(w.n) * std::log(a)) : 1.0;
    iir.push_back({a, g, 0.0});
  }
  for (Index b0 = 0; b0 < w.n; b0 += block) {
    Index const n = std::min(block, w.n - b0);
    for (Index i = 0; i < n; i++) {
      auto const s = ffp_state(spec, std::min(spec.scan_time, w.t0 + static_cast<double>(b0 + i) / rate));
      pos[i] = s.position;
      vel[i] = s.velocity;
    }
    std::fill_n(sum.begin(), n, 0.0);
    for (size_t gi = 0; gi < groups.size(); gi++) {
      auto const &gr = groups[gi];
      std::fill_n(tmp.begin(), n, 0.0);
      bool const active = adiabatic_block(spec.gradient, gr.species.field_scale(), gr.points, std::span{pos}.first(n),
                                          std::span{vel}.first(n), cull_field, std::span{tmp}.first(n));
      auto &f = iir[gi];
      if (f.a == 0.0) {
        if (active) {
          for (Index i = 0; i < n; i++) { sum[i] += tmp[i]; }
        }
        continue;
      }
      if (!active && f.y == 0.0) { continue; }
      for (Index i = 0; i < n; i++) {
        f.y = f.a * f.y + f.g * tmp[i];
        sum[i] += f.y;
      }
    }
    sink(std::span<double const>{sum}.first(n));
  }
}

} // namespace detail

/// Adiabatic (τ = 0) receive signal dM_z/dt at fs_hi over [t_begin, t_end).
inline auto simulate_adiabatic(ScannerConfig const &sc, TrajectorySpec const &spec, Phantom const &ph,
                               SynthesisOptions const &o = {}) -> SampledSignal
{
  sc.validate();
  auto const    w = detail::sample_window(sc, spec, o, sc.oversample_rate, 1);
  SampledSignal out{{}, sc.oversample_rate, w.t0};
  out.samples.reserve(static_cast<size_t>(w.n));
  detail::stream_signal(sc, spec, ph, w, o.cull_field, false,
                        [&](std::span<double const> x) { out.samples.insert(out.samples.end(), x.begin(), x.end()); });
  return out;
}

/// Samples of (1/τ)e^{−t/τ}u(t) normalised to unit sum; τ = 0 gives the unit impulse.
inline auto relaxation_kernel(double tau, double rate, Index length) -> SampledSignal
{
  if (!(tau >= 0.0)) { throw ValidationError("relaxation_kernel: tau must be >= 0"); }
  if (length < 1) { throw ValidationError("relaxation_kernel: length must be >= 1"); }
  SampledSignal k{std::vector<double>(static_cast<size_t>(length), 0.0), rate, 0.0};
  if (tau == 0.0) {
    k.samples[0] = 1.0;
    return k;
  }
  double const lna = -1.0 / (tau * rate);
  double const g = -std::expm1(lna) / -std::expm1(static_cast<double>(length) * lna);
  for (Index i = 0; i < length; i++) { k.samples[i] = g * std::exp(lna * static_cast<double>(i)); }
  return k;
}

/// Causal convolution with relaxation_kernel(τ, rate, N), truncated to the input length N.
/// The kernel is geometric, so this is run as the equivalent first-order recursion.
inline auto apply_relaxation(SampledSignal const &s, double tau) -> SampledSignal
{
  if (!(tau >= 0.0)) { throw ValidationError("apply_relaxation: tau must be >= 0"); }
  if (tau == 0.0 || s.samples.empty()) { return s; }
  double const lna = -1.0 / (tau * s.rate);
  double const a = std::exp(lna);
  double const g = -std::expm1(lna) / -std::expm1(static_cast<double>(s.size()) * lna);
  SampledSignal y = s;
  double        acc = 0.0;
  for (auto &v : y.samples) {
    acc = a * acc + g * v;
    v = acc;
  }
  return y;
}

inline auto antialias_taps(ScannerConfig const &sc, double attenuation = 80.0) -> std::vector<double>
{
  return design_lowpass({0.45 * sc.acquisition_rate, 0.1 * sc.acquisition_rate, attenuation}, sc.oversample_rate);
}

/// Direct-feedthrough high-pass: cutoff 1.5·fd, stopband at fd, passband from 2·fd.
inline auto feedthrough_taps(double fd, double rate) -> std::vector<double>
{
  return design_highpass({1.5 * fd, fd, 65.0}, rate);
}

/// Relaxed, anti-aliased and decimated signal at fs, before noise and feedthrough filtering.
inline auto synthesize_clean(ScannerConfig const &sc, TrajectorySpec const &spec, Phantom const &ph,
                             SynthesisOptions const &o = {}) -> SampledSignal
{
  sc.validate();
  Index const q = sc.oversample_factor();
  auto const  w = detail::sample_window(sc, spec, o, sc.oversample_rate, q);
  std::vector<double> taps = q > 1 ? antialias_taps(sc, o.aa_attenuation) : std::vector<double>{1.0};
  StreamingDecimator  dec{std::move(taps), q, w.n};
  detail::stream_signal(sc, spec, ph, w, o.cull_field, true, [&](std::span<double const> x) { dec.push(x); });
  return {dec.finish(), sc.acquisition_rate, w.t0};
}

/// Adds white Gaussian noise with std = peak/SNR, reproducibly from the seed.
inline auto add_noise(SampledSignal s, NoiseSpec const &noise, double peak) -> SampledSignal
{
  if (!(noise.snr > 0.0)) { throw ValidationError("noise: SNR must be positive"); }
  std::mt19937_64                  rng{noise.seed};
  std::normal_distribution<double> dist{0.0, peak / noise.snr};
  for (auto &v : s.samples) { v += dist(rng); }
  return s;
}

inline auto feedthrough_filter(SampledSignal s, double fd) -> SampledSignal
{
  auto const h = feedthrough_taps(fd, s.rate);
  s.samples = filter_zero_phase(s.samples, h);
  return s;
}

struct Synthesis
{
  SampledSignal received;
  double        noisefree_peak = 0.0;
};

/// Full pipeline: adiabatic → relaxation per species → decimation → noise → feedthrough high-pass.
inline auto synthesize(ScannerConfig const &sc, TrajectorySpec const &spec, Phantom const &ph,
                       std::optional<NoiseSpec> const &noise, SynthesisOptions const &o = {}) -> Synthesis
{
  auto         clean = synthesize_clean(sc, spec, ph, o);
  double const peak = clean.peak();
  if (noise) { clean = add_noise(std::move(clean), *noise, peak); }
  return {feedthrough_filter(std::move(clean), sc.drive_frequency), peak};
}

} // namespace taurus
