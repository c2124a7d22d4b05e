#pragma once

#include "dsp.hpp"
#include "physics.hpp"
#include "trajectory.hpp"

namespace taurus {

enum struct Method
{
  TAURUS,
  WLS
};

inline auto to_string(Method m) -> std::string_view { return m == Method::TAURUS ? "TAURUS" : "WLS"; }

inline auto parse_method(std::string_view s) -> Method
{
  if (s == "TAURUS" || s == "taurus") { return Method::TAURUS; }
  if (s == "WLS" || s == "wls" || s == "WLS-TAURUS") { return Method::WLS; }
  throw ValidationError("unknown estimation method '" + std::string(s) + "'");
}

/// Which parts of the slew-rate correction to apply.
enum struct CorrectionMode
{
  None,
  AmplitudeOnly,
  ShiftOnly,
  Full
};

inline auto to_string(CorrectionMode m) -> std::string_view
{
  switch (m) {
  case CorrectionMode::None: return "none";
  case CorrectionMode::AmplitudeOnly: return "amplitude";
  case CorrectionMode::ShiftOnly: return "shift";
  case CorrectionMode::Full: return "full";
  }
  return "?";
}

inline auto parse_correction_mode(std::string_view s) -> CorrectionMode
{
  if (s == "none") { return CorrectionMode::None; }
  if (s == "amplitude") { return CorrectionMode::AmplitudeOnly; }
  if (s == "shift") { return CorrectionMode::ShiftOnly; }
  if (s == "full") { return CorrectionMode::Full; }
  throw ValidationError("unknown correction mode '" + std::string(s) + "'");
}

struct SRCorrection
{
  double dt = 0.0;    // s, time shift applied to the negative half
  double alpha = 1.0; // amplitude ratio applied to the negative half
  double t0 = 0.0;    // s, negative-half peak-speed instant
  double slew = 0.0;  // T/s

  auto restricted(CorrectionMode m) const -> SRCorrection
  {
    SRCorrection c = *this;
    if (m == CorrectionMode::None || m == CorrectionMode::ShiftOnly) { c.alpha = 1.0; }
    if (m == CorrectionMode::None || m == CorrectionMode::AmplitudeOnly) { c.dt = 0.0; }
    return c;
  }
};

/// Residual of the time-shift equation Bp·sin(2πfd·Δt) + R·Δt + R/(2fd), in tesla.
inline auto sr_shift_residual(ScannerConfig const &sc, double slew, double dt) -> double
{
  double const fd = sc.drive_frequency;
  return sc.drive_amplitude * std::sin(kTwoPi * fd * dt) + slew * dt + slew / (2.0 * fd);
}

/// Time shift and amplitude ratio that undo the asymmetry caused by a z focus-field slew.
/// The root is bracketed in [−1/(4fd), 0]: −1/(2fd) is always a trivial root of the equation.
inline auto sr_correction_params(ScannerConfig const &sc, double slew) -> SRCorrection
{
  double const fd = sc.drive_frequency;
  double const w = kTwoPi * fd;
  double const Bw = sc.drive_amplitude * w;
  SRCorrection c;
  c.t0 = 1.0 / (4.0 * fd);
  c.slew = slew;
  if (slew == 0.0) { return c; }
  if (!(Bw > std::abs(slew))) {
    throw ValidationError("SR correction: drive slew Bp·2π·fd must dominate the focus-field slew");
  }
  double lo = -1.0 / (4.0 * fd), hi = 0.0;
  double flo = sr_shift_residual(sc, slew, lo), fhi = sr_shift_residual(sc, slew, hi);
  if (flo * fhi > 0.0) { throw NumericalError("SR correction: slew too large for a bracketed time-shift root"); }
  // Newton from the first-order Taylor value, falling back to bisection when it leaves the bracket.
  double x = -slew / (2.0 * fd) / (Bw + slew);
  x = std::clamp(x, lo, hi);
  for (int it = 0; it < 200; it++) {
    double const f = sr_shift_residual(sc, slew, x);
    if (f == 0.0) { break; }
    if ((f < 0.0) == (flo < 0.0)) {
      lo = x;
      flo = f;
    } else {
      hi = x;
    }
    double const df = Bw * std::cos(w * x) + slew;
    double       next = x - f / df;
    if (!(next > lo && next < hi)) { next = 0.5 * (lo + hi); }
    if (std::abs(next - x) <= 1e-16 * std::abs(x) || hi - lo <= 1e-22) {
      x = next;
      break;
    }
    x = next;
  }
  c.dt = x;
  c.alpha = std::abs(Bw * std::cos(w * x) + slew) / std::abs(-Bw + slew);
  return c;
}

struct HalfCyclePair
{
  SampledSignal neg, pos;
  Index         period = 0;
  Vec3          center{};
};

struct SpectrumPair
{
  std::vector<Cx> pos, neg;
  double          df = 0.0;
  double          rate = 0.0;
  bool            corrected = false;

  auto size() const -> Index { return static_cast<Index>(pos.size()); }
  auto frequency(Index k) const -> double { return bin_frequency(k, size(), rate); }
};

struct EstimatorConfig
{
  Index          n_rep = 6;
  Method         method = Method::WLS;
  CorrectionMode correction = CorrectionMode::Full;
  double         timing_offset = 0.0; // s
};

struct WLSProblem
{
  std::vector<Cx>     a, b;
  std::vector<double> w;

  /// Re{(aᴴWa)⁻¹ aᴴWb}.
  auto solve() const -> double
  {
    Cx     num{};
    double den = 0.0;
    for (size_t k = 0; k < a.size(); k++) {
      num += std::conj(a[k]) * w[k] * b[k];
      den += w[k] * std::norm(a[k]);
    }
    if (!(den > 0.0)) { throw NumericalError("WLS: aᴴWa is zero"); }
    return (num / den).real();
  }
};

/// Splits a drive-phase-aligned signal into one pair per complete drive period.
inline auto segment(SampledSignal const &s, ScannerConfig const &sc) -> std::vector<HalfCyclePair>
{
  check_signal(s, "segment");
  Index const  P = integer_ratio(s.rate, sc.drive_frequency, "fs/fd");
  Index const  H = P / 2;
  double const phase = s.t0 * sc.drive_frequency;
  if (std::abs(phase - std::round(phase)) > 1e-6) { throw ValidationError("segment: t0 is not on a drive period boundary"); }
  Index const base = static_cast<Index>(std::llround(phase));
  Index const count = s.size() / P;
  if (count < 1) { throw ValidationError("segment: signal shorter than one drive period"); }
  std::vector<HalfCyclePair> out;
  out.reserve(static_cast<size_t>(count));
  for (Index p = 0; p < count; p++) {
    auto const    *first = s.samples.data() + p * P;
    double const   t = s.time(p * P);
    HalfCyclePair  pair;
    pair.neg = {{first, first + H}, s.rate, t};
    pair.pos = {{first + H, first + P}, s.rate, t + static_cast<double>(H) / s.rate};
    pair.period = base + p;
    out.push_back(std::move(pair));
  }
  return out;
}

/// Periodically continues the period [neg, pos] and takes (N_rep+1) half-cycles ending with the
/// original pos and starting with the original neg. Δf becomes 2fd/(N_rep+1).
inline auto extend_replicate(HalfCyclePair const &pair, Index n_rep) -> HalfCyclePair
{
  if (n_rep < 0) { throw ValidationError("extend_replicate: N_rep must be >= 0"); }
  if (pair.neg.size() != pair.pos.size()) { throw ValidationError("extend_replicate: halves differ in length"); }
  if (n_rep == 0) { return pair; }
  Index const H = pair.neg.size();
  Index const L = (n_rep + 1) * H;
  auto        at = [&](Index i) {
    Index const m = ((i % (2 * H)) + 2 * H) % (2 * H);
    return m < H ? pair.neg.samples[m] : pair.pos.samples[m - H];
  };
  HalfCyclePair out = pair;
  out.neg.samples.resize(static_cast<size_t>(L));
  out.pos.samples.resize(static_cast<size_t>(L));
  for (Index i = 0; i < L; i++) {
    out.neg.samples[i] = at(i);
    out.pos.samples[i] = at(2 * H - L + i);
  }
  out.pos.t0 = pair.pos.t0 - static_cast<double>(L - H) / pair.pos.rate;
  return out;
}

/// DFTs of both halves, with Δt and α applied to the negative spectrum only.
inline auto spectra(HalfCyclePair const &pair, SRCorrection const &c = {}) -> SpectrumPair
{
  if (pair.neg.size() != pair.pos.size() || pair.neg.size() < 2) { throw ValidationError("spectra: bad half-cycle lengths"); }
  SpectrumPair sp;
  sp.rate = pair.pos.rate;
  sp.pos = fft(std::span<double const>{pair.pos.samples});
  sp.neg = fft(std::span<double const>{pair.neg.samples});
  sp.df = sp.rate / static_cast<double>(sp.size());
  for (Index k = 0; k < sp.size(); k++) { sp.neg[k] *= std::polar(c.alpha, kTwoPi * sp.frequency(k) * c.dt); }
  sp.corrected = true;
  return sp;
}

/// τ(f) = (S*_pos + S_neg) / (i2πf (S*_pos − S_neg)); bin 0 is 0, degenerate bins are NaN.
inline auto tau_profile(SpectrumPair const &sp) -> std::vector<Cx>
{
  std::vector<Cx> t(sp.pos.size(), Cx{});
  for (Index k = 1; k < sp.size(); k++) {
    Cx const a = Cx{0.0, kTwoPi * sp.frequency(k)} * (std::conj(sp.pos[k]) - sp.neg[k]);
    Cx const b = std::conj(sp.pos[k]) + sp.neg[k];
    t[k] = b / a;
    if (!std::isfinite(t[k].real()) || !std::isfinite(t[k].imag())) {
      t[k] = Cx{std::numeric_limits<double>::quiet_NaN(), 0.0};
    }
  }
  return t;
}

/// |S_pos|-weighted mean of Re τ(f) over non-DC bins with finite τ(f).
inline auto estimate_taurus(SpectrumPair const &sp) -> double
{
  auto const tf = tau_profile(sp);
  double     num = 0.0, den = 0.0;
  for (Index k = 1; k < sp.size(); k++) {
    double const w = std::abs(sp.pos[k]);
    if (w > 0.0 && std::isfinite(tf[k].real())) {
      num += w * tf[k].real();
      den += w;
    }
  }
  if (!(den > 0.0)) { throw NumericalError("TAURUS: all weights are zero"); }
  return num / den;
}

inline auto build_wls(SpectrumPair const &sp) -> WLSProblem
{
  WLSProblem p;
  for (Index k = 1; k < sp.size(); k++) {
    p.a.push_back(Cx{0.0, kTwoPi * sp.frequency(k)} * (std::conj(sp.pos[k]) - sp.neg[k]));
    p.b.push_back(std::conj(sp.pos[k]) + sp.neg[k]);
    p.w.push_back(std::norm(sp.pos[k]));
  }
  return p;
}

inline auto estimate_wls(SpectrumPair const &sp) -> double { return build_wls(sp).solve(); }

inline auto estimate(SpectrumPair const &sp, Method m) -> double
{
  return m == Method::TAURUS ? estimate_taurus(sp) : estimate_wls(sp);
}

enum struct DeconvolutionModel
{
  Continuous, // multiply by 1 + i2πfτ below 0.45·fs, circularly over the given samples
  Sampled     // exact inverse of apply_relaxation at the signal's own rate
};

namespace detail {

// Circular multiplication by 1 + i2πfτ below 0.45·fs; any sign of τ.
inline auto inverse_debye(std::span<double const> x, double rate, double tau) -> std::vector<double>
{
  Index const n = static_cast<Index>(x.size());
  auto        X = fft(x);
  for (Index k = 0; k < n; k++) {
    double const f = bin_frequency(k, n, rate);
    if (std::abs(f) < 0.45 * rate) { X[k] *= Cx{1.0, kTwoPi * f * tau}; }
  }
  if (n % 2 == 0) { X[n / 2] = X[n / 2].real(); }
  auto const          y = ifft(X);
  std::vector<double> out(x.size());
  for (Index i = 0; i < n; i++) { out[i] = y[i].real(); }
  return out;
}

} // namespace detail

inline auto deconvolve(SampledSignal const &s, double tau, DeconvolutionModel model = DeconvolutionModel::Continuous)
  -> SampledSignal
{
  if (!(tau >= 0.0)) { throw ValidationError("deconvolve: tau must be >= 0"); }
  if (tau == 0.0 || s.samples.empty()) { return s; }
  SampledSignal out = s;
  if (model == DeconvolutionModel::Sampled) {
    double const lna = -1.0 / (tau * s.rate);
    double const a = std::exp(lna);
    double const g = -std::expm1(lna) / -std::expm1(static_cast<double>(s.size()) * lna);
    double       prev = 0.0;
    for (Index i = 0; i < s.size(); i++) {
      out.samples[i] = (s.samples[i] - a * prev) / g;
      prev = s.samples[i];
    }
    return out;
  }
  out.samples = detail::inverse_debye(s.samples, s.rate, tau);
  return out;
}

/// Mean over samples of (pos(t) + neg(−t))², with neg(−t) read circularly over the half-cycle.
inline auto mirror_mse(HalfCyclePair const &pair) -> double
{
  if (pair.neg.size() != pair.pos.size()) { throw ValidationError("mirror_mse: halves differ in length"); }
  Index const H = pair.pos.size();
  if (H == 0) { return 0.0; }
  double acc = 0.0;
  for (Index n = 0; n < H; n++) {
    double const d = pair.pos.samples[n] + pair.neg.samples[(H - n) % H];
    acc += d * d;
  }
  return acc / static_cast<double>(H);
}

/// Extracts drive period `period` (counted from the first sample) of a long signal, reading the
/// samples `offset` seconds later, with the SR correction applied to the negative half in the
/// time domain: neg_c(t) = α·s(t + Δt), interpolated from the surrounding signal.
inline auto extract_pair(SampledSignal const &s, ScannerConfig const &sc, Index period, SRCorrection const &c = {},
                         double offset = 0.0) -> HalfCyclePair
{
  Index const P = integer_ratio(s.rate, sc.drive_frequency, "fs/fd");
  Index const H = P / 2;
  if (period < 0 || (period + 1) * P > s.size()) { throw DomainError("extract_pair: period outside signal"); }
  static SincInterpolator const interp;
  double const                  u = static_cast<double>(period * P) + offset * s.rate;
  HalfCyclePair                 pair;
  pair.neg = {interp.run(s.samples, u + c.dt * s.rate, H), s.rate, s.time(period * P)};
  pair.pos = {interp.run(s.samples, u + static_cast<double>(H), H), s.rate, s.time(period * P + H)};
  for (auto &v : pair.neg.samples) { v *= c.alpha; }
  double const phase = s.t0 * sc.drive_frequency;
  pair.period = static_cast<Index>(std::llround(phase)) + period;
  return pair;
}

/// τ̂ of a (already corrected) pair: replicate, transform, estimate.
inline auto estimate_pair(HalfCyclePair const &pair, Index n_rep, Method m) -> double
{
  return estimate(spectra(extend_replicate(pair, n_rep)), m);
}

/// Mirror MSE of a pair after deconvolving its full period with τ̂ (circularly, continuous model).
inline auto deconvolved_mirror_mse(HalfCyclePair const &pair, double tau) -> double
{
  Index const         H = pair.neg.size();
  std::vector<double> period = pair.neg.samples;
  period.insert(period.end(), pair.pos.samples.begin(), pair.pos.samples.end());
  auto const    d = detail::inverse_debye(period, pair.neg.rate, tau);
  HalfCyclePair out;
  out.neg = {{d.begin(), d.begin() + H}, pair.neg.rate, pair.neg.t0};
  out.pos = {{d.begin() + H, d.end()}, pair.pos.rate, pair.pos.t0};
  return mirror_mse(out);
}

struct PeriodEstimate
{
  Index  period = 0;
  Vec3   center{};
  double tau = std::numeric_limits<double>::quiet_NaN();
  double weight = 0.0;     // energy of the positive half-cycle
  double mirror_mse = 0.0; // after deconvolution with τ̂
  bool   ok = false;
};

/// Full per-period estimation on a filtered signal at fs.
inline auto estimate_period(SampledSignal const &s, ScannerConfig const &sc, Index period, SRCorrection const &full,
                            EstimatorConfig const &cfg) -> PeriodEstimate
{
  auto const     c = full.restricted(cfg.correction);
  auto const     pair = extract_pair(s, sc, period, c, cfg.timing_offset);
  PeriodEstimate e;
  e.period = pair.period;
  for (double v : pair.pos.samples) { e.weight += v * v; }
  try {
    e.tau = estimate_pair(pair, cfg.n_rep, cfg.method);
    e.ok = std::isfinite(e.tau);
    if (e.ok) { e.mirror_mse = deconvolved_mirror_mse(pair, e.tau); }
  } catch (NumericalError const &) {
    e.ok = false;
  }
  return e;
}

} // namespace taurus
