#pragma once

#include "estimator.hpp"

#include <sstream>

namespace taurus {

struct FilterSpec
{
  bool   highpass = true;
  double cutoff = 0.0;      // Hz
  double transition = 0.0;  // Hz; 0 picks a default from the cutoff
  double attenuation = 65.0;

  static auto feedthrough(double fd) -> FilterSpec { return {true, 1.5 * fd, fd, 65.0}; }
  static auto receive_lowpass() -> FilterSpec { return {false, 120e3, 40e3, 60.0}; }
};

inline auto zero_phase_filter(SampledSignal const &s, FilterSpec const &f) -> SampledSignal
{
  check_signal(s, "zero_phase_filter");
  if (!(f.cutoff > 0.0) || f.cutoff >= 0.5 * s.rate) { throw ValidationError("zero_phase_filter: cutoff must lie in (0, fs/2)"); }
  double tw = f.transition > 0.0 ? f.transition : (f.highpass ? 2.0 * f.cutoff / 3.0 : f.cutoff / 3.0);
  tw = std::min(tw, 2.0 * (0.5 * s.rate - f.cutoff));
  FirDesign const d{f.cutoff, tw, f.attenuation};
  auto const      h = f.highpass ? design_highpass(d, s.rate) : design_lowpass(d, s.rate);
  SampledSignal   out = s;
  out.samples = filter_zero_phase(s.samples, h);
  return out;
}

struct BaselineAlignment
{
  SampledSignal residual;
  double        delay = 0.0; // s, baseline lags received by this much
  bool          ambiguous = false;
};

/// Finds the sub-sample delay of `baseline` against `received` by cross-correlation refined on
/// a `fine_rate` grid, shifts the baseline back and subtracts it.
///
/// The refinement interpolates the correlation sequence itself, which for band-limited inputs
/// equals correlating the upsampled signals; the residual never leaves fs.
inline auto align_baseline(SampledSignal const &received, SampledSignal const &baseline, double fine_rate = 100e6,
                           Index max_lag = -1) -> BaselineAlignment
{
  check_signal(received, "align_baseline");
  check_signal(baseline, "align_baseline");
  if (received.rate != baseline.rate) { throw ValidationError("align_baseline: sampling rates differ"); }
  Index const n = std::min(received.size(), baseline.size());
  if (n < 4) { throw ValidationError("align_baseline: signals too short"); }
  if (max_lag < 0) { max_lag = n / 2; }
  max_lag = std::min(max_lag, n - 1);

  auto const c = cross_correlation(baseline.samples, received.samples, max_lag);
  Index      best = 0;
  for (Index i = 1; i < static_cast<Index>(c.size()); i++) {
    if (c[i] > c[best]) { best = i; }
  }
  BaselineAlignment out;
  double const      top = c[best];
  for (Index i = 1; i + 1 < static_cast<Index>(c.size()); i++) {
    bool const local = c[i] >= c[i - 1] && c[i] >= c[i + 1];
    if (local && std::abs(i - best) > 1 && c[i] >= 0.99 * top) { out.ambiguous = true; }
  }
  if (!(top > 0.0)) { out.ambiguous = true; }

  auto const              up = std::max<Index>(1, static_cast<Index>(std::llround(fine_rate / received.rate)));
  SincInterpolator const  interp;
  double                  lag = static_cast<double>(best - max_lag);
  if (up > 1) {
    double best_v = -std::numeric_limits<double>::infinity();
    for (Index j = -up; j <= up; j++) {
      double const u = static_cast<double>(best) + static_cast<double>(j) / static_cast<double>(up);
      double const v = interp(c, u);
      if (v > best_v) {
        best_v = v;
        lag = u - static_cast<double>(max_lag);
      }
    }
  }
  out.delay = lag / received.rate;
  auto const shifted = interp.shift(baseline.samples, lag);
  out.residual = received;
  for (Index i = 0; i < received.size(); i++) { out.residual.samples[i] -= i < baseline.size() ? shifted[i] : 0.0; }
  return out;
}

struct MarkerWindow
{
  Index first_period = 0; // counted from the first sample of the signal
  Index periods = 1;
};

struct TimingSearch
{
  double range = 0.0;    // s on each side; 0 means one sample at fs
  double step_rate = 100e6; // grid resolution in samples/s
};

struct TimingCalibration
{
  double                                 offset = 0.0; // s, read the signal this much later
  double                                 range = 0.0;
  std::vector<std::pair<double, double>> curve;        // (offset, mean mirror MSE)
};

/// Grid search of the read-out offset minimising the mirror MSE of the deconvolved marker periods.
inline auto fine_tune_timing(SampledSignal const &s, ScannerConfig const &sc, MarkerWindow const &w,
                             EstimatorConfig const &cfg, SRCorrection const &full, TimingSearch const &search = {})
  -> TimingCalibration
{
  check_signal(s, "fine_tune_timing");
  Index const P = integer_ratio(s.rate, sc.drive_frequency, "fs/fd");
  if (w.periods < 1 || w.first_period < 0 || (w.first_period + w.periods) * P > s.size()) {
    throw ValidationError("fine_tune_timing: marker window outside the signal");
  }
  TimingCalibration cal;
  cal.range = search.range > 0.0 ? search.range : 1.0 / s.rate;
  double const step = 1.0 / search.step_rate;
  auto const   half = static_cast<Index>(std::llround(cal.range / step));
  auto const   c = full.restricted(cfg.correction);
  for (Index j = -half; j <= half; j++) {
    double const off = static_cast<double>(j) * step;
    double       mse = 0.0;
    for (Index p = w.first_period; p < w.first_period + w.periods; p++) {
      auto const   pair = extract_pair(s, sc, p, c, cfg.timing_offset + off);
      double const tau = estimate_pair(pair, cfg.n_rep, cfg.method);
      mse += deconvolved_mirror_mse(pair, tau);
    }
    cal.curve.emplace_back(off, mse / static_cast<double>(w.periods));
  }
  auto const best = std::min_element(cal.curve.begin(), cal.curve.end(), [](auto const &a, auto const &b) { return a.second < b.second; });
  std::vector<double> ties;
  for (auto it = cal.curve.begin(); it != cal.curve.end(); ++it) {
    if (std::abs(std::distance(it, best)) > 1 && it->second <= best->second * (1.0 + 1e-12)) { ties.push_back(it->first); }
  }
  if (!ties.empty()) {
    std::ostringstream os;
    os << "fine_tune_timing: multiple equal minima at offsets (s):";
    os << ' ' << best->first;
    for (double t : ties) { os << ' ' << t; }
    throw NumericalError(os.str());
  }
  cal.offset = cfg.timing_offset + best->first;
  return cal;
}

/// The signal as it would read with a global timing offset applied: y(t) = x(t + offset).
inline auto apply_timing(SampledSignal const &s, double offset) -> SampledSignal
{
  SincInterpolator const interp;
  SampledSignal          out = s;
  out.samples = interp.shift(s.samples, offset * s.rate);
  return out;
}

} // namespace taurus
