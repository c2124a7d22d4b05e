#include <taurus/preprocess.hpp>

#include <gtest/gtest.h>


using namespace taurus;

namespace {

struct Scene
{
  ScannerConfig sc;
  SampledSignal received;
  Index         period;
  SRCorrection  full;
};

auto scene(double slew, double tau, Index warm = 4, Index tail = 4) -> Scene
{
  ScannerConfig const sc;
  TrajectoryParams    p;
  p.slew = {0.0, 0.0, slew};
  p.focus_field = {0.0, 0.0, -slew * (warm + 0.5) / sc.drive_frequency};
  p.scan_time = static_cast<double>(warm + 1 + tail) / sc.drive_frequency;
  Phantom ph;
  Source  s;
  s.species.tau = tau;
  ph.sources.push_back(s);
  auto const spec = build_trajectory(TrajectoryKind::Custom, sc, p);
  return {sc, synthesize(sc, spec, ph, std::nullopt).received, warm, sr_correction_params(sc, slew)};
}

auto energy(std::span<double const> x) -> double
{
  double e = 0.0;
  for (double v : x) { e += v * v; }
  return e;
}

} // namespace

TEST(ZeroPhaseFilter, FeedthroughSpecification)
{
  double const  fd = 10e3;
  SampledSignal a{std::vector<double>(40000), 2e6}, b = a;
  for (Index i = 0; i < a.size(); i++) {
    a.samples[i] = std::sin(kTwoPi * fd * a.time(i));
    b.samples[i] = std::sin(kTwoPi * 3 * fd * b.time(i));
  }
  auto const ya = zero_phase_filter(a, FilterSpec::feedthrough(fd));
  auto const yb = zero_phase_filter(b, FilterSpec::feedthrough(fd));
  double     ma = 0.0, mb = 0.0;
  for (Index i = 10000; i < 30000; i++) {
    ma = std::max(ma, std::abs(ya.samples[i]));
    mb = std::max(mb, std::abs(yb.samples[i]));
  }
  EXPECT_LE(20.0 * std::log10(ma), -60.0);
  EXPECT_LE(std::abs(20.0 * std::log10(mb)), 0.1);
}

TEST(ZeroPhaseFilter, SymmetricPulseKeepsCentre)
{
  SampledSignal x{std::vector<double>(2001), 2e6};
  for (Index i = 0; i < x.size(); i++) { x.samples[i] = std::exp(-0.5 * std::pow((i - 1000) / 5.0, 2.0)); }
  for (auto const &f : {FilterSpec::feedthrough(10e3), FilterSpec::receive_lowpass()}) {
    auto const y = zero_phase_filter(x, f);
    for (Index k = 1; k < 500; k++) { EXPECT_NEAR(y.samples[1000 - k], y.samples[1000 + k], 1e-12); }
  }
  EXPECT_THROW(zero_phase_filter(x, {true, 2e6, 0.0, 60.0}), ValidationError);
}

TEST(Baseline, IdenticalSignalsGiveZeroDelay)
{
  auto const   sn = scene(0.0, 3e-6);
  auto const   r = align_baseline(sn.received, sn.received);
  EXPECT_NEAR(r.delay, 0.0, 1e-12);
  EXPECT_FALSE(r.ambiguous);
  EXPECT_LT(std::sqrt(energy(r.residual.samples)), 1e-9 * std::sqrt(energy(sn.received.samples)));
}

TEST(Baseline, DetectsThreeSampleDelay)
{
  auto const    sn = scene(0.0, 3e-6, 4, 4);
  SampledSignal base = sn.received;
  // Baseline lags by 3 samples.
  std::fill(base.samples.begin(), base.samples.end(), 0.0);
  for (Index i = 3; i < base.size(); i++) { base.samples[i] = sn.received.samples[i - 3]; }
  auto const r = align_baseline(sn.received, base);
  EXPECT_NEAR(r.delay * sn.received.rate, 3.0, 0.02);
  double const in = energy(sn.received.samples);
  EXPECT_LT(energy(std::span<double const>{r.residual.samples}.subspan(100, 1500)), 1e-4 * in);
}

TEST(Baseline, DetectsFractionalDelay)
{
  auto const   sn = scene(0.0, 3e-6);
  auto const   base = apply_timing(sn.received, -0.37 / sn.received.rate);
  auto const   r = align_baseline(sn.received, base);
  EXPECT_NEAR(r.delay * sn.received.rate, 0.37, 0.02);
}

TEST(Baseline, OrthogonalSignalsStayBounded)
{
  SampledSignal a{std::vector<double>(4000), 2e6}, b = a;
  for (Index i = 0; i < 4000; i++) {
    a.samples[i] = std::sin(kTwoPi * 30e3 * a.time(i));
    b.samples[i] = std::sin(kTwoPi * 70e3 * b.time(i));
  }
  auto const r = align_baseline(a, b);
  EXPECT_LE(energy(r.residual.samples), 2.0 * energy(a.samples) + 1e-9);
  // Residual is received minus the baseline shifted by the reported delay.
  auto const shifted = SincInterpolator{}.shift(b.samples, r.delay * b.rate);
  for (Index i = 0; i < 4000; i += 97) { EXPECT_NEAR(r.residual.samples[i], a.samples[i] - shifted[i], 1e-12); }
  SampledSignal other{a.samples, 1e6};
  EXPECT_THROW(align_baseline(a, other), ValidationError);
}

TEST(Timing, RecoversInjectedOffset)
{
  auto const     sn = scene(20.0, 3e-6, 4, 6);
  double const   d = 0.8 / sn.received.rate;
  auto const     late = apply_timing(sn.received, -d); // recorded 0.8 samples late
  EstimatorConfig cfg;
  TimingSearch    ts;
  ts.range = 1.5 / sn.received.rate;
  auto const cal = fine_tune_timing(late, sn.sc, {3, 4}, cfg, sn.full, ts);
  EXPECT_NEAR(cal.offset * sn.received.rate, 0.8, 0.05);

  auto const zero = fine_tune_timing(sn.received, sn.sc, {3, 4}, cfg, sn.full, ts);
  EXPECT_NEAR(zero.offset * sn.received.rate, 0.0, 0.05);

  // τ̂ after calibration is close to the offset-free value.
  double const ref = estimate_pair(extract_pair(sn.received, sn.sc, sn.period, sn.full), 6, Method::WLS);
  double const cor = estimate_pair(extract_pair(late, sn.sc, sn.period, sn.full, cal.offset), 6, Method::WLS);
  double const raw = estimate_pair(extract_pair(late, sn.sc, sn.period, sn.full), 6, Method::WLS);
  EXPECT_NEAR(cor, ref, 0.02 * ref);
  EXPECT_GT(std::abs(raw - ref), std::abs(cor - ref));
}

TEST(Timing, CurveIsLocallyConvexAtOptimum)
{
  auto const      sn = scene(0.0, 3e-6);
  EstimatorConfig cfg;
  auto const      cal = fine_tune_timing(sn.received, sn.sc, {3, 3}, cfg, sn.full);
  auto const      best = std::min_element(cal.curve.begin(), cal.curve.end(), [](auto const &a, auto const &b) { return a.second < b.second; });
  auto const      i = best - cal.curve.begin();
  ASSERT_GT(i, 2);
  ASSERT_LT(i + 3, static_cast<std::ptrdiff_t>(cal.curve.size()));
  for (std::ptrdiff_t k = i - 2; k <= i + 2; k++) {
    EXPECT_GE(cal.curve[k - 1].second + cal.curve[k + 1].second - 2.0 * cal.curve[k].second, -1e-30) << k;
  }
  EXPECT_THROW(fine_tune_timing(sn.received, sn.sc, {8, 3}, cfg, sn.full), ValidationError);
}

TEST(Timing, ApplyTimingAdvances)
{
  SampledSignal s{std::vector<double>(500), 2e6};
  for (Index i = 0; i < 500; i++) { s.samples[i] = std::sin(kTwoPi * 50e3 * s.time(i)); }
  auto const y = apply_timing(s, 2.0 / s.rate);
  for (Index i = 100; i < 400; i++) { EXPECT_NEAR(y.samples[i], s.samples[i + 2], 1e-12); }
}
