#include <taurus/estimator.hpp>

#include <gtest/gtest.h>

using namespace taurus;

namespace {

// coth(x) − 1/x in long double, with the series where cancellation bites.
auto langevin_ref(long double x) -> long double
{
  if (std::fabs(x) < 1e-3L) { return x / 3.0L - x * x * x / 45.0L; }
  return std::cosh(x) / std::sinh(x) - 1.0L / x;
}

auto point_at_center(ScannerConfig const &sc, double slew, double tau, Index warm = 4)
{
  double const     fd = sc.drive_frequency;
  TrajectoryParams p;
  p.slew = {0.0, 0.0, slew};
  p.focus_field = {0.0, 0.0, -slew * (static_cast<double>(warm) + 0.5) / fd};
  p.scan_time = static_cast<double>(2 * warm + 1) / fd;
  Phantom ph;
  Source  s;
  s.species.tau = tau;
  ph.sources.push_back(s);
  return std::tuple{build_trajectory(TrajectoryKind::Custom, sc, p), ph, warm};
}

} // namespace

TEST(Langevin, Limits)
{
  EXPECT_EQ(langevin(0.0), 0.0);
  EXPECT_NEAR(langevin(1e8), 1.0, 1e-7);
  EXPECT_NEAR(langevin(-1e8), -1.0, 1e-7);
  EXPECT_NEAR(langevin(1.0), 0.313035285499331, 1e-15);
}

TEST(Langevin, MatchesLongDoubleReference)
{
  for (double x = -3.0; x <= 3.0; x += 0.0137) {
    double const ref = static_cast<double>(langevin_ref(x));
    EXPECT_NEAR(langevin(x), ref, 2e-16 + 1e-14 * std::abs(ref)) << x;
  }
  // Both branches agree across the switch point.
  EXPECT_NEAR(langevin(0.4999999999), langevin(0.5000000001), 1e-10);
}

TEST(Langevin, DerivativeMatchesFiniteDifference)
{
  for (double x : {0.0, 0.01, 0.3, 0.49, 0.51, 1.0, 2.5, -1.7}) {
    long double const h = 1e-5L;
    double const      fd = static_cast<double>((langevin_ref(x + h) - langevin_ref(x - h)) / (2.0L * h));
    EXPECT_NEAR(langevin_derivative(x), fd, 1e-9) << x;
  }
  EXPECT_NEAR(langevin_derivative(0.0), 1.0 / 3.0, 1e-15);
}

TEST(Langevin, OddFunction)
{
  for (double x : {0.1, 0.7, 4.0}) { EXPECT_EQ(langevin(-x), -langevin(x)); }
}

TEST(MagnetizationRate, MatchesFiniteDifferenceOfMagnetization)
{
  Vec3 const   g{-4.8, 2.4, 2.4};
  double const k = MNPSpecies{}.field_scale();
  Vec3 const   r{0.0005, 0.0, 0.001};
  Vec3 const   v{0.2, 0.0, -150.0};
  auto         mz = [&](double t) {
    Vec3 const   p{v.x * t, 0.0, 0.002 + v.z * t};
    Vec3 const   B{g.x * (r.x - p.x), g.y * (r.y - p.y), g.z * (r.z - p.z)};
    double const b = B.norm();
    return langevin(k * b) * B.z / b;
  };
  double const h = 1e-11;
  double const num = (mz(h) - mz(-h)) / (2 * h);
  double const ana = magnetization_rate(g, k, r, {0.0, 0.0, 0.002}, v);
  EXPECT_NEAR(ana, num, 1e-6 * std::abs(num));
}

TEST(RelaxationKernel, DeltaForZeroTau)
{
  auto const k = relaxation_kernel(0.0, 100e6, 8);
  EXPECT_EQ(k.samples[0], 1.0);
  for (Index i = 1; i < 8; i++) { EXPECT_EQ(k.samples[i], 0.0); }
}

TEST(RelaxationKernel, UnitSumAndRatio)
{
  for (double tau : {0.5e-6, 3e-6, 10e-6}) {
    auto const k = relaxation_kernel(tau, 100e6, 20000);
    double     sum = 0.0;
    for (double v : k.samples) { sum += v; }
    EXPECT_NEAR(sum, 1.0, 1e-12);
  }
  auto const k = relaxation_kernel(3e-6, 100e6, 1000);
  for (Index i : {0, 10, 500}) { EXPECT_NEAR(k.samples[i + 1] / k.samples[i], std::exp(-1.0 / 300.0), 1e-14); }
}

TEST(Relaxation, IdentityAndImpulse)
{
  SampledSignal s{{0.0, 1.0, -2.0, 0.5, 3.0}, 100e6};
  auto const    same = apply_relaxation(s, 0.0);
  EXPECT_EQ(same.samples, s.samples);

  SampledSignal impulse{std::vector<double>(4000, 0.0), 100e6};
  impulse.samples[0] = 1.0;
  auto const y = apply_relaxation(impulse, 3e-6);
  auto const k = relaxation_kernel(3e-6, 100e6, 4000);
  for (Index i = 0; i < 4000; i++) { EXPECT_NEAR(y.samples[i], k.samples[i], 1e-15); }
}

TEST(Relaxation, MatchesDirectConvolution)
{
  SampledSignal s{std::vector<double>(600), 100e6};
  for (Index i = 0; i < 600; i++) { s.samples[i] = std::sin(0.05 * i) + 0.3 * std::cos(0.011 * i * i); }
  auto const y = apply_relaxation(s, 0.7e-6);
  auto const k = relaxation_kernel(0.7e-6, 100e6, 600);
  for (Index n : {0, 17, 300, 599}) {
    double acc = 0.0;
    for (Index m = 0; m <= n; m++) { acc += k.samples[m] * s.samples[n - m]; }
    EXPECT_NEAR(y.samples[n], acc, 1e-12);
  }
}

TEST(Relaxation, DeconvolutionRoundTrip)
{
  ScannerConfig const sc;
  auto const [spec, ph, warm] = point_at_center(sc, 0.0, 0.0);
  auto const x = simulate_adiabatic(sc, spec, ph);
  auto const y = apply_relaxation(x, 3e-6);
  auto const back = deconvolve(y, 3e-6, DeconvolutionModel::Sampled);
  double     err = 0.0;
  for (Index i = 0; i < x.size(); i++) { err = std::max(err, std::abs(back.samples[i] - x.samples[i])); }
  EXPECT_LT(err, 1e-6 * x.peak());
}

TEST(Synthesis, AdiabaticMirrorSymmetryAtZeroSlew)
{
  ScannerConfig const sc;
  auto const [spec, ph, warm] = point_at_center(sc, 0.0, 0.0);
  auto const   s = synthesize(sc, spec, ph, std::nullopt).received;
  auto const   pair = extract_pair(s, sc, warm);
  double const peak = s.peak();
  for (Index n = 0; n < pair.pos.size(); n++) {
    EXPECT_LT(std::abs(pair.pos.samples[n] + pair.neg.samples[(pair.pos.size() - n) % pair.pos.size()]), 1e-9 * peak);
  }
  EXPECT_LT(mirror_mse(pair), 1e-18 * peak * peak);
}

TEST(Synthesis, LinearInConcentration)
{
  ScannerConfig const sc;
  auto [spec, ph, warm] = point_at_center(sc, 5.0, 2e-6, 1);
  auto const a = synthesize_clean(sc, spec, ph);
  ph.sources[0].concentration = 2.0;
  auto const b = synthesize_clean(sc, spec, ph);
  for (Index i = 0; i < a.size(); i++) { EXPECT_NEAR(b.samples[i], 2.0 * a.samples[i], 1e-12 * a.peak()); }
  ph.sources[0].concentration = 0.0;
  auto const z = synthesize_clean(sc, spec, ph);
  for (double v : z.samples) { EXPECT_EQ(v, 0.0); }
}

TEST(Synthesis, NoiseSeedDeterminism)
{
  ScannerConfig const sc;
  auto const [spec, ph, warm] = point_at_center(sc, 20.0, 3e-6, 1);
  auto const a = synthesize(sc, spec, ph, NoiseSpec{5.0, 42});
  auto const b = synthesize(sc, spec, ph, NoiseSpec{5.0, 42});
  auto const c = synthesize(sc, spec, ph, NoiseSpec{5.0, 43});
  EXPECT_EQ(a.received.samples, b.received.samples);
  EXPECT_NE(a.received.samples, c.received.samples);
  auto const clean = synthesize(sc, spec, ph, std::nullopt);
  EXPECT_EQ(clean.received.samples, feedthrough_filter(synthesize_clean(sc, spec, ph), sc.drive_frequency).samples);
}

TEST(Synthesis, NoiseStandardDeviation)
{
  SampledSignal s{std::vector<double>(200000, 0.0), 2e6};
  auto const    n = add_noise(s, {4.0, 7}, 2.0);
  double        ss = 0.0;
  for (double v : n.samples) { ss += v * v; }
  EXPECT_NEAR(std::sqrt(ss / 200000.0), 0.5, 0.005);
}

TEST(Synthesis, NegToPosPeakRatioTracksCorrectionAmplitude)
{
  ScannerConfig const sc;
  auto const [spec, ph, warm] = point_at_center(sc, 20.0, 3e-6);
  auto const s = synthesize(sc, spec, ph, std::nullopt).received;
  auto const pair = extract_pair(s, sc, warm);
  double     mn = 0.0, mp = 0.0;
  for (double v : pair.neg.samples) { mn = std::max(mn, std::abs(v)); }
  for (double v : pair.pos.samples) { mp = std::max(mp, std::abs(v)); }
  // The falling-slew half runs faster, so its peak is higher by about α.
  EXPECT_NEAR(mp / mn, sr_correction_params(sc, 20.0).alpha, 0.015);
}

TEST(Synthesis, StreamingMatchesDirectDecimation)
{
  ScannerConfig const sc;
  auto const [spec, ph, warm] = point_at_center(sc, 10.0, 1e-6, 1);
  auto       hi = apply_relaxation(simulate_adiabatic(sc, spec, ph), 1e-6);
  auto const direct = decimate(hi.samples, sc.oversample_factor(), antialias_taps(sc));
  auto const streamed = synthesize_clean(sc, spec, ph);
  ASSERT_EQ(streamed.size(), static_cast<Index>(direct.size()));
  for (Index i = 0; i < streamed.size(); i++) { EXPECT_NEAR(streamed.samples[i], direct[i], 1e-12 * streamed.peak()); }
}

TEST(Synthesis, FeedthroughRemovesDriveTone)
{
  SampledSignal s{std::vector<double>(20000), 2e6};
  for (Index i = 0; i < s.size(); i++) { s.samples[i] = std::sin(kTwoPi * 10e3 * s.time(i)); }
  auto const y = feedthrough_filter(s, 10e3);
  double     m = 0.0;
  for (Index i = 2000; i < 18000; i++) { m = std::max(m, std::abs(y.samples[i])); }
  EXPECT_LT(m, 1e-3);
}

TEST(Phantom, RenderingConservesConcentration)
{
  Phantom ph;
  Source  s;
  s.width_x = 2e-3;
  s.width_z = 2e-3;
  s.concentration = 3.0;
  ph.sources.push_back(s);
  auto const g = render(ph);
  ASSERT_EQ(g.size(), 1u);
  EXPECT_EQ(g[0].points.size(), 25u);
  double w = 0.0;
  for (auto const &p : g[0].points) { w += p.weight; }
  EXPECT_NEAR(w, 3.0, 1e-12);
  ph.sources[0].width_x = -1.0;
  EXPECT_THROW(render(ph), ValidationError);
  EXPECT_THROW(render(Phantom{}), ValidationError);
}
