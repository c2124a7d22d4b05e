#include <taurus/harness.hpp>

#include <gtest/gtest.h>

#include <random>

using namespace taurus;
namespace fs = std::filesystem;

namespace {

struct TempDir
{
  fs::path path;
  TempDir()
    : path{fs::temp_directory_path() / ("taurus_harness_" + std::to_string(std::random_device{}()))}
  {
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

auto small_noise_config(Index threads) -> ExperimentConfig
{
  auto c = parse_config(R"(
[noise]
snr = [5.0, 20.0]
slew_z = [0.0, 20.0]
reps_low = 6
reps_high = 4
seed = 99
)");
  c.threads = threads;
  return c;
}

} // namespace

TEST(Config, DefaultsFromEmptyText)
{
  auto const c = parse_config("");
  EXPECT_EQ(c.kind, TrajectoryKind::Custom);
  EXPECT_EQ(c.sweep.slew_z.size(), 11u);
  EXPECT_DOUBLE_EQ(c.sweep.slew_z.back(), 20.0);
  EXPECT_EQ(c.noise.reps(2.0), 500);
  EXPECT_EQ(c.noise.reps(10.0), 200);
  EXPECT_EQ(c.estimator.n_rep, 6);
  EXPECT_EQ(c.estimator.method, Method::WLS);
}

TEST(Config, ReadsValuesAndRejectsUnknowns)
{
  auto const c = parse_config(R"(
[scanner]
drive_frequency = 20e3
[trajectory]
kind = "2DTT"
slew = [5.0, 0.0, 1.0]
fov_x = 0.02
[estimator]
method = "taurus"
n_rep = 4
correction = "shift"
[run]
threads = 3
)");
  EXPECT_EQ(c.scanner.drive_frequency, 20e3);
  EXPECT_EQ(c.kind, TrajectoryKind::TriangleRaster2D);
  EXPECT_EQ(c.trajectory.slew.x, 5.0);
  EXPECT_EQ(c.estimator.method, Method::TAURUS);
  EXPECT_EQ(c.estimator.correction, CorrectionMode::ShiftOnly);
  EXPECT_EQ(c.threads, 3);

  EXPECT_THROW(parse_config("[scaner]\nx = 1\n"), ValidationError);
  EXPECT_THROW(parse_config("[scanner]\ngradiant = [1.0, 2.0, 3.0]\n"), ValidationError);
  EXPECT_THROW(parse_config("[estimator]\nn_rep = 2.5\n"), ValidationError);
  EXPECT_THROW(parse_config("[trajectory]\nslew = [1.0, 2.0]\n"), ValidationError);
  EXPECT_THROW(parse_config("[estimator]\nmethod = \"ls\"\n"), ValidationError);
  EXPECT_THROW(parse_config("[noise]\nsnr = [0.0]\n"), ValidationError);
}

TEST(Config, SyntaxErrorReportsLine)
{
  try {
    parse_config("[scanner]\ndrive_frequency = 10e3\n\n[noise\n");
    FAIL() << "expected ParseError";
  } catch (ParseError const &e) {
    EXPECT_EQ(e.offset, 4u);
  }
}

TEST(Config, CanonicalFormRoundTrips)
{
  auto const a = parse_config("[noise]\nseed = 7\nsnr = [2.0, 20.0]\n[run]\nthreads = 5\n");
  auto const b = parse_config(canonical_toml(a));
  EXPECT_EQ(canonical_toml(a), canonical_toml(b));
  EXPECT_EQ(config_hash(a), config_hash(b));
  EXPECT_EQ(config_hash(a).size(), 16u);
  // Thread count does not change results, so it stays out of the hash.
  EXPECT_EQ(config_hash(a), config_hash(parse_config("[noise]\nseed = 7\nsnr = [2.0, 20.0]\n")));
  EXPECT_NE(config_hash(a), config_hash(parse_config("[noise]\nseed = 8\nsnr = [2.0, 20.0]\n")));
}

TEST(Config, PaperScale)
{
  auto const c = parse_config("[run]\npaper_scale = true\n");
  EXPECT_EQ(c.noise.reps(2.0), 10000);
  EXPECT_EQ(c.noise.reps(20.0), 1000);
  EXPECT_EQ(c.phantom_run.pwt_lines, 100);
  EXPECT_EQ(c.phantom_run.pwt_dwell, 10e-3);
  EXPECT_EQ(c.phantom_run.tt_slew_z, 0.01);
  EXPECT_EQ(c.phantom_run.image_nx, 500);
}

TEST(Phantom, ParsesSources)
{
  auto const ph = parse_phantom(R"(
render_spacing = 0.5e-3
[[source]]
name = "a"
position = [0.01, 0.0, -0.005]
size = [2e-3, 3e-3]
tau = 2.5e-6
concentration = 2.0
[[source]]
name = "b"
tau = 4e-6
)");
  ASSERT_EQ(ph.sources.size(), 2u);
  EXPECT_EQ(ph.render_spacing, 0.5e-3);
  EXPECT_EQ(ph.sources[0].position.z, -0.005);
  EXPECT_EQ(ph.sources[0].width_z, 3e-3);
  EXPECT_EQ(ph.sources[0].concentration, 2.0);
  EXPECT_EQ(ph.sources[1].species.tau, 4e-6);
  EXPECT_THROW(parse_phantom("render_spacing = 1e-3\n"), ValidationError);
  EXPECT_THROW(parse_phantom("[[source]]\ntau = 1e-6\ncolour = 3\n"), ValidationError);
  EXPECT_THROW(parse_phantom("[[source]]\nsize = [1e-3]\n"), ValidationError);
  EXPECT_THROW(parse_phantom("[[source]\n"), ParseError);
}

TEST(ColorPhantom, Layout)
{
  auto const ph = color_phantom();
  ASSERT_EQ(ph.sources.size(), 6u);
  EXPECT_EQ(ph.sources[0].species.tau, 2.0e-6);
  EXPECT_EQ(ph.sources[5].species.tau, 4.0e-6);
  EXPECT_NEAR(ph.sources[2].position.x - ph.sources[0].position.x, 0.03, 1e-15);
  EXPECT_NEAR(ph.sources[3].position.z - ph.sources[0].position.z, 0.03, 1e-15);
}

TEST(Seeds, DeterministicAndDistinct)
{
  EXPECT_EQ(derive_seed(1, 2, 3), derive_seed(1, 2, 3));
  std::set<std::uint64_t> seen;
  for (std::uint64_t c = 0; c < 20; c++) {
    for (std::uint64_t r = 0; r < 50; r++) { seen.insert(derive_seed(7, c, r)); }
  }
  EXPECT_EQ(seen.size(), 1000u);
  EXPECT_NE(derive_seed(1, 2, 3), derive_seed(1, 3, 2));
}

TEST(ParallelFor, SameResultsForAnyThreadCount)
{
  std::vector<double> a(1000), b(1000);
  parallel_for(1000, 1, [&](Index i) { a[i] = std::sin(static_cast<double>(derive_seed(3, 0, i) % 1000)); });
  parallel_for(1000, 4, [&](Index i) { b[i] = std::sin(static_cast<double>(derive_seed(3, 0, i) % 1000)); });
  EXPECT_EQ(a, b);
  std::atomic<Index> calls{0};
  EXPECT_THROW(parallel_for(100, 3,
                            [&](Index i) {
                              calls++;
                              if (i == 17) { throw DomainError("boom"); }
                            }),
               DomainError);
  EXPECT_LE(calls.load(), 100);
  parallel_for(0, 4, [](Index) { FAIL(); });
}

TEST(Sweeps, NoiseMonteCarloIsSeedDeterministic)
{
  TempDir d;
  auto    one = run_noise_mc(small_noise_config(1));
  auto    three = run_noise_mc(small_noise_config(3));
  ASSERT_EQ(one.cells.size(), three.cells.size());
  for (size_t i = 0; i < one.cells.size(); i++) {
    EXPECT_EQ(one.cells[i].tau_mean, three.cells[i].tau_mean) << i;
    EXPECT_EQ(one.cells[i].mean_error, three.cells[i].mean_error) << i;
  }
  one.wall_time = three.wall_time = 0.0;
  write_sweep_csv(d.path / "a.csv", one, "h");
  write_sweep_csv(d.path / "b.csv", three, "h");
  EXPECT_EQ(detail::read_file(d.path / "a.csv"), detail::read_file(d.path / "b.csv"));

  auto const t = read_csv(d.path / "a.csv");
  EXPECT_EQ(t.config_hash, "h");
  EXPECT_NO_THROW(t.column("tau_mean"));
  EXPECT_EQ(t.header[t.column("tau_mean")], "tau_mean [us]");

  auto const &c = one.find([](SweepCell const &x) { return x.snr == 5.0 && x.slew_z == 20.0 && x.method == Method::WLS; });
  EXPECT_EQ(c.reps, 6);
  auto const &h = one.find([](SweepCell const &x) { return x.snr == 20.0 && x.method == Method::WLS; });
  EXPECT_EQ(h.reps, 4);
}

TEST(Sweeps, SlewRateSweepShowsCorrectionEffect)
{
  auto c = parse_config("[sweep]\nslew_z = [0.0, 20.0]\nslew_x = [0.0]\n");
  auto const r = run_sr_sweep(c);
  auto cell = [&](double rz, Method m, CorrectionMode k) -> SweepCell const & {
    return r.find([&](SweepCell const &x) { return x.slew_z == rz && x.method == m && x.correction == k; });
  };
  EXPECT_LT(cell(20.0, Method::WLS, CorrectionMode::Full).mean_error, 2.0);
  EXPECT_GT(cell(20.0, Method::WLS, CorrectionMode::None).mean_error, 10.0);
  EXPECT_LT(cell(0.0, Method::WLS, CorrectionMode::None).mean_error, 2.0);
  EXPECT_EQ(cell(0.0, Method::TAURUS, CorrectionMode::Full).mean_error, cell(0.0, Method::TAURUS, CorrectionMode::None).mean_error);
}

TEST(SignalFiles, FileRoundTripMatchesInMemoryEstimate)
{
  TempDir    d;
  auto       cfg = parse_config("[trajectory]\nslew = [0.0, 0.0, 20.0]\n");
  auto const syn = simulate_to_file(cfg, d.path / "s.sig");
  auto const est = estimate_from_file(d.path / "s.sig", cfg);
  auto const [spec, params] = configured_trajectory(cfg);
  auto const ref = estimate_periods(syn.received, cfg.scanner, spec, cfg.estimator);
  ASSERT_EQ(est.periods.size(), ref.size());
  ASSERT_EQ(static_cast<Index>(ref.size()), cfg.point_source.warmup_periods + 1 + cfg.point_source.tail_periods);
  for (size_t i = 0; i < ref.size(); i++) { EXPECT_EQ(est.periods[i].tau, ref[i].tau); }
  auto const &mid = est.periods[static_cast<size_t>(cfg.point_source.warmup_periods)];
  EXPECT_NEAR(mid.tau, 3e-6, 0.02 * 3e-6);
  EXPECT_NEAR(mid.center.z, 0.0, 1e-9);
}

TEST(SignalFiles, TrailingHalfPeriodIsIgnored)
{
  TempDir    d;
  auto       cfg = parse_config("[trajectory]\nslew = [0.0, 0.0, 20.0]\n");
  auto const syn = simulate_to_file(cfg, d.path / "s.sig");
  auto       f = read_signal(d.path / "s.sig");
  Index const P = cfg.scanner.samples_per_period();
  auto       s = f.signal;
  s.samples.resize(static_cast<size_t>(7 * P + P / 2));
  write_signal(d.path / "cut.sig", s, f.meta);
  auto const est = estimate_from_file(d.path / "cut.sig", cfg);
  EXPECT_EQ(est.periods.size(), 7u);
  for (size_t i = 0; i < 7; i++) { EXPECT_EQ(est.periods[i].period, static_cast<Index>(i)); }
}

TEST(SignalFiles, MarkerWindowCalibratesTiming)
{
  TempDir    d;
  auto       cfg = parse_config("[trajectory]\nslew = [0.0, 0.0, 20.0]\n[point_source]\ntail_periods = 6\n");
  auto const syn = simulate_to_file(cfg, d.path / "clean.sig");
  auto       f = read_signal(d.path / "clean.sig");
  double const rate = f.signal.rate;
  auto       late = apply_timing(f.signal, -0.8 / rate);
  auto       meta = f.meta;
  write_signal(d.path / "late.sig", late, meta);
  meta["marker"] = {{"first_period", 3}, {"periods", 4}, {"range", 1.5 / rate}};
  write_signal(d.path / "marked.sig", late, meta);

  auto const truth = estimate_from_file(d.path / "clean.sig", cfg).periods[4].tau;
  auto const raw = estimate_from_file(d.path / "late.sig", cfg).periods[4].tau;
  auto const cal = estimate_from_file(d.path / "marked.sig", cfg);
  ASSERT_TRUE(cal.timing.has_value());
  EXPECT_NEAR(cal.timing->offset * rate, 0.8, 0.05);
  EXPECT_NEAR(cal.periods[4].tau, truth, 0.02 * truth);
  EXPECT_GT(std::abs(raw - truth), std::abs(cal.periods[4].tau - truth));
}

TEST(SignalFiles, BaselineIsSubtracted)
{
  TempDir d;
  auto    cfg = parse_config("[trajectory]\nslew = [0.0, 0.0, 20.0]\n");
  simulate_to_file(cfg, d.path / "s.sig");
  auto f = read_signal(d.path / "s.sig");
  // Broadband background; the baseline recording lags it by two samples.
  std::mt19937_64                  rng{5};
  std::normal_distribution<double> g{0.0, 0.3 * f.signal.peak()};
  std::vector<double>              n(static_cast<size_t>(f.signal.size() + 2));
  for (auto &v : n) { v = g(rng); }
  SampledSignal bg = f.signal, sum = f.signal;
  for (Index i = 0; i < sum.size(); i++) {
    sum.samples[i] += n[i + 2];
    bg.samples[i] = n[i];
  }
  write_signal(d.path / "bg.sig", bg);
  auto meta = f.meta;
  meta["baseline"] = "bg.sig";
  write_signal(d.path / "sum.sig", sum, meta);
  auto const est = estimate_from_file(d.path / "sum.sig", cfg);
  ASSERT_TRUE(est.baseline_delay.has_value());
  EXPECT_NEAR(*est.baseline_delay * f.signal.rate, 2.0, 0.05);
  EXPECT_NEAR(est.periods[4].tau, 3e-6, 0.03 * 3e-6);
}

TEST(HueOrder, RequiresStrictlyFallingHue)
{
  std::vector<PatchStats> p(3);
  p[0].tau_true = 2e-6;
  p[1].tau_true = 3e-6;
  p[2].tau_true = 4e-6;
  p[0].hue = 240.0;
  p[1].hue = 120.0;
  p[2].hue = 0.0;
  EXPECT_TRUE(hue_order_matches(p));
  std::swap(p[0], p[2]);
  EXPECT_TRUE(hue_order_matches(p));
  p[1].hue = 241.0;
  EXPECT_FALSE(hue_order_matches(p));
  p[1].hue = std::numeric_limits<double>::quiet_NaN();
  EXPECT_FALSE(hue_order_matches(p));
}

TEST(PhantomRun, UniformTauHasNoPositionBias)
{
  auto cfg = parse_config(R"(
[phantom_run]
trajectories = ["2DTT"]
fov_x = 0.02
fov_z = 0.02
image_nx = 100
image_nz = 100
tt_slew_x = 10.0
tt_slew_z = 0.5
)");
  Phantom ph;
  ph.render_spacing = 0.4e-3;
  for (double x : {-5e-3, 5e-3}) {
    for (double z : {-5e-3, 5e-3}) {
      Source s;
      s.name = "p";
      s.position = {x, 0.0, z};
      s.width_x = s.width_z = 2e-3;
      s.species.tau = 3e-6;
      ph.sources.push_back(s);
    }
  }
  auto const run = run_phantom_trajectory(cfg, ph, TrajectoryKind::TriangleRaster2D);
  ASSERT_EQ(run.patches.size(), 4u);
  double lo = 1.0, hi = 0.0;
  for (auto const &p : run.patches) {
    ASSERT_GT(p.pixels, 0);
    lo = std::min(lo, p.tau_mean);
    hi = std::max(hi, p.tau_mean);
    EXPECT_LT(p.error_mean, 5.0);
  }
  EXPECT_LT((hi - lo) / 3e-6, 0.01);
}
