#include <taurus/io.hpp>

#include <gtest/gtest.h>

#include <random>

using namespace taurus;
namespace fs = std::filesystem;

namespace {

struct TempDir
{
  fs::path path;
  TempDir()
    : path{fs::temp_directory_path() / ("taurus_io_" + std::to_string(std::random_device{}()))}
  {
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

auto offset_of(std::string const &buf) -> std::uint64_t
{
  try {
    decode_signal(buf);
  } catch (ParseError const &e) {
    return e.offset;
  }
  ADD_FAILURE() << "no ParseError";
  return ~0ULL;
}

} // namespace

TEST(SignalFile, RoundTripIsBitExact)
{
  TempDir                 d;
  std::mt19937_64         rng{11};
  std::normal_distribution<double> g;
  SampledSignal           s{std::vector<double>(1000), 2e6, -1.25e-3};
  for (auto &v : s.samples) { v = g(rng); }
  s.samples[3] = -0.0;
  s.samples[4] = std::numeric_limits<double>::denorm_min();
  write_signal(d.path / "x.sig", s, {{"note", "hi"}});
  EXPECT_EQ(fs::file_size(d.path / "x.sig"), 24u + 8000u);
  auto const f = read_signal(d.path / "x.sig");
  EXPECT_EQ(f.signal.rate, 2e6);
  EXPECT_EQ(f.signal.t0, -1.25e-3);
  ASSERT_EQ(f.signal.samples.size(), s.samples.size());
  EXPECT_EQ(std::memcmp(f.signal.samples.data(), s.samples.data(), 8000), 0);
  EXPECT_EQ(f.meta["note"], "hi");
}

TEST(SignalFile, HeaderLayout)
{
  SampledSignal s{{1.0, 2.0}, 5e5};
  auto const    buf = encode_signal(s);
  ASSERT_EQ(buf.size(), 40u);
  EXPECT_EQ(buf.substr(0, 4), "MPIS");
  std::uint32_t ver;
  double        rate;
  std::uint64_t n;
  std::memcpy(&ver, buf.data() + 4, 4);
  std::memcpy(&rate, buf.data() + 8, 8);
  std::memcpy(&n, buf.data() + 16, 8);
  EXPECT_EQ(ver, 1u);
  EXPECT_EQ(rate, 5e5);
  EXPECT_EQ(n, 2u);
}

TEST(SignalFile, MalformedInputsReportOffsets)
{
  auto const good = encode_signal(SampledSignal{{1.0, 2.0, 3.0}, 2e6});
  EXPECT_EQ(offset_of(good.substr(0, 10)), 10u);
  auto magic = good;
  magic[0] = 'X';
  EXPECT_EQ(offset_of(magic), 0u);
  auto ver = good;
  ver[4] = 9;
  EXPECT_EQ(offset_of(ver), 4u);
  auto rate = good;
  double const neg = -1.0;
  std::memcpy(rate.data() + 8, &neg, 8);
  EXPECT_EQ(offset_of(rate), 8u);
  EXPECT_EQ(offset_of(good.substr(0, good.size() - 8)), good.size() - 8);
  EXPECT_EQ(offset_of(good + "xx"), good.size());
}

TEST(SignalFile, SidecarRateMismatchIsRejected)
{
  TempDir d;
  write_signal(d.path / "s.sig", SampledSignal{{1.0}, 2e6});
  detail::write_file(d.path / "s.sig.json", R"({"sampling_rate": 1e6})");
  EXPECT_THROW(read_signal(d.path / "s.sig"), ValidationError);
  detail::write_file(d.path / "s.sig.json", "{broken");
  EXPECT_THROW(read_signal(d.path / "s.sig"), ParseError);
}

TEST(Raster, RoundTripWithGeometry)
{
  TempDir             d;
  auto const          g = GridSpec::covering(0.05, 0.06, 5, 4);
  std::vector<double> v(20);
  for (int i = 0; i < 20; i++) { v[i] = 1e-6 * i; }
  v[7] = std::numeric_limits<double>::quiet_NaN();
  write_raster(d.path / "r.f32", g, v, {{"quantity", "tau"}, {"unit", "s"}});
  EXPECT_EQ(fs::file_size(d.path / "r.f32"), 80u);
  auto const r = read_raster(d.path / "r.f32");
  EXPECT_EQ(r.grid.nx, 5);
  EXPECT_EQ(r.grid.nz, 4);
  EXPECT_DOUBLE_EQ(r.grid.x0, g.x0);
  EXPECT_DOUBLE_EQ(r.grid.dz, g.dz);
  for (int i = 0; i < 20; i++) {
    if (i == 7) {
      EXPECT_TRUE(std::isnan(r.values[i]));
    } else {
      EXPECT_EQ(r.values[i], static_cast<float>(v[i]));
    }
  }
  EXPECT_EQ(r.meta["unit"], "s");
  EXPECT_THROW(write_raster(d.path / "bad.f32", g, std::vector<double>(3)), ValidationError);
}

TEST(Png, RoundTripAndOrientation)
{
  TempDir d;
  auto const g = GridSpec::covering(3e-3, 2e-3, 3, 2);
  Overlay    o;
  o.grid = g;
  o.pixels.assign(6, RGB{0.0, 0.0, 0.0});
  o.pixels[g.index(0, 1)] = {1.0, 0.0, 0.0}; // top-left once flipped
  o.pixels[g.index(2, 0)] = {0.0, 0.5, 1.0};
  auto const im = to_image(o);
  write_png(d.path / "o.png", im);
  auto const back = read_png(d.path / "o.png");
  EXPECT_EQ(back.width, 3);
  EXPECT_EQ(back.height, 2);
  EXPECT_EQ(back.rgb, im.rgb);
  EXPECT_EQ(back.rgb[0], 255);
  EXPECT_EQ(back.rgb[3 * (1 * 3 + 2) + 1], 128);
  EXPECT_EQ(back.rgb[3 * (1 * 3 + 2) + 2], 255);
}

TEST(Csv, HeaderCarriesHashAndUnits)
{
  TempDir   d;
  CsvWriter w{d.path / "t.csv", {{"snr", ""}, {"tau", "s"}, {"method", ""}}, "0123456789abcdef"};
  w.row({20.0, 3e-6, std::string{"wls"}});
  w.row({std::numeric_limits<double>::infinity(), std::numeric_limits<double>::quiet_NaN(), std::string{"taurus"}});
  EXPECT_THROW(w.row({1.0}), ValidationError);
  w.close();
  auto const text = detail::read_file(d.path / "t.csv");
  EXPECT_TRUE(text.starts_with("# config_hash=0123456789abcdef\nsnr,tau [s],method\n"));
  auto const t = read_csv(d.path / "t.csv");
  EXPECT_EQ(t.config_hash, "0123456789abcdef");
  EXPECT_EQ(t.column("tau"), 1);
  ASSERT_EQ(t.rows.size(), 2u);
  EXPECT_EQ(std::stod(t.rows[0][1]), 3e-6);
  EXPECT_EQ(t.rows[1][0], "inf");
  EXPECT_EQ(t.rows[1][1], "nan");
  EXPECT_THROW(t.column("ta"), ValidationError);
}

TEST(Hash, Fnv1aKnownValues)
{
  EXPECT_EQ(fnv1a_hex(""), "cbf29ce484222325");
  EXPECT_EQ(fnv1a_hex("a"), "af63dc4c8601ec8c");
}
