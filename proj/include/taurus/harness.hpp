#pragma once

#include "io.hpp"
#include "preprocess.hpp"

#include <toml.hpp>

#include <atomic>
#include <chrono>
#include <exception>
#include <functional>
#include <set>
#include <thread>

namespace taurus {

// ---------------------------------------------------------------------------------------------
// Configuration

struct PointSourceConfig
{
  double tau = 3e-6;
  double diameter = 25e-9;
  Index  warmup_periods = 4; // before the analysed period
  Index  tail_periods = 4;
};

struct NoiseConfig
{
  std::vector<double> snr{2.0, 5.0, 10.0, 20.0};
  std::vector<double> slew_z{0.0, 5.0, 10.0, 15.0, 20.0};
  Index               reps_low = 500;  // SNR <= 5
  Index               reps_high = 200; // SNR > 5
  Index               paper_reps_low = 10000;
  Index               paper_reps_high = 1000;
  std::uint64_t       seed = 1;

  auto reps(double snr_value) const -> Index { return snr_value <= 5.0 ? reps_low : reps_high; }
};

inline auto linspace(double a, double b, Index n) -> std::vector<double>
{
  std::vector<double> v(static_cast<size_t>(n));
  for (Index i = 0; i < n; i++) { v[i] = n > 1 ? a + (b - a) * static_cast<double>(i) / static_cast<double>(n - 1) : a; }
  return v;
}

struct SweepConfig
{
  std::vector<double> slew_z = linspace(0.0, 20.0, 11);
  std::vector<double> slew_x = linspace(0.0, 20.0, 11);
};

struct NRepConfig
{
  std::vector<Index>  values{0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
  std::vector<double> snr{0.0, 10.0, 2.0}; // 0 = noise-free
  Index               reps = 300;
  double              slew_z = 20.0;
};

struct PhantomRunConfig
{
  std::vector<TrajectoryKind> trajectories{TrajectoryKind::PWT, TrajectoryKind::LLT, TrajectoryKind::TriangleRaster2D};
  double fov_x = 0.05, fov_z = 0.06;
  Index  image_nx = 250, image_nz = 300;
  Index  pwt_lines = 50, pwt_points_z = 50;
  double pwt_dwell = 1e-3;
  Index  pwt_guard_periods = 2; // skipped at both ends of each PWT step
  Index  llt_lines = 50;
  double llt_slew_z = 2.0;
  double tt_slew_x = 10.0, tt_slew_z = 0.1;
  double oversample_rate = 20e6;
  double cull_field = 0.05;
  double snr = 0.0; // 0 = noise-free
  double tau_min = 2e-6, tau_max = 4e-6;
  double mask_threshold = 0.10;
};

struct SimulateConfig
{
  double snr = 0.0; // 0 = noise-free
};

struct ExperimentConfig
{
  ScannerConfig         scanner;
  TrajectoryKind        kind = TrajectoryKind::Custom;
  TrajectoryParams      trajectory{.slew = {0.0, 0.0, 20.0}};
  std::string           phantom_path; // empty: built-in phantom for `phantom`, point source for `simulate`
  double                render_spacing = 0.4e-3;
  EstimatorConfig       estimator;
  PointSourceConfig     point_source;
  NoiseConfig           noise;
  SweepConfig           sweep;
  NRepConfig            nrep;
  PhantomRunConfig      phantom_run;
  SimulateConfig        simulate;
  std::string           input;              // signal file for `estimate` / `map`
  std::string           output_dir = "out";
  Index                 threads = 1;
  bool                  paper_scale = false;
  std::filesystem::path base_dir = ".";      // relative paths in the config resolve against this

  auto resolve(std::string const &p) const -> std::filesystem::path
  {
    std::filesystem::path const q{p};
    return q.is_absolute() ? q : base_dir / q;
  }

  void validate() const
  {
    scanner.validate();
    if (noise.reps_low < 1 || noise.reps_high < 1 || noise.paper_reps_low < 1 || noise.paper_reps_high < 1 || nrep.reps < 1) {
      throw ValidationError("config: repetition counts must be >= 1");
    }
    if (estimator.n_rep < 0) { throw ValidationError("config: n_rep must be >= 0"); }
    if (threads < 0) { throw ValidationError("config: threads must be >= 0"); }
    if (point_source.warmup_periods < 1 || point_source.tail_periods < 1) {
      throw ValidationError("config: point source needs at least one warm-up and one tail period");
    }
    for (double s : noise.snr) {
      if (!(s > 0.0)) { throw ValidationError("config: noise SNR values must be positive"); }
    }
    for (double s : nrep.snr) {
      if (s < 0.0) { throw ValidationError("config: nrep SNR values must be >= 0"); }
    }
    for (Index n : nrep.values) {
      if (n < 0) { throw ValidationError("config: N_rep values must be >= 0"); }
    }
  }
};

/// Switches repetition counts and phantom trajectories to the published (slow) settings.
inline void apply_paper_scale(ExperimentConfig &c)
{
  c.paper_scale = true;
  c.noise.reps_low = c.noise.paper_reps_low;
  c.noise.reps_high = c.noise.paper_reps_high;
  auto &p = c.phantom_run;
  p.image_nx = 500;
  p.image_nz = 600;
  p.pwt_lines = 100;
  p.pwt_points_z = 100;
  p.pwt_dwell = 10e-3;
  p.llt_lines = 100;
  p.llt_slew_z = 2.0;
  p.tt_slew_x = 1.0;
  p.tt_slew_z = 0.01;
  p.oversample_rate = c.scanner.oversample_rate;
  p.cull_field = 0.1;
}

namespace detail {

// Reads keys of one TOML table and rejects the ones nobody asked for.
class TomlBlock
{
public:
  TomlBlock(toml::table const *t, std::string name)
    : t_{t}
    , name_{std::move(name)}
  {
  }

  auto present() const -> bool { return t_ != nullptr; }

  void mark(std::string_view key) { used_.insert(std::string(key)); }

  void get(std::string_view key, double &out) { number(key, [&](double v) { out = v; }); }

  void get(std::string_view key, Index &out)
  {
    if (auto const *n = node(key)) {
      auto v = n->value<std::int64_t>();
      if (!v || !n->is_integer()) { fail(key, "an integer"); }
      out = static_cast<Index>(*v);
    }
  }

  void get(std::string_view key, std::uint64_t &out)
  {
    Index v = static_cast<Index>(out);
    get(key, v);
    if (v < 0) { fail(key, "a non-negative integer"); }
    out = static_cast<std::uint64_t>(v);
  }

  void get(std::string_view key, std::string &out)
  {
    if (auto const *n = node(key)) {
      auto v = n->value<std::string>();
      if (!v || !n->is_string()) { fail(key, "a string"); }
      out = *v;
    }
  }

  void get(std::string_view key, bool &out)
  {
    if (auto const *n = node(key)) {
      if (!n->is_boolean()) { fail(key, "a boolean"); }
      out = *n->value<bool>();
    }
  }

  void get(std::string_view key, std::vector<double> &out)
  {
    if (auto const *n = node(key)) {
      auto const *a = n->as_array();
      if (!a) { fail(key, "an array of numbers"); }
      out.clear();
      for (auto const &e : *a) {
        if (!e.is_number()) { fail(key, "an array of numbers"); }
        out.push_back(*e.value<double>());
      }
    }
  }

  void get(std::string_view key, std::vector<Index> &out)
  {
    if (auto const *n = node(key)) {
      auto const *a = n->as_array();
      if (!a) { fail(key, "an array of integers"); }
      out.clear();
      for (auto const &e : *a) {
        if (!e.is_integer()) { fail(key, "an array of integers"); }
        out.push_back(static_cast<Index>(*e.value<std::int64_t>()));
      }
    }
  }

  void get(std::string_view key, Vec3 &out)
  {
    std::vector<double> v;
    get(key, v);
    if (node(key)) {
      if (v.size() != 3) { fail(key, "an array of 3 numbers"); }
      out = {v[0], v[1], v[2]};
    }
  }

  void get(std::string_view key, std::vector<std::string> &out)
  {
    if (auto const *n = node(key)) {
      auto const *a = n->as_array();
      if (!a) { fail(key, "an array of strings"); }
      out.clear();
      for (auto const &e : *a) {
        if (!e.is_string()) { fail(key, "an array of strings"); }
        out.push_back(*e.value<std::string>());
      }
    }
  }

  void finish() const
  {
    if (!t_) { return; }
    for (auto const &[k, v] : *t_) {
      if (!used_.contains(std::string(k.str()))) {
        throw ValidationError("config: unknown key '" + std::string(k.str()) + "' in [" + name_ + "]");
      }
    }
  }

private:
  auto node(std::string_view key) -> toml::node const *
  {
    used_.insert(std::string(key));
    return t_ ? t_->get(key) : nullptr;
  }

  template <typename F>
  void number(std::string_view key, F &&f)
  {
    if (auto const *n = node(key)) {
      if (!n->is_number()) { fail(key, "a number"); }
      f(*n->value<double>());
    }
  }

  [[noreturn]] void fail(std::string_view key, std::string_view what) const
  {
    throw ValidationError("config: [" + name_ + "] " + std::string(key) + " must be " + std::string(what));
  }

  toml::table const    *t_;
  std::string           name_;
  std::set<std::string> used_;
};

inline auto parse_scan_order(std::string_view s) -> ScanOrder
{
  if (s == "row-major") { return ScanOrder::RowMajor; }
  if (s == "serpentine") { return ScanOrder::Serpentine; }
  throw ValidationError("unknown scan order '" + std::string(s) + "'");
}

inline auto to_string(ScanOrder o) -> std::string_view { return o == ScanOrder::RowMajor ? "row-major" : "serpentine"; }

inline auto parse_toml(std::string_view text, std::string const &what) -> toml::table
{
  try {
    return toml::parse(text);
  } catch (toml::parse_error const &e) {
    throw ParseError(what + ": " + std::string(e.description()) + " (line " + std::to_string(e.source().begin.line) + ")",
                     e.source().begin.line);
  }
}

} // namespace detail

inline auto parse_config(std::string_view text, std::filesystem::path const &base_dir = ".") -> ExperimentConfig
{
  auto const       root = detail::parse_toml(text, "config");
  ExperimentConfig c;
  c.base_dir = base_dir;
  static std::set<std::string> const blocks{"scanner", "trajectory", "phantom", "estimator", "point_source", "noise", "sweep",
                                             "nrep", "phantom_run", "simulate", "input", "output", "run"};
  for (auto const &[k, v] : root) {
    if (!blocks.contains(std::string(k.str()))) { throw ValidationError("config: unknown block [" + std::string(k.str()) + "]"); }
    if (!v.is_table()) { throw ValidationError("config: [" + std::string(k.str()) + "] must be a table"); }
  }
  auto block = [&](char const *name) { return detail::TomlBlock{root[name].as_table(), name}; };

  {
    auto b = block("scanner");
    b.get("gradient", c.scanner.gradient);
    b.get("drive_amplitude", c.scanner.drive_amplitude);
    b.get("drive_frequency", c.scanner.drive_frequency);
    b.get("oversample_rate", c.scanner.oversample_rate);
    b.get("acquisition_rate", c.scanner.acquisition_rate);
    b.get("retained_harmonics", c.scanner.retained_harmonics);
    b.finish();
  }
  {
    auto        b = block("trajectory");
    std::string kind{to_string(c.kind)}, order{detail::to_string(c.trajectory.order)};
    auto       &t = c.trajectory;
    b.get("kind", kind);
    b.get("fov_x", t.fov_x);
    b.get("fov_z", t.fov_z);
    b.get("lines", t.lines);
    b.get("points_z", t.points_z);
    b.get("dwell", t.dwell);
    b.get("idle_per_step", t.idle_per_step);
    b.get("slew", t.slew);
    b.get("focus_field", t.focus_field);
    b.get("scan_time", t.scan_time);
    b.get("order", order);
    b.finish();
    c.kind = parse_trajectory_kind(kind);
    t.order = detail::parse_scan_order(order);
  }
  {
    auto b = block("phantom");
    b.get("path", c.phantom_path);
    b.get("render_spacing", c.render_spacing);
    b.finish();
  }
  {
    auto        b = block("estimator");
    std::string method{to_string(c.estimator.method)}, corr{to_string(c.estimator.correction)};
    b.get("method", method);
    b.get("n_rep", c.estimator.n_rep);
    b.get("correction", corr);
    b.get("timing_offset", c.estimator.timing_offset);
    b.finish();
    c.estimator.method = parse_method(method);
    c.estimator.correction = parse_correction_mode(corr);
  }
  {
    auto b = block("point_source");
    b.get("tau", c.point_source.tau);
    b.get("diameter", c.point_source.diameter);
    b.get("warmup_periods", c.point_source.warmup_periods);
    b.get("tail_periods", c.point_source.tail_periods);
    b.finish();
  }
  {
    auto b = block("noise");
    b.get("snr", c.noise.snr);
    b.get("slew_z", c.noise.slew_z);
    b.get("reps_low", c.noise.reps_low);
    b.get("reps_high", c.noise.reps_high);
    b.get("paper_reps_low", c.noise.paper_reps_low);
    b.get("paper_reps_high", c.noise.paper_reps_high);
    b.get("seed", c.noise.seed);
    b.finish();
  }
  {
    auto b = block("sweep");
    b.get("slew_z", c.sweep.slew_z);
    b.get("slew_x", c.sweep.slew_x);
    b.finish();
  }
  {
    auto b = block("nrep");
    b.get("values", c.nrep.values);
    b.get("snr", c.nrep.snr);
    b.get("reps", c.nrep.reps);
    b.get("slew_z", c.nrep.slew_z);
    b.finish();
  }
  {
    auto                     b = block("phantom_run");
    auto                    &p = c.phantom_run;
    std::vector<std::string> kinds;
    for (auto k : p.trajectories) { kinds.emplace_back(to_string(k)); }
    b.get("trajectories", kinds);
    b.get("fov_x", p.fov_x);
    b.get("fov_z", p.fov_z);
    b.get("image_nx", p.image_nx);
    b.get("image_nz", p.image_nz);
    b.get("pwt_lines", p.pwt_lines);
    b.get("pwt_points_z", p.pwt_points_z);
    b.get("pwt_dwell", p.pwt_dwell);
    b.get("pwt_guard_periods", p.pwt_guard_periods);
    b.get("llt_lines", p.llt_lines);
    b.get("llt_slew_z", p.llt_slew_z);
    b.get("tt_slew_x", p.tt_slew_x);
    b.get("tt_slew_z", p.tt_slew_z);
    b.get("oversample_rate", p.oversample_rate);
    b.get("cull_field", p.cull_field);
    b.get("snr", p.snr);
    b.get("tau_min", p.tau_min);
    b.get("tau_max", p.tau_max);
    b.get("mask_threshold", p.mask_threshold);
    b.finish();
    p.trajectories.clear();
    for (auto const &k : kinds) { p.trajectories.push_back(parse_trajectory_kind(k)); }
  }
  {
    auto b = block("simulate");
    b.get("snr", c.simulate.snr);
    b.finish();
  }
  {
    auto b = block("input");
    b.get("signal", c.input);
    b.finish();
  }
  {
    auto b = block("output");
    b.get("dir", c.output_dir);
    b.finish();
  }
  {
    auto b = block("run");
    b.get("threads", c.threads);
    b.get("paper_scale", c.paper_scale);
    b.finish();
  }
  if (c.paper_scale) { apply_paper_scale(c); }
  c.validate();
  return c;
}

inline auto load_config(std::filesystem::path const &p) -> ExperimentConfig
{
  auto const dir = p.has_parent_path() ? p.parent_path() : std::filesystem::path{"."};
  return parse_config(detail::read_file(p), dir);
}

/// Canonical TOML of the fully resolved configuration; its hash tags every output.
inline auto canonical_toml(ExperimentConfig const &c) -> std::string
{
  auto arr = [](auto const &v) {
    toml::array a;
    for (auto const &x : v) {
      if constexpr (std::is_same_v<std::decay_t<decltype(x)>, Index>) {
        a.push_back(static_cast<std::int64_t>(x));
      } else {
        a.push_back(x);
      }
    }
    return a;
  };
  auto vec = [](Vec3 const &v) { return toml::array{v.x, v.y, v.z}; };
  auto i64 = [](Index v) { return static_cast<std::int64_t>(v); };
  toml::array kinds;
  for (auto k : c.phantom_run.trajectories) { kinds.push_back(std::string(to_string(k))); }
  auto const &s = c.scanner;
  auto const &t = c.trajectory;
  auto const &p = c.phantom_run;
  toml::table root{
    {"scanner", toml::table{{"gradient", vec(s.gradient)},
                            {"drive_amplitude", s.drive_amplitude},
                            {"drive_frequency", s.drive_frequency},
                            {"oversample_rate", s.oversample_rate},
                            {"acquisition_rate", s.acquisition_rate},
                            {"retained_harmonics", i64(s.retained_harmonics)}}},
    {"trajectory", toml::table{{"kind", std::string(to_string(c.kind))},
                               {"fov_x", t.fov_x},
                               {"fov_z", t.fov_z},
                               {"lines", i64(t.lines)},
                               {"points_z", i64(t.points_z)},
                               {"dwell", t.dwell},
                               {"idle_per_step", t.idle_per_step},
                               {"slew", vec(t.slew)},
                               {"focus_field", vec(t.focus_field)},
                               {"scan_time", t.scan_time},
                               {"order", std::string(detail::to_string(t.order))}}},
    {"phantom", toml::table{{"path", c.phantom_path}, {"render_spacing", c.render_spacing}}},
    {"estimator", toml::table{{"method", std::string(to_string(c.estimator.method))},
                              {"n_rep", i64(c.estimator.n_rep)},
                              {"correction", std::string(to_string(c.estimator.correction))},
                              {"timing_offset", c.estimator.timing_offset}}},
    {"point_source", toml::table{{"tau", c.point_source.tau},
                                 {"diameter", c.point_source.diameter},
                                 {"warmup_periods", i64(c.point_source.warmup_periods)},
                                 {"tail_periods", i64(c.point_source.tail_periods)}}},
    {"noise", toml::table{{"snr", arr(c.noise.snr)},
                          {"slew_z", arr(c.noise.slew_z)},
                          {"reps_low", i64(c.noise.reps_low)},
                          {"reps_high", i64(c.noise.reps_high)},
                          {"paper_reps_low", i64(c.noise.paper_reps_low)},
                          {"paper_reps_high", i64(c.noise.paper_reps_high)},
                          {"seed", static_cast<std::int64_t>(c.noise.seed)}}},
    {"sweep", toml::table{{"slew_z", arr(c.sweep.slew_z)}, {"slew_x", arr(c.sweep.slew_x)}}},
    {"nrep", toml::table{{"values", arr(c.nrep.values)}, {"snr", arr(c.nrep.snr)}, {"reps", i64(c.nrep.reps)}, {"slew_z", c.nrep.slew_z}}},
    {"phantom_run", toml::table{{"trajectories", kinds},
                                {"fov_x", p.fov_x},
                                {"fov_z", p.fov_z},
                                {"image_nx", i64(p.image_nx)},
                                {"image_nz", i64(p.image_nz)},
                                {"pwt_lines", i64(p.pwt_lines)},
                                {"pwt_points_z", i64(p.pwt_points_z)},
                                {"pwt_dwell", p.pwt_dwell},
                                {"pwt_guard_periods", i64(p.pwt_guard_periods)},
                                {"llt_lines", i64(p.llt_lines)},
                                {"llt_slew_z", p.llt_slew_z},
                                {"tt_slew_x", p.tt_slew_x},
                                {"tt_slew_z", p.tt_slew_z},
                                {"oversample_rate", p.oversample_rate},
                                {"cull_field", p.cull_field},
                                {"snr", p.snr},
                                {"tau_min", p.tau_min},
                                {"tau_max", p.tau_max},
                                {"mask_threshold", p.mask_threshold}}},
    {"simulate", toml::table{{"snr", c.simulate.snr}}},
    {"input", toml::table{{"signal", c.input}}},
    {"output", toml::table{{"dir", c.output_dir}}},
    {"run", toml::table{{"paper_scale", c.paper_scale}}},
  };
  std::ostringstream os;
  os << root << "\n";
  return os.str();
}

inline auto config_hash(ExperimentConfig const &c) -> std::string { return fnv1a_hex(canonical_toml(c)); }

// ---------------------------------------------------------------------------------------------
// Phantom files (TOML): render_spacing plus an array of [[source]] tables, SI units.

inline auto parse_phantom(std::string_view text) -> Phantom
{
  auto const root = detail::parse_toml(text, "phantom");
  Phantom    ph;
  detail::TomlBlock top{&root, "phantom file"};
  top.get("render_spacing", ph.render_spacing);
  top.mark("source");
  top.finish();
  auto const *list = root["source"].as_array();
  if (!list) { throw ValidationError("phantom file: needs at least one [[source]]"); }
  for (auto const &n : *list) {
    auto const *t = n.as_table();
    if (!t) { throw ValidationError("phantom file: [[source]] entries must be tables"); }
    Source            s;
    detail::TomlBlock b{t, "source"};
    b.get("name", s.name);
    b.get("position", s.position);
    std::vector<double> size{0.0, 0.0};
    b.get("size", size);
    if (size.size() != 2) { throw ValidationError("phantom file: size must be [width_x, width_z]"); }
    s.width_x = size[0];
    s.width_z = size[1];
    b.get("tau", s.species.tau);
    b.get("diameter", s.species.diameter);
    b.get("temperature", s.species.temperature);
    b.get("saturation", s.species.saturation);
    b.get("concentration", s.concentration);
    b.finish();
    s.species.name = s.name;
    ph.sources.push_back(std::move(s));
  }
  ph.validate();
  return ph;
}

inline auto load_phantom(std::filesystem::path const &p) -> Phantom { return parse_phantom(detail::read_file(p)); }

/// Six 2×2 mm patches with τ = 2.0 … 4.0 µs on a 3 × 2 layout, 1.5 cm apart in x and 3 cm in z.
inline auto color_phantom(double render_spacing = 0.4e-3) -> Phantom
{
  Phantom ph;
  ph.render_spacing = render_spacing;
  double const taus[] = {2.0e-6, 2.4e-6, 2.8e-6, 3.2e-6, 3.6e-6, 4.0e-6};
  for (int i = 0; i < 6; i++) {
    Source s;
    s.name = "patch" + std::to_string(i + 1);
    s.position = {(i % 3 - 1) * 0.015, 0.0, i < 3 ? -0.015 : 0.015};
    s.width_x = s.width_z = 2e-3;
    s.species.tau = taus[i];
    s.species.name = s.name;
    ph.sources.push_back(s);
  }
  return ph;
}

// ---------------------------------------------------------------------------------------------
// Execution helpers

/// Per-repetition seed from (base, cell, repetition); independent of execution order.
inline auto derive_seed(std::uint64_t base, std::uint64_t cell, std::uint64_t rep) -> std::uint64_t
{
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  return mix(mix(mix(base) ^ cell) ^ rep);
}

/// Calls f(i) for i in [0, n) on up to `threads` workers (0 = hardware concurrency).
inline void parallel_for(Index n, Index threads, std::function<void(Index)> const &f)
{
  if (threads == 0) { threads = std::max<Index>(1, static_cast<Index>(std::thread::hardware_concurrency())); }
  threads = std::min(threads, n);
  if (threads <= 1) {
    for (Index i = 0; i < n; i++) { f(i); }
    return;
  }
  std::atomic<Index>  next{0};
  std::exception_ptr  error;
  std::mutex          error_mutex;
  {
    std::vector<std::jthread> pool;
    for (Index w = 0; w < threads; w++) {
      pool.emplace_back([&] {
        for (Index i = next++; i < n; i = next++) {
          try {
            f(i);
          } catch (...) {
            std::lock_guard lock{error_mutex};
            if (!error) { error = std::current_exception(); }
            next = n;
          }
        }
      });
    }
  }
  if (error) { std::rethrow_exception(error); }
}

/// Point source at the origin with a Custom ramp whose analysed period (index warm-up) has its
/// midpoint FF-only FFP exactly on the source.
struct PointScenario
{
  TrajectorySpec spec;
  Phantom        phantom;
  Index          period = 0;
};

inline auto point_scenario(ScannerConfig const &sc, PointSourceConfig const &ps, double slew_z, double slew_x, double tau)
  -> PointScenario
{
  double const     fd = sc.drive_frequency;
  double const     mid = (static_cast<double>(ps.warmup_periods) + 0.5) / fd;
  TrajectoryParams p;
  p.slew = {slew_x, 0.0, slew_z};
  p.focus_field = {-slew_x * mid, 0.0, -slew_z * mid};
  p.scan_time = static_cast<double>(ps.warmup_periods + 1 + ps.tail_periods) / fd;
  PointScenario s;
  s.spec = build_trajectory(TrajectoryKind::Custom, sc, p);
  Source src;
  src.name = "point";
  src.species.tau = tau;
  src.species.diameter = ps.diameter;
  s.phantom.sources.push_back(src);
  s.period = ps.warmup_periods;
  return s;
}

// ---------------------------------------------------------------------------------------------
// Sweeps

struct SweepCell
{
  double         snr = std::numeric_limits<double>::infinity();
  double         slew_z = 0.0, slew_x = 0.0;
  Index          n_rep = 6;
  Method         method = Method::WLS;
  CorrectionMode correction = CorrectionMode::Full;
  double         tau_mean = 0.0;   // s
  double         mean_error = 0.0; // %, mean |τ̂ − τ|/τ
  double         std_error = 0.0;  // %
  double         bias = 0.0;       // %, mean (τ̂ − τ)/τ
  Index          reps = 0;
  Index          divergent = 0;
  bool           flagged = false;  // drive dominance violated; not evaluated
  bool           converged = true;
};

struct SweepResult
{
  std::vector<double>    slew_z, slew_x, snr;
  std::vector<Index>     n_rep;
  std::vector<SweepCell> cells;
  double                 wall_time = 0.0;

  template <typename Pred>
  auto find(Pred &&p) const -> SweepCell const &
  {
    auto it = std::find_if(cells.begin(), cells.end(), p);
    if (it == cells.end()) { throw ValidationError("sweep result: no such cell"); }
    return *it;
  }
};

namespace detail {

struct ErrorStats
{
  double mean_tau = 0.0, mean_abs = 0.0, std_abs = 0.0, bias = 0.0;
  Index  count = 0, divergent = 0;
  bool   converged = true;
};

// Serial reduction in repetition order, so results do not depend on scheduling.
inline auto reduce_errors(std::span<double const> tau_hat, double tau) -> ErrorStats
{
  ErrorStats          s;
  std::vector<double> running;
  double              sum_abs = 0.0, sum_abs2 = 0.0, sum_signed = 0.0, sum_tau = 0.0;
  for (double t : tau_hat) {
    if (!std::isfinite(t)) {
      s.divergent++;
      continue;
    }
    double const e = 100.0 * (t - tau) / tau;
    sum_abs += std::abs(e);
    sum_abs2 += e * e;
    sum_signed += e;
    sum_tau += t;
    s.count++;
    running.push_back(sum_abs / static_cast<double>(s.count));
  }
  if (s.count == 0) {
    s.mean_tau = s.mean_abs = s.std_abs = s.bias = std::numeric_limits<double>::quiet_NaN();
    s.converged = false;
    return s;
  }
  double const n = static_cast<double>(s.count);
  s.mean_tau = sum_tau / n;
  s.mean_abs = sum_abs / n;
  s.bias = sum_signed / n;
  s.std_abs = s.count > 1 ? std::sqrt(std::max(0.0, (sum_abs2 - n * s.mean_abs * s.mean_abs) / (n - 1.0))) : 0.0;
  // Running-mean stability: over the last 10 % of repetitions the mean stays within 1 %.
  auto const from = static_cast<size_t>(std::floor(0.9 * n));
  for (size_t i = from; i < running.size(); i++) {
    if (std::abs(running[i] - s.mean_abs) > 0.01 * s.mean_abs) { s.converged = false; }
  }
  return s;
}

inline void fill(SweepCell &c, ErrorStats const &s)
{
  c.tau_mean = s.mean_tau;
  c.mean_error = s.mean_abs;
  c.std_error = s.std_abs;
  c.bias = s.bias;
  c.reps = s.count;
  c.divergent = s.divergent;
  c.converged = s.converged;
}

inline auto safe_estimate(HalfCyclePair const &pair, Index n_rep, Method m) -> double
{
  try {
    return estimate_pair(pair, n_rep, m);
  } catch (NumericalError const &) {
    return std::numeric_limits<double>::quiet_NaN();
  }
}

} // namespace detail

inline constexpr std::array<Method, 2>         kMethods{Method::TAURUS, Method::WLS};
inline constexpr std::array<CorrectionMode, 4> kCorrectionModes{CorrectionMode::None, CorrectionMode::AmplitudeOnly,
                                                                 CorrectionMode::ShiftOnly, CorrectionMode::Full};

/// Noise-free (R_s,z, R_s,x) grid for every correction variant and both estimators.
inline auto run_sr_sweep(ExperimentConfig const &cfg) -> SweepResult
{
  auto const  start = std::chrono::steady_clock::now();
  auto const &sc = cfg.scanner;
  SweepResult r;
  r.slew_z = cfg.sweep.slew_z;
  r.slew_x = cfg.sweep.slew_x;
  r.n_rep = {cfg.estimator.n_rep};
  Index const nz = static_cast<Index>(r.slew_z.size()), nx = static_cast<Index>(r.slew_x.size());
  Index const per_cell = static_cast<Index>(kMethods.size() * kCorrectionModes.size());
  r.cells.resize(static_cast<size_t>(nz * nx * per_cell));
  parallel_for(nz * nx, cfg.threads, [&](Index cell) {
    double const rz = r.slew_z[cell / nx], rx = r.slew_x[cell % nx];
    SweepCell   *out = r.cells.data() + cell * per_cell;
    bool const   flagged = !(sc.drive_slew() > rz) || rz < 0.0 || rx < 0.0;
    std::optional<SampledSignal> received;
    std::optional<PointScenario> sn;
    SRCorrection                 full;
    if (!flagged) {
      sn = point_scenario(sc, cfg.point_source, rz, rx, cfg.point_source.tau);
      received = synthesize(sc, sn->spec, sn->phantom, std::nullopt).received;
      full = sr_correction_params(sc, rz);
    }
    Index k = 0;
    for (auto mode : kCorrectionModes) {
      std::optional<HalfCyclePair> pair;
      if (!flagged) { pair = extract_pair(*received, sc, sn->period, full.restricted(mode)); }
      for (auto m : kMethods) {
        SweepCell &c = out[k++];
        c.slew_z = rz;
        c.slew_x = rx;
        c.n_rep = cfg.estimator.n_rep;
        c.method = m;
        c.correction = mode;
        c.flagged = flagged;
        if (flagged) {
          c.tau_mean = c.mean_error = c.std_error = c.bias = std::numeric_limits<double>::quiet_NaN();
          continue;
        }
        double const t = detail::safe_estimate(*pair, cfg.estimator.n_rep, m);
        detail::fill(c, detail::reduce_errors(std::span{&t, 1}, cfg.point_source.tau));
      }
    }
  });
  r.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return r;
}

/// Monte-Carlo noise study over (SNR, R_s,z) with full correction, both estimators on the same
/// noise draws. A noise-free row (SNR = inf, one repetition) is included per R_s,z.
inline auto run_noise_mc(ExperimentConfig const &cfg) -> SweepResult
{
  auto const  start = std::chrono::steady_clock::now();
  auto const &sc = cfg.scanner;
  SweepResult r;
  r.slew_z = cfg.noise.slew_z;
  r.snr = cfg.noise.snr;
  r.snr.push_back(std::numeric_limits<double>::infinity());
  r.n_rep = {cfg.estimator.n_rep};
  Index const nz = static_cast<Index>(r.slew_z.size()), ns = static_cast<Index>(r.snr.size());

  struct Clean
  {
    SampledSignal signal;
    double        peak;
    Index         period;
    SRCorrection  full;
  };
  std::vector<Clean> clean(static_cast<size_t>(nz));
  parallel_for(nz, cfg.threads, [&](Index i) {
    auto const sn = point_scenario(sc, cfg.point_source, r.slew_z[i], 0.0, cfg.point_source.tau);
    auto       s = synthesize_clean(sc, sn.spec, sn.phantom);
    double const peak = s.peak();
    clean[i] = {std::move(s), peak, sn.period, sr_correction_params(sc, r.slew_z[i])};
  });

  // Work items are (cell, repetition) so small cells do not serialise behind big ones.
  struct Item
  {
    Index cell, rep;
  };
  std::vector<Item>                              items;
  std::vector<std::array<std::vector<double>, 2>> tau_hat(static_cast<size_t>(ns * nz));
  for (Index si = 0; si < ns; si++) {
    for (Index zi = 0; zi < nz; zi++) {
      Index const cell = si * nz + zi;
      Index const reps = std::isfinite(r.snr[si]) ? cfg.noise.reps(r.snr[si]) : 1;
      for (auto &v : tau_hat[cell]) { v.assign(static_cast<size_t>(reps), 0.0); }
      for (Index k = 0; k < reps; k++) { items.push_back({cell, k}); }
    }
  }
  parallel_for(static_cast<Index>(items.size()), cfg.threads, [&](Index i) {
    auto const [cell, rep] = items[i];
    double const snr = r.snr[cell / nz];
    auto const  &cl = clean[cell % nz];
    auto         noisy = std::isfinite(snr) ? add_noise(cl.signal, {snr, derive_seed(cfg.noise.seed, cell, rep)}, cl.peak) : cl.signal;
    auto const   received = feedthrough_filter(std::move(noisy), sc.drive_frequency);
    auto const   pair = extract_pair(received, sc, cl.period, cl.full.restricted(cfg.estimator.correction));
    for (size_t m = 0; m < kMethods.size(); m++) { tau_hat[cell][m][rep] = detail::safe_estimate(pair, cfg.estimator.n_rep, kMethods[m]); }
  });
  for (Index si = 0; si < ns; si++) {
    for (Index zi = 0; zi < nz; zi++) {
      for (size_t m = 0; m < kMethods.size(); m++) {
        SweepCell c;
        c.snr = r.snr[si];
        c.slew_z = r.slew_z[zi];
        c.n_rep = cfg.estimator.n_rep;
        c.method = kMethods[m];
        c.correction = cfg.estimator.correction;
        detail::fill(c, detail::reduce_errors(tau_hat[si * nz + zi][m], cfg.point_source.tau));
        r.cells.push_back(c);
      }
    }
  }
  r.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return r;
}

/// Error against N_rep; every N_rep value sees the same noise draws (common random numbers).
inline auto run_nrep_study(ExperimentConfig const &cfg) -> SweepResult
{
  auto const  start = std::chrono::steady_clock::now();
  auto const &sc = cfg.scanner;
  SweepResult r;
  r.slew_z = {cfg.nrep.slew_z};
  r.n_rep = cfg.nrep.values;
  for (double s : cfg.nrep.snr) { r.snr.push_back(s > 0.0 ? s : std::numeric_limits<double>::infinity()); }
  auto const   sn = point_scenario(sc, cfg.point_source, cfg.nrep.slew_z, 0.0, cfg.point_source.tau);
  auto const   clean = synthesize_clean(sc, sn.spec, sn.phantom);
  double const peak = clean.peak();
  auto const   corr = sr_correction_params(sc, cfg.nrep.slew_z).restricted(cfg.estimator.correction);
  Index const  ns = static_cast<Index>(r.snr.size()), nn = static_cast<Index>(r.n_rep.size());

  struct Item
  {
    Index snr, rep;
  };
  std::vector<Item>                        items;
  std::vector<std::vector<double>>         tau_hat(static_cast<size_t>(ns * nn * 2));
  for (Index si = 0; si < ns; si++) {
    Index const reps = std::isfinite(r.snr[si]) ? cfg.nrep.reps : 1;
    for (Index j = 0; j < nn * 2; j++) { tau_hat[(si * nn * 2) + j].assign(static_cast<size_t>(reps), 0.0); }
    for (Index k = 0; k < reps; k++) { items.push_back({si, k}); }
  }
  parallel_for(static_cast<Index>(items.size()), cfg.threads, [&](Index i) {
    auto const [si, rep] = items[i];
    double const snr = r.snr[si];
    auto noisy = std::isfinite(snr) ? add_noise(clean, {snr, derive_seed(cfg.noise.seed, static_cast<std::uint64_t>(si), rep)}, peak) : clean;
    auto const received = feedthrough_filter(std::move(noisy), sc.drive_frequency);
    auto const pair = extract_pair(received, sc, sn.period, corr);
    for (Index ni = 0; ni < nn; ni++) {
      for (Index m = 0; m < 2; m++) { tau_hat[(si * nn + ni) * 2 + m][rep] = detail::safe_estimate(pair, r.n_rep[ni], kMethods[m]); }
    }
  });
  for (Index si = 0; si < ns; si++) {
    for (Index ni = 0; ni < nn; ni++) {
      for (Index m = 0; m < 2; m++) {
        SweepCell c;
        c.snr = r.snr[si];
        c.slew_z = cfg.nrep.slew_z;
        c.n_rep = r.n_rep[ni];
        c.method = kMethods[m];
        c.correction = cfg.estimator.correction;
        detail::fill(c, detail::reduce_errors(tau_hat[(si * nn + ni) * 2 + m], cfg.point_source.tau));
        r.cells.push_back(c);
      }
    }
  }
  r.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return r;
}

inline void write_sweep_csv(std::filesystem::path const &p, SweepResult const &r, std::string const &hash)
{
  CsvWriter w{p,
              {{"snr", ""},
               {"slew_z", "T/s"},
               {"slew_x", "T/s"},
               {"n_rep", ""},
               {"method", ""},
               {"correction", ""},
               {"tau_mean", "us"},
               {"error_mean", "%"},
               {"error_std", "%"},
               {"bias", "%"},
               {"reps", ""},
               {"divergent", ""},
               {"flagged", ""},
               {"converged", ""},
               {"wall_time", "s"}},
              hash};
  for (auto const &c : r.cells) {
    w.row({c.snr, c.slew_z, c.slew_x, c.n_rep, std::string(to_string(c.method)), std::string(to_string(c.correction)),
           c.tau_mean * 1e6, c.mean_error, c.std_error, c.bias, c.reps, c.divergent, Index{c.flagged}, Index{c.converged},
           r.wall_time});
  }
  w.close();
}

// ---------------------------------------------------------------------------------------------
// Estimation on a whole received signal and map formation

/// Scanner and trajectory parameters stored with a signal file.
inline auto scanner_json(ScannerConfig const &s) -> Json
{
  return {{"gradient", {s.gradient.x, s.gradient.y, s.gradient.z}}, {"drive_amplitude", s.drive_amplitude},
          {"drive_frequency", s.drive_frequency}, {"oversample_rate", s.oversample_rate},
          {"acquisition_rate", s.acquisition_rate}, {"retained_harmonics", s.retained_harmonics}};
}

inline auto trajectory_json(TrajectoryKind k, TrajectoryParams const &p) -> Json
{
  auto v = [](Vec3 const &a) { return Json::array({a.x, a.y, a.z}); };
  return {{"kind", std::string(to_string(k))}, {"fov_x", p.fov_x}, {"fov_z", p.fov_z}, {"lines", p.lines},
          {"points_z", p.points_z}, {"dwell", p.dwell}, {"idle_per_step", p.idle_per_step}, {"slew", v(p.slew)},
          {"focus_field", v(p.focus_field)}, {"scan_time", p.scan_time},
          {"order", std::string(detail::to_string(p.order))}};
}

namespace detail {

inline auto vec3(Json const &j) -> Vec3
{
  if (!j.is_array() || j.size() != 3) { throw ValidationError("metadata: expected a 3-vector"); }
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

} // namespace detail

inline auto scanner_from_json(Json const &j) -> ScannerConfig
{
  ScannerConfig s;
  try {
    s.gradient = detail::vec3(j.at("gradient"));
    s.drive_amplitude = j.at("drive_amplitude").get<double>();
    s.drive_frequency = j.at("drive_frequency").get<double>();
    s.oversample_rate = j.at("oversample_rate").get<double>();
    s.acquisition_rate = j.at("acquisition_rate").get<double>();
    s.retained_harmonics = j.at("retained_harmonics").get<Index>();
  } catch (Json::exception const &e) {
    throw ValidationError(std::string("metadata scanner block: ") + e.what());
  }
  return s;
}

inline auto trajectory_from_json(Json const &j) -> std::pair<TrajectoryKind, TrajectoryParams>
{
  TrajectoryParams p;
  try {
    p.fov_x = j.at("fov_x").get<double>();
    p.fov_z = j.at("fov_z").get<double>();
    p.lines = j.at("lines").get<Index>();
    p.points_z = j.at("points_z").get<Index>();
    p.dwell = j.at("dwell").get<double>();
    p.idle_per_step = j.at("idle_per_step").get<double>();
    p.slew = detail::vec3(j.at("slew"));
    p.focus_field = detail::vec3(j.at("focus_field"));
    p.scan_time = j.at("scan_time").get<double>();
    p.order = detail::parse_scan_order(j.at("order").get<std::string>());
    return {parse_trajectory_kind(j.at("kind").get<std::string>()), p};
  } catch (Json::exception const &e) {
    throw ValidationError(std::string("metadata trajectory block: ") + e.what());
  }
}

struct SignalEstimate
{
  std::vector<PeriodEstimate>      periods;
  std::optional<TimingCalibration> timing;
  std::optional<double>            baseline_delay; // s
  SampledSignal                    preprocessed;
  ScannerConfig                    scanner;
  TrajectorySpec                   spec;
};

struct PeriodSelection
{
  Index  guard = 0;              // PWT: periods skipped at both ends of each step
  double min_energy_fraction = 0.0; // skip periods whose raw energy is below this fraction of the maximum
};

/// Per-period τ̂ of a filtered, drive-phase-aligned received signal.
inline auto estimate_periods(SampledSignal const &s, ScannerConfig const &sc, TrajectorySpec const &spec,
                             EstimatorConfig const &cfg, PeriodSelection const &sel = {}, Index threads = 1)
  -> std::vector<PeriodEstimate>
{
  check_signal(s, "estimate_periods");
  Index const P = integer_ratio(s.rate, sc.drive_frequency, "fs/fd");
  if (sc.samples_per_period() != P) { throw ValidationError("estimate_periods: sampling rate differs from the scanner's"); }
  Index const  count = s.size() / P;
  double const phase = s.t0 * sc.drive_frequency;
  if (std::abs(phase - std::round(phase)) > 1e-6) { throw ValidationError("estimate_periods: t0 is not on a drive period boundary"); }
  Index const  first = static_cast<Index>(std::llround(phase));
  auto const   full = sr_correction_params(sc, spec.max_slew_z());
  Index const  pps = spec.kind == TrajectoryKind::PWT ? static_cast<Index>(std::llround(spec.dwell * sc.drive_frequency)) : 0;

  std::vector<double> energy(static_cast<size_t>(count), 0.0);
  for (Index p = 0; p < count; p++) {
    for (Index i = p * P; i < (p + 1) * P; i++) { energy[p] += s.samples[i] * s.samples[i]; }
  }
  double const emax = count > 0 ? *std::max_element(energy.begin(), energy.end()) : 0.0;
  std::vector<Index> keep;
  for (Index p = 0; p < count; p++) {
    Index const g = first + p;
    if (pps > 0) {
      Index const local = g % pps;
      if (local < sel.guard || local >= pps - sel.guard) { continue; }
    }
    if (sel.min_energy_fraction > 0.0 && !(energy[p] > sel.min_energy_fraction * emax)) { continue; }
    if (g >= spec.periods()) { continue; }
    keep.push_back(p);
  }
  std::vector<PeriodEstimate> out(keep.size());
  parallel_for(static_cast<Index>(keep.size()), threads, [&](Index i) {
    auto e = estimate_period(s, sc, keep[i], full, cfg);
    e.center = pfov_center(spec, e.period);
    out[i] = e;
  });
  return out;
}

struct MapProducts
{
  ImageGrid image;
  TauMap    map;
  Overlay   overlay;
};

/// Image reconstruction, τ̂ gridding at a quarter of the image kernel, masking and colour overlay.
inline auto build_maps(SampledSignal const &received, TrajectorySpec const &spec, std::vector<PeriodEstimate> const &est,
                       GridSpec const &grid, Colormap const &cmap, double mask_threshold = 0.10) -> MapProducts
{
  std::vector<MapSample> samples;
  std::vector<Vec3>      centers;
  for (auto const &e : est) {
    centers.push_back(e.center);
    if (e.ok) { samples.push_back({e.center, e.tau, e.weight}); }
  }
  if (samples.empty()) { throw NumericalError("build_maps: no valid period estimates"); }
  auto const [sx, sz] = resolve_kernel(KernelSpec{}, centers, grid);
  MapProducts out;
  out.image = reconstruct_amplitude_image(received, spec, grid, sx, sz);
  out.map = mask_map(estimates_to_map(samples, grid, KernelSpec{.sigma_x = sx, .sigma_z = sz, .scale = 0.25}), out.image, mask_threshold);
  out.overlay = overlay(out.image, out.map, cmap);
  return out;
}

inline void write_period_csv(std::filesystem::path const &p, std::vector<PeriodEstimate> const &est, std::string const &hash)
{
  CsvWriter w{p,
              {{"period", ""}, {"center_x", "mm"}, {"center_y", "mm"}, {"center_z", "mm"}, {"tau", "us"}, {"weight", "a.u."},
               {"mirror_mse", "a.u."}, {"ok", ""}},
              hash};
  for (auto const &e : est) {
    w.row({e.period, e.center.x * 1e3, e.center.y * 1e3, e.center.z * 1e3, e.tau * 1e6, e.weight, e.mirror_mse, Index{e.ok}});
  }
  w.close();
}

inline void write_map_products(std::filesystem::path const &dir, std::string const &stem, MapProducts const &m, std::string const &hash)
{
  Json const common{{"config_hash", hash}, {"kernel_sigma_x", m.image.sigma_x}, {"kernel_sigma_z", m.image.sigma_z}};
  Json       img = common;
  img["quantity"] = "x-space image |s|/|v|";
  img["unit"] = "a.u.";
  write_raster(dir / (stem + "_image.f32"), m.image.grid, m.image.value, img);
  Json tau = common;
  tau["quantity"] = "tau";
  tau["unit"] = "s";
  tau["tau_kernel_sigma_x"] = m.map.sigma_x;
  tau["tau_kernel_sigma_z"] = m.map.sigma_z;
  tau["masked_value"] = "NaN";
  write_raster(dir / (stem + "_tau.f32"), m.map.grid, m.map.tau, tau);
  write_png(dir / (stem + "_overlay.png"), to_image(m.overlay));
}

// ---------------------------------------------------------------------------------------------
// Colour-phantom study

struct PatchStats
{
  std::string name;
  double      tau_true = 0.0;
  double      tau_mean = 0.0, tau_std = 0.0;  // s, over footprint pixels
  double      error_mean = 0.0, error_std = 0.0; // %
  double      hue = 0.0;                       // degrees, mean over footprint pixels
  Index       pixels = 0;
};

struct PhantomRun
{
  TrajectoryKind              kind;
  TrajectorySpec              spec;
  std::vector<PeriodEstimate> estimates;
  MapProducts                 maps;
  std::vector<PatchStats>     patches;
  double                      mean_error = 0.0; // %, mean of per-patch mean errors
  bool                        hue_order_ok = false;
  double                      wall_time = 0.0;
};

inline auto phantom_trajectory(ExperimentConfig const &cfg, TrajectoryKind kind) -> TrajectorySpec
{
  auto const      &p = cfg.phantom_run;
  TrajectoryParams t;
  t.fov_x = p.fov_x;
  t.fov_z = p.fov_z;
  switch (kind) {
  case TrajectoryKind::PWT:
    t.lines = p.pwt_lines;
    t.points_z = p.pwt_points_z;
    t.dwell = p.pwt_dwell;
    break;
  case TrajectoryKind::LLT:
    t.lines = p.llt_lines;
    t.slew = {0.0, 0.0, p.llt_slew_z};
    break;
  case TrajectoryKind::TriangleRaster2D: t.slew = {p.tt_slew_x, 0.0, p.tt_slew_z}; break;
  case TrajectoryKind::Custom: throw ValidationError("phantom run: trajectory must be PWT, LLT or 2DTT");
  }
  return build_trajectory(kind, cfg.scanner, t);
}

/// Footprint statistics of a masked map and overlay for each source of the phantom.
inline auto patch_statistics(Phantom const &ph, TauMap const &m, Overlay const &o) -> std::vector<PatchStats>
{
  std::vector<PatchStats> out;
  for (auto const &s : ph.sources) {
    PatchStats st;
    st.name = s.name;
    st.tau_true = s.species.tau;
    std::vector<double> tau, hx, hy;
    auto const         &g = m.grid;
    for (Index j = 0; j < g.nz; j++) {
      for (Index i = 0; i < g.nx; i++) {
        if (std::abs(g.x(i) - s.position.x) > 0.5 * s.width_x + 1e-12 || std::abs(g.z(j) - s.position.z) > 0.5 * s.width_z + 1e-12) {
          continue;
        }
        Index const k = g.index(i, j);
        if (!m.valid(k)) { continue; }
        tau.push_back(m.tau[k]);
        double const h = hue(o.pixels[k]);
        if (std::isfinite(h)) {
          hx.push_back(std::cos(h * std::numbers::pi / 180.0));
          hy.push_back(std::sin(h * std::numbers::pi / 180.0));
        }
      }
    }
    st.pixels = static_cast<Index>(tau.size());
    if (tau.empty()) {
      st.tau_mean = st.tau_std = st.error_mean = st.error_std = st.hue = std::numeric_limits<double>::quiet_NaN();
      out.push_back(st);
      continue;
    }
    auto const e = detail::reduce_errors(tau, st.tau_true);
    st.tau_mean = e.mean_tau;
    st.error_mean = e.mean_abs;
    st.error_std = e.std_abs;
    double ss = 0.0;
    for (double t : tau) { ss += (t - st.tau_mean) * (t - st.tau_mean); }
    st.tau_std = tau.size() > 1 ? std::sqrt(ss / static_cast<double>(tau.size() - 1)) : 0.0;
    if (hx.empty()) {
      st.hue = std::numeric_limits<double>::quiet_NaN();
    } else {
      double const cx = std::accumulate(hx.begin(), hx.end(), 0.0), cy = std::accumulate(hy.begin(), hy.end(), 0.0);
      st.hue = std::fmod(std::atan2(cy, cx) * 180.0 / std::numbers::pi + 360.0, 360.0);
    }
    out.push_back(st);
  }
  return out;
}

/// True when hue falls strictly as τ rises (blue → red) over all patches.
inline auto hue_order_matches(std::vector<PatchStats> const &patches) -> bool
{
  std::vector<PatchStats> s = patches;
  std::sort(s.begin(), s.end(), [](auto const &a, auto const &b) { return a.tau_true < b.tau_true; });
  for (size_t i = 0; i < s.size(); i++) {
    if (!std::isfinite(s[i].hue)) { return false; }
    if (i > 0 && !(s[i].hue < s[i - 1].hue)) { return false; }
  }
  return true;
}

inline auto run_phantom_trajectory(ExperimentConfig const &cfg, Phantom const &ph, TrajectoryKind kind) -> PhantomRun
{
  auto const start = std::chrono::steady_clock::now();
  auto const &p = cfg.phantom_run;
  PhantomRun  run;
  run.kind = kind;
  run.spec = phantom_trajectory(cfg, kind);
  ScannerConfig sim = cfg.scanner;
  sim.oversample_rate = p.oversample_rate;
  SynthesisOptions opts;
  opts.cull_field = p.cull_field;
  std::optional<NoiseSpec> noise;
  if (p.snr > 0.0) { noise = NoiseSpec{p.snr, derive_seed(cfg.noise.seed, static_cast<std::uint64_t>(kind), 0)}; }
  auto const syn = synthesize(sim, run.spec, ph, noise, opts);
  PeriodSelection sel;
  sel.guard = p.pwt_guard_periods;
  sel.min_energy_fraction = 1e-8;
  run.estimates = estimate_periods(syn.received, cfg.scanner, run.spec, cfg.estimator, sel, cfg.threads);
  auto const grid = GridSpec::covering(p.fov_x, p.fov_z, p.image_nx, p.image_nz);
  run.maps = build_maps(syn.received, run.spec, run.estimates, grid, Colormap{p.tau_min, p.tau_max}, p.mask_threshold);
  run.patches = patch_statistics(ph, run.maps.map, run.maps.overlay);
  double sum = 0.0;
  for (auto const &s : run.patches) { sum += s.error_mean; }
  run.mean_error = sum / static_cast<double>(run.patches.size());
  run.hue_order_ok = hue_order_matches(run.patches);
  run.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return run;
}

inline auto phantom_for(ExperimentConfig const &cfg) -> Phantom
{
  if (cfg.phantom_path.empty()) { return color_phantom(cfg.render_spacing); }
  return load_phantom(cfg.resolve(cfg.phantom_path));
}

inline auto run_phantom(ExperimentConfig const &cfg, std::filesystem::path const &out_dir = {}) -> std::vector<PhantomRun>
{
  auto const               ph = phantom_for(cfg);
  auto const               hash = config_hash(cfg);
  std::vector<PhantomRun>  runs;
  for (auto k : cfg.phantom_run.trajectories) {
    runs.push_back(run_phantom_trajectory(cfg, ph, k));
    if (!out_dir.empty()) {
      std::string const stem{to_string(k)};
      write_period_csv(out_dir / (stem + "_periods.csv"), runs.back().estimates, hash);
      write_map_products(out_dir, stem, runs.back().maps, hash);
    }
  }
  if (!out_dir.empty()) {
    CsvWriter w{out_dir / "phantom_patches.csv",
                {{"trajectory", ""}, {"patch", ""}, {"tau_true", "us"}, {"tau_mean", "us"}, {"tau_std", "us"},
                 {"error_mean", "%"}, {"error_std", "%"}, {"hue", "deg"}, {"pixels", ""}, {"trajectory_error_mean", "%"},
                 {"hue_order_ok", ""}, {"wall_time", "s"}},
                hash};
    for (auto const &r : runs) {
      for (auto const &s : r.patches) {
        w.row({std::string(to_string(r.kind)), s.name, s.tau_true * 1e6, s.tau_mean * 1e6, s.tau_std * 1e6, s.error_mean, s.error_std,
               s.hue, s.pixels, r.mean_error, Index{r.hue_order_ok}, r.wall_time});
      }
    }
    w.close();
  }
  return runs;
}

// ---------------------------------------------------------------------------------------------
// Signal files

/// The trajectory described by the config; a Custom kind without scan time means the canonical
/// point-source ramp.
inline auto configured_trajectory(ExperimentConfig const &cfg) -> std::pair<TrajectorySpec, TrajectoryParams>
{
  if (cfg.kind == TrajectoryKind::Custom && cfg.trajectory.scan_time <= 0.0) {
    auto const       sn = point_scenario(cfg.scanner, cfg.point_source, cfg.trajectory.slew.z, cfg.trajectory.slew.x, cfg.point_source.tau);
    TrajectoryParams p = cfg.trajectory;
    p.focus_field = sn.spec.focus_field;
    p.scan_time = sn.spec.scan_time;
    return {sn.spec, p};
  }
  return {build_trajectory(cfg.kind, cfg.scanner, cfg.trajectory), cfg.trajectory};
}

/// Synthesises the configured scene and writes it as a signal file with full metadata.
inline auto simulate_to_file(ExperimentConfig const &cfg, std::filesystem::path const &path) -> Synthesis
{
  auto const [spec, params] = configured_trajectory(cfg);
  Phantom ph;
  if (cfg.phantom_path.empty()) {
    ph = point_scenario(cfg.scanner, cfg.point_source, 0.0, 0.0, cfg.point_source.tau).phantom;
  } else {
    ph = load_phantom(cfg.resolve(cfg.phantom_path));
  }
  std::optional<NoiseSpec> noise;
  if (cfg.simulate.snr > 0.0) { noise = NoiseSpec{cfg.simulate.snr, derive_seed(cfg.noise.seed, 0, 0)}; }
  auto syn = synthesize(cfg.scanner, spec, ph, noise);
  Json meta{{"format", "taurus-signal"},
            {"config_hash", config_hash(cfg)},
            {"scanner", scanner_json(cfg.scanner)},
            {"trajectory", trajectory_json(spec.kind, params)},
            {"feedthrough_filtered", true},
            {"noisefree_peak", syn.noisefree_peak},
            {"snr", cfg.simulate.snr}};
  write_signal(path, syn.received, meta);
  return syn;
}

/// Preprocess (optional receive low-pass, baseline subtraction, feedthrough high-pass, timing
/// calibration on a marker window), then estimate every complete drive period.
inline auto estimate_from_file(std::filesystem::path const &path, ExperimentConfig const &cfg) -> SignalEstimate
{
  auto f = read_signal(path);
  auto const &meta = f.meta;
  ScannerConfig sc = meta.contains("scanner") ? scanner_from_json(meta["scanner"]) : cfg.scanner;
  sc.validate();
  if (f.signal.rate != sc.acquisition_rate) { throw ValidationError("estimate_from_file: file sampling rate differs from the scanner's fs"); }
  integer_ratio(f.signal.rate, sc.drive_frequency, "fs/fd");
  TrajectorySpec spec;
  if (meta.contains("trajectory")) {
    auto const [kind, params] = trajectory_from_json(meta["trajectory"]);
    spec = build_trajectory(kind, sc, params);
  } else {
    spec = configured_trajectory(cfg).first;
  }
  SignalEstimate out;
  auto           s = f.signal;
  if (meta.value("receive_lowpass", false)) { s = zero_phase_filter(s, FilterSpec::receive_lowpass()); }
  if (meta.contains("baseline")) {
    auto const base_path = path.parent_path() / meta["baseline"].get<std::string>();
    auto       b = read_signal(base_path).signal;
    if (meta.value("receive_lowpass", false)) { b = zero_phase_filter(b, FilterSpec::receive_lowpass()); }
    auto const al = align_baseline(s, b);
    out.baseline_delay = al.delay;
    s = al.residual;
  }
  if (!meta.value("feedthrough_filtered", false)) { s = zero_phase_filter(s, FilterSpec::feedthrough(sc.drive_frequency)); }
  EstimatorConfig ecfg = cfg.estimator;
  if (meta.contains("marker")) {
    auto const  &mk = meta["marker"];
    MarkerWindow w{mk.at("first_period").get<Index>(), mk.at("periods").get<Index>()};
    TimingSearch ts;
    ts.range = mk.value("range", 0.0);
    auto const full = sr_correction_params(sc, spec.max_slew_z());
    out.timing = fine_tune_timing(s, sc, w, ecfg, full, ts);
    ecfg.timing_offset = out.timing->offset;
  }
  out.periods = estimate_periods(s, sc, spec, ecfg, {}, cfg.threads);
  out.preprocessed = std::move(s);
  out.scanner = sc;
  out.spec = spec;
  return out;
}

} // namespace taurus
