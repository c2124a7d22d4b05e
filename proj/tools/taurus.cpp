#include <taurus/harness.hpp>

#include <CLI11.hpp>

#include <iostream>

using namespace taurus;

namespace {

struct Common
{
  std::string                  config;
  std::string                  out;
  std::optional<std::uint64_t> seed;
  std::optional<Index>         threads;
  bool                         paper_scale = false;
};

void add_common(CLI::App *app, Common &c)
{
  app->add_option("--config", c.config, "TOML experiment configuration")->check(CLI::ExistingFile);
  app->add_option("--out", c.out, "output directory (or file for simulate)");
  app->add_option("--seed", c.seed, "base random seed");
  app->add_option("--threads", c.threads, "worker threads, 0 = all cores")->check(CLI::NonNegativeNumber);
  app->add_flag("--paper-scale", c.paper_scale, "published repetition counts and trajectories");
}

auto load(Common const &c) -> ExperimentConfig
{
  ExperimentConfig cfg = c.config.empty() ? ExperimentConfig{} : load_config(c.config);
  if (c.seed) { cfg.noise.seed = *c.seed; }
  if (c.threads) { cfg.threads = *c.threads; }
  if (c.paper_scale && !cfg.paper_scale) { apply_paper_scale(cfg); }
  cfg.validate();
  return cfg;
}

auto out_dir(Common const &c, ExperimentConfig const &cfg) -> std::filesystem::path
{
  std::filesystem::path const d = c.out.empty() ? std::filesystem::path{cfg.output_dir} : std::filesystem::path{c.out};
  std::filesystem::create_directories(d);
  return d;
}

void print_cells(SweepResult const &r)
{
  for (auto const &c : r.cells) {
    if (c.flagged) { continue; }
    std::printf("snr=%-5g Rz=%-5g Rx=%-5g Nrep=%-3lld %-6s %-9s tau=%.4f us  err=%.3f%% +- %.3f%%%s\n", c.snr, c.slew_z, c.slew_x,
                static_cast<long long>(c.n_rep), std::string(to_string(c.method)).c_str(), std::string(to_string(c.correction)).c_str(),
                c.tau_mean * 1e6, c.mean_error, c.std_error, c.converged ? "" : "  (not converged)");
  }
  std::printf("wall time %.2f s\n", r.wall_time);
}

void write_config_copy(std::filesystem::path const &dir, ExperimentConfig const &cfg)
{
  std::ofstream f{dir / "config.resolved.toml"};
  f << "# config_hash=" << config_hash(cfg) << "\n" << canonical_toml(cfg);
}

} // namespace

int main(int argc, char **argv)
{
  CLI::App app{"Relaxation time estimation for magnetic particle imaging"};
  app.require_subcommand(1);

  Common      simulate_o, estimate_o, sweep_sr_o, sweep_noise_o, nrep_o, phantom_o, map_o;
  std::string estimate_in, map_in;

  auto *simulate = app.add_subcommand("simulate", "synthesise a received signal file");
  add_common(simulate, simulate_o);
  auto *estimate = app.add_subcommand("estimate", "per-period relaxation times of a signal file");
  add_common(estimate, estimate_o);
  estimate->add_option("input", estimate_in, "signal file")->check(CLI::ExistingFile);
  auto *sweep_sr = app.add_subcommand("sweep-sr", "noise-free slew-rate correction sweep");
  add_common(sweep_sr, sweep_sr_o);
  auto *sweep_noise = app.add_subcommand("sweep-noise", "Monte-Carlo noise study");
  add_common(sweep_noise, sweep_noise_o);
  auto *nrep = app.add_subcommand("nrep-study", "error against the number of replications");
  add_common(nrep, nrep_o);
  auto *phantom = app.add_subcommand("phantom", "colour-phantom maps for each trajectory");
  add_common(phantom, phantom_o);
  auto *map = app.add_subcommand("map", "relaxation map and overlay of a signal file");
  add_common(map, map_o);
  map->add_option("input", map_in, "signal file")->check(CLI::ExistingFile);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*simulate) {
      auto const cfg = load(simulate_o);
      std::filesystem::path out = simulate_o.out.empty() ? std::filesystem::path{cfg.output_dir} / "signal.bin" : std::filesystem::path{simulate_o.out};
      auto const syn = simulate_to_file(cfg, out);
      std::printf("wrote %s: %lld samples at %g Hz, peak %.4g (arbitrary units)\n", out.c_str(), static_cast<long long>(syn.received.size()),
                  syn.received.rate, syn.noisefree_peak);
    } else if (*estimate || *map) {
      auto const &o = *estimate ? estimate_o : map_o;
      auto const  cfg = load(o);
      std::string input = *estimate ? estimate_in : map_in;
      if (input.empty()) { input = cfg.input.empty() ? std::string{} : cfg.resolve(cfg.input).string(); }
      if (input.empty()) { throw ValidationError("no input signal file given"); }
      auto const r = estimate_from_file(input, cfg);
      auto const dir = out_dir(o, cfg);
      auto const hash = config_hash(cfg);
      write_period_csv(dir / "periods.csv", r.periods, hash);
      if (r.timing) { std::printf("timing offset %.3f ns\n", r.timing->offset * 1e9); }
      if (r.baseline_delay) { std::printf("baseline delay %.3f ns\n", *r.baseline_delay * 1e9); }
      Index ok = 0;
      for (auto const &e : r.periods) { ok += e.ok ? 1 : 0; }
      std::printf("%lld periods, %lld valid\n", static_cast<long long>(r.periods.size()), static_cast<long long>(ok));
      if (*map) {
        auto const &p = cfg.phantom_run;
        auto const  grid = GridSpec::covering(r.spec.fov_x > 0.0 ? r.spec.fov_x : p.fov_x, r.spec.fov_z > 0.0 ? r.spec.fov_z : p.fov_z,
                                              p.image_nx, p.image_nz);
        auto const  m = build_maps(r.preprocessed, r.spec, r.periods, grid, Colormap{p.tau_min, p.tau_max}, p.mask_threshold);
        write_map_products(dir, "map", m, hash);
        std::printf("map %lldx%lld written to %s\n", static_cast<long long>(grid.nx), static_cast<long long>(grid.nz), dir.c_str());
      } else if (r.periods.size() <= 20) {
        for (auto const &e : r.periods) { std::printf("period %lld  tau=%.4f us%s\n", static_cast<long long>(e.period), e.tau * 1e6, e.ok ? "" : " (invalid)"); }
      }
    } else if (*sweep_sr) {
      auto const cfg = load(sweep_sr_o);
      auto const r = run_sr_sweep(cfg);
      auto const dir = out_dir(sweep_sr_o, cfg);
      write_sweep_csv(dir / "sweep_sr.csv", r, config_hash(cfg));
      write_config_copy(dir, cfg);
      print_cells(r);
    } else if (*sweep_noise) {
      auto const cfg = load(sweep_noise_o);
      auto const r = run_noise_mc(cfg);
      auto const dir = out_dir(sweep_noise_o, cfg);
      write_sweep_csv(dir / "sweep_noise.csv", r, config_hash(cfg));
      write_config_copy(dir, cfg);
      print_cells(r);
    } else if (*nrep) {
      auto const cfg = load(nrep_o);
      auto const r = run_nrep_study(cfg);
      auto const dir = out_dir(nrep_o, cfg);
      write_sweep_csv(dir / "nrep_study.csv", r, config_hash(cfg));
      write_config_copy(dir, cfg);
      print_cells(r);
    } else if (*phantom) {
      auto const cfg = load(phantom_o);
      auto const dir = out_dir(phantom_o, cfg);
      write_config_copy(dir, cfg);
      for (auto const &r : run_phantom(cfg, dir)) {
        std::printf("%s: %zu periods, mean patch error %.2f%%, hue order %s, %.1f s\n", std::string(to_string(r.kind)).c_str(),
                    r.estimates.size(), r.mean_error, r.hue_order_ok ? "ok" : "WRONG", r.wall_time);
        for (auto const &s : r.patches) {
          std::printf("  %-8s tau %.2f us -> %.3f +- %.3f us  (%.2f%%)  hue %.1f deg  %lld px\n", s.name.c_str(), s.tau_true * 1e6,
                      s.tau_mean * 1e6, s.tau_std * 1e6, s.error_mean, s.hue, static_cast<long long>(s.pixels));
        }
      }
    }
  } catch (ParseError const &e) {
    std::cerr << "parse error: " << e.what() << "\n";
    return 3;
  } catch (ValidationError const &e) {
    std::cerr << "invalid input: " << e.what() << "\n";
    return 2;
  } catch (std::exception const &e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
