// drsim command-line front end.

#include <chrono>
#include <cstdio>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "drsim/equilibrium.hpp"
#include "drsim/errors.hpp"
#include "drsim/scenario.hpp"

namespace {

constexpr int kExitValidation = 2;
constexpr int kExitRuntime = 3;

struct Globals {
  std::optional<std::uint64_t> seed;
  std::string out;
  std::size_t threads = 0;
  bool no_plots = false;
};

std::filesystem::path out_dir(const Globals& g, const std::string& fallback) {
  return g.out.empty() ? std::filesystem::path(fallback) : std::filesystem::path(g.out);
}

void print_warnings(const std::vector<std::string>& warnings) {
  for (const auto& w : warnings) fmt::print(stderr, "warning: {}\n", w);
}

int cmd_run(const Globals& g, const std::string& path) {
  auto config = drsim::load_scenario(path);
  if (g.seed) config.seed = *g.seed;
  if (g.threads) config.threads = g.threads;
  drsim::finalize_scenario(config);
  print_warnings(config.warnings);

  const auto t0 = std::chrono::steady_clock::now();
  const auto result = drsim::run_scenario(config);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  const auto dir = out_dir(g, "results/" + config.name);
  drsim::emit_outputs(result, dir);
  if (!g.no_plots) print_warnings(drsim::emit_plots(result, dir).warnings);

  std::size_t unconverged = 0;
  for (const auto& p : result.incentivized.periods) unconverged += !p.converged;
  fmt::print("{}: {} households, {} periods, seed {} ({:.2f} s)\n", config.name, config.population, config.periods,
             config.seed, secs);
  fmt::print("  qualifying-period reduction {:.2f}%, whole-horizon reduction {:.2f}%, incentive spend {:.3f}\n",
             100 * result.qualifying_reduction(), 100 * result.total_reduction(), result.incentive_spend());
  if (unconverged) fmt::print("  {} period games stopped at the step limit\n", unconverged);
  fmt::print("  result hash {:016x}, written to {}\n", result.result_hash, dir.string());
  return 0;
}

int cmd_calibrate(const Globals& g, const std::string& path) {
  const auto strata = drsim::load_strata(path);
  const auto seed = g.seed.value_or(1);
  const auto catalog = drsim::default_device_catalog();
  drsim::CalibrationBundle bundle;
  bundle.reference = drsim::estimate_reference_devices(catalog, strata.reference_sample_hours,
                                                       drsim::derive_seed(seed, "reference-devices"));
  int status = 0;
  for (const auto& [stratum, target] : strata.targets) {
    try {
      bundle.table[stratum] =
          drsim::calibrate_stratum(bundle.reference, target, strata.calibration, drsim::derive_seed(seed, "calibration"));
    } catch (const drsim::CalibrationError& e) {
      fmt::print(stderr, "error: stratum {}: {}\n", stratum, e.what());
      status = kExitRuntime;
      continue;
    }
    double mean = 0.0;
    for (const auto& [_, r] : bundle.table[stratum]) mean += r.mean_energy_kwh;
    fmt::print("stratum {}: goal {:.2f} +/- {:.2f} kWh, calibrated mean {:.2f} kWh\n", stratum, target.goal_energy_kwh,
               target.tol_kwh, mean);
  }
  const auto dir = out_dir(g, "results/calibration");
  std::filesystem::create_directories(dir);
  std::ofstream out(dir / "calibration.json");
  if (!out) throw drsim::IoError("cannot write " + (dir / "calibration.json").string());
  drsim::write_calibration_json(out, bundle.table);
  fmt::print("written to {}\n", (dir / "calibration.json").string());
  return status;
}

int cmd_equilibrium(const Globals& g, const std::string& path, std::uint64_t steps, std::uint64_t burn_in) {
  const auto inst = drsim::load_instance(path);
  drsim::AnalysisOptions opts;
  opts.steps = steps;
  opts.burn_in = burn_in;
  opts.seed = g.seed.value_or(1);
  const auto a = drsim::analyze_instance(inst, opts);
  const auto dir = out_dir(g, "results/equilibrium");
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / "equilibrium.json");
    if (!out) throw drsim::IoError("cannot write " + (dir / "equilibrium.json").string());
    drsim::write_analysis_json(out, a);
  }
  {
    std::ofstream out(dir / "distribution.csv");
    if (!out) throw drsim::IoError("cannot write " + (dir / "distribution.csv").string());
    drsim::write_distribution_csv(out, a);
  }
  fmt::print("{} states; derivative max violation {:.3g} ({} above tolerance)\n", a.predicted.states.size(),
             a.derivative.max_violation, a.derivative.violations.size());
  fmt::print("detailed balance max violation {:.3g} over {} pairs; eigenvector gap {:.3g}\n", a.balance.max_violation,
             a.balance.pairs, a.eigen_gap);
  fmt::print("TV(empirical, predicted) = {:.4f}; TV between seeds = {:.4f}\n", a.tv_empirical, a.tv_between_seeds);
  fmt::print("written to {}\n", dir.string());
  return 0;
}

int cmd_plot(const Globals& g, const std::vector<std::string>& dirs) {
  std::vector<std::filesystem::path> paths(dirs.begin(), dirs.end());
  const auto dir = g.out.empty() ? paths.front() : std::filesystem::path(g.out);
  const auto rep = drsim::plot_result_dirs(paths, dir);
  print_warnings(rep.warnings);
  for (const auto& p : rep.written) fmt::print("{}\n", p.string());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Demand-response game simulator"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--seed", g.seed, "Master seed (overrides the scenario file)");
  app.add_option("--out", g.out, "Output directory");
  app.add_option("--threads", g.threads, "Worker threads for period games (0: all cores)");
  app.add_flag("--no-plots", g.no_plots, "Skip SVG output");

  std::string scenario, strata, instance;
  std::vector<std::string> result_dirs;
  std::uint64_t steps = 1000000, burn_in = 10000;

  auto* run = app.add_subcommand("run", "Run a scenario file");
  run->add_option("scenario", scenario, "Scenario JSON")->required()->check(CLI::ExistingFile);
  auto* cal = app.add_subcommand("calibrate", "Calibrate per-stratum device matrices");
  cal->add_option("strata", strata, "Strata JSON")->required()->check(CLI::ExistingFile);
  auto* eq = app.add_subcommand("analyze-equilibrium", "Check the stationary distribution of a small instance");
  eq->add_option("instance", instance, "Instance JSON")->required()->check(CLI::ExistingFile);
  eq->add_option("--steps", steps, "Simulated revision steps");
  eq->add_option("--burn-in", burn_in, "Discarded initial steps");
  auto* plot = app.add_subcommand("plot", "Render SVG figures from result directories");
  plot->add_option("dirs", result_dirs, "Result directories")->required()->check(CLI::ExistingDirectory);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitValidation;
  }

  try {
    if (*run) return cmd_run(g, scenario);
    if (*cal) return cmd_calibrate(g, strata);
    if (*eq) return cmd_equilibrium(g, instance, steps, burn_in);
    if (*plot) return cmd_plot(g, result_dirs);
  } catch (const drsim::ValidationError& e) {
    fmt::print(stderr, "validation error: {}\n", e.what());
    return kExitValidation;
  } catch (const drsim::ParameterError& e) {
    fmt::print(stderr, "parameter error: {}\n", e.what());
    return kExitValidation;
  } catch (const std::exception& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return kExitRuntime;
  }
  return 0;
}
