#include <cmath>
#include <fstream>

#include <fmt/format.h>
#include <fmt/ostream.h>
#include <json.hpp>

#include "drsim/errors.hpp"
#include "drsim/scenario.hpp"

namespace drsim {

namespace {

std::ofstream open_out(const std::filesystem::path& path, std::vector<std::filesystem::path>& written) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  written.push_back(path);
  return out;
}

void write_allocation(std::ostream& out, const RunResult& r, const GameRun& run) {
  out << "household,device,period,duty,kWh\n";
  for (std::size_t t = 0; t < run.periods.size(); ++t) {
    const GameState& s = run.periods[t].state;
    std::size_t a = 0;
    for (std::size_t h = 0; h < r.households.size(); ++h) {
      for (const auto& dev : r.households[h].devices) {
        const double duty = r.strategy_sets[dev.strategy_set][s.level[a]];
        fmt::print(out, "{},{},{},{:.6f},{:.9f}\n", h, dev.name, t, duty, s.energy[a]);
        ++a;
      }
    }
  }
}

double household_energy(const RunResult& r, const GameRun& run, std::size_t household) {
  double e = 0.0;
  for (const auto& p : run.periods) {
    std::size_t a = 0;
    for (std::size_t h = 0; h < r.households.size(); ++h) {
      for (std::size_t d = 0; d < r.households[h].devices.size(); ++d, ++a) {
        if (h == household) e += p.state.energy[a];
      }
    }
  }
  return e;
}

}  // namespace

std::vector<std::filesystem::path> emit_outputs(const RunResult& r, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError(fmt::format("cannot create {}: {}", dir.string(), ec.message()));
  std::vector<std::filesystem::path> written;
  const auto& c = r.config;

  {
    auto out = open_out(dir / "allocation.csv", written);
    write_allocation(out, r, r.incentivized);
  }
  {
    auto out = open_out(dir / "baseline_allocation.csv", written);
    write_allocation(out, r, r.natural);
  }
  for (std::size_t t = 0; t < r.incentivized.periods.size(); ++t) {
    auto out = open_out(dir / fmt::format("trajectory_{}.csv", t), written);
    write_trajectory_csv(out, r.incentivized.periods[t].trajectory);
  }
  {
    auto out = open_out(dir / "fitness.csv", written);
    out << "period,step";
    if (!r.households.empty()) {
      for (const auto& dev : r.households[c.tracked_household].devices) out << ',' << dev.name;
    }
    out << '\n';
    for (std::size_t t = 0; t < r.incentivized.periods.size(); ++t) {
      const auto& p = r.incentivized.periods[t];
      for (std::size_t i = 0; i < p.tracked_fitness.size(); ++i) {
        fmt::print(out, "{},{}", t, p.trajectory[i].step);
        for (double f : p.tracked_fitness[i]) fmt::print(out, ",{:.9f}", f);
        out << '\n';
      }
    }
  }
  {
    auto out = open_out(dir / "opinions_valuation.csv", written);
    write_opinion_trajectory(out, r.valuation_opinions.trajectory);
  }
  {
    auto out = open_out(dir / "opinions_dr_willingness.csv", written);
    write_opinion_trajectory(out, r.dr_opinions.trajectory);
  }
  {
    auto out = open_out(dir / "incentives.csv", written);
    out << "household,period,financial_bonus,social_incentive,utility_at_preference,utility_at_play\n";
    for (const auto& row : r.accounting) {
      fmt::print(out, "{},{},{:.9f},{:.9f},{:.9f},{:.9f}\n", row.household, row.period, row.financial_bonus,
                 row.social_value, row.utility_at_preference, row.utility_at_play);
    }
  }
  {
    auto out = open_out(dir / "households.csv", written);
    out << "household,stratum,engaged,valuation_opinion,dr_opinion,flexibility,energy_preference_kWh,"
           "energy_natural_kWh,energy_incentivized_kWh\n";
    for (std::size_t h = 0; h < r.households.size(); ++h) {
      double pref = 0.0;
      for (const auto& dev : r.households[h].devices) {
        for (double th : dev.theta) pref += th * dev.nominal_power_kw * c.period_hours;
      }
      fmt::print(out, "{},{},{},{:.10f},{:.10f},{:.6f},{:.9f},{:.9f},{:.9f}\n", h, r.households[h].stratum,
                 static_cast<int>(r.engaged[h]), r.valuation_opinions.state.current[h], r.dr_opinions.state.current[h],
                 r.households[h].flexibility, pref, household_energy(r, r.natural, h),
                 household_energy(r, r.incentivized, h));
    }
  }
  {
    auto out = open_out(dir / "preferences.csv", written);
    out << "household,device,period,theta,elasticity,valuation\n";
    for (std::size_t h = 0; h < r.households.size(); ++h) {
      for (const auto& dev : r.households[h].devices) {
        for (std::size_t t = 0; t < dev.theta.size(); ++t) {
          fmt::print(out, "{},{},{},{:.9f},{:.9f},{:.9f}\n", h, dev.name, t, dev.theta[t], dev.elasticity, dev.valuation);
        }
      }
    }
  }
  {
    auto out = open_out(dir / "profiles.csv", written);
    write_profiles_csv(out, r.profiles);
  }
  {
    auto out = open_out(dir / "calibration.json", written);
    write_calibration_json(out, r.calibration);
  }
  {
    auto out = open_out(dir / "graph.txt", written);
    write_graph(out, r.graph);
  }
  {
    nlohmann::ordered_json j;
    j["scenario"] = c.name;
    j["incentives"] = to_string(c.incentives.kind);
    j["seed"] = c.seed;
    j["scenario_hash"] = fmt::format("{:016x}", r.scenario_hash);
    j["result_hash"] = fmt::format("{:016x}", r.result_hash);
    j["population"] = c.population;
    j["periods"] = c.periods;
    j["period_hours"] = c.period_hours;
    j["qualifying_periods"] = r.qualifying;
    std::vector<std::size_t> engaged_ids;
    for (std::size_t h = 0; h < r.engaged.size(); ++h) {
      if (r.engaged[h]) engaged_ids.push_back(h);
    }
    j["enrolled_households"] = engaged_ids.size();
    auto rounded = [](const std::vector<double>& v) {
      std::vector<double> out;
      for (double x : v) out.push_back(std::round(x * 1e9) / 1e9);
      return out;
    };
    j["energy_preference_kWh"] = rounded(r.preference_profile);
    j["energy_natural_kWh"] = rounded(r.natural.aggregate);
    j["energy_incentivized_kWh"] = rounded(r.incentivized.aggregate);
    double pref = 0.0, nat = 0.0, inc = 0.0;
    for (std::size_t t = 0; t < c.periods; ++t) {
      pref += r.preference_profile[t];
      nat += r.natural.aggregate[t];
      inc += r.incentivized.aggregate[t];
    }
    j["total_preference_kWh"] = pref;
    j["total_natural_kWh"] = nat;
    j["total_incentivized_kWh"] = inc;
    j["reduction_qualifying"] = r.qualifying_reduction();
    j["reduction_total"] = r.total_reduction();
    j["incentive_spend"] = r.incentive_spend();
    double social = 0.0;
    for (const auto& row : r.accounting) social += row.social_value;
    j["social_incentive_value"] = social;
    std::vector<bool> converged;
    std::vector<std::uint64_t> steps;
    for (const auto& p : r.incentivized.periods) {
      converged.push_back(p.converged);
      steps.push_back(p.steps);
    }
    j["converged"] = converged;
    j["steps"] = steps;
    std::vector<bool> nat_converged;
    for (const auto& p : r.natural.periods) nat_converged.push_back(p.converged);
    j["natural_converged"] = nat_converged;
    j["opinion_steps"] = {{"valuation", r.valuation_opinions.steps}, {"dr_willingness", r.dr_opinions.steps}};
    j["warnings"] = c.warnings;
    auto out = open_out(dir / "summary.json", written);
    out << j.dump(2) << '\n';
  }
  {
    auto out = open_out(dir / "scenario.resolved.json", written);
    out << nlohmann::json::parse(c.canonical_json).dump(2) << '\n';
  }
  return written;
}

}  // namespace drsim
