#include "drsim/load_profiles.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>

#include <fmt/format.h>
#include <fmt/ostream.h>

#include "drsim/errors.hpp"
#include "drsim/rng.hpp"

namespace drsim {

TransitionMatrix TransitionMatrix::from_rates(double p_on, double p_off) {
  TransitionMatrix m;
  m.p = {{{1.0 - p_on, p_on}, {p_off, 1.0 - p_off}}};
  m.validate();
  return m;
}

double TransitionMatrix::stationary_on_fraction() const {
  const double a = p_on();
  const double b = p_off();
  if (a + b <= 0.0) return 0.0;  // both states absorbing; a chain started OFF stays OFF
  return a / (a + b);
}

void TransitionMatrix::validate(double tol) const {
  for (const auto& row : p) {
    for (double v : row) {
      if (!(v >= 0.0 && v <= 1.0)) throw ParameterError(fmt::format("transition probability {} outside [0,1]", v));
    }
    if (std::abs(row[0] + row[1] - 1.0) > tol) throw ParameterError("transition matrix row does not sum to 1");
  }
}

void DeviceModel::validate() const {
  if (!(nominal_power_kw > 0.0)) throw ParameterError(fmt::format("device '{}' needs positive nominal power", name));
  trans.validate();
}

std::vector<DeviceModel> default_device_catalog() {
  // Stationary ON fractions: 0.92, 0.42, 0.40, 0.048, 0.17 -> about 67 kWh/week.
  return {
      {"refrigeration", 0.15, TransitionMatrix::from_rates(0.60, 0.05)},
      {"lighting", 0.12, TransitionMatrix::from_rates(0.25, 0.35)},
      {"entertainment", 0.20, TransitionMatrix::from_rates(0.20, 0.30)},
      {"laundry", 0.60, TransitionMatrix::from_rates(0.03, 0.60)},
      {"climate", 0.60, TransitionMatrix::from_rates(0.06, 0.30)},
  };
}

double LoadProfile::device_energy_kwh(std::size_t device) const {
  std::size_t on = 0;
  for (DeviceState s : states[device]) on += s == DeviceState::on;
  return static_cast<double>(on) * nominal_power_kw[device] * resolution_h;
}

double LoadProfile::energy_kwh() const { return energy_kwh(0, horizon); }

double LoadProfile::energy_kwh(std::size_t begin, std::size_t end) const {
  double total = 0.0;
  for (std::size_t d = 0; d < states.size(); ++d) {
    std::size_t on = 0;
    for (std::size_t t = begin; t < end; ++t) on += states[d][t] == DeviceState::on;
    total += static_cast<double>(on) * nominal_power_kw[d] * resolution_h;
  }
  return total;
}

void StratumTarget::validate() const {
  if (stratum < 1 || stratum > 6) throw ParameterError(fmt::format("stratum {} outside 1..6", stratum));
  if (!(goal_energy_kwh > 0.0)) throw ParameterError("goal energy must be positive");
  if (!(tol_kwh > 0.0)) throw ParameterError("calibration tolerance must be positive");
}

TransitionMatrix mle_estimate_transitions(std::span<const DeviceState> sequence) {
  if (sequence.size() < 2) throw ParameterError("transition estimation needs at least two samples");
  std::array<std::array<double, 2>, 2> counts{};
  for (std::size_t t = 1; t < sequence.size(); ++t) {
    counts[static_cast<int>(sequence[t - 1])][static_cast<int>(sequence[t])] += 1.0;
  }
  TransitionMatrix m;
  for (int s = 0; s < 2; ++s) {
    const double out = counts[s][0] + counts[s][1];
    if (out == 0.0) {
      m.p[s] = {0.0, 0.0};
      m.p[s][s] = 1.0;
    } else {
      m.p[s] = {counts[s][0] / out, counts[s][1] / out};
    }
  }
  return m;
}

namespace {

void fill_chain(const TransitionMatrix& trans, Rng& rng, std::span<DeviceState> out) {
  DeviceState s = DeviceState::off;
  for (auto& slot : out) {
    slot = s;
    const double u = uniform01(rng);
    if (s == DeviceState::off) {
      s = u < trans.p_on() ? DeviceState::on : DeviceState::off;
    } else {
      s = u < trans.p_off() ? DeviceState::off : DeviceState::on;
    }
  }
}

std::size_t count_on(const TransitionMatrix& trans, std::size_t horizon, std::uint64_t seed) {
  Rng rng(seed);
  DeviceState s = DeviceState::off;
  std::size_t on = 0;
  for (std::size_t t = 0; t < horizon; ++t) {
    on += s == DeviceState::on;
    const double u = uniform01(rng);
    if (s == DeviceState::off) {
      s = u < trans.p_on() ? DeviceState::on : DeviceState::off;
    } else {
      s = u < trans.p_off() ? DeviceState::off : DeviceState::on;
    }
  }
  return on;
}

TransitionMatrix perturb(const TransitionMatrix& m, bool increase, double delta, const CalibrationOptions& opts) {
  const double sign = increase ? 1.0 : -1.0;
  const double p_on = std::clamp(m.p_on() + sign * delta, opts.clamp_lo, opts.clamp_hi);
  const double p_off = std::clamp(m.p_off() - sign * delta / 2.0, opts.clamp_lo, opts.clamp_hi);
  return TransitionMatrix::from_rates(p_on, p_off);
}

}  // namespace

std::vector<DeviceState> generate_device_chain(const DeviceModel& device, std::size_t horizon, std::uint64_t seed) {
  std::vector<DeviceState> chain(horizon);
  Rng rng(seed);
  fill_chain(device.trans, rng, chain);
  return chain;
}

double chain_energy_kwh(std::span<const DeviceState> chain, double nominal_power_kw, double resolution_h) {
  const auto on = std::count(chain.begin(), chain.end(), DeviceState::on);
  return static_cast<double>(on) * nominal_power_kw * resolution_h;
}

double expected_energy_kwh(const DeviceModel& device, std::size_t horizon, double resolution_h) {
  // P(ON at t | OFF at 0) = pi (1 - lambda^t), lambda = 1 - p_on - p_off.
  const double pi = device.trans.stationary_on_fraction();
  const double lambda = 1.0 - device.trans.p_on() - device.trans.p_off();
  const double h = static_cast<double>(horizon);
  double on_steps = 0.0;
  if (std::abs(1.0 - lambda) < 1e-15) {
    on_steps = 0.0;
  } else {
    on_steps = pi * (h - (1.0 - std::pow(lambda, h)) / (1.0 - lambda));
  }
  return on_steps * device.nominal_power_kw * resolution_h;
}

CalibrationResult matrix_adjust(const TransitionMatrix& trans_ref, const StratumTarget& target,
                                const DeviceModel& device, const CalibrationOptions& opts, std::uint64_t seed) {
  trans_ref.validate();
  target.validate();
  if (!(opts.delta > 0.0 && opts.delta < 0.5)) throw ParameterError("calibration delta must lie in (0, 0.5)");
  if (opts.num_test == 0) throw ParameterError("num_test must be positive");

  CalibrationResult result;
  if (target.stratum > 4) result.initial_increase = true;
  if (target.stratum < 4) result.initial_increase = false;

  CalibrationResult best;
  double best_gap = std::numeric_limits<double>::infinity();

  TransitionMatrix trial = trans_ref;
  bool increase = result.initial_increase.value_or(true);
  double delta = opts.delta;
  for (std::size_t iter = 1; iter <= opts.max_iterations; ++iter) {
    if (iter > 1) trial = perturb(trial, increase, delta, opts);

    // The same test seeds are reused every iteration so successive averages
    // differ only through the matrix.
    double sum = 0.0;
    for (std::size_t i = 0; i < opts.num_test; ++i) {
      const std::size_t on = count_on(trial, opts.horizon, derive_seed(seed, "calibration-test", i));
      sum += static_cast<double>(on) * device.nominal_power_kw * opts.resolution_h;
    }
    const double avg = sum / static_cast<double>(opts.num_test);
    result.energy_trace.push_back(avg);

    const double gap = std::abs(target.goal_energy_kwh - avg);
    if (gap < best_gap) {
      best_gap = gap;
      best.matrix = trial;
      best.iterations = iter;
      best.mean_energy_kwh = avg;
    }
    if (gap <= target.tol_kwh) {
      result.matrix = trial;
      result.iterations = iter;
      result.converged = true;
      result.mean_energy_kwh = avg;
      return result;
    }
    const bool next = target.goal_energy_kwh > avg;
    if (opts.halve_on_reversal && iter > 1 && next != increase) delta /= 2.0;
    increase = next;
  }
  best.initial_increase = result.initial_increase;
  best.energy_trace = result.energy_trace;
  throw CalibrationError(fmt::format("device '{}' did not reach {:.3f} +/- {:.3f} kWh for stratum {} in {} iterations "
                                     "(best {:.3f} kWh)",
                                     device.name, target.goal_energy_kwh, target.tol_kwh, target.stratum,
                                     opts.max_iterations, best.mean_energy_kwh),
                         std::move(best));
}

std::map<std::string, CalibrationResult> calibrate_stratum(std::span<const DeviceModel> reference,
                                                           const StratumTarget& target,
                                                           const CalibrationOptions& opts, std::uint64_t seed) {
  target.validate();
  double total = 0.0;
  std::vector<double> expected;
  for (const auto& d : reference) {
    d.validate();
    expected.push_back(expected_energy_kwh(d, opts.horizon, opts.resolution_h));
    total += expected.back();
  }
  if (!(total > 0.0)) throw ParameterError("reference devices consume no energy");

  // Start from reference-energy shares; a device whose share lies outside
  // what the clamped matrices can reach is pinned near its bound and the
  // remainder is spread over the others.
  const std::size_t n = reference.size();
  std::vector<double> lo(n), hi(n), goal(n, 0.0);
  for (std::size_t d = 0; d < n; ++d) {
    DeviceModel extreme = reference[d];
    extreme.trans = TransitionMatrix::from_rates(opts.clamp_lo, opts.clamp_hi);
    lo[d] = 1.5 * expected_energy_kwh(extreme, opts.horizon, opts.resolution_h);
    extreme.trans = TransitionMatrix::from_rates(opts.clamp_hi, opts.clamp_lo);
    hi[d] = 0.95 * expected_energy_kwh(extreme, opts.horizon, opts.resolution_h);
  }
  std::vector<char> pinned(n, 0);
  for (std::size_t round = 0; round <= n; ++round) {
    double free_total = 0.0, remaining = target.goal_energy_kwh;
    for (std::size_t d = 0; d < n; ++d) {
      if (pinned[d]) remaining -= goal[d];
      else free_total += expected[d];
    }
    bool changed = false;
    for (std::size_t d = 0; d < n; ++d) {
      if (pinned[d]) continue;
      goal[d] = free_total > 0.0 ? remaining * expected[d] / free_total : 0.0;
    }
    for (std::size_t d = 0; d < n; ++d) {
      if (pinned[d]) continue;
      if (goal[d] > hi[d] || goal[d] < lo[d]) {
        goal[d] = std::clamp(goal[d], lo[d], hi[d]);
        pinned[d] = 1;
        changed = true;
      }
    }
    if (!changed) break;
  }

  std::map<std::string, CalibrationResult> out;
  for (std::size_t d = 0; d < n; ++d) {
    const double share = goal[d] / target.goal_energy_kwh;
    StratumTarget device_target{target.stratum, goal[d], target.tol_kwh * share};
    out.emplace(reference[d].name,
                matrix_adjust(reference[d].trans, device_target, reference[d], opts,
                              derive_seed(seed, "calibrate-device", static_cast<std::uint64_t>(target.stratum) * 64 + d)));
  }
  return out;
}

std::vector<DeviceModel> estimate_reference_devices(std::span<const DeviceModel> catalog, std::size_t sample_hours,
                                                    std::uint64_t seed) {
  std::vector<DeviceModel> out;
  for (std::size_t d = 0; d < catalog.size(); ++d) {
    const auto sample = generate_device_chain(catalog[d], sample_hours, derive_seed(seed, "reference-sample", d));
    DeviceModel est = catalog[d];
    est.trans = mle_estimate_transitions(sample);
    out.push_back(std::move(est));
  }
  return out;
}

std::vector<LoadProfile> build_population_profiles(const std::map<int, std::size_t>& strata_mix,
                                                   std::span<const DeviceModel> devices,
                                                   const CalibrationTable& calibration, std::size_t horizon,
                                                   double resolution_h, std::uint64_t seed) {
  std::vector<LoadProfile> out;
  std::size_t household = 0;
  for (const auto& [stratum, count] : strata_mix) {
    const auto table = calibration.find(stratum);
    if (count > 0 && table == calibration.end()) {
      throw ValidationError(fmt::format("no calibrated matrices for stratum {}", stratum));
    }
    for (std::size_t c = 0; c < count; ++c, ++household) {
      LoadProfile p;
      p.resolution_h = resolution_h;
      p.horizon = horizon;
      p.stratum = stratum;
      for (std::size_t d = 0; d < devices.size(); ++d) {
        const auto it = table->second.find(devices[d].name);
        if (it == table->second.end()) {
          throw ValidationError(fmt::format("no calibrated matrix for device '{}' in stratum {}", devices[d].name, stratum));
        }
        DeviceModel calibrated = devices[d];
        calibrated.trans = it->second.matrix;
        p.device_names.push_back(devices[d].name);
        p.nominal_power_kw.push_back(devices[d].nominal_power_kw);
        p.states.push_back(generate_device_chain(
            calibrated, horizon, derive_seed(seed, "household-profile", household * devices.size() + d)));
      }
      out.push_back(std::move(p));
    }
  }
  return out;
}

PreferenceMatrix extract_preferences(std::span<const LoadProfile> profiles, double game_resolution_h) {
  PreferenceMatrix prefs;
  for (const auto& p : profiles) {
    const double ratio = game_resolution_h / p.resolution_h;
    const auto per_period = static_cast<std::size_t>(std::llround(ratio));
    if (per_period == 0 || std::abs(ratio - static_cast<double>(per_period)) > 1e-9) {
      throw ParameterError(fmt::format("game resolution {} h is not a multiple of profile resolution {} h",
                                       game_resolution_h, p.resolution_h));
    }
    if (p.horizon % per_period != 0) {
      throw ParameterError(fmt::format("profile horizon {} is not a whole number of {}-sample periods", p.horizon, per_period));
    }
    const std::size_t periods = p.horizon / per_period;
    std::vector<std::vector<double>> household(p.states.size(), std::vector<double>(periods, 0.0));
    for (std::size_t d = 0; d < p.states.size(); ++d) {
      for (std::size_t t = 0; t < periods; ++t) {
        std::size_t on = 0;
        for (std::size_t s = t * per_period; s < (t + 1) * per_period; ++s) on += p.states[d][s] == DeviceState::on;
        household[d][t] = static_cast<double>(on) / static_cast<double>(per_period);
      }
    }
    prefs.theta.push_back(std::move(household));
  }
  return prefs;
}

void write_profiles_csv(std::ostream& out, std::span<const LoadProfile> profiles) {
  out << "household,device,period,state,kW\n";
  for (std::size_t h = 0; h < profiles.size(); ++h) {
    const auto& p = profiles[h];
    for (std::size_t d = 0; d < p.states.size(); ++d) {
      for (std::size_t t = 0; t < p.horizon; ++t) {
        const bool on = p.states[d][t] == DeviceState::on;
        fmt::print(out, "{},{},{},{},{}\n", h, p.device_names[d], t, on ? "ON" : "OFF",
                   on ? p.nominal_power_kw[d] : 0.0);
      }
    }
  }
}

void write_calibration_json(std::ostream& out, const CalibrationTable& table) {
  // Hand-written to keep key order and number formatting stable.
  out << "{\n  \"strata\": {";
  bool first_stratum = true;
  for (const auto& [stratum, devices] : table) {
    fmt::print(out, "{}\n    \"{}\": {{", first_stratum ? "" : ",", stratum);
    first_stratum = false;
    bool first_device = true;
    for (const auto& [name, r] : devices) {
      fmt::print(out,
                 "{}\n      \"{}\": {{\"matrix\": [[{:.12g}, {:.12g}], [{:.12g}, {:.12g}]], \"p_on\": {:.12g}, "
                 "\"p_off\": {:.12g}, \"iterations\": {}, \"converged\": {}, \"mean_energy_kwh\": {:.6f}}}",
                 first_device ? "" : ",", name, r.matrix.p[0][0], r.matrix.p[0][1], r.matrix.p[1][0], r.matrix.p[1][1],
                 r.matrix.p_on(), r.matrix.p_off(), r.iterations, r.converged ? "true" : "false", r.mean_energy_kwh);
      first_device = false;
    }
    out << "\n    }";
  }
  out << "\n  }\n}\n";
}

}  // namespace drsim
