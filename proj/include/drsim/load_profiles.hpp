#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace drsim {

enum class DeviceState : std::uint8_t { off = 0, on = 1 };

/// Row-stochastic 2x2 matrix over {OFF, ON}; entry (s, s') is P(s -> s').
struct TransitionMatrix {
  std::array<std::array<double, 2>, 2> p{{{1.0, 0.0}, {0.0, 1.0}}};

  static TransitionMatrix from_rates(double p_on, double p_off);

  double operator()(DeviceState from, DeviceState to) const {
    return p[static_cast<int>(from)][static_cast<int>(to)];
  }
  /// P(OFF -> ON)
  double p_on() const { return p[0][1]; }
  /// P(ON -> OFF)
  double p_off() const { return p[1][0]; }

  /// Long-run fraction of steps spent ON.
  double stationary_on_fraction() const;

  void validate(double tol = 1e-12) const;

  friend bool operator==(const TransitionMatrix&, const TransitionMatrix&) = default;
};

struct DeviceModel {
  std::string name;
  double nominal_power_kw = 0.0;
  TransitionMatrix trans;

  double power(DeviceState s) const { return s == DeviceState::on ? nominal_power_kw : 0.0; }
  void validate() const;
};

/// Default five-device household. Nominal power is the mean draw in an hour
/// the device is in use; matrices describe a stratum-4 household at hourly
/// resolution.
std::vector<DeviceModel> default_device_catalog();

/// Hourly (or other fixed-resolution) ON/OFF samples for one household.
struct LoadProfile {
  double resolution_h = 1.0;
  std::size_t horizon = 0;  ///< number of samples per device
  int stratum = 4;
  std::vector<std::string> device_names;
  std::vector<double> nominal_power_kw;
  std::vector<std::vector<DeviceState>> states;  ///< [device][sample]

  double device_energy_kwh(std::size_t device) const;
  double energy_kwh() const;
  /// Energy in sample window [begin, end) summed over devices.
  double energy_kwh(std::size_t begin, std::size_t end) const;
};

struct StratumTarget {
  int stratum = 4;
  double goal_energy_kwh = 0.0;  ///< over the calibration horizon
  double tol_kwh = 0.0;

  void validate() const;
};

/// theta[household][device][period] is the preferred duty fraction.
struct PreferenceMatrix {
  std::vector<std::vector<std::vector<double>>> theta;
  std::vector<std::vector<double>> elasticity;  ///< [household][device]

  std::size_t households() const { return theta.size(); }
};

/// Transition counting; unobserved rows stay in-state with probability 1.
TransitionMatrix mle_estimate_transitions(std::span<const DeviceState> sequence);

/// Simulates `horizon` states starting OFF.
std::vector<DeviceState> generate_device_chain(const DeviceModel& device, std::size_t horizon, std::uint64_t seed);

double chain_energy_kwh(std::span<const DeviceState> chain, double nominal_power_kw, double resolution_h);

struct CalibrationOptions {
  std::size_t horizon = 720;  ///< samples per test chain
  double resolution_h = 1.0;
  std::size_t num_test = 30;
  double delta = 0.02;
  std::size_t max_iterations = 500;
  /// Halve delta whenever the search direction reverses; with a fixed step the
  /// iteration can bounce across a target narrower than one step forever.
  bool halve_on_reversal = true;
  double clamp_lo = 0.01;
  double clamp_hi = 0.99;
};

struct CalibrationResult {
  TransitionMatrix matrix;
  std::size_t iterations = 0;
  bool converged = false;
  double mean_energy_kwh = 0.0;  ///< of the accepted iterate
  std::optional<bool> initial_increase;  ///< set from the stratum before the first test
  std::vector<double> energy_trace;      ///< average test energy per iteration
};

class CalibrationError : public std::runtime_error {
 public:
  CalibrationError(const std::string& what, CalibrationResult best)
      : std::runtime_error(what), best_(std::move(best)) {}
  const CalibrationResult& best() const noexcept { return best_; }

 private:
  CalibrationResult best_;
};

/// Iteratively moves P(OFF->ON) by delta (P(ON->OFF) by delta/2 the other
/// way) until the mean energy of `num_test` simulated chains is within
/// target.tol_kwh of target.goal_energy_kwh.
CalibrationResult matrix_adjust(const TransitionMatrix& trans_ref, const StratumTarget& target,
                                const DeviceModel& device, const CalibrationOptions& opts, std::uint64_t seed);

/// Expected energy of a stationary chain over `horizon` samples.
double expected_energy_kwh(const DeviceModel& device, std::size_t horizon, double resolution_h);

/// Per-stratum, per-device matrices keyed by stratum then device name.
using CalibrationTable = std::map<int, std::map<std::string, CalibrationResult>>;

/// Splits a household target over devices by their share of reference energy
/// and calibrates each device.
std::map<std::string, CalibrationResult> calibrate_stratum(std::span<const DeviceModel> reference,
                                                           const StratumTarget& target,
                                                           const CalibrationOptions& opts, std::uint64_t seed);

/// Estimates each device's reference matrix from a synthetic sample profile of
/// `sample_hours` generated by the catalog matrix.
std::vector<DeviceModel> estimate_reference_devices(std::span<const DeviceModel> catalog, std::size_t sample_hours,
                                                    std::uint64_t seed);

/// strata_mix maps stratum -> household count. Households are laid out in
/// ascending stratum order.
std::vector<LoadProfile> build_population_profiles(const std::map<int, std::size_t>& strata_mix,
                                                   std::span<const DeviceModel> devices,
                                                   const CalibrationTable& calibration, std::size_t horizon,
                                                   double resolution_h, std::uint64_t seed);

/// Duty fraction of each game period; elasticity is left empty for the
/// caller to fill.
PreferenceMatrix extract_preferences(std::span<const LoadProfile> profiles, double game_resolution_h);

/// CSV rows `household,device,period,state,kW` with one row per sample.
void write_profiles_csv(std::ostream& out, std::span<const LoadProfile> profiles);
void write_calibration_json(std::ostream& out, const CalibrationTable& table);

}  // namespace drsim
