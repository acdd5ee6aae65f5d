#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "drsim/game.hpp"
#include "drsim/incentives.hpp"
#include "drsim/load_profiles.hpp"
#include "drsim/social_graph.hpp"

namespace drsim {

inline constexpr int kScenarioSchemaVersion = 1;

/// Initial opinion distribution for one topic.
struct OpinionInit {
  enum class Kind { uniform, beta, constant };
  Kind kind = Kind::uniform;
  double lo = 0.0, hi = 1.0;             ///< uniform
  double mean = 0.5, concentration = 8;  ///< beta
  double value = 0.5;                    ///< constant
};

struct OpinionTopic {
  OpinionInit initial;
  double mu_lo = 0.3, mu_hi = 0.9;        ///< susceptibility range
  double self_lo = 0.2, self_hi = 0.6;    ///< self-confidence range
};

struct StrataConfig {
  std::map<int, std::size_t> mix;         ///< stratum -> household count
  std::map<int, StratumTarget> targets;   ///< per calibration horizon
  CalibrationOptions calibration;
  std::size_t reference_sample_hours = 8760;
};

struct DeviceSpec {
  DeviceModel model;
  std::vector<double> levels;  ///< empty: scenario default grid
};

enum class IncentiveKind { none, financial, social };

std::string to_string(IncentiveKind kind);

struct IncentiveConfig {
  IncentiveKind kind = IncentiveKind::none;
  double gamma_multiple = 0.0;  ///< gamma = gamma_multiple * beta0
  QualifyingRule qualifying;
  int direction = -1;           ///< r_t in qualifying periods
  double eps_flex = 0.0;
};

struct ScenarioConfig {
  std::string name = "scenario";
  std::size_t population = 40;
  std::size_t periods = 28;
  double period_hours = 6.0;
  double profile_resolution_h = 1.0;
  StrataConfig strata;
  std::vector<DeviceSpec> devices;
  std::vector<double> default_levels;  ///< evenly spaced 5-level grid unless set
  WsParams graph;
  OpinionTopic valuation_opinion;
  OpinionTopic dr_opinion;
  double fj_tol = 1e-8;
  std::size_t fj_max_steps = 10000;
  double valuation_factor = 7.0;
  std::vector<double> device_weights;  ///< empty: all 1
  double elasticity_lo = 0.1, elasticity_hi = 0.3;
  PriceModel price;
  ProtocolParams protocol;
  StopRule stop;
  IncentiveConfig incentives;
  std::uint64_t seed = 1;
  std::size_t tracked_household = 0;
  std::size_t threads = 0;  ///< 0: hardware concurrency
  std::vector<std::string> warnings;
  std::string canonical_json;  ///< resolved config, used for hashing

  std::size_t horizon_samples() const;
};

/// Parses and validates a scenario. Defaults are filled; each warning names
/// the defaulted field. Relative `strata` file references resolve against the
/// scenario's directory.
ScenarioConfig load_scenario(const std::filesystem::path& path);
ScenarioConfig parse_scenario(const std::string& json_text, const std::filesystem::path& base_dir = {});
/// Parses a standalone strata file (mix, targets, calibration options).
StrataConfig load_strata(const std::filesystem::path& path);
/// Re-validates after programmatic edits and refreshes canonical_json.
void finalize_scenario(ScenarioConfig& config);

/// Reference matrices and per-stratum calibration for a strata block.
struct CalibrationBundle {
  std::vector<DeviceModel> reference;
  CalibrationTable table;
};

CalibrationBundle run_calibration(const StrataConfig& strata, std::span<const DeviceModel> catalog,
                                  std::uint64_t seed);

struct AccountingRow {
  std::size_t household = 0;
  std::size_t period = 0;
  double financial_bonus = 0.0;
  double social_value = 0.0;
  double utility_at_preference = 0.0;  ///< natural utility at the nearest-to-preference levels
  double utility_at_play = 0.0;        ///< natural utility at the incentivized allocation
};

struct GameRun {
  std::vector<PeriodResult> periods;
  std::vector<double> aggregate;  ///< final Q_t per period
};

struct RunResult {
  ScenarioConfig config;
  std::vector<DeviceModel> reference_devices;
  CalibrationTable calibration;
  std::vector<LoadProfile> profiles;
  PreferenceMatrix preferences;
  std::vector<Household> households;
  std::vector<StrategySet> strategy_sets;
  SocialGraph graph;
  FjRun valuation_opinions;
  FjRun dr_opinions;
  std::vector<std::vector<double>> valuations;  ///< alpha [household][device]
  std::vector<std::uint8_t> engaged;
  std::vector<std::size_t> qualifying;
  std::vector<double> preference_profile;  ///< Q_t implied by theta, kWh
  GameRun natural;
  GameRun incentivized;
  std::vector<AccountingRow> accounting;
  std::uint64_t scenario_hash = 0;
  std::uint64_t result_hash = 0;

  double qualifying_reduction() const;  ///< 1 - incentivized/natural over qualifying periods
  double total_reduction() const;       ///< same over all periods
  double incentive_spend() const;
};

/// Per-period games run on `config.threads` workers; results do not depend
/// on the thread count.
RunResult run_scenario(const ScenarioConfig& config);
/// Same, reusing an already computed calibration for the strata block.
RunResult run_scenario(const ScenarioConfig& config, const CalibrationBundle& calibration);

/// FNV-1a 64.
std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL);

/// Writes the results directory. Returns the written paths.
std::vector<std::filesystem::path> emit_outputs(const RunResult& result, const std::filesystem::path& dir);

struct PlotReport {
  std::vector<std::filesystem::path> written;
  std::vector<std::string> warnings;
};

/// SVG figures under dir/plots.
PlotReport emit_plots(const RunResult& result, const std::filesystem::path& dir);

/// Plots from previously emitted result directories. With several
/// directories, power-evolution traces are overlaid on one axis.
PlotReport plot_result_dirs(const std::vector<std::filesystem::path>& dirs, const std::filesystem::path& out_dir);

}  // namespace drsim
