#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "drsim/rng.hpp"

namespace drsim {

/// Ordered duty fractions an agent may play. Always contains 0.
struct StrategySet {
  std::vector<double> levels;

  /// {0, 1/(count-1), ..., 1}; count >= 2.
  static StrategySet evenly_spaced(std::size_t count);
  static StrategySet binary() { return evenly_spaced(2); }

  std::size_t size() const noexcept { return levels.size(); }
  double operator[](std::size_t k) const { return levels[k]; }
  /// Index of the level closest to `duty`; ties resolve to the lower level.
  std::size_t nearest(double duty) const;
  void validate() const;
};

/// Affine unit price beta(Q) = beta0 + beta1 * Q / q_ref.
struct PriceModel {
  double beta0 = 1.0;
  double beta1 = 0.0;
  double q_ref = 1.0;

  double unit_price(double aggregate_kwh) const { return beta0 + beta1 * aggregate_kwh / q_ref; }
  void validate() const;
};

enum class ProtocolKind { pairwise_comparison, pairwise_logit, logit };

std::string to_string(ProtocolKind kind);
ProtocolKind protocol_kind_from_string(const std::string& name);

struct ProtocolParams {
  ProtocolKind kind = ProtocolKind::pairwise_logit;
  double eta = 0.14;         ///< noise level
  double delta = 0.1;        ///< probability of an unrestricted (uniform) candidate draw
  double clock_rate = 1.0;   ///< R; switch probability is rate / R

  void validate() const;
};

struct HouseholdDevice {
  std::string name;
  double nominal_power_kw = 0.0;
  std::size_t strategy_set = 0;  ///< index into the strategy-set table
  double elasticity = 0.2;
  double valuation = 1.0;        ///< alpha_i^n
  std::vector<double> theta;     ///< natural preference per period
};

struct Household {
  std::size_t id = 0;
  int stratum = 4;
  double flexibility = 0.0;  ///< eps_flex
  std::vector<HouseholdDevice> devices;
};

/// Incentive inputs for one period.
struct PeriodIncentives {
  double bonus_rate = 0.0;            ///< gamma; zero outside qualifying periods
  int direction = 0;                  ///< r_t
  std::vector<std::uint8_t> engaged;  ///< C per household; empty means nobody enrolled
};

/// One (household, device) player of a period game.
struct GameAgent {
  std::size_t household = 0;
  std::size_t device = 0;
  std::size_t strategy_set = 0;
  double theta = 0.0;            ///< preference the agent optimizes against
  double natural_theta = 0.0;
  double elasticity = 0.2;
  double valuation = 1.0;
  double energy_per_duty = 0.0;  ///< kWh at duty 1 for one period
  double bonus_rate = 0.0;
  double reference_energy = 0.0; ///< q_pref: energy at the level nearest natural_theta
};

struct PeriodGame {
  std::size_t period = 0;
  double resolution_h = 1.0;
  std::vector<StrategySet> strategy_sets;
  std::vector<GameAgent> agents;
  PriceModel price;

  const StrategySet& strategies(std::size_t agent) const { return strategy_sets[agents[agent].strategy_set]; }
};

PeriodGame build_period_game(std::span<const Household> households, std::span<const StrategySet> strategy_sets,
                             std::size_t period, double resolution_h, const PriceModel& price,
                             const PeriodIncentives& incentives = {});

struct GameState {
  std::size_t period = 0;
  std::vector<std::size_t> level;  ///< per agent, index into its strategy set
  std::vector<double> energy;      ///< per agent, kWh
  double aggregate = 0.0;          ///< Q_t, kWh
  std::uint64_t revisions = 0;
  std::uint64_t accepted = 0;

  double duty(const PeriodGame& game, std::size_t agent) const { return game.strategies(agent)[level[agent]]; }
  double recompute_aggregate() const;
};

/// Every agent at the level nearest its natural preference.
GameState initial_state(const PeriodGame& game);
GameState make_state(const PeriodGame& game, std::span<const std::size_t> levels);

enum class PayoffMode { clever, naive };

/// alpha * theta_signal - beta(Q') * q + financial bonus, where Q' is the
/// aggregate as if the agent already played `level` (clever) or the current
/// aggregate (naive).
double agent_fitness(const PeriodGame& game, std::size_t agent, std::size_t level, const GameState& state,
                     PayoffMode mode = PayoffMode::clever);

/// Sum over agents of alpha * theta_signal - beta(Q) * q at the current state.
/// Incentive payments are not part of this objective.
double population_utility(const PeriodGame& game, const GameState& state);

/// [pi_j - pi_i]_+
double switch_rate_pairwise(double pi_i, double pi_j);
/// exp(pi_j/eta) / (exp(pi_j/eta) + exp(pi_i/eta)), evaluated without overflow.
double switch_rate_pairwise_logit(double pi_i, double pi_j, double eta);

/// Probability that a revision opportunity for `agent` ends at each level of
/// its strategy set; the current level holds the probability of staying.
std::vector<double> switch_probabilities(const PeriodGame& game, const GameState& state, std::size_t agent,
                                         const ProtocolParams& protocol);

struct RevisionOutcome {
  std::size_t agent = 0;
  std::size_t from = 0;
  std::size_t to = 0;
  bool accepted = false;
};

/// One ring of the population's Poisson clock: a uniformly chosen agent
/// revises. Energies and the aggregate are updated incrementally.
RevisionOutcome revision_step(const PeriodGame& game, GameState& state, const ProtocolParams& protocol, Rng& rng);

struct StopRule {
  std::size_t window_per_agent = 50;  ///< quiet window = window_per_agent * agent count
  std::size_t max_steps = 200000;
  std::size_t record_every = 100;
};

struct TrajectoryPoint {
  std::uint64_t step = 0;
  double aggregate = 0.0;
  bool accepted = false;  ///< any switch accepted since the previous point
};

struct PeriodResult {
  GameState state;
  std::vector<TrajectoryPoint> trajectory;
  /// Per trajectory point, the clever fitness of each device of the tracked
  /// household at its current level.
  std::vector<std::vector<double>> tracked_fitness;
  bool converged = false;
  std::uint64_t steps = 0;
};

PeriodResult run_period_game(const PeriodGame& game, GameState initial, const ProtocolParams& protocol,
                             const StopRule& stop, std::uint64_t seed,
                             std::optional<std::size_t> tracked_household = std::nullopt);

/// CSV `step,Q_t,accepted`.
void write_trajectory_csv(std::ostream& out, std::span<const TrajectoryPoint> trajectory);

}  // namespace drsim
