#include "drsim/game.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

#include <fmt/format.h>
#include <fmt/ostream.h>

#include "drsim/errors.hpp"
#include "drsim/incentives.hpp"
#include "drsim/preference.hpp"

namespace drsim {

StrategySet StrategySet::evenly_spaced(std::size_t count) {
  if (count < 2) throw ParameterError("a strategy grid needs at least two levels");
  StrategySet s;
  for (std::size_t k = 0; k < count; ++k) s.levels.push_back(static_cast<double>(k) / static_cast<double>(count - 1));
  return s;
}

std::size_t StrategySet::nearest(double duty) const {
  std::size_t best = 0;
  double best_gap = std::abs(levels[0] - duty);
  for (std::size_t k = 1; k < levels.size(); ++k) {
    const double gap = std::abs(levels[k] - duty);
    if (gap < best_gap - 1e-12) {
      best = k;
      best_gap = gap;
    }
  }
  return best;
}

void StrategySet::validate() const {
  if (levels.empty()) throw ParameterError("strategy set is empty");
  if (levels.front() != 0.0) throw ParameterError("strategy set must contain duty 0");
  for (std::size_t k = 0; k < levels.size(); ++k) {
    if (!(levels[k] >= 0.0 && levels[k] <= 1.0)) throw ParameterError("strategy level outside [0,1]");
    if (k > 0 && !(levels[k] > levels[k - 1])) throw ParameterError("strategy levels must be strictly increasing");
  }
}

void PriceModel::validate() const {
  if (!(beta0 > 0.0)) throw ParameterError("beta0 must be positive");
  if (!(beta1 >= 0.0)) throw ParameterError("beta1 must be nonnegative");
  if (!(q_ref > 0.0)) throw ParameterError("q_ref must be positive");
}

std::string to_string(ProtocolKind kind) {
  switch (kind) {
    case ProtocolKind::pairwise_comparison: return "pairwise-comparison";
    case ProtocolKind::pairwise_logit: return "pairwise-logit";
    case ProtocolKind::logit: return "logit";
  }
  return "unknown";
}

ProtocolKind protocol_kind_from_string(const std::string& name) {
  if (name == "pairwise-comparison") return ProtocolKind::pairwise_comparison;
  if (name == "pairwise-logit") return ProtocolKind::pairwise_logit;
  if (name == "logit") return ProtocolKind::logit;
  throw ParameterError(fmt::format("unknown protocol '{}'", name));
}

void ProtocolParams::validate() const {
  if (!(eta > 0.0)) throw ParameterError("protocol noise eta must be positive");
  if (!(delta > 0.0 && delta <= 1.0)) throw ParameterError("unrestricted-draw probability delta must lie in (0,1]");
  if (!(clock_rate > 0.0)) throw ParameterError("clock rate must be positive");
}

PeriodGame build_period_game(std::span<const Household> households, std::span<const StrategySet> strategy_sets,
                             std::size_t period, double resolution_h, const PriceModel& price,
                             const PeriodIncentives& incentives) {
  price.validate();
  PeriodGame game;
  game.period = period;
  game.resolution_h = resolution_h;
  game.strategy_sets.assign(strategy_sets.begin(), strategy_sets.end());
  game.price = price;
  for (const auto& s : game.strategy_sets) s.validate();

  for (std::size_t h = 0; h < households.size(); ++h) {
    const auto& hh = households[h];
    const int engaged = h < incentives.engaged.size() ? incentives.engaged[h] : 0;
    for (std::size_t d = 0; d < hh.devices.size(); ++d) {
      const auto& dev = hh.devices[d];
      if (period >= dev.theta.size()) {
        throw ParameterError(fmt::format("household {} device '{}' has no preference for period {}", hh.id, dev.name, period));
      }
      if (dev.strategy_set >= game.strategy_sets.size()) throw ParameterError("device refers to unknown strategy set");
      GameAgent a;
      a.household = h;
      a.device = d;
      a.strategy_set = dev.strategy_set;
      a.natural_theta = dev.theta[period];
      a.theta = incentivize_preferences(a.natural_theta, engaged, incentives.direction, hh.flexibility);
      a.elasticity = dev.elasticity;
      a.valuation = dev.valuation;
      a.energy_per_duty = dev.nominal_power_kw * resolution_h;
      a.bonus_rate = incentives.bonus_rate;
      const auto& set = game.strategy_sets[a.strategy_set];
      a.reference_energy = set[set.nearest(a.natural_theta)] * a.energy_per_duty;
      game.agents.push_back(a);
    }
  }
  return game;
}

double GameState::recompute_aggregate() const {
  double total = 0.0;
  for (double q : energy) total += q;
  return total;
}

GameState make_state(const PeriodGame& game, std::span<const std::size_t> levels) {
  if (levels.size() != game.agents.size()) throw ParameterError("one level per agent required");
  GameState s;
  s.period = game.period;
  s.level.assign(levels.begin(), levels.end());
  s.energy.resize(levels.size());
  for (std::size_t a = 0; a < levels.size(); ++a) {
    if (levels[a] >= game.strategies(a).size()) throw ParameterError("level outside the agent's strategy set");
    s.energy[a] = game.strategies(a)[levels[a]] * game.agents[a].energy_per_duty;
  }
  s.aggregate = s.recompute_aggregate();
  return s;
}

GameState initial_state(const PeriodGame& game) {
  std::vector<std::size_t> levels(game.agents.size());
  for (std::size_t a = 0; a < levels.size(); ++a) levels[a] = game.strategies(a).nearest(game.agents[a].natural_theta);
  return make_state(game, levels);
}

double agent_fitness(const PeriodGame& game, std::size_t agent, std::size_t level, const GameState& state,
                     PayoffMode mode) {
  const GameAgent& a = game.agents[agent];
  const double duty = game.strategies(agent)[level];
  const double q = duty * a.energy_per_duty;
  const double aggregate = mode == PayoffMode::clever ? state.aggregate - state.energy[agent] + q : state.aggregate;
  return a.valuation * theta_signal(duty, a.theta, a.elasticity) - game.price.unit_price(aggregate) * q +
         financial_bonus(a.reference_energy, q, a.bonus_rate);
}

double population_utility(const PeriodGame& game, const GameState& state) {
  const double beta = game.price.unit_price(state.aggregate);
  double total = 0.0;
  for (std::size_t i = 0; i < game.agents.size(); ++i) {
    const GameAgent& a = game.agents[i];
    total += a.valuation * theta_signal(state.duty(game, i), a.theta, a.elasticity) - beta * state.energy[i];
  }
  return total;
}

double switch_rate_pairwise(double pi_i, double pi_j) { return std::max(0.0, pi_j - pi_i); }

double switch_rate_pairwise_logit(double pi_i, double pi_j, double eta) {
  if (!(eta > 0.0)) throw ParameterError("eta must be positive");
  // Divide through by the larger exponential.
  const double z = (pi_j - pi_i) / eta;
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

std::vector<double> switch_probabilities(const PeriodGame& game, const GameState& state, std::size_t agent,
                                         const ProtocolParams& protocol) {
  const std::size_t k_count = game.strategies(agent).size();
  const std::size_t current = state.level[agent];
  std::vector<double> probs(k_count, 0.0);
  if (k_count == 1) {
    probs[0] = 1.0;
    return probs;
  }
  std::vector<double> pi(k_count);
  for (std::size_t k = 0; k < k_count; ++k) pi[k] = agent_fitness(game, agent, k, state);

  if (protocol.kind == ProtocolKind::logit) {
    const double top = *std::max_element(pi.begin(), pi.end());
    double norm = 0.0;
    for (std::size_t k = 0; k < k_count; ++k) norm += std::exp((pi[k] - top) / protocol.eta);
    double stay = 1.0;
    for (std::size_t k = 0; k < k_count; ++k) {
      if (k == current) continue;
      probs[k] = std::min(1.0, std::exp((pi[k] - top) / protocol.eta) / norm / protocol.clock_rate);
      stay -= probs[k];
    }
    probs[current] = std::max(0.0, stay);
    return probs;
  }

  // Candidate distribution: with probability delta uniform over the other
  // levels; otherwise uniform over strictly improving levels when any exist.
  const double others = static_cast<double>(k_count - 1);
  std::size_t improving = 0;
  for (std::size_t k = 0; k < k_count; ++k) improving += (k != current && pi[k] > pi[current]);
  double stay = 1.0;
  for (std::size_t k = 0; k < k_count; ++k) {
    if (k == current) continue;
    double candidate = protocol.delta / others;
    if (improving == 0) {
      candidate += (1.0 - protocol.delta) / others;
    } else if (pi[k] > pi[current]) {
      candidate += (1.0 - protocol.delta) / static_cast<double>(improving);
    }
    const double rate = protocol.kind == ProtocolKind::pairwise_logit
                            ? switch_rate_pairwise_logit(pi[current], pi[k], protocol.eta)
                            : switch_rate_pairwise(pi[current], pi[k]);
    probs[k] = candidate * std::min(1.0, rate / protocol.clock_rate);
    stay -= probs[k];
  }
  probs[current] = std::max(0.0, stay);
  return probs;
}

RevisionOutcome revision_step(const PeriodGame& game, GameState& state, const ProtocolParams& protocol, Rng& rng) {
  RevisionOutcome out;
  out.agent = static_cast<std::size_t>(uniform_index(rng, game.agents.size()));
  out.from = out.to = state.level[out.agent];
  ++state.revisions;
  if (game.strategies(out.agent).size() == 1) return out;

  const auto probs = switch_probabilities(game, state, out.agent, protocol);
  const double u = uniform01(rng);
  double cumulative = 0.0;
  for (std::size_t k = 0; k < probs.size(); ++k) {
    if (k == out.from) continue;
    cumulative += probs[k];
    if (u < cumulative) {
      out.to = k;
      break;
    }
  }
  if (out.to != out.from) {
    const double q = game.strategies(out.agent)[out.to] * game.agents[out.agent].energy_per_duty;
    state.aggregate += q - state.energy[out.agent];
    state.energy[out.agent] = q;
    state.level[out.agent] = out.to;
    out.accepted = true;
    ++state.accepted;
  }
  return out;
}

namespace {

std::vector<double> tracked_fitness_row(const PeriodGame& game, const GameState& state, std::size_t household) {
  std::vector<double> row;
  for (std::size_t a = 0; a < game.agents.size(); ++a) {
    if (game.agents[a].household == household) row.push_back(agent_fitness(game, a, state.level[a], state));
  }
  return row;
}

}  // namespace

PeriodResult run_period_game(const PeriodGame& game, GameState initial, const ProtocolParams& protocol,
                             const StopRule& stop, std::uint64_t seed, std::optional<std::size_t> tracked_household) {
  protocol.validate();
  PeriodResult result;
  result.state = std::move(initial);
  Rng rng(seed);

  const std::size_t window = std::max<std::size_t>(1, stop.window_per_agent * game.agents.size());
  const std::size_t every = std::max<std::size_t>(1, stop.record_every);
  auto record = [&](std::uint64_t step, bool accepted) {
    result.trajectory.push_back({step, result.state.aggregate, accepted});
    if (tracked_household) result.tracked_fitness.push_back(tracked_fitness_row(game, result.state, *tracked_household));
  };
  record(0, false);
  if (game.agents.empty()) {
    result.converged = true;
    return result;
  }

  std::size_t quiet = 0;
  bool accepted_since_record = false;
  std::uint64_t step = 0;
  while (step < stop.max_steps) {
    const auto outcome = revision_step(game, result.state, protocol, rng);
    ++step;
    if (outcome.accepted) {
      quiet = 0;
      accepted_since_record = true;
    } else {
      ++quiet;
    }
    const bool done = quiet >= window;
    if (step % every == 0 || done || step == stop.max_steps) {
      record(step, accepted_since_record);
      accepted_since_record = false;
    }
    if (done) {
      result.converged = true;
      break;
    }
  }
  result.steps = step;
  return result;
}

void write_trajectory_csv(std::ostream& out, std::span<const TrajectoryPoint> trajectory) {
  out << "step,Q_t,accepted\n";
  for (const auto& p : trajectory) fmt::print(out, "{},{:.9f},{}\n", p.step, p.aggregate, p.accepted ? 1 : 0);
}

}  // namespace drsim
