#include "drsim/equilibrium.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <ostream>

#include <Eigen/Dense>
#include <fmt/format.h>
#include <fmt/ostream.h>
#include <json.hpp>

#include "drsim/errors.hpp"
#include "drsim/preference.hpp"
#include "drsim/rng.hpp"

namespace drsim {

void SmallInstance::validate() const {
  if (agents == 0) throw ParameterError("instance needs at least one agent");
  if (levels.empty()) throw ParameterError("instance needs at least one strategy");
  StrategySet{levels}.validate();
  if (!(elasticity > 0.0)) throw ParameterError("elasticity must be positive");
  if (!(eta > 0.0)) throw ParameterError("eta must be positive");
  if (!(energy_per_duty >= 0.0)) throw ParameterError("energy_per_duty must be nonnegative");
  price.validate();
}

std::size_t state_space_size(std::size_t agents, std::size_t strategies) {
  if (strategies == 0) return 0;
  // C(N+K-1, K-1) built incrementally; each partial product is itself a binomial.
  const std::size_t r = strategies - 1;
  long double value = 1.0L;
  for (std::size_t i = 1; i <= r; ++i) {
    value = value * static_cast<long double>(agents + i) / static_cast<long double>(i);
    if (value > static_cast<long double>(std::numeric_limits<std::size_t>::max() / 2)) {
      return std::numeric_limits<std::size_t>::max();
    }
  }
  return static_cast<std::size_t>(std::llround(value));
}

namespace {

void enumerate_into(std::size_t k, int remaining, Composition& x, std::vector<Composition>& out) {
  if (k + 1 == x.size()) {
    x[k] = remaining;
    out.push_back(x);
    return;
  }
  for (int c = remaining; c >= 0; --c) {
    x[k] = c;
    enumerate_into(k + 1, remaining - c, x, out);
  }
}

double aggregate(const SmallInstance& inst, const Composition& x) {
  double q = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) q += x[k] * inst.energy(k);
  return q;
}

double level_signal(const SmallInstance& inst, std::size_t k) {
  return inst.valuation * theta_signal(inst.levels[k], inst.theta, inst.elasticity);
}

void check_composition(const SmallInstance& inst, const Composition& x) {
  if (x.size() != inst.strategies()) throw ParameterError("composition has the wrong number of strategies");
  long total = 0;
  for (int c : x) {
    if (c < 0) throw ParameterError("negative strategy count");
    total += c;
  }
  if (total != static_cast<long>(inst.agents)) throw ParameterError("composition does not sum to N");
}

std::string composition_key(const Composition& x) {
  std::string s;
  for (std::size_t k = 0; k < x.size(); ++k) {
    if (k) s += '|';
    s += std::to_string(x[k]);
  }
  return s;
}

}  // namespace

std::vector<Composition> enumerate_compositions(std::size_t agents, std::size_t strategies) {
  if (strategies == 0) throw ParameterError("need at least one strategy");
  if (state_space_size(agents, strategies) > kMaxEnumeratedStates) {
    throw CapacityError(fmt::format("state space of N={} K={} exceeds {} states", agents, strategies,
                                    kMaxEnumeratedStates));
  }
  std::vector<Composition> out;
  Composition x(strategies, 0);
  enumerate_into(0, static_cast<int>(agents), x, out);
  return out;
}

double potential_value(const SmallInstance& inst, const Composition& x) {
  check_composition(inst, x);
  const double beta = inst.price.unit_price(aggregate(inst, x));
  double f = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) f += x[k] * (level_signal(inst, k) - beta * inst.energy(k));
  return f;
}

double clever_fitness(const SmallInstance& inst, const Composition& x, std::size_t k) {
  return level_signal(inst, k) - inst.price.unit_price(aggregate(inst, x)) * inst.energy(k);
}

namespace {

// f over a composition that may sum to N - 1 (the removed-agent state).
double partial_potential(const SmallInstance& inst, const Composition& x) {
  const double beta = inst.price.unit_price(aggregate(inst, x));
  double f = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) f += x[k] * (level_signal(inst, k) - beta * inst.energy(k));
  return f;
}

}  // namespace

DerivativeReport check_discrete_derivative(const SmallInstance& inst, const std::vector<Composition>& states,
                                           double tol) {
  inst.validate();
  DerivativeReport report;
  for (const auto& x : states) {
    check_composition(inst, x);
    const double fx = partial_potential(inst, x);
    for (std::size_t k = 0; k < x.size(); ++k) {
      if (x[k] == 0) continue;
      Composition y = x;
      --y[k];
      const double diff = fx - partial_potential(inst, y);
      const double fit = clever_fitness(inst, x, k);
      const double gap = std::abs(diff - fit);
      ++report.checked;
      report.max_violation = std::max(report.max_violation, gap);
      if (gap > tol) report.violations.push_back({x, k, diff, fit});
    }
  }
  return report;
}

DerivativeReport check_discrete_derivative(const SmallInstance& inst, double tol) {
  return check_discrete_derivative(inst, enumerate_compositions(inst.agents, inst.strategies()), tol);
}

std::size_t StationaryDistribution::index_of(const Composition& x) const {
  const auto it = std::find(states.begin(), states.end(), x);
  if (it == states.end()) throw ParameterError("composition not in the state space");
  return static_cast<std::size_t>(it - states.begin());
}

StationaryDistribution stationary_distribution(const SmallInstance& inst) {
  inst.validate();
  StationaryDistribution mu;
  mu.states = enumerate_compositions(inst.agents, inst.strategies());
  std::vector<double> logw(mu.states.size());
  const double log_n_fact = std::lgamma(static_cast<double>(inst.agents) + 1.0);
  for (std::size_t s = 0; s < mu.states.size(); ++s) {
    double lw = log_n_fact;
    for (int c : mu.states[s]) lw -= std::lgamma(static_cast<double>(c) + 1.0);
    logw[s] = lw + potential_value(inst, mu.states[s]) / inst.eta;
  }
  const double top = *std::max_element(logw.begin(), logw.end());
  double sum = 0.0;
  for (double lw : logw) sum += std::exp(lw - top);
  mu.log_normalizer = top + std::log(sum);
  mu.probabilities.resize(logw.size());
  for (std::size_t s = 0; s < logw.size(); ++s) mu.probabilities[s] = std::exp(logw[s] - mu.log_normalizer);
  return mu;
}

std::vector<std::vector<double>> build_transition_matrix(const SmallInstance& inst,
                                                         const std::vector<Composition>& states,
                                                         const ProtocolParams& protocol) {
  inst.validate();
  protocol.validate();
  const std::size_t n = states.size();
  const std::size_t kk = inst.strategies();
  if (n > 5000) throw CapacityError(fmt::format("dense transition matrix over {} states is too large", n));
  std::map<Composition, std::size_t> index;
  for (std::size_t s = 0; s < n; ++s) index[states[s]] = s;

  std::vector<std::vector<double>> p(n, std::vector<double>(n, 0.0));
  const double big_n = static_cast<double>(inst.agents);
  for (std::size_t s = 0; s < n; ++s) {
    const Composition& x = states[s];
    const double q_total = aggregate(inst, x);
    double leave = 0.0;
    for (std::size_t i = 0; i < kk; ++i) {
      if (x[i] == 0) continue;
      const double pick = x[i] / big_n;
      // payoff of staying, and of each level j as if already switched
      std::vector<double> pi(kk);
      for (std::size_t j = 0; j < kk; ++j) {
        const double q_after = q_total - inst.energy(i) + inst.energy(j);
        pi[j] = level_signal(inst, j) - inst.price.unit_price(q_after) * inst.energy(j);
      }
      std::vector<double> move(kk, 0.0);
      if (protocol.kind == ProtocolKind::logit) {
        double z = 0.0;
        const double top = *std::max_element(pi.begin(), pi.end());
        for (double v : pi) z += std::exp((v - top) / protocol.eta);
        for (std::size_t j = 0; j < kk; ++j) {
          if (j != i) move[j] = std::min(1.0, std::exp((pi[j] - top) / protocol.eta) / z / protocol.clock_rate);
        }
      } else if (kk > 1) {
        std::size_t better = 0;
        for (std::size_t j = 0; j < kk; ++j) better += (j != i && pi[j] > pi[i]);
        const double others = static_cast<double>(kk - 1);
        for (std::size_t j = 0; j < kk; ++j) {
          if (j == i) continue;
          double cand = protocol.delta / others;
          if (better == 0) cand += (1.0 - protocol.delta) / others;
          else if (pi[j] > pi[i]) cand += (1.0 - protocol.delta) / static_cast<double>(better);
          double rate;
          if (protocol.kind == ProtocolKind::pairwise_logit) {
            rate = 1.0 / (1.0 + std::exp(-(pi[j] - pi[i]) / protocol.eta));
          } else {
            rate = std::max(0.0, pi[j] - pi[i]);
          }
          move[j] = cand * std::min(1.0, rate / protocol.clock_rate);
        }
      }
      for (std::size_t j = 0; j < kk; ++j) {
        if (j == i || move[j] == 0.0) continue;
        Composition y = x;
        --y[i];
        ++y[j];
        const double prob = pick * move[j];
        p[s][index.at(y)] += prob;
        leave += prob;
      }
    }
    p[s][s] += 1.0 - leave;
  }
  return p;
}

std::vector<double> stationary_left_eigenvector(const std::vector<std::vector<double>>& transition) {
  const auto n = static_cast<Eigen::Index>(transition.size());
  if (n == 0) return {};
  // Solve pi (P - I) = 0 with sum(pi) = 1 replacing the last equation.
  Eigen::MatrixXd a(n, n);
  for (Eigen::Index r = 0; r < n; ++r) {
    for (Eigen::Index c = 0; c < n; ++c) {
      a(r, c) = transition[static_cast<std::size_t>(c)][static_cast<std::size_t>(r)] - (r == c ? 1.0 : 0.0);
    }
  }
  a.row(n - 1).setOnes();
  Eigen::VectorXd b = Eigen::VectorXd::Zero(n);
  b(n - 1) = 1.0;
  const Eigen::VectorXd pi = a.fullPivLu().solve(b);
  return std::vector<double>(pi.data(), pi.data() + n);
}

DetailedBalanceReport check_detailed_balance(const StationaryDistribution& mu,
                                             const std::vector<std::vector<double>>& transition) {
  DetailedBalanceReport r;
  const std::size_t n = mu.states.size();
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t b = a + 1; b < n; ++b) {
      if (transition[a][b] == 0.0 && transition[b][a] == 0.0) continue;
      ++r.pairs;
      const double gap = std::abs(mu.probabilities[a] * transition[a][b] - mu.probabilities[b] * transition[b][a]);
      r.max_violation = std::max(r.max_violation, gap);
    }
  }
  return r;
}

PeriodGame instance_game(const SmallInstance& inst) {
  inst.validate();
  PeriodGame game;
  game.strategy_sets.push_back(StrategySet{inst.levels});
  game.price = inst.price;
  for (std::size_t a = 0; a < inst.agents; ++a) {
    GameAgent g;
    g.household = a;
    g.theta = g.natural_theta = inst.theta;
    g.elasticity = inst.elasticity;
    g.valuation = inst.valuation;
    g.energy_per_duty = inst.energy_per_duty;
    game.agents.push_back(g);
  }
  return game;
}

std::vector<double> empirical_distribution(const SmallInstance& inst, const std::vector<Composition>& states,
                                           const ProtocolParams& protocol, std::uint64_t steps,
                                           std::uint64_t burn_in, std::uint64_t seed) {
  protocol.validate();
  const PeriodGame game = instance_game(inst);
  GameState state = initial_state(game);
  Composition counts(inst.strategies(), 0);
  for (std::size_t lv : state.level) ++counts[lv];
  std::map<Composition, std::size_t> index;
  for (std::size_t s = 0; s < states.size(); ++s) index[states[s]] = s;

  Rng rng(derive_seed(seed, "empirical-distribution"));
  std::vector<double> freq(states.size(), 0.0);
  std::size_t current = index.at(counts);
  for (std::uint64_t t = 0; t < burn_in + steps; ++t) {
    const auto out = revision_step(game, state, protocol, rng);
    if (out.accepted) {
      --counts[out.from];
      ++counts[out.to];
      current = index.at(counts);
    }
    if (t >= burn_in) freq[current] += 1.0;
  }
  if (steps > 0) {
    for (double& f : freq) f /= static_cast<double>(steps);
  }
  return freq;
}

double total_variation(const std::vector<double>& p, const std::vector<double>& q) {
  if (p.size() != q.size()) throw ParameterError("distributions differ in support size");
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) s += std::abs(p[i] - q[i]);
  return 0.5 * s;
}

EquilibriumAnalysis analyze_instance(const SmallInstance& inst, const AnalysisOptions& opts) {
  EquilibriumAnalysis a;
  a.instance = inst;
  a.protocol.kind = ProtocolKind::pairwise_logit;
  a.protocol.eta = inst.eta;
  a.protocol.delta = opts.delta;
  a.steps = opts.steps;
  a.burn_in = opts.burn_in;
  a.predicted = stationary_distribution(inst);
  const auto p = build_transition_matrix(inst, a.predicted.states, a.protocol);
  a.eigenvector = stationary_left_eigenvector(p);
  for (std::size_t s = 0; s < a.eigenvector.size(); ++s) {
    a.eigen_gap = std::max(a.eigen_gap, std::abs(a.eigenvector[s] - a.predicted.probabilities[s]));
  }
  a.balance = check_detailed_balance(a.predicted, p);
  a.derivative = check_discrete_derivative(inst);
  a.empirical = empirical_distribution(inst, a.predicted.states, a.protocol, opts.steps, opts.burn_in, opts.seed);
  a.empirical_second =
      empirical_distribution(inst, a.predicted.states, a.protocol, opts.steps, opts.burn_in, mix64(opts.seed + 1));
  a.tv_empirical = total_variation(a.empirical, a.predicted.probabilities);
  a.tv_between_seeds = total_variation(a.empirical, a.empirical_second);
  return a;
}

SmallInstance load_instance(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError(fmt::format("{}: {}", path.string(), e.what()));
  }
  SmallInstance inst;
  try {
    inst.agents = j.at("agents").get<std::size_t>();
    if (j.contains("levels")) {
      inst.levels = j.at("levels").get<std::vector<double>>();
    } else if (j.contains("strategies")) {
      inst.levels = StrategySet::evenly_spaced(j.at("strategies").get<std::size_t>()).levels;
    }
    inst.theta = j.value("theta", inst.theta);
    inst.elasticity = j.value("elasticity", inst.elasticity);
    inst.valuation = j.value("valuation", inst.valuation);
    inst.energy_per_duty = j.value("energy_per_duty", inst.energy_per_duty);
    inst.eta = j.value("eta", inst.eta);
    if (j.contains("price")) {
      const auto& pr = j.at("price");
      inst.price.beta0 = pr.value("beta0", inst.price.beta0);
      inst.price.beta1 = pr.value("beta1", inst.price.beta1);
      inst.price.q_ref = pr.value("q_ref", inst.price.q_ref);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(fmt::format("{}: {}", path.string(), e.what()));
  }
  if (inst.agents > 8) throw ValidationError(fmt::format("agents: {} exceeds the small-instance limit of 8", inst.agents));
  if (inst.levels.size() > 5) throw ValidationError("levels: at most 5 strategies");
  try {
    inst.validate();
  } catch (const ParameterError& e) {
    throw ValidationError(e.what());
  }
  return inst;
}

void write_analysis_json(std::ostream& out, const EquilibriumAnalysis& a) {
  nlohmann::ordered_json j;
  const auto& in = a.instance;
  j["instance"] = {{"agents", in.agents},         {"levels", in.levels},
                   {"theta", in.theta},           {"elasticity", in.elasticity},
                   {"valuation", in.valuation},   {"energy_per_duty", in.energy_per_duty},
                   {"eta", in.eta},
                   {"price", {{"beta0", in.price.beta0}, {"beta1", in.price.beta1}, {"q_ref", in.price.q_ref}}}};
  j["protocol"] = {{"kind", to_string(a.protocol.kind)}, {"eta", a.protocol.eta}, {"delta", a.protocol.delta}};
  j["states"] = a.predicted.states.size();
  j["log_normalizer"] = a.predicted.log_normalizer;
  j["derivative_checks"] = a.derivative.checked;
  j["derivative_max_violation"] = a.derivative.max_violation;
  j["derivative_violations"] = a.derivative.violations.size();
  j["detailed_balance_pairs"] = a.balance.pairs;
  j["detailed_balance_max_violation"] = a.balance.max_violation;
  j["eigenvector_max_gap"] = a.eigen_gap;
  j["empirical_steps"] = a.steps;
  j["burn_in"] = a.burn_in;
  j["tv_empirical_vs_predicted"] = a.tv_empirical;
  j["tv_between_seeds"] = a.tv_between_seeds;
  out << j.dump(2) << '\n';
}

void write_distribution_csv(std::ostream& out, const EquilibriumAnalysis& a) {
  out << "state,mu_predicted,mu_eigen,mu_empirical\n";
  for (std::size_t s = 0; s < a.predicted.states.size(); ++s) {
    fmt::print(out, "{},{:.12g},{:.12g},{:.12g}\n", composition_key(a.predicted.states[s]),
               a.predicted.probabilities[s], s < a.eigenvector.size() ? a.eigenvector[s] : 0.0,
               s < a.empirical.size() ? a.empirical[s] : 0.0);
  }
}

}  // namespace drsim
