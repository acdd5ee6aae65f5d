#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "drsim/game.hpp"

namespace drsim {

/// Homogeneous single-population game: N identical agents choosing among K
/// duty levels against shared preference, elasticity, valuation and price.
struct SmallInstance {
  std::size_t agents = 4;
  std::vector<double> levels{0.0, 1.0};
  double theta = 0.5;
  double elasticity = 0.2;
  double valuation = 1.0;
  double energy_per_duty = 1.0;  ///< q = level * energy_per_duty
  PriceModel price;
  double eta = 0.1;

  std::size_t strategies() const { return levels.size(); }
  double energy(std::size_t k) const { return levels[k] * energy_per_duty; }
  void validate() const;
};

/// Population composition as agent counts per strategy (N * x_k).
using Composition = std::vector<int>;

inline constexpr std::size_t kMaxEnumeratedStates = 100000;

/// binomial(N + K - 1, K - 1), saturating at SIZE_MAX.
std::size_t state_space_size(std::size_t agents, std::size_t strategies);

/// All compositions in lexicographically decreasing order of the first
/// strategy's count, e.g. (2,0), (1,1), (0,2).
std::vector<Composition> enumerate_compositions(std::size_t agents, std::size_t strategies);

/// Sum over agents of alpha * theta_signal - beta(Q(x)) * q.
double potential_value(const SmallInstance& inst, const Composition& x);

/// Payoff of an agent currently playing k in state x.
double clever_fitness(const SmallInstance& inst, const Composition& x, std::size_t k);

struct DerivativeViolation {
  Composition state;
  std::size_t strategy = 0;
  double difference = 0.0;  ///< f(x) - f(x - e_k/N)
  double fitness = 0.0;
};

struct DerivativeReport {
  std::size_t checked = 0;
  double max_violation = 0.0;
  std::vector<DerivativeViolation> violations;  ///< entries above tol
};

/// f(x) - f(x - e_k/N) against the agent's fitness for each occupied k.
DerivativeReport check_discrete_derivative(const SmallInstance& inst, double tol = 1e-9);
DerivativeReport check_discrete_derivative(const SmallInstance& inst, const std::vector<Composition>& states,
                                           double tol = 1e-9);

struct StationaryDistribution {
  std::vector<Composition> states;
  std::vector<double> probabilities;
  double log_normalizer = 0.0;  ///< log K^N

  std::size_t index_of(const Composition& x) const;
};

/// mu_x proportional to N!/prod(N x_k)! * exp(f(x)/eta), in log space.
StationaryDistribution stationary_distribution(const SmallInstance& inst);

/// Dense row-stochastic matrix of the revision chain over the enumerated
/// states: a uniformly drawn agent, a candidate drawn as in the simulator, and
/// acceptance min(1, rho/R).
std::vector<std::vector<double>> build_transition_matrix(const SmallInstance& inst,
                                                         const std::vector<Composition>& states,
                                                         const ProtocolParams& protocol);

/// Normalized left eigenvector for eigenvalue 1.
std::vector<double> stationary_left_eigenvector(const std::vector<std::vector<double>>& transition);

struct DetailedBalanceReport {
  std::size_t pairs = 0;
  double max_violation = 0.0;
};

DetailedBalanceReport check_detailed_balance(const StationaryDistribution& mu,
                                             const std::vector<std::vector<double>>& transition);

/// Long-run visit frequencies of the simulator on the instance.
std::vector<double> empirical_distribution(const SmallInstance& inst, const std::vector<Composition>& states,
                                           const ProtocolParams& protocol, std::uint64_t steps,
                                           std::uint64_t burn_in, std::uint64_t seed);

double total_variation(const std::vector<double>& p, const std::vector<double>& q);

/// Converts an instance to a one-period game the simulator can run.
PeriodGame instance_game(const SmallInstance& inst);

struct EquilibriumAnalysis {
  SmallInstance instance;
  ProtocolParams protocol;
  StationaryDistribution predicted;
  std::vector<double> eigenvector;
  std::vector<double> empirical;
  std::vector<double> empirical_second;
  double eigen_gap = 0.0;
  double tv_empirical = 0.0;
  double tv_between_seeds = 0.0;
  DerivativeReport derivative;
  DetailedBalanceReport balance;
  std::uint64_t steps = 0;
  std::uint64_t burn_in = 0;
};

struct AnalysisOptions {
  std::uint64_t steps = 1000000;
  std::uint64_t burn_in = 10000;
  std::uint64_t seed = 1;
  double delta = 1.0;
};

EquilibriumAnalysis analyze_instance(const SmallInstance& inst, const AnalysisOptions& opts);

SmallInstance load_instance(const std::filesystem::path& path);
void write_analysis_json(std::ostream& out, const EquilibriumAnalysis& analysis);
/// CSV `state,mu_predicted,mu_eigen,mu_empirical` with compositions as `n0|n1|...`.
void write_distribution_csv(std::ostream& out, const EquilibriumAnalysis& analysis);

}  // namespace drsim
