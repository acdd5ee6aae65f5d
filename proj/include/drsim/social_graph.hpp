#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <vector>

namespace drsim {

/// Weighted influence network. `weight(i, j)` is the credibility agent i gives
/// to neighbor j; rows are stochastic over j != i and the diagonal is zero.
/// Self-confidence and susceptibility are carried per agent.
class SocialGraph {
 public:
  SocialGraph() = default;
  explicit SocialGraph(std::size_t n);

  std::size_t size() const noexcept { return n_; }

  double weight(std::size_t i, std::size_t j) const { return adjacency_[i * n_ + j]; }
  void set_weight(std::size_t i, std::size_t j, double w) { adjacency_[i * n_ + j] = w; }
  std::span<const double> row(std::size_t i) const { return {adjacency_.data() + i * n_, n_}; }

  std::vector<double>& self_confidence() noexcept { return self_confidence_; }
  const std::vector<double>& self_confidence() const noexcept { return self_confidence_; }
  std::vector<double>& susceptibility() noexcept { return susceptibility_; }
  const std::vector<double>& susceptibility() const noexcept { return susceptibility_; }

  /// Neighbors of i (nonzero off-diagonal weight), ascending.
  std::vector<std::size_t> neighbors(std::size_t i) const;

  /// Scales every row to sum to one over its off-diagonal entries.
  void normalize_rows();

  /// Throws ParameterError when a structural invariant is broken.
  void validate(double tol = 1e-12) const;

  bool is_connected() const;

  /// Mean local clustering coefficient of the undirected support graph.
  double clustering_coefficient() const;

  std::size_t undirected_edge_count() const;

 private:
  std::size_t n_ = 0;
  std::vector<double> adjacency_;
  std::vector<double> self_confidence_;
  std::vector<double> susceptibility_;
};

struct WsParams {
  std::size_t n = 40;
  std::size_t k = 4;
  double p_rewire = 0.1;
  std::uint64_t seed = 1;
  double default_self_confidence = 0.5;
  double default_susceptibility = 0.5;
  int max_attempts = 100;
};

/// Watts-Strogatz small-world graph: ring lattice with k/2 neighbors per side,
/// each clockwise edge rewired with probability p_rewire. Regenerated from the
/// next seed stream until connected, at most `max_attempts` times.
SocialGraph generate_ws_graph(const WsParams& params);

/// Opinions of the Friedkin-Johnsen process. The prejudice is the initial
/// opinion.
struct OpinionState {
  std::vector<double> initial;
  std::vector<double> current;
  std::size_t t = 0;

  static OpinionState from_initial(std::vector<double> initial);
};

/// sigma_i(t+1) = (1 - mu_i) sigma_i(0) + mu_i A_ii sigma_i(t)
///              + mu_i (1 - A_ii) sum_j A_ij sigma_j(t)
OpinionState fj_step(const SocialGraph& graph, const OpinionState& state);

struct FjRun {
  OpinionState state;
  std::size_t steps = 0;
  bool converged = false;
  /// Every iterate including the initial one, when recording was requested.
  std::vector<std::vector<double>> trajectory;
};

FjRun fj_run(const SocialGraph& graph, const OpinionState& state, double tol = 1e-8,
             std::size_t max_steps = 10000, bool record = false);

// Edge-list format:
//   # drsim-graph v1
//   # n <n>
//   # node <i> <mu_i> <A_ii>      (one line per node)
//   <i> <j> <weight>              (one line per nonzero off-diagonal weight)
void write_graph(std::ostream& out, const SocialGraph& graph);
SocialGraph read_graph(std::istream& in);
void save_graph(const std::filesystem::path& path, const SocialGraph& graph);
SocialGraph load_graph(const std::filesystem::path& path);

/// CSV with header `step,agent_0,...,agent_{n-1}`.
void write_opinion_trajectory(std::ostream& out, const std::vector<std::vector<double>>& trajectory);

}  // namespace drsim
