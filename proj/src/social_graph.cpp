#include "drsim/social_graph.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <queue>
#include <sstream>
#include <string>

#include <fmt/format.h>
#include <fmt/ostream.h>

#include "drsim/errors.hpp"
#include "drsim/rng.hpp"

namespace drsim {

SocialGraph::SocialGraph(std::size_t n)
    : n_(n), adjacency_(n * n, 0.0), self_confidence_(n, 0.5), susceptibility_(n, 0.5) {}

std::vector<std::size_t> SocialGraph::neighbors(std::size_t i) const {
  std::vector<std::size_t> out;
  for (std::size_t j = 0; j < n_; ++j) {
    if (j != i && weight(i, j) > 0.0) out.push_back(j);
  }
  return out;
}

void SocialGraph::normalize_rows() {
  for (std::size_t i = 0; i < n_; ++i) {
    set_weight(i, i, 0.0);
    double sum = 0.0;
    for (std::size_t j = 0; j < n_; ++j) sum += weight(i, j);
    if (sum <= 0.0) throw ParameterError(fmt::format("node {} has no neighbors", i));
    for (std::size_t j = 0; j < n_; ++j) set_weight(i, j, weight(i, j) / sum);
  }
}

void SocialGraph::validate(double tol) const {
  if (self_confidence_.size() != n_ || susceptibility_.size() != n_) {
    throw ParameterError("per-agent parameter vectors must have one entry per node");
  }
  for (std::size_t i = 0; i < n_; ++i) {
    if (weight(i, i) != 0.0) throw ParameterError(fmt::format("nonzero diagonal at node {}", i));
    double sum = 0.0;
    for (std::size_t j = 0; j < n_; ++j) {
      const double w = weight(i, j);
      if (!(w >= 0.0 && w <= 1.0)) throw ParameterError(fmt::format("weight ({}, {}) outside [0,1]", i, j));
      sum += w;
    }
    if (std::abs(sum - 1.0) > tol) {
      throw ParameterError(fmt::format("row {} sums to {} instead of 1", i, sum));
    }
    const double a = self_confidence_[i];
    const double mu = susceptibility_[i];
    if (!(a >= 0.0 && a <= 1.0)) throw ParameterError(fmt::format("self-confidence of node {} outside [0,1]", i));
    if (!(mu >= 0.0 && mu <= 1.0)) throw ParameterError(fmt::format("susceptibility of node {} outside [0,1]", i));
  }
}

bool SocialGraph::is_connected() const {
  if (n_ == 0) return true;
  std::vector<char> seen(n_, 0);
  std::queue<std::size_t> frontier;
  frontier.push(0);
  seen[0] = 1;
  std::size_t count = 1;
  while (!frontier.empty()) {
    const std::size_t i = frontier.front();
    frontier.pop();
    for (std::size_t j = 0; j < n_; ++j) {
      if (seen[j]) continue;
      if (weight(i, j) > 0.0 || weight(j, i) > 0.0) {
        seen[j] = 1;
        ++count;
        frontier.push(j);
      }
    }
  }
  return count == n_;
}

double SocialGraph::clustering_coefficient() const {
  auto linked = [this](std::size_t a, std::size_t b) { return weight(a, b) > 0.0 || weight(b, a) > 0.0; };
  double total = 0.0;
  for (std::size_t i = 0; i < n_; ++i) {
    std::vector<std::size_t> nb;
    for (std::size_t j = 0; j < n_; ++j) {
      if (j != i && linked(i, j)) nb.push_back(j);
    }
    if (nb.size() < 2) continue;
    std::size_t closed = 0;
    for (std::size_t a = 0; a < nb.size(); ++a) {
      for (std::size_t b = a + 1; b < nb.size(); ++b) {
        if (linked(nb[a], nb[b])) ++closed;
      }
    }
    total += 2.0 * static_cast<double>(closed) / static_cast<double>(nb.size() * (nb.size() - 1));
  }
  return n_ == 0 ? 0.0 : total / static_cast<double>(n_);
}

std::size_t SocialGraph::undirected_edge_count() const {
  std::size_t count = 0;
  for (std::size_t i = 0; i < n_; ++i) {
    for (std::size_t j = i + 1; j < n_; ++j) {
      if (weight(i, j) > 0.0 || weight(j, i) > 0.0) ++count;
    }
  }
  return count;
}

namespace {

SocialGraph ws_attempt(const WsParams& p, Rng& rng) {
  const std::size_t n = p.n;
  std::vector<std::vector<char>> adj(n, std::vector<char>(n, 0));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t d = 1; d <= p.k / 2; ++d) {
      const std::size_t j = (i + d) % n;
      adj[i][j] = adj[j][i] = 1;
    }
  }
  // Rewire each clockwise lattice edge (i, i+d) to a uniformly drawn endpoint
  // that is neither i nor already adjacent to i.
  for (std::size_t d = 1; d <= p.k / 2; ++d) {
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t j = (i + d) % n;
      if (!adj[i][j] || !bernoulli(rng, p.p_rewire)) continue;
      std::vector<std::size_t> candidates;
      for (std::size_t m = 0; m < n; ++m) {
        if (m != i && !adj[i][m]) candidates.push_back(m);
      }
      if (candidates.empty()) continue;
      const std::size_t m = candidates[uniform_index(rng, candidates.size())];
      adj[i][j] = adj[j][i] = 0;
      adj[i][m] = adj[m][i] = 1;
    }
  }
  SocialGraph g(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) g.set_weight(i, j, adj[i][j] ? 1.0 : 0.0);
  }
  std::fill(g.self_confidence().begin(), g.self_confidence().end(), p.default_self_confidence);
  std::fill(g.susceptibility().begin(), g.susceptibility().end(), p.default_susceptibility);
  return g;
}

}  // namespace

SocialGraph generate_ws_graph(const WsParams& params) {
  if (params.n < 3) throw ParameterError("Watts-Strogatz graph needs n >= 3");
  if (params.k == 0 || params.k % 2 != 0) throw ParameterError(fmt::format("k must be even and positive (got {})", params.k));
  if (params.k >= params.n) throw ParameterError(fmt::format("k must be < n (k={}, n={})", params.k, params.n));
  if (!(params.p_rewire >= 0.0 && params.p_rewire <= 1.0)) throw ParameterError("p_rewire must lie in [0,1]");

  for (int attempt = 0; attempt < params.max_attempts; ++attempt) {
    Rng rng(derive_seed(params.seed, "ws-graph", static_cast<std::uint64_t>(attempt)));
    SocialGraph g = ws_attempt(params, rng);
    if (g.is_connected()) {
      g.normalize_rows();
      return g;
    }
  }
  throw ParameterError(fmt::format("no connected Watts-Strogatz graph after {} attempts", params.max_attempts));
}

OpinionState OpinionState::from_initial(std::vector<double> initial) {
  OpinionState s;
  s.current = initial;
  s.initial = std::move(initial);
  return s;
}

OpinionState fj_step(const SocialGraph& graph, const OpinionState& state) {
  const std::size_t n = graph.size();
  if (state.current.size() != n || state.initial.size() != n) {
    throw ParameterError(fmt::format("opinion vector has {} entries for a graph of {} nodes", state.current.size(), n));
  }
  OpinionState next;
  next.initial = state.initial;
  next.current.resize(n);
  next.t = state.t + 1;
  const auto& mu = graph.susceptibility();
  const auto& self = graph.self_confidence();
  for (std::size_t i = 0; i < n; ++i) {
    double social = 0.0;
    const auto w = graph.row(i);
    for (std::size_t j = 0; j < n; ++j) social += w[j] * state.current[j];
    next.current[i] = (1.0 - mu[i]) * state.initial[i] + mu[i] * self[i] * state.current[i] +
                      mu[i] * (1.0 - self[i]) * social;
  }
  return next;
}

FjRun fj_run(const SocialGraph& graph, const OpinionState& state, double tol, std::size_t max_steps, bool record) {
  if (!(tol > 0.0)) throw ParameterError("fj_run tolerance must be positive");
  FjRun run;
  run.state = state;
  if (record) run.trajectory.push_back(state.current);
  while (run.steps < max_steps) {
    OpinionState next = fj_step(graph, run.state);
    double change = 0.0;
    for (std::size_t i = 0; i < next.current.size(); ++i) {
      change = std::max(change, std::abs(next.current[i] - run.state.current[i]));
    }
    run.state = std::move(next);
    ++run.steps;
    if (record) run.trajectory.push_back(run.state.current);
    if (change < tol) {
      run.converged = true;
      break;
    }
  }
  return run;
}

void write_graph(std::ostream& out, const SocialGraph& graph) {
  const std::size_t n = graph.size();
  fmt::print(out, "# drsim-graph v1\n# n {}\n", n);
  for (std::size_t i = 0; i < n; ++i) {
    fmt::print(out, "# node {} {:.17g} {:.17g}\n", i, graph.susceptibility()[i], graph.self_confidence()[i]);
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i != j && graph.weight(i, j) != 0.0) fmt::print(out, "{} {} {:.17g}\n", i, j, graph.weight(i, j));
    }
  }
}

SocialGraph read_graph(std::istream& in) {
  std::string line;
  SocialGraph g;
  bool have_n = false;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ls(line);
    if (line[0] == '#') {
      std::string hash, key;
      ls >> hash >> key;
      if (key == "n") {
        std::size_t n = 0;
        if (!(ls >> n)) throw IoError(fmt::format("graph line {}: malformed node count", line_no));
        g = SocialGraph(n);
        have_n = true;
      } else if (key == "node") {
        std::size_t i = 0;
        double mu = 0.0, self = 0.0;
        if (!have_n || !(ls >> i >> mu >> self) || i >= g.size()) {
          throw IoError(fmt::format("graph line {}: malformed node record", line_no));
        }
        g.susceptibility()[i] = mu;
        g.self_confidence()[i] = self;
      }
      continue;
    }
    std::size_t i = 0, j = 0;
    double w = 0.0;
    if (!have_n || !(ls >> i >> j >> w) || i >= g.size() || j >= g.size()) {
      throw IoError(fmt::format("graph line {}: malformed edge", line_no));
    }
    g.set_weight(i, j, w);
  }
  if (!have_n) throw IoError("graph file lacks '# n' header");
  return g;
}

void save_graph(const std::filesystem::path& path, const SocialGraph& graph) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string());
  write_graph(out, graph);
}

SocialGraph load_graph(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  return read_graph(in);
}

void write_opinion_trajectory(std::ostream& out, const std::vector<std::vector<double>>& trajectory) {
  const std::size_t n = trajectory.empty() ? 0 : trajectory.front().size();
  out << "step";
  for (std::size_t i = 0; i < n; ++i) fmt::print(out, ",agent_{}", i);
  out << '\n';
  for (std::size_t s = 0; s < trajectory.size(); ++s) {
    out << s;
    for (double v : trajectory[s]) fmt::print(out, ",{:.10f}", v);
    out << '\n';
  }
}

}  // namespace drsim
