#include <doctest.h>

#include <Eigen/Dense>
#include <algorithm>
#include <random>
#include <set>
#include <sstream>

#include "drsim/errors.hpp"
#include "drsim/rng.hpp"
#include "drsim/social_graph.hpp"

using namespace drsim;

namespace {

SocialGraph two_node(double mu1, double mu2, double a1, double a2) {
  SocialGraph g(2);
  g.set_weight(0, 1, 1.0);
  g.set_weight(1, 0, 1.0);
  g.susceptibility() = {mu1, mu2};
  g.self_confidence() = {a1, a2};
  return g;
}

// Mean local clustering of a G(n, m) graph; independent of the library code.
double er_clustering(std::size_t n, std::size_t m, std::mt19937& gen) {
  std::vector<std::pair<std::size_t, std::size_t>> all;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) all.emplace_back(i, j);
  }
  std::shuffle(all.begin(), all.end(), gen);
  std::vector<std::set<std::size_t>> nb(n);
  for (std::size_t e = 0; e < m; ++e) {
    nb[all[e].first].insert(all[e].second);
    nb[all[e].second].insert(all[e].first);
  }
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<std::size_t> v(nb[i].begin(), nb[i].end());
    if (v.size() < 2) continue;
    double closed = 0;
    for (std::size_t a = 0; a < v.size(); ++a) {
      for (std::size_t b = a + 1; b < v.size(); ++b) closed += nb[v[a]].count(v[b]);
    }
    total += 2 * closed / (v.size() * (v.size() - 1.0));
  }
  return total / n;
}

SocialGraph random_fj_graph(std::uint64_t seed) {
  Rng rng(seed);
  WsParams p;
  p.n = 10 + uniform_index(rng, 31);
  p.k = 2 * (1 + uniform_index(rng, 3));
  p.p_rewire = uniform01(rng);
  p.seed = seed;
  SocialGraph g = generate_ws_graph(p);
  for (std::size_t i = 0; i < g.size(); ++i) {
    g.susceptibility()[i] = uniform(rng, 0.0, 0.99);
    g.self_confidence()[i] = uniform01(rng);
  }
  return g;
}

}  // namespace

TEST_CASE("ring lattice without rewiring") {
  WsParams p;
  p.n = 4;
  p.k = 2;
  p.p_rewire = 0.0;
  const SocialGraph g = generate_ws_graph(p);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(g.neighbors(i).size() == 2);
    for (std::size_t j : g.neighbors(i)) CHECK(g.weight(i, j) == doctest::Approx(0.5));
  }
  CHECK_NOTHROW(g.validate());
}

TEST_CASE("full rewiring keeps rows stochastic") {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    WsParams p;
    p.n = 4;
    p.k = 2;
    p.p_rewire = 1.0;
    p.seed = seed;
    const SocialGraph g = generate_ws_graph(p);
    for (std::size_t i = 0; i < g.size(); ++i) {
      double sum = 0;
      for (std::size_t j = 0; j < g.size(); ++j) sum += g.weight(i, j);
      CHECK(std::abs(sum - 1.0) <= 1e-12);
      CHECK(g.weight(i, i) == 0.0);
    }
    CHECK(g.is_connected());
  }
}

TEST_CASE("small-world clustering exceeds a same-density random graph") {
  WsParams p;
  p.seed = 11;
  const SocialGraph g = generate_ws_graph(p);
  const std::size_t m = g.undirected_edge_count();
  CHECK(m == p.n * p.k / 2);
  std::mt19937 gen(12345);
  double er = 0.0;
  for (int s = 0; s < 100; ++s) er += er_clustering(p.n, m, gen);
  er /= 100;
  CHECK(er == doctest::Approx(static_cast<double>(p.k) / p.n).epsilon(0.5));
  CHECK(g.clustering_coefficient() > er);
  CHECK(g.clustering_coefficient() > static_cast<double>(p.k) / p.n);
}

TEST_CASE("unrewired lattice clustering matches the closed form") {
  WsParams p;
  p.n = 30;
  p.k = 6;
  p.p_rewire = 0.0;
  const double expected = 3.0 * (p.k - 2.0) / (4.0 * (p.k - 1.0));
  CHECK(generate_ws_graph(p).clustering_coefficient() == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("invalid graph parameters") {
  WsParams p;
  p.k = 3;
  CHECK_THROWS_AS(generate_ws_graph(p), ParameterError);
  p.k = 40;
  CHECK_THROWS_AS(generate_ws_graph(p), ParameterError);
  p.k = 4;
  p.p_rewire = 1.5;
  CHECK_THROWS_AS(generate_ws_graph(p), ParameterError);
}

TEST_CASE("same seed gives the same graph") {
  WsParams p;
  p.seed = 99;
  const SocialGraph a = generate_ws_graph(p), b = generate_ws_graph(p);
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t j = 0; j < a.size(); ++j) CHECK(a.weight(i, j) == b.weight(i, j));
  }
  p.seed = 100;
  const SocialGraph c = generate_ws_graph(p);
  bool differs = false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t j = 0; j < a.size(); ++j) differs |= a.weight(i, j) != c.weight(i, j);
  }
  CHECK(differs);
}

TEST_CASE("fully stubborn agents never move") {
  SocialGraph g = two_node(0, 0, 0.5, 0.5);
  FjRun run = fj_run(g, OpinionState::from_initial({0.3, 0.9}), 1e-12, 50);
  CHECK(run.state.current[0] == 0.3);
  CHECK(run.state.current[1] == 0.9);
  CHECK(run.converged);
}

TEST_CASE("symmetric averaging reaches its fixed point") {
  const SocialGraph g = two_node(1, 1, 0.5, 0.5);
  const OpinionState s1 = fj_step(g, OpinionState::from_initial({0.0, 1.0}));
  CHECK(s1.current[0] == doctest::Approx(0.5));
  CHECK(s1.current[1] == doctest::Approx(0.5));
  const FjRun run = fj_run(g, OpinionState::from_initial({0.0, 1.0}));
  CHECK(run.converged);
  CHECK(run.steps <= 2);
  CHECK(run.state.current[0] == doctest::Approx(0.5));
}

TEST_CASE("follower copies a stubborn leader") {
  const SocialGraph g = two_node(0, 1, 0.5, 0.0);
  const OpinionState s1 = fj_step(g, OpinionState::from_initial({0.2, 0.8}));
  CHECK(s1.current[0] == doctest::Approx(0.2));
  CHECK(s1.current[1] == doctest::Approx(0.2));
}

TEST_CASE("dimension mismatch is rejected") {
  const SocialGraph g = two_node(1, 1, 0.5, 0.5);
  CHECK_THROWS_AS(fj_step(g, OpinionState::from_initial({0.1, 0.2, 0.3})), ParameterError);
}

TEST_CASE("converged opinions solve the linear fixed-point system") {
  for (std::uint64_t seed = 1; seed <= 25; ++seed) {
    const SocialGraph g = random_fj_graph(seed);
    const std::size_t n = g.size();
    Rng rng(seed * 7);
    std::vector<double> init(n);
    for (double& v : init) v = uniform01(rng);
    const FjRun run = fj_run(g, OpinionState::from_initial(init), 1e-14, 200000);
    REQUIRE(run.converged);

    // (I - M) s = (I - diag(mu)) s0 with M = diag(mu A_ii) + diag(mu (1 - A_ii)) W
    Eigen::MatrixXd a = Eigen::MatrixXd::Identity(n, n);
    Eigen::VectorXd b(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double mu = g.susceptibility()[i], aii = g.self_confidence()[i];
      a(i, i) -= mu * aii;
      for (std::size_t j = 0; j < n; ++j) a(i, j) -= mu * (1 - aii) * g.weight(i, j);
      b(i) = (1 - mu) * init[i];
    }
    const Eigen::VectorXd x = a.partialPivLu().solve(b);
    for (std::size_t i = 0; i < n; ++i) CHECK(std::abs(run.state.current[i] - x(i)) < 1e-9);
  }
}

TEST_CASE("opinions stay inside the initial hull") {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const SocialGraph g = random_fj_graph(seed + 100);
    Rng rng(seed);
    std::vector<double> init(g.size());
    for (double& v : init) v = uniform(rng, 0.2, 0.7);
    const FjRun run = fj_run(g, OpinionState::from_initial(init), 1e-10, 10000, true);
    for (const auto& row : run.trajectory) {
      for (double v : row) {
        CHECK(v >= 0.2 - 1e-12);
        CHECK(v <= 0.7 + 1e-12);
      }
    }
    if (run.converged) {
      const OpinionState next = fj_step(g, run.state);
      double change = 0;
      for (std::size_t i = 0; i < g.size(); ++i) change = std::max(change, std::abs(next.current[i] - run.state.current[i]));
      CHECK(change < 1e-10);
    }
  }
}

TEST_CASE("graph text round trip") {
  WsParams p;
  p.seed = 3;
  SocialGraph g = generate_ws_graph(p);
  g.susceptibility()[5] = 0.123456789;
  g.self_confidence()[7] = 0.987654321;
  std::stringstream ss;
  write_graph(ss, g);
  const SocialGraph back = read_graph(ss);
  REQUIRE(back.size() == g.size());
  for (std::size_t i = 0; i < g.size(); ++i) {
    CHECK(back.susceptibility()[i] == g.susceptibility()[i]);
    CHECK(back.self_confidence()[i] == g.self_confidence()[i]);
    for (std::size_t j = 0; j < g.size(); ++j) CHECK(back.weight(i, j) == g.weight(i, j));
  }
  std::stringstream bad("# n 3\n0 7 0.5\n");
  CHECK_THROWS(read_graph(bad));
}

TEST_CASE("opinion trajectory csv header") {
  std::stringstream ss;
  write_opinion_trajectory(ss, {{0.1, 0.2}, {0.15, 0.18}});
  std::string header;
  std::getline(ss, header);
  CHECK(header == "step,agent_0,agent_1");
}
