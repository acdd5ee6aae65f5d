#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "drsim/errors.hpp"
#include "drsim/game.hpp"
#include "drsim/incentives.hpp"
#include "drsim/rng.hpp"

using namespace drsim;

namespace {

double plain_fitness(double alpha, double x, double theta, double eps, double q, double beta) {
  return alpha * std::exp(-std::abs(x - theta) / eps) - beta * q;
}

}  // namespace

TEST_CASE("valuations from opinions") {
  const std::vector<double> w{1.0};
  CHECK(resolve_valuations(std::vector<double>{1.0}, 7.0, 1.0, w)[0][0] == doctest::Approx(7.0));
  CHECK(resolve_valuations(std::vector<double>{0.0}, 7.0, 1.0, w)[0][0] == doctest::Approx(1.0));
  CHECK(resolve_valuations(std::vector<double>{0.5}, 7.0, 1.0, w)[0][0] == doctest::Approx(3.5));
  CHECK_THROWS_AS(resolve_valuations(std::vector<double>{0.5}, 1.0, 1.0, w), ParameterError);
  CHECK_THROWS_AS(resolve_valuations(std::vector<double>{0.5}, 0.5, 1.0, w), ParameterError);
}

TEST_CASE("valuations stay between cost and the cap") {
  Rng rng(3);
  const std::vector<double> w{0.5, 1.5, 1.0, 0.8, 1.2};
  std::vector<double> sigma(50);
  for (double& s : sigma) s = uniform01(rng);
  const double beta0 = 1.7, f = 5.0;
  const auto alpha = resolve_valuations(sigma, f, beta0, w);
  for (std::size_t i = 0; i < sigma.size(); ++i) {
    for (std::size_t n = 0; n < w.size(); ++n) {
      CHECK(alpha[i][n] >= beta0);
      CHECK(alpha[i][n] <= f * beta0 + 1e-12);
      CHECK(alpha[i][n] == doctest::Approx(std::clamp(f * beta0 * sigma[i] * w[n], beta0, f * beta0)));
    }
  }
}

TEST_CASE("qualifying periods") {
  std::vector<double> profile(28);
  std::iota(profile.begin(), profile.end(), 1.0);
  CHECK(qualify_periods(profile, QualifyingRule::threshold(0.0)).size() == 28);

  std::vector<std::size_t> fin;
  for (std::size_t t = 0; t < 28; ++t) {
    if (t != 0 && t != 24) fin.push_back(t);
  }
  CHECK(qualify_periods(profile, QualifyingRule::list(fin)) == fin);
  const std::vector<std::size_t> soc{2, 3, 6, 7, 10, 11, 14, 15, 19, 23, 27};
  CHECK(qualify_periods(profile, QualifyingRule::list(soc)) == soc);

  // upper quarter of 1..28: 75th percentile at 21.25, so 22..28
  const auto top = qualify_periods(profile, QualifyingRule::threshold(0.75));
  CHECK(top.size() == 7);
  CHECK(top.front() == 21);
  CHECK(qualify_periods(std::vector<double>{}, QualifyingRule::threshold(0.5)).empty());
}

TEST_CASE("financial bonus") {
  CHECK(financial_bonus(3.0, 2.0, 2.0) == doctest::Approx(2.0));
  CHECK(financial_bonus(2.0, 2.0, 2.0) == 0.0);
  CHECK(financial_bonus(2.0, 3.5, 2.0) == 0.0);
  Rng rng(1);
  for (int i = 0; i < 1000; ++i) CHECK(financial_bonus(uniform(rng, 0, 5), uniform(rng, 0, 5), uniform(rng, 0, 4)) >= 0.0);
}

TEST_CASE("a larger reward rate never lowers fitness") {
  Household h;
  Rng rng(12);
  for (int d = 0; d < 5; ++d) {
    h.devices.push_back(HouseholdDevice{"d" + std::to_string(d), uniform(rng, 0.1, 1.0), 0, uniform(rng, 0.1, 0.3),
                                        uniform(rng, 1.0, 7.0), {uniform01(rng)}});
  }
  const std::vector<Household> hs{h};
  const std::vector<StrategySet> sets{StrategySet::evenly_spaced(7)};
  PeriodIncentives two, three;
  two.bonus_rate = 2.0;
  three.bonus_rate = 3.0;
  const PeriodGame g2 = build_period_game(hs, sets, 0, 6.0, PriceModel{}, two);
  const PeriodGame g3 = build_period_game(hs, sets, 0, 6.0, PriceModel{}, three);
  const GameState s = initial_state(g2);
  for (std::size_t a = 0; a < g2.agents.size(); ++a) {
    for (std::size_t k = 0; k < 7; ++k) CHECK(agent_fitness(g3, a, k, s) >= agent_fitness(g2, a, k, s));
  }
}

TEST_CASE("engagement draws") {
  CHECK(draw_engagement(std::vector<double>(100, 1.0), 5) == std::vector<std::uint8_t>(100, 1));
  CHECK(draw_engagement(std::vector<double>(100, 0.0), 5) == std::vector<std::uint8_t>(100, 0));
  const auto c = draw_engagement(std::vector<double>(10000, 0.3), 5);
  const double mean = std::accumulate(c.begin(), c.end(), 0.0) / c.size();
  CHECK(std::abs(mean - 0.3) < 0.02);
  CHECK(draw_engagement(std::vector<double>(50, 0.5), 8) == draw_engagement(std::vector<double>(50, 0.5), 8));
}

TEST_CASE("more willingness enrolls more households") {
  Rng rng(4);
  std::vector<double> low(2000);
  for (double& s : low) s = uniform(rng, 0.0, 0.6);
  std::vector<double> high = low;
  for (double& s : high) s = std::min(1.0, s + 0.3);
  std::size_t n_low = 0, n_high = 0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    for (auto c : draw_engagement(low, seed)) n_low += c;
    for (auto c : draw_engagement(high, seed)) n_high += c;
  }
  CHECK(n_high >= n_low);
  // common uniforms per household: enrollment is pointwise monotone
  const auto cl = draw_engagement(low, 9), ch = draw_engagement(high, 9);
  for (std::size_t i = 0; i < cl.size(); ++i) CHECK(ch[i] >= cl[i]);
}

TEST_CASE("shifted preferences") {
  CHECK(incentivize_preferences(0.8, 1, -1, 0.3) == doctest::Approx(0.5));
  CHECK(incentivize_preferences(0.2, 1, -1, 0.3) == 0.0);
  CHECK(incentivize_preferences(0.9, 1, 1, 0.3) == 1.0);
  CHECK(incentivize_preferences(0.4, 0, -1, 0.6) == 0.4);
  CHECK(incentivize_preferences(0.4, 1, 0, 0.6) == 0.4);
  Rng rng(2);
  for (int i = 0; i < 1000; ++i) {
    const double v = incentivize_preferences(uniform01(rng), static_cast<int>(uniform_index(rng, 2)),
                                             static_cast<int>(uniform_index(rng, 3)) - 1, uniform01(rng));
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
}

TEST_CASE("social incentive value") {
  CHECK(social_incentive_value(4.0, 0.2, 0.5, 1.0, 1.0, 0.5, 0.5) == 0.0);
  // allocation at theta_inc: alpha (1 - exp(-|theta_inc - theta| / eps))
  const double alpha = 5.0, eps = 0.2, theta = 0.8, inc = 0.5;
  const double v = social_incentive_value(alpha, eps, inc, 2.0, 1.0, theta, inc);
  CHECK(v == doctest::Approx(alpha * (1 - std::exp(-0.3 / eps))));
  CHECK(v > 0.0);
  // cost terms cancel: the price does not matter
  CHECK(social_incentive_value(alpha, eps, inc, 2.0, 9.0, theta, inc) == doctest::Approx(v));
}

TEST_CASE("a reduction is chosen only when it pays") {
  Rng rng(21);
  std::size_t reductions = 0;
  const StrategySet set = StrategySet::evenly_spaced(7);
  for (int trial = 0; trial < 500; ++trial) {
    const double alpha = uniform(rng, 1.0, 7.0), eps = uniform(rng, 0.1, 0.3), theta = uniform01(rng);
    const double e = uniform(rng, 0.5, 4.0), gamma = uniform(rng, 0.0, 3.0);
    Household h;
    h.devices.push_back(HouseholdDevice{"d", e / 6.0, 0, eps, alpha, {theta}});
    PeriodIncentives inc;
    inc.bonus_rate = gamma;
    const std::vector<Household> hs{h};
    const std::vector<StrategySet> sets{set};
    const PeriodGame g = build_period_game(hs, sets, 0, 6.0, PriceModel{}, inc);
    const GameState s = initial_state(g);

    std::size_t best = 0;
    for (std::size_t k = 1; k < set.size(); ++k) {
      if (agent_fitness(g, 0, k, s) > agent_fitness(g, 0, best, s)) best = k;
    }
    const std::size_t nat = set.nearest(theta);
    if (best >= nat) continue;
    ++reductions;
    const double q_nat = set[nat] * e, q_best = set[best] * e;
    const double natural = plain_fitness(alpha, set[nat], theta, eps, q_nat, 1.0);
    const double with_bonus = plain_fitness(alpha, set[best], theta, eps, q_best, 1.0) + gamma * (q_nat - q_best);
    CHECK(with_bonus >= natural - 1e-12);
  }
  CHECK(reductions > 20);
}
