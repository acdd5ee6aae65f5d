#include "drsim/incentives.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "drsim/errors.hpp"
#include "drsim/preference.hpp"
#include "drsim/rng.hpp"

namespace drsim {

std::vector<std::vector<double>> resolve_valuations(std::span<const double> sigma_val, double factor, double beta0,
                                                    std::span<const double> device_weights) {
  if (!(factor > 1.0)) throw ParameterError(fmt::format("valuation factor must exceed 1 (got {})", factor));
  if (!(beta0 > 0.0)) throw ParameterError("base price must be positive");
  const double alpha_max = factor * beta0;
  std::vector<std::vector<double>> alpha;
  alpha.reserve(sigma_val.size());
  for (double sigma : sigma_val) {
    if (!(sigma >= 0.0 && sigma <= 1.0)) throw ParameterError(fmt::format("valuation opinion {} outside [0,1]", sigma));
    std::vector<double> row;
    row.reserve(device_weights.size());
    for (double w : device_weights) row.push_back(std::clamp(factor * beta0 * sigma * w, beta0, alpha_max));
    alpha.push_back(std::move(row));
  }
  return alpha;
}

std::vector<std::size_t> qualify_periods(std::span<const double> aggregate_profile, const QualifyingRule& rule) {
  std::vector<std::size_t> out;
  if (rule.kind == QualifyingRule::Kind::explicit_list) {
    out = rule.periods;
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
  }
  if (!(rule.quantile >= 0.0 && rule.quantile <= 1.0)) throw ParameterError("qualifying quantile must lie in [0,1]");
  if (aggregate_profile.empty()) return out;
  std::vector<double> sorted(aggregate_profile.begin(), aggregate_profile.end());
  std::sort(sorted.begin(), sorted.end());
  const double pos = rule.quantile * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double threshold = sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
  for (std::size_t t = 0; t < aggregate_profile.size(); ++t) {
    if (aggregate_profile[t] >= threshold) out.push_back(t);
  }
  return out;
}

std::vector<std::uint8_t> draw_engagement(std::span<const double> sigma_dr, std::uint64_t seed) {
  Rng rng(derive_seed(seed, "engagement"));
  std::vector<std::uint8_t> engaged;
  engaged.reserve(sigma_dr.size());
  for (double sigma : sigma_dr) {
    if (!(sigma >= 0.0 && sigma <= 1.0)) throw ParameterError(fmt::format("DR willingness {} outside [0,1]", sigma));
    engaged.push_back(bernoulli(rng, sigma) ? 1 : 0);
  }
  return engaged;
}

double incentivize_preferences(double theta, int engaged, int direction, double eps_flex) {
  return std::clamp(theta + static_cast<double>(engaged) * static_cast<double>(direction) * eps_flex, 0.0, 1.0);
}

double social_incentive_value(double valuation, double elasticity, double duty, double energy_kwh, double unit_price,
                              double theta, double theta_inc) {
  const double incentivized = valuation * theta_signal(duty, theta_inc, elasticity) - unit_price * energy_kwh;
  const double natural = valuation * theta_signal(duty, theta, elasticity) - unit_price * energy_kwh;
  return incentivized - natural;
}

}  // namespace drsim
