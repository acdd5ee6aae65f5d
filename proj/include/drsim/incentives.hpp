#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace drsim {

/// alpha[i][n] = clamp(f * beta0 * sigma_i * w_n, beta0, f * beta0).
std::vector<std::vector<double>> resolve_valuations(std::span<const double> sigma_val, double factor, double beta0,
                                                    std::span<const double> device_weights);

struct QualifyingRule {
  enum class Kind { explicit_list, threshold_quantile };
  Kind kind = Kind::explicit_list;
  std::vector<std::size_t> periods;
  double quantile = 0.0;

  static QualifyingRule list(std::vector<std::size_t> periods) { return {Kind::explicit_list, std::move(periods), 0.0}; }
  static QualifyingRule threshold(double q) { return {Kind::threshold_quantile, {}, q}; }
};

/// Explicit rules return their list (sorted, deduplicated); threshold rules
/// return every period whose aggregate is at or above the given quantile
/// (linear interpolation between order statistics) of the profile.
std::vector<std::size_t> qualify_periods(std::span<const double> aggregate_profile, const QualifyingRule& rule);

/// gamma * max(0, q_pref - q_chosen). Never negative.
inline double financial_bonus(double q_pref, double q_chosen, double gamma) {
  const double redux = q_pref - q_chosen;
  return redux > 0.0 ? gamma * redux : 0.0;
}

/// One Bernoulli(sigma_i) enrollment draw per household.
std::vector<std::uint8_t> draw_engagement(std::span<const double> sigma_dr, std::uint64_t seed);

/// clamp(theta + engaged * direction * eps_flex, 0, 1)
double incentivize_preferences(double theta, int engaged, int direction, double eps_flex);

/// Utility against the incentivized preference minus utility against the
/// natural preference, both at the same allocation.
double social_incentive_value(double valuation, double elasticity, double duty, double energy_kwh, double unit_price,
                              double theta, double theta_inc);

struct FinancialIncentive {
  double gamma = 0.0;  ///< currency per kWh of reduction
  std::vector<std::size_t> qualifying_periods;
};

struct SocialIncentive {
  std::vector<double> sigma_dr;
  std::vector<std::uint8_t> engaged;
  std::vector<int> direction;  ///< r_t per period
  double eps_flex = 0.0;
};

}  // namespace drsim
