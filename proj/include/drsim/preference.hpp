#pragma once

#include <cmath>

#include "drsim/errors.hpp"

namespace drsim {

/// Preference-matching signal exp(-|x - theta| / eps): 1 at an exact match,
/// decaying faster for stiffer (smaller) elasticity.
inline double theta_signal(double x, double theta, double eps) {
  if (!(eps > 0.0)) throw ParameterError("elasticity must be positive");
  return std::exp(-std::abs(x - theta) / eps);
}

}  // namespace drsim
