#pragma once

#include <cmath>

namespace second_opinion {

/// Logistic function, evaluated without overflow for large |t|.
inline double sigmoid(double t) {
  if (t >= 0) {
    return 1.0 / (1.0 + std::exp(-t));
  }
  const double e = std::exp(t);
  return e / (1.0 + e);
}

/// log(1 + exp(t)).
inline double softplus(double t) {
  return t > 0 ? t + std::log1p(std::exp(-t)) : std::log1p(std::exp(t));
}

}  // namespace second_opinion
