#pragma once

#include <cmath>

#include "netfield/error.hpp"

namespace netfield {

/// Penalized-complexity prior on (range, sigma), calibrated by
/// P(range < r0) = p_r and P(sigma > sigma0) = p_sigma in dimension `dim`.
struct PcPrior {
  double r0 = 0.01;
  double p_r = 0.01;
  double sigma0 = 1.0;
  double p_sigma = 0.01;
  int dim = 1;

  void validate() const {
    if (!(r0 > 0.0) || !(sigma0 > 0.0)) throw InputError("PC prior thresholds must be > 0");
    if (!(p_r > 0.0 && p_r < 1.0) || !(p_sigma > 0.0 && p_sigma < 1.0))
      throw InputError("PC prior probabilities must lie in (0, 1)");
    if (dim < 1) throw InputError("PC prior dimension must be >= 1");
  }
  double lambda_range() const { return -std::log(p_r) * std::pow(r0, 0.5 * dim); }
  double lambda_sigma() const { return -std::log(p_sigma) / sigma0; }
};

/// log pi(r) + log pi(sigma) with
/// pi(r) = (lambda1 d/2) r^{-d/2-1} exp(-lambda1 r^{-d/2}) and pi(sigma) = lambda2 exp(-lambda2 sigma).
inline double pc_prior_logdensity(double range, double sigma, const PcPrior& prior) {
  if (!(range > 0.0) || !(sigma > 0.0)) throw InputError("PC prior arguments must be > 0");
  prior.validate();
  const double half_d = 0.5 * prior.dim;
  const double l1 = prior.lambda_range(), l2 = prior.lambda_sigma();
  const double log_r = std::log(l1 * half_d) - (half_d + 1.0) * std::log(range) - l1 * std::pow(range, -half_d);
  const double log_s = std::log(l2) - l2 * sigma;
  return log_r + log_s;
}

/// Gamma(shape, rate) prior on a precision, equivalently inverse-gamma on the variance.
struct PrecisionPrior {
  double shape = 1.0;
  double rate = 5e-5;

  void validate() const {
    if (!(shape > 0.0) || !(rate > 0.0)) throw InputError("precision prior parameters must be > 0");
  }
  /// Density of log(precision), Jacobian included.
  double log_density_of_log(double log_precision) const {
    return shape * std::log(rate) - std::lgamma(shape) + shape * log_precision - rate * std::exp(log_precision);
  }
};

}  // namespace netfield
