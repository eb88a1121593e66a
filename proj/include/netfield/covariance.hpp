#pragma once

#include <cmath>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "netfield/error.hpp"
#include "netfield/graph.hpp"
#include "netfield/metrics.hpp"

namespace netfield {

/// Dense covariance-model fits refuse more positions than this.
inline constexpr std::size_t kMaxDensePositions = 4000;

struct MaternParams {
  double sigma2 = 1.0;
  double kappa = 1.0;
  double nu = 0.5;

  void validate() const {
    if (!(sigma2 > 0.0) || !(kappa > 0.0) || !(nu > 0.0) || !std::isfinite(sigma2) || !std::isfinite(kappa) ||
        !std::isfinite(nu))
      throw InputError("Matern parameters must be positive and finite");
  }
};

namespace detail {

inline bool is_half_integer(double nu, int& n) {
  const double twice = 2.0 * nu;
  const double r = std::round(twice);
  if (std::abs(twice - r) > 1e-12 || static_cast<long>(r) % 2 == 0) return false;
  n = static_cast<int>((r - 1.0) / 2.0);
  return n <= 20;
}

// Matern correlation for nu = n + 1/2 in polynomial-times-exponential form:
// e^{-x} sum_k (n+k)! / (k! (n-k)!) 2^{-k} x^{n-k} scaled so the value at 0 is 1.
inline double half_integer_matern(int n, double x) {
  double sum = 0.0;
  for (int k = 0; k <= n; ++k) {
    const double log_c = std::lgamma(n + k + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0) -
                         k * std::log(2.0);
    sum += std::exp(log_c) * std::pow(x, n - k);
  }
  const double log_pref = 0.5 * std::log(M_PI / 2.0) - (n - 0.5) * std::log(2.0) - std::lgamma(n + 0.5);
  return std::exp(log_pref - x) * sum;
}

}  // namespace detail

/// sigma^2 / (2^{nu-1} Gamma(nu)) (kappa h)^nu K_nu(kappa h), with value sigma^2 at h = 0.
/// Half-integer nu uses the closed form; otherwise std::cyl_bessel_k.
inline double matern_value(double h, const MaternParams& p) {
  if (!(h >= 0.0)) throw InputError("distance must be >= 0");
  p.validate();
  if (h == 0.0) return p.sigma2;
  const double x = p.kappa * h;
  int n = 0;
  if (detail::is_half_integer(p.nu, n)) return p.sigma2 * detail::half_integer_matern(n, x);
  if (x > 700.0) return 0.0;
  const double k = std::cyl_bessel_k(p.nu, x);
  const double log_val = (1.0 - p.nu) * std::log(2.0) - std::lgamma(p.nu) + p.nu * std::log(x) + std::log(k);
  return p.sigma2 * std::exp(log_val);
}

inline Eigen::MatrixXd matern_from_distances(const Eigen::MatrixXd& d, const MaternParams& p) {
  Eigen::MatrixXd k(d.rows(), d.cols());
  for (Eigen::Index j = 0; j < d.cols(); ++j)
    for (Eigen::Index i = 0; i < d.rows(); ++i) k(i, j) = matern_value(d(i, j), p);
  return k;
}

inline void require_resistance_nu(double nu) {
  if (!(nu > 0.0) || nu > 0.5 + 1e-12)
    throw InputError("Matern covariance on the resistance metric is only valid for 0 < nu <= 1/2 (got nu = " +
                     std::to_string(nu) + ")");
}

/// Matern covariance of the resistance metric between on-network positions.
inline Eigen::MatrixXd resistance_matern_cov(const MetricGraph& g, std::span<const GraphPosition> positions,
                                             const MaternParams& p) {
  require_resistance_nu(p.nu);
  p.validate();
  const DistanceMatrix dm = pairwise_distances(g, positions, Metric::resistance);
  return matern_from_distances(dm.values, p);
}

inline Eigen::MatrixXd euclidean_distances(std::span<const Point> xy) {
  const auto n = static_cast<Eigen::Index>(xy.size());
  Eigen::MatrixXd d = Eigen::MatrixXd::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = i + 1; j < n; ++j) d(i, j) = d(j, i) = distance(xy[i], xy[j]);
  return d;
}

inline Eigen::MatrixXd euclidean_matern_cov(std::span<const Point> xy, const MaternParams& p) {
  p.validate();
  return matern_from_distances(euclidean_distances(xy), p);
}

/// Smallest eigenvalue of a symmetric matrix; used to report PSD violations.
inline double min_eigenvalue(const Eigen::MatrixXd& k) {
  if (k.rows() == 0) return 0.0;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(k, Eigen::EigenvaluesOnly);
  return es.eigenvalues()[0];
}

}  // namespace netfield
