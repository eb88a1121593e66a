#pragma once

#include <concepts>
#include <cstdint>
#include <random>

#include <Eigen/Dense>

namespace netfield {

/// Anything that yields independent standard normal draws on each call.
template <class S>
concept NormalSource = requires(S& s) {
  { s() } -> std::convertible_to<double>;
};

/// Seeded standard-normal stream; identical seeds give bitwise-identical draws.
class NormalStream {
 public:
  explicit NormalStream(std::uint64_t seed) : engine_(seed) {}
  double operator()() { return dist_(engine_); }
  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> dist_{0.0, 1.0};
};

/// Degenerate stream used to pin stochastic routines to their deterministic limit.
struct ZeroStream {
  double operator()() const { return 0.0; }
};

template <NormalSource S>
Eigen::VectorXd normal_vector(Eigen::Index n, S& source) {
  Eigen::VectorXd z(n);
  for (Eigen::Index i = 0; i < n; ++i) z[i] = source();
  return z;
}

}  // namespace netfield
