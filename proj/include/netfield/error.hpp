#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace netfield {

/// Broad failure category; the CLI maps these onto process exit codes.
enum class ErrorKind { input, numerical, convergence };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

class InputError : public Error {
 public:
  explicit InputError(const std::string& what) : Error(ErrorKind::input, what) {}
};

class NumericalError : public Error {
 public:
  explicit NumericalError(const std::string& what) : Error(ErrorKind::numerical, what) {}
};

/// Cholesky breakdown. `pivot` is the index (in the caller's ordering) of the
/// first non-positive pivot, or -1 when it could not be located.
class NotSpdError : public NumericalError {
 public:
  NotSpdError(const std::string& context, long pivot)
      : NumericalError(context + ": matrix not SPD (pivot " + std::to_string(pivot) + ")"),
        pivot_(pivot) {}
  long pivot() const noexcept { return pivot_; }

 private:
  long pivot_;
};

class ConvergenceError : public Error {
 public:
  ConvergenceError(const std::string& what, std::vector<double> trace)
      : Error(ErrorKind::convergence, what), trace_(std::move(trace)) {}
  /// Gradient infinity-norm per Newton iteration.
  const std::vector<double>& trace() const noexcept { return trace_; }

 private:
  std::vector<double> trace_;
};

/// A query point lies farther from the network than the snapping radius.
class SnapError : public InputError {
 public:
  SnapError(double distance, double max_snap)
      : InputError("point is " + std::to_string(distance) + " from the network (max_snap " +
                   std::to_string(max_snap) + ")"),
        distance_(distance) {}
  double distance() const noexcept { return distance_; }

 private:
  double distance_;
};

class UnreachableError : public InputError {
 public:
  explicit UnreachableError(const std::string& what,
                            std::vector<std::pair<std::size_t, std::size_t>> pairs = {})
      : InputError(what), pairs_(std::move(pairs)) {}
  const std::vector<std::pair<std::size_t, std::size_t>>& pairs() const noexcept { return pairs_; }

 private:
  std::vector<std::pair<std::size_t, std::size_t>> pairs_;
};

inline int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::input: return 2;
    case ErrorKind::numerical: return 3;
    case ErrorKind::convergence: return 4;
  }
  return 1;
}

}  // namespace netfield
