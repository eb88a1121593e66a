#pragma once

#include <cmath>
#include <ostream>
#include <string>
#include <variant>

#include <Eigen/Dense>
#include <Eigen/SparseCholesky>

#include "netfield/error.hpp"

namespace netfield {

/// Symmetric sparse matrix stored with both triangles.
using SparseSymMatrix = Eigen::SparseMatrix<double>;
using SparseMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor>;

/// Cholesky factor of an SPD matrix, sparse (AMD-ordered) or dense.
class SpdFactor {
 public:
  using Sparse = Eigen::SimplicialLLT<SparseSymMatrix, Eigen::Lower, Eigen::AMDOrdering<int>>;
  using Dense = Eigen::LLT<Eigen::MatrixXd>;

  SpdFactor() = default;

  explicit SpdFactor(const SparseSymMatrix& q, const std::string& context = "precision") {
    auto& f = impl_.emplace<Sparse>();
    f.compute(q);
    if (f.info() != Eigen::Success) throw NotSpdError(context, sparse_pivot(q));
    for (Eigen::Index k = 0; k < q.rows(); ++k) {
      const double d = f.matrixL().nestedExpression().coeff(k, k);
      if (!(d > 0.0) || !std::isfinite(d)) throw NotSpdError(context, sparse_pivot(q));
    }
  }

  explicit SpdFactor(const Eigen::MatrixXd& q, const std::string& context = "precision") {
    auto& f = impl_.emplace<Dense>();
    f.compute(q);
    if (f.info() != Eigen::Success || !f.matrixLLT().diagonal().allFinite())
      throw NotSpdError(context, dense_pivot(q));
  }

  Eigen::Index size() const {
    return std::visit([](const auto& f) -> Eigen::Index { return f.rows(); }, impl_);
  }

  bool is_dense() const { return std::holds_alternative<Dense>(impl_); }

  template <class Rhs>
  Eigen::MatrixXd solve(const Rhs& b) const {
    return std::visit([&](const auto& f) -> Eigen::MatrixXd { return f.solve(b); }, impl_);
  }

  Eigen::VectorXd solve_vec(const Eigen::VectorXd& b) const {
    return std::visit([&](const auto& f) -> Eigen::VectorXd { return f.solve(b); }, impl_);
  }

  double log_det() const {
    if (const auto* s = std::get_if<Sparse>(&impl_)) {
      double acc = 0.0;
      const auto& lmat = s->matrixL().nestedExpression();
      for (Eigen::Index k = 0; k < lmat.rows(); ++k) acc += std::log(lmat.coeff(k, k));
      return 2.0 * acc;
    }
    const auto& d = std::get<Dense>(impl_);
    return 2.0 * d.matrixLLT().diagonal().array().log().sum();
  }

  /// x with Cov(x) = Q^{-1} when z is standard normal: x = P^{-1} L^{-T} z.
  Eigen::VectorXd whiten_solve(const Eigen::VectorXd& z) const {
    if (const auto* s = std::get_if<Sparse>(&impl_)) {
      Eigen::VectorXd y = s->matrixU().solve(z);
      return s->permutationPinv() * y;
    }
    const auto& d = std::get<Dense>(impl_);
    return d.matrixU().solve(z);
  }

 private:
  static long sparse_pivot(const SparseSymMatrix& q) {
    Eigen::SimplicialLDLT<SparseSymMatrix, Eigen::Lower, Eigen::AMDOrdering<int>> ldlt(q);
    if (ldlt.info() != Eigen::Success && ldlt.vectorD().size() != q.rows()) return -1;
    const auto& d = ldlt.vectorD();
    for (Eigen::Index k = 0; k < d.size(); ++k)
      if (!(d[k] > 0.0) || !std::isfinite(d[k])) return ldlt.permutationPinv().indices()[k];
    return -1;
  }

  static long dense_pivot(const Eigen::MatrixXd& q) {
    Eigen::MatrixXd l = q;
    const Eigen::Index n = q.rows();
    for (Eigen::Index j = 0; j < n; ++j) {
      double d = l(j, j) - l.row(j).head(j).squaredNorm();
      if (!(d > 0.0) || !std::isfinite(d)) return static_cast<long>(j);
      d = std::sqrt(d);
      l(j, j) = d;
      for (Eigen::Index i = j + 1; i < n; ++i) l(i, j) = (l(i, j) - l.row(i).head(j).dot(l.row(j).head(j))) / d;
    }
    return -1;
  }

  std::variant<Sparse, Dense> impl_;
};

/// Upper-triangle triplets as CSV with header "i,j,value".
inline void write_triplets(std::ostream& os, const SparseSymMatrix& m) {
  os.precision(17);
  os << "i,j,value\n";
  for (int k = 0; k < m.outerSize(); ++k)
    for (SparseSymMatrix::InnerIterator it(m, k); it; ++it)
      if (it.row() <= it.col()) os << it.row() << ',' << it.col() << ',' << it.value() << '\n';
}

inline void write_dense_csv(std::ostream& os, const Eigen::MatrixXd& m) {
  os.precision(17);
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) os << (j ? "," : "") << m(i, j);
    os << '\n';
  }
}

}  // namespace netfield
