#pragma once

// Linear finite elements for (kappa^2 - Laplacian)^{alpha/2} (tau u) = W on a
// metric graph. Mesh nodes on a shared vertex are a single unknown, which
// gives continuity and Kirchhoff (zero net flux) vertex conditions.

#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "netfield/graph.hpp"
#include "netfield/random.hpp"
#include "netfield/sparse.hpp"

namespace netfield {

struct MeshSegment {
  std::size_t a = 0;
  std::size_t b = 0;
  double length = 0.0;
  std::size_t edge = 0;
};

struct DiscretizationMesh {
  double h_max = 0.0;
  std::vector<GraphPosition> nodes;
  std::vector<MeshSegment> segments;
  /// Node ids along each edge from its start vertex to its end vertex.
  std::vector<std::vector<std::size_t>> edge_nodes;
  /// Common segment length on each edge.
  std::vector<double> edge_step;

  std::size_t node_count() const { return nodes.size(); }
};

/// Total length / 2000, but never more than half the shortest edge.
inline double default_h_max(const MetricGraph& g) {
  return std::min(g.total_length() / 2000.0, 0.5 * g.shortest_edge());
}

/// Splits every edge of length L into ceil(L / h_max) equal segments. Graph
/// vertices come first in the node order, then edge interiors by edge id and offset.
inline DiscretizationMesh discretize(const MetricGraph& g, double h_max) {
  if (!(h_max > 0.0) || !std::isfinite(h_max)) throw InputError("h_max must be > 0");
  DiscretizationMesh mesh;
  mesh.h_max = h_max;
  const std::size_t nv = g.vertex_count();
  mesh.nodes.assign(nv, GraphPosition{std::numeric_limits<std::size_t>::max(), 0.0});
  for (std::size_t e = g.edge_count(); e-- > 0;) {
    const Edge& ed = g.edge(e);
    mesh.nodes[ed.end] = {e, ed.length};
    mesh.nodes[ed.start] = {e, 0.0};
  }
  for (std::size_t v = 0; v < nv; ++v)
    if (mesh.nodes[v].edge == std::numeric_limits<std::size_t>::max())
      throw InputError("vertex " + std::to_string(v) + " has no incident edge");

  mesh.edge_nodes.resize(g.edge_count());
  mesh.edge_step.resize(g.edge_count());
  for (std::size_t e = 0; e < g.edge_count(); ++e) {
    const Edge& ed = g.edge(e);
    if (!(ed.length > 0.0)) throw InputError("edge " + std::to_string(e) + " has zero length");
    const auto nseg = static_cast<std::size_t>(
        std::max(1.0, std::ceil(ed.length / h_max * (1.0 - 1e-12))));
    const double step = ed.length / static_cast<double>(nseg);
    mesh.edge_step[e] = step;
    auto& ids = mesh.edge_nodes[e];
    ids.push_back(ed.start);
    for (std::size_t k = 1; k < nseg; ++k) {
      ids.push_back(mesh.nodes.size());
      mesh.nodes.push_back({e, step * static_cast<double>(k)});
    }
    ids.push_back(ed.end);
    for (std::size_t k = 0; k < nseg; ++k) mesh.segments.push_back({ids[k], ids[k + 1], step, e});
  }
  return mesh;
}

struct FemMatrices {
  SparseSymMatrix mass;       ///< lumped, diagonal
  SparseSymMatrix stiffness;  ///< zero row sums
};

/// Per segment of length l: stiffness (1/l)[[1,-1],[-1,1]], lumped mass l/2 per end.
inline FemMatrices assemble_matrices(const DiscretizationMesh& mesh) {
  const auto n = static_cast<Eigen::Index>(mesh.node_count());
  std::vector<Eigen::Triplet<double>> c, gt;
  c.reserve(2 * mesh.segments.size());
  gt.reserve(4 * mesh.segments.size());
  for (const auto& s : mesh.segments) {
    const auto a = static_cast<Eigen::Index>(s.a), b = static_cast<Eigen::Index>(s.b);
    c.emplace_back(a, a, 0.5 * s.length);
    c.emplace_back(b, b, 0.5 * s.length);
    const double k = 1.0 / s.length;
    gt.emplace_back(a, a, k);
    gt.emplace_back(b, b, k);
    if (a != b) {
      gt.emplace_back(a, b, -k);
      gt.emplace_back(b, a, -k);
    } else {
      // A one-segment loop drops out of the stiffness entirely.
      gt.emplace_back(a, a, -2.0 * k);
    }
  }
  FemMatrices m{SparseSymMatrix(n, n), SparseSymMatrix(n, n)};
  m.mass.setFromTriplets(c.begin(), c.end());
  m.stiffness.setFromTriplets(gt.begin(), gt.end());
  m.stiffness.prune(0.0);
  return m;
}

/// kappa, tau > 0 and alpha in {1, 2}; smoothness nu = alpha - 1/2.
struct FieldParams {
  double kappa = 1.0;
  double tau = 1.0;
  int alpha = 1;

  double nu() const { return alpha - 0.5; }
  double range() const { return std::sqrt(8.0 * nu()) / kappa; }

  void validate() const {
    if (!(kappa > 0.0) || !std::isfinite(kappa)) throw InputError("kappa must be > 0");
    if (!(tau > 0.0) || !std::isfinite(tau)) throw InputError("tau must be > 0");
    if (alpha != 1 && alpha != 2) throw InputError("alpha must be 1 or 2");
  }
};

/// Interior marginal variance of the 1-D field:
/// sigma^2 = Gamma(nu) / (Gamma(nu + 1/2) sqrt(4 pi) kappa^{2 nu} tau^2).
inline double field_variance(double kappa, double tau, double nu) {
  return std::exp(std::lgamma(nu) - std::lgamma(nu + 0.5) - 0.5 * std::log(4.0 * M_PI) -
                  2.0 * nu * std::log(kappa) - 2.0 * std::log(tau));
}

enum class ParamDirection { range_sigma_to_kappa_tau, kappa_tau_to_range_sigma };

/// Exact conversion between (range, sigma) and (kappa, tau) for smoothness nu,
/// using range = sqrt(8 nu) / kappa and the interior variance relation above.
inline std::pair<double, double> natural_params(ParamDirection dir, double a, double b, double nu) {
  if (!(a > 0.0) || !(b > 0.0) || !(nu > 0.0) || !std::isfinite(a) || !std::isfinite(b))
    throw InputError("natural_params: inputs must be positive");
  if (dir == ParamDirection::range_sigma_to_kappa_tau) {
    const double kappa = std::sqrt(8.0 * nu) / a;
    const double tau = std::sqrt(field_variance(kappa, 1.0, nu)) / b;
    return {kappa, tau};
  }
  return {std::sqrt(8.0 * nu) / a, std::sqrt(field_variance(a, b, nu))};
}

/// alpha = 1: tau^2 (kappa^2 C + G); alpha = 2: tau^2 (kappa^2 C + G) C^{-1} (kappa^2 C + G).
inline SparseSymMatrix precision_matrix(const SparseSymMatrix& mass, const SparseSymMatrix& stiffness,
                                        const FieldParams& p) {
  p.validate();
  const double k2 = p.kappa * p.kappa, t2 = p.tau * p.tau;
  SparseSymMatrix op = k2 * mass + stiffness;
  if (p.alpha == 1) return SparseSymMatrix(t2 * op);
  Eigen::VectorXd inv_mass = mass.diagonal().cwiseInverse();
  SparseSymMatrix q = t2 * (op * inv_mass.asDiagonal() * op);
  // Symmetrize away rounding in the triple product.
  SparseSymMatrix qt = q.transpose();
  return SparseSymMatrix(0.5 * (q + qt));
}

/// Hat-function weights on the two nodes bounding each position's segment.
inline SparseMatrix observation_matrix(const MetricGraph& g, const DiscretizationMesh& mesh,
                                       std::span<const GraphPosition> positions) {
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(2 * positions.size());
  for (std::size_t i = 0; i < positions.size(); ++i) {
    const GraphPosition& pos = positions[i];
    g.check(pos);
    const auto& ids = mesh.edge_nodes.at(pos.edge);
    const double step = mesh.edge_step[pos.edge];
    const std::size_t nseg = ids.size() - 1;
    const double scaled = pos.offset / step;
    auto k = static_cast<std::size_t>(std::floor(scaled));
    if (k >= nseg) k = nseg - 1;
    double w = scaled - static_cast<double>(k);
    constexpr double snap = 1e-10;
    const auto row = static_cast<Eigen::Index>(i);
    if (w <= snap) {
      trip.emplace_back(row, ids[k], 1.0);
    } else if (w >= 1.0 - snap) {
      trip.emplace_back(row, ids[k + 1], 1.0);
    } else if (ids[k] == ids[k + 1]) {
      trip.emplace_back(row, ids[k], 1.0);
    } else {
      trip.emplace_back(row, ids[k], 1.0 - w);
      trip.emplace_back(row, ids[k + 1], w);
    }
  }
  SparseMatrix a(static_cast<Eigen::Index>(positions.size()), static_cast<Eigen::Index>(mesh.node_count()));
  a.setFromTriplets(trip.begin(), trip.end());
  return a;
}

/// x ~ N(0, Q^{-1}) from the given normal source.
template <NormalSource S>
Eigen::VectorXd sample_field(const SpdFactor& factor, S& source) {
  return factor.whiten_solve(normal_vector(factor.size(), source));
}

template <NormalSource S>
Eigen::VectorXd sample_field(const SparseSymMatrix& q, S& source) {
  const SpdFactor factor(q, "field precision");
  return sample_field(factor, source);
}

inline Eigen::VectorXd sample_field(const SparseSymMatrix& q, std::uint64_t seed) {
  NormalStream stream(seed);
  return sample_field(q, stream);
}

/// A_I Q^{-1} A_J^T by solving against the columns of A_J^T.
inline Eigen::MatrixXd field_covariance(const SpdFactor& factor, const SparseMatrix& a_i,
                                        const SparseMatrix& a_j) {
  const Eigen::MatrixXd rhs = Eigen::MatrixXd(a_j.transpose());
  const Eigen::MatrixXd x = factor.solve(rhs);
  return a_i * x;
}

inline Eigen::MatrixXd field_covariance(const SparseSymMatrix& q, const MetricGraph& g,
                                        const DiscretizationMesh& mesh, std::span<const GraphPosition> pos_i,
                                        std::span<const GraphPosition> pos_j) {
  const SpdFactor factor(q, "field precision");
  return field_covariance(factor, observation_matrix(g, mesh, pos_i), observation_matrix(g, mesh, pos_j));
}

}  // namespace netfield
