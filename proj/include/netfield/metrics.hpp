#pragma once

// Geodesic and effective-resistance distances between on-network positions.

#include <algorithm>
#include <functional>
#include <limits>
#include <map>
#include <ostream>
#include <queue>
#include <span>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/SparseCholesky>

#include "netfield/graph.hpp"

namespace netfield {

enum class Metric { geodesic, resistance };

struct DistanceMatrix {
  std::vector<GraphPosition> positions;
  Metric metric = Metric::geodesic;
  Eigen::MatrixXd values;
};

namespace detail {

inline std::vector<std::vector<std::pair<std::size_t, double>>> adjacency(const MetricGraph& g) {
  std::vector<std::vector<std::pair<std::size_t, double>>> adj(g.vertex_count());
  for (const auto& e : g.edges()) {
    adj[e.start].emplace_back(e.end, e.length);
    if (e.end != e.start) adj[e.end].emplace_back(e.start, e.length);
  }
  return adj;
}

inline std::vector<double> dijkstra(const std::vector<std::vector<std::pair<std::size_t, double>>>& adj,
                                    std::span<const std::pair<std::size_t, double>> sources) {
  std::vector<double> dist(adj.size(), std::numeric_limits<double>::infinity());
  using Item = std::pair<double, std::size_t>;
  std::priority_queue<Item, std::vector<Item>, std::greater<>> heap;
  for (auto [v, d] : sources)
    if (d < dist[v]) {
      dist[v] = d;
      heap.emplace(d, v);
    }
  while (!heap.empty()) {
    auto [d, v] = heap.top();
    heap.pop();
    if (d > dist[v]) continue;
    for (auto [w, len] : adj[v])
      if (d + len < dist[w]) {
        dist[w] = d + len;
        heap.emplace(dist[w], w);
      }
  }
  return dist;
}

}  // namespace detail

/// Shortest on-network path length between two positions.
inline double geodesic_distance(const MetricGraph& g, const GraphPosition& s, const GraphPosition& t) {
  g.check(s);
  g.check(t);
  const Edge& es = g.edge(s.edge);
  const Edge& et = g.edge(t.edge);
  double best = std::numeric_limits<double>::infinity();
  if (s.edge == t.edge) best = std::abs(s.offset - t.offset);
  const std::pair<std::size_t, double> sources[] = {{es.start, s.offset}, {es.end, es.length - s.offset}};
  const auto dist = detail::dijkstra(detail::adjacency(g), sources);
  best = std::min({best, dist[et.start] + t.offset, dist[et.end] + (et.length - t.offset)});
  if (!std::isfinite(best)) throw UnreachableError("positions lie in different components");
  return best;
}

/// Largest vertex-to-vertex geodesic distance within any component.
inline double graph_diameter(const MetricGraph& g) {
  const auto adj = detail::adjacency(g);
  double diam = 0.0;
  for (std::size_t v = 0; v < g.vertex_count(); ++v) {
    const std::pair<std::size_t, double> src[] = {{v, 0.0}};
    for (double d : detail::dijkstra(adj, src))
      if (std::isfinite(d)) diam = std::max(diam, d);
  }
  return diam;
}

/// Grounded-Laplacian solver for effective resistances on a fixed graph.
/// Each component grounds its lowest-index vertex; zero-length edges are
/// contracted first.
class ResistanceSolver {
 public:
  explicit ResistanceSolver(const MetricGraph& g, std::size_t dense_threshold = 2000) {
    const std::size_t nv = g.vertex_count();
    std::vector<std::size_t> parent(nv);
    std::iota(parent.begin(), parent.end(), std::size_t{0});
    auto find = [&](std::size_t v) {
      while (parent[v] != v) v = parent[v] = parent[parent[v]];
      return v;
    };
    constexpr double zero_length = 1e-15;
    for (const auto& e : g.edges())
      if (e.length <= zero_length) {
        const std::size_t a = find(e.start), b = find(e.end);
        if (a != b) parent[std::max(a, b)] = std::min(a, b);
      }
    // Contracted node per vertex.
    node_of_.assign(nv, 0);
    std::map<std::size_t, std::size_t> root_node;
    for (std::size_t v = 0; v < nv; ++v) {
      auto [it, inserted] = root_node.emplace(find(v), root_node.size());
      node_of_[v] = it->second;
    }
    const std::size_t n = root_node.size();

    // Components over contracted nodes.
    std::vector<std::size_t> comp_parent(n);
    std::iota(comp_parent.begin(), comp_parent.end(), std::size_t{0});
    auto cfind = [&](std::size_t v) {
      while (comp_parent[v] != v) v = comp_parent[v] = comp_parent[comp_parent[v]];
      return v;
    };
    for (const auto& e : g.edges()) {
      const std::size_t a = cfind(node_of_[e.start]), b = cfind(node_of_[e.end]);
      if (a != b) comp_parent[std::max(a, b)] = std::min(a, b);
    }
    component_.resize(n);
    for (std::size_t v = 0; v < n; ++v) component_[v] = cfind(v);

    // Grounded nodes are the component roots (lowest index). Remaining nodes
    // get consecutive unknown indices.
    unknown_.assign(n, -1);
    long next = 0;
    for (std::size_t v = 0; v < n; ++v)
      if (component_[v] != v) unknown_[v] = next++;
    size_ = static_cast<Eigen::Index>(next);

    std::vector<Eigen::Triplet<double>> trip;
    for (const auto& e : g.edges()) {
      if (e.length <= zero_length) continue;
      const std::size_t a = node_of_[e.start], b = node_of_[e.end];
      if (a == b) continue;
      const double c = 1.0 / e.length;
      const long ia = unknown_[a], ib = unknown_[b];
      if (ia >= 0) trip.emplace_back(ia, ia, c);
      if (ib >= 0) trip.emplace_back(ib, ib, c);
      if (ia >= 0 && ib >= 0) {
        trip.emplace_back(ia, ib, -c);
        trip.emplace_back(ib, ia, -c);
      }
    }
    dense_ = static_cast<std::size_t>(size_) <= dense_threshold;
    if (size_ == 0) return;
    Eigen::SparseMatrix<double> lap(size_, size_);
    lap.setFromTriplets(trip.begin(), trip.end());
    if (dense_) {
      dense_llt_.compute(Eigen::MatrixXd(lap));
      if (dense_llt_.info() != Eigen::Success) throw NumericalError("grounded Laplacian factorization failed");
    } else {
      sparse_llt_.compute(lap);
      if (sparse_llt_.info() != Eigen::Success) throw NumericalError("grounded Laplacian factorization failed");
    }
  }

  bool connected(std::size_t u, std::size_t v) const {
    return component_[node_of_[u]] == component_[node_of_[v]];
  }

  /// Grounded potentials produced by unit current injected at vertex v.
  Eigen::VectorXd potentials(std::size_t v) const {
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(size_);
    const long iv = unknown_[node_of_[v]];
    if (iv < 0) return rhs;  // grounded: all potentials zero
    rhs[iv] = 1.0;
    return dense_ ? Eigen::VectorXd(dense_llt_.solve(rhs)) : Eigen::VectorXd(sparse_llt_.solve(rhs));
  }

  double potential_at(const Eigen::VectorXd& phi, std::size_t v) const {
    const long iv = unknown_[node_of_[v]];
    return iv < 0 ? 0.0 : phi[iv];
  }

  /// Effective resistance between vertices u and v of the same component.
  double resistance(std::size_t u, std::size_t v) const {
    if (!connected(u, v)) throw UnreachableError("vertices lie in different components");
    if (node_of_[u] == node_of_[v]) return 0.0;
    const Eigen::VectorXd pu = potentials(u), pv = potentials(v);
    return std::max(0.0, potential_at(pu, u) + potential_at(pv, v) - 2.0 * potential_at(pu, v));
  }

 private:
  std::vector<std::size_t> node_of_;
  std::vector<std::size_t> component_;
  std::vector<long> unknown_;
  Eigen::Index size_ = 0;
  bool dense_ = true;
  Eigen::LLT<Eigen::MatrixXd> dense_llt_;
  Eigen::SimplicialLLT<Eigen::SparseMatrix<double>> sparse_llt_;
};

/// Effective resistance between two positions with edge resistance = length.
inline double resistance_distance(const MetricGraph& g, const GraphPosition& s, const GraphPosition& t,
                                  std::size_t dense_threshold = 2000) {
  const GraphPosition pair[] = {s, t};
  const AugmentedGraph aug = insert_positions(g, pair);
  const ResistanceSolver solver(aug.graph, dense_threshold);
  if (!solver.connected(aug.vertex_of[0], aug.vertex_of[1]))
    throw UnreachableError("positions lie in different components", {{0, 1}});
  return solver.resistance(aug.vertex_of[0], aug.vertex_of[1]);
}

/// All pairwise distances; resistance shares one Laplacian factorization.
inline DistanceMatrix pairwise_distances(const MetricGraph& g, std::span<const GraphPosition> positions,
                                         Metric metric, std::size_t dense_threshold = 2000) {
  const std::size_t n = positions.size();
  DistanceMatrix out{{positions.begin(), positions.end()}, metric, Eigen::MatrixXd::Zero(n, n)};
  if (n == 0) return out;
  const AugmentedGraph aug = insert_positions(g, positions);
  std::vector<std::pair<std::size_t, std::size_t>> unreachable;

  // Distinct vertices, so coincident positions share one solve / search.
  std::vector<std::size_t> verts = aug.vertex_of;
  std::sort(verts.begin(), verts.end());
  verts.erase(std::unique(verts.begin(), verts.end()), verts.end());
  std::map<std::size_t, std::size_t> slot;
  for (std::size_t k = 0; k < verts.size(); ++k) slot[verts[k]] = k;
  Eigen::MatrixXd between(verts.size(), verts.size());

  if (metric == Metric::geodesic) {
    const auto adj = detail::adjacency(aug.graph);
    for (std::size_t a = 0; a < verts.size(); ++a) {
      const std::pair<std::size_t, double> src[] = {{verts[a], 0.0}};
      const auto dist = detail::dijkstra(adj, src);
      for (std::size_t b = 0; b < verts.size(); ++b) between(a, b) = dist[verts[b]];
    }
  } else {
    const ResistanceSolver solver(aug.graph, dense_threshold);
    std::vector<Eigen::VectorXd> phi(verts.size());
    for (std::size_t a = 0; a < verts.size(); ++a) phi[a] = solver.potentials(verts[a]);
    for (std::size_t a = 0; a < verts.size(); ++a)
      for (std::size_t b = 0; b < verts.size(); ++b) {
        if (!solver.connected(verts[a], verts[b])) {
          between(a, b) = std::numeric_limits<double>::infinity();
          continue;
        }
        const double r = solver.potential_at(phi[a], verts[a]) + solver.potential_at(phi[b], verts[b]) -
                         2.0 * solver.potential_at(phi[a], verts[b]);
        between(a, b) = a == b ? 0.0 : std::max(0.0, r);
      }
  }

  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const std::size_t a = slot[aug.vertex_of[i]], b = slot[aug.vertex_of[j]];
      double d = a == b ? 0.0 : 0.5 * (between(a, b) + between(b, a));
      if (!std::isfinite(d)) unreachable.emplace_back(i, j);
      out.values(i, j) = out.values(j, i) = d;
    }
  if (!unreachable.empty()) {
    std::string msg = "unreachable position pairs:";
    for (std::size_t k = 0; k < std::min<std::size_t>(unreachable.size(), 10); ++k)
      msg += " (" + std::to_string(unreachable[k].first) + "," + std::to_string(unreachable[k].second) + ")";
    if (unreachable.size() > 10) msg += " ...";
    throw UnreachableError(msg, std::move(unreachable));
  }
  return out;
}

/// CSV with a header row of position indices; row i starts with its index.
inline void write_csv(std::ostream& os, const DistanceMatrix& dm) {
  os.precision(17);
  os << "index";
  for (Eigen::Index j = 0; j < dm.values.cols(); ++j) os << ',' << j;
  os << '\n';
  for (Eigen::Index i = 0; i < dm.values.rows(); ++i) {
    os << i;
    for (Eigen::Index j = 0; j < dm.values.cols(); ++j) os << ',' << dm.values(i, j);
    os << '\n';
  }
}

}  // namespace netfield
