#pragma once

// Graph generators and dense reference computations shared by the test suites.

#include <cmath>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "netfield/graph.hpp"

namespace netfield::testing {

inline Segment straight(Point a, Point b) { return {{a, b}, {}}; }

inline MetricGraph graph_from(std::vector<Segment> segs, double tol = 0.0) {
  return build_graph(segs, BuildOptions{tol, false});
}

/// Path of unit edges along the x axis.
inline MetricGraph path_graph(std::size_t edges, double length = 1.0) {
  std::vector<Segment> segs;
  for (std::size_t i = 0; i < edges; ++i)
    segs.push_back(straight({length * i, 0.0}, {length * (i + 1), 0.0}));
  return graph_from(segs);
}

inline MetricGraph interval(double length) { return path_graph(1, length); }

/// Circle of circumference L made of `pieces` edges.
inline MetricGraph circle(double circumference, std::size_t pieces = 2, std::size_t points_per_piece = 64) {
  const double radius = circumference / (2.0 * M_PI);
  std::vector<Segment> segs;
  for (std::size_t p = 0; p < pieces; ++p) {
    Segment s;
    for (std::size_t k = 0; k <= points_per_piece; ++k) {
      const double t = 2.0 * M_PI * (static_cast<double>(p) + static_cast<double>(k) / points_per_piece) / pieces;
      s.points.push_back({radius * std::cos(t), radius * std::sin(t)});
    }
    if (p + 1 == pieces) s.points.back() = segs.front().points.front();
    if (p > 0) s.points.front() = segs.back().points.back();
    segs.push_back(std::move(s));
  }
  return graph_from(segs);
}

/// Exact circle polylines are chords; this returns the polyline circumference.
inline double circumference(const MetricGraph& g) { return g.total_length(); }

inline MetricGraph triangle() {
  return graph_from({straight({0, 0}, {1, 0}), straight({1, 0}, {0.5, std::sqrt(3.0) / 2}),
                     straight({0.5, std::sqrt(3.0) / 2}, {0, 0})});
}

inline MetricGraph star(std::size_t arms, double length = 1.0) {
  std::vector<Segment> segs;
  for (std::size_t i = 0; i < arms; ++i) {
    const double t = 2.0 * M_PI * i / arms;
    segs.push_back(straight({0, 0}, {length * std::cos(t), length * std::sin(t)}));
  }
  return graph_from(segs);
}

/// Random tree with straight edges between uniform points in the unit square.
inline MetricGraph random_tree(std::size_t vertices, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<Point> pts;
  for (std::size_t i = 0; i < vertices; ++i) pts.push_back({u(rng), u(rng)});
  std::vector<Segment> segs;
  for (std::size_t i = 1; i < vertices; ++i) {
    std::uniform_int_distribution<std::size_t> pick(0, i - 1);
    segs.push_back(straight(pts[pick(rng)], pts[i]));
  }
  return graph_from(segs);
}

/// Random tree plus `extra` chords between random vertex pairs (cycles, parallel edges).
inline MetricGraph random_connected(std::size_t vertices, std::size_t extra, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<Point> pts;
  for (std::size_t i = 0; i < vertices; ++i) pts.push_back({u(rng), u(rng)});
  std::vector<Segment> segs;
  for (std::size_t i = 1; i < vertices; ++i) {
    std::uniform_int_distribution<std::size_t> pick(0, i - 1);
    segs.push_back(straight(pts[pick(rng)], pts[i]));
  }
  std::uniform_int_distribution<std::size_t> any(0, vertices - 1);
  for (std::size_t k = 0; k < extra; ++k) {
    std::size_t a = any(rng), b = any(rng);
    if (a == b) b = (a + 1) % vertices;
    // Bend the chord so parallel chords have distinct geometry.
    const Point mid{0.5 * (pts[a].x + pts[b].x) + 0.05 * (u(rng) - 0.5),
                    0.5 * (pts[a].y + pts[b].y) + 0.05 * (u(rng) - 0.5)};
    segs.push_back({{pts[a], mid, pts[b]}, {}});
  }
  return graph_from(segs);
}

inline std::vector<GraphPosition> random_positions(const MetricGraph& g, std::size_t n, std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> edge(0, g.edge_count() - 1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<GraphPosition> out;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t e = edge(rng);
    out.push_back({e, u(rng) * g.edge(e).length});
  }
  return out;
}

/// Dense weighted Laplacian over graph vertices (conductance 1/length).
inline Eigen::MatrixXd dense_laplacian(const MetricGraph& g) {
  const auto n = static_cast<Eigen::Index>(g.vertex_count());
  Eigen::MatrixXd l = Eigen::MatrixXd::Zero(n, n);
  for (const auto& e : g.edges()) {
    if (e.start == e.end) continue;
    const double c = 1.0 / e.length;
    l(e.start, e.start) += c;
    l(e.end, e.end) += c;
    l(e.start, e.end) -= c;
    l(e.end, e.start) -= c;
  }
  return l;
}

/// Effective resistance from the Moore-Penrose pseudo-inverse (connected graph).
inline double pinv_resistance(const MetricGraph& g, std::size_t a, std::size_t b) {
  const Eigen::MatrixXd l = dense_laplacian(g);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(l);
  Eigen::VectorXd inv = es.eigenvalues();
  for (Eigen::Index i = 0; i < inv.size(); ++i) inv[i] = std::abs(inv[i]) > 1e-9 ? 1.0 / inv[i] : 0.0;
  const Eigen::MatrixXd pinv = es.eigenvectors() * inv.asDiagonal() * es.eigenvectors().transpose();
  Eigen::VectorXd d = Eigen::VectorXd::Zero(l.rows());
  d[a] += 1.0;
  d[b] -= 1.0;
  return d.dot(pinv * d);
}

}  // namespace netfield::testing
