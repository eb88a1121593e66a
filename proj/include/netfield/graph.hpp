#pragma once

// Compact metric graphs built from road polylines, and the mapping between
// planar coordinates and on-network positions.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <limits>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "netfield/error.hpp"

namespace netfield {

struct Point {
  double x = 0.0;
  double y = 0.0;
  friend bool operator==(const Point&, const Point&) = default;
};

inline double distance(Point a, Point b) { return std::hypot(a.x - b.x, a.y - b.y); }

using Attributes = std::map<std::string, double>;

/// Raw input polyline (one road segment) with its numeric properties.
struct Segment {
  std::vector<Point> points;
  Attributes attributes;
};

struct Edge {
  std::size_t start = 0;
  std::size_t end = 0;
  double length = 0.0;
  std::vector<Point> polyline;
  Attributes attributes;
  std::size_t source = 0;  ///< index of the input segment this edge came from
};

/// A point on the network: arclength `offset` from the start of edge `edge`.
struct GraphPosition {
  std::size_t edge = 0;
  double offset = 0.0;
  friend bool operator==(const GraphPosition&, const GraphPosition&) = default;
};

namespace detail {

inline double polyline_length(const std::vector<Point>& pts) {
  double len = 0.0;
  for (std::size_t i = 1; i < pts.size(); ++i) len += distance(pts[i - 1], pts[i]);
  return len;
}

inline std::vector<double> cumulative_lengths(const std::vector<Point>& pts) {
  std::vector<double> cum(pts.size(), 0.0);
  for (std::size_t i = 1; i < pts.size(); ++i) cum[i] = cum[i - 1] + distance(pts[i - 1], pts[i]);
  return cum;
}

struct Box {
  double xmin, ymin, xmax, ymax;
  double distance_to(Point p) const {
    const double dx = std::max({xmin - p.x, 0.0, p.x - xmax});
    const double dy = std::max({ymin - p.y, 0.0, p.y - ymax});
    return std::hypot(dx, dy);
  }
  bool overlaps(const Box& o, double pad) const {
    return xmin <= o.xmax + pad && o.xmin <= xmax + pad && ymin <= o.ymax + pad &&
           o.ymin <= ymax + pad;
  }
};

inline Box bounding_box(const std::vector<Point>& pts) {
  Box b{std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity(),
        -std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()};
  for (const auto& p : pts) {
    b.xmin = std::min(b.xmin, p.x);
    b.ymin = std::min(b.ymin, p.y);
    b.xmax = std::max(b.xmax, p.x);
    b.ymax = std::max(b.ymax, p.y);
  }
  return b;
}

// Splits `pts` at arclength s (0 < s < total) into two polylines sharing the cut point.
inline std::pair<std::vector<Point>, std::vector<Point>> cut_polyline(const std::vector<Point>& pts,
                                                                      const std::vector<double>& cum,
                                                                      double s) {
  std::size_t k = 0;
  while (k + 2 < pts.size() && cum[k + 1] < s) ++k;
  const double piece = cum[k + 1] - cum[k];
  const double t = piece > 0.0 ? std::clamp((s - cum[k]) / piece, 0.0, 1.0) : 0.0;
  const Point cut{pts[k].x + t * (pts[k + 1].x - pts[k].x), pts[k].y + t * (pts[k + 1].y - pts[k].y)};
  std::vector<Point> first(pts.begin(), pts.begin() + static_cast<std::ptrdiff_t>(k) + 1);
  if (!(first.back() == cut)) first.push_back(cut);
  std::vector<Point> second{cut};
  for (std::size_t i = k + 1; i < pts.size(); ++i)
    if (!(pts[i] == second.back())) second.push_back(pts[i]);
  if (first.size() < 2) first.push_back(cut);
  if (second.size() < 2) second.push_back(cut);
  return {std::move(first), std::move(second)};
}

}  // namespace detail

/// Vertices with planar coordinates plus edges with arclength and geometry.
/// Immutable once constructed.
class MetricGraph {
 public:
  MetricGraph() = default;

  /// Validates ids and the length/geometry invariants.
  MetricGraph(std::vector<Point> vertices, std::vector<Edge> edges, double snap_tolerance,
              std::size_t dropped_segments = 0)
      : vertices_(std::move(vertices)),
        edges_(std::move(edges)),
        snap_tolerance_(snap_tolerance),
        dropped_(dropped_segments) {
    cumulative_.reserve(edges_.size());
    boxes_.reserve(edges_.size());
    for (std::size_t e = 0; e < edges_.size(); ++e) {
      const Edge& ed = edges_[e];
      if (ed.start >= vertices_.size() || ed.end >= vertices_.size())
        throw InputError("edge " + std::to_string(e) + " references a missing vertex");
      if (ed.polyline.size() < 2) throw InputError("edge " + std::to_string(e) + " has < 2 points");
      if (!(ed.length >= 0.0) || !std::isfinite(ed.length))
        throw InputError("edge " + std::to_string(e) + " has invalid length");
      const double arc = detail::polyline_length(ed.polyline);
      if (std::abs(arc - ed.length) > 1e-9 * std::max(1.0, ed.length))
        throw InputError("edge " + std::to_string(e) + " length disagrees with its polyline");
      const double chord = distance(vertices_[ed.start], vertices_[ed.end]);
      if (ed.length + 1e-9 * std::max(1.0, chord) < chord)
        throw InputError("edge " + std::to_string(e) + " is shorter than its endpoint distance");
      cumulative_.push_back(detail::cumulative_lengths(ed.polyline));
      boxes_.push_back(detail::bounding_box(ed.polyline));
    }
  }

  std::size_t vertex_count() const { return vertices_.size(); }
  std::size_t edge_count() const { return edges_.size(); }
  const std::vector<Point>& vertices() const { return vertices_; }
  const std::vector<Edge>& edges() const { return edges_; }
  const Point& vertex(std::size_t v) const { return vertices_.at(v); }
  const Edge& edge(std::size_t e) const { return edges_.at(e); }
  double snap_tolerance() const { return snap_tolerance_; }
  /// Input segments removed because they collapsed below the snap tolerance.
  std::size_t dropped_segments() const { return dropped_; }

  const std::vector<double>& cumulative(std::size_t e) const { return cumulative_.at(e); }
  const detail::Box& box(std::size_t e) const { return boxes_.at(e); }

  double total_length() const {
    double s = 0.0;
    for (const auto& e : edges_) s += e.length;
    return s;
  }

  double shortest_edge() const {
    double s = std::numeric_limits<double>::infinity();
    for (const auto& e : edges_) s = std::min(s, e.length);
    return s;
  }

  void check(const GraphPosition& pos) const {
    if (pos.edge >= edges_.size())
      throw InputError("position references missing edge " + std::to_string(pos.edge));
    const double len = edges_[pos.edge].length;
    if (!(pos.offset >= 0.0 && pos.offset <= len))
      throw InputError("offset " + std::to_string(pos.offset) + " outside [0, " + std::to_string(len) +
                       "] on edge " + std::to_string(pos.edge));
  }

 private:
  std::vector<Point> vertices_;
  std::vector<Edge> edges_;
  double snap_tolerance_ = 1e-6;
  std::size_t dropped_ = 0;
  std::vector<std::vector<double>> cumulative_;
  std::vector<detail::Box> boxes_;
};

struct BuildOptions {
  double snap_tolerance = 1e-6;
  /// Split polylines where they cross or touch each other's interiors.
  bool split_crossings = false;
};

namespace detail {

// Greedy endpoint snapping on a uniform hash grid; a point joins the lowest-id
// vertex within tolerance, otherwise it becomes a new vertex.
class VertexIndex {
 public:
  explicit VertexIndex(double tol) : tol_(tol) {}

  std::size_t insert(Point p, std::vector<Point>& vertices) {
    if (tol_ <= 0.0) {
      const auto key = exact_key(p);
      if (auto it = exact_.find(key); it != exact_.end()) return it->second;
      vertices.push_back(p);
      exact_.emplace(key, vertices.size() - 1);
      return vertices.size() - 1;
    }
    const auto [cx, cy] = cell(p);
    std::size_t best = std::numeric_limits<std::size_t>::max();
    for (std::int64_t dx = -1; dx <= 1; ++dx)
      for (std::int64_t dy = -1; dy <= 1; ++dy) {
        auto it = grid_.find(pack(cx + dx, cy + dy));
        if (it == grid_.end()) continue;
        for (std::size_t v : it->second)
          if (v < best && distance(vertices[v], p) <= tol_) best = v;
      }
    if (best != std::numeric_limits<std::size_t>::max()) return best;
    vertices.push_back(p);
    grid_[pack(cx, cy)].push_back(vertices.size() - 1);
    return vertices.size() - 1;
  }

 private:
  static std::pair<std::uint64_t, std::uint64_t> exact_key(Point p) {
    std::uint64_t a, b;
    const double x = p.x == 0.0 ? 0.0 : p.x;  // fold -0 onto +0
    const double y = p.y == 0.0 ? 0.0 : p.y;
    std::memcpy(&a, &x, sizeof a);
    std::memcpy(&b, &y, sizeof b);
    return {a, b};
  }
  std::pair<std::int64_t, std::int64_t> cell(Point p) const {
    return {static_cast<std::int64_t>(std::floor(p.x / tol_)),
            static_cast<std::int64_t>(std::floor(p.y / tol_))};
  }
  static std::uint64_t pack(std::int64_t a, std::int64_t b) {
    return (static_cast<std::uint64_t>(a) * 0x9E3779B97F4A7C15ULL) ^ static_cast<std::uint64_t>(b);
  }
  struct PairHash {
    std::size_t operator()(const std::pair<std::uint64_t, std::uint64_t>& k) const {
      return std::hash<std::uint64_t>{}(k.first * 31 + k.second);
    }
  };

  double tol_;
  std::unordered_map<std::uint64_t, std::vector<std::size_t>> grid_;
  std::unordered_map<std::pair<std::uint64_t, std::uint64_t>, std::size_t, PairHash> exact_;
};

// Arclength positions where piece (a,b) meets piece (c,d); returns false for
// parallel pieces.
inline bool piece_intersection(Point a, Point b, Point c, Point d, double& t, double& u) {
  const double rx = b.x - a.x, ry = b.y - a.y, sx = d.x - c.x, sy = d.y - c.y;
  const double denom = rx * sy - ry * sx;
  if (std::abs(denom) <= 1e-15 * (std::hypot(rx, ry) * std::hypot(sx, sy))) return false;
  const double qx = c.x - a.x, qy = c.y - a.y;
  t = (qx * sy - qy * sx) / denom;
  u = (qx * ry - qy * rx) / denom;
  constexpr double eps = 1e-12;
  return t >= -eps && t <= 1.0 + eps && u >= -eps && u <= 1.0 + eps;
}

// Pieces come out in input order; `source` receives the input index of each piece.
inline std::vector<Segment> split_at_crossings(std::span<const Segment> segments, double tol,
                                               std::vector<std::size_t>& source) {
  const std::size_t n = segments.size();
  std::vector<std::vector<double>> cum(n);
  std::vector<Box> boxes(n);
  for (std::size_t i = 0; i < n; ++i) {
    cum[i] = cumulative_lengths(segments[i].points);
    boxes[i] = bounding_box(segments[i].points);
  }
  std::vector<std::vector<double>> cuts(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      if (!boxes[i].overlaps(boxes[j], tol)) continue;
      const auto& p = segments[i].points;
      const auto& q = segments[j].points;
      for (std::size_t a = 0; a + 1 < p.size(); ++a)
        for (std::size_t c = 0; c + 1 < q.size(); ++c) {
          double t, u;
          if (!piece_intersection(p[a], p[a + 1], q[c], q[c + 1], t, u)) continue;
          const double si = cum[i][a] + std::clamp(t, 0.0, 1.0) * (cum[i][a + 1] - cum[i][a]);
          const double sj = cum[j][c] + std::clamp(u, 0.0, 1.0) * (cum[j][c + 1] - cum[j][c]);
          const double guard = std::max(tol, 1e-12);
          if (si > guard && si < cum[i].back() - guard) cuts[i].push_back(si);
          if (sj > guard && sj < cum[j].back() - guard) cuts[j].push_back(sj);
        }
    }
  std::vector<Segment> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto& cs = cuts[i];
    std::sort(cs.begin(), cs.end());
    std::vector<double> uniq;
    for (double s : cs)
      if (uniq.empty() || s - uniq.back() > std::max(tol, 1e-12)) uniq.push_back(s);
    std::vector<Point> rest = segments[i].points;
    double consumed = 0.0;
    for (double s : uniq) {
      const auto rest_cum = cumulative_lengths(rest);
      auto [head, tail] = cut_polyline(rest, rest_cum, s - consumed);
      out.push_back({std::move(head), segments[i].attributes});
      source.push_back(i);
      rest = std::move(tail);
      consumed = s;
    }
    out.push_back({std::move(rest), segments[i].attributes});
    source.push_back(i);
  }
  return out;
}

}  // namespace detail

/// Merges endpoints within the snap tolerance and turns each segment into one
/// edge. Segments that collapse to length <= tolerance are dropped and counted.
inline MetricGraph build_graph(std::span<const Segment> input, const BuildOptions& opts = {}) {
  if (input.empty()) throw InputError("no segments");
  if (!(opts.snap_tolerance >= 0.0) || !std::isfinite(opts.snap_tolerance))
    throw InputError("snap tolerance must be finite and >= 0");
  for (std::size_t i = 0; i < input.size(); ++i) {
    if (input[i].points.size() < 2)
      throw InputError("segment " + std::to_string(i) + " has fewer than 2 points");
    for (const auto& p : input[i].points)
      if (!std::isfinite(p.x) || !std::isfinite(p.y))
        throw InputError("segment " + std::to_string(i) + " has non-finite coordinates");
  }

  std::vector<Segment> split;
  std::vector<std::size_t> source;
  if (opts.split_crossings) {
    split = detail::split_at_crossings(input, opts.snap_tolerance, source);
  } else {
    split.assign(input.begin(), input.end());
    source.resize(split.size());
    std::iota(source.begin(), source.end(), std::size_t{0});
  }

  std::vector<Point> vertices;
  std::vector<Edge> edges;
  detail::VertexIndex index(opts.snap_tolerance);
  std::size_t dropped = 0;
  for (std::size_t i = 0; i < split.size(); ++i) {
    const auto& pts = split[i].points;
    const std::size_t a = index.insert(pts.front(), vertices);
    const std::size_t b = index.insert(pts.back(), vertices);
    std::vector<Point> line;
    line.reserve(pts.size());
    line.push_back(vertices[a]);
    for (std::size_t k = 1; k + 1 < pts.size(); ++k)
      if (!(pts[k] == line.back())) line.push_back(pts[k]);
    if (line.size() > 1 && line.back() == vertices[b]) line.pop_back();
    line.push_back(vertices[b]);
    const double len = detail::polyline_length(line);
    if (len <= opts.snap_tolerance || len == 0.0) {
      ++dropped;
      continue;
    }
    edges.push_back({a, b, len, std::move(line), split[i].attributes, source[i]});
  }
  if (edges.empty()) throw InputError("no segments survived snapping");

  // Vertices referenced only by dropped segments are removed; ids stay dense.
  std::vector<std::size_t> remap(vertices.size(), std::numeric_limits<std::size_t>::max());
  std::vector<Point> kept;
  for (auto& e : edges)
    for (std::size_t* v : {&e.start, &e.end}) {
      if (remap[*v] == std::numeric_limits<std::size_t>::max()) {
        remap[*v] = kept.size();
        kept.push_back(vertices[*v]);
      }
      *v = remap[*v];
    }
  return MetricGraph(std::move(kept), std::move(edges), opts.snap_tolerance, dropped);
}

/// Nearest on-network position and its Euclidean distance to the query point.
struct Projection {
  GraphPosition position;
  double distance = std::numeric_limits<double>::infinity();
};

/// Closest point over all edge polylines; ties (within 1e-12) resolve to the
/// lowest edge id, then the lowest offset.
inline Projection nearest_position(const MetricGraph& g, Point p) {
  Projection best;
  constexpr double tie = 1e-12;
  for (std::size_t e = 0; e < g.edge_count(); ++e) {
    if (g.box(e).distance_to(p) > best.distance + tie) continue;
    const auto& pts = g.edge(e).polyline;
    const auto& cum = g.cumulative(e);
    for (std::size_t k = 0; k + 1 < pts.size(); ++k) {
      const double dx = pts[k + 1].x - pts[k].x, dy = pts[k + 1].y - pts[k].y;
      const double len2 = dx * dx + dy * dy;
      double t = len2 > 0.0 ? ((p.x - pts[k].x) * dx + (p.y - pts[k].y) * dy) / len2 : 0.0;
      t = std::clamp(t, 0.0, 1.0);
      const Point q{pts[k].x + t * dx, pts[k].y + t * dy};
      const double d = distance(p, q);
      if (d < best.distance - tie) {
        const double len = g.edge(e).length;
        best.distance = d;
        best.position = {e, std::clamp(cum[k] + t * (cum[k + 1] - cum[k]), 0.0, len)};
      }
    }
  }
  return best;
}

/// Snaps a planar point onto the network; throws SnapError beyond max_snap.
inline GraphPosition project_point(const MetricGraph& g, Point p, double max_snap) {
  if (!(max_snap > 0.0)) throw InputError("max_snap must be > 0");
  if (g.edge_count() == 0) throw InputError("graph has no edges");
  const Projection proj = nearest_position(g, p);
  if (proj.distance > max_snap) throw SnapError(proj.distance, max_snap);
  return proj.position;
}

inline Point position_to_xy(const MetricGraph& g, const GraphPosition& pos) {
  g.check(pos);
  const auto& pts = g.edge(pos.edge).polyline;
  const auto& cum = g.cumulative(pos.edge);
  if (pos.offset <= 0.0) return pts.front();
  if (pos.offset >= g.edge(pos.edge).length) return pts.back();
  std::size_t k = 0;
  while (k + 2 < pts.size() && cum[k + 1] < pos.offset) ++k;
  const double piece = cum[k + 1] - cum[k];
  const double t = piece > 0.0 ? std::clamp((pos.offset - cum[k]) / piece, 0.0, 1.0) : 0.0;
  return {pts[k].x + t * (pts[k + 1].x - pts[k].x), pts[k].y + t * (pts[k + 1].y - pts[k].y)};
}

/// Copy of the graph where `pos` becomes a vertex. Edge `pos.edge` keeps its
/// id for the first piece; the second piece is appended as a new edge.
inline MetricGraph split_edge(const MetricGraph& g, const GraphPosition& pos) {
  g.check(pos);
  const Edge& old = g.edge(pos.edge);
  if (pos.offset <= 0.0 || pos.offset >= old.length) return g;
  auto [head, tail] = detail::cut_polyline(old.polyline, g.cumulative(pos.edge), pos.offset);
  std::vector<Point> vertices = g.vertices();
  std::vector<Edge> edges = g.edges();
  const std::size_t mid = vertices.size();
  vertices.push_back(head.back());
  Edge first = old, second = old;
  first.end = mid;
  first.length = pos.offset;
  first.polyline = std::move(head);
  second.start = mid;
  second.length = old.length - pos.offset;
  second.polyline = std::move(tail);
  edges[pos.edge] = std::move(first);
  edges.push_back(std::move(second));
  return MetricGraph(std::move(vertices), std::move(edges), g.snap_tolerance(), g.dropped_segments());
}

/// Graph with every position promoted to a vertex, plus the vertex id of each
/// position. Positions within 1e-12 of an endpoint or of each other share a vertex.
struct AugmentedGraph {
  MetricGraph graph;
  std::vector<std::size_t> vertex_of;
};

inline AugmentedGraph insert_positions(const MetricGraph& g, std::span<const GraphPosition> positions) {
  constexpr double tol = 1e-12;
  std::vector<std::vector<std::size_t>> on_edge(g.edge_count());
  for (std::size_t i = 0; i < positions.size(); ++i) {
    g.check(positions[i]);
    on_edge[positions[i].edge].push_back(i);
  }
  std::vector<Point> vertices = g.vertices();
  std::vector<Edge> edges;
  edges.reserve(g.edge_count() + positions.size());
  std::vector<std::size_t> vertex_of(positions.size());
  std::vector<Edge> appended;
  for (std::size_t e = 0; e < g.edge_count(); ++e) {
    const Edge& old = g.edge(e);
    auto& ids = on_edge[e];
    std::stable_sort(ids.begin(), ids.end(), [&](std::size_t a, std::size_t b) {
      return positions[a].offset < positions[b].offset;
    });
    std::vector<Point> rest = old.polyline;
    std::size_t current_start = old.start;
    double consumed = 0.0;
    bool first_piece = true;
    auto emit = [&](Edge piece) {
      if (first_piece) {
        edges.push_back(std::move(piece));
        first_piece = false;
      } else {
        appended.push_back(std::move(piece));
      }
    };
    for (std::size_t i : ids) {
      const double s = positions[i].offset;
      if (s <= tol) {
        vertex_of[i] = old.start;
        continue;
      }
      if (s >= old.length - tol) {
        vertex_of[i] = old.end;
        continue;
      }
      if (s - consumed <= tol && consumed > 0.0) {
        vertex_of[i] = current_start;
        continue;
      }
      auto [head, tail] = detail::cut_polyline(rest, detail::cumulative_lengths(rest), s - consumed);
      const std::size_t mid = vertices.size();
      vertices.push_back(head.back());
      Edge piece = old;
      piece.start = current_start;
      piece.end = mid;
      piece.length = s - consumed;
      piece.polyline = std::move(head);
      emit(std::move(piece));
      rest = std::move(tail);
      current_start = mid;
      consumed = s;
      vertex_of[i] = mid;
    }
    Edge last = old;
    last.start = current_start;
    last.length = old.length - consumed;
    last.polyline = std::move(rest);
    emit(std::move(last));
  }
  for (auto& e : appended) edges.push_back(std::move(e));
  return {MetricGraph(std::move(vertices), std::move(edges), g.snap_tolerance(), g.dropped_segments()),
          std::move(vertex_of)};
}

/// Connected-component label per vertex, labelled 0.. in order of lowest vertex id.
inline std::vector<std::size_t> component_labels(const MetricGraph& g) {
  std::vector<std::size_t> parent(g.vertex_count());
  std::iota(parent.begin(), parent.end(), std::size_t{0});
  auto find = [&](std::size_t v) {
    while (parent[v] != v) v = parent[v] = parent[parent[v]];
    return v;
  };
  for (const auto& e : g.edges()) {
    const std::size_t a = find(e.start), b = find(e.end);
    if (a != b) parent[std::max(a, b)] = std::min(a, b);
  }
  std::vector<std::size_t> label(g.vertex_count());
  std::map<std::size_t, std::size_t> root_label;
  for (std::size_t v = 0; v < g.vertex_count(); ++v) {
    const std::size_t r = find(v);
    auto [it, inserted] = root_label.emplace(r, root_label.size());
    label[v] = it->second;
  }
  return label;
}

struct GraphSummary {
  std::size_t vertex_count = 0;
  std::size_t edge_count = 0;
  double total_length = 0.0;
  std::map<std::size_t, std::size_t> degree_histogram;  ///< degree -> vertex count
  std::size_t component_count = 0;
  std::size_t dropped_segments = 0;
};

inline GraphSummary graph_summary(const MetricGraph& g) {
  GraphSummary s;
  s.vertex_count = g.vertex_count();
  s.edge_count = g.edge_count();
  s.total_length = g.total_length();
  s.dropped_segments = g.dropped_segments();
  std::vector<std::size_t> degree(g.vertex_count(), 0);
  for (const auto& e : g.edges()) {
    ++degree[e.start];
    ++degree[e.end];
  }
  for (std::size_t d : degree) ++s.degree_histogram[d];
  const auto labels = component_labels(g);
  s.component_count = labels.empty() ? 0 : *std::max_element(labels.begin(), labels.end()) + 1;
  return s;
}

}  // namespace netfield
