#pragma once

#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "netfield/error.hpp"
#include "netfield/graph.hpp"

namespace netfield {

using Json = nlohmann::ordered_json;

namespace detail {

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline std::ofstream open_output(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path);
  return out;
}

inline std::size_t line_of_offset(const std::string& text, std::size_t offset) {
  std::size_t line = 1;
  for (std::size_t i = 0; i < offset && i < text.size(); ++i)
    if (text[i] == '\n') ++line;
  return line;
}

inline Json parse_json(const std::string& text, const std::string& what) {
  try {
    return Json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw InputError(what + ": JSON parse error at line " + std::to_string(line_of_offset(text, e.byte)) + ": " +
                     e.what());
  }
}

inline bool parse_double(const std::string& s, double& out) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  if (b == e) return false;
  const char* first = s.data() + b;
  if (*first == '+') ++first;
  const auto res = std::from_chars(first, s.data() + e, out);
  return res.ec == std::errc() && res.ptr == s.data() + e;
}

inline std::string trim(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

// One CSV record; double quotes group fields and "" escapes a quote.
inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

inline Point json_point(const Json& j, const std::string& where) {
  if (!j.is_array() || j.size() < 2 || !j[0].is_number() || !j[1].is_number())
    throw InputError(where + ": coordinate must be [x, y]");
  return {j[0].get<double>(), j[1].get<double>()};
}

}  // namespace detail

struct NetworkFile {
  std::vector<Segment> segments;
  std::size_t feature_count = 0;
  /// Features whose geometry is not a LineString.
  std::size_t skipped = 0;
};

/// Reads a GeoJSON FeatureCollection; numeric feature properties become segment attributes.
inline NetworkFile parse_network(const std::string& text) {
  const Json doc = detail::parse_json(text, "network");
  if (!doc.is_object() || doc.value("type", "") != "FeatureCollection" || !doc.contains("features") ||
      !doc["features"].is_array())
    throw InputError("network: expected a GeoJSON FeatureCollection");
  NetworkFile out;
  const Json& features = doc["features"];
  out.feature_count = features.size();
  for (std::size_t i = 0; i < features.size(); ++i) {
    const Json& f = features[i];
    const std::string where = "network feature " + std::to_string(i);
    if (!f.is_object() || !f.contains("geometry")) throw InputError(where + ": missing geometry");
    const Json& geom = f["geometry"];
    if (geom.is_null() || !geom.is_object() || geom.value("type", "") != "LineString") {
      ++out.skipped;
      continue;
    }
    if (!geom.contains("coordinates") || !geom["coordinates"].is_array())
      throw InputError(where + ": LineString without coordinates");
    Segment seg;
    for (const Json& c : geom["coordinates"]) seg.points.push_back(detail::json_point(c, where));
    if (f.contains("properties") && f["properties"].is_object())
      for (const auto& [k, v] : f["properties"].items())
        if (v.is_number()) seg.attributes[k] = v.get<double>();
    out.segments.push_back(std::move(seg));
  }
  return out;
}

inline NetworkFile load_network(const std::string& path) { return parse_network(detail::read_file(path)); }

inline Json network_to_geojson(const std::vector<Segment>& segments) {
  Json fc;
  fc["type"] = "FeatureCollection";
  Json features = Json::array();
  for (const Segment& s : segments) {
    Json coords = Json::array();
    for (const Point& p : s.points) coords.push_back({p.x, p.y});
    Json props = Json::object();
    for (const auto& [k, v] : s.attributes) props[k] = v;
    features.push_back({{"type", "Feature"},
                        {"geometry", {{"type", "LineString"}, {"coordinates", std::move(coords)}}},
                        {"properties", std::move(props)}});
  }
  fc["features"] = std::move(features);
  return fc;
}

inline Json graph_to_json(const MetricGraph& g) {
  Json j;
  j["format"] = "netfield-graph";
  j["snap_tolerance"] = g.snap_tolerance();
  j["dropped_segments"] = g.dropped_segments();
  Json verts = Json::array();
  for (const Point& p : g.vertices()) verts.push_back({p.x, p.y});
  j["vertices"] = std::move(verts);
  Json edges = Json::array();
  for (const Edge& e : g.edges()) {
    Json je;
    je["start"] = e.start;
    je["end"] = e.end;
    je["length"] = e.length;
    je["source"] = e.source;
    Json line = Json::array();
    for (const Point& p : e.polyline) line.push_back({p.x, p.y});
    je["polyline"] = std::move(line);
    Json attrs = Json::object();
    for (const auto& [k, v] : e.attributes) attrs[k] = v;
    je["attributes"] = std::move(attrs);
    edges.push_back(std::move(je));
  }
  j["edges"] = std::move(edges);
  return j;
}

inline MetricGraph graph_from_json(const Json& j) {
  try {
    if (j.value("format", "") != "netfield-graph") throw InputError("graph: not a netfield graph file");
    std::vector<Point> verts;
    for (const Json& v : j.at("vertices")) verts.push_back(detail::json_point(v, "graph vertex"));
    std::vector<Edge> edges;
    for (const Json& je : j.at("edges")) {
      Edge e;
      e.start = je.at("start").get<std::size_t>();
      e.end = je.at("end").get<std::size_t>();
      e.length = je.at("length").get<double>();
      e.source = je.value("source", std::size_t{0});
      for (const Json& p : je.at("polyline")) e.polyline.push_back(detail::json_point(p, "graph polyline"));
      if (je.contains("attributes"))
        for (const auto& [k, v] : je["attributes"].items()) e.attributes[k] = v.get<double>();
      edges.push_back(std::move(e));
    }
    return MetricGraph(std::move(verts), std::move(edges), j.value("snap_tolerance", 0.0),
                       j.value("dropped_segments", std::size_t{0}));
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("graph: malformed file: ") + e.what());
  }
}

inline void save_graph(const MetricGraph& g, const std::string& path) {
  auto out = detail::open_output(path);
  out << graph_to_json(g).dump(1) << '\n';
}

inline MetricGraph load_graph(const std::string& path) {
  return graph_from_json(detail::parse_json(detail::read_file(path), "graph " + path));
}

/// One row of the events table. Numeric non-reserved columns are covariates,
/// anything else (timestamps, labels) is kept as metadata.
struct EventRecord {
  double x = 0.0;
  double y = 0.0;
  double count = 0.0;
  double exposure = 1.0;
  std::map<std::string, double> covariates;
  std::map<std::string, std::string> metadata;
};

struct EventTable {
  std::vector<EventRecord> records;
  bool has_exposure = false;
  std::vector<std::string> covariate_columns;
};

inline EventTable parse_events(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    ++line_no;
    if (!detail::trim(line).empty()) break;
  }
  if (detail::trim(line).empty()) throw InputError("events: empty file");
  for (auto& h : detail::split_csv_line(line)) header.push_back(detail::trim(h));
  auto find = [&](const std::string& name) -> long {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return static_cast<long>(i);
    return -1;
  };
  const long cx = find("x"), cy = find("y"), cc = find("count"), ce = find("exposure");
  for (const auto& [name, col] : {std::pair<const char*, long>{"x", cx}, {"y", cy}, {"count", cc}})
    if (col < 0) throw InputError(std::string("missing column: ") + name);
  EventTable table;
  table.has_exposure = ce >= 0;
  std::vector<bool> numeric(header.size(), true);
  std::vector<std::vector<std::string>> rows;
  std::vector<std::size_t> row_lines;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    auto fields = detail::split_csv_line(line);
    if (fields.size() != header.size())
      throw InputError("events: row " + std::to_string(line_no) + " has " + std::to_string(fields.size()) +
                       " fields, expected " + std::to_string(header.size()));
    for (std::size_t k = 0; k < fields.size(); ++k) {
      double v;
      if (!detail::parse_double(fields[k], v) || !std::isfinite(v)) numeric[k] = false;
    }
    rows.push_back(std::move(fields));
    row_lines.push_back(line_no);
  }
  for (std::size_t k = 0; k < header.size(); ++k) {
    const auto col = static_cast<long>(k);
    if (col == cx || col == cy || col == cc || col == ce) continue;
    if (numeric[k] && !rows.empty()) table.covariate_columns.push_back(header[k]);
  }
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto& f = rows[r];
    const std::string where = "events: row " + std::to_string(row_lines[r]);
    EventRecord ev;
    if (!detail::parse_double(f[static_cast<std::size_t>(cx)], ev.x) ||
        !detail::parse_double(f[static_cast<std::size_t>(cy)], ev.y) || !std::isfinite(ev.x) || !std::isfinite(ev.y))
      throw InputError(where + ": coordinates must be finite numbers");
    if (!detail::parse_double(f[static_cast<std::size_t>(cc)], ev.count) || ev.count < 0.0 ||
        ev.count != std::floor(ev.count) || !std::isfinite(ev.count))
      throw InputError(where + ": count must be a nonnegative integer");
    if (ce >= 0 && (!detail::parse_double(f[static_cast<std::size_t>(ce)], ev.exposure) || !(ev.exposure > 0.0) ||
                    !std::isfinite(ev.exposure)))
      throw InputError(where + ": exposure must be > 0");
    for (std::size_t k = 0; k < header.size(); ++k) {
      const auto col = static_cast<long>(k);
      if (col == cx || col == cy || col == cc || col == ce) continue;
      double v;
      if (numeric[k] && detail::parse_double(f[k], v))
        ev.covariates[header[k]] = v;
      else
        ev.metadata[header[k]] = f[k];
    }
    table.records.push_back(std::move(ev));
  }
  return table;
}

inline EventTable load_events(const std::string& path) { return parse_events(detail::read_file(path)); }

inline void write_events(std::ostream& os, const std::vector<EventRecord>& events) {
  os.precision(17);
  os << "x,y,count,exposure\n";
  for (const auto& e : events) os << e.x << ',' << e.y << ',' << e.count << ',' << e.exposure << '\n';
}

/// `key = value` lines; '#' starts a comment.
inline std::map<std::string, std::string> parse_key_values(const std::string& text) {
  std::map<std::string, std::string> out;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    if (detail::trim(line).empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw InputError("config line " + std::to_string(line_no) + ": expected key = value");
    const std::string key = detail::trim(line.substr(0, eq));
    if (key.empty()) throw InputError("config line " + std::to_string(line_no) + ": empty key");
    out[key] = detail::trim(line.substr(eq + 1));
  }
  return out;
}

}  // namespace netfield
