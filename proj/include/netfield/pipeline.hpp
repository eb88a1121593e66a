#pragma once

// End-to-end plumbing: event snapping and aggregation, synthetic datasets,
// fit serialization, risk-map export and SVG rendering.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "netfield/criteria.hpp"
#include "netfield/error.hpp"
#include "netfield/fem.hpp"
#include "netfield/graph.hpp"
#include "netfield/inference.hpp"
#include "netfield/io.hpp"

namespace netfield {

/// Settings read from the `key = value` config file.
struct FitConfig {
  ModelSpec spec;
  OptimizerSettings optimizer;
  LaplaceOptions laplace;
  int samples = 250;
  double max_snap = 15.0;
  std::vector<std::string> covariates;

  static FitConfig from_map(const std::map<std::string, std::string>& kv) {
    FitConfig c;
    auto num = [](const std::string& key, const std::string& v) {
      double d;
      if (!detail::parse_double(v, d) || !std::isfinite(d)) throw InputError("config: " + key + " must be a number");
      return d;
    };
    auto integer = [&](const std::string& key, const std::string& v) {
      const double d = num(key, v);
      if (d != std::floor(d)) throw InputError("config: " + key + " must be an integer");
      return static_cast<long long>(d);
    };
    for (const auto& [k, v] : kv) {
      if (k == "r0") c.spec.pc.r0 = num(k, v);
      else if (k == "p_r") c.spec.pc.p_r = num(k, v);
      else if (k == "sigma0") c.spec.pc.sigma0 = num(k, v);
      else if (k == "p_sigma") c.spec.pc.p_sigma = num(k, v);
      else if (k == "pc_dim") c.spec.pc.dim = static_cast<int>(integer(k, v));
      else if (k == "nugget_shape") c.spec.precision_prior.shape = num(k, v);
      else if (k == "nugget_rate") c.spec.precision_prior.rate = num(k, v);
      else if (k == "nugget") c.spec.nugget = v == "true" || v == "1" || v == "yes";
      else if (k == "beta_precision") c.spec.beta_precision = num(k, v);
      else if (k == "h_max") c.spec.h_max = num(k, v);
      else if (k == "nu") c.spec.nu = num(k, v);
      else if (k == "family") c.spec.family = parse_family(v);
      else if (k == "max_evaluations") c.optimizer.max_evaluations = static_cast<int>(integer(k, v));
      else if (k == "restarts") c.optimizer.restarts = static_cast<int>(integer(k, v));
      else if (k == "tolerance") c.optimizer.tolerance = num(k, v);
      else if (k == "initial_step") c.optimizer.initial_step = num(k, v);
      else if (k == "start_range") c.optimizer.start_range = num(k, v);
      else if (k == "start_sigma") c.optimizer.start_sigma = num(k, v);
      else if (k == "start_precision") c.optimizer.start_precision = num(k, v);
      else if (k == "newton_max_iterations") c.laplace.max_iterations = static_cast<int>(integer(k, v));
      else if (k == "newton_tolerance") c.laplace.gradient_tolerance = num(k, v);
      else if (k == "S" || k == "samples") c.samples = static_cast<int>(integer(k, v));
      else if (k == "max_snap") c.max_snap = num(k, v);
      else if (k == "covariates") {
        std::stringstream ss(v);
        std::string item;
        while (std::getline(ss, item, ','))
          if (!detail::trim(item).empty()) c.covariates.push_back(detail::trim(item));
      } else {
        throw InputError("config: unknown key '" + k + "'");
      }
    }
    if (c.samples < 2) throw InputError("config: S must be >= 2");
    if (!(c.max_snap > 0.0)) throw InputError("config: max_snap must be > 0");
    if (c.optimizer.max_evaluations < 1 || c.optimizer.restarts < 0) throw InputError("config: bad optimizer settings");
    if (c.laplace.max_iterations < 1 || !(c.laplace.gradient_tolerance > 0.0)) throw InputError("config: bad Newton settings");
    return c;
  }

  static FitConfig load(const std::string& path) { return from_map(parse_key_values(detail::read_file(path))); }

  Json to_json() const {
    Json j;
    j["r0"] = spec.pc.r0;
    j["p_r"] = spec.pc.p_r;
    j["sigma0"] = spec.pc.sigma0;
    j["p_sigma"] = spec.pc.p_sigma;
    j["pc_dim"] = spec.pc.dim;
    j["nugget_shape"] = spec.precision_prior.shape;
    j["nugget_rate"] = spec.precision_prior.rate;
    j["nugget"] = spec.nugget;
    j["beta_precision"] = spec.beta_precision;
    j["h_max"] = spec.h_max;
    j["nu"] = spec.nu;
    j["family"] = to_string(spec.family);
    j["max_evaluations"] = optimizer.max_evaluations;
    j["restarts"] = optimizer.restarts;
    j["tolerance"] = optimizer.tolerance;
    j["initial_step"] = optimizer.initial_step;
    j["start_range"] = optimizer.start_range;
    j["start_sigma"] = optimizer.start_sigma;
    j["start_precision"] = optimizer.start_precision;
    j["newton_max_iterations"] = laplace.max_iterations;
    j["newton_tolerance"] = laplace.gradient_tolerance;
    j["S"] = samples;
    j["max_snap"] = max_snap;
    j["covariates"] = covariates;
    return j;
  }

  static FitConfig from_json(const Json& j) {
    std::map<std::string, std::string> kv;
    for (const auto& [k, v] : j.items()) {
      if (k == "covariates") {
        std::string joined;
        for (const auto& c : v) joined += (joined.empty() ? "" : ",") + c.get<std::string>();
        kv[k] = joined;
      } else if (v.is_string()) {
        kv[k] = v.get<std::string>();
      } else if (v.is_boolean()) {
        kv[k] = v.get<bool>() ? "true" : "false";
      } else {
        char buf[64];
        std::snprintf(buf, sizeof buf, "%.17g", v.get<double>());
        kv[k] = buf;
      }
    }
    return from_map(kv);
  }
};

/// Jittered rows x cols street grid with exactly `edges` blocks: a random
/// spanning tree plus randomly chosen extra blocks, so the network is connected.
/// Each block is a two-piece polyline through a jittered midpoint.
inline std::vector<Segment> street_network(std::size_t rows, std::size_t cols, std::size_t edges, double spacing,
                                           std::uint64_t seed, double jitter = 0.2) {
  if (rows < 2 || cols < 2 || !(spacing > 0.0)) throw InputError("street_network: need a 2x2 grid or larger");
  const std::size_t n = rows * cols;
  std::vector<std::pair<std::size_t, std::size_t>> blocks;
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) {
      if (c + 1 < cols) blocks.push_back({r * cols + c, r * cols + c + 1});
      if (r + 1 < rows) blocks.push_back({r * cols + c, (r + 1) * cols + c});
    }
  if (edges < n - 1 || edges > blocks.size())
    throw InputError("street_network: edge count must lie in [" + std::to_string(n - 1) + ", " +
                     std::to_string(blocks.size()) + "]");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-jitter * spacing, jitter * spacing);
  std::vector<Point> xy(n);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) xy[r * cols + c] = {c * spacing + u(rng), r * spacing + u(rng)};
  std::shuffle(blocks.begin(), blocks.end(), rng);
  std::vector<std::size_t> parent(n);
  for (std::size_t i = 0; i < n; ++i) parent[i] = i;
  auto root = [&](std::size_t i) {
    while (parent[i] != i) i = parent[i] = parent[parent[i]];
    return i;
  };
  std::vector<bool> used(blocks.size(), false);
  std::size_t count = 0;
  for (std::size_t k = 0; k < blocks.size(); ++k) {
    const std::size_t a = root(blocks[k].first), b = root(blocks[k].second);
    if (a != b) {
      parent[a] = b;
      used[k] = true;
      ++count;
    }
  }
  for (std::size_t k = 0; k < blocks.size() && count < edges; ++k)
    if (!used[k]) {
      used[k] = true;
      ++count;
    }
  std::vector<Segment> out;
  for (std::size_t k = 0; k < blocks.size(); ++k) {
    if (!used[k]) continue;
    const Point a = xy[blocks[k].first], b = xy[blocks[k].second];
    const Point mid{0.5 * (a.x + b.x) + 0.3 * u(rng), 0.5 * (a.y + b.y) + 0.3 * u(rng)};
    out.push_back({{a, mid, b}, {}});
  }
  return out;
}

struct RejectedEvent {
  std::size_t row = 0;
  double distance = 0.0;
  double count = 0.0;
};

struct SnapReport {
  ObservationSet observations;
  std::vector<RejectedEvent> rejected;
  double total_count = 0.0;
  double rejected_count = 0.0;
};

/// Snaps events to the graph and aggregates counts.
/// exact_position: events within 1e-9 offset of one another on an edge are merged
///   (counts and exposures summed, covariates averaged).
/// segment_centroid: one observation per edge at mid-length, zero counts included;
///   exposure and covariates come from edge attributes (exposure defaults to 1).
inline SnapReport snap_and_aggregate(const MetricGraph& g, const std::vector<EventRecord>& events, Aggregation mode,
                                     double max_snap, const std::vector<std::string>& covariates = {}) {
  if (g.edge_count() == 0) throw InputError("graph has no edges");
  SnapReport rep;
  struct Snapped {
    GraphPosition pos;
    std::size_t row;
  };
  std::vector<Snapped> snapped;
  for (std::size_t i = 0; i < events.size(); ++i) {
    rep.total_count += events[i].count;
    const Projection pr = nearest_position(g, {events[i].x, events[i].y});
    if (pr.distance > max_snap) {
      rep.rejected.push_back({i, pr.distance, events[i].count});
      rep.rejected_count += events[i].count;
      continue;
    }
    snapped.push_back({pr.position, i});
  }
  if (!events.empty() && static_cast<double>(rep.rejected.size()) > 0.1 * static_cast<double>(events.size()))
    throw InputError(std::to_string(rep.rejected.size()) + " of " + std::to_string(events.size()) +
                     " events lie farther than max_snap = " + std::to_string(max_snap) +
                     " from the network (more than 10%)");
  const auto p = static_cast<Eigen::Index>(covariates.size());
  ObservationSet& obs = rep.observations;
  obs.aggregation = mode;
  obs.covariate_names = covariates;
  std::vector<double> y, e;
  std::vector<std::vector<double>> z;
  auto edge_attr = [&](std::size_t edge, const std::string& name, bool required) {
    const auto& a = g.edge(edge).attributes;
    const auto it = a.find(name);
    if (it == a.end()) {
      if (required) throw InputError("edge " + std::to_string(edge) + " has no attribute '" + name + "'");
      return 1.0;
    }
    return it->second;
  };
  if (mode == Aggregation::exact_position) {
    std::stable_sort(snapped.begin(), snapped.end(), [](const Snapped& a, const Snapped& b) {
      return a.pos.edge != b.pos.edge ? a.pos.edge < b.pos.edge : a.pos.offset < b.pos.offset;
    });
    for (std::size_t k = 0; k < snapped.size();) {
      std::size_t end = k + 1;
      while (end < snapped.size() && snapped[end].pos.edge == snapped[k].pos.edge &&
             snapped[end].pos.offset - snapped[end - 1].pos.offset <= 1e-9)
        ++end;
      double cnt = 0.0, expo = 0.0;
      std::vector<double> zc(covariates.size(), 0.0);
      for (std::size_t t = k; t < end; ++t) {
        const EventRecord& ev = events[snapped[t].row];
        cnt += ev.count;
        expo += ev.exposure;
        for (std::size_t c = 0; c < covariates.size(); ++c) {
          const auto it = ev.covariates.find(covariates[c]);
          zc[c] += it != ev.covariates.end() ? it->second : edge_attr(snapped[t].pos.edge, covariates[c], true);
        }
      }
      for (double& v : zc) v /= static_cast<double>(end - k);
      obs.positions.push_back(snapped[k].pos);
      y.push_back(cnt);
      e.push_back(expo);
      z.push_back(std::move(zc));
      k = end;
    }
  } else {
    std::vector<double> per_edge(g.edge_count(), 0.0);
    for (const Snapped& s : snapped) per_edge[s.pos.edge] += events[s.row].count;
    for (std::size_t edge = 0; edge < g.edge_count(); ++edge) {
      obs.positions.push_back({edge, 0.5 * g.edge(edge).length});
      y.push_back(per_edge[edge]);
      e.push_back(edge_attr(edge, "exposure", false));
      std::vector<double> zc;
      for (const auto& name : covariates) zc.push_back(edge_attr(edge, name, true));
      z.push_back(std::move(zc));
    }
  }
  const auto m = static_cast<Eigen::Index>(y.size());
  obs.y = Eigen::Map<const Eigen::VectorXd>(y.data(), m);
  obs.exposure = Eigen::Map<const Eigen::VectorXd>(e.data(), m);
  obs.covariates.resize(m, p);
  for (Eigen::Index i = 0; i < m; ++i)
    for (Eigen::Index j = 0; j < p; ++j) obs.covariates(i, j) = z[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
  return rep;
}

struct SimulationSettings {
  FieldParams field;
  double beta0 = 0.0;
  std::size_t n_events = 500;
  double h_max = 0.0;
  std::uint64_t seed = 1;
};

struct SimulatedDataset {
  DiscretizationMesh mesh;
  Eigen::VectorXd field;
  std::vector<GraphPosition> positions;
  std::vector<EventRecord> events;
  SimulationSettings settings;
};

/// Field draw from `field_source`; event positions uniform by length and
/// counts ~ Poisson(exp(beta0 + S(position))) from a generator seeded with `seed`.
template <NormalSource Src>
SimulatedDataset simulate_dataset(const MetricGraph& g, const SimulationSettings& s, Src& field_source) {
  s.field.validate();
  if (g.edge_count() == 0 || !(g.total_length() > 0.0)) throw InputError("graph has no length");
  SimulatedDataset d;
  d.settings = s;
  if (d.settings.h_max == 0.0) d.settings.h_max = default_h_max(g);
  d.mesh = discretize(g, d.settings.h_max);
  const FemMatrices fm = assemble_matrices(d.mesh);
  d.field = sample_field(precision_matrix(fm.mass, fm.stiffness, s.field), field_source);
  std::mt19937_64 rng(s.seed ^ 0x9E3779B97F4A7C15ULL);
  std::vector<double> cum(g.edge_count() + 1, 0.0);
  for (std::size_t e = 0; e < g.edge_count(); ++e) cum[e + 1] = cum[e] + g.edge(e).length;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (std::size_t k = 0; k < s.n_events; ++k) {
    const double t = u(rng) * cum.back();
    auto it = std::upper_bound(cum.begin(), cum.end(), t);
    std::size_t edge = static_cast<std::size_t>(std::distance(cum.begin(), it)) - 1;
    edge = std::min(edge, g.edge_count() - 1);
    const double offset = std::clamp(t - cum[edge], 0.0, g.edge(edge).length);
    d.positions.push_back({edge, offset});
  }
  const Eigen::VectorXd at = observation_matrix(g, d.mesh, d.positions) * d.field;
  for (std::size_t k = 0; k < s.n_events; ++k) {
    const double rate = std::exp(s.beta0 + at[static_cast<Eigen::Index>(k)]);
    EventRecord ev;
    const Point xy = position_to_xy(g, d.positions[k]);
    ev.x = xy.x;
    ev.y = xy.y;
    ev.count = rate > 0.0 ? static_cast<double>(std::poisson_distribution<long long>(rate)(rng)) : 0.0;
    d.events.push_back(std::move(ev));
  }
  return d;
}

inline SimulatedDataset simulate_dataset(const MetricGraph& g, const SimulationSettings& s) {
  NormalStream stream(s.seed);
  return simulate_dataset(g, s, stream);
}

inline Json truth_json(const SimulatedDataset& d) {
  const double nu = d.settings.field.nu();
  Json j;
  j["kappa"] = d.settings.field.kappa;
  j["tau"] = d.settings.field.tau;
  j["alpha"] = d.settings.field.alpha;
  j["range"] = d.settings.field.range();
  j["sigma"] = std::sqrt(field_variance(d.settings.field.kappa, d.settings.field.tau, nu));
  j["beta0"] = d.settings.beta0;
  j["n_events"] = d.settings.n_events;
  j["seed"] = d.settings.seed;
  j["h_max"] = d.settings.h_max;
  Json nodes = Json::array();
  for (std::size_t i = 0; i < d.mesh.node_count(); ++i)
    nodes.push_back({{"edge", d.mesh.nodes[i].edge}, {"offset", d.mesh.nodes[i].offset},
                     {"value", d.field[static_cast<Eigen::Index>(i)]}});
  j["field"] = std::move(nodes);
  return j;
}

inline void write_dataset(const SimulatedDataset& d, const std::string& dir) {
  std::filesystem::create_directories(dir);
  auto ev = detail::open_output((std::filesystem::path(dir) / "events.csv").string());
  write_events(ev, d.events);
  auto tr = detail::open_output((std::filesystem::path(dir) / "truth.json").string());
  tr << truth_json(d).dump(1) << '\n';
}

/// Where a fit's data came from; enough to rebuild the model exactly.
struct FitInputs {
  std::string graph_path;
  std::string events_path;
  ModelKind kind = ModelKind::graph_spde;
  int alpha = 1;
  Aggregation aggregation = Aggregation::exact_position;
  FitConfig config;
  std::uint64_t seed = 1;
};

struct PreparedModel {
  MetricGraph graph;
  SnapReport snap;
  std::shared_ptr<const NetworkModel> model;
};

inline PreparedModel prepare_model(const FitInputs& in) {
  MetricGraph g = load_graph(in.graph_path);
  const EventTable table = load_events(in.events_path);
  SnapReport snap = snap_and_aggregate(g, table.records, in.aggregation, in.config.max_snap, in.config.covariates);
  ModelSpec spec = in.config.spec;
  spec.kind = in.kind;
  spec.alpha = in.alpha;
  auto model = std::make_shared<const NetworkModel>(g, snap.observations, spec);
  return {std::move(g), std::move(snap), std::move(model)};
}

inline Json fit_to_json(const FitResult& fit, const FitInputs& in, const SnapReport& snap) {
  const NetworkModel& m = *fit.model;
  const ModelSpec& spec = m.spec();
  const double nu = spec.smoothness();
  Json j;
  j["format"] = "netfield-fit";
  namespace fs = std::filesystem;
  j["inputs"] = {{"graph", fs::absolute(in.graph_path).lexically_normal().string()},
                 {"events", fs::absolute(in.events_path).lexically_normal().string()},
                 {"aggregation", to_string(in.aggregation)}};
  j["model"] = {{"kind", to_string(in.kind)},
                {"family", to_string(spec.family)},
                {"alpha", in.alpha},
                {"nu", nu},
                {"nugget", spec.nugget},
                {"h_max", m.dense() ? 0.0 : spec.h_max},
                {"mesh_nodes", m.dense() ? 0 : m.mesh().node_count()}};
  j["config"] = in.config.to_json();
  j["seed"] = in.seed;
  j["observations"] = {{"rows", m.observations().size()},
                       {"total_count", snap.total_count},
                       {"rejected_events", snap.rejected.size()},
                       {"rejected_count", snap.rejected_count}};
  Json rejected = Json::array();
  for (const auto& r : snap.rejected) rejected.push_back({{"row", r.row}, {"distance", r.distance}, {"count", r.count}});
  j["observations"]["rejected"] = std::move(rejected);
  j["theta"] = {{"log_kappa", fit.theta.log_kappa},
                {"log_tau", fit.theta.log_tau},
                {"log_precision", fit.theta.log_precision}};
  j["kappa_tau"] = {{"kappa", fit.theta.kappa()}, {"tau", fit.theta.tau()}};
  j["range_sigma"] = {{"range", fit.theta.range(nu)}, {"sigma", fit.theta.sigma(nu)}};
  j[spec.family == Family::gaussian ? "noise_precision" : "nugget_precision"] =
      spec.uses_precision() ? Json(fit.theta.precision()) : Json(nullptr);
  Json beta = Json::array();
  const Eigen::VectorXd b = fit.beta(), sd = fit.beta_sd();
  for (Eigen::Index k = 0; k < b.size(); ++k)
    beta.push_back({{"name", k == 0 ? std::string("intercept") : m.observations().covariate_names.at(static_cast<std::size_t>(k - 1))},
                    {"mean", b[k]},
                    {"sd", sd[k]}});
  j["beta"] = std::move(beta);
  j["laplace_marginal_loglik"] = fit.laplace.marginal;
  j["log_posterior"] = fit.objective;
  j["newton_iterations"] = fit.laplace.iterations;
  j["gradient_norm"] = fit.laplace.gradient_norm;
  j["evaluations"] = fit.evaluations;
  j["flat_objective"] = fit.flat;
  j["warnings"] = fit.warnings;
  j["latent_size"] = m.latent_size();
  j["timing"] = {{"seconds", fit.seconds}};
  return j;
}

struct LoadedFit {
  FitInputs inputs;
  PreparedModel prepared;
  FitResult fit;
  Json json;
};

/// Rebuilds the model recorded in a fit file and recomputes the mode at its theta.
inline LoadedFit load_fit(const std::string& path) {
  LoadedFit out;
  out.json = detail::parse_json(detail::read_file(path), "fit " + path);
  try {
    const Json& j = out.json;
    if (j.value("format", "") != "netfield-fit") throw InputError("fit: not a netfield fit file");
    out.inputs.graph_path = j.at("inputs").at("graph").get<std::string>();
    out.inputs.events_path = j.at("inputs").at("events").get<std::string>();
    out.inputs.aggregation = parse_aggregation(j.at("inputs").at("aggregation").get<std::string>());
    out.inputs.kind = parse_model_kind(j.at("model").at("kind").get<std::string>());
    out.inputs.alpha = j.at("model").at("alpha").get<int>();
    out.inputs.config = FitConfig::from_json(j.at("config"));
    out.inputs.seed = j.at("seed").get<std::uint64_t>();
    const HyperParams theta{j.at("theta").at("log_kappa").get<double>(), j.at("theta").at("log_tau").get<double>(),
                            j.at("theta").at("log_precision").get<double>()};
    out.prepared = prepare_model(out.inputs);
    out.fit = fit_at(out.prepared.model, theta, out.inputs.config.laplace);
  } catch (const nlohmann::json::exception& e) {
    throw InputError("fit: malformed file: " + std::string(e.what()));
  }
  return out;
}

/// ceil(L / delta) + 1 evenly spaced positions on every edge, endpoints included.
inline std::vector<GraphPosition> riskmap_positions(const MetricGraph& g, double delta) {
  if (!(delta > 0.0) || !std::isfinite(delta)) throw InputError("risk-map spacing must be > 0");
  std::vector<GraphPosition> out;
  for (std::size_t e = 0; e < g.edge_count(); ++e) {
    const double len = g.edge(e).length;
    const auto pieces = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(len / delta * (1.0 - 1e-12))));
    for (std::size_t k = 0; k <= pieces; ++k)
      out.push_back({e, k == pieces ? len : len * static_cast<double>(k) / static_cast<double>(pieces)});
  }
  return out;
}

struct RiskMap {
  std::vector<GraphPosition> positions;
  std::vector<Point> xy;
  std::vector<PredictionSummary> values;
};

inline RiskMap compute_riskmap(const FitResult& fit, double delta, int samples, std::uint64_t seed) {
  RiskMap r;
  const MetricGraph& g = fit.model->graph();
  r.positions = riskmap_positions(g, delta);
  for (const auto& p : r.positions) r.xy.push_back(position_to_xy(g, p));
  r.values = predict(fit, r.positions, samples, seed);
  return r;
}

inline Json riskmap_geojson(const RiskMap& r) {
  Json fc;
  fc["type"] = "FeatureCollection";
  Json features = Json::array();
  for (std::size_t i = 0; i < r.positions.size(); ++i) {
    const PredictionSummary& v = r.values[i];
    Json f;
    f["type"] = "Feature";
    f["geometry"] = {{"type", "Point"}, {"coordinates", {r.xy[i].x, r.xy[i].y}}};
    f["properties"] = {{"edge", r.positions[i].edge}, {"offset", r.positions[i].offset},
                       {"eta_mean", v.eta_mean},      {"eta_sd", v.eta_sd},
                       {"rho_median", v.rho_median},  {"rho_lower", v.rho_lower},
                       {"rho_upper", v.rho_upper}};
    features.push_back(std::move(f));
  }
  fc["features"] = std::move(features);
  return fc;
}

inline void write_riskmap_csv(std::ostream& os, const RiskMap& r) {
  os.precision(17);
  os << "edge,offset,x,y,eta_mean,eta_sd,rho_median,rho_lower,rho_upper\n";
  for (std::size_t i = 0; i < r.positions.size(); ++i) {
    const PredictionSummary& v = r.values[i];
    os << r.positions[i].edge << ',' << r.positions[i].offset << ',' << r.xy[i].x << ',' << r.xy[i].y << ','
       << v.eta_mean << ',' << v.eta_sd << ',' << v.rho_median << ',' << v.rho_lower << ',' << v.rho_upper << '\n';
  }
}

inline void export_riskmap(const RiskMap& r, const std::string& format, const std::string& path) {
  auto out = detail::open_output(path);
  if (format == "geojson")
    out << riskmap_geojson(r).dump(1) << '\n';
  else if (format == "csv")
    write_riskmap_csv(out, r);
  else
    throw InputError("unknown risk-map format: " + format);
}

/// Values at positions along each edge (sorted by offset) for rendering.
struct EdgeProfile {
  std::size_t edge = 0;
  std::vector<double> offsets;
  std::vector<double> values;
};

namespace detail {

// Viridis-like anchors from low (dark purple) to high (yellow).
inline std::array<int, 3> color_at(double t) {
  static constexpr std::array<std::array<double, 3>, 6> stops = {{{68, 1, 84},
                                                                   {65, 68, 135},
                                                                   {42, 120, 142},
                                                                   {34, 168, 132},
                                                                   {122, 209, 81},
                                                                   {253, 231, 37}}};
  t = std::clamp(t, 0.0, 1.0) * (stops.size() - 1);
  const auto k = std::min<std::size_t>(static_cast<std::size_t>(t), stops.size() - 2);
  const double w = t - static_cast<double>(k);
  std::array<int, 3> c{};
  for (int i = 0; i < 3; ++i) c[i] = static_cast<int>(std::lround(stops[k][i] + w * (stops[k + 1][i] - stops[k][i])));
  return c;
}

// Portion of a polyline between arclengths a <= b.
inline std::vector<Point> sub_polyline(const std::vector<Point>& pts, double a, double b) {
  const std::vector<double> cum = cumulative_lengths(pts);
  auto at = [&](double s) {
    std::size_t k = 0;
    while (k + 2 < pts.size() && cum[k + 1] < s) ++k;
    const double piece = cum[k + 1] - cum[k];
    const double t = piece > 0.0 ? std::clamp((s - cum[k]) / piece, 0.0, 1.0) : 0.0;
    return Point{pts[k].x + t * (pts[k + 1].x - pts[k].x), pts[k].y + t * (pts[k + 1].y - pts[k].y)};
  };
  std::vector<Point> out{at(a)};
  for (std::size_t k = 1; k + 1 < pts.size(); ++k)
    if (cum[k] > a && cum[k] < b) out.push_back(pts[k]);
  out.push_back(at(b));
  return out;
}

inline std::string hex_color(const std::array<int, 3>& c) {
  char buf[8];
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x", c[0], c[1], c[2]);
  return buf;
}

}  // namespace detail

/// SVG of the network with each piece between profile points colored by the
/// mean of its two end values on a linear viridis-like scale; a legend shows the range.
inline std::string render_svg(const MetricGraph& g, const std::vector<EdgeProfile>& profiles,
                              const std::string& value_label) {
  if (g.edge_count() == 0) throw InputError("no edges");
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const auto& p : profiles)
    for (double v : p.values) {
      if (!std::isfinite(v)) throw NumericalError("non-finite value in map");
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  double minx = std::numeric_limits<double>::infinity(), miny = minx, maxx = -minx, maxy = -minx;
  for (const auto& e : g.edges())
    for (const Point& p : e.polyline) {
      minx = std::min(minx, p.x);
      maxx = std::max(maxx, p.x);
      miny = std::min(miny, p.y);
      maxy = std::max(maxy, p.y);
    }
  const double span = std::max({maxx - minx, maxy - miny, 1e-12});
  const double size = 800.0, margin = 20.0;
  const double scale = (size - 2 * margin) / span;
  const double width = size + 160.0, height = (maxy - miny) * scale + 2 * margin;
  auto px = [&](Point p) { return std::pair<double, double>{margin + (p.x - minx) * scale, margin + (maxy - p.y) * scale}; };
  auto tcol = [&](double v) { return hi > lo ? (v - lo) / (hi - lo) : 0.5; };
  std::string svg;
  char buf[256];
  std::snprintf(buf, sizeof buf,
                "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%.0f\" height=\"%.0f\" viewBox=\"0 0 %.0f %.0f\">\n",
                width, std::max(height, 260.0), width, std::max(height, 260.0));
  svg += buf;
  svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n<g fill=\"none\" stroke-width=\"2\" stroke-linecap=\"round\">\n";
  for (const auto& prof : profiles) {
    const Edge& e = g.edge(prof.edge);
    for (std::size_t k = 0; k + 1 < prof.offsets.size(); ++k) {
      const auto piece = detail::sub_polyline(e.polyline, prof.offsets[k], prof.offsets[k + 1]);
      const std::string color = detail::hex_color(detail::color_at(tcol(0.5 * (prof.values[k] + prof.values[k + 1]))));
      svg += "<polyline stroke=\"" + color + "\" points=\"";
      for (std::size_t q = 0; q < piece.size(); ++q) {
        const auto [x, y] = px(piece[q]);
        std::snprintf(buf, sizeof buf, "%s%.2f,%.2f", q ? " " : "", x, y);
        svg += buf;
      }
      svg += "\"/>\n";
    }
  }
  svg += "</g>\n<g font-family=\"sans-serif\" font-size=\"12\">\n";
  const double lx = size + 20.0, ly = margin, lh = 200.0;
  for (int k = 0; k < 20; ++k) {
    const double t = 1.0 - (k + 0.5) / 20.0;
    std::snprintf(buf, sizeof buf, "<rect x=\"%.1f\" y=\"%.1f\" width=\"20\" height=\"%.1f\" fill=\"%s\"/>\n", lx,
                  ly + k * lh / 20.0, lh / 20.0 + 0.5, detail::hex_color(detail::color_at(t)).c_str());
    svg += buf;
  }
  std::snprintf(buf, sizeof buf, "<text x=\"%.1f\" y=\"%.1f\">%.4g</text>\n", lx + 26, ly + 10, hi);
  svg += buf;
  std::snprintf(buf, sizeof buf, "<text x=\"%.1f\" y=\"%.1f\">%.4g</text>\n", lx + 26, ly + lh, lo);
  svg += buf;
  std::snprintf(buf, sizeof buf, "<text x=\"%.1f\" y=\"%.1f\">", lx, ly + lh + 24);
  svg += buf;
  for (char c : value_label) {
    if (c == '<') svg += "&lt;";
    else if (c == '>') svg += "&gt;";
    else if (c == '&') svg += "&amp;";
    else svg += c;
  }
  svg += "</text>\n</g>\n</svg>\n";
  return svg;
}

/// Profiles of predicted rho medians from a risk map.
inline std::vector<EdgeProfile> riskmap_profiles(const MetricGraph& g, const RiskMap& r) {
  std::vector<EdgeProfile> out(g.edge_count());
  for (std::size_t e = 0; e < out.size(); ++e) out[e].edge = e;
  for (std::size_t i = 0; i < r.positions.size(); ++i) {
    out[r.positions[i].edge].offsets.push_back(r.positions[i].offset);
    out[r.positions[i].edge].values.push_back(r.values[i].rho_median);
  }
  return out;
}

/// Profiles of a mesh field (nodal values, linear between nodes).
inline std::vector<EdgeProfile> field_profiles(const MetricGraph& g, const DiscretizationMesh& mesh,
                                               const Eigen::VectorXd& field) {
  if (static_cast<std::size_t>(field.size()) != mesh.node_count()) throw InputError("field size does not match mesh");
  std::vector<EdgeProfile> out(g.edge_count());
  for (std::size_t e = 0; e < out.size(); ++e) {
    out[e].edge = e;
    const auto& ids = mesh.edge_nodes[e];
    for (std::size_t k = 0; k < ids.size(); ++k) {
      out[e].offsets.push_back(k + 1 == ids.size() ? g.edge(e).length : mesh.edge_step[e] * static_cast<double>(k));
      out[e].values.push_back(field[static_cast<Eigen::Index>(ids[k])]);
    }
  }
  return out;
}

inline void write_text(const std::string& path, const std::string& text) {
  auto out = detail::open_output(path);
  out << text;
}

}  // namespace netfield
