#include <gtest/gtest.h>

#include <filesystem>
#include <random>

#include "netfield/netfield.hpp"
#include "support.hpp"

using namespace netfield;
namespace fs = std::filesystem;

namespace {

std::string line_feature(const std::string& coords, const std::string& props = "{}") {
  return R"({"type":"Feature","properties":)" + props + R"(,"geometry":{"type":"LineString","coordinates":)" +
         coords + "}}";
}

std::string collection(const std::vector<std::string>& features) {
  std::string s = R"({"type":"FeatureCollection","features":[)";
  for (std::size_t i = 0; i < features.size(); ++i) s += (i ? "," : "") + features[i];
  return s + "]}";
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("netfield_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

EventRecord event(double x, double y, double count) {
  EventRecord e;
  e.x = x;
  e.y = y;
  e.count = count;
  return e;
}

}  // namespace

TEST(LoadNetwork, TwoLineStrings) {
  const NetworkFile f = parse_network(collection(
      {line_feature("[[0,0],[1,0]]", R"({"speed":30,"name":"a"})"), line_feature("[[1,0],[1,1],[2,1]]")}));
  ASSERT_EQ(f.segments.size(), 2u);
  EXPECT_EQ(f.skipped, 0u);
  EXPECT_EQ(f.segments[0].attributes.at("speed"), 30.0);
  EXPECT_EQ(f.segments[0].attributes.count("name"), 0u);
  EXPECT_EQ(f.segments[1].points.size(), 3u);
}

TEST(LoadNetwork, PointFeatureSkippedWithWarning) {
  const NetworkFile f = parse_network(collection(
      {R"({"type":"Feature","properties":{},"geometry":{"type":"Point","coordinates":[0,0]}})",
       line_feature("[[0,0],[1,0]]")}));
  EXPECT_EQ(f.segments.size(), 1u);
  EXPECT_EQ(f.skipped, 1u);
}

TEST(LoadNetwork, MalformedReportsLocation) {
  try {
    parse_network("{\"type\": \"FeatureCollection\",\n \"features\": [\n oops]}");
    FAIL();
  } catch (const InputError& e) {
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos) << e.what();
  }
  try {
    parse_network(collection({line_feature("[[0,0],[1,0]]"), line_feature("[[0,0],[\"x\",1]]")}));
    FAIL();
  } catch (const InputError& e) {
    EXPECT_NE(std::string(e.what()).find("feature 1"), std::string::npos) << e.what();
  }
}

TEST(GraphFile, RoundTrip) {
  std::mt19937_64 rng(4);
  const MetricGraph g = netfield::testing::random_connected(12, 5, rng);
  const MetricGraph h = graph_from_json(detail::parse_json(graph_to_json(g).dump(), "graph"));
  ASSERT_EQ(h.edge_count(), g.edge_count());
  ASSERT_EQ(h.vertex_count(), g.vertex_count());
  for (std::size_t e = 0; e < g.edge_count(); ++e) {
    EXPECT_EQ(h.edge(e).start, g.edge(e).start);
    EXPECT_EQ(h.edge(e).end, g.edge(e).end);
    EXPECT_EQ(h.edge(e).length, g.edge(e).length);
  }
}

TEST(LoadEvents, WellFormedAndErrors) {
  const EventTable t = parse_events("x,y,count,speed,district\n0,0,1,30,A\n1,0,2,50,B\n2,0,0,40,C\n");
  ASSERT_EQ(t.records.size(), 3u);
  EXPECT_EQ(t.records[1].count, 2.0);
  EXPECT_EQ(t.records[1].exposure, 1.0);
  EXPECT_EQ(t.records[2].covariates.at("speed"), 40.0);
  EXPECT_EQ(t.records[0].metadata.at("district"), "A");
  try {
    parse_events("x,y,n\n0,0,1\n");
    FAIL();
  } catch (const InputError& e) {
    EXPECT_NE(std::string(e.what()).find("missing column: count"), std::string::npos);
  }
  try {
    parse_events("x,y,count\n0,0,1\n0,0,1.5\n");
    FAIL();
  } catch (const InputError& e) {
    EXPECT_NE(std::string(e.what()).find("3"), std::string::npos) << e.what();
  }
  EXPECT_THROW(parse_events("x,y,count\n0,0,-1\n"), InputError);
  EXPECT_THROW(parse_events("x,y,count,exposure\n0,0,1,0\n"), InputError);
}

TEST(SnapAggregate, ExactModeMergesSharedPositions) {
  const MetricGraph g = netfield::testing::path_graph(2);
  const std::vector<EventRecord> ev = {event(0.3, 0.0, 1), event(0.3, 0.0, 2), event(1.5, 0.1, 4)};
  const SnapReport r = snap_and_aggregate(g, ev, Aggregation::exact_position, 15.0);
  ASSERT_EQ(r.observations.size(), 2u);
  EXPECT_EQ(r.observations.y[0], 3.0);
  EXPECT_EQ(r.observations.exposure[0], 2.0);
  EXPECT_EQ(r.observations.y[1], 4.0);
  EXPECT_TRUE(r.rejected.empty());
}

TEST(SnapAggregate, CentroidModeSumsPerEdge) {
  const MetricGraph g = netfield::testing::path_graph(2);
  const std::vector<EventRecord> ev = {event(0.1, 0, 1), event(0.5, 0, 2), event(0.9, 0.05, 5)};
  const SnapReport r = snap_and_aggregate(g, ev, Aggregation::segment_centroid, 15.0);
  ASSERT_EQ(r.observations.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) {
    const GraphPosition& p = r.observations.positions[i];
    EXPECT_DOUBLE_EQ(p.offset, 0.5 * g.edge(p.edge).length);
    const bool holds_events = g.edge(p.edge).polyline.front().x < 0.5 || g.edge(p.edge).polyline.back().x < 0.5;
    EXPECT_EQ(r.observations.y[static_cast<Eigen::Index>(i)], holds_events ? 8.0 : 0.0);
  }
}

TEST(SnapAggregate, FarEventRejectedAndTooManyIsHardError) {
  const MetricGraph g = netfield::testing::path_graph(1, 100.0);
  std::vector<EventRecord> ev;
  for (int i = 0; i < 10; ++i) ev.push_back(event(5.0 * i, 1.0, 1));
  ev.push_back(event(50.0, 50.0, 3));
  const SnapReport r = snap_and_aggregate(g, ev, Aggregation::exact_position, 15.0);
  ASSERT_EQ(r.rejected.size(), 1u);
  EXPECT_EQ(r.rejected[0].row, 10u);
  EXPECT_NEAR(r.rejected[0].distance, 50.0, 1e-9);
  ev.push_back(event(60.0, -40.0, 1));
  EXPECT_THROW(snap_and_aggregate(g, ev, Aggregation::exact_position, 15.0), InputError);
}

TEST(SnapAggregate, CountsConserved) {
  std::mt19937_64 rng(11);
  const MetricGraph g = netfield::testing::random_connected(20, 8, rng);
  std::uniform_real_distribution<double> u(-0.5, 1.5);
  std::poisson_distribution<int> pois(2.0);
  std::vector<EventRecord> ev;
  for (int i = 0; i < 400; ++i) ev.push_back(event(u(rng), u(rng), pois(rng)));
  for (Aggregation mode : {Aggregation::exact_position, Aggregation::segment_centroid}) {
    const SnapReport r = snap_and_aggregate(g, ev, mode, 0.75);
    EXPECT_FALSE(r.rejected.empty());
    EXPECT_EQ(r.observations.y.sum() + r.rejected_count, r.total_count);
    double total = 0.0;
    for (const auto& e : ev) total += e.count;
    EXPECT_EQ(r.total_count, total);
  }
}

TEST(Simulate, DeterministicPerSeed) {
  const MetricGraph g = graph_from_json(graph_to_json(build_graph(street_network(5, 5, 30, 1.0, 2))));
  SimulationSettings s;
  s.field = {2.0, 1.0, 1};
  s.n_events = 200;
  s.seed = 9;
  const fs::path a = scratch("sim_a"), b = scratch("sim_b");
  write_dataset(simulate_dataset(g, s), a.string());
  write_dataset(simulate_dataset(g, s), b.string());
  for (const char* f : {"events.csv", "truth.json"})
    EXPECT_EQ(detail::read_file((a / f).string()), detail::read_file((b / f).string())) << f;
  s.seed = 10;
  const fs::path c = scratch("sim_c");
  write_dataset(simulate_dataset(g, s), c.string());
  EXPECT_NE(detail::read_file((a / "events.csv").string()), detail::read_file((c / "events.csv").string()));
}

TEST(Simulate, UnderflowGivesZeroCounts) {
  const MetricGraph g = netfield::testing::path_graph(3);
  SimulationSettings s;
  s.beta0 = -50.0;
  s.n_events = 300;
  for (const auto& e : simulate_dataset(g, s).events) EXPECT_EQ(e.count, 0.0);
}

TEST(Simulate, ZeroFieldMeanMatchesRate) {
  const MetricGraph g = netfield::testing::path_graph(4);
  SimulationSettings s;
  s.beta0 = std::log(3.0);
  s.n_events = 10000;
  s.seed = 5;
  ZeroStream zero;
  const SimulatedDataset d = simulate_dataset(g, s, zero);
  EXPECT_EQ(d.field.cwiseAbs().maxCoeff(), 0.0);
  double sum = 0.0;
  for (const auto& e : d.events) sum += e.count;
  const double mean = sum / 10000.0;
  EXPECT_LT(std::abs(mean - 3.0), 4.0 * std::sqrt(3.0 / 10000.0));
}

TEST(Simulate, PlacementIsLengthWeighted) {
  const MetricGraph g = netfield::testing::graph_from(
      {netfield::testing::straight({0, 0}, {1, 0}), netfield::testing::straight({1, 0}, {4, 0})});
  SimulationSettings s;
  s.n_events = 8000;
  s.seed = 3;
  ZeroStream zero;
  const SimulatedDataset d = simulate_dataset(g, s, zero);
  std::size_t on_long = 0;
  for (const auto& p : d.positions) on_long += g.edge(p.edge).length > 2.0;
  const double frac = on_long / 8000.0;
  EXPECT_NEAR(frac, 0.75, 4.0 * std::sqrt(0.75 * 0.25 / 8000.0));
}

TEST(RiskMap, SpacingAndEndpoints) {
  const MetricGraph unit = netfield::testing::interval(1.0);
  const auto pts = riskmap_positions(unit, 0.5);
  ASSERT_EQ(pts.size(), 3u);
  EXPECT_EQ(pts[0].offset, 0.0);
  EXPECT_EQ(pts[1].offset, 0.5);
  EXPECT_EQ(pts[2].offset, 1.0);
  std::mt19937_64 rng(2);
  const MetricGraph g = netfield::testing::random_connected(10, 4, rng);
  const auto all = riskmap_positions(g, 0.07);
  std::vector<std::vector<double>> per(g.edge_count());
  for (const auto& p : all) per[p.edge].push_back(p.offset);
  for (std::size_t e = 0; e < g.edge_count(); ++e) {
    ASSERT_GE(per[e].size(), 2u);
    EXPECT_EQ(per[e].front(), 0.0);
    EXPECT_EQ(per[e].back(), g.edge(e).length);
    for (std::size_t k = 1; k < per[e].size(); ++k) EXPECT_LE(per[e][k] - per[e][k - 1], 0.07 + 1e-12);
  }
  EXPECT_THROW(riskmap_positions(g, 0.0), InputError);
}

namespace {

FitResult intercept_only_fit() {
  const MetricGraph g = netfield::testing::path_graph(3);
  ObservationSet obs;
  std::mt19937_64 rng(8);
  obs.positions = netfield::testing::random_positions(g, 12, rng);
  obs.y = Eigen::VectorXd::Constant(12, 3.0);
  ModelSpec spec;
  spec.h_max = 0.1;
  auto model = std::make_shared<const NetworkModel>(g, obs, spec);
  return fit_at(model, HyperParams::from_range_sigma(1.0, 1e-6, 100.0, 0.5));
}

}  // namespace

TEST(RiskMap, GeoJsonRoundTripAndConstantField) {
  const FitResult fit = intercept_only_fit();
  const RiskMap map = compute_riskmap(fit, 0.25, 200, 3);
  const fs::path dir = scratch("riskmap");
  export_riskmap(map, "geojson", (dir / "map.geojson").string());
  export_riskmap(map, "csv", (dir / "map.csv").string());
  const Json j = detail::parse_json(detail::read_file((dir / "map.geojson").string()), "map");
  ASSERT_EQ(j["features"].size(), map.positions.size());
  for (std::size_t i = 0; i < map.positions.size(); ++i) {
    const Json& p = j["features"][i]["properties"];
    EXPECT_NEAR(p["eta_mean"].get<double>(), map.values[i].eta_mean, 1e-9);
    EXPECT_NEAR(p["rho_median"].get<double>(), map.values[i].rho_median, 1e-9);
    EXPECT_NEAR(p["offset"].get<double>(), map.positions[i].offset, 1e-9);
    EXPECT_NEAR(map.values[i].rho_median, map.values[0].rho_median, 1e-4 * map.values[0].rho_median);
  }
  EXPECT_THROW(export_riskmap(map, "shp", (dir / "x").string()), InputError);
  EXPECT_THROW(export_riskmap(map, "csv", (dir / "missing" / "x.csv").string()), InputError);
}

TEST(Render, DeterministicAndConstantColor) {
  const MetricGraph g = build_graph(street_network(4, 4, 20, 1.0, 3));
  const DiscretizationMesh mesh = discretize(g, 0.25);
  const Eigen::VectorXd flat = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(mesh.node_count()), 0.7);
  const std::string svg = render_svg(g, field_profiles(g, mesh, flat), "value");
  std::set<std::string> strokes;
  for (std::size_t at = svg.find("stroke=\"#"); at != std::string::npos; at = svg.find("stroke=\"#", at + 1))
    strokes.insert(svg.substr(at + 8, 7));
  EXPECT_EQ(strokes.size(), 1u);
  EXPECT_EQ(render_svg(g, field_profiles(g, mesh, flat), "value"), svg);

  const Eigen::VectorXd vary = Eigen::VectorXd::LinSpaced(flat.size(), -1.0, 1.0);
  const std::string a = render_svg(g, field_profiles(g, mesh, vary), "value");
  EXPECT_EQ(a, render_svg(g, field_profiles(g, mesh, vary), "value"));
  EXPECT_NE(a, svg);
  EXPECT_EQ(detail::hex_color(detail::color_at(0.0)), "#440154");
  EXPECT_EQ(detail::hex_color(detail::color_at(1.0)), "#fde725");

  const MetricGraph empty;
  try {
    render_svg(empty, {}, "value");
    FAIL();
  } catch (const InputError& e) {
    EXPECT_EQ(std::string(e.what()), "no edges");
  }
}

TEST(Config, ParsesKnownKeysAndRejectsUnknown) {
  const FitConfig c = FitConfig::from_map(parse_key_values(
      "# priors\nr0 = 0.5\np_r=0.1\nsigma0 = 2\nnugget_rate = 0.01\nh_max = 0.02\nmax_evaluations = 50\nS = 400\n"
      "covariates = speed, width\nmax_snap = 5\n"));
  EXPECT_EQ(c.spec.pc.r0, 0.5);
  EXPECT_EQ(c.spec.pc.p_r, 0.1);
  EXPECT_EQ(c.spec.pc.sigma0, 2.0);
  EXPECT_EQ(c.spec.precision_prior.rate, 0.01);
  EXPECT_EQ(c.spec.h_max, 0.02);
  EXPECT_EQ(c.optimizer.max_evaluations, 50);
  EXPECT_EQ(c.samples, 400);
  EXPECT_EQ(c.max_snap, 5.0);
  EXPECT_EQ(c.covariates, (std::vector<std::string>{"speed", "width"}));
  EXPECT_EQ(FitConfig::from_json(c.to_json()).to_json(), c.to_json());
  EXPECT_THROW(FitConfig::from_map(parse_key_values("bogus = 1\n")), InputError);
  EXPECT_THROW(FitConfig::from_map(parse_key_values("r0 = abc\n")), InputError);
  EXPECT_THROW(FitConfig::from_map(parse_key_values("S = 1\n")), InputError);
  EXPECT_THROW(parse_key_values("no equals sign\n"), InputError);
  EXPECT_EQ(FitConfig{}.max_snap, 15.0);
}

TEST(FitFile, ReloadReproducesFit) {
  const fs::path dir = scratch("fitfile");
  const MetricGraph g = build_graph(street_network(4, 5, 25, 1.0, 7));
  save_graph(g, (dir / "g.json").string());
  SimulationSettings s;
  s.field = {1.5, 1.0, 1};
  s.n_events = 80;
  s.seed = 4;
  write_dataset(simulate_dataset(load_graph((dir / "g.json").string()), s), (dir / "sim").string());
  FitInputs in;
  in.graph_path = (dir / "g.json").string();
  in.events_path = (dir / "sim" / "events.csv").string();
  in.config.optimizer.max_evaluations = 40;
  in.config.optimizer.restarts = 0;
  const PreparedModel prep = prepare_model(in);
  FitOptions opts;
  opts.optimizer = in.config.optimizer;
  const FitResult fit = fit_model(prep.model, opts);
  Json j = fit_to_json(fit, in, prep.snap);
  write_text((dir / "fit.json").string(), j.dump(1));
  const LoadedFit lf = load_fit((dir / "fit.json").string());
  EXPECT_EQ(lf.fit.theta.log_kappa, fit.theta.log_kappa);
  EXPECT_NEAR((lf.fit.mode() - fit.mode()).cwiseAbs().maxCoeff(), 0.0, 1e-10);
  Json again = fit_to_json(fit_model(prepare_model(in).model, opts), in, prep.snap);
  j.erase("timing");
  again.erase("timing");
  EXPECT_EQ(j.dump(), again.dump());
}
