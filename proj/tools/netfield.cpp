#include <cstdio>
#include <filesystem>
#include <iostream>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "netfield/netfield.hpp"

using namespace netfield;

namespace {

struct BuildArgs {
  std::string network, out;
  double snap_tol = 1e-6;
  bool split_crossings = false;
};

int build_graph_cmd(const BuildArgs& a) {
  const NetworkFile net = load_network(a.network);
  if (net.skipped > 0) std::cerr << "warning: skipped " << net.skipped << " non-LineString feature(s)\n";
  const MetricGraph g = build_graph(net.segments, BuildOptions{a.snap_tol, a.split_crossings});
  save_graph(g, a.out);
  const GraphSummary s = graph_summary(g);
  std::cout << "segments " << net.segments.size() << "\nvertices " << s.vertex_count << "\nedges " << s.edge_count
            << "\ncomponents " << s.component_count << "\ndropped " << s.dropped_segments << "\ntotal_length "
            << format_significant(s.total_length, 10) << '\n';
  return 0;
}

struct SimulateArgs {
  std::string graph, out;
  double kappa = 1.0, sigma = 1.0, beta0 = 0.0, h_max = 0.0;
  int alpha = 1;
  std::size_t n = 500;
  std::uint64_t seed = 1;
};

int simulate_cmd(const SimulateArgs& a) {
  const MetricGraph g = load_graph(a.graph);
  if (!(a.sigma > 0.0) || !(a.kappa > 0.0)) throw InputError("kappa and sigma must be > 0");
  SimulationSettings s;
  s.field.kappa = a.kappa;
  s.field.alpha = a.alpha;
  s.field.tau = std::sqrt(field_variance(a.kappa, 1.0, a.alpha - 0.5)) / a.sigma;
  s.beta0 = a.beta0;
  s.n_events = a.n;
  s.h_max = a.h_max;
  s.seed = a.seed;
  const SimulatedDataset d = simulate_dataset(g, s);
  write_dataset(d, a.out);
  double total = 0.0;
  for (const auto& e : d.events) total += e.count;
  std::cout << "events " << d.events.size() << "\ntotal_count " << total << "\nmesh_nodes " << d.mesh.node_count()
            << '\n';
  return 0;
}

struct FitArgs {
  std::string graph, events, config, out;
  std::string model = "graph-spde", agg = "exact";
  int alpha = 1;
  std::uint64_t seed = 1;
};

int fit_cmd(const FitArgs& a) {
  FitInputs in;
  in.graph_path = a.graph;
  in.events_path = a.events;
  in.kind = parse_model_kind(a.model);
  in.alpha = a.alpha;
  in.aggregation = parse_aggregation(a.agg);
  if (!a.config.empty()) in.config = FitConfig::load(a.config);
  in.seed = a.seed;
  const PreparedModel prep = prepare_model(in);
  if (!prep.snap.rejected.empty())
    std::cerr << "warning: " << prep.snap.rejected.size() << " event(s) farther than max_snap were rejected\n";
  FitOptions opts;
  opts.optimizer = in.config.optimizer;
  opts.optimizer.seed = a.seed;
  opts.laplace = in.config.laplace;
  const FitResult fit = fit_model(prep.model, opts);
  for (const auto& w : fit.warnings) std::cerr << "warning: " << w << '\n';
  const Json j = fit_to_json(fit, in, prep.snap);
  write_text(a.out, j.dump(1) + "\n");
  const double nu = prep.model->spec().smoothness();
  std::cout << "model " << a.model << "\nrange " << format_significant(fit.theta.range(nu), 8) << "\nsigma "
            << format_significant(fit.theta.sigma(nu), 8) << "\nintercept "
            << format_significant(fit.beta()[0], 8) << "\nevaluations " << fit.evaluations << "\nseconds "
            << format_fixed(fit.seconds, 2) << '\n';
  return 0;
}

double default_delta(const LoadedFit& lf) {
  const double h = lf.fit.model->dense() ? default_h_max(lf.prepared.graph) : lf.fit.model->spec().h_max;
  return h > 0.0 ? h : default_h_max(lf.prepared.graph);
}

struct PredictArgs {
  std::string fit, format = "geojson", out;
  double delta = 0.0;
  int samples = 0;
};

int predict_cmd(const PredictArgs& a) {
  const LoadedFit lf = load_fit(a.fit);
  const double delta = a.delta > 0.0 ? a.delta : default_delta(lf);
  const int s = a.samples > 0 ? a.samples : lf.inputs.config.samples;
  const RiskMap map = compute_riskmap(lf.fit, delta, s, lf.inputs.seed);
  export_riskmap(map, a.format, a.out);
  std::cout << "positions " << map.positions.size() << "\ndelta " << format_significant(delta, 8) << '\n';
  return 0;
}

struct CompareArgs {
  std::vector<std::string> fits, labels;
  std::string out;
  int samples = 250;
  std::uint64_t seed = 1;
};

int compare_cmd(const CompareArgs& a) {
  if (!a.labels.empty() && a.labels.size() != a.fits.size()) throw InputError("--labels must match --fits");
  std::vector<ComparisonEntry> entries;
  std::set<std::string> datasets;
  for (std::size_t i = 0; i < a.fits.size(); ++i) {
    const LoadedFit lf = load_fit(a.fits[i]);
    datasets.insert(lf.json.at("inputs").dump() + lf.json.at("config").at("covariates").dump() +
                    lf.json.at("config").at("max_snap").dump());
    CriteriaReport r = evaluate_criteria(lf.fit, a.samples, a.seed);
    r.fit_seconds = lf.json.at("timing").at("seconds").get<double>();
    for (const auto& w : r.warnings) std::cerr << "warning: " << a.fits[i] << ": " << w << '\n';
    entries.push_back({a.labels.empty() ? lf.json.at("model").at("kind").get<std::string>() : a.labels[i], r});
  }
  if (datasets.size() > 1)
    std::cerr << "warning: fits use different observation sets; criteria are not comparable\n";
  const Comparison c = compare_report(std::move(entries));
  write_text(a.out, to_json(c).dump(1) + "\n");
  std::cout << comparison_table(c);
  return 0;
}

struct RenderArgs {
  std::string fit, field, graph, out;
  double delta = 0.0;
};

int render_cmd(const RenderArgs& a) {
  if (a.fit.empty() == a.field.empty()) throw InputError("give exactly one of --fit or --field");
  if (!a.fit.empty()) {
    const LoadedFit lf = load_fit(a.fit);
    const double delta = a.delta > 0.0 ? a.delta : default_delta(lf);
    const RiskMap map = compute_riskmap(lf.fit, delta, lf.inputs.config.samples, lf.inputs.seed);
    write_text(a.out, render_svg(lf.prepared.graph, riskmap_profiles(lf.prepared.graph, map), "relative risk (median)"));
    return 0;
  }
  if (a.graph.empty()) throw InputError("--field needs --graph");
  const MetricGraph g = load_graph(a.graph);
  const Json truth = detail::parse_json(detail::read_file(a.field), "field " + a.field);
  try {
    const DiscretizationMesh mesh = discretize(g, truth.at("h_max").get<double>());
    const Json& nodes = truth.at("field");
    Eigen::VectorXd values(static_cast<Eigen::Index>(nodes.size()));
    for (std::size_t i = 0; i < nodes.size(); ++i) values[static_cast<Eigen::Index>(i)] = nodes[i].at("value").get<double>();
    write_text(a.out, render_svg(g, field_profiles(g, mesh, values), "field value"));
  } catch (const nlohmann::json::exception& e) {
    throw InputError("field: malformed file: " + std::string(e.what()));
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Spatial models for event counts on road networks"};
  app.require_subcommand(1);

  BuildArgs ba;
  auto* build = app.add_subcommand("build-graph", "Build a metric graph from a GeoJSON network");
  build->add_option("--network", ba.network, "GeoJSON FeatureCollection of LineStrings")->required();
  build->add_option("--snap-tol", ba.snap_tol, "Endpoint snapping tolerance")->capture_default_str();
  build->add_flag("--split-crossings", ba.split_crossings, "Split polylines at interior crossings");
  build->add_option("--out", ba.out, "Output graph JSON")->required();

  SimulateArgs sa;
  auto* sim = app.add_subcommand("simulate", "Simulate a field and Poisson event counts");
  sim->add_option("--graph", sa.graph)->required();
  sim->add_option("--kappa", sa.kappa)->required();
  sim->add_option("--sigma", sa.sigma)->required();
  sim->add_option("--alpha", sa.alpha)->capture_default_str();
  sim->add_option("--beta0", sa.beta0)->capture_default_str();
  sim->add_option("--n", sa.n, "Number of events")->capture_default_str();
  sim->add_option("--h-max", sa.h_max, "Mesh spacing (0 = default)");
  sim->add_option("--seed", sa.seed)->capture_default_str();
  sim->add_option("--out", sa.out, "Output directory")->required();

  FitArgs fa;
  auto* fit = app.add_subcommand("fit", "Fit a model to event counts");
  fit->add_option("--graph", fa.graph)->required();
  fit->add_option("--events", fa.events)->required();
  fit->add_option("--model", fa.model)
      ->check(CLI::IsMember({"graph-spde", "resistance-matern", "euclidean-matern"}))
      ->capture_default_str();
  fit->add_option("--alpha", fa.alpha)->capture_default_str();
  fit->add_option("--agg", fa.agg)->check(CLI::IsMember({"exact", "centroid"}))->capture_default_str();
  fit->add_option("--config", fa.config, "key = value settings file");
  fit->add_option("--seed", fa.seed)->capture_default_str();
  fit->add_option("--out", fa.out)->required();

  PredictArgs pa;
  auto* pred = app.add_subcommand("predict", "Export a risk map from a fit");
  pred->add_option("--fit", pa.fit)->required();
  pred->add_option("--delta", pa.delta, "Spacing along edges (default: mesh h_max)");
  pred->add_option("--format", pa.format)->check(CLI::IsMember({"geojson", "csv"}))->capture_default_str();
  pred->add_option("--S", pa.samples, "Posterior samples (default: from the fit config)");
  pred->add_option("--out", pa.out)->required();

  CompareArgs ca;
  auto* cmp = app.add_subcommand("compare", "Compare fits by DIC, WAIC and CPO");
  cmp->add_option("--fits", ca.fits)->required()->expected(1, -1);
  cmp->add_option("--labels", ca.labels)->expected(1, -1);
  cmp->add_option("--S", ca.samples)->capture_default_str();
  cmp->add_option("--seed", ca.seed)->capture_default_str();
  cmp->add_option("--out", ca.out)->required();

  RenderArgs ra;
  auto* render = app.add_subcommand("render", "Render a fit or simulated field to SVG");
  render->add_option("--fit", ra.fit);
  render->add_option("--field", ra.field, "truth.json from simulate");
  render->add_option("--graph", ra.graph, "Graph for --field");
  render->add_option("--delta", ra.delta);
  render->add_option("--out", ra.out)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*build) return build_graph_cmd(ba);
    if (*sim) return simulate_cmd(sa);
    if (*fit) return fit_cmd(fa);
    if (*pred) return predict_cmd(pa);
    if (*cmp) return compare_cmd(ca);
    if (*render) return render_cmd(ra);
  } catch (const ConvergenceError& e) {
    std::cerr << "error: " << e.what() << "\ngradient trace:";
    for (double v : e.trace()) std::cerr << ' ' << v;
    std::cerr << '\n';
    return exit_code(e.kind());
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  }
  return 0;
}
