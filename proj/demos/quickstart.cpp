// Simulate counts on a small street network, fit two models and compare them.
#include <iostream>

#include "netfield/netfield.hpp"

using namespace netfield;

int main() {
  try {
    const MetricGraph g = build_graph(street_network(8, 8, 90, 0.1, 5));
    const GraphSummary summary = graph_summary(g);
    std::cout << "graph: " << summary.vertex_count << " vertices, " << summary.edge_count << " edges, length "
              << format_significant(summary.total_length, 5) << "\n";

    SimulationSettings sim;
    sim.field.kappa = 5.0;
    sim.field.tau = std::sqrt(field_variance(5.0, 1.0, 0.5));
    sim.beta0 = std::log(2.0);
    sim.n_events = 200;
    sim.seed = 42;
    const SimulatedDataset data = simulate_dataset(g, sim);
    const SnapReport snap = snap_and_aggregate(g, data.events, Aggregation::exact_position, 15.0);

    std::vector<ComparisonEntry> entries;
    FitResult spde_fit;
    for (ModelKind kind : {ModelKind::graph_spde, ModelKind::euclidean_matern}) {
      ModelSpec spec;
      spec.kind = kind;
      const FitResult fit = fit_model(std::make_shared<const NetworkModel>(g, snap.observations, spec));
      std::cout << to_string(kind) << ": range " << format_significant(fit.theta.range(0.5), 4) << " (true "
                << format_significant(sim.field.range(), 4) << "), sigma " << format_significant(fit.theta.sigma(0.5), 4)
                << ", intercept " << format_significant(fit.beta()[0], 4) << "\n";
      entries.push_back({to_string(kind), evaluate_criteria(fit, 250, 1)});
      if (kind == ModelKind::graph_spde) spde_fit = fit;
    }
    std::cout << '\n' << comparison_table(compare_report(entries)) << '\n';

    const GraphPosition at[] = {{0, 0.0}, {0, 0.5 * g.edge(0).length}};
    for (const PredictionSummary& p : predict(spde_fit, at, 500, 7))
      std::cout << "relative risk " << format_significant(p.rho_median, 4) << " [" << format_significant(p.rho_lower, 4)
                << ", " << format_significant(p.rho_upper, 4) << "]\n";
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code(e.kind());
  }
  return 0;
}
