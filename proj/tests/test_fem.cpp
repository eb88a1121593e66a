#include <gtest/gtest.h>

#include <random>

#include "netfield/fem.hpp"
#include "support.hpp"

using namespace netfield;

namespace {

Eigen::MatrixXd dense(const SparseSymMatrix& m) { return Eigen::MatrixXd(m); }

}  // namespace

TEST(Discretize, Counts) {
  const MetricGraph unit = netfield::testing::interval(1.0);
  const DiscretizationMesh m = discretize(unit, 0.5);
  EXPECT_EQ(m.node_count(), 3u);
  ASSERT_EQ(m.segments.size(), 2u);
  EXPECT_DOUBLE_EQ(m.segments[0].length, 0.5);

  const DiscretizationMesh coarse = discretize(unit, 2.0);
  EXPECT_EQ(coarse.node_count(), 2u);
  EXPECT_EQ(coarse.segments.size(), 1u);

  EXPECT_EQ(discretize(netfield::testing::star(3), 0.5).node_count(), 7u);
  EXPECT_THROW(discretize(unit, 0.0), InputError);
}

TEST(Discretize, InvariantsOnRandomGraphs) {
  std::mt19937_64 rng(2);
  for (int rep = 0; rep < 10; ++rep) {
    const MetricGraph g = netfield::testing::random_connected(20, 8, rng);
    const double h = 0.03 + 0.02 * rep;
    const DiscretizationMesh m = discretize(g, h);
    std::vector<double> per_edge(g.edge_count(), 0.0);
    for (const auto& s : m.segments) {
      EXPECT_LE(s.length, h + 1e-12);
      per_edge[s.edge] += s.length;
    }
    for (std::size_t e = 0; e < g.edge_count(); ++e) EXPECT_NEAR(per_edge[e], g.edge(e).length, 1e-12);
    for (std::size_t v = 0; v < g.vertex_count(); ++v) {
      const GraphPosition& p = m.nodes[v];
      const Edge& ed = g.edge(p.edge);
      EXPECT_TRUE((ed.start == v && p.offset == 0.0) || (ed.end == v && p.offset == ed.length));
    }
  }
}

TEST(Assemble, SingleEdgeFormulas) {
  const FemMatrices fm = assemble_matrices(discretize(netfield::testing::interval(1.0), 0.5));
  Eigen::MatrixXd c(3, 3), g(3, 3);
  c << 0.25, 0, 0, 0, 0.25, 0, 0, 0, 0.5;
  // Node order: two vertices first, then the interior node.
  g << 2, 0, -2, 0, 2, -2, -2, -2, 4;
  EXPECT_LT((dense(fm.mass) - c).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_LT((dense(fm.stiffness) - g).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Assemble, RowSumsAndTrace) {
  const FemMatrices path = assemble_matrices(discretize(netfield::testing::path_graph(2), 0.1));
  EXPECT_NEAR(path.mass.diagonal().sum(), 2.0, 1e-12);
  std::mt19937_64 rng(6);
  for (int rep = 0; rep < 10; ++rep) {
    const MetricGraph g = netfield::testing::random_connected(15, 10, rng);
    const FemMatrices fm = assemble_matrices(discretize(g, 0.05));
    const Eigen::VectorXd rows = dense(fm.stiffness).rowwise().sum();
    EXPECT_LT(rows.cwiseAbs().maxCoeff(), 1e-12 * dense(fm.stiffness).cwiseAbs().maxCoeff());
    EXPECT_NEAR(fm.mass.diagonal().sum(), g.total_length(), 1e-12 * g.total_length());
    EXPECT_GT(fm.mass.diagonal().minCoeff(), 0.0);
    EXPECT_EQ(fm.mass.nonZeros(), fm.mass.rows());
  }
}

TEST(Precision, AlphaOneDirectSum) {
  const FemMatrices fm = assemble_matrices(discretize(netfield::testing::interval(1.0), 0.5));
  const SparseSymMatrix q = precision_matrix(fm.mass, fm.stiffness, {1.0, 1.0, 1});
  Eigen::MatrixXd expected(3, 3);
  expected << 2.25, 0, -2, 0, 2.25, -2, -2, -2, 4.5;
  EXPECT_LT((dense(q) - expected).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_THROW(precision_matrix(fm.mass, fm.stiffness, {0.0, 1.0, 1}), InputError);
  EXPECT_THROW(precision_matrix(fm.mass, fm.stiffness, {1.0, -1.0, 1}), InputError);
  EXPECT_THROW(precision_matrix(fm.mass, fm.stiffness, {1.0, 1.0, 3}), InputError);
}

TEST(Precision, StiffnessAloneIsSingular) {
  const FemMatrices fm = assemble_matrices(discretize(netfield::testing::star(4), 0.2));
  EXPECT_THROW(SpdFactor(SparseSymMatrix(fm.stiffness), "G"), NotSpdError);
}

TEST(Precision, SpdOnRandomGraphs) {
  std::mt19937_64 rng(10);
  std::uniform_real_distribution<double> u(0.1, 10.0);
  for (int rep = 0; rep < 100; ++rep) {
    const MetricGraph g = netfield::testing::random_connected(8, 4, rng);
    const FemMatrices fm = assemble_matrices(discretize(g, 0.1));
    for (int alpha : {1, 2}) {
      const SparseSymMatrix q = precision_matrix(fm.mass, fm.stiffness, {u(rng), u(rng), alpha});
      EXPECT_NO_THROW(SpdFactor f(q));
      EXPECT_LT((dense(q) - dense(q).transpose()).cwiseAbs().maxCoeff(), 1e-12 * dense(q).cwiseAbs().maxCoeff());
    }
  }
}

TEST(Precision, AlphaTwoMatchesMatern32Shape) {
  // Long interval, fine mesh: interior correlation ~ (1 + kappa d) e^{-kappa d}.
  const MetricGraph g = netfield::testing::interval(30.0);
  const DiscretizationMesh mesh = discretize(g, 0.02);
  const FemMatrices fm = assemble_matrices(mesh);
  const double kappa = 1.0;
  const auto [k, tau] = natural_params(ParamDirection::range_sigma_to_kappa_tau, std::sqrt(12.0) / kappa, 1.0, 1.5);
  const SparseSymMatrix q = precision_matrix(fm.mass, fm.stiffness, {k, tau, 2});
  const Eigen::MatrixXd cov = Eigen::MatrixXd(q).inverse();
  const auto node_at = [&](double s) { return mesh.edge_nodes[0][static_cast<std::size_t>(std::lround(s / 0.02))]; };
  for (double d : {0.0, 0.5, 1.0, 2.0, 3.0}) {
    const double c = cov(node_at(15.0), node_at(15.0 + d));
    EXPECT_NEAR(c, (1.0 + kappa * d) * std::exp(-kappa * d), 0.01) << "d=" << d;
  }
}

TEST(NaturalParams, Conversions) {
  auto [kappa, tau] = natural_params(ParamDirection::range_sigma_to_kappa_tau, 2.0, 1.0, 0.5);
  EXPECT_NEAR(kappa, 1.0, 1e-15);
  auto [r, s] = natural_params(ParamDirection::kappa_tau_to_range_sigma, 0.5, 1.0, 0.5);
  EXPECT_NEAR(s, 1.0, 1e-15);
  EXPECT_NEAR(r, 4.0, 1e-15);
  auto [k2, t2] = natural_params(ParamDirection::range_sigma_to_kappa_tau, 0.0648, 1.0, 0.5);
  EXPECT_NEAR(k2, 30.864197530864196, 1e-9);
  const auto [r2, s2] = natural_params(ParamDirection::kappa_tau_to_range_sigma, k2, t2, 0.5);
  EXPECT_NEAR(r2, 0.0648, 1e-15);
  EXPECT_NEAR(s2, 1.0, 1e-14);
  // nu = 1/2 reduces to sigma^2 = 1 / (2 kappa tau^2).
  EXPECT_NEAR(field_variance(0.7, 1.3, 0.5), 1.0 / (2 * 0.7 * 1.3 * 1.3), 1e-14);
  EXPECT_NEAR(field_variance(0.7, 1.3, 1.5), 1.0 / (4 * 0.7 * 0.7 * 0.7 * 1.3 * 1.3), 1e-14);
  EXPECT_THROW(natural_params(ParamDirection::range_sigma_to_kappa_tau, -1.0, 1.0, 0.5), InputError);
  const FieldParams fp{2.0, 1.0, 2};
  EXPECT_NEAR(fp.range() * fp.kappa, std::sqrt(12.0), 1e-12);
}

TEST(ObservationMatrix, HatWeights) {
  const MetricGraph g = netfield::testing::interval(1.0);
  const DiscretizationMesh mesh = discretize(g, 0.5);
  const GraphPosition pos[] = {{0, 0.5}, {0, 0.25}, {0, 0.0}, {0, 1.0}};
  const Eigen::MatrixXd a = Eigen::MatrixXd(observation_matrix(g, mesh, pos));
  EXPECT_EQ(a.row(0), (Eigen::RowVector3d{0, 0, 1}));
  EXPECT_EQ(a.row(1), (Eigen::RowVector3d{0.5, 0, 0.5}));
  EXPECT_EQ(a.row(2), (Eigen::RowVector3d{1, 0, 0}));
  EXPECT_EQ(a.row(3), (Eigen::RowVector3d{0, 1, 0}));
  const GraphPosition bad[] = {{0, 1.5}};
  EXPECT_THROW(observation_matrix(g, mesh, bad), InputError);
}

TEST(ObservationMatrix, PartitionOfUnity) {
  std::mt19937_64 rng(12);
  const MetricGraph g = netfield::testing::random_connected(20, 10, rng);
  const DiscretizationMesh mesh = discretize(g, 0.07);
  const auto pos = netfield::testing::random_positions(g, 500, rng);
  const SparseMatrix a = observation_matrix(g, mesh, pos);
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    EXPECT_LE(a.row(i).nonZeros(), 2);
    EXPECT_NEAR(a.row(i).sum(), 1.0, 1e-14);
    for (SparseMatrix::InnerIterator it(a, i); it; ++it) {
      EXPECT_GE(it.value(), 0.0);
      EXPECT_LE(it.value(), 1.0);
    }
  }
}

TEST(SampleField, ZeroStreamAndDeterminism) {
  const FemMatrices fm = assemble_matrices(discretize(netfield::testing::star(3), 0.25));
  const SparseSymMatrix q = precision_matrix(fm.mass, fm.stiffness, {2.0, 1.0, 1});
  ZeroStream zero;
  EXPECT_EQ(sample_field(q, zero), Eigen::VectorXd::Zero(q.rows()));
  const Eigen::VectorXd a = sample_field(q, 42), b = sample_field(q, 42);
  EXPECT_EQ(a, b);
  EXPECT_NE(a, sample_field(q, 43));
}

TEST(SampleField, EmpiricalCovarianceMatchesInverse) {
  const FemMatrices fm = assemble_matrices(discretize(netfield::testing::path_graph(3), 0.34));
  const SparseSymMatrix q = precision_matrix(fm.mass, fm.stiffness, {1.5, 1.0, 1});
  ASSERT_EQ(q.rows(), 10);
  const Eigen::MatrixXd truth = Eigen::MatrixXd(q).inverse();
  const SpdFactor factor(q);
  NormalStream stream(5);
  const int draws = 20000;
  Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(10, 10);
  for (int s = 0; s < draws; ++s) {
    const Eigen::VectorXd x = sample_field(factor, stream);
    acc += x * x.transpose();
  }
  acc /= draws;
  for (int i = 0; i < 10; ++i)
    for (int j = 0; j < 10; ++j) {
      // Var of x_i x_j for a zero-mean Gaussian is S_ii S_jj + S_ij^2.
      const double se = std::sqrt((truth(i, i) * truth(j, j) + truth(i, j) * truth(i, j)) / draws);
      EXPECT_NEAR(acc(i, j), truth(i, j), 5 * se);
    }
}

TEST(FieldCovariance, SolveMatchesDenseInverse) {
  std::mt19937_64 rng(13);
  const MetricGraph g = netfield::testing::random_connected(10, 5, rng);
  const DiscretizationMesh mesh = discretize(g, 0.1);
  const FemMatrices fm = assemble_matrices(mesh);
  const SparseSymMatrix q = precision_matrix(fm.mass, fm.stiffness, {3.0, 0.8, 1});
  const auto pi = netfield::testing::random_positions(g, 7, rng);
  const auto pj = netfield::testing::random_positions(g, 5, rng);
  const Eigen::MatrixXd got = field_covariance(q, g, mesh, pi, pj);
  const Eigen::MatrixXd ai = Eigen::MatrixXd(observation_matrix(g, mesh, pi));
  const Eigen::MatrixXd aj = Eigen::MatrixXd(observation_matrix(g, mesh, pj));
  const Eigen::MatrixXd ref = ai * Eigen::MatrixXd(q).inverse() * aj.transpose();
  EXPECT_LT((got - ref).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(FieldCovariance, IntervalExponentialAndEndpointInflation) {
  const MetricGraph g = netfield::testing::interval(20.0);
  const DiscretizationMesh mesh = discretize(g, 0.01);
  const FemMatrices fm = assemble_matrices(mesh);
  const auto [kappa, tau] = natural_params(ParamDirection::range_sigma_to_kappa_tau, 2.0, 1.0, 0.5);
  const SparseSymMatrix q = precision_matrix(fm.mass, fm.stiffness, {kappa, tau, 1});
  const GraphPosition pos[] = {{0, 8.0}, {0, 9.0}, {0, 10.0}, {0, 12.5}, {0, 0.0}};
  const Eigen::MatrixXd c = field_covariance(q, g, mesh, pos, pos);
  EXPECT_NEAR(c(0, 1) / std::exp(-1.0), 1.0, 0.02);
  EXPECT_NEAR(c(0, 3) / std::exp(-4.5), 1.0, 0.02);
  EXPECT_NEAR(c(4, 4) / c(2, 2), 2.0, 0.06);
}
