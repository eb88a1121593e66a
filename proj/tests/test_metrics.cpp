#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "netfield/metrics.hpp"
#include "support.hpp"

using namespace netfield;
using netfield::testing::straight;

TEST(Geodesic, WithinEdgePathAndCircle) {
  EXPECT_NEAR(geodesic_distance(netfield::testing::interval(1.0), {0, 0.2}, {0, 0.7}), 0.5, 1e-15);
  const MetricGraph path = netfield::testing::path_graph(2);
  EXPECT_DOUBLE_EQ(geodesic_distance(path, {0, 0.0}, {1, 1.0}), 2.0);

  const MetricGraph c = netfield::testing::circle(1.0, 2);
  const double len = c.total_length();
  // Arc separation 0.8 of the circumference going forwards from offset 0.05.
  const GraphPosition s{0, 0.05 * len};
  const double target = 0.85 * len;
  const GraphPosition t =
      target <= c.edge(0).length ? GraphPosition{0, target} : GraphPosition{1, target - c.edge(0).length};
  EXPECT_NEAR(geodesic_distance(c, s, t), 0.2 * len, 1e-12);
}

TEST(Geodesic, Unreachable) {
  const MetricGraph g = netfield::testing::graph_from({straight({0, 0}, {1, 0}), straight({0, 5}, {1, 5})});
  EXPECT_THROW(geodesic_distance(g, {0, 0.5}, {1, 0.5}), UnreachableError);
}

TEST(Resistance, SingleResistorParallelAndTriangle) {
  EXPECT_NEAR(resistance_distance(netfield::testing::interval(2.5), {0, 0.0}, {0, 2.5}), 2.5, 1e-12);

  const MetricGraph par = netfield::testing::graph_from(
      {straight({0, 0}, {1, 0}), Segment{{{0, 0}, {0.5, 0.5}, {1, 0}}, {}}});
  const double l1 = par.edge(0).length, l2 = par.edge(1).length;
  EXPECT_NEAR(resistance_distance(par, {0, 0.0}, {0, l1}), l1 * l2 / (l1 + l2), 1e-12);

  const MetricGraph unit_parallel = netfield::testing::graph_from(
      {straight({0, 0}, {1, 0}), Segment{{{0, 0}, {0.5, 0.0}, {1, 0}}, {}}});
  EXPECT_NEAR(resistance_distance(unit_parallel, {0, 0.0}, {0, 1.0}), 0.5, 1e-12);

  const MetricGraph tri = netfield::testing::triangle();
  const double oracle = netfield::testing::pinv_resistance(tri, tri.edge(0).start, tri.edge(0).end);
  EXPECT_NEAR(oracle, 2.0 / 3.0, 1e-12);
  EXPECT_NEAR(resistance_distance(tri, {0, 0.0}, {0, 1.0}), 2.0 / 3.0, 1e-12);
}

TEST(Resistance, WithinEdgeSplitMatchesPseudoInverse) {
  std::mt19937_64 rng(21);
  for (int rep = 0; rep < 10; ++rep) {
    const MetricGraph g = netfield::testing::random_connected(12, 6, rng);
    const auto pos = netfield::testing::random_positions(g, 2, rng);
    const AugmentedGraph aug = insert_positions(g, pos);
    const double oracle = netfield::testing::pinv_resistance(aug.graph, aug.vertex_of[0], aug.vertex_of[1]);
    EXPECT_NEAR(resistance_distance(g, pos[0], pos[1]), oracle, 1e-9);
  }
}

TEST(Resistance, TreesAgreeWithGeodesic) {
  std::mt19937_64 rng(99);
  for (int rep = 0; rep < 10; ++rep) {
    const MetricGraph g = netfield::testing::random_tree(30, rng);
    const auto pos = netfield::testing::random_positions(g, 12, rng);
    const DistanceMatrix r = pairwise_distances(g, pos, Metric::resistance);
    const DistanceMatrix d = pairwise_distances(g, pos, Metric::geodesic);
    EXPECT_LT((r.values - d.values).cwiseAbs().maxCoeff(), 1e-9);
  }
}

TEST(Resistance, BoundedByGeodesicAndTriangleInequality) {
  std::mt19937_64 rng(4);
  for (int rep = 0; rep < 10; ++rep) {
    const MetricGraph g = netfield::testing::random_connected(25, 12, rng);
    const auto pos = netfield::testing::random_positions(g, 10, rng);
    for (Metric m : {Metric::resistance, Metric::geodesic}) {
      const DistanceMatrix dm = pairwise_distances(g, pos, m);
      const auto n = dm.values.rows();
      for (Eigen::Index i = 0; i < n; ++i) {
        EXPECT_EQ(dm.values(i, i), 0.0);
        for (Eigen::Index j = 0; j < n; ++j) {
          EXPECT_EQ(dm.values(i, j), dm.values(j, i));
          for (Eigen::Index k = 0; k < n; ++k)
            EXPECT_LE(dm.values(i, k), dm.values(i, j) + dm.values(j, k) + 1e-9);
        }
      }
    }
    const DistanceMatrix r = pairwise_distances(g, pos, Metric::resistance);
    const DistanceMatrix d = pairwise_distances(g, pos, Metric::geodesic);
    EXPECT_TRUE(((r.values - d.values).array() <= 1e-9).all());
  }
}

TEST(Pairwise, MatchesPerPairCalls) {
  std::mt19937_64 rng(8);
  const MetricGraph g = netfield::testing::random_connected(15, 8, rng);
  const auto pos = netfield::testing::random_positions(g, 6, rng);
  const DistanceMatrix r = pairwise_distances(g, pos, Metric::resistance);
  const DistanceMatrix d = pairwise_distances(g, pos, Metric::geodesic);
  for (std::size_t i = 0; i < pos.size(); ++i)
    for (std::size_t j = 0; j < pos.size(); ++j) {
      EXPECT_NEAR(r.values(i, j), i == j ? 0.0 : resistance_distance(g, pos[i], pos[j]), 1e-10);
      EXPECT_NEAR(d.values(i, j), i == j ? 0.0 : geodesic_distance(g, pos[i], pos[j]), 1e-10);
    }
  // Sparse and dense grounded solves agree.
  const DistanceMatrix sparse = pairwise_distances(g, pos, Metric::resistance, 0);
  EXPECT_LT((sparse.values - r.values).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Pairwise, SingleAndTriangleVertices) {
  const MetricGraph tri = netfield::testing::triangle();
  const GraphPosition one[] = {{1, 0.3}};
  EXPECT_EQ(pairwise_distances(tri, one, Metric::resistance).values, Eigen::MatrixXd::Zero(1, 1));
  const GraphPosition verts[] = {{0, 0.0}, {1, 0.0}, {2, 0.0}};
  const DistanceMatrix dm = pairwise_distances(tri, verts, Metric::resistance);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) EXPECT_NEAR(dm.values(i, j), i == j ? 0.0 : 2.0 / 3.0, 1e-12);
}

TEST(Pairwise, DisconnectedPairsReported) {
  const MetricGraph g = netfield::testing::graph_from({straight({0, 0}, {1, 0}), straight({0, 5}, {1, 5})});
  const GraphPosition pos[] = {{0, 0.1}, {0, 0.9}, {1, 0.5}};
  try {
    pairwise_distances(g, pos, Metric::resistance);
    FAIL();
  } catch (const UnreachableError& e) {
    ASSERT_EQ(e.pairs().size(), 2u);
    EXPECT_EQ(e.pairs()[0], (std::pair<std::size_t, std::size_t>{0, 2}));
  }
  EXPECT_THROW(resistance_distance(g, pos[0], pos[2]), UnreachableError);
}

TEST(Metrics, ZeroLengthEdgesAreContracted) {
  std::vector<Point> v = {{0, 0}, {1, 0}, {1, 0}, {2, 0}};
  std::vector<Edge> e = {{0, 1, 1.0, {{0, 0}, {1, 0}}, {}, 0},
                         {1, 2, 0.0, {{1, 0}, {1, 0}}, {}, 1},
                         {2, 3, 1.0, {{1, 0}, {2, 0}}, {}, 2}};
  const MetricGraph g(v, e, 0.0);
  EXPECT_NEAR(resistance_distance(g, {0, 0.0}, {2, 1.0}), 2.0, 1e-12);
}

TEST(Metrics, DiameterAndCsv) {
  EXPECT_DOUBLE_EQ(graph_diameter(netfield::testing::path_graph(3)), 3.0);
  const GraphPosition pos[] = {{0, 0.0}, {0, 1.0}};
  std::ostringstream os;
  write_csv(os, pairwise_distances(netfield::testing::interval(1.0), pos, Metric::geodesic));
  EXPECT_EQ(os.str(), "index,0,1\n0,0,1\n1,1,0\n");
}
