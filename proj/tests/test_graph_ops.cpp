#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <random>

#include "cofill/graph.hpp"
#include "cofill/gradcheck.hpp"
#include "test_util.hpp"

using namespace cofill;
using namespace cofill::testing;

TEST(NormalizeAdjacency, EmptyGraphGivesIdentity) {
  const auto g = normalize_adjacency(Graph::empty(2));
  EXPECT_EQ(g.a_gcn, Tensor::matrix(2, 2, {1, 0, 0, 1}));
}

TEST(NormalizeAdjacency, TwoNodeEdge) {
  const auto g = normalize_adjacency(Graph::from_adjacency(Tensor::matrix(2, 2, {0, 1, 1, 0})));
  for (double v : g.a_gcn.data()) EXPECT_NEAR(v, 0.5, 1e-15);
}

TEST(NormalizeAdjacency, MatchesDirectFormula) {
  std::mt19937_64 rng(3);
  const Graph g = random_graph(7, 0.4, rng);
  const Tensor an = normalize_adjacency(g).a_gcn;
  std::vector<double> deg(7, 1.0);
  for (std::size_t i = 0; i < 7; ++i)
    for (std::size_t j = 0; j < 7; ++j) deg[i] += g.adjacency.at(i, j);
  for (std::size_t i = 0; i < 7; ++i)
    for (std::size_t j = 0; j < 7; ++j) {
      const double aij = g.adjacency.at(i, j) + (i == j ? 1.0 : 0.0);
      EXPECT_NEAR(an.at(i, j), aij / std::sqrt(deg[i] * deg[j]), 1e-14);
    }
}

TEST(NormalizeAdjacency, RandomGraphsSymmetricWithBoundedSpectrum) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 2 + trial % 9;
    const Tensor an = normalize_adjacency(random_graph(n, 0.2 + 0.015 * trial, rng)).a_gcn;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) EXPECT_EQ(an.at(i, j), an.at(j, i));
    EXPECT_LE(spectral_radius_symmetric(an), 1.0 + 1e-10);
  }
}

TEST(NormalizeAdjacency, RegularGraphRowsSumToOne) {
  const Tensor an = normalize_adjacency(Graph::ring(8)).a_gcn;
  for (std::size_t i = 0; i < 8; ++i) {
    double r = 0.0;
    for (std::size_t j = 0; j < 8; ++j) r += an.at(i, j);
    EXPECT_NEAR(r, 1.0, 1e-14);
  }
}

TEST(NormalizeAdjacency, IsolatedNodeIsFine) {
  Tensor a({3, 3});
  a.at(0, 1) = a.at(1, 0) = 1.0;
  const Tensor an = normalize_adjacency(Graph::from_adjacency(a)).a_gcn;
  EXPECT_DOUBLE_EQ(an.at(2, 2), 1.0);
  EXPECT_TRUE(an.all_finite());
}

TEST(GraphConv, IdentityGraphConcatenatesCopies) {
  // With A_gcn = I the concatenation is [H; H]; weight [I I] doubles H.
  std::mt19937_64 rng(5);
  const std::size_t c = 2;
  const Tensor h = random_tensor({c, 3, 4}, rng, 0.1, 1.0);
  NormalizedGraph ng{normalize_adjacency(Graph::empty(3)).a_gcn};
  Tensor w({c, 2 * c});
  for (std::size_t i = 0; i < c; ++i) w.at(i, i) = w.at(i, c + i) = 1.0;
  const Tensor y = graph_conv(Var::constant(h), ng, 1, Var::constant(w), Var::constant(Tensor({c})))
                       .value();
  for (std::size_t i = 0; i < h.size(); ++i) EXPECT_NEAR(y[i], 2.0 * h[i], 1e-15);
}

TEST(GraphConv, SingleNodeIsChannelMixing) {
  std::mt19937_64 rng(6);
  const Tensor h = random_tensor({3, 1, 5}, rng);
  const Tensor w = random_tensor({2, 9}, rng);
  const Tensor b = random_tensor({2}, rng);
  const auto ng = normalize_adjacency(Graph::empty(1));
  const Tensor y = graph_conv(Var::constant(h), ng, 2, Var::constant(w), Var::constant(b)).value();
  for (std::size_t o = 0; o < 2; ++o)
    for (std::size_t l = 0; l < 5; ++l) {
      double acc = b[o];
      for (std::size_t k = 0; k < 3; ++k)
        for (std::size_t c = 0; c < 3; ++c) acc += w.at(o, k * 3 + c) * h.at(c, 0, l);
      EXPECT_NEAR(y.at(o, 0, l), std::max(acc, 0.0), 1e-12);
    }
}

TEST(GraphConv, SecondOrderMatchesExplicitPowers) {
  std::mt19937_64 rng(7);
  const std::size_t c = 2, n = 4, len = 3, order = 2;
  const Graph g = random_graph(n, 0.6, rng);
  const auto ng = normalize_adjacency(g);
  const Tensor h = random_tensor({c, n, len}, rng);
  const Tensor w = random_tensor({3, c * (order + 1)}, rng);
  const Tensor b = random_tensor({3}, rng);
  // Explicit loop oracle: P0 = H, P_{k+1}[c,i,l] = sum_j P_k[c,j,l] A[j,i].
  std::vector<Tensor> powers{h};
  for (std::size_t k = 0; k < order; ++k) {
    Tensor next({c, n, len});
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t l = 0; l < len; ++l)
          for (std::size_t j = 0; j < n; ++j)
            next.at(ch, i, l) += powers.back().at(ch, j, l) * ng.a_gcn.at(j, i);
    powers.push_back(next);
  }
  const Tensor y = graph_conv(Var::constant(h), ng, order, Var::constant(w), Var::constant(b)).value();
  for (std::size_t o = 0; o < 3; ++o)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t l = 0; l < len; ++l) {
        double acc = b[o];
        for (std::size_t k = 0; k <= order; ++k)
          for (std::size_t ch = 0; ch < c; ++ch) acc += w.at(o, k * c + ch) * powers[k].at(ch, i, l);
        EXPECT_NEAR(y.at(o, i, l), std::max(acc, 0.0), 1e-12);
      }
}

TEST(GraphConv, NodeCountMismatchThrows) {
  const auto ng = normalize_adjacency(Graph::ring(4));
  EXPECT_THROW(graph_conv(Var::constant(Tensor({2, 3, 5})), ng, 1, Var::constant(Tensor({2, 4})),
                          Var::constant(Tensor({2}))),
               DimensionError);
}

TEST(GraphConv, IdentityGraphHasNoCrossNodeLeakage) {
  std::mt19937_64 rng(8);
  const auto ng = normalize_adjacency(Graph::empty(4));
  const Tensor h = random_tensor({2, 4, 5}, rng);
  const Tensor w = random_tensor({2, 6}, rng);
  const Tensor b = random_tensor({2}, rng);
  const Tensor y0 = graph_conv(Var::constant(h), ng, 2, Var::constant(w), Var::constant(b)).value();
  Tensor hp = h;
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t l = 0; l < 5; ++l) hp.at(c, 1, l) += 3.0;
  const Tensor y1 = graph_conv(Var::constant(hp), ng, 2, Var::constant(w), Var::constant(b)).value();
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t i : {0u, 2u, 3u})
      for (std::size_t l = 0; l < 5; ++l) EXPECT_EQ(y1.at(c, i, l), y0.at(c, i, l));
}

TEST(GraphConv, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(9);
  const auto ng = normalize_adjacency(random_graph(3, 0.7, rng));
  auto h = Var::leaf(random_tensor({2, 3, 4}, rng));
  auto w = Var::leaf(random_tensor({3, 6}, rng));
  auto b = Var::leaf(random_tensor({3}, rng, 0.5, 1.0));
  const auto r = grad_check([&] { return probe(graph_conv(h, ng, 2, w, b)); }, {h, w, b}, 1e-6);
  EXPECT_LT(r.max_rel_error, 1e-4);
}

TEST(Coords, CoincidentNodesConnect) {
  const Graph g = build_adjacency_from_coords({{0, 0}, {0, 0}}, 0.1);
  EXPECT_DOUBLE_EQ(g.adjacency.at(0, 1), 1.0);
  EXPECT_DOUBLE_EQ(g.adjacency.at(0, 0), 0.0);
}

TEST(Coords, FarNodesDropBelowThreshold) {
  // Distances 1, 1, 100: s is large relative to 1, tiny relative to 100.
  const Graph g = build_adjacency_from_coords({{0, 0}, {1, 0}, {101, 0}}, 0.1);
  EXPECT_GT(g.adjacency.at(0, 1), 0.0);
  EXPECT_EQ(g.adjacency.at(0, 2), 0.0);
}

TEST(Coords, LineMatchesDirectKernel) {
  std::vector<Point2> pts{{0, 0}, {1, 0}, {2, 0}, {4, 0}};
  const Graph g = build_adjacency_from_coords(pts, 0.0);
  std::vector<double> d;
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = i + 1; j < 4; ++j) d.push_back(std::abs(pts[i].x - pts[j].x));
  double m = 0, s = 0;
  for (double v : d) m += v;
  m /= d.size();
  for (double v : d) s += (v - m) * (v - m);
  s = std::sqrt(s / d.size());
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) {
      const double dist = std::abs(pts[i].x - pts[j].x);
      const double expect = i == j ? 0.0 : std::exp(-dist * dist / (s * s));
      EXPECT_NEAR(g.adjacency.at(i, j), expect, 1e-14);
      EXPECT_EQ(g.adjacency.at(i, j), g.adjacency.at(j, i));
    }
}

TEST(Coords, EmptyInputThrows) {
  EXPECT_THROW(build_adjacency_from_coords({}, 0.1), ContractError);
}

TEST(EdgeList, LoadsUndirectedBinaryAndRoundTrips) {
  const auto dir = scratch_dir("edges");
  {
    std::ofstream f(dir / "e.csv");
    f << "src,dst\n0,1\n2,1\n";
  }
  const Graph g = load_edge_list(dir / "e.csv", 3);
  EXPECT_EQ(g.adjacency, Tensor::matrix(3, 3, {0, 1, 0, 1, 0, 1, 0, 1, 0}));
  {
    std::ofstream f(dir / "r.csv");
    f << edge_list_csv(g);
  }
  EXPECT_EQ(load_edge_list(dir / "r.csv", 3).adjacency, g.adjacency);
}

TEST(EdgeList, RejectsOutOfRangeAndBadHeader) {
  const auto dir = scratch_dir("edges_bad");
  {
    std::ofstream f(dir / "a.csv");
    f << "src,dst\n0,5\n";
    std::ofstream h(dir / "b.csv");
    h << "from,to\n0,1\n";
  }
  EXPECT_THROW(load_edge_list(dir / "a.csv", 3), ParseError);
  EXPECT_THROW(load_edge_list(dir / "b.csv", 3), ParseError);
}

TEST(GraphType, RejectsNegativeOrNonSquare) {
  EXPECT_THROW(Graph::from_adjacency(Tensor::matrix(2, 2, {0, -1, -1, 0})), ContractError);
  EXPECT_ANY_THROW(Graph::from_adjacency(Tensor({2, 3})));
}
