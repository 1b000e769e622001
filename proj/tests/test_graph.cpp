#include <doctest.h>

#include <Eigen/Dense>
#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>

#include "netkoop/graph.hpp"
#include "netkoop/rng.hpp"
#include "netkoop/util.hpp"

using namespace netkoop;
namespace fs = std::filesystem;

TEST_CASE("er graphs hit the target degree") {
  int in_band = 0;
  double mean_edges = 0.0;
  const int trials = 200;
  for (int s = 0; s < trials; ++s) {
    Graph g = generate_graph(GraphModel::ER, 100, 10.0, {}, 1000 + s);
    double deg = g.average_degree();
    if (deg >= 8.0 && deg <= 12.0) ++in_band;
    mean_edges += static_cast<double>(g.edges.size());
  }
  mean_edges /= trials;
  CHECK(in_band >= trials - 1);  // [8,12] with probability >= 0.99
  // expected edge count n*d/2 = 500, empirical mean within 5%
  CHECK(mean_edges > 475.0);
  CHECK(mean_edges < 525.0);
}

TEST_CASE("er on two nodes never self-loops") {
  for (int s = 0; s < 50; ++s) {
    Graph g = generate_graph(GraphModel::ER, 2, 1.0, {}, s);
    CHECK(g.edges.size() <= 1);
    for (auto [i, j] : g.edges) {
      CHECK(i == 0);
      CHECK(j == 1);
    }
  }
}

TEST_CASE("ws with zero rewiring is the ring lattice") {
  Graph g = generate_graph(GraphModel::WS, 10, 4.0, {0.0}, 7);
  auto deg = g.degrees();
  for (int d : deg) CHECK(d == 4);
  CHECK(g.edges.size() == 20);
}

TEST_CASE("ws rewiring preserves edge count") {
  Graph g = generate_graph(GraphModel::WS, 100, 10.0, {0.3}, 7);
  CHECK(g.edges.size() == 500);
  for (auto [i, j] : g.edges) CHECK(i < j);
}

TEST_CASE("geo radius calibration lands near the target degree") {
  double mean_deg = 0.0;
  const int trials = 60;
  for (int s = 0; s < trials; ++s) {
    Graph g = generate_graph(GraphModel::GEO, 100, 10.0, {}, 300 + s);
    mean_deg += g.average_degree();
  }
  mean_deg /= trials;
  // boundary effects bias the realized degree slightly below target
  CHECK(mean_deg > 7.5);
  CHECK(mean_deg < 10.5);
}

TEST_CASE("generation is deterministic in the seed") {
  for (auto model : {GraphModel::ER, GraphModel::WS, GraphModel::GEO}) {
    Graph a = generate_graph(model, 60, 8.0, {0.2}, 42);
    Graph b = generate_graph(model, 60, 8.0, {0.2}, 42);
    Graph c = generate_graph(model, 60, 8.0, {0.2}, 43);
    CHECK(a == b);
    CHECK(a.edges != c.edges);
  }
}

TEST_CASE("generation rejects bad parameters") {
  CHECK_THROWS_AS(generate_graph(GraphModel::ER, 1, 0.5, {}, 0),
                  std::invalid_argument);
  CHECK_THROWS_AS(generate_graph(GraphModel::ER, 10, 0.0, {}, 0),
                  std::invalid_argument);
  CHECK_THROWS_AS(generate_graph(GraphModel::ER, 10, 9.5, {}, 0),
                  std::invalid_argument);  // d > n-1
  CHECK_NOTHROW(generate_graph(GraphModel::ER, 2, 1.0, {}, 0));  // d == n-1
  CHECK_THROWS_AS(generate_graph(GraphModel::WS, 10, 4.0, {1.5}, 0),
                  std::invalid_argument);
}

TEST_CASE("spectral radius matches known spectra") {
  Graph k5;
  k5.n = 5;
  for (int i = 0; i < 5; ++i)
    for (int j = i + 1; j < 5; ++j) k5.edges.emplace_back(i, j);
  CHECK(spectral_radius(k5) == doctest::Approx(4.0).epsilon(1e-8));

  Graph p3;
  p3.n = 3;
  p3.edges = {{0, 1}, {1, 2}};
  CHECK(spectral_radius(p3) == doctest::Approx(std::sqrt(2.0)).epsilon(1e-8));

  Graph empty;
  empty.n = 4;
  CHECK(spectral_radius(empty) == 0.0);
}

TEST_CASE("spectral radius sits between average and max degree") {
  for (int s = 0; s < 10; ++s) {
    Graph g = generate_graph(GraphModel::ER, 80, 8.0, {}, 900 + s);
    double lam = spectral_radius(g);
    CHECK(lam >= g.average_degree() - 1e-7);
    CHECK(lam <= g.max_degree() + 1e-7);
  }
}

TEST_CASE("katz centrality on the empty graph is uniform") {
  Graph g;
  g.n = 6;
  CentralityVector c = katz_centrality(g, 0.4, 2.5);
  for (int i = 0; i < 6; ++i) CHECK(c.values[i] == doctest::Approx(2.5));
}

TEST_CASE("katz centrality: star center beats the leaves") {
  Graph star;
  star.n = 4;
  star.edges = {{0, 1}, {0, 2}, {0, 3}};
  CentralityVector c = katz_centrality(star, 0.2, 1.0);
  // oracle: direct solve of (I - alpha A^T) x = 1
  Eigen::MatrixXd A = star.adjacency_matrix();
  Eigen::VectorXd oracle =
      (Eigen::MatrixXd::Identity(4, 4) - 0.2 * A.transpose())
          .partialPivLu()
          .solve(Eigen::VectorXd::Ones(4));
  for (int i = 0; i < 4; ++i)
    CHECK(c.values[i] == doctest::Approx(oracle[i]).epsilon(1e-9));
  for (int leaf = 1; leaf < 4; ++leaf)
    CHECK(c.values[0] > c.values[leaf]);
}

TEST_CASE("katz centrality: P3 middle node dominates (neumann oracle)") {
  Graph p3;
  p3.n = 3;
  p3.edges = {{0, 1}, {1, 2}};
  double alpha = 0.3, beta_k = 1.0;
  CentralityVector c = katz_centrality(p3, alpha, beta_k);
  // oracle: truncated Neumann series sum_k alpha^k (A^T)^k beta 1
  Eigen::MatrixXd At = p3.adjacency_matrix().transpose();
  Eigen::VectorXd oracle = Eigen::VectorXd::Zero(3);
  Eigen::VectorXd term = Eigen::VectorXd::Ones(3) * beta_k;
  for (int k = 0; k < 200; ++k) {
    oracle += term;
    term = alpha * At * term;
  }
  for (int i = 0; i < 3; ++i)
    CHECK(c.values[i] == doctest::Approx(oracle[i]).epsilon(1e-9));
  CHECK(c.values[1] > c.values[0]);
  CHECK(c.values[1] > c.values[2]);
}

TEST_CASE("katz residual invariant and divergence guard") {
  Graph g = generate_graph(GraphModel::ER, 50, 6.0, {}, 5);
  double lam = spectral_radius(g);
  CentralityVector c = katz_centrality(g, 0.9 / lam, 1.0);
  Eigen::MatrixXd A = g.adjacency_matrix();
  Eigen::VectorXd resid =
      c.values - 0.9 / lam * A.transpose() * c.values -
      Eigen::VectorXd::Ones(g.n);
  CHECK(resid.cwiseAbs().maxCoeff() <= 1e-8);
  CHECK_THROWS_AS(katz_centrality(g, 1.1 / lam, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(katz_centrality(g, 0.5 / lam, 0.0), std::invalid_argument);
}

TEST_CASE("katz centrality is equivariant under node relabeling") {
  Graph g = generate_graph(GraphModel::ER, 30, 5.0, {}, 11);
  double alpha = 0.5 / spectral_radius(g);
  CentralityVector base = katz_centrality(g, alpha, 1.0);

  // relabel: i -> (i*7+3) mod 30 (a permutation since gcd(7,30)=1)
  std::vector<int> perm(30);
  for (int i = 0; i < 30; ++i) perm[i] = (i * 7 + 3) % 30;
  Graph h;
  h.n = 30;
  for (auto [i, j] : g.edges) {
    int a = perm[i], b = perm[j];
    h.edges.emplace_back(std::min(a, b), std::max(a, b));
  }
  std::sort(h.edges.begin(), h.edges.end());
  CentralityVector mapped = katz_centrality(h, alpha, 1.0);
  for (int i = 0; i < 30; ++i)
    CHECK(mapped.values[perm[i]] ==
          doctest::Approx(base.values[i]).epsilon(1e-8));
}

TEST_CASE("graph json round trip") {
  Graph g = generate_graph(GraphModel::WS, 40, 6.0, {0.25}, 77);
  fs::path tmp = fs::temp_directory_path() / "netkoop_graph_test.json";
  save_graph(g, tmp);
  Graph back = load_graph(tmp);
  CHECK(back == g);
  CHECK(back.model == g.model);
  CHECK(back.seed == g.seed);
  fs::remove(tmp);
}

TEST_CASE("graph parse errors name the offense") {
  fs::path tmp = fs::temp_directory_path() / "netkoop_graph_bad.json";
  {
    std::ofstream out(tmp);
    out << R"({"n": 4, "edges": [[3,3]]})";
  }
  CHECK_THROWS_WITH_AS(load_graph(tmp), doctest::Contains("self-loop"),
                       std::runtime_error);
  {
    std::ofstream out(tmp);
    out << R"({"n": 4, "edges": [[0,1],[1,0]]})";
  }
  CHECK_THROWS_WITH_AS(load_graph(tmp), doctest::Contains("duplicate edge"),
                       std::runtime_error);
  {
    std::ofstream out(tmp);
    out << R"({"n": 4, "edges": [[0,9]]})";
  }
  CHECK_THROWS_WITH_AS(load_graph(tmp), doctest::Contains("out of range"),
                       std::runtime_error);
  fs::remove(tmp);
}
