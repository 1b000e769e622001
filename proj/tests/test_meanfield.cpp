#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "netkoop/gemf.hpp"
#include "netkoop/meanfield.hpp"
#include "netkoop/rng.hpp"

using namespace netkoop;
using Eigen::VectorXd;

TEST_CASE("disease-free state stays at zero") {
  Graph g = generate_graph(GraphModel::ER, 20, 4.0, {}, 1);
  EpidemicParams p = EpidemicParams::uniform(20, 1.0, 2.0);
  MeanFieldResult res = simulate_meanfield(g, p, VectorXd::Zero(20),
                                           VectorXd::Zero(20), {1.0, 5.0});
  CHECK(res.traj.cwiseAbs().maxCoeff() == 0.0);
  CHECK(res.max_clamp == 0.0);
}

TEST_CASE("isolated node decays exponentially") {
  Graph g;
  g.n = 1;
  EpidemicParams p = EpidemicParams::uniform(1, 1.0, 2.0);
  MeanFieldResult res = simulate_meanfield(g, p, VectorXd::Zero(1),
                                           VectorXd::Ones(1), {0.5, 1.0});
  CHECK(std::abs(res.traj(0, 0) - std::exp(-1.0)) <= 1e-6);
  CHECK(std::abs(res.traj(0, 1) - std::exp(-2.0)) <= 1e-6);
}

TEST_CASE("clamping stays tiny on regular trajectories") {
  Graph g = generate_graph(GraphModel::ER, 50, 8.0, {}, 2);
  EpidemicParams p = EpidemicParams::uniform(50, 1.0, 2.0);
  Rng rng(3);
  VectorXd x0(50);
  for (int i = 0; i < 50; ++i) x0[i] = rng.u01();
  MeanFieldResult res =
      simulate_meanfield(g, p, VectorXd::Constant(50, 0.5), x0, {1, 5, 10});
  CHECK(res.max_clamp <= 1e-6);
  CHECK((res.traj.array() >= 0.0).all());
  CHECK((res.traj.array() <= 1.0).all());
}

TEST_CASE("instability raises an integration error") {
  Graph g = generate_graph(GraphModel::ER, 10, 5.0, {}, 4);
  EpidemicParams p = EpidemicParams::uniform(10, 2000.0, 1.0);
  VectorXd x0 = VectorXd::Constant(10, 0.5);
  CHECK_THROWS_AS(
      simulate_meanfield(g, p, VectorXd::Zero(10), x0, {1.0}, 0.01),
      std::runtime_error);
}

TEST_CASE("subcritical epidemic decays to near zero") {
  Graph g = generate_graph(GraphModel::ER, 40, 6.0, {}, 5);
  EpidemicParams p = EpidemicParams::uniform(40, 1.0, 2.0);
  // drive R below one: u such that beta lambda / delta < 1
  double lam = spectral_radius(g);
  double beta = 0.8 * p.delta[0] / lam;
  VectorXd u = VectorXd::Constant(40, 1.0 - beta);
  ThresholdResult R = epidemic_threshold(
      g, EpidemicParams::uniform(40, beta, 2.0));
  CHECK(R.value < 1.0);
  MeanFieldResult res =
      simulate_meanfield(g, p, u, VectorXd::Constant(40, 0.9), {25.0, 50.0});
  CHECK(res.traj.col(1).norm() <= 1e-3);
  CHECK(res.traj.col(1).norm() <= res.traj.col(0).norm());
}

TEST_CASE("trajectories are monotone in the infection rate") {
  Graph g = generate_graph(GraphModel::ER, 25, 5.0, {}, 6);
  EpidemicParams p = EpidemicParams::uniform(25, 1.0, 2.0);
  Rng rng(7);
  for (int trial = 0; trial < 5; ++trial) {
    VectorXd x0(25);
    for (int i = 0; i < 25; ++i) x0[i] = rng.u01();
    double u_hi = 0.3 + 0.4 * rng.u01();
    double u_lo = u_hi - 0.25;
    MeanFieldResult weak = simulate_meanfield(
        g, p, VectorXd::Constant(25, u_hi), x0, {0.5, 1, 2, 4});
    MeanFieldResult strong = simulate_meanfield(
        g, p, VectorXd::Constant(25, u_lo), x0, {0.5, 1, 2, 4});
    // larger beta (smaller u) dominates pointwise
    CHECK(((strong.traj - weak.traj).array() >= -1e-9).all());
  }
}

TEST_CASE("meanfield tracks the stochastic ensemble at endemic load") {
  Graph g = generate_graph(GraphModel::ER, 60, 8.0, {}, 8);
  EpidemicParams p = EpidemicParams::uniform(60, 1.0, 2.0);
  Rng rng(9);
  BinaryState x0 = random_fraction_state(60, 0.2, rng);
  VectorXd u = VectorXd::Constant(60, 0.4);  // beta = 0.6, supercritical
  std::vector<double> grid{2, 4, 6, 8};
  VectorXd gemf = ensemble_fraction_curve(g, p, x0, u, grid, 300, 10);
  MeanFieldResult mf = simulate_meanfield(g, p, u, state_to_vector(x0), grid);
  for (int k = 0; k < 4; ++k) {
    double frac_mf = mf.traj.col(k).mean();
    CHECK(std::abs(frac_mf - gemf[k]) <= 0.08);  // known upward mean-field bias
  }
}

TEST_CASE("epidemic threshold values") {
  Graph k5;
  k5.n = 5;
  for (int i = 0; i < 5; ++i)
    for (int j = i + 1; j < 5; ++j) k5.edges.emplace_back(i, j);
  ThresholdResult r = epidemic_threshold(k5, EpidemicParams::uniform(5, 1.0, 2.0));
  CHECK(r.value == doctest::Approx(2.0));
  CHECK(!r.heterogeneous_bound);

  ThresholdResult zero =
      epidemic_threshold(k5, EpidemicParams::uniform(5, 0.0, 2.0));
  CHECK(zero.value == 0.0);

  // ER(100, 10): lambda typically in [10, 12] so R in [2.5, 3.0] at beta=0.5
  Graph er = generate_graph(GraphModel::ER, 100, 10.0, {}, 42);
  double lam = spectral_radius(er);
  ThresholdResult er_r =
      epidemic_threshold(er, EpidemicParams::uniform(100, 0.5, 2.0));
  CHECK(er_r.value == doctest::Approx(0.5 * lam / 2.0));
  CHECK(er_r.value > 2.0);
  CHECK(er_r.value < 3.5);

  EpidemicParams het = EpidemicParams::uniform(5, 1.0, 2.0);
  het.beta0[0] = 2.0;
  ThresholdResult bound = epidemic_threshold(k5, het);
  CHECK(bound.heterogeneous_bound);
  CHECK(bound.value == doctest::Approx(2.0 * 4.0 / 2.0));
}

TEST_CASE("trajectory csv format") {
  namespace fs = std::filesystem;
  Graph g = generate_graph(GraphModel::ER, 5, 2.0, {}, 10);
  EpidemicParams p = EpidemicParams::uniform(5, 1.0, 2.0);
  MeanFieldResult res = simulate_meanfield(g, p, VectorXd::Zero(5),
                                           VectorXd::Constant(5, 0.5), {0.5, 1});
  fs::path tmp = fs::temp_directory_path() / "netkoop_mf_traj.csv";
  write_trajectory_csv({0.5, 1}, res.traj, tmp);
  std::ifstream in(tmp);
  std::string header;
  std::getline(in, header);
  CHECK(header == "t,x_0,x_1,x_2,x_3,x_4");
  int rows = 0;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) ++rows;
  CHECK(rows == 2);
  fs::remove(tmp);
}
