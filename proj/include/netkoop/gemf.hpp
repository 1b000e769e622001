#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <vector>

#include "netkoop/graph.hpp"
#include "netkoop/lifting.hpp"
#include "netkoop/rng.hpp"

namespace netkoop {

/// Per-node passive infection rates beta0 and recovery rates delta.
/// Effective infection rate of node i under input u is beta0[i] - u[i].
struct EpidemicParams {
  Eigen::VectorXd beta0;
  Eigen::VectorXd delta;

  static EpidemicParams uniform(int n, double beta0_value, double delta_value);
  void validate(int n) const;
};

/// Binary network state: 0 = susceptible, 1 = infected.
using BinaryState = std::vector<std::uint8_t>;

double infected_fraction(const BinaryState& x);
Eigen::VectorXd state_to_vector(const BinaryState& x);

/// rho ~ U(0,1), then each node infected independently with probability rho.
BinaryState random_density_state(int n, Rng& rng);
/// Exactly round(fraction * n) infected nodes, chosen uniformly.
BinaryState random_fraction_state(int n, double fraction, Rng& rng);

struct TrajectoryResult {
  BinaryState state;
  std::int64_t new_infections = 0;  // S -> I transition count
  std::int64_t events = 0;
};

/// Exact event-driven (Gillespie) simulation of the controlled SIS Markov
/// process: infected i recovers at rate delta[i]; susceptible i is infected
/// at rate (beta0[i] - u[i]) * (# infected neighbors). Deterministic given
/// seed.
TrajectoryResult simulate_trajectory(const Graph& g, const EpidemicParams& p,
                                     const BinaryState& x0,
                                     const Eigen::VectorXd& u, double duration,
                                     std::uint64_t seed);

/// Mean of psi(y) over n_sim trajectories from (x0, u); trajectory j uses
/// the stream derived from (seed, j) and accumulation runs in j order, so
/// the result is bit-reproducible.
Eigen::VectorXd expected_lift(const Graph& g, const EpidemicParams& p,
                              const BinaryState& x0, const Eigen::VectorXd& u,
                              double duration, int n_sim,
                              const Dictionary& dict, std::uint64_t seed);

struct SnapshotDataset {
  Eigen::MatrixXd X;      // n x m initial states (binary)
  Eigen::MatrixXd U;      // l x m inputs
  Eigen::MatrixXd EPsiY;  // N x m ensemble-averaged lifted successors
  std::string dict_id;
  double horizon = 1.0;  // T
  int n_sim = 1;
  std::uint64_t seed = 0;

  Eigen::Index m() const { return X.cols(); }
};

/// Snapshot triples with the raw successor ensemble retained, so that
/// several dictionaries can be evaluated without re-simulating.
struct RawSnapshots {
  Eigen::MatrixXd X;  // n x m
  Eigen::MatrixXd U;  // l x m
  Eigen::MatrixXd Y;  // n x (m * n_sim); successor j of snapshot i in column i*n_sim+j
  int n_sim = 1;
  double horizon = 1.0;
  std::uint64_t seed = 0;
};

RawSnapshots collect_raw(const Graph& g, const EpidemicParams& p, int n_traj,
                         int n_sim, double duration,
                         const Eigen::VectorXd& u_low,
                         const Eigen::VectorXd& u_high, std::uint64_t seed,
                         int threads = 1);

SnapshotDataset dataset_from_raw(const RawSnapshots& raw,
                                 const Dictionary& dict);

/// Algorithm: for each snapshot draw a random-density initial state and an
/// input uniform in [u_low, u_high], then average the lifted successor over
/// n_sim runs. Equals dataset_from_raw(collect_raw(...), dict) column by
/// column, and each column equals the corresponding expected_lift call.
SnapshotDataset collect_dataset(const Graph& g, const EpidemicParams& p,
                                const Dictionary& dict, int n_traj, int n_sim,
                                double duration, const Eigen::VectorXd& u_low,
                                const Eigen::VectorXd& u_high,
                                std::uint64_t seed, int threads = 1);

/// Mean infected fraction over n_runs trajectories, sampled at t_grid.
Eigen::VectorXd ensemble_fraction_curve(const Graph& g,
                                        const EpidemicParams& p,
                                        const BinaryState& x0,
                                        const Eigen::VectorXd& u,
                                        const std::vector<double>& t_grid,
                                        int n_runs, std::uint64_t seed,
                                        int threads = 1);

/// Mean per-node infection probabilities at time `duration` over n_runs.
Eigen::VectorXd ensemble_marginals(const Graph& g, const EpidemicParams& p,
                                   const BinaryState& x0,
                                   const Eigen::VectorXd& u, double duration,
                                   int n_runs, std::uint64_t seed,
                                   int threads = 1);

/// Stateful plant for closed-loop control: holds the current network state
/// and one RNG stream; advance() applies u for `duration` and accumulates
/// S -> I transition counts.
class GemfPlant {
 public:
  GemfPlant(const Graph& g, EpidemicParams p, BinaryState x0,
            std::uint64_t seed);

  const BinaryState& state() const { return state_; }
  double time() const { return time_; }
  std::int64_t cumulative_infections() const { return infections_; }
  void advance(const Eigen::VectorXd& u, double duration);

 private:
  std::vector<std::vector<int>> adj_;
  EpidemicParams params_;
  BinaryState state_;
  Rng rng_;
  double time_ = 0.0;
  std::int64_t infections_ = 0;
};

void save_dataset(const SnapshotDataset& ds, const std::filesystem::path& dir);
SnapshotDataset load_dataset(const std::filesystem::path& dir);

}  // namespace netkoop
