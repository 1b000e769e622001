#pragma once

#include <Eigen/Dense>
#include <filesystem>
#include <vector>

#include "netkoop/gemf.hpp"
#include "netkoop/graph.hpp"

namespace netkoop {

struct MeanFieldResult {
  Eigen::MatrixXd traj;    // n x len(t_grid), infection probabilities
  double max_clamp = 0.0;  // largest out-of-[0,1] excursion removed per step
};

/// Individual-based SIS mean field on the known graph:
///   dx_i/dt = (beta0_i - u_i) (1 - x_i) sum_j a_ij x_j - delta_i x_i.
/// Classic fixed-step RK4 with step <= max_step; entries clamped to [0,1]
/// after each step. Throws when any single-step clamp exceeds 1e-3.
MeanFieldResult simulate_meanfield(const Graph& g, const EpidemicParams& p,
                                   const Eigen::VectorXd& u,
                                   const Eigen::VectorXd& x0,
                                   const std::vector<double>& t_grid,
                                   double max_step = 0.01);

struct ThresholdResult {
  double value = 0.0;
  bool heterogeneous_bound = false;  // true when rates are not homogeneous
};

/// Reproduction number R = beta * lambda_1(A) / delta for homogeneous rates;
/// for heterogeneous rates returns the max(beta)/min(delta) bound, flagged.
ThresholdResult epidemic_threshold(const Graph& g, const EpidemicParams& p);

/// Rows `t, x_0, ..., x_{n-1}` at the grid points.
void write_trajectory_csv(const std::vector<double>& t_grid,
                          const Eigen::MatrixXd& traj,
                          const std::filesystem::path& path);

}  // namespace netkoop
