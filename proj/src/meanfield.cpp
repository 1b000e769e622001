#include "netkoop/meanfield.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

#include "netkoop/util.hpp"

namespace netkoop {

using Eigen::VectorXd;

MeanFieldResult simulate_meanfield(const Graph& g, const EpidemicParams& p,
                                   const VectorXd& u, const VectorXd& x0,
                                   const std::vector<double>& t_grid,
                                   double max_step) {
  p.validate(g.n);
  if (x0.size() != g.n)
    throw std::invalid_argument("meanfield: x0 length mismatch");
  for (int i = 0; i < g.n; ++i)
    if (!(x0[i] >= 0.0 && x0[i] <= 1.0))
      throw std::invalid_argument("meanfield: x0 entries must be in [0,1]");
  if (u.size() != g.n)
    throw std::invalid_argument("meanfield: input length mismatch");
  for (std::size_t i = 1; i < t_grid.size(); ++i)
    if (!(t_grid[i] > t_grid[i - 1]))
      throw std::invalid_argument("meanfield: t_grid must be increasing");
  if (!t_grid.empty() && t_grid.front() < 0.0)
    throw std::invalid_argument("meanfield: t_grid must be nonnegative");
  if (!(max_step > 0.0))
    throw std::invalid_argument("meanfield: max_step must be > 0");

  auto adj = g.adjacency_lists();
  VectorXd beta = p.beta0 - u;
  auto deriv = [&](const VectorXd& x, VectorXd& dx) {
    for (int i = 0; i < g.n; ++i) {
      double pressure = 0.0;
      for (int j : adj[i]) pressure += x[j];
      dx[i] = beta[i] * (1.0 - x[i]) * pressure - p.delta[i] * x[i];
    }
  };

  MeanFieldResult out;
  out.traj.resize(g.n, static_cast<Eigen::Index>(t_grid.size()));
  VectorXd x = x0;
  VectorXd k1(g.n), k2(g.n), k3(g.n), k4(g.n), tmp(g.n);
  double t = 0.0;
  for (std::size_t gi = 0; gi < t_grid.size(); ++gi) {
    double target = t_grid[gi];
    while (t < target - 1e-15) {
      int substeps = static_cast<int>(std::ceil((target - t) / max_step - 1e-12));
      double h = (target - t) / substeps;
      deriv(x, k1);
      tmp = x + 0.5 * h * k1;
      deriv(tmp, k2);
      tmp = x + 0.5 * h * k2;
      deriv(tmp, k3);
      tmp = x + h * k3;
      deriv(tmp, k4);
      x += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
      t += h;
      double clamp = 0.0;
      for (int i = 0; i < g.n; ++i) {
        if (x[i] < 0.0) {
          clamp = std::max(clamp, -x[i]);
          x[i] = 0.0;
        } else if (x[i] > 1.0) {
          clamp = std::max(clamp, x[i] - 1.0);
          x[i] = 1.0;
        }
      }
      out.max_clamp = std::max(out.max_clamp, clamp);
      if (clamp > 1e-3)
        throw std::runtime_error(
            "meanfield: integration unstable, clamp magnitude " +
            std::to_string(clamp));
    }
    out.traj.col(static_cast<Eigen::Index>(gi)) = x;
  }
  return out;
}

ThresholdResult epidemic_threshold(const Graph& g, const EpidemicParams& p) {
  p.validate(g.n);
  double lam = spectral_radius(g);
  ThresholdResult out;
  double beta_min = p.beta0.minCoeff(), beta_max = p.beta0.maxCoeff();
  double delta_min = p.delta.minCoeff(), delta_max = p.delta.maxCoeff();
  if (beta_min == beta_max && delta_min == delta_max) {
    if (delta_min <= 0.0)
      throw std::invalid_argument("threshold: delta must be > 0");
    out.value = beta_min * lam / delta_min;
  } else {
    if (delta_min <= 0.0)
      throw std::invalid_argument("threshold: delta must be > 0");
    out.value = beta_max * lam / delta_min;
    out.heterogeneous_bound = true;
  }
  return out;
}

void write_trajectory_csv(const std::vector<double>& t_grid,
                          const Eigen::MatrixXd& traj,
                          const std::filesystem::path& path) {
  if (static_cast<Eigen::Index>(t_grid.size()) != traj.cols())
    throw std::invalid_argument("trajectory csv: grid/trajectory mismatch");
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
  out << "t";
  for (Eigen::Index i = 0; i < traj.rows(); ++i) out << ",x_" << i;
  out << '\n';
  for (std::size_t k = 0; k < t_grid.size(); ++k) {
    out << format_double(t_grid[k]);
    for (Eigen::Index i = 0; i < traj.rows(); ++i)
      out << ',' << format_double(traj(i, static_cast<Eigen::Index>(k)));
    out << '\n';
  }
}

}  // namespace netkoop
