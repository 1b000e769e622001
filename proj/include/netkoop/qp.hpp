#pragma once

#include <Eigen/Dense>
#include <limits>

namespace netkoop {

constexpr double kInf = std::numeric_limits<double>::infinity();

/// min 1/2 x^T P x + q^T x  subject to  lo <= A x <= hi.
/// P symmetric positive semidefinite (P = 0 allowed). Rows with lo == hi are
/// equalities; lo = -inf / hi = +inf drop the corresponding side.
struct QpProblem {
  Eigen::MatrixXd P;
  Eigen::VectorXd q;
  Eigen::MatrixXd A;
  Eigen::VectorXd lo;
  Eigen::VectorXd hi;
};

struct QpOptions {
  double tol = 1e-6;       // infinity-norm bound on every KKT residual
  int max_iter = 200000;
  double rho = 0.1;        // ADMM penalty (equality rows scaled up 1e3)
  double sigma = 1e-6;
  double alpha = 1.6;      // over-relaxation
  int check_interval = 25;
};

struct QpResult {
  Eigen::VectorXd x;
  Eigen::VectorXd y;  // row multipliers: y_i > 0 pushes on hi, < 0 on lo
  int iterations = 0;
  bool converged = false;
  bool primal_infeasible = false;
  Eigen::VectorXd infeasibility_certificate;  // dy with A^T dy ~ 0, support < 0
  bool polished = false;
  // KKT residuals at the returned iterate (infinity norms)
  double stationarity = kInf;
  double primal_feas = kInf;
  double dual_feas = kInf;       // multiplier sign violations
  double complementarity = kInf;
  double kkt_residual() const;   // max of the four
};

/// Operator-splitting (ADMM) solve with an active-set polish pass.
/// Deterministic given identical inputs and options.
QpResult solve_qp(const QpProblem& prob, const QpOptions& opts = {},
                  const Eigen::VectorXd* warm_x = nullptr,
                  const Eigen::VectorXd* warm_y = nullptr);

}  // namespace netkoop
