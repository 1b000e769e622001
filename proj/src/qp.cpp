#include "netkoop/qp.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace netkoop {

using Eigen::MatrixXd;
using Eigen::VectorXd;

double QpResult::kkt_residual() const {
  return std::max(std::max(stationarity, primal_feas),
                  std::max(dual_feas, complementarity));
}

namespace {

struct Residuals {
  double stat, prim, dual, comp;
  double max() const {
    return std::max(std::max(stat, prim), std::max(dual, comp));
  }
};

Residuals kkt_residuals(const QpProblem& p, const VectorXd& x,
                        const VectorXd& y) {
  Residuals r{0.0, 0.0, 0.0, 0.0};
  VectorXd stat = p.P * x + p.q + p.A.transpose() * y;
  r.stat = stat.size() ? stat.cwiseAbs().maxCoeff() : 0.0;
  VectorXd ax = p.A * x;
  for (Eigen::Index i = 0; i < ax.size(); ++i) {
    double below = std::isfinite(p.lo[i]) ? p.lo[i] - ax[i] : -kInf;
    double above = std::isfinite(p.hi[i]) ? ax[i] - p.hi[i] : -kInf;
    r.prim = std::max(r.prim, std::max(below, above));
    bool equality = std::isfinite(p.lo[i]) && std::isfinite(p.hi[i]) &&
                    p.lo[i] == p.hi[i];
    if (!equality) {
      if (y[i] > 0.0) {
        if (!std::isfinite(p.hi[i]))
          r.dual = std::max(r.dual, y[i]);
        else
          r.comp = std::max(r.comp, y[i] * std::abs(p.hi[i] - ax[i]));
      } else if (y[i] < 0.0) {
        if (!std::isfinite(p.lo[i]))
          r.dual = std::max(r.dual, -y[i]);
        else
          r.comp = std::max(r.comp, -y[i] * std::abs(ax[i] - p.lo[i]));
      }
    }
  }
  r.prim = std::max(r.prim, 0.0);
  return r;
}

// Equality-constrained KKT solve on a guessed active set with tiny
// regularization and iterative refinement. Two guessing modes: multiplier
// signs (mode 0) or proximity of z to its bounds (mode 1, threshold eps).
bool polish_candidate(const QpProblem& p, const VectorXd& y_hint,
                      const VectorXd& z_hint, double tol, int mode, double eps,
                      VectorXd& x_out, VectorXd& y_out) {
  const Eigen::Index nx = p.q.size(), mr = p.lo.size();
  std::vector<Eigen::Index> act;
  std::vector<double> act_bound;
  std::vector<int> act_side;  // -1 lower, +1 upper
  for (Eigen::Index i = 0; i < mr; ++i) {
    bool equality = std::isfinite(p.lo[i]) && std::isfinite(p.hi[i]) &&
                    p.lo[i] == p.hi[i];
    double gap_hi = std::isfinite(p.hi[i]) ? p.hi[i] - z_hint[i] : kInf;
    double gap_lo = std::isfinite(p.lo[i]) ? z_hint[i] - p.lo[i] : kInf;
    if (equality) {
      act.push_back(i);
      act_bound.push_back(p.lo[i]);
      act_side.push_back(0);
      continue;
    }
    bool upper = false, lower = false;
    if (mode == 0) {
      upper = y_hint[i] > 0.0 && std::isfinite(p.hi[i]);
      lower = y_hint[i] < 0.0 && std::isfinite(p.lo[i]);
      if (!upper && !lower) {
        // on a bound with a vanished multiplier: nearer side is active
        if (gap_hi <= 1e-10)
          upper = true;
        else if (gap_lo <= 1e-10)
          lower = true;
      }
    } else {
      double scale_hi = 1.0 + std::abs(std::isfinite(p.hi[i]) ? p.hi[i] : 0.0);
      double scale_lo = 1.0 + std::abs(std::isfinite(p.lo[i]) ? p.lo[i] : 0.0);
      if (gap_hi <= eps * scale_hi && gap_hi <= gap_lo)
        upper = true;
      else if (gap_lo <= eps * scale_lo)
        lower = true;
    }
    if (upper) {
      act.push_back(i);
      act_bound.push_back(p.hi[i]);
      act_side.push_back(+1);
    } else if (lower) {
      act.push_back(i);
      act_bound.push_back(p.lo[i]);
      act_side.push_back(-1);
    }
  }
  const Eigen::Index na = static_cast<Eigen::Index>(act.size());
  MatrixXd Aa(na, nx);
  VectorXd ba(na);
  for (Eigen::Index k = 0; k < na; ++k) {
    Aa.row(k) = p.A.row(act[k]);
    ba[k] = act_bound[k];
  }

  const double delta = 1e-9;
  MatrixXd K(nx + na, nx + na);
  K.setZero();
  K.topLeftCorner(nx, nx) = p.P;
  K.topLeftCorner(nx, nx).diagonal().array() += delta;
  K.topRightCorner(nx, na) = Aa.transpose();
  K.bottomLeftCorner(na, nx) = Aa;
  K.bottomRightCorner(na, na).diagonal().array() -= delta;
  Eigen::PartialPivLU<MatrixXd> lu(K);

  VectorXd rhs(nx + na);
  rhs.head(nx) = -p.q;
  rhs.tail(na) = ba;
  VectorXd sol = lu.solve(rhs);
  // refine against the unregularized KKT system
  for (int it = 0; it < 3; ++it) {
    VectorXd resid(nx + na);
    resid.head(nx) =
        -p.q - p.P * sol.head(nx) - Aa.transpose() * sol.tail(na);
    resid.tail(na) = ba - Aa * sol.head(nx);
    sol += lu.solve(resid);
  }

  VectorXd x = sol.head(nx);
  VectorXd y = VectorXd::Zero(mr);
  for (Eigen::Index k = 0; k < na; ++k) {
    double v = sol[nx + k];
    // clip wrong-signed multipliers; the residual check below arbitrates
    if (act_side[k] > 0 && v < 0.0) v = 0.0;
    if (act_side[k] < 0 && v > 0.0) v = 0.0;
    y[act[k]] = v;
  }
  Residuals r = kkt_residuals(p, x, y);
  if (r.max() <= tol) {
    x_out = x;
    y_out = y;
    return true;
  }
  return false;
}

bool try_polish(const QpProblem& p, const VectorXd& y, const VectorXd& z,
                double tol, VectorXd& x_out, VectorXd& y_out) {
  if (polish_candidate(p, y, z, tol, 0, 0.0, x_out, y_out)) return true;
  for (double eps : {1e-8, 1e-6, 1e-4})
    if (polish_candidate(p, y, z, tol, 1, eps, x_out, y_out)) return true;
  return false;
}

}  // namespace

QpResult solve_qp(const QpProblem& prob, const QpOptions& opts,
                  const VectorXd* warm_x, const VectorXd* warm_y) {
  const Eigen::Index nx = prob.q.size(), mr = prob.lo.size();
  if (prob.P.rows() != nx || prob.P.cols() != nx)
    throw std::invalid_argument("qp: P shape mismatch");
  if (prob.A.rows() != mr || (mr > 0 && prob.A.cols() != nx))
    throw std::invalid_argument("qp: A shape mismatch");
  if (prob.hi.size() != mr)
    throw std::invalid_argument("qp: bound length mismatch");
  for (Eigen::Index i = 0; i < mr; ++i)
    if (prob.lo[i] > prob.hi[i])
      throw std::invalid_argument("qp: lo > hi on row " + std::to_string(i));

  QpResult res;
  if (nx == 0) {
    res.converged = true;
    res.stationarity = res.primal_feas = res.dual_feas = res.complementarity = 0.0;
    return res;
  }

  VectorXd rho(mr);
  for (Eigen::Index i = 0; i < mr; ++i) {
    bool equality = std::isfinite(prob.lo[i]) && std::isfinite(prob.hi[i]) &&
                    prob.lo[i] == prob.hi[i];
    rho[i] = equality ? opts.rho * 1e3 : opts.rho;
  }

  VectorXd x = warm_x && warm_x->size() == nx ? *warm_x : VectorXd::Zero(nx);
  VectorXd y = warm_y && warm_y->size() == mr ? *warm_y : VectorXd::Zero(mr);
  VectorXd z = (prob.A * x).cwiseMax(prob.lo).cwiseMin(prob.hi);

  auto factorize = [&](const VectorXd& rho_vec) {
    MatrixXd M = prob.P;
    M.diagonal().array() += opts.sigma;
    M.noalias() += prob.A.transpose() * rho_vec.asDiagonal() * prob.A;
    return Eigen::LDLT<MatrixXd>(M);
  };
  Eigen::LDLT<MatrixXd> kkt = factorize(rho);

  VectorXd y_prev_check = y;
  int rho_updates = 0;
  int iter = 0;
  int last_polish_attempt = -1000000;
  int iter_tol_reached = -1;

  for (iter = 1; iter <= opts.max_iter; ++iter) {
    VectorXd rhs = opts.sigma * x - prob.q +
                   prob.A.transpose() * (rho.cwiseProduct(z) - y);
    VectorXd x_tilde = kkt.solve(rhs);
    VectorXd z_tilde = prob.A * x_tilde;
    VectorXd x_next = opts.alpha * x_tilde + (1.0 - opts.alpha) * x;
    VectorXd z_relax = opts.alpha * z_tilde + (1.0 - opts.alpha) * z;
    VectorXd z_next =
        (z_relax + y.cwiseQuotient(rho)).cwiseMax(prob.lo).cwiseMin(prob.hi);
    VectorXd y_next = y + rho.cwiseProduct(z_relax - z_next);
    x = x_next;
    z = z_next;
    y = y_next;

    if (iter % opts.check_interval != 0) continue;

    Residuals r = kkt_residuals(prob, x, y);
    if (r.max() <= opts.tol) {
      // a polish from the settled active set lands near machine precision;
      // without it, keep grinding toward a stricter target so the iterate
      // approximates the optimizer itself, not just the KKT residuals
      if (iter_tol_reached < 0) iter_tol_reached = iter;
      if (iter - last_polish_attempt >= 250 || last_polish_attempt < 0) {
        last_polish_attempt = iter;
        VectorXd px, py;
        if (try_polish(prob, y, z, opts.tol, px, py)) {
          x = px;
          y = py;
          res.converged = true;
          res.polished = true;
          break;
        }
      }
      if (r.max() <= opts.tol / 50.0 || iter - iter_tol_reached >= 5000) {
        res.converged = true;
        break;
      }
    } else if ((r.max() <= 1e-3 || iter >= 2000) &&
               iter - last_polish_attempt >= 500) {
      last_polish_attempt = iter;
      VectorXd px, py;
      if (try_polish(prob, y, z, opts.tol, px, py)) {
        x = px;
        y = py;
        res.converged = true;
        res.polished = true;
        break;
      }
    }

    // primal infeasibility certificate: dy with A^T dy ~ 0 and negative support
    VectorXd dy = y - y_prev_check;
    y_prev_check = y;
    double dy_norm = dy.size() ? dy.cwiseAbs().maxCoeff() : 0.0;
    if (dy_norm > 1e-12) {
      double atdy = (prob.A.transpose() * dy).cwiseAbs().maxCoeff();
      double support = 0.0;
      bool valid = true;
      for (Eigen::Index i = 0; i < mr; ++i) {
        if (dy[i] > 0.0) {
          if (!std::isfinite(prob.hi[i])) valid = false;
          else support += prob.hi[i] * dy[i];
        } else if (dy[i] < 0.0) {
          if (!std::isfinite(prob.lo[i])) valid = false;
          else support += prob.lo[i] * dy[i];
        }
      }
      if (valid && atdy <= 1e-10 * dy_norm && support < -1e-10 * dy_norm) {
        res.primal_infeasible = true;
        res.infeasibility_certificate = dy / dy_norm;
        break;
      }
    }

    // crude penalty rebalancing, at most a handful of refactorizations
    if (rho_updates < 8 && iter % 1000 == 0 && r.prim > 0.0 && r.stat > 0.0) {
      double ratio = r.prim / r.stat;
      if (ratio > 10.0 || ratio < 0.1) {
        double scale = std::clamp(std::sqrt(ratio), 1e-2, 1e2);
        rho *= scale;
        kkt = factorize(rho);
        ++rho_updates;
      }
    }
  }

  if (!res.primal_infeasible && !res.converged) {
    VectorXd px, py;  // last-ditch polish on max-iteration exit
    if (try_polish(prob, y, z, opts.tol, px, py)) {
      x = px;
      y = py;
      res.polished = true;
    }
  }
  res.x = x;
  res.y = y;
  res.iterations = std::min(iter, opts.max_iter);
  if (!res.primal_infeasible) {
    Residuals r = kkt_residuals(prob, x, y);
    res.stationarity = r.stat;
    res.primal_feas = r.prim;
    res.dual_feas = r.dual;
    res.complementarity = r.comp;
    res.converged = r.max() <= opts.tol;
  }
  return res;
}

}  // namespace netkoop
