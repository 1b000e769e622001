#include "netkoop/mpc.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <stdexcept>

#include "netkoop/util.hpp"

namespace netkoop {

using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

void check_psd(const MatrixXd& M, const std::string& name) {
  if (M.size() == 0) return;
  if (M.rows() != M.cols())
    throw std::invalid_argument("mpc spec: " + name + " is not square");
  if ((M - M.transpose()).cwiseAbs().maxCoeff() > 1e-9 * std::max(1.0, M.cwiseAbs().maxCoeff()))
    throw std::invalid_argument("mpc spec: " + name + " is not symmetric");
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(M, Eigen::EigenvaluesOnly);
  double min_eig = es.eigenvalues().minCoeff();
  if (min_eig < -1e-10 * std::max(1.0, es.eigenvalues().cwiseAbs().maxCoeff()))
    throw std::invalid_argument("mpc spec: " + name +
                                " has negative eigenvalue " +
                                std::to_string(min_eig));
}

}  // namespace

void MpcSpec::validate() const {
  if (horizon < 1) throw std::invalid_argument("mpc spec: horizon must be >= 1");
  if (n < 1 || l < 1) throw std::invalid_argument("mpc spec: bad dimensions");
  auto expect = [&](std::size_t got, std::size_t want, const char* what) {
    if (got != want)
      throw std::invalid_argument(std::string("mpc spec: ") + what +
                                  " must have " + std::to_string(want) +
                                  " entries");
  };
  expect(Qhat.size(), horizon + 1, "Qhat");
  expect(qhat.size(), horizon + 1, "qhat");
  expect(R.size(), horizon, "R");
  expect(r.size(), horizon, "r");
  for (int i = 0; i <= horizon; ++i) {
    if (Qhat[i].size() && (Qhat[i].rows() != n || Qhat[i].cols() != n))
      throw std::invalid_argument("mpc spec: Qhat shape mismatch");
    if (qhat[i].size() && qhat[i].size() != n)
      throw std::invalid_argument("mpc spec: qhat shape mismatch");
    check_psd(Qhat[i], "Qhat[" + std::to_string(i) + "]");
  }
  for (int i = 0; i < horizon; ++i) {
    if (R[i].size() && (R[i].rows() != l || R[i].cols() != l))
      throw std::invalid_argument("mpc spec: R shape mismatch");
    if (r[i].size() && r[i].size() != l)
      throw std::invalid_argument("mpc spec: r shape mismatch");
    check_psd(R[i], "R[" + std::to_string(i) + "]");
  }
  if (u_min.size() != l || u_max.size() != l)
    throw std::invalid_argument("mpc spec: box length mismatch");
  for (int i = 0; i < l; ++i)
    if (!(u_min[i] <= u_max[i]))
      throw std::invalid_argument("mpc spec: u_min > u_max");
  if (!(budget > 0.0)) throw std::invalid_argument("mpc spec: budget must be > 0");
  if (has_state_constraints()) {
    expect(Ehat.size(), horizon + 1, "Ehat");
    expect(D.size(), horizon, "D");
    expect(b.size(), horizon + 1, "b");
    Eigen::Index n_c = Ehat[0].rows();
    for (int i = 0; i <= horizon; ++i)
      if (Ehat[i].rows() != n_c || Ehat[i].cols() != n || b[i].size() != n_c)
        throw std::invalid_argument("mpc spec: state constraint shape mismatch");
    for (int i = 0; i < horizon; ++i)
      if (D[i].rows() != n_c || D[i].cols() != l)
        throw std::invalid_argument("mpc spec: D shape mismatch");
  }
}

MpcSpec uniform_mpc_spec(int p, int n, int l, const MatrixXd& Qhat,
                         const VectorXd& qhat, const MatrixXd& R,
                         const VectorXd& r, const VectorXd& u_min,
                         const VectorXd& u_max, double budget) {
  MpcSpec spec;
  spec.horizon = p;
  spec.n = n;
  spec.l = l;
  spec.Qhat.assign(p + 1, Qhat);
  spec.qhat.assign(p + 1, qhat);
  spec.R.assign(p, R);
  spec.r.assign(p, r);
  spec.u_min = u_min;
  spec.u_max = u_max;
  spec.budget = budget;
  spec.validate();
  return spec;
}

MpcSpec make_limited_budget_spec(int n, const VectorXd& beta0, double u_T,
                                 int p) {
  if (!(u_T > 0.0) || u_T > beta0.sum() + 1e-12)
    throw std::invalid_argument("budget spec: need 0 < u_T <= sum(beta0)");
  return uniform_mpc_spec(p, n, n, MatrixXd(), VectorXd::Ones(n), MatrixXd(),
                          VectorXd(), VectorXd::Zero(n), beta0, u_T);
}

MpcSpec make_min_cost_spec(int n, const VectorXd& beta0, int p) {
  return uniform_mpc_spec(p, n, n, MatrixXd::Identity(n, n),
                          VectorXd::Constant(n, 0.5),
                          0.3 * MatrixXd::Identity(n, n),
                          VectorXd::Constant(n, 0.1), VectorXd::Zero(n), beta0,
                          kInf);
}

MatrixXd Condenser::s_block(int i) const {
  const int l = spec_.l, p = spec_.horizon;
  MatrixXd S = MatrixXd::Zero(latent_, l * p);
  for (int j = 0; j < i; ++j) S.middleCols(j * l, l) = impulse_[i - 1 - j];
  return S;
}

Condenser::Condenser(const KoopmanModel& model, const MpcSpec& spec)
    : spec_(spec), dict_id_(model.dict_id), latent_(model.latent_dim()) {
  spec_.validate();
  if (model.dims.l != spec_.l || model.dims.n != spec_.n)
    throw std::invalid_argument("condense: model/spec dimension mismatch");
  const int p = spec_.horizon, l = spec_.l;
  const MatrixXd& C = model.C;

  a_pow_.resize(p + 1);
  a_pow_[0] = MatrixXd::Identity(latent_, latent_);
  for (int i = 1; i <= p; ++i) a_pow_[i] = model.A * a_pow_[i - 1];
  impulse_.resize(p);
  for (int i = 0; i < p; ++i) impulse_[i] = a_pow_[i] * model.B;

  q_lift_.resize(p + 1);
  qv_lift_.resize(p + 1);
  for (int i = 0; i <= p; ++i) {
    if (spec_.Qhat[i].size()) q_lift_[i] = C.transpose() * spec_.Qhat[i] * C;
    if (spec_.qhat[i].size()) qv_lift_[i] = C.transpose() * spec_.qhat[i];
  }
  if (spec_.has_state_constraints()) {
    e_lift_.resize(p + 1);
    for (int i = 0; i <= p; ++i) e_lift_[i] = spec_.Ehat[i] * C;
  }

  // Hessian: H = 2 (sum_i S_i' Q_i S_i + blkdiag(R_i))
  const int nv = l * p;
  H_ = MatrixXd::Zero(nv, nv);
  for (int i = 1; i <= p; ++i) {
    if (!q_lift_[i].size()) continue;
    MatrixXd S = s_block(i);
    H_.noalias() += 2.0 * S.transpose() * q_lift_[i] * S;
  }
  for (int i = 0; i < p; ++i)
    if (spec_.R[i].size())
      H_.block(i * l, i * l, l, l) += 2.0 * spec_.R[i];
  H_ = 0.5 * (H_ + H_.transpose().eval());  // enforce exact symmetry

  if (H_.size() && H_.cwiseAbs().maxCoeff() > 0.0) {
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(H_, Eigen::EigenvaluesOnly);
    double min_eig = es.eigenvalues().minCoeff();
    double scale = es.eigenvalues().cwiseAbs().maxCoeff();
    if (min_eig < -1e-8 * std::max(1.0, scale))
      throw std::runtime_error(
          "condense: lifted cost lost positive semidefiniteness, eigenvalue " +
          std::to_string(min_eig));
    // clear tiny negative dust so the QP sees an exactly PSD Hessian
  }

  // constraint rows: box (2 l p), budget (p), then state rows (refreshed per z0)
  int n_c = spec_.has_state_constraints()
                ? static_cast<int>(spec_.Ehat[0].rows())
                : 0;
  state_rows_ = n_c * (p + 1);
  int budget_rows = std::isfinite(spec_.budget) ? p : 0;
  int rows = 2 * l * p + budget_rows + state_rows_;
  G_ = MatrixXd::Zero(rows, nv);
  h_static_ = VectorXd::Zero(rows);
  int row = 0;
  for (int i = 0; i < p; ++i) {  // upper box: u_i <= u_max
    for (int c = 0; c < l; ++c, ++row) {
      G_(row, i * l + c) = 1.0;
      h_static_[row] = spec_.u_max[c];
    }
  }
  for (int i = 0; i < p; ++i) {  // lower box: -u_i <= -u_min
    for (int c = 0; c < l; ++c, ++row) {
      G_(row, i * l + c) = -1.0;
      h_static_[row] = -spec_.u_min[c];
    }
  }
  for (int i = 0; i < p && std::isfinite(spec_.budget); ++i, ++row) {
    G_.row(row).segment(i * l, l).setOnes();
    h_static_[row] = spec_.budget;
  }
  if (n_c > 0) {
    for (int i = 0; i <= p; ++i) {
      MatrixXd S = s_block(i);
      G_.middleRows(row, n_c) = e_lift_[i] * S;
      if (i < p) G_.middleRows(row, n_c).middleCols(i * l, l) += spec_.D[i];
      row += n_c;
    }
  }
}

CondensedQp Condenser::at(const VectorXd& z0) const {
  if (z0.size() != latent_)
    throw std::invalid_argument("condense: z0 dimension mismatch");
  const int p = spec_.horizon, l = spec_.l, nv = l * p;

  std::vector<VectorXd> z_free(p + 1);  // A^i z0
  for (int i = 0; i <= p; ++i) z_free[i] = a_pow_[i] * z0;

  CondensedQp qp;
  qp.H = H_;
  qp.G = G_;
  qp.h = h_static_;
  qp.model_dict_id = dict_id_;
  qp.z0_hash = hash_doubles(z0.data(), static_cast<std::size_t>(z0.size()));
  qp.f = VectorXd::Zero(nv);
  qp.constant = 0.0;

  for (int i = 0; i <= p; ++i) {
    VectorXd grad_z;  // d cost / d z_i  at the free response, halved
    if (q_lift_[i].size()) {
      VectorXd qz = q_lift_[i] * z_free[i];
      qp.constant += z_free[i].dot(qz);
      grad_z = 2.0 * qz;
    }
    if (qv_lift_[i].size()) {
      qp.constant += qv_lift_[i].dot(z_free[i]);
      if (grad_z.size())
        grad_z += qv_lift_[i];
      else
        grad_z = qv_lift_[i];
    }
    if (!grad_z.size() || i == 0) continue;
    // accumulate S_i' grad_z without materializing S_i
    for (int j = 0; j < i; ++j)
      qp.f.segment(j * l, l).noalias() +=
          impulse_[i - 1 - j].transpose() * grad_z;
  }
  for (int i = 0; i < p; ++i)
    if (spec_.r[i].size()) qp.f.segment(i * l, l) += spec_.r[i];

  if (state_rows_ > 0) {
    int n_c = state_rows_ / (p + 1);
    int row = static_cast<int>(G_.rows()) - state_rows_;
    for (int i = 0; i <= p; ++i) {
      qp.h.segment(row, n_c) = spec_.b[i] - e_lift_[i] * z_free[i];
      row += n_c;
    }
  }
  return qp;
}

CondensedQp condense_qp(const KoopmanModel& model, const MpcSpec& spec,
                        const VectorXd& z0) {
  Condenser cond(model, spec);
  return cond.at(z0);
}

QpResult solve_qp(const CondensedQp& qp, const QpOptions& opts,
                  const VectorXd* warm_x, const VectorXd* warm_y) {
  QpProblem prob;
  prob.P = qp.H;
  prob.q = qp.f;
  prob.A = qp.G;
  prob.hi = qp.h;
  prob.lo = VectorXd::Constant(qp.h.size(), -kInf);
  return solve_qp(prob, opts, warm_x, warm_y);
}

namespace {

void log_push_state(ClosedLoopLog& log, double t, const BinaryState& x,
                    std::int64_t infections) {
  log.t.push_back(t);
  log.infected_fraction.push_back(infected_fraction(x));
  log.new_infections_cum.push_back(infections);
}

double stage_cost(const MpcSpec& spec, const VectorXd& x, const VectorXd& u) {
  double c = 0.0;
  if (spec.Qhat[0].size()) c += x.dot(spec.Qhat[0] * x);
  if (spec.qhat[0].size()) c += spec.qhat[0].dot(x);
  if (spec.R[0].size()) c += u.dot(spec.R[0] * u);
  if (spec.r[0].size()) c += spec.r[0].dot(u);
  return c;
}

}  // namespace

ClosedLoopLog mpc_closed_loop(const Graph& g, const EpidemicParams& params,
                              const KoopmanModel& model, const Dictionary& dict,
                              const MpcSpec& spec, const BinaryState& x0,
                              int steps, double step_duration,
                              std::uint64_t seed,
                              const ClosedLoopOptions& opts) {
  if (steps < 1) throw std::invalid_argument("closed loop: steps must be >= 1");
  if (dict.dict_id != model.dict_id)
    throw std::invalid_argument("closed loop: model/dictionary mismatch");
  if (opts.train_u_low.size() == spec.l && opts.train_u_high.size() == spec.l) {
    for (int i = 0; i < spec.l; ++i)
      if (spec.u_min[i] < opts.train_u_low[i] - 1e-12 ||
          spec.u_max[i] > opts.train_u_high[i] + 1e-12) {
        std::cerr << "mpc_closed_loop: input box exceeds the model's training "
                     "range; predictions are extrapolating\n";
        break;
      }
  }

  Condenser condenser(model, spec);
  GemfPlant plant(g, params, x0, seed);

  ClosedLoopLog log;
  log.inputs.resize(spec.l, steps);
  VectorXd warm_x = opts.warm_x0, warm_y = opts.warm_y0;

  for (int k = 0; k < steps; ++k) {
    const BinaryState& x = plant.state();
    log_push_state(log, k * step_duration, x, plant.cumulative_infections());

    VectorXd z0 = model.encode(lift_state(dict, state_to_vector(x)));
    CondensedQp qp = condenser.at(z0);
    QpResult sol = solve_qp(qp, opts.qp,
                            opts.warm_start && warm_x.size() ? &warm_x : nullptr,
                            opts.warm_start && warm_y.size() ? &warm_y : nullptr);
    if (sol.primal_infeasible || !sol.converged) {
      log.aborted = true;
      log.abort_reason = sol.primal_infeasible
                             ? "qp infeasible"
                             : "qp did not reach tolerance (" +
                                   std::to_string(sol.kkt_residual()) + ")";
      log.u_total.push_back(0.0);
      log.qp_iters.push_back(sol.iterations);
      log.kkt_residual.push_back(sol.kkt_residual());
      log.qp_objective.push_back(std::numeric_limits<double>::quiet_NaN());
      return log;
    }

    VectorXd u0 = sol.x.head(spec.l);
    // the plant's input invariant is hard: clip solver slack to the box,
    // then rescale marginal budget overshoot
    u0 = u0.cwiseMax(spec.u_min).cwiseMin(spec.u_max);
    if (std::isfinite(spec.budget) && u0.sum() > spec.budget && u0.sum() > 0.0)
      u0 *= spec.budget / u0.sum();

    log.inputs.col(k) = u0;
    log.u_total.push_back(u0.sum());
    log.qp_iters.push_back(sol.iterations);
    log.kkt_residual.push_back(sol.kkt_residual());
    log.qp_objective.push_back(0.5 * sol.x.dot(qp.H * sol.x) +
                               qp.f.dot(sol.x) + qp.constant);
    log.realized_stage_cost += stage_cost(spec, state_to_vector(x), u0);

    log.final_plan = sol.x;
    log.final_duals = sol.y;
    if (opts.warm_start) {
      // shift the plan one step; repeat the last block
      warm_x = sol.x;
      int l = spec.l, p = spec.horizon;
      if (p > 1) {
        warm_x.head(l * (p - 1)) = sol.x.tail(l * (p - 1));
        warm_x.tail(l) = sol.x.tail(l);
      }
      warm_y = sol.y;
    }
    plant.advance(u0, step_duration);
  }
  log_push_state(log, steps * step_duration, plant.state(),
                 plant.cumulative_infections());
  log.u_total.push_back(0.0);
  log.qp_iters.push_back(0);
  log.kkt_residual.push_back(0.0);
  log.qp_objective.push_back(0.0);
  return log;
}

ClosedLoopLog fixed_input_closed_loop(const Graph& g,
                                      const EpidemicParams& params,
                                      const VectorXd& u, const BinaryState& x0,
                                      int steps, double step_duration,
                                      std::uint64_t seed) {
  if (steps < 1) throw std::invalid_argument("closed loop: steps must be >= 1");
  GemfPlant plant(g, params, x0, seed);
  ClosedLoopLog log;
  log.inputs.resize(u.size(), steps);
  for (int k = 0; k < steps; ++k) {
    log_push_state(log, k * step_duration, plant.state(),
                   plant.cumulative_infections());
    log.inputs.col(k) = u;
    log.u_total.push_back(u.sum());
    log.qp_iters.push_back(0);
    log.kkt_residual.push_back(0.0);
    log.qp_objective.push_back(0.0);
    plant.advance(u, step_duration);
  }
  log_push_state(log, steps * step_duration, plant.state(),
                 plant.cumulative_infections());
  log.u_total.push_back(0.0);
  log.qp_iters.push_back(0);
  log.kkt_residual.push_back(0.0);
  log.qp_objective.push_back(0.0);
  return log;
}

void write_closed_loop_csv(const ClosedLoopLog& log,
                           const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
  out << "t,infected_fraction,new_infections_cum,u_total,qp_iters,kkt_residual\n";
  for (std::size_t k = 0; k < log.t.size(); ++k) {
    out << format_double(log.t[k]) << ','
        << format_double(log.infected_fraction[k]) << ','
        << log.new_infections_cum[k] << ',' << format_double(log.u_total[k])
        << ',' << log.qp_iters[k] << ',' << format_double(log.kkt_residual[k])
        << '\n';
  }
}

void write_closed_loop_inputs(const ClosedLoopLog& log,
                              const std::filesystem::path& path) {
  write_csv_matrix(path, log.inputs.transpose());
}

}  // namespace netkoop
