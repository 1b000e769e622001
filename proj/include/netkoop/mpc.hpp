#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "netkoop/gemf.hpp"
#include "netkoop/koopman.hpp"
#include "netkoop/qp.hpp"

namespace netkoop {

/// Horizon-p cost and constraint description in original (state) coordinates:
///   min  xhat_p' Qhat_p xhat_p + qhat_p' xhat_p
///        + sum_{i<p} xhat_i' Qhat_i xhat_i + qhat_i' xhat_i
///        + u_i' R_i u_i + r_i' u_i
///   s.t. u_min <= u_i <= u_max,  1'u_i <= budget,
///        Ehat_i xhat_i + D_i u_i <= b_i  (terminal: Ehat_p xhat_p <= b_p)
struct MpcSpec {
  int horizon = 1;  // p
  int n = 0;        // state dimension
  int l = 0;        // input dimension

  std::vector<Eigen::MatrixXd> Qhat;  // p+1 entries (empty matrix = zero)
  std::vector<Eigen::VectorXd> qhat;  // p+1 entries
  std::vector<Eigen::MatrixXd> R;     // p entries
  std::vector<Eigen::VectorXd> r;     // p entries

  Eigen::VectorXd u_min, u_max;
  double budget = kInf;  // u_T; kInf disables the budget rows

  std::vector<Eigen::MatrixXd> Ehat;  // p+1 entries or empty (no state constraints)
  std::vector<Eigen::MatrixXd> D;     // p entries when Ehat present
  std::vector<Eigen::VectorXd> b;     // p+1 entries when Ehat present

  void validate() const;  // shapes + PSD (eigenvalue floor -1e-10)
  bool has_state_constraints() const { return !Ehat.empty(); }
};

/// Uniform-stage convenience constructor (same cost every stage; terminal
/// uses the stage state cost).
MpcSpec uniform_mpc_spec(int p, int n, int l, const Eigen::MatrixXd& Qhat,
                         const Eigen::VectorXd& qhat, const Eigen::MatrixXd& R,
                         const Eigen::VectorXd& r, const Eigen::VectorXd& u_min,
                         const Eigen::VectorXd& u_max, double budget);

/// Linear-cost budget scenario: minimize expected infections under the per
/// step budget 1'u <= u_T and the box [0, beta0].
MpcSpec make_limited_budget_spec(int n, const Eigen::VectorXd& beta0,
                                 double u_T, int p);

/// Quadratic-cost scenario: Qhat = I, qhat = 0.5 1, R = 0.3 I, r = 0.1 1,
/// box [0, beta0], no budget row.
MpcSpec make_min_cost_spec(int n, const Eigen::VectorXd& beta0, int p);

/// Dense reduction of the MPC program to the stacked inputs: the states are
/// eliminated through z_i = A^i z0 + sum_j A^(i-1-j) B u_j and costs are
/// lifted with Q_i = C' Qhat_i C, q_i = C' qhat_i. Decision variable count is
/// l*p, independent of the lifted dimension.
struct CondensedQp {
  Eigen::MatrixXd H;  // (l p) x (l p)
  Eigen::VectorXd f;
  Eigen::MatrixXd G;  // one-sided rows: G u <= h
  Eigen::VectorXd h;
  double constant = 0.0;  // z0-dependent cost offset
  std::string model_dict_id;
  std::uint64_t z0_hash = 0;
};

/// Precomputes everything z0-independent (H, G, power/impulse tables) so the
/// closed loop only refreshes f and h each step.
class Condenser {
 public:
  Condenser(const KoopmanModel& model, const MpcSpec& spec);
  CondensedQp at(const Eigen::VectorXd& z0) const;
  int variables() const { return spec_.l * spec_.horizon; }

 private:
  MpcSpec spec_;
  std::string dict_id_;
  int latent_ = 0;
  std::vector<Eigen::MatrixXd> a_pow_;     // A^i, i = 0..p
  std::vector<Eigen::MatrixXd> impulse_;   // A^i B, i = 0..p-1
  std::vector<Eigen::MatrixXd> q_lift_;    // C' Qhat_i C (may be empty)
  std::vector<Eigen::VectorXd> qv_lift_;   // C' qhat_i
  std::vector<Eigen::MatrixXd> e_lift_;    // Ehat_i C
  Eigen::MatrixXd H_, G_;
  Eigen::VectorXd h_static_;               // box/budget rows of h
  int state_rows_ = 0;                     // trailing rows of G refreshed per z0
  Eigen::MatrixXd s_block(int i) const;    // S_i: z_i = A^i z0 + S_i u_stack
};

CondensedQp condense_qp(const KoopmanModel& model, const MpcSpec& spec,
                        const Eigen::VectorXd& z0);

/// KKT-tolerance solve of the condensed program (see qp.hpp).
QpResult solve_qp(const CondensedQp& qp, const QpOptions& opts = {},
                  const Eigen::VectorXd* warm_x = nullptr,
                  const Eigen::VectorXd* warm_y = nullptr);

struct ClosedLoopOptions {
  QpOptions qp;
  bool warm_start = true;
  // optional seed for the first step's solve (e.g. a previous run's plan)
  Eigen::VectorXd warm_x0, warm_y0;
  // optional training-range check; warns when the spec box exceeds it
  Eigen::VectorXd train_u_low, train_u_high;
};

struct ClosedLoopLog {
  // row k (0..steps): state measured at time t[k]; rows 0..steps-1 also carry
  // the control solved and applied over [t[k], t[k+1])
  std::vector<double> t;
  std::vector<double> infected_fraction;
  std::vector<std::int64_t> new_infections_cum;
  std::vector<double> u_total;
  std::vector<int> qp_iters;
  std::vector<double> kkt_residual;
  std::vector<double> qp_objective;   // optimal value of each step's program
  Eigen::MatrixXd inputs;             // l x steps applied inputs
  double realized_stage_cost = 0.0;   // stage costs evaluated on measured states
  Eigen::VectorXd final_plan, final_duals;  // last solved stack (warm-start seed)
  bool aborted = false;
  std::string abort_reason;
};

/// Receding-horizon loop against the GEMF plant: measure x, encode, condense,
/// solve, apply the first input for step_duration, repeat.
ClosedLoopLog mpc_closed_loop(const Graph& g, const EpidemicParams& params,
                              const KoopmanModel& model, const Dictionary& dict,
                              const MpcSpec& spec, const BinaryState& x0,
                              int steps, double step_duration,
                              std::uint64_t seed,
                              const ClosedLoopOptions& opts = {});

/// Counterfactual policy: a fixed input applied at every step.
ClosedLoopLog fixed_input_closed_loop(const Graph& g,
                                      const EpidemicParams& params,
                                      const Eigen::VectorXd& u,
                                      const BinaryState& x0, int steps,
                                      double step_duration, std::uint64_t seed);

void write_closed_loop_csv(const ClosedLoopLog& log,
                           const std::filesystem::path& path);
void write_closed_loop_inputs(const ClosedLoopLog& log,
                              const std::filesystem::path& path);

}  // namespace netkoop
