#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "netkoop/gemf.hpp"
#include "netkoop/graph.hpp"
#include "netkoop/koopman.hpp"
#include "netkoop/lifting.hpp"
#include "netkoop/mpc.hpp"

namespace netkoop {

/// Declarative description of a full pipeline run: generate graph, collect
/// snapshots, fit models, evaluate, and optionally run the closed-loop
/// scenarios. All randomness flows from the explicit seeds below.
struct ExperimentConfig {
  std::string name = "custom";
  std::string anchor;  // preset provenance tag carried into the report

  // graph
  std::string graph_model = "er";
  std::vector<std::string> families;  // defaults to {graph_model}
  int n = 100;
  double avg_degree = 10.0;
  double ws_rewire = 0.1;
  std::uint64_t graph_seed = 11;

  // epidemic rates (homogeneous)
  double beta0 = 1.0;
  double delta = 2.0;

  // dictionary
  int k_rbf = 200;
  int k_rbf_geo = 300;  // spatial graphs get the larger dictionary
  double sigma = 0.0;   // <= 0 selects the median heuristic
  std::uint64_t kmeans_seed = 13;

  // dataset
  int n_traj = 20000;
  int n_sim = 10;
  double horizon = 1.0;
  double u_low = 0.3;   // scalar box, replicated per node
  double u_high = 0.8;
  // additional training ranges for table-style comparisons (pairs in u space)
  std::vector<std::pair<double, double>> extra_ranges;
  std::uint64_t data_seed = 17;

  // models
  bool fit_full_model = true;
  bool fit_reduced_model = true;
  int reduced_r = 5;
  int reduced_r_geo = 10;
  double ridge_rel = 1e-10;

  // evaluation
  int n_eval = 1000;
  int n_sim_ref = 1000;
  std::uint64_t eval_seed = 19;

  // constant-input prediction curves (figure 3 style)
  bool run_fraction_curves = false;
  double curve_beta = 0.5;
  double curve_t_max = 10.0;
  int curve_runs = 500;
  double curve_init_fraction = 0.1;
  std::uint64_t curve_seed = 23;

  // oscillating heterogeneous input response (figure 6/7 style)
  bool run_varying_input = false;
  double varying_period = 5.0;
  int varying_steps = 20;
  std::uint64_t varying_seed = 29;

  // sweeps (figure 5 style); empty disables
  std::vector<int> rbf_sweep;
  std::vector<int> r_sweep;
  std::vector<double> beta_sweep;
  int sweep_n_traj = 0;  // 0 = use n_traj

  // MPC scenario: "", "budget", or "mincost"
  std::string mpc_scenario;
  double mpc_budget_fraction = 0.7;  // u_T = fraction * sum(beta0)
  int mpc_horizon = 3;
  int mpc_steps = 20;
  double mpc_init_fraction = 0.9;
  int mpc_eval_runs = 200;  // transition-count averaging
  std::uint64_t mpc_seed = 31;

  int threads = 1;
  std::string out_dir = "out";

  void validate() const;
  std::string to_json_string() const;
  static ExperimentConfig from_json_string(const std::string& text);
};

/// Built-in presets: fig3, fig5, fig7, table1, mpc-budget, mpc-mincost.
/// scale is "desk" (reduced sizes) or "paper" (published sizes).
ExperimentConfig preset_config(const std::string& preset,
                               const std::string& scale);
std::vector<std::string> preset_names();

struct StageStatus {
  std::string name;
  bool ok = true;
  std::string error;
};

struct IdentifiedModels {
  Graph graph;
  Dictionary dict;
  SnapshotDataset dataset;
  std::optional<KoopmanModel> full;
  std::optional<KoopmanModel> reduced;
  FitReport full_report, reduced_report;
};

/// generate -> dictionary -> collect -> fit for one family and input range.
/// The workhorse shared by run_experiment and the acceptance suite.
IdentifiedModels identify(const ExperimentConfig& cfg,
                          const std::string& family, double u_lo, double u_hi,
                          int n_traj_override = 0);

struct TableRow {
  std::string network;
  double u_lo = 0.0, u_hi = 0.0;
  double err_full_pct = 0.0, err_reduced_pct = 0.0;
  double ref_full_pct = 0.0, ref_reduced_pct = 0.0;  // published values
};

struct SweepRow {
  std::string network;
  double x = 0.0;  // k_rbf, r, or reproduction number
  double err_full_pct = 0.0, err_reduced_pct = 0.0;
};

struct TransitionsRow {
  std::string network;
  double mpc_full = 0.0, mpc_reduced = 0.0, uniform = 0.0;
  double ref_full = 0.0, ref_reduced = 0.0;  // published values
};

struct ReportBundle {
  ExperimentConfig config;
  std::vector<StageStatus> stages;

  std::optional<IdentifiedModels> primary;
  ErrorSummary err_full, err_reduced;

  std::vector<double> curve_t;
  Eigen::VectorXd curve_gemf, curve_meanfield, curve_full, curve_reduced;

  std::vector<double> varying_t;
  Eigen::MatrixXd varying_beta;  // applied beta(t) rows=steps (mean over nodes + band)
  struct VaryingCurves {
    double u_lo = 0.0, u_hi = 0.0;   // training range of the models used
    Eigen::MatrixXd curves;          // columns: gemf, meanfield, full, reduced
  };
  std::vector<VaryingCurves> varying;  // one entry per training range

  std::vector<TableRow> table1;
  std::vector<SweepRow> errors_by_rbf, errors_by_r, errors_by_R;

  std::optional<ClosedLoopLog> mpc_full, mpc_reduced, mpc_uniform;
  Eigen::MatrixXd control_vs_katz;  // node, katz, u_full, u_reduced
  std::vector<TransitionsRow> transitions;

  bool failed() const;
};

ReportBundle run_experiment(const ExperimentConfig& cfg);

/// Writes all artifacts, report CSVs, summary.json, and a manifest.json with
/// a content hash per artifact plus the exact config. Deterministic: equal
/// configs yield byte-identical trees.
void emit_report(const ReportBundle& bundle, const std::filesystem::path& dir);

}  // namespace netkoop
