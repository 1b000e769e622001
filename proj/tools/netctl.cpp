// netctl: identification and predictive control of networked SIS processes
// from snapshot data. See README.md for the workflow.

#include <CLI11.hpp>
#include <Eigen/Dense>
#include <filesystem>
#include <iostream>

#include "netkoop/experiment.hpp"
#include "netkoop/gemf.hpp"
#include "netkoop/graph.hpp"
#include "netkoop/koopman.hpp"
#include "netkoop/lifting.hpp"
#include "netkoop/meanfield.hpp"
#include "netkoop/mpc.hpp"
#include "netkoop/util.hpp"

using namespace netkoop;
namespace fs = std::filesystem;

int main(int argc, char** argv) {
  CLI::App app{"Koopman identification and MPC for networked SIS processes"};
  app.require_subcommand(1);

  // ---- graph ----
  auto* graph_cmd = app.add_subcommand("graph", "generate a random graph");
  std::string g_model = "er", g_out = "graph.json";
  int g_n = 100;
  double g_deg = 10.0, g_rewire = 0.1;
  std::uint64_t g_seed = 1;
  bool g_stats = false;
  graph_cmd->add_option("--model", g_model, "er|ws|geo")->capture_default_str();
  graph_cmd->add_option("--n", g_n)->capture_default_str();
  graph_cmd->add_option("--avg-degree", g_deg)->capture_default_str();
  graph_cmd->add_option("--rewire", g_rewire, "WS rewiring probability")
      ->capture_default_str();
  graph_cmd->add_option("--seed", g_seed)->capture_default_str();
  graph_cmd->add_option("--out", g_out)->capture_default_str();
  graph_cmd->add_flag("--stats", g_stats, "print degree/spectral statistics");

  // ---- collect ----
  auto* collect_cmd =
      app.add_subcommand("collect", "collect a snapshot dataset (and fit the "
                                    "RBF dictionary by k-means)");
  std::string c_graph = "graph.json", c_out = "dataset";
  int c_k = 200, c_ntraj = 5000, c_nsim = 10;
  double c_T = 1.0, c_ulow = 0.3, c_uhigh = 0.8, c_beta0 = 1.0, c_delta = 2.0,
         c_sigma = 0.0;
  std::uint64_t c_seed = 17, c_kseed = 13;
  int c_threads = 1;
  collect_cmd->add_option("--graph", c_graph)->capture_default_str();
  collect_cmd->add_option("--k", c_k, "number of RBFs")->capture_default_str();
  collect_cmd->add_option("--sigma", c_sigma, "RBF bandwidth (<=0: median heuristic)")
      ->capture_default_str();
  collect_cmd->add_option("--n-traj", c_ntraj)->capture_default_str();
  collect_cmd->add_option("--n-sim", c_nsim)->capture_default_str();
  collect_cmd->add_option("--T", c_T, "snapshot horizon")->capture_default_str();
  collect_cmd->add_option("--u-low", c_ulow)->capture_default_str();
  collect_cmd->add_option("--u-high", c_uhigh)->capture_default_str();
  collect_cmd->add_option("--beta0", c_beta0)->capture_default_str();
  collect_cmd->add_option("--delta", c_delta)->capture_default_str();
  collect_cmd->add_option("--seed", c_seed)->capture_default_str();
  collect_cmd->add_option("--kmeans-seed", c_kseed)->capture_default_str();
  collect_cmd->add_option("--threads", c_threads)->capture_default_str();
  collect_cmd->add_option("--out", c_out)->capture_default_str();

  // ---- fit ----
  auto* fit_cmd = app.add_subcommand("fit", "fit Koopman models from a dataset");
  std::string f_dataset = "dataset", f_dict = "dataset/dictionary.json",
              f_out_full = "model_full.json", f_out_reduced = "";
  int f_r = 5;
  double f_ridge = 1e-10;
  fit_cmd->add_option("--dataset", f_dataset)->capture_default_str();
  fit_cmd->add_option("--dict", f_dict)->capture_default_str();
  fit_cmd->add_option("--out-full", f_out_full)->capture_default_str();
  fit_cmd->add_option("--out-reduced", f_out_reduced,
                      "also fit the reduced model to this file");
  fit_cmd->add_option("--r", f_r, "reduction order")->capture_default_str();
  fit_cmd->add_option("--ridge-rel", f_ridge)->capture_default_str();

  // ---- predict ----
  auto* predict_cmd =
      app.add_subcommand("predict", "open-loop infected-fraction prediction");
  std::string p_model = "model_full.json", p_dict = "dataset/dictionary.json",
              p_graph = "graph.json", p_out = "prediction.csv";
  double p_beta = 0.5, p_init = 0.1, p_tmax = 10.0, p_beta0 = 1.0,
         p_delta = 2.0;
  int p_runs = 0;
  std::uint64_t p_seed = 23;
  predict_cmd->add_option("--model", p_model)->capture_default_str();
  predict_cmd->add_option("--dict", p_dict)->capture_default_str();
  predict_cmd->add_option("--graph", p_graph)->capture_default_str();
  predict_cmd->add_option("--beta", p_beta, "constant infection rate")
      ->capture_default_str();
  predict_cmd->add_option("--beta0", p_beta0)->capture_default_str();
  predict_cmd->add_option("--delta", p_delta)->capture_default_str();
  predict_cmd->add_option("--init-fraction", p_init)->capture_default_str();
  predict_cmd->add_option("--t-max", p_tmax)->capture_default_str();
  predict_cmd
      ->add_option("--gemf-runs", p_runs,
                   "also simulate a GEMF ensemble of this size")
      ->capture_default_str();
  predict_cmd->add_option("--seed", p_seed)->capture_default_str();
  predict_cmd->add_option("--out", p_out)->capture_default_str();

  // ---- mpc ----
  auto* mpc_cmd = app.add_subcommand("mpc", "closed-loop MPC against the plant");
  std::string m_model = "model_full.json", m_dict = "dataset/dictionary.json",
              m_graph = "graph.json", m_out = "mpc", m_scenario = "budget";
  double m_budget_frac = 0.7, m_init = 0.9, m_beta0 = 1.0, m_delta = 2.0;
  int m_p = 3, m_steps = 20;
  std::uint64_t m_seed = 31;
  mpc_cmd->add_option("--model", m_model)->capture_default_str();
  mpc_cmd->add_option("--dict", m_dict)->capture_default_str();
  mpc_cmd->add_option("--graph", m_graph)->capture_default_str();
  mpc_cmd->add_option("--scenario", m_scenario, "budget|mincost")
      ->capture_default_str();
  mpc_cmd->add_option("--budget-fraction", m_budget_frac)->capture_default_str();
  mpc_cmd->add_option("--p", m_p, "prediction horizon")->capture_default_str();
  mpc_cmd->add_option("--steps", m_steps)->capture_default_str();
  mpc_cmd->add_option("--init-fraction", m_init)->capture_default_str();
  mpc_cmd->add_option("--beta0", m_beta0)->capture_default_str();
  mpc_cmd->add_option("--delta", m_delta)->capture_default_str();
  mpc_cmd->add_option("--seed", m_seed)->capture_default_str();
  mpc_cmd->add_option("--out", m_out)->capture_default_str();

  // ---- experiment ----
  auto* exp_cmd = app.add_subcommand("experiment", "run a full pipeline preset");
  std::string e_preset, e_scale = "desk", e_config, e_out = "out";
  int e_threads = 1;
  exp_cmd->add_option("--preset", e_preset,
                      "fig3|fig5|fig7|table1|mpc-budget|mpc-mincost");
  exp_cmd->add_option("--scale", e_scale, "desk|paper")->capture_default_str();
  exp_cmd->add_option("--config", e_config, "config JSON (overrides preset)");
  exp_cmd->add_option("--out", e_out)->capture_default_str();
  exp_cmd->add_option("--threads", e_threads)->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*graph_cmd) {
      Graph g = generate_graph(graph_model_from_name(g_model), g_n, g_deg,
                               {g_rewire}, g_seed);
      save_graph(g, g_out);
      std::cout << "wrote " << g_out << " (" << g.edges.size() << " edges)\n";
      if (g_stats) {
        std::cout << "average degree " << g.average_degree()
                  << ", max degree " << g.max_degree() << ", spectral radius "
                  << spectral_radius(g) << "\n";
      }
      return 0;
    }
    if (*collect_cmd) {
      Graph g = load_graph(c_graph);
      EpidemicParams params = EpidemicParams::uniform(g.n, c_beta0, c_delta);
      RawSnapshots raw = collect_raw(
          g, params, c_ntraj, c_nsim, c_T, Eigen::VectorXd::Constant(g.n, c_ulow),
          Eigen::VectorXd::Constant(g.n, c_uhigh), c_seed, c_threads);
      Eigen::MatrixXd centers = kmeans_centers(raw.X, c_k, c_kseed);
      Dictionary dict = c_sigma > 0.0 ? build_dictionary(centers, c_sigma)
                                      : build_dictionary_median(centers);
      SnapshotDataset ds = dataset_from_raw(raw, dict);
      save_dataset(ds, c_out);
      save_dictionary(dict, fs::path(c_out) / "dictionary.json");
      std::cout << "wrote " << c_out << " (m=" << ds.m() << ", N=" << dict.size()
                << ", sigma=" << dict.sigma << ")\n";
      return 0;
    }
    if (*fit_cmd) {
      SnapshotDataset ds = load_dataset(f_dataset);
      Dictionary dict = load_dictionary(f_dict);
      FitOptions opts;
      opts.ridge_rel = f_ridge;
      auto [full, report] = fit_full(ds, dict, opts);
      save_model(full, f_out_full);
      std::cout << "full model: residual_AB=" << report.residual_AB
                << " residual_C=" << report.residual_C << " -> " << f_out_full
                << "\n";
      if (!f_out_reduced.empty()) {
        auto [reduced, rep] = fit_reduced(ds, dict, f_r, opts);
        save_model(reduced, f_out_reduced);
        std::cout << "reduced model (r=" << f_r
                  << "): residual_AB=" << rep.residual_AB << " -> "
                  << f_out_reduced << "\n";
      }
      return 0;
    }
    if (*predict_cmd) {
      Graph g = load_graph(p_graph);
      Dictionary dict = load_dictionary(p_dict);
      KoopmanModel model = load_model(p_model);
      EpidemicParams params = EpidemicParams::uniform(g.n, p_beta0, p_delta);
      Rng rng(derive_seed(p_seed, 0x70726564));
      BinaryState x0 = random_fraction_state(g.n, p_init, rng);
      Eigen::VectorXd u = Eigen::VectorXd::Constant(g.n, p_beta0 - p_beta);
      int steps = static_cast<int>(std::lround(p_tmax));
      std::vector<Eigen::VectorXd> useq(steps, u);
      auto preds = predict_expected(model, dict, x0, useq, steps);

      std::vector<double> grid;
      for (int k = 0; k <= steps; ++k) grid.push_back(k);
      Eigen::VectorXd gemf;
      if (p_runs > 0)
        gemf = ensemble_fraction_curve(g, params, x0, u, grid, p_runs, p_seed);

      std::ofstream out(p_out);
      out << "t,koopman" << (p_runs > 0 ? ",gemf" : "") << "\n";
      for (int k = 0; k <= steps; ++k) {
        double frac = k == 0 ? infected_fraction(x0)
                             : clamp01(preds[k - 1]).mean();
        out << k << ',' << format_double(frac);
        if (p_runs > 0) out << ',' << format_double(gemf[k]);
        out << '\n';
      }
      std::cout << "wrote " << p_out << "\n";
      return 0;
    }
    if (*mpc_cmd) {
      Graph g = load_graph(m_graph);
      Dictionary dict = load_dictionary(m_dict);
      KoopmanModel model = load_model(m_model);
      EpidemicParams params = EpidemicParams::uniform(g.n, m_beta0, m_delta);
      double u_T = m_budget_frac * params.beta0.sum();
      MpcSpec spec = m_scenario == "budget"
                         ? make_limited_budget_spec(g.n, params.beta0, u_T, m_p)
                         : make_min_cost_spec(g.n, params.beta0, m_p);
      Rng rng(derive_seed(m_seed, 0x6d706330));
      BinaryState x0 = random_fraction_state(g.n, m_init, rng);
      fs::create_directories(m_out);
      ClosedLoopLog log = mpc_closed_loop(g, params, model, dict, spec, x0,
                                          m_steps, 1.0, m_seed);
      write_closed_loop_csv(log, fs::path(m_out) / "mpc_log.csv");
      write_closed_loop_inputs(log, fs::path(m_out) / "mpc_inputs.csv");
      ClosedLoopLog uni = fixed_input_closed_loop(
          g, params, m_budget_frac * params.beta0, x0, m_steps, 1.0, m_seed);
      write_closed_loop_csv(uni, fs::path(m_out) / "mpc_log_uniform.csv");
      std::cout << "final infected fraction: mpc="
                << log.infected_fraction.back()
                << " uniform=" << uni.infected_fraction.back()
                << (log.aborted ? " (aborted: " + log.abort_reason + ")" : "")
                << "\n";
      return log.aborted ? 1 : 0;
    }
    if (*exp_cmd) {
      ExperimentConfig cfg;
      if (!e_config.empty()) {
        cfg = ExperimentConfig::from_json_string(read_text_file(e_config));
        if (!e_preset.empty()) {
          std::cerr << "--config given, ignoring --preset\n";
        }
      } else if (!e_preset.empty()) {
        cfg = preset_config(e_preset, e_scale);
      } else {
        std::cerr << "experiment: need --preset or --config\n";
        return 2;
      }
      cfg.threads = e_threads;
      cfg.out_dir = e_out;
      ReportBundle bundle = run_experiment(cfg);
      emit_report(bundle, e_out);
      for (const auto& s : bundle.stages)
        std::cout << "stage " << s.name << ": "
                  << (s.ok ? "ok" : "FAILED (" + s.error + ")") << "\n";
      if (bundle.primary) {
        std::cout << "errors: full=" << bundle.err_full.mean_error * 100.0
                  << "% reduced=" << bundle.err_reduced.mean_error * 100.0
                  << "%\n";
      }
      std::cout << "report written to " << e_out << "\n";
      return bundle.failed() ? 1 : 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
