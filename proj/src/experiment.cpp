#include "netkoop/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <map>
#include <sstream>
#include <stdexcept>

#include "netkoop/meanfield.hpp"
#include "netkoop/util.hpp"

namespace netkoop {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using nlohmann::json;

namespace {

constexpr std::uint64_t kTagCurveInit = 0x63766930;
constexpr std::uint64_t kTagVarying = 0x76617279;
constexpr std::uint64_t kTagMpcInit = 0x6d706369;
constexpr std::uint64_t kTagMpcRun = 0x6d706372;
constexpr std::uint64_t kTagMpcDraw = 0x6d706364;

// Published per-network reference errors (%), narrow and wide training range.
struct Table1Ref {
  double full_narrow, red_narrow, full_wide, red_wide;
};
const std::map<std::string, Table1Ref> kTable1Refs = {
    {"er", {11.55, 24.83, 26.48, 65.40}},
    {"geo", {12.50, 28.65, 25.73, 59.65}},
    {"ws", {11.39, 24.72, 26.04, 65.80}},
};

struct Table2Ref {
  double budget_full, budget_reduced, mincost_full, mincost_reduced;
};
const std::map<std::string, Table2Ref> kTable2Refs = {
    {"er", {29.40, 33.55, 24.39, 35.10}},
    {"geo", {92.60, 126.05, 30.51, 86.21}},
    {"ws", {64.27, 48.11, 33.80, 45.13}},
};

bool is_narrow_range(double lo, double hi) {
  return std::abs(lo - 0.3) < 1e-9 && std::abs(hi - 0.8) < 1e-9;
}
bool is_wide_range(double lo, double hi) {
  return std::abs(lo - 0.0) < 1e-9 && std::abs(hi - 1.0) < 1e-9;
}

int family_k(const ExperimentConfig& cfg, const std::string& family) {
  return family == "geo" ? cfg.k_rbf_geo : cfg.k_rbf;
}
int family_r(const ExperimentConfig& cfg, const std::string& family) {
  return family == "geo" ? cfg.reduced_r_geo : cfg.reduced_r;
}

}  // namespace

void ExperimentConfig::validate() const {
  if (n < 2) throw std::invalid_argument("config: n must be >= 2");
  if (!(avg_degree > 0.0) || avg_degree >= n - 1)
    throw std::invalid_argument("config: avg_degree out of range");
  if (n_traj < 1) throw std::invalid_argument("config: n_traj must be >= 1");
  if (n_sim < 1) throw std::invalid_argument("config: n_sim must be >= 1");
  if (!(horizon > 0.0)) throw std::invalid_argument("config: horizon must be > 0");
  if (k_rbf < 1 || k_rbf_geo < 1)
    throw std::invalid_argument("config: k_rbf must be >= 1");
  if (!(beta0 >= 0.0) || !(delta >= 0.0))
    throw std::invalid_argument("config: rates must be >= 0");
  auto check_range = [&](double lo, double hi) {
    if (!(lo <= hi) || lo < 0.0 || hi > beta0 + 1e-12)
      throw std::invalid_argument("config: input range must satisfy 0 <= lo <= hi <= beta0");
  };
  check_range(u_low, u_high);
  for (auto [lo, hi] : extra_ranges) check_range(lo, hi);
  if (fit_reduced_model && (reduced_r < 1 || reduced_r_geo < 1))
    throw std::invalid_argument("config: reduced_r must be >= 1");
  if (n_eval < 1 || n_sim_ref < 1)
    throw std::invalid_argument("config: evaluation sizes must be >= 1");
  if (!mpc_scenario.empty() && mpc_scenario != "budget" && mpc_scenario != "mincost")
    throw std::invalid_argument("config: mpc_scenario must be '', 'budget' or 'mincost'");
  if (!mpc_scenario.empty()) {
    if (mpc_horizon < 1 || mpc_steps < 1 || mpc_eval_runs < 0)
      throw std::invalid_argument("config: mpc sizes must be positive");
    if (!(mpc_budget_fraction > 0.0) || mpc_budget_fraction > 1.0)
      throw std::invalid_argument("config: mpc_budget_fraction must be in (0,1]");
  }
  for (const auto& f : families) graph_model_from_name(f);
  graph_model_from_name(graph_model);
}

std::string ExperimentConfig::to_json_string() const {
  json j;
  j["name"] = name;
  j["anchor"] = anchor;
  j["graph"] = {{"model", graph_model}, {"families", families},       {"n", n},
                {"avg_degree", avg_degree}, {"ws_rewire", ws_rewire}, {"seed", graph_seed}};
  j["epidemic"] = {{"beta0", beta0}, {"delta", delta}};
  j["dictionary"] = {{"k_rbf", k_rbf},
                     {"k_rbf_geo", k_rbf_geo},
                     {"sigma", sigma},
                     {"kmeans_seed", kmeans_seed}};
  json ranges = json::array();
  for (auto [lo, hi] : extra_ranges) ranges.push_back({lo, hi});
  j["dataset"] = {{"n_traj", n_traj},   {"n_sim", n_sim},
                  {"horizon", horizon}, {"u_low", u_low},
                  {"u_high", u_high},   {"extra_ranges", ranges},
                  {"seed", data_seed}};
  j["model"] = {{"fit_full", fit_full_model},
                {"fit_reduced", fit_reduced_model},
                {"reduced_r", reduced_r},
                {"reduced_r_geo", reduced_r_geo},
                {"ridge_rel", ridge_rel}};
  j["evaluation"] = {{"n_eval", n_eval}, {"n_sim_ref", n_sim_ref}, {"seed", eval_seed}};
  j["curves"] = {{"enabled", run_fraction_curves},
                 {"beta", curve_beta},
                 {"t_max", curve_t_max},
                 {"runs", curve_runs},
                 {"init_fraction", curve_init_fraction},
                 {"seed", curve_seed}};
  j["varying_input"] = {{"enabled", run_varying_input},
                        {"period", varying_period},
                        {"steps", varying_steps},
                        {"seed", varying_seed}};
  j["sweeps"] = {{"rbf", rbf_sweep},
                 {"r", r_sweep},
                 {"beta", beta_sweep},
                 {"n_traj", sweep_n_traj}};
  j["mpc"] = {{"scenario", mpc_scenario},
              {"budget_fraction", mpc_budget_fraction},
              {"horizon", mpc_horizon},
              {"steps", mpc_steps},
              {"init_fraction", mpc_init_fraction},
              {"eval_runs", mpc_eval_runs},
              {"seed", mpc_seed}};
  j["threads"] = threads;
  j["out_dir"] = out_dir;
  return j.dump(2) + "\n";
}

ExperimentConfig ExperimentConfig::from_json_string(const std::string& text) {
  json j = json::parse(text);
  ExperimentConfig c;
  c.name = j.value("name", c.name);
  c.anchor = j.value("anchor", c.anchor);
  if (j.contains("graph")) {
    const auto& g = j["graph"];
    c.graph_model = g.value("model", c.graph_model);
    if (g.contains("families")) c.families = g["families"].get<std::vector<std::string>>();
    c.n = g.value("n", c.n);
    c.avg_degree = g.value("avg_degree", c.avg_degree);
    c.ws_rewire = g.value("ws_rewire", c.ws_rewire);
    c.graph_seed = g.value("seed", c.graph_seed);
  }
  if (j.contains("epidemic")) {
    c.beta0 = j["epidemic"].value("beta0", c.beta0);
    c.delta = j["epidemic"].value("delta", c.delta);
  }
  if (j.contains("dictionary")) {
    const auto& d = j["dictionary"];
    c.k_rbf = d.value("k_rbf", c.k_rbf);
    c.k_rbf_geo = d.value("k_rbf_geo", c.k_rbf_geo);
    c.sigma = d.value("sigma", c.sigma);
    c.kmeans_seed = d.value("kmeans_seed", c.kmeans_seed);
  }
  if (j.contains("dataset")) {
    const auto& d = j["dataset"];
    c.n_traj = d.value("n_traj", c.n_traj);
    c.n_sim = d.value("n_sim", c.n_sim);
    c.horizon = d.value("horizon", c.horizon);
    c.u_low = d.value("u_low", c.u_low);
    c.u_high = d.value("u_high", c.u_high);
    if (d.contains("extra_ranges"))
      for (const auto& r : d["extra_ranges"])
        c.extra_ranges.emplace_back(r[0].get<double>(), r[1].get<double>());
    c.data_seed = d.value("seed", c.data_seed);
  }
  if (j.contains("model")) {
    const auto& m = j["model"];
    c.fit_full_model = m.value("fit_full", c.fit_full_model);
    c.fit_reduced_model = m.value("fit_reduced", c.fit_reduced_model);
    c.reduced_r = m.value("reduced_r", c.reduced_r);
    c.reduced_r_geo = m.value("reduced_r_geo", c.reduced_r_geo);
    c.ridge_rel = m.value("ridge_rel", c.ridge_rel);
  }
  if (j.contains("evaluation")) {
    const auto& e = j["evaluation"];
    c.n_eval = e.value("n_eval", c.n_eval);
    c.n_sim_ref = e.value("n_sim_ref", c.n_sim_ref);
    c.eval_seed = e.value("seed", c.eval_seed);
  }
  if (j.contains("curves")) {
    const auto& v = j["curves"];
    c.run_fraction_curves = v.value("enabled", c.run_fraction_curves);
    c.curve_beta = v.value("beta", c.curve_beta);
    c.curve_t_max = v.value("t_max", c.curve_t_max);
    c.curve_runs = v.value("runs", c.curve_runs);
    c.curve_init_fraction = v.value("init_fraction", c.curve_init_fraction);
    c.curve_seed = v.value("seed", c.curve_seed);
  }
  if (j.contains("varying_input")) {
    const auto& v = j["varying_input"];
    c.run_varying_input = v.value("enabled", c.run_varying_input);
    c.varying_period = v.value("period", c.varying_period);
    c.varying_steps = v.value("steps", c.varying_steps);
    c.varying_seed = v.value("seed", c.varying_seed);
  }
  if (j.contains("sweeps")) {
    const auto& s = j["sweeps"];
    if (s.contains("rbf")) c.rbf_sweep = s["rbf"].get<std::vector<int>>();
    if (s.contains("r")) c.r_sweep = s["r"].get<std::vector<int>>();
    if (s.contains("beta")) c.beta_sweep = s["beta"].get<std::vector<double>>();
    c.sweep_n_traj = s.value("n_traj", c.sweep_n_traj);
  }
  if (j.contains("mpc")) {
    const auto& m = j["mpc"];
    c.mpc_scenario = m.value("scenario", c.mpc_scenario);
    c.mpc_budget_fraction = m.value("budget_fraction", c.mpc_budget_fraction);
    c.mpc_horizon = m.value("horizon", c.mpc_horizon);
    c.mpc_steps = m.value("steps", c.mpc_steps);
    c.mpc_init_fraction = m.value("init_fraction", c.mpc_init_fraction);
    c.mpc_eval_runs = m.value("eval_runs", c.mpc_eval_runs);
    c.mpc_seed = m.value("seed", c.mpc_seed);
  }
  c.threads = j.value("threads", c.threads);
  c.out_dir = j.value("out_dir", c.out_dir);
  if (c.families.empty()) c.families = {c.graph_model};
  return c;
}

std::vector<std::string> preset_names() {
  return {"fig3", "fig5", "fig7", "table1", "mpc-budget", "mpc-mincost"};
}

ExperimentConfig preset_config(const std::string& preset,
                               const std::string& scale) {
  if (scale != "desk" && scale != "paper")
    throw std::invalid_argument("preset scale must be 'desk' or 'paper'");
  bool desk = scale == "desk";

  ExperimentConfig c;
  c.name = preset;
  c.anchor = preset;
  c.families = {"er"};
  c.n_traj = desk ? 5000 : 20000;
  c.n_eval = desk ? 200 : 1000;
  c.n_sim_ref = 1000;
  c.curve_runs = desk ? 500 : 1000;
  c.mpc_eval_runs = desk ? 200 : 1000;

  if (preset == "fig3") {
    // constant-rate prediction: train under the same fixed input
    c.run_fraction_curves = true;
    c.u_low = c.u_high = c.beta0 - c.curve_beta;
  } else if (preset == "fig5") {
    c.families = {"er", "geo", "ws"};
    c.rbf_sweep = desk ? std::vector<int>{50, 100, 150, 200, 250, 300}
                       : std::vector<int>{50, 100, 150, 200, 250, 300, 350};
    c.r_sweep = {1, 2, 3, 4, 5, 6, 8, 10, 15, 20};
    c.beta_sweep = {0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
    c.sweep_n_traj = desk ? 3000 : 0;
  } else if (preset == "fig7") {
    c.run_varying_input = true;
    c.extra_ranges = {{0.0, 1.0}};
  } else if (preset == "table1") {
    c.families = {"er", "geo", "ws"};
    c.extra_ranges = {{0.0, 1.0}};
  } else if (preset == "mpc-budget") {
    c.families = {"er", "geo", "ws"};
    c.mpc_scenario = "budget";
  } else if (preset == "mpc-mincost") {
    c.families = {"er", "geo", "ws"};
    c.mpc_scenario = "mincost";
  } else {
    throw std::invalid_argument("unknown preset: " + preset +
                                " (expected fig3|fig5|fig7|table1|mpc-budget|mpc-mincost)");
  }
  return c;
}

IdentifiedModels identify(const ExperimentConfig& cfg,
                          const std::string& family, double u_lo, double u_hi,
                          int n_traj_override) {
  IdentifiedModels out;
  out.graph = generate_graph(graph_model_from_name(family), cfg.n,
                             cfg.avg_degree, {cfg.ws_rewire}, cfg.graph_seed);
  EpidemicParams params = EpidemicParams::uniform(cfg.n, cfg.beta0, cfg.delta);
  int n_traj = n_traj_override > 0 ? n_traj_override : cfg.n_traj;
  RawSnapshots raw = collect_raw(
      out.graph, params, n_traj, cfg.n_sim, cfg.horizon,
      VectorXd::Constant(cfg.n, u_lo), VectorXd::Constant(cfg.n, u_hi),
      cfg.data_seed, cfg.threads);
  MatrixXd centers = kmeans_centers(raw.X, family_k(cfg, family), cfg.kmeans_seed);
  out.dict = cfg.sigma > 0.0 ? build_dictionary(centers, cfg.sigma)
                             : build_dictionary_median(centers);
  out.dataset = dataset_from_raw(raw, out.dict);
  FitOptions fopts;
  fopts.ridge_rel = cfg.ridge_rel;
  if (cfg.fit_full_model) {
    auto [model, report] = fit_full(out.dataset, out.dict, fopts);
    out.full = std::move(model);
    out.full_report = report;
  }
  if (cfg.fit_reduced_model) {
    auto [model, report] =
        fit_reduced(out.dataset, out.dict, family_r(cfg, family), fopts);
    out.reduced = std::move(model);
    out.reduced_report = report;
  }
  return out;
}

bool ReportBundle::failed() const {
  for (const auto& s : stages)
    if (!s.ok) return true;
  return false;
}

namespace {

void eval_pair(const ExperimentConfig& cfg, const IdentifiedModels& im,
               const Graph& g, double u_lo, double u_hi, ErrorSummary* full,
               ErrorSummary* reduced) {
  EpidemicParams params = EpidemicParams::uniform(cfg.n, cfg.beta0, cfg.delta);
  std::vector<std::pair<const KoopmanModel*, const Dictionary*>> models;
  if (im.full) models.push_back({&*im.full, &im.dict});
  if (im.reduced) models.push_back({&*im.reduced, &im.dict});
  auto res = relative_error_multi(
      models, g, params, cfg.n_eval, cfg.n_sim_ref,
      VectorXd::Constant(cfg.n, u_lo), VectorXd::Constant(cfg.n, u_hi),
      cfg.horizon, cfg.eval_seed, cfg.threads);
  std::size_t idx = 0;
  if (im.full && full) *full = res[idx];
  if (im.full) ++idx;
  if (im.reduced && reduced) *reduced = res[idx];
}

// Ensemble of closed-loop plants under a piecewise-constant input sequence;
// returns the mean infected fraction at step boundaries 0..steps.
VectorXd plant_ensemble_curve(const Graph& g, const EpidemicParams& params,
                              const BinaryState& x0,
                              const std::vector<VectorXd>& u_seq, double T,
                              int n_runs, std::uint64_t seed, int threads) {
  int steps = static_cast<int>(u_seq.size());
  MatrixXd fractions(steps + 1, n_runs);
  parallel_for(static_cast<std::size_t>(n_runs), threads, [&](std::size_t r) {
    GemfPlant plant(g, params, x0, derive_seed(seed, kTagVarying, r));
    fractions(0, static_cast<Eigen::Index>(r)) = infected_fraction(x0);
    for (int k = 0; k < steps; ++k) {
      plant.advance(u_seq[k], T);
      fractions(k + 1, static_cast<Eigen::Index>(r)) =
          infected_fraction(plant.state());
    }
  });
  VectorXd mean = VectorXd::Zero(steps + 1);
  for (int r = 0; r < n_runs; ++r) mean += fractions.col(r);
  return mean / static_cast<double>(n_runs);
}

double clamped_fraction(const VectorXd& xhat) {
  return clamp01(xhat).mean();
}

void stage_fraction_curves(const ExperimentConfig& cfg, ReportBundle& b) {
  const auto& im = *b.primary;
  EpidemicParams params = EpidemicParams::uniform(cfg.n, cfg.beta0, cfg.delta);
  int steps = static_cast<int>(std::lround(cfg.curve_t_max / cfg.horizon));
  Rng init_rng(derive_seed(cfg.curve_seed, kTagCurveInit));
  BinaryState x0 =
      random_fraction_state(cfg.n, cfg.curve_init_fraction, init_rng);
  VectorXd u_const = VectorXd::Constant(cfg.n, cfg.beta0 - cfg.curve_beta);

  b.curve_t.clear();
  for (int k = 0; k <= steps; ++k) b.curve_t.push_back(k * cfg.horizon);

  std::vector<double> grid(b.curve_t.begin(), b.curve_t.end());
  b.curve_gemf = ensemble_fraction_curve(im.graph, params, x0, u_const, grid,
                                         cfg.curve_runs, cfg.curve_seed,
                                         cfg.threads);
  MeanFieldResult mf = simulate_meanfield(im.graph, params, u_const,
                                          state_to_vector(x0), grid);
  b.curve_meanfield = mf.traj.colwise().mean();

  std::vector<VectorXd> u_seq(steps, u_const);
  auto curve_from_model = [&](const KoopmanModel& model) {
    VectorXd curve(steps + 1);
    VectorXd z = model.encode(lift_state(im.dict, state_to_vector(x0)));
    curve[0] = clamped_fraction(model.C * z);
    auto preds = predict_expected(model, im.dict, x0, u_seq, steps);
    for (int k = 0; k < steps; ++k) curve[k + 1] = clamped_fraction(preds[k]);
    return curve;
  };
  if (im.full) b.curve_full = curve_from_model(*im.full);
  if (im.reduced) b.curve_reduced = curve_from_model(*im.reduced);
}

void stage_varying_input(const ExperimentConfig& cfg, ReportBundle& b) {
  EpidemicParams params = EpidemicParams::uniform(cfg.n, cfg.beta0, cfg.delta);
  int steps = cfg.varying_steps;
  double T = cfg.horizon;

  // oscillatory heterogeneous rate profile inside the primary training range
  double beta_lo = cfg.beta0 - cfg.u_high, beta_hi = cfg.beta0 - cfg.u_low;
  double mid = 0.5 * (beta_lo + beta_hi), half = 0.5 * (beta_hi - beta_lo);
  Rng rng(derive_seed(cfg.varying_seed, kTagVarying));
  VectorXd amp(cfg.n), phase(cfg.n);
  for (int i = 0; i < cfg.n; ++i) {
    amp[i] = half * (0.5 + 0.45 * rng.u01());
    phase[i] = rng.uniform(0.0, 2.0 * M_PI);
  }
  std::vector<VectorXd> u_seq(steps);
  b.varying_beta.resize(steps, 2);  // mean and max deviation per step
  for (int k = 0; k < steps; ++k) {
    VectorXd beta_k(cfg.n);
    for (int i = 0; i < cfg.n; ++i)
      beta_k[i] =
          mid + amp[i] * std::sin(2.0 * M_PI * (k * T) / cfg.varying_period +
                                  phase[i]);
    u_seq[k] = VectorXd::Constant(cfg.n, cfg.beta0) - beta_k;
    b.varying_beta(k, 0) = beta_k.mean();
    b.varying_beta(k, 1) = (beta_k.array() - mid).abs().maxCoeff();
  }

  Rng init_rng(derive_seed(cfg.varying_seed, kTagCurveInit));
  BinaryState x0 = random_fraction_state(cfg.n, 0.1, init_rng);

  b.varying_t.clear();
  for (int k = 0; k <= steps; ++k) b.varying_t.push_back(k * T);

  // plant ensemble and mean field depend only on the input profile
  const Graph& g = b.primary->graph;
  VectorXd gemf = plant_ensemble_curve(g, params, x0, u_seq, T, cfg.curve_runs,
                                       cfg.varying_seed, cfg.threads);
  VectorXd mf(steps + 1);
  VectorXd xmf = state_to_vector(x0);
  mf[0] = xmf.mean();
  for (int k = 0; k < steps; ++k) {
    MeanFieldResult res = simulate_meanfield(g, params, u_seq[k], xmf, {T});
    xmf = res.traj.col(0);
    mf[k + 1] = xmf.mean();
  }

  // the same profile is predicted by models trained on each input range
  std::vector<std::pair<double, double>> ranges = {{cfg.u_low, cfg.u_high}};
  ranges.insert(ranges.end(), cfg.extra_ranges.begin(), cfg.extra_ranges.end());
  for (auto [lo, hi] : ranges) {
    bool is_primary = lo == cfg.u_low && hi == cfg.u_high;
    IdentifiedModels local;
    const IdentifiedModels& im =
        is_primary ? *b.primary
                   : (local = identify(cfg, cfg.families.front(), lo, hi));
    ReportBundle::VaryingCurves vc;
    vc.u_lo = lo;
    vc.u_hi = hi;
    vc.curves.resize(steps + 1, 4);
    vc.curves.col(0) = gemf;
    vc.curves.col(1) = mf;
    auto model_curve = [&](const KoopmanModel& model, int col) {
      VectorXd z = model.encode(lift_state(im.dict, state_to_vector(x0)));
      vc.curves(0, col) = clamped_fraction(model.C * z);
      auto preds = predict_expected(model, im.dict, x0, u_seq, steps);
      for (int k = 0; k < steps; ++k)
        vc.curves(k + 1, col) = clamped_fraction(preds[k]);
    };
    vc.curves.col(2).setConstant(std::numeric_limits<double>::quiet_NaN());
    vc.curves.col(3).setConstant(std::numeric_limits<double>::quiet_NaN());
    if (im.full) model_curve(*im.full, 2);
    if (im.reduced) model_curve(*im.reduced, 3);
    b.varying.push_back(std::move(vc));
  }
}

void stage_sweeps(const ExperimentConfig& cfg, ReportBundle& b) {
  EpidemicParams params = EpidemicParams::uniform(cfg.n, cfg.beta0, cfg.delta);
  int n_traj = cfg.sweep_n_traj > 0 ? cfg.sweep_n_traj : cfg.n_traj;
  FitOptions fopts;
  fopts.ridge_rel = cfg.ridge_rel;

  for (const auto& family : cfg.families) {
    Graph g = generate_graph(graph_model_from_name(family), cfg.n,
                             cfg.avg_degree, {cfg.ws_rewire}, cfg.graph_seed);
    VectorXd lo = VectorXd::Constant(cfg.n, cfg.u_low);
    VectorXd hi = VectorXd::Constant(cfg.n, cfg.u_high);

    if (!cfg.rbf_sweep.empty() || !cfg.r_sweep.empty()) {
      RawSnapshots raw = collect_raw(g, params, n_traj, cfg.n_sim, cfg.horizon,
                                     lo, hi, cfg.data_seed, cfg.threads);
      // one model list per family so the reference ensembles are shared
      std::vector<Dictionary> dicts;
      std::vector<KoopmanModel> models;
      struct Slot {
        enum Kind { rbf_full, rbf_reduced, r_reduced, r_full } kind;
        double x;
        std::size_t model_idx;
      };
      std::vector<Slot> slots;

      dicts.reserve(cfg.rbf_sweep.size() + 1);
      for (int k : cfg.rbf_sweep) {
        MatrixXd centers = kmeans_centers(raw.X, k, cfg.kmeans_seed);
        dicts.push_back(cfg.sigma > 0.0 ? build_dictionary(centers, cfg.sigma)
                                        : build_dictionary_median(centers));
        SnapshotDataset ds = dataset_from_raw(raw, dicts.back());
        MatrixXd PsiX = lift_states(dicts.back(), ds.X);
        auto [mf, rf] = fit_full_matrices(PsiX, ds.U, ds.EPsiY, ds.X,
                                          dicts.back().dict_id, fopts);
        models.push_back(std::move(mf));
        slots.push_back({Slot::rbf_full, double(k), models.size() - 1});
        int r = std::min(family_r(cfg, family), std::min<int>(ds.EPsiY.rows(), ds.m()));
        auto [mr, rr] = fit_reduced_matrices(PsiX, ds.U, ds.EPsiY, ds.X, r,
                                             dicts.back().dict_id, fopts);
        models.push_back(std::move(mr));
        slots.push_back({Slot::rbf_reduced, double(k), models.size() - 1});
        (void)rf;
        (void)rr;
      }

      if (!cfg.r_sweep.empty()) {
        MatrixXd centers =
            kmeans_centers(raw.X, family_k(cfg, family), cfg.kmeans_seed);
        dicts.push_back(cfg.sigma > 0.0 ? build_dictionary(centers, cfg.sigma)
                                        : build_dictionary_median(centers));
        SnapshotDataset ds = dataset_from_raw(raw, dicts.back());
        MatrixXd PsiX = lift_states(dicts.back(), ds.X);
        ReducedFitter fitter(PsiX, ds.U, ds.EPsiY, ds.X, dicts.back().dict_id,
                             fopts);
        auto [mf, rf] = fit_full_matrices(PsiX, ds.U, ds.EPsiY, ds.X,
                                          dicts.back().dict_id, fopts);
        models.push_back(std::move(mf));
        std::size_t full_idx = models.size() - 1;
        (void)rf;
        for (int r : cfg.r_sweep) {
          if (r > fitter.max_rank()) continue;
          auto [mr, rr] = fitter.fit(r);
          models.push_back(std::move(mr));
          slots.push_back({Slot::r_reduced, double(r), models.size() - 1});
          (void)rr;
        }
        slots.push_back({Slot::r_full, 0.0, full_idx});
      }

      // dictionaries vector may reallocate; build pointer list afterwards
      std::vector<std::pair<const KoopmanModel*, const Dictionary*>> pairs;
      for (const auto& m : models) {
        const Dictionary* d = nullptr;
        for (const auto& cand : dicts)
          if (cand.dict_id == m.dict_id) d = &cand;
        pairs.push_back({&m, d});
      }
      auto res = relative_error_multi(pairs, g, params, cfg.n_eval,
                                      cfg.n_sim_ref, lo, hi, cfg.horizon,
                                      cfg.eval_seed, cfg.threads);

      std::map<double, SweepRow> rbf_rows;
      double full_baseline = 0.0;
      for (const auto& s : slots) {
        double pct = res[s.model_idx].mean_error * 100.0;
        if (s.kind == Slot::rbf_full) {
          rbf_rows[s.x].network = family;
          rbf_rows[s.x].x = s.x;
          rbf_rows[s.x].err_full_pct = pct;
        } else if (s.kind == Slot::rbf_reduced) {
          rbf_rows[s.x].err_reduced_pct = pct;
        } else if (s.kind == Slot::r_full) {
          full_baseline = pct;
        }
      }
      for (auto& [k, row] : rbf_rows) b.errors_by_rbf.push_back(row);
      for (const auto& s : slots) {
        if (s.kind != Slot::r_reduced) continue;
        SweepRow row;
        row.network = family;
        row.x = s.x;
        row.err_reduced_pct = res[s.model_idx].mean_error * 100.0;
        row.err_full_pct = full_baseline;
        b.errors_by_r.push_back(row);
      }
    }

    // reproduction-number sweep: constant-input training at each beta
    if (!cfg.beta_sweep.empty()) {
      double lambda1 = spectral_radius(g);
      for (double beta : cfg.beta_sweep) {
        double u_fix = cfg.beta0 - beta;
        VectorXd ufix = VectorXd::Constant(cfg.n, u_fix);
        RawSnapshots raw = collect_raw(g, params, n_traj, cfg.n_sim,
                                       cfg.horizon, ufix, ufix, cfg.data_seed,
                                       cfg.threads);
        MatrixXd centers =
            kmeans_centers(raw.X, family_k(cfg, family), cfg.kmeans_seed);
        Dictionary dict = cfg.sigma > 0.0
                              ? build_dictionary(centers, cfg.sigma)
                              : build_dictionary_median(centers);
        SnapshotDataset ds = dataset_from_raw(raw, dict);
        MatrixXd PsiX = lift_states(dict, ds.X);
        auto [mf, rf] = fit_full_matrices(PsiX, ds.U, ds.EPsiY, ds.X,
                                          dict.dict_id, fopts);
        int r = std::min(family_r(cfg, family),
                         std::min<int>(ds.EPsiY.rows(), ds.m()));
        auto [mr, rr] = fit_reduced_matrices(PsiX, ds.U, ds.EPsiY, ds.X, r,
                                             dict.dict_id, fopts);
        (void)rf;
        (void)rr;
        auto res = relative_error_multi({{&mf, &dict}, {&mr, &dict}}, g,
                                        params, cfg.n_eval, cfg.n_sim_ref,
                                        ufix, ufix, cfg.horizon, cfg.eval_seed,
                                        cfg.threads);
        SweepRow row;
        row.network = family;
        row.x = beta * lambda1 / cfg.delta;
        row.err_full_pct = res[0].mean_error * 100.0;
        row.err_reduced_pct = res[1].mean_error * 100.0;
        b.errors_by_R.push_back(row);
      }
    }
  }
}

void stage_table(const ExperimentConfig& cfg, ReportBundle& b) {
  std::vector<std::pair<double, double>> ranges = {{cfg.u_low, cfg.u_high}};
  ranges.insert(ranges.end(), cfg.extra_ranges.begin(), cfg.extra_ranges.end());
  for (const auto& family : cfg.families) {
    for (auto [lo, hi] : ranges) {
      bool was_primary = family == cfg.families.front() && lo == cfg.u_low &&
                         hi == cfg.u_high && b.primary.has_value();
      IdentifiedModels im =
          was_primary ? std::move(*b.primary) : identify(cfg, family, lo, hi);
      ErrorSummary ef, er;
      if (was_primary) {
        ef = b.err_full;
        er = b.err_reduced;
      } else {
        eval_pair(cfg, im, im.graph, lo, hi, &ef, &er);
      }
      TableRow row;
      row.network = family;
      row.u_lo = lo;
      row.u_hi = hi;
      row.err_full_pct = ef.mean_error * 100.0;
      row.err_reduced_pct = er.mean_error * 100.0;
      auto ref = kTable1Refs.find(family);
      if (ref != kTable1Refs.end()) {
        if (is_narrow_range(lo, hi)) {
          row.ref_full_pct = ref->second.full_narrow;
          row.ref_reduced_pct = ref->second.red_narrow;
        } else if (is_wide_range(lo, hi)) {
          row.ref_full_pct = ref->second.full_wide;
          row.ref_reduced_pct = ref->second.red_wide;
        }
      }
      b.table1.push_back(row);
      if (was_primary) b.primary = std::move(im);
    }
  }
}

void stage_mpc(const ExperimentConfig& cfg, ReportBundle& b) {
  EpidemicParams params = EpidemicParams::uniform(cfg.n, cfg.beta0, cfg.delta);
  VectorXd beta0 = params.beta0;
  double u_T = cfg.mpc_budget_fraction * beta0.sum();

  auto build_spec = [&]() {
    return cfg.mpc_scenario == "budget"
               ? make_limited_budget_spec(cfg.n, beta0, u_T, cfg.mpc_horizon)
               : make_min_cost_spec(cfg.n, beta0, cfg.mpc_horizon);
  };
  MpcSpec spec = build_spec();
  VectorXd u_uniform = cfg.mpc_budget_fraction * beta0;

  ClosedLoopOptions clopts;
  clopts.train_u_low = VectorXd::Constant(cfg.n, cfg.u_low);
  clopts.train_u_high = VectorXd::Constant(cfg.n, cfg.u_high);

  bool first_family = true;
  for (const auto& family : cfg.families) {
    IdentifiedModels im =
        (first_family && b.primary &&
         b.primary->graph.model == family)
            ? std::move(*b.primary)
            : identify(cfg, family, cfg.u_low, cfg.u_high);

    Rng init_rng(derive_seed(cfg.mpc_seed, kTagMpcInit));
    BinaryState x0 =
        random_fraction_state(cfg.n, cfg.mpc_init_fraction, init_rng);

    if (first_family) {
      // single-trajectory logs and the control/centrality table
      if (im.full)
        b.mpc_full = mpc_closed_loop(im.graph, params, *im.full, im.dict, spec,
                                     x0, cfg.mpc_steps, cfg.horizon,
                                     cfg.mpc_seed, clopts);
      if (im.reduced)
        b.mpc_reduced = mpc_closed_loop(im.graph, params, *im.reduced, im.dict,
                                        spec, x0, cfg.mpc_steps, cfg.horizon,
                                        cfg.mpc_seed, clopts);
      b.mpc_uniform = fixed_input_closed_loop(im.graph, params, u_uniform, x0,
                                              cfg.mpc_steps, cfg.horizon,
                                              cfg.mpc_seed);
      CentralityVector katz = katz_centrality(im.graph);
      b.control_vs_katz.resize(cfg.n, 4);
      for (int i = 0; i < cfg.n; ++i) {
        b.control_vs_katz(i, 0) = i;
        b.control_vs_katz(i, 1) = katz.values[i];
        b.control_vs_katz(i, 2) =
            b.mpc_full && b.mpc_full->inputs.cols() > 0
                ? b.mpc_full->inputs.row(i).mean()
                : 0.0;
        b.control_vs_katz(i, 3) =
            b.mpc_reduced && b.mpc_reduced->inputs.cols() > 0
                ? b.mpc_reduced->inputs.row(i).mean()
                : 0.0;
      }
    }

    if (cfg.mpc_eval_runs > 0) {
      TransitionsRow row;
      row.network = family;
      auto avg_transitions = [&](const KoopmanModel* model) {
        double total = 0.0;
        ClosedLoopOptions run_opts = clopts;
        for (int run = 0; run < cfg.mpc_eval_runs; ++run) {
          Rng draw(derive_seed(cfg.mpc_seed, kTagMpcDraw, run));
          BinaryState xr = random_density_state(cfg.n, draw);
          std::uint64_t run_seed = derive_seed(cfg.mpc_seed, kTagMpcRun, run);
          if (model) {
            ClosedLoopLog log =
                mpc_closed_loop(im.graph, params, *model, im.dict, spec, xr,
                                cfg.mpc_steps, cfg.horizon, run_seed, run_opts);
            if (log.aborted)
              throw std::runtime_error("mpc evaluation aborted: " +
                                       log.abort_reason);
            total += static_cast<double>(log.new_infections_cum.back());
            run_opts.warm_x0 = log.final_plan;
            run_opts.warm_y0 = log.final_duals;
          } else {
            ClosedLoopLog log = fixed_input_closed_loop(
                im.graph, params, u_uniform, xr, cfg.mpc_steps, cfg.horizon,
                run_seed);
            total += static_cast<double>(log.new_infections_cum.back());
          }
        }
        return total / cfg.mpc_eval_runs;
      };
      if (im.full) row.mpc_full = avg_transitions(&*im.full);
      if (im.reduced) row.mpc_reduced = avg_transitions(&*im.reduced);
      row.uniform = avg_transitions(nullptr);
      auto ref = kTable2Refs.find(family);
      if (ref != kTable2Refs.end()) {
        if (cfg.mpc_scenario == "budget") {
          row.ref_full = ref->second.budget_full;
          row.ref_reduced = ref->second.budget_reduced;
        } else {
          row.ref_full = ref->second.mincost_full;
          row.ref_reduced = ref->second.mincost_reduced;
        }
      }
      b.transitions.push_back(row);
    }

    if (first_family) {
      b.primary = std::move(im);
      first_family = false;
    }
  }
}

}  // namespace

ReportBundle run_experiment(const ExperimentConfig& cfg_in) {
  ExperimentConfig cfg = cfg_in;
  if (cfg.families.empty()) cfg.families = {cfg.graph_model};
  cfg.validate();

  ReportBundle b;
  b.config = cfg;

  auto stage = [&](const std::string& name, auto&& fn) {
    if (b.failed()) return;
    try {
      fn();
      b.stages.push_back({name, true, ""});
    } catch (const std::exception& e) {
      b.stages.push_back({name, false, e.what()});
      std::cerr << "stage '" << name << "' failed: " << e.what() << "\n";
    }
  };

  stage("identify", [&] {
    b.primary = identify(cfg, cfg.families.front(), cfg.u_low, cfg.u_high);
  });
  stage("evaluate", [&] {
    eval_pair(cfg, *b.primary, b.primary->graph, cfg.u_low, cfg.u_high,
              &b.err_full, &b.err_reduced);
  });
  if (cfg.run_fraction_curves)
    stage("curves", [&] { stage_fraction_curves(cfg, b); });
  if (cfg.run_varying_input)
    stage("varying_input", [&] { stage_varying_input(cfg, b); });
  if (!cfg.rbf_sweep.empty() || !cfg.r_sweep.empty() || !cfg.beta_sweep.empty())
    stage("sweeps", [&] { stage_sweeps(cfg, b); });
  if (cfg.families.size() > 1 || !cfg.extra_ranges.empty())
    stage("table", [&] { stage_table(cfg, b); });
  if (!cfg.mpc_scenario.empty()) stage("mpc", [&] { stage_mpc(cfg, b); });
  return b;
}

namespace {

json stage_json(const std::vector<StageStatus>& stages) {
  json arr = json::array();
  for (const auto& s : stages) {
    json e;
    e["stage"] = s.name;
    e["status"] = s.ok ? "ok" : "failed";
    if (!s.ok) e["error"] = s.error;
    arr.push_back(std::move(e));
  }
  return arr;
}

void write_curve_csv(const std::filesystem::path& path,
                     const std::vector<double>& t, const VectorXd& gemf,
                     const VectorXd& mf, const VectorXd& full,
                     const VectorXd& reduced) {
  std::ofstream out(path);
  out << "t,gemf,meanfield,koopman_full,koopman_reduced\n";
  for (std::size_t k = 0; k < t.size(); ++k) {
    auto cell = [&](const VectorXd& v) {
      return static_cast<Eigen::Index>(k) < v.size()
                 ? format_double(v[static_cast<Eigen::Index>(k)])
                 : std::string("nan");
    };
    out << format_double(t[k]) << ',' << cell(gemf) << ',' << cell(mf) << ','
        << cell(full) << ',' << cell(reduced) << '\n';
  }
}

}  // namespace

void emit_report(const ReportBundle& b, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  fs::create_directories(dir / "report");

  std::vector<fs::path> artifacts;
  auto track = [&](const fs::path& p) { artifacts.push_back(p); };

  write_text_file(dir / "config.json", b.config.to_json_string());
  track(dir / "config.json");

  if (b.primary) {
    save_graph(b.primary->graph, dir / "graph.json");
    track(dir / "graph.json");
    save_dictionary(b.primary->dict, dir / "dictionary.json");
    track(dir / "dictionary.json");
    save_dataset(b.primary->dataset, dir / "dataset");
    track(dir / "dataset/X.csv");
    track(dir / "dataset/U.csv");
    track(dir / "dataset/EPsiY.csv");
    track(dir / "dataset/manifest.json");
    if (b.primary->full) {
      save_model(*b.primary->full, dir / "model_full.json");
      track(dir / "model_full.json");
    }
    if (b.primary->reduced) {
      save_model(*b.primary->reduced, dir / "model_reduced.json");
      track(dir / "model_reduced.json");
    }
  }

  if (!b.curve_t.empty()) {
    write_curve_csv(dir / "report/fraction_curves.csv", b.curve_t, b.curve_gemf,
                    b.curve_meanfield, b.curve_full, b.curve_reduced);
    track(dir / "report/fraction_curves.csv");
  }
  if (!b.varying_t.empty()) {
    std::ofstream out(dir / "report/varying_fraction_curves.csv");
    out << "t,beta_mean,gemf,meanfield,koopman_full,koopman_reduced\n";
    for (std::size_t k = 0; k < b.varying_t.size(); ++k) {
      auto ki = static_cast<Eigen::Index>(k);
      double beta_mean =
          ki < b.varying_beta.rows() ? b.varying_beta(ki, 0) : std::nan("");
      out << format_double(b.varying_t[k]) << ',' << format_double(beta_mean);
      for (int c = 0; c < 4; ++c)
        out << ',' << format_double(b.varying_curves(ki, c));
      out << '\n';
    }
    out.close();
    track(dir / "report/varying_fraction_curves.csv");
  }
  if (!b.errors_by_rbf.empty()) {
    std::ofstream out(dir / "report/errors_by_rbf.csv");
    out << "k_rbf,network,err_full,err_reduced\n";
    for (const auto& r : b.errors_by_rbf)
      out << static_cast<int>(r.x) << ',' << r.network << ','
          << format_double(r.err_full_pct) << ','
          << format_double(r.err_reduced_pct) << '\n';
    out.close();
    track(dir / "report/errors_by_rbf.csv");
  }
  if (!b.errors_by_r.empty()) {
    std::ofstream out(dir / "report/errors_by_r.csv");
    out << "r,network,err_full,err_reduced\n";
    for (const auto& r : b.errors_by_r)
      out << static_cast<int>(r.x) << ',' << r.network << ','
          << format_double(r.err_full_pct) << ','
          << format_double(r.err_reduced_pct) << '\n';
    out.close();
    track(dir / "report/errors_by_r.csv");
  }
  if (!b.errors_by_R.empty()) {
    std::ofstream out(dir / "report/errors_by_R.csv");
    out << "R,network,err_full,err_reduced\n";
    for (const auto& r : b.errors_by_R)
      out << format_double(r.x) << ',' << r.network << ','
          << format_double(r.err_full_pct) << ','
          << format_double(r.err_reduced_pct) << '\n';
    out.close();
    track(dir / "report/errors_by_R.csv");
  }
  if (!b.table1.empty()) {
    std::ofstream out(dir / "report/table1.csv");
    out << "network,u_low,u_high,err_full,err_reduced,reference_full,"
           "reference_reduced\n";
    for (const auto& r : b.table1)
      out << r.network << ',' << format_double(r.u_lo) << ','
          << format_double(r.u_hi) << ',' << format_double(r.err_full_pct)
          << ',' << format_double(r.err_reduced_pct) << ','
          << format_double(r.ref_full_pct) << ','
          << format_double(r.ref_reduced_pct) << '\n';
    out.close();
    track(dir / "report/table1.csv");
  }
  auto emit_log = [&](const std::optional<ClosedLoopLog>& log,
                      const std::string& stem) {
    if (!log) return;
    write_closed_loop_csv(*log, dir / ("report/" + stem + ".csv"));
    track(dir / ("report/" + stem + ".csv"));
    write_closed_loop_inputs(*log, dir / ("report/" + stem + "_inputs.csv"));
    track(dir / ("report/" + stem + "_inputs.csv"));
  };
  emit_log(b.mpc_full, "mpc_log");
  emit_log(b.mpc_reduced, "mpc_log_reduced");
  emit_log(b.mpc_uniform, "mpc_log_uniform");
  if (b.control_vs_katz.size() > 0) {
    std::ofstream out(dir / "report/control_vs_katz.csv");
    out << "node,katz,u_full,u_reduced\n";
    for (Eigen::Index i = 0; i < b.control_vs_katz.rows(); ++i)
      out << static_cast<int>(b.control_vs_katz(i, 0)) << ','
          << format_double(b.control_vs_katz(i, 1)) << ','
          << format_double(b.control_vs_katz(i, 2)) << ','
          << format_double(b.control_vs_katz(i, 3)) << '\n';
    out.close();
    track(dir / "report/control_vs_katz.csv");
  }
  if (!b.transitions.empty()) {
    std::ofstream out(dir / "report/transitions.csv");
    out << "network,mpc_full,mpc_reduced,uniform,reference_full,"
           "reference_reduced\n";
    for (const auto& r : b.transitions)
      out << r.network << ',' << format_double(r.mpc_full) << ','
          << format_double(r.mpc_reduced) << ',' << format_double(r.uniform)
          << ',' << format_double(r.ref_full) << ','
          << format_double(r.ref_reduced) << '\n';
    out.close();
    track(dir / "report/transitions.csv");
  }

  // summary.json: headline numbers plus stage statuses
  json summary;
  summary["name"] = b.config.name;
  summary["anchor"] = b.config.anchor;
  summary["stages"] = stage_json(b.stages);
  if (b.primary) {
    summary["fit"] = {
        {"residual_AB", b.primary->full_report.residual_AB},
        {"residual_C", b.primary->full_report.residual_C},
        {"ridge", b.primary->full_report.ridge},
    };
    summary["errors"] = {{"full_pct", b.err_full.mean_error * 100.0},
                         {"reduced_pct", b.err_reduced.mean_error * 100.0}};
  }
  if (!b.config.mpc_scenario.empty()) {
    summary["mpc"] = {{"scenario", b.config.mpc_scenario},
                      {"p", b.config.mpc_horizon},
                      {"u_T", b.config.mpc_budget_fraction *
                                  b.config.beta0 * b.config.n},
                      {"steps", b.config.mpc_steps}};
  }
  write_text_file(dir / "report/summary.json", summary.dump(2) + "\n");
  track(dir / "report/summary.json");

  json manifest;
  manifest["config"] = json::parse(b.config.to_json_string());
  manifest["stages"] = stage_json(b.stages);
  json files = json::array();
  for (const auto& p : artifacts) {
    json e;
    e["path"] = fs::relative(p, dir).generic_string();
    e["fnv1a64"] = to_hex(hash_file(p));
    files.push_back(std::move(e));
  }
  manifest["artifacts"] = std::move(files);
  write_text_file(dir / "manifest.json", manifest.dump(2) + "\n");
}

}  // namespace netkoop
