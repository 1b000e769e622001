#include "netkoop/gemf.hpp"

#include <algorithm>
#include <cmath>
#include <json.hpp>
#include <numeric>
#include <stdexcept>

#include "netkoop/util.hpp"

namespace netkoop {

using Eigen::MatrixXd;
using Eigen::VectorXd;

EpidemicParams EpidemicParams::uniform(int n, double beta0_value,
                                       double delta_value) {
  EpidemicParams p;
  p.beta0 = VectorXd::Constant(n, beta0_value);
  p.delta = VectorXd::Constant(n, delta_value);
  return p;
}

void EpidemicParams::validate(int n) const {
  if (beta0.size() != n || delta.size() != n)
    throw std::invalid_argument("epidemic params: length mismatch with graph");
  for (int i = 0; i < n; ++i) {
    if (!(beta0[i] >= 0.0) || !std::isfinite(beta0[i]) ||
        !(delta[i] >= 0.0) || !std::isfinite(delta[i]))
      throw std::invalid_argument("epidemic params: rates must be finite and >= 0");
  }
}

double infected_fraction(const BinaryState& x) {
  if (x.empty()) return 0.0;
  std::int64_t c = 0;
  for (auto v : x) c += v;
  return static_cast<double>(c) / static_cast<double>(x.size());
}

VectorXd state_to_vector(const BinaryState& x) {
  VectorXd v(static_cast<Eigen::Index>(x.size()));
  for (std::size_t i = 0; i < x.size(); ++i) v[static_cast<Eigen::Index>(i)] = x[i];
  return v;
}

BinaryState random_density_state(int n, Rng& rng) {
  double rho = rng.u01();
  BinaryState x(n, 0);
  for (int i = 0; i < n; ++i) x[i] = rng.u01() < rho ? 1 : 0;
  return x;
}

BinaryState random_fraction_state(int n, double fraction, Rng& rng) {
  int count = static_cast<int>(std::lround(fraction * n));
  count = std::clamp(count, 0, n);
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  for (int i = 0; i < count; ++i) {
    int j = i + static_cast<int>(rng.index(static_cast<std::size_t>(n - i)));
    std::swap(order[i], order[j]);
  }
  BinaryState x(n, 0);
  for (int i = 0; i < count; ++i) x[order[i]] = 1;
  return x;
}

namespace {

constexpr std::uint64_t kTagInit = 0x696e6974;   // snapshot initial draw
constexpr std::uint64_t kTagLift = 0x6c696674;   // ensemble stream root
constexpr std::uint64_t kTagPlant = 0x706c6e74;  // closed-loop plant
constexpr std::uint64_t kTagCurve = 0x63757276;  // ensemble curves

VectorXd effective_beta(const EpidemicParams& p, const VectorXd& u) {
  if (u.size() != p.beta0.size())
    throw std::invalid_argument("control input: length mismatch");
  VectorXd eff = p.beta0 - u;
  for (Eigen::Index i = 0; i < eff.size(); ++i) {
    if (!std::isfinite(u[i]) || u[i] < -1e-9 || eff[i] < -1e-9)
      throw std::invalid_argument(
          "control input: require 0 <= u_i <= beta0_i (negative effective rate)");
    if (eff[i] < 0.0) eff[i] = 0.0;
  }
  return eff;
}

// Event-driven core. Advances `state` from time 0 to `duration`; any sample
// times (sorted, within [0, duration]) receive the state at that instant.
// Returns the number of S -> I transitions.
std::int64_t gillespie_run(const std::vector<std::vector<int>>& adj,
                           const EpidemicParams& params, const VectorXd& eff_beta,
                           double duration, Rng& rng, BinaryState& state,
                           const std::vector<double>& sample_times,
                           const std::function<void(std::size_t, const BinaryState&)>& on_sample,
                           std::int64_t* event_count = nullptr) {
  const int n = static_cast<int>(adj.size());
  std::vector<int> inf_neighbors(n, 0);
  for (int i = 0; i < n; ++i)
    if (state[i])
      for (int j : adj[i]) ++inf_neighbors[j];

  std::vector<double> rate(n);
  auto node_rate = [&](int i) {
    return state[i] ? params.delta[i] : eff_beta[i] * inf_neighbors[i];
  };
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    rate[i] = node_rate(i);
    total += rate[i];
  }

  std::int64_t infections = 0;
  std::int64_t events = 0;
  double t = 0.0;
  std::size_t grid_pos = 0;

  auto flush_samples_until = [&](double up_to) {
    while (grid_pos < sample_times.size() && sample_times[grid_pos] <= up_to) {
      on_sample(grid_pos, state);
      ++grid_pos;
    }
  };

  for (;;) {
    if (total <= 0.0) break;  // absorbing (or all rates zero)
    double dt = rng.exponential(total);
    double t_next = t + dt;
    if (t_next >= duration) {
      flush_samples_until(duration);
      t = duration;
      break;
    }
    // samples strictly before the event see the pre-event state
    while (grid_pos < sample_times.size() && sample_times[grid_pos] < t_next) {
      on_sample(grid_pos, state);
      ++grid_pos;
    }
    // select the event node proportionally to rates
    double target = rng.u01() * total;
    double acc = 0.0;
    int node = -1;
    for (int i = 0; i < n; ++i) {
      if (rate[i] <= 0.0) continue;
      acc += rate[i];
      node = i;
      if (acc >= target) break;
    }
    if (node < 0) break;  // numerically empty event set

    if (state[node]) {
      // recovery I -> S
      state[node] = 0;
      double newr = eff_beta[node] * inf_neighbors[node];
      total += newr - rate[node];
      rate[node] = newr;
      for (int j : adj[node]) {
        --inf_neighbors[j];
        if (!state[j]) {
          total -= eff_beta[j];
          rate[j] -= eff_beta[j];
          if (rate[j] < 0.0) rate[j] = 0.0;
        }
      }
    } else {
      // infection S -> I
      state[node] = 1;
      ++infections;
      total += params.delta[node] - rate[node];
      rate[node] = params.delta[node];
      for (int j : adj[node]) {
        ++inf_neighbors[j];
        if (!state[j]) {
          total += eff_beta[j];
          rate[j] += eff_beta[j];
        }
      }
    }
    t = t_next;
    if ((++events & 0xfff) == 0) {
      // periodic exact refresh caps floating drift in the running total
      total = 0.0;
      for (int i = 0; i < n; ++i) total += rate[i];
    }
  }
  flush_samples_until(duration);
  if (event_count) *event_count = events;
  return infections;
}

void check_state(const BinaryState& x0, int n) {
  if (static_cast<int>(x0.size()) != n)
    throw std::invalid_argument("state: length mismatch with graph");
  for (auto v : x0)
    if (v != 0 && v != 1)
      throw std::invalid_argument("state: entries must be 0 or 1");
}

}  // namespace

TrajectoryResult simulate_trajectory(const Graph& g, const EpidemicParams& p,
                                     const BinaryState& x0, const VectorXd& u,
                                     double duration, std::uint64_t seed) {
  p.validate(g.n);
  check_state(x0, g.n);
  if (!(duration > 0.0))
    throw std::invalid_argument("simulate: duration must be > 0");
  VectorXd eff = effective_beta(p, u);
  auto adj = g.adjacency_lists();
  TrajectoryResult out;
  out.state = x0;
  Rng rng(seed);
  out.new_infections =
      gillespie_run(adj, p, eff, duration, rng, out.state, {}, {}, &out.events);
  return out;
}

VectorXd expected_lift(const Graph& g, const EpidemicParams& p,
                       const BinaryState& x0, const VectorXd& u,
                       double duration, int n_sim, const Dictionary& dict,
                       std::uint64_t seed) {
  if (n_sim < 1) throw std::invalid_argument("expected_lift: n_sim must be >= 1");
  p.validate(g.n);
  check_state(x0, g.n);
  VectorXd eff = effective_beta(p, u);
  auto adj = g.adjacency_lists();
  VectorXd acc = VectorXd::Zero(dict.size());
  double inv = 1.0 / static_cast<double>(n_sim);
  for (int j = 0; j < n_sim; ++j) {
    BinaryState y = x0;
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(j)));
    gillespie_run(adj, p, eff, duration, rng, y, {}, {});
    acc += lift_state(dict, state_to_vector(y)) * inv;
  }
  return acc;
}

RawSnapshots collect_raw(const Graph& g, const EpidemicParams& p, int n_traj,
                         int n_sim, double duration, const VectorXd& u_low,
                         const VectorXd& u_high, std::uint64_t seed,
                         int threads) {
  if (n_traj < 1) throw std::invalid_argument("collect: n_traj must be >= 1");
  if (n_sim < 1) throw std::invalid_argument("collect: n_sim must be >= 1");
  p.validate(g.n);
  const int n = g.n;
  if (u_low.size() != n || u_high.size() != n)
    throw std::invalid_argument("collect: input box length mismatch");
  for (int i = 0; i < n; ++i) {
    if (!(u_low[i] <= u_high[i]))
      throw std::invalid_argument("collect: u_low must be <= u_high");
    if (u_low[i] < -1e-12 || u_high[i] > p.beta0[i] + 1e-12)
      throw std::invalid_argument("collect: input box must lie within [0, beta0]");
  }
  auto adj = g.adjacency_lists();

  RawSnapshots raw;
  raw.X.resize(n, n_traj);
  raw.U.resize(n, n_traj);
  raw.Y.resize(n, static_cast<Eigen::Index>(n_traj) * n_sim);
  raw.n_sim = n_sim;
  raw.horizon = duration;
  raw.seed = seed;

  parallel_for(static_cast<std::size_t>(n_traj), threads, [&](std::size_t ti) {
    auto i = static_cast<Eigen::Index>(ti);
    Rng draw(derive_seed(seed, kTagInit, ti));
    BinaryState x0 = random_density_state(n, draw);
    VectorXd u(n);
    for (int c = 0; c < n; ++c) u[c] = draw.uniform(u_low[c], u_high[c]);
    raw.X.col(i) = state_to_vector(x0);
    raw.U.col(i) = u;
    VectorXd eff = effective_beta(p, u);
    std::uint64_t lift_seed = derive_seed(seed, kTagLift, ti);
    for (int j = 0; j < n_sim; ++j) {
      BinaryState y = x0;
      Rng rng(derive_seed(lift_seed, static_cast<std::uint64_t>(j)));
      gillespie_run(adj, p, eff, duration, rng, y, {}, {});
      raw.Y.col(i * n_sim + j) = state_to_vector(y);
    }
  });
  return raw;
}

SnapshotDataset dataset_from_raw(const RawSnapshots& raw,
                                 const Dictionary& dict) {
  if (raw.X.rows() != dict.dim())
    throw std::invalid_argument("dataset: dictionary dimension mismatch");
  SnapshotDataset ds;
  ds.X = raw.X;
  ds.U = raw.U;
  ds.dict_id = dict.dict_id;
  ds.horizon = raw.horizon;
  ds.n_sim = raw.n_sim;
  ds.seed = raw.seed;
  const Eigen::Index m = raw.X.cols();
  ds.EPsiY.resize(dict.size(), m);
  double inv = 1.0 / static_cast<double>(raw.n_sim);
  for (Eigen::Index i = 0; i < m; ++i) {
    VectorXd acc = VectorXd::Zero(dict.size());
    for (int j = 0; j < raw.n_sim; ++j)
      acc += lift_state(dict, raw.Y.col(i * raw.n_sim + j)) * inv;
    ds.EPsiY.col(i) = acc;
  }
  return ds;
}

SnapshotDataset collect_dataset(const Graph& g, const EpidemicParams& p,
                                const Dictionary& dict, int n_traj, int n_sim,
                                double duration, const VectorXd& u_low,
                                const VectorXd& u_high, std::uint64_t seed,
                                int threads) {
  if (dict.dim() != g.n)
    throw std::invalid_argument("collect: dictionary dimension mismatch");
  RawSnapshots raw = collect_raw(g, p, n_traj, n_sim, duration, u_low, u_high,
                                 seed, threads);
  return dataset_from_raw(raw, dict);
}

VectorXd ensemble_fraction_curve(const Graph& g, const EpidemicParams& p,
                                 const BinaryState& x0, const VectorXd& u,
                                 const std::vector<double>& t_grid, int n_runs,
                                 std::uint64_t seed, int threads) {
  if (n_runs < 1) throw std::invalid_argument("curve: n_runs must be >= 1");
  for (std::size_t i = 1; i < t_grid.size(); ++i)
    if (!(t_grid[i] > t_grid[i - 1]))
      throw std::invalid_argument("curve: t_grid must be increasing");
  if (!t_grid.empty() && t_grid.front() < 0.0)
    throw std::invalid_argument("curve: t_grid must be nonnegative");
  p.validate(g.n);
  check_state(x0, g.n);
  VectorXd eff = effective_beta(p, u);
  auto adj = g.adjacency_lists();
  double duration = t_grid.empty() ? 0.0 : t_grid.back();
  const auto n_grid = static_cast<Eigen::Index>(t_grid.size());

  MatrixXd per_run(n_grid, n_runs);
  parallel_for(static_cast<std::size_t>(n_runs), threads, [&](std::size_t r) {
    BinaryState x = x0;
    Rng rng(derive_seed(seed, kTagCurve, r));
    if (duration > 0.0) {
      gillespie_run(adj, p, eff, duration, rng, x, t_grid,
                    [&](std::size_t gi, const BinaryState& s) {
                      per_run(static_cast<Eigen::Index>(gi),
                              static_cast<Eigen::Index>(r)) = infected_fraction(s);
                    });
    } else {
      for (Eigen::Index gi = 0; gi < n_grid; ++gi)
        per_run(gi, static_cast<Eigen::Index>(r)) = infected_fraction(x);
    }
  });
  VectorXd mean = VectorXd::Zero(n_grid);
  for (int r = 0; r < n_runs; ++r) mean += per_run.col(r);
  return mean / static_cast<double>(n_runs);
}

VectorXd ensemble_marginals(const Graph& g, const EpidemicParams& p,
                            const BinaryState& x0, const VectorXd& u,
                            double duration, int n_runs, std::uint64_t seed,
                            int threads) {
  if (n_runs < 1) throw std::invalid_argument("marginals: n_runs must be >= 1");
  p.validate(g.n);
  check_state(x0, g.n);
  VectorXd eff = effective_beta(p, u);
  auto adj = g.adjacency_lists();
  MatrixXd finals(g.n, n_runs);
  parallel_for(static_cast<std::size_t>(n_runs), threads, [&](std::size_t r) {
    BinaryState x = x0;
    Rng rng(derive_seed(seed, kTagCurve, r));
    gillespie_run(adj, p, eff, duration, rng, x, {}, {});
    finals.col(static_cast<Eigen::Index>(r)) = state_to_vector(x);
  });
  VectorXd mean = VectorXd::Zero(g.n);
  for (int r = 0; r < n_runs; ++r) mean += finals.col(r);
  return mean / static_cast<double>(n_runs);
}

GemfPlant::GemfPlant(const Graph& g, EpidemicParams p, BinaryState x0,
                     std::uint64_t seed)
    : adj_(g.adjacency_lists()),
      params_(std::move(p)),
      state_(std::move(x0)),
      rng_(derive_seed(seed, kTagPlant)) {
  params_.validate(g.n);
  check_state(state_, g.n);
}

void GemfPlant::advance(const VectorXd& u, double duration) {
  if (!(duration > 0.0))
    throw std::invalid_argument("plant: duration must be > 0");
  VectorXd eff = effective_beta(params_, u);
  infections_ += gillespie_run(adj_, params_, eff, duration, rng_, state_, {}, {});
  time_ += duration;
}

void save_dataset(const SnapshotDataset& ds, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_csv_matrix(dir / "X.csv", ds.X.transpose());
  write_csv_matrix(dir / "U.csv", ds.U.transpose());
  write_csv_matrix(dir / "EPsiY.csv", ds.EPsiY.transpose());
  nlohmann::json j;
  j["n"] = ds.X.rows();
  j["m"] = ds.X.cols();
  j["N"] = ds.EPsiY.rows();
  j["T"] = ds.horizon;
  j["n_sim"] = ds.n_sim;
  j["dict_id"] = ds.dict_id;
  j["seed"] = ds.seed;
  write_text_file(dir / "manifest.json", j.dump(2) + "\n");
}

SnapshotDataset load_dataset(const std::filesystem::path& dir) {
  nlohmann::json j = nlohmann::json::parse(read_text_file(dir / "manifest.json"));
  SnapshotDataset ds;
  ds.X = read_csv_matrix(dir / "X.csv").transpose();
  ds.U = read_csv_matrix(dir / "U.csv").transpose();
  ds.EPsiY = read_csv_matrix(dir / "EPsiY.csv").transpose();
  ds.dict_id = j.value("dict_id", std::string());
  ds.horizon = j.value("T", 1.0);
  ds.n_sim = j.value("n_sim", 1);
  ds.seed = j.value("seed", std::uint64_t{0});
  if (ds.X.rows() != j.value("n", Eigen::Index(ds.X.rows())) ||
      ds.X.cols() != j.value("m", Eigen::Index(ds.X.cols())) ||
      ds.EPsiY.rows() != j.value("N", Eigen::Index(ds.EPsiY.rows())))
    throw std::runtime_error("dataset parse error: manifest dims do not match csv");
  if (ds.X.cols() != ds.U.cols() || ds.X.cols() != ds.EPsiY.cols())
    throw std::runtime_error("dataset parse error: column counts differ");
  return ds;
}

}  // namespace netkoop
