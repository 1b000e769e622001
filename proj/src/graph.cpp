#include "netkoop/graph.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <json.hpp>
#include <set>
#include <stdexcept>

#include "netkoop/rng.hpp"
#include "netkoop/util.hpp"

namespace netkoop {

using nlohmann::json;

std::string graph_model_name(GraphModel m) {
  switch (m) {
    case GraphModel::ER:
      return "er";
    case GraphModel::WS:
      return "ws";
    case GraphModel::GEO:
      return "geo";
  }
  return "er";
}

GraphModel graph_model_from_name(const std::string& name) {
  if (name == "er") return GraphModel::ER;
  if (name == "ws") return GraphModel::WS;
  if (name == "geo") return GraphModel::GEO;
  throw std::invalid_argument("unknown graph model: " + name);
}

std::vector<std::vector<int>> Graph::adjacency_lists() const {
  std::vector<std::vector<int>> adj(n);
  for (auto [i, j] : edges) {
    adj[i].push_back(j);
    adj[j].push_back(i);
  }
  return adj;
}

Eigen::MatrixXd Graph::adjacency_matrix() const {
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(n, n);
  for (auto [i, j] : edges) {
    a(i, j) = 1.0;
    a(j, i) = 1.0;
  }
  return a;
}

std::vector<int> Graph::degrees() const {
  std::vector<int> deg(n, 0);
  for (auto [i, j] : edges) {
    ++deg[i];
    ++deg[j];
  }
  return deg;
}

double Graph::average_degree() const {
  if (n == 0) return 0.0;
  return 2.0 * static_cast<double>(edges.size()) / n;
}

int Graph::max_degree() const {
  auto deg = degrees();
  return deg.empty() ? 0 : *std::max_element(deg.begin(), deg.end());
}

namespace {

void sort_edges(std::vector<std::pair<int, int>>& edges) {
  for (auto& e : edges)
    if (e.first > e.second) std::swap(e.first, e.second);
  std::sort(edges.begin(), edges.end());
}

std::vector<std::pair<int, int>> generate_er(int n, double p, Rng& rng) {
  std::vector<std::pair<int, int>> edges;
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      if (rng.u01() < p) edges.emplace_back(i, j);
  return edges;
}

std::vector<std::pair<int, int>> generate_ws(int n, double target_degree,
                                             double rewire_prob, Rng& rng) {
  int k = 2 * static_cast<int>(std::lround(target_degree / 2.0));
  int k_max = 2 * ((n - 1) / 2);  // largest even lattice degree on n nodes
  k = std::max(2, std::min(k, k_max));
  std::set<std::pair<int, int>> edge_set;
  auto key = [](int a, int b) {
    return a < b ? std::make_pair(a, b) : std::make_pair(b, a);
  };
  for (int i = 0; i < n; ++i)
    for (int j = 1; j <= k / 2; ++j) edge_set.insert(key(i, (i + j) % n));
  // standard rewiring pass: visit ring edges in construction order
  for (int j = 1; j <= k / 2; ++j) {
    for (int i = 0; i < n; ++i) {
      int tgt = (i + j) % n;
      if (rng.u01() >= rewire_prob) continue;
      auto old_edge = key(i, tgt);
      if (edge_set.count(old_edge) == 0) continue;  // already rewired away
      // draw replacement endpoint; skip when node i is saturated
      if (static_cast<int>(edge_set.size()) >= n * (n - 1) / 2) continue;
      int attempts = 0;
      for (;;) {
        int m = static_cast<int>(rng.index(static_cast<std::size_t>(n)));
        if (m != i && edge_set.count(key(i, m)) == 0) {
          edge_set.erase(old_edge);
          edge_set.insert(key(i, m));
          break;
        }
        if (++attempts > 8 * n) break;  // node effectively saturated
      }
    }
  }
  return {edge_set.begin(), edge_set.end()};
}

std::vector<std::pair<int, int>> generate_geo(int n, double radius, Rng& rng) {
  std::vector<double> x(n), y(n);
  for (int i = 0; i < n; ++i) {
    x[i] = rng.u01();
    y[i] = rng.u01();
  }
  double r2 = radius * radius;
  std::vector<std::pair<int, int>> edges;
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      double dx = x[i] - x[j], dy = y[i] - y[j];
      if (dx * dx + dy * dy <= r2) edges.emplace_back(i, j);
    }
  return edges;
}

}  // namespace

Graph generate_graph(GraphModel model, int n, double target_avg_degree,
                     const WsParams& aux, std::uint64_t seed) {
  if (n < 2) throw std::invalid_argument("graph: n must be >= 2");
  if (!(target_avg_degree > 0.0) || !(target_avg_degree <= n - 1))
    throw std::invalid_argument("graph: target_avg_degree must be in (0, n-1]");
  if (model == GraphModel::WS &&
      (aux.rewire_prob < 0.0 || aux.rewire_prob > 1.0))
    throw std::invalid_argument("graph: WS rewiring probability must be in [0,1]");

  Rng rng(derive_seed(seed, 0x67726170));  // independent of caller streams
  Graph g;
  g.n = n;
  g.model = graph_model_name(model);
  g.target_avg_degree = target_avg_degree;
  g.seed = seed;
  switch (model) {
    case GraphModel::ER: {
      double p = target_avg_degree / (n - 1);
      g.edges = generate_er(n, p, rng);
      g.aux_param = p;
      break;
    }
    case GraphModel::WS: {
      g.edges = generate_ws(n, target_avg_degree, aux.rewire_prob, rng);
      g.aux_param = aux.rewire_prob;
      break;
    }
    case GraphModel::GEO: {
      double radius =
          std::sqrt(target_avg_degree / (M_PI * (n - 1)));
      g.edges = generate_geo(n, radius, rng);
      g.aux_param = radius;
      break;
    }
  }
  sort_edges(g.edges);
  return g;
}

double spectral_radius(const Graph& g) {
  if (g.n <= 0) throw std::invalid_argument("spectral_radius: empty graph");
  if (g.edges.empty()) return 0.0;
  auto adj = g.adjacency_lists();
  int n = g.n;
  // Power iteration on A + I: the shift breaks the +/- lambda oscillation of
  // bipartite components while keeping the dominant eigenvector.
  Eigen::VectorXd v = Eigen::VectorXd::Ones(n) / std::sqrt(double(n));
  Eigen::VectorXd w(n);
  double lambda = 0.0;
  for (int iter = 0; iter < 100000; ++iter) {
    for (int i = 0; i < n; ++i) {
      double s = v[i];  // identity shift
      for (int j : adj[i]) s += v[j];
      w[i] = s;
    }
    double norm = w.norm();
    if (norm == 0.0) return 0.0;
    w /= norm;
    double rayleigh = 0.0;  // v^T (A+I) v with the fresh iterate
    for (int i = 0; i < n; ++i) {
      double s = w[i];
      for (int j : adj[i]) s += w[j];
      rayleigh += w[i] * s;
    }
    double next = rayleigh - 1.0;
    if (iter > 0 && std::abs(next - lambda) <= 1e-9 * std::max(1.0, std::abs(next))) {
      return std::max(0.0, next);
    }
    lambda = next;
    v = w;
  }
  return std::max(0.0, lambda);
}

CentralityVector katz_centrality(const Graph& g, double alpha, double beta_k) {
  if (!(beta_k > 0.0)) throw std::invalid_argument("katz: beta_k must be > 0");
  double lam = spectral_radius(g);
  if (alpha * lam >= 1.0)
    throw std::invalid_argument(
        "katz: alpha * spectral_radius >= 1, series diverges");
  auto adj = g.adjacency_lists();
  int n = g.n;
  Eigen::VectorXd c = Eigen::VectorXd::Constant(n, beta_k);
  Eigen::VectorXd next(n);
  for (int iter = 0; iter < 1000000; ++iter) {
    // c <- beta 1 + alpha A^T c  (A symmetric here, transpose kept for form)
    for (int i = 0; i < n; ++i) {
      double s = 0.0;
      for (int j : adj[i]) s += c[j];
      next[i] = beta_k + alpha * s;
    }
    double resid = 0.0;
    for (int i = 0; i < n; ++i) {
      double s = 0.0;
      for (int j : adj[i]) s += next[j];
      resid = std::max(resid, std::abs(next[i] - alpha * s - beta_k));
    }
    c = next;
    if (resid <= 1e-10) break;
  }
  CentralityVector out;
  out.values = c;
  out.alpha = alpha;
  out.beta_k = beta_k;
  return out;
}

CentralityVector katz_centrality(const Graph& g) {
  double lam = spectral_radius(g);
  double alpha = lam > 0.0 ? 0.9 / lam : 0.5;
  return katz_centrality(g, alpha, 1.0);
}

void save_graph(const Graph& g, const std::filesystem::path& path) {
  json j;
  j["n"] = g.n;
  j["model"] = g.model;
  j["params"] = {{"target_avg_degree", g.target_avg_degree},
                 {"aux", g.aux_param}};
  j["seed"] = g.seed;
  json edges = json::array();
  for (auto [a, b] : g.edges) edges.push_back({a, b});
  j["edges"] = std::move(edges);
  write_text_file(path, j.dump(2) + "\n");
}

Graph load_graph(const std::filesystem::path& path) {
  json j = json::parse(read_text_file(path));
  Graph g;
  if (!j.contains("n") || !j["n"].is_number_integer())
    throw std::runtime_error("graph parse error: missing integer field 'n'");
  g.n = j["n"].get<int>();
  if (g.n < 0) throw std::runtime_error("graph parse error: negative 'n'");
  g.model = j.value("model", std::string("custom"));
  if (j.contains("params")) {
    g.target_avg_degree = j["params"].value("target_avg_degree", 0.0);
    g.aux_param = j["params"].value("aux", 0.0);
  }
  g.seed = j.value("seed", std::uint64_t{0});
  if (!j.contains("edges") || !j["edges"].is_array())
    throw std::runtime_error("graph parse error: missing array field 'edges'");
  std::set<std::pair<int, int>> seen;
  for (const auto& e : j["edges"]) {
    if (!e.is_array() || e.size() != 2)
      throw std::runtime_error("graph parse error: edge is not a pair");
    int a = e[0].get<int>(), b = e[1].get<int>();
    if (a == b)
      throw std::runtime_error("graph parse error: self-loop [" +
                               std::to_string(a) + "," + std::to_string(b) + "]");
    if (a < 0 || b < 0 || a >= g.n || b >= g.n)
      throw std::runtime_error("graph parse error: edge endpoint out of range");
    auto key = a < b ? std::make_pair(a, b) : std::make_pair(b, a);
    if (!seen.insert(key).second)
      throw std::runtime_error("graph parse error: duplicate edge [" +
                               std::to_string(key.first) + "," +
                               std::to_string(key.second) + "]");
    g.edges.push_back(key);
  }
  std::sort(g.edges.begin(), g.edges.end());
  return g;
}

}  // namespace netkoop
