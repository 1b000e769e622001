#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace netkoop {

enum class GraphModel { ER, WS, GEO };

std::string graph_model_name(GraphModel m);
GraphModel graph_model_from_name(const std::string& name);

/// Undirected simple graph stored as a sorted edge list (i < j, lexicographic).
/// Immutable after construction; safe to share across threads.
struct Graph {
  int n = 0;
  std::vector<std::pair<int, int>> edges;

  // generator provenance
  std::string model;  // "er" | "ws" | "geo" | "custom"
  double target_avg_degree = 0.0;
  double aux_param = 0.0;  // WS: rewiring probability; GEO: radius
  std::uint64_t seed = 0;

  std::vector<std::vector<int>> adjacency_lists() const;
  Eigen::MatrixXd adjacency_matrix() const;
  std::vector<int> degrees() const;
  double average_degree() const;
  int max_degree() const;

  bool operator==(const Graph& other) const {
    return n == other.n && edges == other.edges;
  }
};

struct WsParams {
  double rewire_prob = 0.1;
};

// ER: edge probability d/(n-1). WS: ring lattice of even degree nearest d,
// then rewiring. GEO: uniform points in the unit square, connection radius
// sqrt(d / (pi (n-1))) (plain Euclidean distance, no wraparound).
Graph generate_graph(GraphModel model, int n, double target_avg_degree,
                     const WsParams& aux, std::uint64_t seed);

struct CentralityVector {
  Eigen::VectorXd values;
  std::string kind = "katz";
  double alpha = 0.0;
  double beta_k = 1.0;
};

/// Solves (I - alpha A^T) c = beta_k 1 by fixed-point iteration to residual
/// <= 1e-10. Requires alpha * spectral_radius < 1.
CentralityVector katz_centrality(const Graph& g, double alpha, double beta_k);
/// Defaults alpha = 0.9 / spectral_radius, beta_k = 1.
CentralityVector katz_centrality(const Graph& g);

/// Largest adjacency eigenvalue via shifted power iteration, rel. tol 1e-9.
double spectral_radius(const Graph& g);

void save_graph(const Graph& g, const std::filesystem::path& path);
Graph load_graph(const std::filesystem::path& path);

}  // namespace netkoop
