#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <string>

namespace netkoop {

/// Observable dictionary: constant-1 first, then k Gaussian RBFs
/// psi_j(x) = exp(-|x - c_j|^2 / (2 sigma^2)).
struct Dictionary {
  Eigen::MatrixXd centers;  // d x k, one center per column
  double sigma = 1.0;
  std::string dict_id;  // content hash of (centers, sigma)

  int dim() const { return static_cast<int>(centers.rows()); }
  int k() const { return static_cast<int>(centers.cols()); }
  int size() const { return k() + 1; }  // N = k + 1
};

/// Lloyd's algorithm with k-means++ seeding; best of 3 restarts by inertia,
/// <= 300 iterations or relative inertia change < 1e-6. Nearest-center ties
/// break toward the lowest center index. Deterministic given seed.
Eigen::MatrixXd kmeans_centers(const Eigen::MatrixXd& points, int k,
                               std::uint64_t seed);

Dictionary build_dictionary(const Eigen::MatrixXd& centers, double sigma);
/// sigma = median of all pairwise center distances.
Dictionary build_dictionary_median(const Eigen::MatrixXd& centers);

Eigen::VectorXd lift_state(const Dictionary& dict, const Eigen::VectorXd& x);
/// Column j of the result is psi(X.col(j)); first row is all ones.
Eigen::MatrixXd lift_states(const Dictionary& dict, const Eigen::MatrixXd& X);

std::string dictionary_content_hash(const Eigen::MatrixXd& centers,
                                    double sigma);

void save_dictionary(const Dictionary& dict, const std::filesystem::path& path);
Dictionary load_dictionary(const std::filesystem::path& path);

}  // namespace netkoop
