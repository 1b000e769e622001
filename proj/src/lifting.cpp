#include "netkoop/lifting.hpp"

#include <algorithm>
#include <cmath>
#include <json.hpp>
#include <limits>
#include <stdexcept>
#include <vector>

#include "netkoop/rng.hpp"
#include "netkoop/util.hpp"

namespace netkoop {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using nlohmann::json;

namespace {

// Squared distances of every point to every center: k x m.
MatrixXd sq_distances(const MatrixXd& points, const MatrixXd& centers) {
  VectorXd pnorm = points.colwise().squaredNorm();
  VectorXd cnorm = centers.colwise().squaredNorm();
  MatrixXd d = -2.0 * centers.transpose() * points;
  d.colwise() += cnorm;
  d.rowwise() += pnorm.transpose();
  return d.cwiseMax(0.0);
}

struct LloydResult {
  MatrixXd centers;
  double inertia = std::numeric_limits<double>::infinity();
};

LloydResult lloyd_once(const MatrixXd& points, int k, Rng& rng) {
  const Eigen::Index d = points.rows(), m = points.cols();
  MatrixXd centers(d, k);

  // k-means++ seeding
  std::size_t first = rng.index(static_cast<std::size_t>(m));
  centers.col(0) = points.col(static_cast<Eigen::Index>(first));
  VectorXd min_d2 =
      (points.colwise() - centers.col(0)).colwise().squaredNorm().transpose();
  for (int c = 1; c < k; ++c) {
    double total = min_d2.sum();
    Eigen::Index pick = 0;
    if (total > 0.0) {
      double target = rng.u01() * total;
      double acc = 0.0;
      pick = m - 1;
      for (Eigen::Index i = 0; i < m; ++i) {
        acc += min_d2[i];
        if (acc >= target) {
          pick = i;
          break;
        }
      }
    } else {
      pick = static_cast<Eigen::Index>(rng.index(static_cast<std::size_t>(m)));
    }
    centers.col(c) = points.col(pick);
    VectorXd d2 =
        (points.colwise() - centers.col(c)).colwise().squaredNorm().transpose();
    min_d2 = min_d2.cwiseMin(d2);
  }

  std::vector<int> assign(m, 0);
  double inertia = std::numeric_limits<double>::infinity();
  for (int iter = 0; iter < 300; ++iter) {
    MatrixXd d2 = sq_distances(points, centers);
    double new_inertia = 0.0;
    for (Eigen::Index i = 0; i < m; ++i) {
      int best = 0;
      double bestv = d2(0, i);
      for (int c = 1; c < k; ++c) {
        if (d2(c, i) < bestv) {  // strict: ties keep the lowest index
          bestv = d2(c, i);
          best = c;
        }
      }
      assign[i] = best;
      new_inertia += bestv;
    }
    MatrixXd sums = MatrixXd::Zero(d, k);
    std::vector<Eigen::Index> counts(k, 0);
    for (Eigen::Index i = 0; i < m; ++i) {
      sums.col(assign[i]) += points.col(i);
      ++counts[assign[i]];
    }
    for (int c = 0; c < k; ++c) {
      if (counts[c] > 0) {
        centers.col(c) = sums.col(c) / static_cast<double>(counts[c]);
      } else {
        // adopt the point currently farthest from its center
        Eigen::Index far = 0;
        double farv = -1.0;
        for (Eigen::Index i = 0; i < m; ++i) {
          double v = d2(assign[i], i);
          if (v > farv) {
            farv = v;
            far = i;
          }
        }
        centers.col(c) = points.col(far);
      }
    }
    if (std::isfinite(inertia)) {
      double denom = std::max(inertia, 1e-300);
      if (std::abs(inertia - new_inertia) / denom < 1e-6) {
        inertia = new_inertia;
        break;
      }
    }
    inertia = new_inertia;
  }
  return {centers, inertia};
}

std::size_t count_distinct(const MatrixXd& points) {
  std::vector<Eigen::Index> idx(points.cols());
  for (Eigen::Index i = 0; i < points.cols(); ++i) idx[i] = i;
  auto less = [&](Eigen::Index a, Eigen::Index b) {
    for (Eigen::Index r = 0; r < points.rows(); ++r) {
      if (points(r, a) < points(r, b)) return true;
      if (points(r, a) > points(r, b)) return false;
    }
    return false;
  };
  std::sort(idx.begin(), idx.end(), less);
  std::size_t distinct = points.cols() > 0 ? 1 : 0;
  for (std::size_t i = 1; i < idx.size(); ++i)
    if (less(idx[i - 1], idx[i])) ++distinct;
  return distinct;
}

}  // namespace

MatrixXd kmeans_centers(const MatrixXd& points, int k, std::uint64_t seed) {
  if (k < 1) throw std::invalid_argument("kmeans: k must be >= 1");
  if (points.cols() == 0) throw std::invalid_argument("kmeans: no points");
  if (static_cast<std::size_t>(k) > count_distinct(points))
    throw std::invalid_argument("kmeans: k exceeds number of distinct points");

  LloydResult best;
  for (int restart = 0; restart < 3; ++restart) {
    Rng rng(derive_seed(seed, 0x6b6d6561, static_cast<std::uint64_t>(restart)));
    LloydResult r = lloyd_once(points, k, rng);
    if (r.inertia < best.inertia) best = std::move(r);
  }
  return best.centers;
}

std::string dictionary_content_hash(const MatrixXd& centers, double sigma) {
  std::uint64_t h = hash_doubles(centers.data(),
                                 static_cast<std::size_t>(centers.size()));
  h = hash_doubles(&sigma, 1, h);
  return to_hex(h);
}

Dictionary build_dictionary(const MatrixXd& centers, double sigma) {
  if (centers.cols() == 0)
    throw std::invalid_argument("dictionary: no centers");
  if (!(sigma > 0.0))
    throw std::invalid_argument("dictionary: sigma must be > 0");
  Dictionary d;
  d.centers = centers;
  d.sigma = sigma;
  d.dict_id = dictionary_content_hash(centers, sigma);
  return d;
}

Dictionary build_dictionary_median(const MatrixXd& centers) {
  const Eigen::Index k = centers.cols();
  if (k < 2)
    throw std::invalid_argument(
        "dictionary: median heuristic needs >= 2 centers");
  std::vector<double> dists;
  dists.reserve(static_cast<std::size_t>(k) * (k - 1) / 2);
  for (Eigen::Index a = 0; a < k; ++a)
    for (Eigen::Index b = a + 1; b < k; ++b)
      dists.push_back((centers.col(a) - centers.col(b)).norm());
  std::sort(dists.begin(), dists.end());
  std::size_t n = dists.size();
  double median = (n % 2 == 1) ? dists[n / 2]
                               : 0.5 * (dists[n / 2 - 1] + dists[n / 2]);
  if (!(median > 0.0))
    throw std::invalid_argument("dictionary: centers not pairwise distinct");
  return build_dictionary(centers, median);
}

VectorXd lift_state(const Dictionary& dict, const VectorXd& x) {
  if (x.size() != dict.centers.rows())
    throw std::invalid_argument("lift: state dimension mismatch");
  VectorXd out(dict.size());
  out[0] = 1.0;
  double inv = 1.0 / (2.0 * dict.sigma * dict.sigma);
  for (int j = 0; j < dict.k(); ++j) {
    double d2 = (x - dict.centers.col(j)).squaredNorm();
    out[j + 1] = std::exp(-d2 * inv);
  }
  return out;
}

MatrixXd lift_states(const Dictionary& dict, const MatrixXd& X) {
  if (X.rows() != dict.centers.rows())
    throw std::invalid_argument("lift: state dimension mismatch");
  const Eigen::Index m = X.cols();
  MatrixXd out(dict.size(), m);
  out.row(0).setOnes();
  if (m == 0) return out;
  MatrixXd d2 = sq_distances(X, dict.centers);
  double inv = 1.0 / (2.0 * dict.sigma * dict.sigma);
  out.bottomRows(dict.k()) = (-d2 * inv).array().exp();
  return out;
}

void save_dictionary(const Dictionary& dict,
                     const std::filesystem::path& path) {
  json j;
  j["sigma"] = dict.sigma;
  json centers = json::array();
  for (Eigen::Index c = 0; c < dict.centers.cols(); ++c) {
    json col = json::array();
    for (Eigen::Index r = 0; r < dict.centers.rows(); ++r)
      col.push_back(dict.centers(r, c));
    centers.push_back(std::move(col));
  }
  j["centers"] = std::move(centers);
  j["dict_id"] = dict.dict_id;
  write_text_file(path, j.dump() + "\n");
}

Dictionary load_dictionary(const std::filesystem::path& path) {
  json j = json::parse(read_text_file(path));
  if (!j.contains("sigma") || !j.contains("centers"))
    throw std::runtime_error("dictionary parse error: missing sigma/centers");
  const auto& cj = j["centers"];
  if (!cj.is_array() || cj.empty())
    throw std::runtime_error("dictionary parse error: centers must be a nonempty array");
  Eigen::Index k = static_cast<Eigen::Index>(cj.size());
  Eigen::Index d = static_cast<Eigen::Index>(cj[0].size());
  MatrixXd centers(d, k);
  for (Eigen::Index c = 0; c < k; ++c) {
    if (static_cast<Eigen::Index>(cj[c].size()) != d)
      throw std::runtime_error("dictionary parse error: ragged centers");
    for (Eigen::Index r = 0; r < d; ++r) centers(r, c) = cj[c][r].get<double>();
  }
  Dictionary out = build_dictionary(centers, j["sigma"].get<double>());
  if (j.contains("dict_id") && j["dict_id"].get<std::string>() != out.dict_id)
    throw std::runtime_error("dictionary parse error: dict_id does not match content");
  return out;
}

}  // namespace netkoop
