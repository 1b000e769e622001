#include "netkoop/koopman.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <iostream>
#include <json.hpp>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "netkoop/util.hpp"

namespace netkoop {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using nlohmann::json;

VectorXd KoopmanModel::encode(const VectorXd& psi) const {
  if (psi.size() != dims.N)
    throw std::invalid_argument("model: lifted state dimension mismatch");
  if (variant == Variant::reduced) return encoder * psi;
  return psi;
}

namespace {

constexpr std::uint64_t kTagEvalDraw = 0x6576646c;
constexpr std::uint64_t kTagEvalRef = 0x65767266;

// Ridge-regularized normal equations for min |T - M R|_F over M:
// M (R R^T + lambda I) = T R^T. Returns M.
MatrixXd ridge_solve(const MatrixXd& R, const MatrixXd& T, double ridge_rel,
                     double* ridge_out) {
  MatrixXd G = R * R.transpose();
  double mean_diag = G.trace() / static_cast<double>(G.rows());
  if (!(mean_diag > 0.0))
    throw std::runtime_error("fit error: degenerate (all-zero) regressor");
  double lambda = ridge_rel * mean_diag;
  G.diagonal().array() += lambda;
  if (ridge_out) *ridge_out = lambda;
  // G is symmetric positive definite after the ridge shift
  Eigen::LDLT<MatrixXd> ldlt(G);
  MatrixXd Mt = ldlt.solve(R * T.transpose());
  return Mt.transpose();
}

double rel_frobenius(const MatrixXd& resid, const MatrixXd& ref) {
  double denom = ref.norm();
  return denom > 0.0 ? resid.norm() / denom : resid.norm();
}

void check_fit_inputs(const MatrixXd& PsiX, const MatrixXd& U,
                      const MatrixXd& EPsiY, const MatrixXd& X) {
  const Eigen::Index m = PsiX.cols();
  if (U.cols() != m || EPsiY.cols() != m || X.cols() != m)
    throw std::invalid_argument("fit: snapshot counts differ across matrices");
  if (EPsiY.rows() != PsiX.rows())
    throw std::invalid_argument("fit: lifted dimensions differ");
  if (m == 0) throw std::invalid_argument("fit: empty dataset");
}

}  // namespace

std::pair<KoopmanModel, FitReport> fit_full_matrices(
    const MatrixXd& PsiX, const MatrixXd& U, const MatrixXd& EPsiY,
    const MatrixXd& X, const std::string& dict_id, const FitOptions& opts) {
  check_fit_inputs(PsiX, U, EPsiY, X);
  const Eigen::Index N = PsiX.rows(), l = U.rows(), m = PsiX.cols(),
                     n = X.rows();

  FitReport report;
  report.underdetermined = m < N + l;
  if (report.underdetermined)
    std::cerr << "fit_full: m = " << m << " < N + l = " << (N + l)
              << "; regression is underdetermined\n";

  MatrixXd R(N + l, m);
  R.topRows(N) = PsiX;
  R.bottomRows(l) = U;
  MatrixXd AB = ridge_solve(R, EPsiY, opts.ridge_rel, &report.ridge);
  MatrixXd C = ridge_solve(PsiX, X, opts.ridge_rel, nullptr);

  KoopmanModel model;
  model.variant = KoopmanModel::Variant::full;
  model.A = AB.leftCols(N);
  model.B = AB.rightCols(l);
  model.C = C;
  model.dict_id = dict_id;
  model.dims = {static_cast<int>(n), static_cast<int>(l), static_cast<int>(N),
                static_cast<int>(N)};

  report.residual_AB =
      rel_frobenius(EPsiY - model.A * PsiX - model.B * U, EPsiY);
  report.residual_C = rel_frobenius(X - C * PsiX, X);
  return {std::move(model), report};
}

std::pair<KoopmanModel, FitReport> fit_full(const SnapshotDataset& data,
                                            const Dictionary& dict,
                                            const FitOptions& opts) {
  if (data.dict_id != dict.dict_id)
    throw std::invalid_argument("fit: dataset was lifted with a different dictionary");
  MatrixXd PsiX = lift_states(dict, data.X);
  return fit_full_matrices(PsiX, data.U, data.EPsiY, data.X, dict.dict_id,
                           opts);
}

ReducedFitter::ReducedFitter(const MatrixXd& PsiX, const MatrixXd& U,
                             const MatrixXd& EPsiY, const MatrixXd& X,
                             std::string dict_id, const FitOptions& opts)
    : dict_id_(std::move(dict_id)), PsiX_(PsiX), U_(U), EPsiY_(EPsiY) {
  check_fit_inputs(PsiX, U, EPsiY, X);
  const Eigen::Index N = PsiX.rows(), l = U.rows(), m = PsiX.cols();
  dims_ = {static_cast<int>(X.rows()), static_cast<int>(l),
           static_cast<int>(N), 0};
  underdetermined_ = m < N + l;

  MatrixXd R(N + l, m);
  R.topRows(N) = PsiX;
  R.bottomRows(l) = U;
  if (!(R.norm() > 0.0))
    throw std::runtime_error("fit error: degenerate (all-zero) regressor");

  Eigen::BDCSVD<MatrixXd> svd1(R, Eigen::ComputeThinU | Eigen::ComputeThinV);
  sv_regressor_ = svd1.singularValues();
  double cut1 = opts.sv_cutoff_rel * sv_regressor_[0];
  VectorXd inv_s1 = VectorXd::Zero(sv_regressor_.size());
  rank_regressor_ = 0;
  for (Eigen::Index i = 0; i < sv_regressor_.size(); ++i) {
    if (sv_regressor_[i] > cut1) {
      inv_s1[i] = 1.0 / sv_regressor_[i];
      ++rank_regressor_;
    }
  }
  MatrixXd U11 = svd1.matrixU().topRows(N);
  MatrixXd U12 = svd1.matrixU().bottomRows(l);
  // EPsiY V1 Sigma1^+ [U11^T U12^T] is the pseudoinverse EDMD solution
  MatrixXd P = EPsiY * svd1.matrixV() * inv_s1.asDiagonal();
  A_pinv_ = P * U11.transpose();
  B_pinv_ = P * U12.transpose();

  Eigen::BDCSVD<MatrixXd> svd2(EPsiY, Eigen::ComputeThinU);
  sv_successor_ = svd2.singularValues();
  U2_ = svd2.matrixU();
  double cut2 = opts.sv_cutoff_rel * (sv_successor_.size() ? sv_successor_[0] : 0.0);
  rank_successor_ = 0;
  for (Eigen::Index i = 0; i < sv_successor_.size(); ++i)
    if (sv_successor_[i] > cut2) ++rank_successor_;

  C_ = ridge_solve(PsiX, X, opts.ridge_rel, &ridge_);
  resid_C_ = rel_frobenius(X - C_ * PsiX, X);
}

int ReducedFitter::max_rank() const { return static_cast<int>(U2_.cols()); }

std::pair<KoopmanModel, FitReport> ReducedFitter::fit(int r) const {
  if (r < 1 || r > max_rank())
    throw std::invalid_argument("fit_reduced: r out of range [1, min(N, m)]");
  MatrixXd U2r = U2_.leftCols(r);

  KoopmanModel model;
  model.variant = KoopmanModel::Variant::reduced;
  model.encoder = U2r.transpose();
  model.A = U2r.transpose() * A_pinv_ * U2r;
  model.B = U2r.transpose() * B_pinv_;
  model.C = C_ * U2r;
  model.dict_id = dict_id_;
  model.dims = dims_;
  model.dims.r = r;

  FitReport report;
  report.sv_regressor = sv_regressor_;
  report.sv_successor = sv_successor_.head(std::min<Eigen::Index>(r, sv_successor_.size()));
  report.rank_regressor = rank_regressor_;
  report.rank_successor = rank_successor_;
  report.ridge = ridge_;
  report.underdetermined = underdetermined_;
  report.residual_C = resid_C_;
  report.residual_AB = rel_frobenius(
      EPsiY_ - U2r * (model.A * (model.encoder * PsiX_) + model.B * U_), EPsiY_);
  return {std::move(model), report};
}

std::pair<KoopmanModel, FitReport> fit_reduced_matrices(
    const MatrixXd& PsiX, const MatrixXd& U, const MatrixXd& EPsiY,
    const MatrixXd& X, int r, const std::string& dict_id,
    const FitOptions& opts) {
  ReducedFitter fitter(PsiX, U, EPsiY, X, dict_id, opts);
  return fitter.fit(r);
}

std::pair<KoopmanModel, FitReport> fit_reduced(const SnapshotDataset& data,
                                               const Dictionary& dict, int r,
                                               const FitOptions& opts) {
  if (data.dict_id != dict.dict_id)
    throw std::invalid_argument("fit: dataset was lifted with a different dictionary");
  MatrixXd PsiX = lift_states(dict, data.X);
  return fit_reduced_matrices(PsiX, data.U, data.EPsiY, data.X, r,
                              dict.dict_id, opts);
}

std::vector<VectorXd> predict_expected(const KoopmanModel& model,
                                       const Dictionary& dict,
                                       const BinaryState& x0,
                                       const std::vector<VectorXd>& u_seq,
                                       int steps) {
  if (steps < 0) throw std::invalid_argument("predict: steps must be >= 0");
  if (static_cast<int>(u_seq.size()) < steps)
    throw std::invalid_argument("predict: need at least `steps` inputs");
  if (dict.dict_id != model.dict_id || dict.size() != model.dims.N)
    throw std::invalid_argument("predict: model/dictionary mismatch");
  if (static_cast<int>(x0.size()) != model.dims.n)
    throw std::invalid_argument("predict: state dimension mismatch");

  VectorXd z = model.encode(lift_state(dict, state_to_vector(x0)));
  std::vector<VectorXd> out;
  out.reserve(steps);
  for (int k = 0; k < steps; ++k) {
    if (u_seq[k].size() != model.dims.l)
      throw std::invalid_argument("predict: input dimension mismatch");
    z = model.A * z + model.B * u_seq[k];
    out.push_back(model.C * z);
  }
  return out;
}

VectorXd clamp01(const VectorXd& v) {
  return v.cwiseMax(0.0).cwiseMin(1.0);
}

Spectrum koopman_spectrum(const KoopmanModel& model) {
  Eigen::EigenSolver<MatrixXd> es(model.A);
  Eigen::VectorXcd vals = es.eigenvalues();
  Eigen::MatrixXcd vecs = es.eigenvectors();
  std::vector<Eigen::Index> order(vals.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
    return std::abs(vals[a]) > std::abs(vals[b]);
  });
  Spectrum s;
  s.eigenvalues.resize(vals.size());
  s.modes.resize(model.C.rows(), vals.size());
  for (Eigen::Index i = 0; i < vals.size(); ++i) {
    s.eigenvalues[i] = vals[order[i]];
    s.modes.col(i) = model.C * vecs.col(order[i]);
  }
  return s;
}

double relative_error_metric(const VectorXd& xhat, const VectorXd& xbar) {
  double num = (xhat - xbar).lpNorm<1>();
  double denom = std::max(xbar.sum(), 1e-6);
  return num / denom;
}

std::vector<ErrorSummary> relative_error_multi(
    const std::vector<std::pair<const KoopmanModel*, const Dictionary*>>& models,
    const Graph& g, const EpidemicParams& p, int n_conditions, int n_sim_ref,
    const VectorXd& u_low, const VectorXd& u_high, double duration,
    std::uint64_t seed, int threads) {
  if (n_conditions < 1)
    throw std::invalid_argument("relative_error: need at least one condition");
  if (n_sim_ref < 1)
    throw std::invalid_argument("relative_error: n_sim_ref must be >= 1");
  p.validate(g.n);
  const int n = g.n;

  // references and condition draws, independent of any model
  MatrixXd X0(n, n_conditions), Uc(n, n_conditions), Ref(n, n_conditions);
  std::vector<BinaryState> states(n_conditions);
  for (int c = 0; c < n_conditions; ++c) {
    Rng draw(derive_seed(seed, kTagEvalDraw, static_cast<std::uint64_t>(c)));
    states[c] = random_density_state(n, draw);
    X0.col(c) = state_to_vector(states[c]);
    for (int i = 0; i < n; ++i) Uc(i, c) = draw.uniform(u_low[i], u_high[i]);
  }
  parallel_for(static_cast<std::size_t>(n_conditions), threads,
               [&](std::size_t c) {
                 Ref.col(static_cast<Eigen::Index>(c)) = ensemble_marginals(
                     g, p, states[c], Uc.col(static_cast<Eigen::Index>(c)),
                     duration, n_sim_ref,
                     derive_seed(seed, kTagEvalRef, c), 1);
               });

  std::vector<ErrorSummary> out;
  out.reserve(models.size());
  for (auto [model, dict] : models) {
    if (dict->dict_id != model->dict_id)
      throw std::invalid_argument("relative_error: model/dictionary mismatch");
    ErrorSummary s;
    s.per_condition.resize(n_conditions);
    MatrixXd Psi0 = lift_states(*dict, X0);
    double sum = 0.0;
    int included = 0;
    for (int c = 0; c < n_conditions; ++c) {
      VectorXd z = model->encode(Psi0.col(c));
      VectorXd xhat = model->C * (model->A * z + model->B * Uc.col(c));
      s.per_condition[c] = relative_error_metric(xhat, Ref.col(c));
      if (Ref.col(c).sum() >= kMinReferenceMass) {
        sum += s.per_condition[c];
        ++included;
      } else {
        ++s.excluded;
      }
    }
    s.mean_error = included > 0 ? sum / included
                                : std::numeric_limits<double>::quiet_NaN();
    out.push_back(std::move(s));
  }
  return out;
}

ErrorSummary relative_error(const KoopmanModel& model, const Dictionary& dict,
                            const Graph& g, const EpidemicParams& p,
                            int n_conditions, int n_sim_ref,
                            const VectorXd& u_low, const VectorXd& u_high,
                            double duration, std::uint64_t seed, int threads) {
  auto res = relative_error_multi({{&model, &dict}}, g, p, n_conditions,
                                  n_sim_ref, u_low, u_high, duration, seed,
                                  threads);
  return res.front();
}

namespace {

json matrix_to_json(const MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

MatrixXd matrix_from_json(const json& j) {
  if (!j.is_array()) throw std::runtime_error("model parse error: matrix is not an array");
  Eigen::Index rows = static_cast<Eigen::Index>(j.size());
  Eigen::Index cols = rows > 0 ? static_cast<Eigen::Index>(j[0].size()) : 0;
  MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    if (static_cast<Eigen::Index>(j[i].size()) != cols)
      throw std::runtime_error("model parse error: ragged matrix");
    for (Eigen::Index c = 0; c < cols; ++c) m(i, c) = j[i][c].get<double>();
  }
  return m;
}

}  // namespace

void save_model(const KoopmanModel& model, const std::filesystem::path& path) {
  json j;
  j["variant"] =
      model.variant == KoopmanModel::Variant::full ? "full" : "reduced";
  j["dims"] = {{"n", model.dims.n},
               {"l", model.dims.l},
               {"N", model.dims.N},
               {"r", model.dims.r}};
  j["dict_id"] = model.dict_id;
  j["A"] = matrix_to_json(model.A);
  j["B"] = matrix_to_json(model.B);
  j["C"] = matrix_to_json(model.C);
  if (model.variant == KoopmanModel::Variant::reduced)
    j["encoder"] = matrix_to_json(model.encoder);
  write_text_file(path, j.dump() + "\n");
}

KoopmanModel load_model(const std::filesystem::path& path) {
  json j = json::parse(read_text_file(path));
  KoopmanModel m;
  std::string variant = j.at("variant").get<std::string>();
  if (variant == "full") {
    m.variant = KoopmanModel::Variant::full;
  } else if (variant == "reduced") {
    m.variant = KoopmanModel::Variant::reduced;
  } else {
    throw std::runtime_error("model parse error: unknown variant " + variant);
  }
  m.dims.n = j.at("dims").at("n").get<int>();
  m.dims.l = j.at("dims").at("l").get<int>();
  m.dims.N = j.at("dims").at("N").get<int>();
  m.dims.r = j.at("dims").at("r").get<int>();
  m.dict_id = j.value("dict_id", std::string());
  m.A = matrix_from_json(j.at("A"));
  m.B = matrix_from_json(j.at("B"));
  m.C = matrix_from_json(j.at("C"));
  if (m.variant == KoopmanModel::Variant::reduced) {
    if (!j.contains("encoder"))
      throw std::runtime_error("model parse error: reduced model without encoder");
    m.encoder = matrix_from_json(j.at("encoder"));
  }
  int latent = m.latent_dim();
  if (m.A.rows() != latent || m.A.cols() != latent || m.B.rows() != latent ||
      m.B.cols() != m.dims.l || m.C.rows() != m.dims.n || m.C.cols() != latent)
    throw std::runtime_error("model parse error: matrix shapes inconsistent with dims");
  return m;
}

}  // namespace netkoop
