#pragma once

#include <Eigen/Dense>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "netkoop/gemf.hpp"
#include "netkoop/graph.hpp"
#include "netkoop/lifting.hpp"

namespace netkoop {

struct ModelDims {
  int n = 0;  // original state dimension
  int l = 0;  // input dimension
  int N = 0;  // dictionary size
  int r = 0;  // latent dimension (== N for the full model)
};

/// Linear predictor z+ = A z + B u, xhat = C z. Full variant: z = psi(x).
/// Reduced variant: z = encoder * psi(x) with orthonormal encoder rows.
struct KoopmanModel {
  enum class Variant { full, reduced };
  Variant variant = Variant::full;
  Eigen::MatrixXd A;        // latent x latent
  Eigen::MatrixXd B;        // latent x l
  Eigen::MatrixXd C;        // n x latent
  Eigen::MatrixXd encoder;  // r x N (reduced only; empty for full)
  std::string dict_id;
  ModelDims dims;

  int latent_dim() const {
    return variant == Variant::reduced ? dims.r : dims.N;
  }
  Eigen::VectorXd encode(const Eigen::VectorXd& psi) const;
};

struct FitReport {
  double residual_AB = 0.0;  // relative Frobenius residual of the A,B fit
  double residual_C = 0.0;   // relative residual of the C fit
  Eigen::VectorXd sv_regressor;  // singular values of [Psi(X); U] (reduced fit)
  Eigen::VectorXd sv_successor;  // singular values of E[Psi(Y)] (reduced fit)
  int rank_regressor = 0;
  int rank_successor = 0;
  double ridge = 0.0;
  bool underdetermined = false;  // m < N + l
};

struct FitOptions {
  // Tikhonov ridge for the normal equations, relative to the mean diagonal
  // of the Gram matrix. Small enough not to bias exact-recovery cases.
  double ridge_rel = 1e-12;
  // Singular values below cutoff_rel * sigma_max are dropped when inverting.
  double sv_cutoff_rel = 1e-10;
};

/// EDMD with control: [A B] = argmin |EPsiY - A PsiX - B U|_F and
/// C = argmin |X - C PsiX|_F, both via ridge-regularized normal equations.
std::pair<KoopmanModel, FitReport> fit_full_matrices(
    const Eigen::MatrixXd& PsiX, const Eigen::MatrixXd& U,
    const Eigen::MatrixXd& EPsiY, const Eigen::MatrixXd& X,
    const std::string& dict_id, const FitOptions& opts = {});

std::pair<KoopmanModel, FitReport> fit_full(const SnapshotDataset& data,
                                            const Dictionary& dict,
                                            const FitOptions& opts = {});

/// Precomputes the twin SVDs so several truncation orders r can be fitted
/// from one dataset. Encoders are nested: the encoder for r1 <= r2 equals
/// the first r1 rows of the encoder for r2.
class ReducedFitter {
 public:
  ReducedFitter(const Eigen::MatrixXd& PsiX, const Eigen::MatrixXd& U,
                const Eigen::MatrixXd& EPsiY, const Eigen::MatrixXd& X,
                std::string dict_id, const FitOptions& opts = {});

  std::pair<KoopmanModel, FitReport> fit(int r) const;
  int max_rank() const;
  /// Count of successor singular values above the relative cutoff.
  int numerical_rank() const { return rank_successor_; }

 private:
  Eigen::MatrixXd A_pinv_, B_pinv_, C_, U2_;
  Eigen::VectorXd sv_regressor_, sv_successor_;
  int rank_regressor_ = 0, rank_successor_ = 0;
  std::string dict_id_;
  ModelDims dims_;
  double ridge_ = 0.0;
  double resid_C_ = 0.0;
  bool underdetermined_ = false;
  // kept for residual reporting
  Eigen::MatrixXd PsiX_, U_, EPsiY_;
};

std::pair<KoopmanModel, FitReport> fit_reduced_matrices(
    const Eigen::MatrixXd& PsiX, const Eigen::MatrixXd& U,
    const Eigen::MatrixXd& EPsiY, const Eigen::MatrixXd& X, int r,
    const std::string& dict_id, const FitOptions& opts = {});

std::pair<KoopmanModel, FitReport> fit_reduced(const SnapshotDataset& data,
                                               const Dictionary& dict, int r,
                                               const FitOptions& opts = {});

/// Multi-step open-loop prediction: z0 = encode(psi(x0)), z_{k+1} = A z_k +
/// B u_k, xhat_k = C z_k for k = 1..steps. Raw (unclamped) outputs.
std::vector<Eigen::VectorXd> predict_expected(
    const KoopmanModel& model, const Dictionary& dict, const BinaryState& x0,
    const std::vector<Eigen::VectorXd>& u_seq, int steps);

Eigen::VectorXd clamp01(const Eigen::VectorXd& v);

struct Spectrum {
  Eigen::VectorXcd eigenvalues;  // sorted by modulus, descending
  Eigen::MatrixXcd modes;        // C * eigenvector, one column per eigenvalue
};

Spectrum koopman_spectrum(const KoopmanModel& model);

/// Per-condition relative error sum_i |xhat_i - xbar_i| / max(sum_i xbar_i, 1e-6).
double relative_error_metric(const Eigen::VectorXd& xhat,
                             const Eigen::VectorXd& xbar);

struct ErrorSummary {
  double mean_error = 0.0;
  Eigen::VectorXd per_condition;  // every condition, epsilon-floored
  int excluded = 0;               // reference-degenerate conditions
};

// Conditions whose reference carries less infection mass than this many
// nodes are excluded from the mean (their Sigma-normalized error is
// dominated by the epsilon floor, not by model quality). They still appear
// in the per-condition distribution.
constexpr double kMinReferenceMass = 0.5;

/// One-step prediction error against GEMF ensemble references. Conditions
/// are sampled like training snapshots (random-density states, inputs
/// uniform in the box); each reference is an n_sim_ref-run ensemble mean.
ErrorSummary relative_error(const KoopmanModel& model, const Dictionary& dict,
                            const Graph& g, const EpidemicParams& p,
                            int n_conditions, int n_sim_ref,
                            const Eigen::VectorXd& u_low,
                            const Eigen::VectorXd& u_high, double duration,
                            std::uint64_t seed, int threads = 1);

/// Same references, several (model, dictionary) pairs at once; the GEMF
/// reference ensembles are simulated once and shared.
std::vector<ErrorSummary> relative_error_multi(
    const std::vector<std::pair<const KoopmanModel*, const Dictionary*>>& models,
    const Graph& g, const EpidemicParams& p, int n_conditions, int n_sim_ref,
    const Eigen::VectorXd& u_low, const Eigen::VectorXd& u_high,
    double duration, std::uint64_t seed, int threads = 1);

void save_model(const KoopmanModel& model, const std::filesystem::path& path);
KoopmanModel load_model(const std::filesystem::path& path);

}  // namespace netkoop
