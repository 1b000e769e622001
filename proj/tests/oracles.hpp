#pragma once

// Test-only oracles. Deliberately independent of the library's simulation
// and solver code paths: the matrix exponential is a plain scaling-squaring
// Taylor series over the explicit 2^n-state generator, and the QP oracle is
// exhaustive active-set enumeration.

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "netkoop/gemf.hpp"
#include "netkoop/graph.hpp"

namespace netkoop::oracles {

inline Eigen::MatrixXd matrix_exp(const Eigen::MatrixXd& A) {
  double norm = A.cwiseAbs().rowwise().sum().maxCoeff();
  int s = 0;
  while (norm > 0.5) {
    norm /= 2.0;
    ++s;
  }
  Eigen::MatrixXd B = A / std::pow(2.0, s);
  Eigen::MatrixXd term = Eigen::MatrixXd::Identity(A.rows(), A.cols());
  Eigen::MatrixXd sum = term;
  for (int k = 1; k <= 30; ++k) {
    term = term * B / static_cast<double>(k);
    sum += term;
  }
  for (int k = 0; k < s; ++k) sum = sum * sum;
  return sum;
}

// Exact marginal infection probabilities of the controlled SIS process at
// time T, from the full 2^n-state continuous-time generator.
inline Eigen::VectorXd ctmc_marginals(const Graph& g, const EpidemicParams& p,
                                      const BinaryState& x0,
                                      const Eigen::VectorXd& u, double T) {
  const int n = g.n;
  if (n > 16) throw std::invalid_argument("ctmc oracle: graph too large");
  const int S = 1 << n;
  auto adj = g.adjacency_lists();
  Eigen::MatrixXd Q = Eigen::MatrixXd::Zero(S, S);
  for (int s = 0; s < S; ++s) {
    for (int i = 0; i < n; ++i) {
      if (s & (1 << i)) {
        Q(s, s ^ (1 << i)) += p.delta[i];
      } else {
        int infected_neighbors = 0;
        for (int j : adj[i])
          if (s & (1 << j)) ++infected_neighbors;
        double rate = (p.beta0[i] - u[i]) * infected_neighbors;
        if (rate > 0.0) Q(s, s | (1 << i)) += rate;
      }
    }
    Q(s, s) = -Q.row(s).sum();
  }
  int s0 = 0;
  for (int i = 0; i < n; ++i)
    if (x0[i]) s0 |= 1 << i;
  Eigen::MatrixXd P = matrix_exp(Q * T);
  Eigen::VectorXd marginals = Eigen::VectorXd::Zero(n);
  for (int s = 0; s < S; ++s)
    for (int i = 0; i < n; ++i)
      if (s & (1 << i)) marginals[i] += P(s0, s);
  return marginals;
}

// Exhaustive active-set enumeration for
//   min 1/2 x'Hx + f'x   s.t.  lb <= x <= ub,  a'x <= c (optional budget).
// Requires H positive definite so the optimum is unique.
inline Eigen::VectorXd brute_force_qp(const Eigen::MatrixXd& H,
                                      const Eigen::VectorXd& f,
                                      const Eigen::VectorXd& lb,
                                      const Eigen::VectorXd& ub,
                                      const Eigen::VectorXd& a, double c,
                                      bool with_budget) {
  const int n = static_cast<int>(f.size());
  const double tol = 1e-9;
  double best_obj = std::numeric_limits<double>::infinity();
  Eigen::VectorXd best;

  std::vector<int> state(n, 0);  // 0 free, 1 lower, 2 upper
  long total = 1;
  for (int i = 0; i < n; ++i) total *= 3;

  for (long code = 0; code < total; ++code) {
    long rem = code;
    for (int i = 0; i < n; ++i) {
      state[i] = rem % 3;
      rem /= 3;
    }
    for (int budget_active = 0; budget_active <= (with_budget ? 1 : 0);
         ++budget_active) {
      std::vector<int> free_idx;
      Eigen::VectorXd x = Eigen::VectorXd::Zero(n);
      for (int i = 0; i < n; ++i) {
        if (state[i] == 0)
          free_idx.push_back(i);
        else
          x[i] = state[i] == 1 ? lb[i] : ub[i];
      }
      int nf = static_cast<int>(free_idx.size());
      int dim = nf + budget_active;
      Eigen::MatrixXd K(dim, dim);
      Eigen::VectorXd rhs(dim);
      for (int a_i = 0; a_i < nf; ++a_i) {
        for (int b_i = 0; b_i < nf; ++b_i)
          K(a_i, b_i) = H(free_idx[a_i], free_idx[b_i]);
        double extra = 0.0;
        for (int i = 0; i < n; ++i)
          if (state[i] != 0) extra += H(free_idx[a_i], i) * x[i];
        rhs[a_i] = -f[free_idx[a_i]] - extra;
        if (budget_active) {
          K(a_i, nf) = a[free_idx[a_i]];
          K(nf, a_i) = a[free_idx[a_i]];
        }
      }
      if (budget_active) {
        K(nf, nf) = 0.0;
        double fixed = 0.0;
        for (int i = 0; i < n; ++i)
          if (state[i] != 0) fixed += a[i] * x[i];
        rhs[nf] = c - fixed;
      }
      double lambda = 0.0;
      if (dim > 0) {
        Eigen::FullPivLU<Eigen::MatrixXd> lu(K);
        if (!lu.isInvertible()) continue;
        Eigen::VectorXd sol = lu.solve(rhs);
        for (int a_i = 0; a_i < nf; ++a_i) x[free_idx[a_i]] = sol[a_i];
        if (budget_active) lambda = sol[nf];
      }
      // primal feasibility
      bool ok = true;
      for (int i = 0; i < n && ok; ++i)
        if (x[i] < lb[i] - tol || x[i] > ub[i] + tol) ok = false;
      if (with_budget && a.dot(x) > c + tol) ok = false;
      if (budget_active && lambda < -tol) ok = false;
      if (!ok) continue;
      // dual feasibility on the active bounds
      Eigen::VectorXd grad = H * x + f;
      if (with_budget && budget_active) grad += lambda * a;
      for (int i = 0; i < n && ok; ++i) {
        if (state[i] == 1 && grad[i] < -tol) ok = false;
        if (state[i] == 2 && grad[i] > tol) ok = false;
        if (state[i] == 0 && std::abs(grad[i]) > 1e-6) ok = false;
      }
      if (!ok) continue;
      double obj = 0.5 * x.dot(H * x) + f.dot(x);
      if (obj < best_obj) {
        best_obj = obj;
        best = x;
      }
    }
  }
  if (best.size() == 0)
    throw std::runtime_error("brute_force_qp: no KKT point found");
  return best;
}

}  // namespace netkoop::oracles
