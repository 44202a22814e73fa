#pragma once

#include <memory>
#include <string>
#include <vector>

#include "cipush/types.hpp"

namespace cipush::qp {

/// One sparse linear constraint row a . x (= or <=) b.
struct SparseRow {
  std::vector<int> idx;
  std::vector<double> val;
  double b = 0.0;

  double dot(const Vec& x) const {
    double s = 0.0;
    for (size_t k = 0; k < idx.size(); ++k) s += val[k] * x[idx[k]];
    return s;
  }
};

/// Cached Cholesky factors of H (reusable across solves with identical H).
struct Factors {
  Mat L;      // H = L L^T
  Mat LinvT;  // L^{-T}
  double reg_used = 0.0;
};

/// Convex QP:  min 1/2 x'Hx + g'x
///             s.t. eq rows a.x == b, ineq rows a.x <= b, lb <= x <= ub.
/// H must be positive definite (a +delta*I regularization is applied
/// automatically if the factorization fails).
struct Problem {
  Mat H;
  Vec g;
  Vec lb, ub;  // empty => unbounded; entries beyond +-1e19 treated as infinite
  std::vector<SparseRow> eq;
  std::vector<SparseRow> ineq;
  std::shared_ptr<const Factors> factors;  // optional: cache of chol(H)
};

struct Options {
  double feas_tol = 1e-9;   ///< violation threshold for activating a row
  int max_iter = 0;         ///< 0 = automatic (scales with problem size)
  double reg = 1e-9;        ///< initial +delta*I regularization on chol failure
  bool polish = false;      ///< final KKT re-solve on the active set
};

enum class Status { Optimal, Infeasible, MaxIter, NumericalError };

/// Multiplier convention: at the solution
///   H x + g + A_eq' y + A_in' lam - mu_lb + mu_ub = 0,
/// with lam, mu_lb, mu_ub >= 0 and y free.
struct Result {
  Status status = Status::NumericalError;
  Vec x;
  Vec y_eq;      // per eq row
  Vec lam_ineq;  // per ineq row
  Vec mu_lb, mu_ub;
  int iterations = 0;
  double kkt_residual = 0.0;  ///< max of stationarity/feasibility/complementarity
  std::vector<int> active_rows;  ///< internal row ids, usable as a warm hint
};

struct WarmStart {
  std::vector<int> active_rows;  ///< from a previous Result on the same structure
};

Result solve(const Problem& p, const Options& opt = {}, const WarmStart* warm = nullptr);

/// Precompute factors for reuse (throws std::runtime_error if H cannot be
/// factorized even with escalating regularization).
std::shared_ptr<const Factors> factorize(const Mat& H, double reg = 1e-9);

const char* status_name(Status s);

}  // namespace cipush::qp
