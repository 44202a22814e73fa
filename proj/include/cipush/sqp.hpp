#pragma once

#include <vector>

#include "cipush/nlp.hpp"
#include "cipush/qp.hpp"

namespace cipush::sqp {

enum class HessianMode { BFGS, GaussNewton };

enum class SolveStatus { Converged, MaxIterations, Infeasible, Stalled, NumericalError };

struct Config {
  double kkt_tol = 1e-6;    ///< stationarity tolerance
  double feas_tol = 1e-6;   ///< constraint violation tolerance (inf-norm)
  int max_iter = 500;
  HessianMode hessian = HessianMode::BFGS;
  double gn_reg = 1e-6;       ///< diagonal regularization in GaussNewton mode
  double penalty_init = 10.0;
  double penalty_max = 1e10;
  double ls_eta = 0.1;        ///< Armijo slope fraction
  double ls_alpha_min = 1e-10;
  int stall_limit = 20;       ///< rejected/non-improving iterations before giving up
  bool keep_iterates = false; ///< record the per-iteration log
  double qp_feas_tol = 1e-9;  ///< subproblem activation tolerance
  /// When true, the objective is divided internally by
  /// max(1, |grad f(x0)|_inf / 10) so that problems with very steep objectives
  /// (penalty terms with gradients of order 1e4) produce step subproblems at
  /// unit scale.  Multipliers and the reported objective stay in original
  /// units.  Off by default: rescaling shifts the merit balance between
  /// objective and constraint violation and can change which local solution a
  /// nonconvex problem converges to.
  bool scale_objective = false;
  /// Box trust region on the step (inf-norm), disabled when <= 0.  The radius
  /// doubles after full line-search steps and shrinks after backtracks or
  /// rejections, keeping the subproblem inside the region where its linear
  /// row models are credible.  Essential for constraints with localized
  /// extreme curvature (velocity-smoothed friction near zero velocity).
  double tr_init = 0.0;
  double tr_min = 1e-8;
  double tr_max = 1e3;
};

struct IterRecord {
  int iter = 0;
  double objective = 0.0;
  double merit = 0.0;
  double viol_inf = 0.0;
  double viol_l1 = 0.0;
  double step_norm = 0.0;
  double alpha = 0.0;
  double penalty = 0.0;
  double trust = 0.0;  ///< trust-region radius (0 when disabled)
  int qp_iterations = 0;
  bool elastic = false;
};

struct SolveResult {
  SolveStatus status = SolveStatus::NumericalError;
  Vec x;
  nlp::Multipliers mult;
  double objective = 0.0;
  nlp::KktReport kkt;
  int iterations = 0;
  std::vector<IterRecord> log;
};

SolveResult solve(const nlp::Instance& inst, const Config& cfg);

const char* status_name(SolveStatus s);

}  // namespace cipush::sqp
