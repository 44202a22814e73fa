#pragma once

#include <functional>
#include <string>
#include <vector>

#include "cipush/types.hpp"

namespace cipush::nlp {

/// One scalar constraint row over a fixed subset of decision variables.
/// `eval(xl, gl)` receives the gathered values xl[k] = x[vars[k]] and, when
/// gl != nullptr, must write the gradient aligned with `vars`.  The sparsity
/// pattern (the `vars` list) is fixed for the lifetime of the instance.
struct Row {
  enum class Kind { Equality, Inequality };  // Inequality means value <= 0
  Kind kind = Kind::Equality;
  std::vector<int> vars;
  std::function<double(const double* xl, double* gl)> eval;
  std::string label;
};

/// Nonlinear program
///   min  sum_i quad_diag[i]*x[i]^2 + lin . x + general(x)
///   s.t. rows (== 0 / <= 0), lb <= x <= ub.
/// The separable quadratic covers the planning and tracking objectives
/// exactly; `general` is for free-form objectives (test batteries).
struct Instance {
  int n = 0;
  Vec lb, ub;  // empty => unbounded
  Vec x0;
  Vec quad_diag;  // empty => zero
  Vec lin;        // empty => zero
  std::function<double(const Vec& x, Vec* grad)> general;  // may be null
  std::vector<Row> rows;

  double objective(const Vec& x, Vec* grad = nullptr) const;
  /// Gathers row locals and evaluates value (+ local gradient into `gl`).
  double eval_row(int r, const Vec& x, double* gl = nullptr) const;

  int num_eq() const;
  int num_ineq() const;
  void validate() const;  ///< throws std::invalid_argument on bad shapes
};

/// Multipliers follow the convention
///   grad_f + sum_eq y*J + sum_ineq lam*J - mu_lb + mu_ub = 0,
/// lam, mu_lb, mu_ub >= 0.  `row_mult` is aligned with Instance::rows
/// (y for equalities, lam for inequalities).
struct Multipliers {
  Vec row_mult;
  Vec mu_lb, mu_ub;  // may be empty when the instance has no bounds
};

/// First-order optimality residuals. The dual-dependent entries
/// (stationarity, complementarity) are divided by max(100, avg |mult|)/100 so
/// that one tolerance works for problems whose well-scaled duals are large;
/// the primal violations are absolute.
struct KktReport {
  double stationarity = 0.0;    ///< scaled inf-norm of the Lagrangian gradient
  double eq_violation = 0.0;    ///< max |c_eq|
  double ineq_violation = 0.0;  ///< max positive part of c_ineq and bound violation
  double complementarity = 0.0; ///< scaled max |mult * residual| and negative-multiplier excess
  double max_residual() const;
};

KktReport check_kkt(const Instance& inst, const Vec& x, const Multipliers& m);

/// Central finite-difference verification of the objective gradient and every
/// row gradient at `num_points` randomly perturbed points around x0.
struct DerivativeReport {
  double max_obj_error = 0.0;
  double max_row_error = 0.0;
  int worst_row = -1;
  std::string worst_label;
  bool pass(double tol) const { return max_obj_error <= tol && max_row_error <= tol; }
};

DerivativeReport verify_derivatives(const Instance& inst, int num_points,
                                    unsigned seed, double fd_step = 1e-6,
                                    double perturb_scale = 0.1);

}  // namespace cipush::nlp
