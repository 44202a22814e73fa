#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "cipush/types.hpp"

namespace cipush::stc {

/// Trigger weight sigma*(g) = -min(g, 0) and its smoothed variant
/// 0.5 * (sqrt(g^2 + eps^2) - g).
///
/// Returns (value, dvalue/dg).  For eps == 0 the derivative at g == 0 uses the
/// right-sided convention (0).  The smoothed value never deviates from the
/// exact one by more than eps / 2; the bound is attained at g == 0.
std::pair<double, double> sigma_star(double g_val, double epsilon);

/// A differentiable scalar function of (x, u) together with its gradient.
/// `gradient` must resize/fill gx and gu to x.size() and u.size().
struct ScalarFn {
  std::function<double(const Vec& x, const Vec& u)> value;
  std::function<void(const Vec& x, const Vec& u, Vec& gx, Vec& gu)> gradient;
};

/// A state-triggered constraint: trigger g(x,u) < 0 implies c(x,u) <= 0,
/// encoded as the single smooth inequality sigma*(g) * c <= 0.
struct StcPair {
  ScalarFn g;
  ScalarFn c;
  double smoothing_epsilon = 1e-6;  ///< use 0 for exact feasibility checks
  std::string label;
};

/// Residual sigma*(g(x,u)) * c(x,u) of the constraint "residual <= 0".
double cstc_residual(const StcPair& pair, const Vec& x, const Vec& u);

/// Gradient of the residual via the chain rule:
///   d/dz [sigma*(g) * c] = sigma*'(g) * c * dg/dz + sigma*(g) * dc/dz.
/// Throws std::invalid_argument if the pair's gradient callbacks produce
/// vectors whose sizes do not match x and u.
std::pair<Vec, Vec> cstc_gradient(const StcPair& pair, const Vec& x, const Vec& u);

/// Expands a triggered *equality* (g < 0 implies c == 0) into the two
/// one-sided pairs (g, c) and (g, -c) sharing the trigger.
std::vector<StcPair> equality_trigger(const ScalarFn& g, const ScalarFn& c,
                                      double smoothing_epsilon = 1e-6,
                                      const std::string& label = {});

}  // namespace cipush::stc
