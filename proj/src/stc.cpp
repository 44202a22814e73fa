#include "cipush/stc.hpp"

#include <cmath>
#include <stdexcept>

namespace cipush::stc {

std::pair<double, double> sigma_star(double g_val, double epsilon) {
  if (epsilon < 0.0) throw std::invalid_argument("sigma_star: epsilon must be >= 0");
  if (epsilon == 0.0) {
    if (g_val < 0.0) return {-g_val, -1.0};
    return {0.0, 0.0};  // right-sided derivative at g == 0
  }
  const double r = std::sqrt(g_val * g_val + epsilon * epsilon);
  return {0.5 * (r - g_val), 0.5 * (g_val / r - 1.0)};
}

double cstc_residual(const StcPair& pair, const Vec& x, const Vec& u) {
  const double g = pair.g.value(x, u);
  const double c = pair.c.value(x, u);
  return sigma_star(g, pair.smoothing_epsilon).first * c;
}

std::pair<Vec, Vec> cstc_gradient(const StcPair& pair, const Vec& x, const Vec& u) {
  const double g = pair.g.value(x, u);
  const double c = pair.c.value(x, u);
  const auto [sig, dsig] = sigma_star(g, pair.smoothing_epsilon);

  Vec gx_g, gu_g, gx_c, gu_c;
  pair.g.gradient(x, u, gx_g, gu_g);
  pair.c.gradient(x, u, gx_c, gu_c);
  if (gx_g.size() != x.size() || gx_c.size() != x.size() ||
      gu_g.size() != u.size() || gu_c.size() != u.size()) {
    throw std::invalid_argument("cstc_gradient: gradient dimension mismatch");
  }

  Vec gx = dsig * c * gx_g + sig * gx_c;
  Vec gu = dsig * c * gu_g + sig * gu_c;
  return {std::move(gx), std::move(gu)};
}

std::vector<StcPair> equality_trigger(const ScalarFn& g, const ScalarFn& c,
                                      double smoothing_epsilon,
                                      const std::string& label) {
  ScalarFn neg_c;
  neg_c.value = [c](const Vec& x, const Vec& u) { return -c.value(x, u); };
  neg_c.gradient = [c](const Vec& x, const Vec& u, Vec& gx, Vec& gu) {
    c.gradient(x, u, gx, gu);
    gx = -gx;
    gu = -gu;
  };
  StcPair upper{g, c, smoothing_epsilon, label.empty() ? label : label + "+"};
  StcPair lower{g, neg_c, smoothing_epsilon, label.empty() ? label : label + "-"};
  return {upper, lower};
}

}  // namespace cipush::stc
