#include "cipush/friction.hpp"

#include <stdexcept>

#include "cipush/stc.hpp"

namespace cipush::friction {

int num_force_vars(Model m) { return m == Model::CC ? 4 : 3; }
int num_residuals(Model m) { return m == Model::CC ? 6 : 9; }

namespace {

Residual make(Residual::Kind kind, double value, Vec grad, double dpsi,
              std::string label) {
  return Residual{kind, value, std::move(grad), dpsi, std::move(label)};
}

std::vector<Residual> cc_residuals(double mu, double psi, const Vec& lam) {
  const double ln = lam[0], ltp = lam[1], ltm = lam[2], gamma = lam[3];
  std::vector<Residual> out;
  out.reserve(6);

  {  // (mu*ln - lt+ - lt-) * gamma <= s
    const double f = mu * ln - ltp - ltm;
    Vec g(4);
    g << mu * gamma, -gamma, -gamma, f;
    out.push_back(make(Residual::Kind::RelaxedComplementarity, f * gamma,
                       std::move(g), 0.0, "cc_cone_gamma"));
  }
  {  // (gamma + psi) * lt+ <= s
    Vec g(4);
    g << 0.0, gamma + psi, 0.0, ltp;
    out.push_back(make(Residual::Kind::RelaxedComplementarity, (gamma + psi) * ltp,
                       std::move(g), ltp, "cc_slip_pos"));
  }
  {  // (gamma - psi) * lt- <= s
    Vec g(4);
    g << 0.0, 0.0, gamma - psi, ltm;
    out.push_back(make(Residual::Kind::RelaxedComplementarity, (gamma - psi) * ltm,
                       std::move(g), -ltm, "cc_slip_neg"));
  }
  {  // pyramid factor: lt+ + lt- - mu*ln <= 0
    Vec g(4);
    g << -mu, 1.0, 1.0, 0.0;
    out.push_back(make(Residual::Kind::Inequality, ltp + ltm - mu * ln,
                       std::move(g), 0.0, "cc_pyramid"));
  }
  {  // -(gamma + psi) <= 0
    Vec g(4);
    g << 0.0, 0.0, 0.0, -1.0;
    out.push_back(make(Residual::Kind::Inequality, -(gamma + psi), std::move(g),
                       -1.0, "cc_gamma_plus"));
  }
  {  // -(gamma - psi) <= 0
    Vec g(4);
    g << 0.0, 0.0, 0.0, -1.0;
    out.push_back(make(Residual::Kind::Inequality, -(gamma - psi), std::move(g),
                       1.0, "cc_gamma_minus"));
  }
  return out;
}

std::vector<Residual> stc_residuals(double mu, double psi, const Vec& lam,
                                    double eps) {
  const double ln = lam[0], ltp = lam[1], ltm = lam[2];
  std::vector<Residual> out;
  out.reserve(9);

  // Trigger weights: sig_pos fires when psi > 0, sig_neg when psi < 0.
  const auto [sig_pos, dsig_pos_dg] = stc::sigma_star(-psi, eps);
  const auto [sig_neg, dsig_neg_dg] = stc::sigma_star(psi, eps);
  const double dsig_pos_dpsi = -dsig_pos_dg;  // g = -psi
  const double dsig_neg_dpsi = dsig_neg_dg;   // g = +psi

  // One-sided triggered row sigma * c <= 0 with c linear in lam.
  auto triggered = [&](double sig, double dsig_dpsi, double c, Vec dc,
                       const char* label) {
    Vec g = sig * dc;
    out.push_back(make(Residual::Kind::Inequality, sig * c, std::move(g),
                       dsig_dpsi * c, label));
  };

  Vec cone_m(3), lt_p(3), cone_p(3), lt_m(3);
  cone_m << -mu, 0.0, 1.0;   // lt- - mu*ln
  lt_p   << 0.0, 1.0, 0.0;   // lt+
  cone_p << -mu, 1.0, 0.0;   // lt+ - mu*ln
  lt_m   << 0.0, 0.0, 1.0;   // lt-

  triggered(sig_pos, dsig_pos_dpsi, ltm - mu * ln, cone_m, "stc_pos_edge+");
  triggered(sig_pos, dsig_pos_dpsi, -(ltm - mu * ln), -cone_m, "stc_pos_edge-");
  triggered(sig_pos, dsig_pos_dpsi, ltp, lt_p, "stc_pos_off+");
  triggered(sig_pos, dsig_pos_dpsi, -ltp, -lt_p, "stc_pos_off-");
  triggered(sig_neg, dsig_neg_dpsi, ltp - mu * ln, cone_p, "stc_neg_edge+");
  triggered(sig_neg, dsig_neg_dpsi, -(ltp - mu * ln), -cone_p, "stc_neg_edge-");
  triggered(sig_neg, dsig_neg_dpsi, ltm, lt_m, "stc_neg_off+");
  triggered(sig_neg, dsig_neg_dpsi, -ltm, -lt_m, "stc_neg_off-");

  {  // pyramid: lt+ + lt- - mu*ln <= 0
    Vec g(3);
    g << -mu, 1.0, 1.0;
    out.push_back(make(Residual::Kind::Inequality, ltp + ltm - mu * ln,
                       std::move(g), 0.0, "stc_pyramid"));
  }
  return out;
}

}  // namespace

std::vector<Residual> residuals(Model m, double mu, double psi, const Vec& lam,
                                double smoothing_epsilon) {
  if (lam.size() != num_force_vars(m)) {
    throw std::invalid_argument("friction::residuals: lam size mismatch");
  }
  if (mu < 0) throw std::invalid_argument("friction::residuals: mu must be >= 0");
  return m == Model::CC ? cc_residuals(mu, psi, lam)
                        : stc_residuals(mu, psi, lam, smoothing_epsilon);
}

}  // namespace cipush::friction
