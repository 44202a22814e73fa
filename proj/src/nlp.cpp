#include "cipush/nlp.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

namespace cipush::nlp {

namespace {
constexpr int kMaxRowVars = 256;
}

double Instance::objective(const Vec& x, Vec* grad) const {
  double f = 0.0;
  if (grad) grad->setZero(n);
  if (quad_diag.size() > 0) {
    f += quad_diag.cwiseProduct(x.cwiseProduct(x)).sum();
    if (grad) *grad += 2.0 * quad_diag.cwiseProduct(x);
  }
  if (lin.size() > 0) {
    f += lin.dot(x);
    if (grad) *grad += lin;
  }
  if (general) {
    if (grad) {
      Vec gg = Vec::Zero(n);
      f += general(x, &gg);
      *grad += gg;
    } else {
      f += general(x, nullptr);
    }
  }
  return f;
}

double Instance::eval_row(int r, const Vec& x, double* gl) const {
  const Row& row = rows[r];
  double xl[kMaxRowVars];
  const int k = static_cast<int>(row.vars.size());
  for (int i = 0; i < k; ++i) xl[i] = x[row.vars[i]];
  return row.eval(xl, gl);
}

int Instance::num_eq() const {
  return static_cast<int>(
      std::count_if(rows.begin(), rows.end(),
                    [](const Row& r) { return r.kind == Row::Kind::Equality; }));
}

int Instance::num_ineq() const { return static_cast<int>(rows.size()) - num_eq(); }

void Instance::validate() const {
  if (n <= 0) throw std::invalid_argument("nlp::Instance: n must be positive");
  auto check_len = [&](const Vec& v, const char* what) {
    if (v.size() != 0 && v.size() != n) {
      throw std::invalid_argument(std::string("nlp::Instance: bad length for ") + what);
    }
  };
  check_len(lb, "lb");
  check_len(ub, "ub");
  check_len(x0, "x0");
  check_len(quad_diag, "quad_diag");
  check_len(lin, "lin");
  for (const Row& r : rows) {
    if (!r.eval) throw std::invalid_argument("nlp::Instance: row without eval");
    if (r.vars.size() > kMaxRowVars) {
      throw std::invalid_argument("nlp::Instance: row touches too many variables");
    }
    for (int v : r.vars) {
      if (v < 0 || v >= n) throw std::invalid_argument("nlp::Instance: row var out of range");
    }
  }
}

double KktReport::max_residual() const {
  return std::max({stationarity, eq_violation, ineq_violation, complementarity});
}

KktReport check_kkt(const Instance& inst, const Vec& x, const Multipliers& m) {
  if (x.size() != inst.n) throw std::invalid_argument("check_kkt: x size mismatch");
  if (m.row_mult.size() != static_cast<Eigen::Index>(inst.rows.size())) {
    throw std::invalid_argument("check_kkt: row_mult size mismatch");
  }
  KktReport rep;
  Vec st;
  inst.objective(x, &st);

  double mult_sum = 0.0;
  int mult_cnt = 0;

  double gl[kMaxRowVars];
  for (size_t r = 0; r < inst.rows.size(); ++r) {
    const Row& row = inst.rows[r];
    const double c = inst.eval_row(static_cast<int>(r), x, gl);
    const double mult = m.row_mult[r];
    mult_sum += std::abs(mult);
    ++mult_cnt;
    for (size_t k = 0; k < row.vars.size(); ++k) st[row.vars[k]] += mult * gl[k];
    if (row.kind == Row::Kind::Equality) {
      rep.eq_violation = std::max(rep.eq_violation, std::abs(c));
    } else {
      rep.ineq_violation = std::max(rep.ineq_violation, c);
      rep.complementarity = std::max(rep.complementarity, std::abs(mult * c));
      if (mult < 0.0) rep.complementarity = std::max(rep.complementarity, -mult);
    }
  }
  const bool has_lb = inst.lb.size() > 0, has_ub = inst.ub.size() > 0;
  for (int i = 0; i < inst.n; ++i) {
    const double ml = (m.mu_lb.size() > 0) ? m.mu_lb[i] : 0.0;
    const double mu = (m.mu_ub.size() > 0) ? m.mu_ub[i] : 0.0;
    st[i] += mu - ml;
    if (has_lb && inst.lb[i] > -1e19) {
      rep.ineq_violation = std::max(rep.ineq_violation, inst.lb[i] - x[i]);
      rep.complementarity = std::max(rep.complementarity, std::abs(ml * (x[i] - inst.lb[i])));
      if (ml < 0.0) rep.complementarity = std::max(rep.complementarity, -ml);
      mult_sum += std::abs(ml);
      ++mult_cnt;
    }
    if (has_ub && inst.ub[i] < 1e19) {
      rep.ineq_violation = std::max(rep.ineq_violation, x[i] - inst.ub[i]);
      rep.complementarity = std::max(rep.complementarity, std::abs(mu * (inst.ub[i] - x[i])));
      if (mu < 0.0) rep.complementarity = std::max(rep.complementarity, -mu);
      mult_sum += std::abs(mu);
      ++mult_cnt;
    }
  }
  rep.ineq_violation = std::max(rep.ineq_violation, 0.0);
  rep.stationarity = st.lpNorm<Eigen::Infinity>();

  // Dual-dependent residuals are scaled by the average multiplier magnitude
  // (capped-denominator rule) so the same tolerance works for problems whose
  // well-scaled duals are large; primal feasibility stays absolute.
  const double avg = mult_sum / std::max(mult_cnt, 1);
  const double sd = std::max(100.0, avg) / 100.0;
  rep.stationarity /= sd;
  rep.complementarity /= sd;
  return rep;
}

DerivativeReport verify_derivatives(const Instance& inst, int num_points,
                                    unsigned seed, double fd_step,
                                    double perturb_scale) {
  inst.validate();
  DerivativeReport rep;
  std::mt19937_64 rng(seed);
  auto unit = [&rng]() {
    return 2.0 * (static_cast<double>(rng() >> 11) * 0x1.0p-53) - 1.0;
  };

  Vec base = inst.x0.size() > 0 ? inst.x0 : Vec::Zero(inst.n);
  auto rel_err = [](double a, double b) {
    return std::abs(a - b) / std::max(1.0, std::max(std::abs(a), std::abs(b)));
  };

  double gl[kMaxRowVars];
  for (int pt = 0; pt < num_points; ++pt) {
    Vec x = base;
    for (int i = 0; i < inst.n; ++i) x[i] += perturb_scale * unit();
    if (inst.lb.size() > 0) x = x.cwiseMax(inst.lb);
    if (inst.ub.size() > 0) x = x.cwiseMin(inst.ub);

    // Objective gradient.
    Vec g;
    inst.objective(x, &g);
    for (int i = 0; i < inst.n; ++i) {
      Vec xp = x, xm = x;
      xp[i] += fd_step;
      xm[i] -= fd_step;
      const double fd = (inst.objective(xp) - inst.objective(xm)) / (2.0 * fd_step);
      rep.max_obj_error = std::max(rep.max_obj_error, rel_err(fd, g[i]));
    }
    // Row gradients (perturb only the row's own variables).
    for (size_t r = 0; r < inst.rows.size(); ++r) {
      inst.eval_row(static_cast<int>(r), x, gl);
      const Row& row = inst.rows[r];
      for (size_t k = 0; k < row.vars.size(); ++k) {
        Vec xp = x, xm = x;
        xp[row.vars[k]] += fd_step;
        xm[row.vars[k]] -= fd_step;
        const double fd = (inst.eval_row(static_cast<int>(r), xp) -
                           inst.eval_row(static_cast<int>(r), xm)) /
                          (2.0 * fd_step);
        const double err = rel_err(fd, gl[k]);
        if (err > rep.max_row_error) {
          rep.max_row_error = err;
          rep.worst_row = static_cast<int>(r);
          rep.worst_label = row.label;
        }
      }
    }
  }
  return rep;
}

}  // namespace cipush::nlp
