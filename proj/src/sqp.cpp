#include "cipush/sqp.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <cmath>
#include <limits>

namespace cipush::sqp {

namespace {

constexpr double kBig = 1e19;

// Flat storage for all row values and local gradients at one point.
struct RowEvals {
  Vec c;                        // per-row value
  std::vector<double> grads;    // concatenated local gradients
  std::vector<int> offset;      // per-row offset into grads
};

void eval_rows(const nlp::Instance& inst, const Vec& x, RowEvals& ev) {
  const int m = static_cast<int>(inst.rows.size());
  if (ev.offset.empty()) {
    ev.c.resize(m);
    ev.offset.resize(m + 1, 0);
    for (int r = 0; r < m; ++r) {
      ev.offset[r + 1] = ev.offset[r] + static_cast<int>(inst.rows[r].vars.size());
    }
    ev.grads.resize(ev.offset[m]);
  }
  for (int r = 0; r < m; ++r) {
    ev.c[r] = inst.eval_row(r, x, ev.grads.data() + ev.offset[r]);
  }
}

double viol_l1(const nlp::Instance& inst, const Vec& c) {
  double v = 0.0;
  for (size_t r = 0; r < inst.rows.size(); ++r) {
    if (inst.rows[r].kind == nlp::Row::Kind::Equality) {
      v += std::abs(c[r]);
    } else {
      v += std::max(0.0, c[r]);
    }
  }
  return v;
}

double viol_inf(const nlp::Instance& inst, const Vec& c) {
  double v = 0.0;
  for (size_t r = 0; r < inst.rows.size(); ++r) {
    if (inst.rows[r].kind == nlp::Row::Kind::Equality) {
      v = std::max(v, std::abs(c[r]));
    } else {
      v = std::max(v, c[r]);
    }
  }
  return v;
}

// Lagrangian gradient of the constraint part: sum mult_r * J_r.
void add_constraint_grad(const nlp::Instance& inst, const RowEvals& ev,
                         const Vec& mult, Vec& out) {
  for (size_t r = 0; r < inst.rows.size(); ++r) {
    const double m = mult[r];
    if (m == 0.0) continue;
    const auto& vars = inst.rows[r].vars;
    const double* g = ev.grads.data() + ev.offset[r];
    for (size_t k = 0; k < vars.size(); ++k) out[vars[k]] += m * g[k];
  }
}

}  // namespace

const char* status_name(SolveStatus s) {
  switch (s) {
    case SolveStatus::Converged: return "converged";
    case SolveStatus::MaxIterations: return "max_iterations";
    case SolveStatus::Infeasible: return "infeasible";
    case SolveStatus::Stalled: return "stalled";
    default: return "numerical_error";
  }
}

SolveResult solve(const nlp::Instance& inst, const Config& cfg) {
  inst.validate();
  const int n = inst.n;
  const int m = static_cast<int>(inst.rows.size());
  const bool has_lb = inst.lb.size() > 0, has_ub = inst.ub.size() > 0;

  Vec x = inst.x0.size() > 0 ? inst.x0 : Vec::Zero(n);
  if (has_lb) x = x.cwiseMax(inst.lb);
  if (has_ub) x = x.cwiseMin(inst.ub);

  SolveResult res;
  res.mult.row_mult = Vec::Zero(m);
  res.mult.mu_lb = has_lb ? Vec::Zero(n) : Vec();
  res.mult.mu_ub = has_ub ? Vec::Zero(n) : Vec();

  Vec grad_f(n);
  double f = inst.objective(x, &grad_f);

  // Internal objective scaling (opt-in): work with f/fscale so that steep
  // objectives (e.g. slack penalties with gradient entries ~1e4) yield step
  // QPs whose unconstrained minimizer is not orders of magnitude outside the
  // feasible box.  Multipliers are reported in original (unscaled) units.
  const double fscale =
      cfg.scale_objective
          ? std::max(1.0, grad_f.lpNorm<Eigen::Infinity>() / 10.0)
          : 1.0;
  f /= fscale;
  grad_f /= fscale;

  // Hessian model (approximates the scaled objective Hessian).
  Mat B;
  std::shared_ptr<const qp::Factors> gn_factors;
  if (cfg.hessian == HessianMode::GaussNewton) {
    Vec d = Vec::Constant(n, cfg.gn_reg);
    if (inst.quad_diag.size() > 0) d += 2.0 * inst.quad_diag;
    d /= fscale;
    B = d.asDiagonal();
    gn_factors = qp::factorize(B);
  } else {
    B = Mat::Identity(n, n);
  }

  RowEvals ev;
  eval_rows(inst, x, ev);

  double rho = cfg.penalty_init;
  int stalls = 0;
  std::vector<int> warm_rows;
  qp::Options qopt;
  qopt.feas_tol = cfg.qp_feas_tol;

  const bool use_tr = cfg.tr_init > 0.0;
  double tr = use_tr ? cfg.tr_init : 0.0;
  // Pinned variables (lb == ub) are excluded from the trust box: their step
  // is fixed at lb - x, and clipping it would cross the bounds and make the
  // subproblem trivially infeasible whenever the radius shrinks below the
  // remaining pin distance.
  std::vector<bool> tr_skip;
  if (use_tr && has_lb && has_ub) {
    tr_skip.assign(n, false);
    for (int i = 0; i < n; ++i)
      tr_skip[i] = std::isfinite(inst.lb[i]) && std::isfinite(inst.ub[i]) &&
                   std::abs(inst.ub[i] - inst.lb[i]) <=
                       1e-12 * (1.0 + std::abs(inst.lb[i]) + std::abs(inst.ub[i]));
  }

  auto record = [&](int it, double merit, double vinf, double v1, double stepn,
                    double alpha, int qpit, bool elastic) {
    if (!cfg.keep_iterates) return;
    res.log.push_back(
        IterRecord{it, f * fscale, merit, vinf, v1, stepn, alpha, rho, tr, qpit, elastic});
  };

  int iter = 0;
  for (; iter < cfg.max_iter; ++iter) {
    // Convergence test with the current multiplier estimate.
    const nlp::KktReport rep = nlp::check_kkt(inst, x, res.mult);
    if (rep.stationarity <= cfg.kkt_tol &&
        std::max(rep.eq_violation, rep.ineq_violation) <= cfg.feas_tol &&
        rep.complementarity <= cfg.kkt_tol) {
      res.status = SolveStatus::Converged;
      break;
    }

    // Build the step QP in d-space, optionally intersected with the trust box.
    Vec lbd = has_lb ? Vec(inst.lb - x) : Vec();
    Vec ubd = has_ub ? Vec(inst.ub - x) : Vec();
    if (use_tr) {
      if (lbd.size() == 0) lbd = Vec::Constant(n, -tr);
      if (ubd.size() == 0) ubd = Vec::Constant(n, tr);
      for (int i = 0; i < n; ++i) {
        if (!tr_skip.empty() && tr_skip[i]) continue;
        lbd[i] = std::max(lbd[i], -tr);
        ubd[i] = std::min(ubd[i], tr);
      }
    }
    qp::Problem qpp;
    qpp.H = B;
    qpp.g = grad_f;
    if (cfg.hessian == HessianMode::GaussNewton) qpp.factors = gn_factors;
    qpp.lb = lbd;
    qpp.ub = ubd;
    for (int r = 0; r < m; ++r) {
      qp::SparseRow row;
      row.idx = inst.rows[r].vars;
      const double* g = ev.grads.data() + ev.offset[r];
      row.val.assign(g, g + row.idx.size());
      row.b = -ev.c[r];
      if (inst.rows[r].kind == nlp::Row::Kind::Equality) {
        qpp.eq.push_back(std::move(row));
      } else {
        qpp.ineq.push_back(std::move(row));
      }
    }

    qp::WarmStart warm{warm_rows};
    qp::Result qres = qp::solve(qpp, qopt, warm_rows.empty() ? nullptr : &warm);
    bool used_elastic = false;
    double elastic_slack = 0.0;

    if (qres.status != qp::Status::Optimal) {
      if (std::getenv("SQP_QP_DEBUG"))  // DEBUG
        std::fprintf(stderr, "[qp] it=%d plain status=%d qpit=%d\n", iter,
                     static_cast<int>(qres.status), qres.iterations);
      // Elastic restoration: add l1 slacks on constraint rows.
      used_elastic = true;
      const double rho_e = std::min(100.0 * rho, 1e8);
      auto solve_elastic = [&](bool slack_ineq) -> qp::Result {
        const int me = static_cast<int>(qpp.eq.size());
        const int mi = static_cast<int>(qpp.ineq.size());
        const int ns = 2 * me + (slack_ineq ? mi : 0);
        const int ne = n + ns;
        qp::Problem ep;
        ep.H = Mat::Zero(ne, ne);
        ep.H.topLeftCorner(n, n) = B;
        // Unit curvature on the slacks keeps the elastic QP's unconstrained
        // start (-g/H) at the scale of the penalty weight, not 1e6 times it.
        for (int i = n; i < ne; ++i) ep.H(i, i) = 1.0;
        ep.g = Vec::Zero(ne);
        ep.g.head(n) = grad_f;
        ep.g.tail(ns).setConstant(rho_e);
        ep.lb = Vec::Constant(ne, -kBig);
        ep.ub = Vec::Constant(ne, kBig);
        if (qpp.lb.size()) ep.lb.head(n) = qpp.lb;
        if (qpp.ub.size()) ep.ub.head(n) = qpp.ub;
        ep.lb.tail(ns).setZero();
        for (int r = 0; r < me; ++r) {
          qp::SparseRow row = qpp.eq[r];
          row.idx.push_back(n + 2 * r);
          row.val.push_back(1.0);
          row.idx.push_back(n + 2 * r + 1);
          row.val.push_back(-1.0);
          ep.eq.push_back(std::move(row));
        }
        for (int r = 0; r < mi; ++r) {
          qp::SparseRow row = qpp.ineq[r];
          if (slack_ineq) {
            row.idx.push_back(n + 2 * me + r);
            row.val.push_back(-1.0);
          }
          ep.ineq.push_back(std::move(row));
        }
        return qp::solve(ep, qopt);
      };
      // Relax only the equality rows first: subproblem infeasibility here
      // typically stems from the linearized equalities fighting the variable
      // box, and the smaller elastic problem is much cheaper.  Fall back to
      // relaxing every row if that is still infeasible.
      qres = solve_elastic(false);
      if (qres.status != qp::Status::Optimal) qres = solve_elastic(true);
      if (qres.status != qp::Status::Optimal) {
        res.status = SolveStatus::NumericalError;
        break;
      }
      const int ns_used = static_cast<int>(qres.x.size()) - n;
      elastic_slack = qres.x.tail(ns_used).lpNorm<1>();
      qres.x.conservativeResize(n);
      // Drop slack-variable bound multipliers; keep only the x part.
      if (qres.mu_lb.size()) qres.mu_lb.conservativeResize(n);
      if (qres.mu_ub.size()) qres.mu_ub.conservativeResize(n);
      qres.active_rows.clear();  // layout differs; skip warm reuse
    } else {
      warm_rows = qres.active_rows;
    }

    const Vec d = qres.x.head(n);
    const double step_norm = d.lpNorm<Eigen::Infinity>();
    const double v1 = viol_l1(inst, ev.c);
    const double vinf = viol_inf(inst, ev.c);

    // Multiplier estimate from the QP.
    Vec new_mult = Vec::Zero(m);
    {
      int ie = 0, ii = 0;
      for (int r = 0; r < m; ++r) {
        new_mult[r] = (inst.rows[r].kind == nlp::Row::Kind::Equality)
                          ? qres.y_eq[ie++]
                          : qres.lam_ineq[ii++];
      }
    }

    if (step_norm <= 1e-10 * (1.0 + x.lpNorm<Eigen::Infinity>())) {
      if (vinf <= cfg.feas_tol) {
        res.mult.row_mult = fscale * new_mult;
        if (has_lb) res.mult.mu_lb = qres.mu_lb.size() ? Vec(fscale * qres.mu_lb) : Vec::Zero(n);
        if (has_ub) res.mult.mu_ub = qres.mu_ub.size() ? Vec(fscale * qres.mu_ub) : Vec::Zero(n);
        res.status = SolveStatus::Converged;
        record(iter, f + rho * v1, vinf, v1, step_norm, 0.0, qres.iterations, used_elastic);
        break;
      }
      if (used_elastic && elastic_slack > cfg.feas_tol) {
        res.status = SolveStatus::Infeasible;
        break;
      }
      if (++stalls > cfg.stall_limit) {
        res.status = SolveStatus::Stalled;
        break;
      }
    }

    // Exact-penalty weight: keep above the dual norm.  Elastic duals are
    // excluded: rows at their slack bound carry |multiplier| = rho_e = 100*rho
    // by construction, so feeding them back would grow rho geometrically.
    // Once the iterate is feasible the update is frozen: its only purpose is
    // to force feasibility, and near-dependent active rows can report
    // arbitrarily large vertex duals that would shrink every subsequent line
    // search step without buying anything.
    if (!used_elastic && vinf > cfg.feas_tol) {
      double mult_norm = new_mult.lpNorm<Eigen::Infinity>();
      if (qres.mu_lb.size()) mult_norm = std::max(mult_norm, qres.mu_lb.lpNorm<Eigen::Infinity>());
      if (qres.mu_ub.size()) mult_norm = std::max(mult_norm, qres.mu_ub.lpNorm<Eigen::Infinity>());
      rho = std::min(std::max(rho, 1.5 * mult_norm + 1e-3), cfg.penalty_max);
    }

    const double merit0 = f + rho * v1;
    // Directional derivative model of the l1 merit.  A plain QP step removes
    // the whole linearized violation; an elastic step only removes the part
    // not left in its slacks, so credit just v1 - elastic_slack.
    const double D = grad_f.dot(d) - rho * std::max(v1 - elastic_slack, 0.0);

    // Armijo backtracking on the l1 merit.
    double alpha = 1.0;
    bool accepted = false;
    Vec x_try;
    double f_try = 0.0;
    RowEvals ev_try;
    while (alpha >= cfg.ls_alpha_min) {
      x_try = x + alpha * d;
      f_try = inst.objective(x_try) / fscale;
      eval_rows(inst, x_try, ev_try);
      const double merit_try = f_try + rho * viol_l1(inst, ev_try.c);
      if (merit_try <= merit0 + cfg.ls_eta * alpha * std::min(D, 0.0) + 1e-14 * std::abs(merit0)) {
        accepted = true;
        break;
      }
      alpha *= 0.5;
    }

    record(iter, merit0, vinf, v1, step_norm, accepted ? alpha : 0.0,
           qres.iterations, used_elastic);
    if (std::getenv("SQP_TRACE"))  // DEBUG
      std::fprintf(stderr,
                   "[sqp] it=%d f=%.6g vinf=%.3g v1=%.3g step=%.3g a=%.3g "
                   "rho=%.3g qpit=%d el=%d acc=%d\n",
                   iter, f * fscale, vinf, v1, step_norm, alpha, rho,
                   qres.iterations, used_elastic ? 1 : 0, accepted ? 1 : 0);

    // Adapt the trust radius to how much of the step the line search kept.
    if (use_tr) {
      if (!accepted) {
        tr = std::max(tr * 0.25, cfg.tr_min);
      } else if (alpha >= 0.99) {
        tr = std::min(tr * 2.0, cfg.tr_max);
      } else if (alpha < 0.1) {
        tr = std::max(tr * 0.5, cfg.tr_min);
      }
    }

    if (!accepted && std::getenv("SQP_LS_DEBUG")) {  // DEBUG
      std::fprintf(stderr,
                   "[ls] it=%d v1=%.6g eslack=%.6g gfd=%.6g D=%.6g rho=%.3g\n",
                   iter, v1, elastic_slack, grad_f.dot(d), D, rho);
      for (double a : {1.0, 1e-1, 1e-2, 1e-3, 1e-4, 1e-6, 1e-8}) {
        Vec xt = x + a * d;
        RowEvals evt;
        eval_rows(inst, xt, evt);
        const double mt = inst.objective(xt) / fscale + rho * viol_l1(inst, evt.c);
        std::fprintf(stderr, "[ls]   a=%.0e dmerit=%.6g dv1=%.6g\n", a,
                     mt - merit0, viol_l1(inst, evt.c) - v1);
      }
    }
    if (!accepted) {
      // Reject the step; refresh curvature and try again with a larger
      // penalty.  Skip the penalty escalation when already feasible: there a
      // larger rho only penalises the trial step's own linearisation error
      // harder and shrinks the accepted alpha further.
      if (cfg.hessian == HessianMode::BFGS) B = Mat::Identity(n, n);
      if (vinf > cfg.feas_tol) rho = std::min(rho * 10.0, cfg.penalty_max);
      if (++stalls > cfg.stall_limit) {
        res.status = SolveStatus::Stalled;
        break;
      }
      continue;
    }
    stalls = 0;

    // BFGS update (damped) with the accepted step.
    if (cfg.hessian == HessianMode::BFGS) {
      Vec grad_f_try(n);
      inst.objective(x_try, &grad_f_try);
      grad_f_try /= fscale;
      Vec gl_new = grad_f_try, gl_old = grad_f;
      add_constraint_grad(inst, ev_try, new_mult, gl_new);
      add_constraint_grad(inst, ev, new_mult, gl_old);
      const Vec s = x_try - x;
      Vec y = gl_new - gl_old;
      const double sBs = s.dot(B * s);
      const double sy = s.dot(y);
      if (sBs > 1e-16 && s.lpNorm<Eigen::Infinity>() > 1e-14) {
        double theta = 1.0;
        if (sy < 0.2 * sBs) theta = 0.8 * sBs / (sBs - sy);
        Vec yb = theta * y + (1.0 - theta) * (B * s);
        const double syb = s.dot(yb);
        if (syb > 1e-16) {
          const Vec Bs = B * s;
          B -= (Bs * Bs.transpose()) / sBs;
          B += (yb * yb.transpose()) / syb;
        }
      }
      x = x_try;
      f = f_try;
      grad_f = grad_f_try;
    } else {
      x = x_try;
      f = inst.objective(x, &grad_f) / fscale;
      grad_f /= fscale;
    }
    std::swap(ev.c, ev_try.c);
    std::swap(ev.grads, ev_try.grads);
    std::swap(ev.offset, ev_try.offset);

    res.mult.row_mult = fscale * new_mult;
    if (has_lb) res.mult.mu_lb = qres.mu_lb.size() ? Vec(fscale * qres.mu_lb) : Vec::Zero(n);
    if (has_ub) res.mult.mu_ub = qres.mu_ub.size() ? Vec(fscale * qres.mu_ub) : Vec::Zero(n);
  }

  if (iter >= cfg.max_iter) res.status = SolveStatus::MaxIterations;
  res.x = x;
  res.objective = inst.objective(x);
  res.kkt = nlp::check_kkt(inst, x, res.mult);
  res.iterations = iter;
  return res;
}

}  // namespace cipush::sqp
