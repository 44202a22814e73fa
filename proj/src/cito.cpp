#include "cipush/cito.hpp"

#include <chrono>
#include <cmath>
#include <limits>
#include <memory>
#include <stdexcept>
#include <string>

#include "cipush/stc.hpp"

namespace cipush::cito {

namespace {
constexpr double kInf = 1e30;
constexpr double kBindingForceTol = 1e-6;  // N, "binding contact" statistic
}  // namespace

const char* activation_name(Activation a) {
  switch (a) {
    case Activation::AllCC: return "all_cc";
    case Activation::TaskStc: return "task_stc";
    default: return "distance_stc";
  }
}

void CitoProblem::validate() const {
  box.validate();
  const int n_v = model::nv(task);
  const int n_x = 2 * n_v;
  if (horizon < 1) throw std::invalid_argument("CitoProblem: horizon must be >= 1");
  if (h <= 0.0) throw std::invalid_argument("CitoProblem: h must be positive");
  if (w1 < 0.0 || w2 < 0.0) throw std::invalid_argument("CitoProblem: weights must be >= 0");
  if (x_init.size() != n_x) throw std::invalid_argument("CitoProblem: x_init size mismatch");
  if (x_lb.size() != 0 && x_lb.size() != n_x) throw std::invalid_argument("CitoProblem: x_lb size");
  if (x_ub.size() != 0 && x_ub.size() != n_x) throw std::invalid_argument("CitoProblem: x_ub size");
  if (tau_lb.size() != 0 && tau_lb.size() != model::na()) throw std::invalid_argument("CitoProblem: tau_lb size");
  if (tau_ub.size() != 0 && tau_ub.size() != model::na()) throw std::invalid_argument("CitoProblem: tau_ub size");
  const int goal_len = task == model::Task::Translate ? 2 : 1;
  if (goal.size() != goal_len) throw std::invalid_argument("CitoProblem: goal size mismatch");
  if (activation == Activation::DistanceStc && d_thresh <= 0.0) {
    throw std::invalid_argument("CitoProblem: d_thresh must be positive");
  }
  if (trigger_epsilon < 0.0) throw std::invalid_argument("CitoProblem: trigger_epsilon < 0");
  if (x_lb.size() && x_ub.size()) {
    const int goal_base = 2;  // goal components start at the box pose entries
    for (int g = 0; g < goal_len; ++g) {
      const int j = goal_base + g;
      if (goal[g] < x_lb[j] || goal[g] > x_ub[j]) {
        throw std::invalid_argument("CitoProblem: goal outside state bounds");
      }
    }
  }
}

namespace {

Vec default_x_lb(model::Task task) {
  const int n_v = model::nv(task);
  Vec lb(2 * n_v);
  for (int j = 0; j < n_v; ++j) lb[j] = -2.0;
  if (task == model::Task::Translate) lb[4] = -4.0 * M_PI;
  else lb[2] = -4.0 * M_PI;
  for (int j = n_v; j < 2 * n_v; ++j) lb[j] = -5.0;
  return lb;
}


Vec effective_x_lb(const CitoProblem& p) {
  return p.x_lb.size() ? p.x_lb : default_x_lb(p.task);
}
Vec effective_x_ub(const CitoProblem& p) {
  return p.x_ub.size() ? p.x_ub : Vec(-default_x_lb(p.task));
}
Vec effective_tau_lb(const CitoProblem& p) {
  return p.tau_lb.size() ? p.tau_lb : Vec(Vec::Constant(model::na(), -10.0));
}
Vec effective_tau_ub(const CitoProblem& p) {
  return p.tau_ub.size() ? p.tau_ub : Vec(Vec::Constant(model::na(), 10.0));
}

}  // namespace

CitoProblem translation_problem(const Vec2& target) {
  CitoProblem prob;
  prob.task = model::Task::Translate;
  prob.x_init = Vec::Zero(10);
  prob.x_init[0] = 0.5 - prob.box.half();  // pusher resting on the -x face
  prob.x_init[1] = 0.0;
  prob.x_init[2] = 0.5;  // box centre
  prob.x_init[3] = 0.0;
  prob.goal = Vec(2);
  prob.goal << target[0], target[1];
  prob.pairs = model::default_pairs(prob.task);
  return prob;
}

CitoProblem rotation_problem(double angle_goal) {
  CitoProblem prob;
  prob.task = model::Task::Rotate;
  prob.pinned_center = Vec2::Zero();
  prob.x_init = Vec::Zero(6);
  prob.x_init[0] = -prob.box.half();  // pusher on the -x face centre
  prob.x_init[1] = 0.0;
  prob.goal = Vec::Constant(1, angle_goal);
  prob.pairs = model::default_pairs(prob.task);
  return prob;
}

Layout layout(const CitoProblem& prob) {
  Layout l;
  l.nv = model::nv(prob.task);
  l.nx = 2 * l.nv;
  l.na = model::na();
  l.nf = friction::num_force_vars(prob.friction_model);
  l.npairs = static_cast<int>(prob.pairs.size());
  l.N = prob.horizon;
  return l;
}

Vec2 direction_vector(const CitoProblem& prob) {
  if (prob.task == model::Task::Rotate) return Vec2::Zero();
  return Vec2(prob.goal[0] - prob.x_init[2], prob.goal[1] - prob.x_init[3]);
}

namespace {

/// Immutable data shared by all constraint closures of one instance.
struct BuildCtx {
  model::Task task;
  model::BoxParams box;
  Vec2 pinned;
  std::vector<model::ContactPair> pairs;
  friction::Model fmodel = friction::Model::CC;
  double h = 0.0, mu = 0.0, eps = 0.0, d_thresh = 0.0;
  int nv = 0, nf = 0, np = 0;
  Vec Mdiag;
};
using CtxPtr = std::shared_ptr<const BuildCtx>;

std::string tag(const char* base, int i, int k = -1, int j = -1) {
  std::string s = base;
  s += '_';
  s += std::to_string(i);
  if (k >= 0) {
    s += '_';
    s += std::to_string(k);
  }
  if (j >= 0) {
    s += '_';
    s += std::to_string(j);
  }
  return s;
}

Vec local_vec(const double* xl, int off, int len) {
  Vec v(len);
  for (int m = 0; m < len; ++m) v[m] = xl[off + m];
  return v;
}

// Kinematics q_{i+1} - q_i - h*qdot_{i+1} = 0, one coordinate per row.
nlp::Row kinematics_row(const Layout& L, double h, int i, int j) {
  nlp::Row r;
  r.kind = nlp::Row::Kind::Equality;
  r.vars = {L.x_off(i) + j, L.x_off(i + 1) + j, L.x_off(i + 1) + L.nv + j};
  r.eval = [h](const double* xl, double* gl) {
    if (gl) {
      gl[0] = -1.0;
      gl[1] = 1.0;
      gl[2] = -h;
    }
    return xl[1] - xl[0] - h * xl[2];
  };
  r.label = tag("kin", i, j);
  return r;
}

// Dynamics row j of step i:
//   M_jj (qd'_j - qd_j) - h*(S_a tau)_j - h*(J^T lam)_j + h*c_j(qd') = 0
// with contact geometry evaluated at q' = q_{i+1}.
nlp::Row dynamics_row(const CtxPtr& c, const Layout& L, int i, int j) {
  nlp::Row r;
  r.kind = nlp::Row::Kind::Equality;
  const bool has_tau = j < L.na;
  const int nv = c->nv;
  for (int m = 0; m < 2 * nv; ++m) r.vars.push_back(L.x_off(i + 1) + m);
  r.vars.push_back(L.x_off(i) + nv + j);  // qd_j of state i
  if (has_tau) r.vars.push_back(L.u_off(i) + j);
  for (int k = 0; k < c->np; ++k) {
    for (int m = 0; m < 3; ++m) r.vars.push_back(L.f_off(i, k) + m);
  }
  r.eval = [c, j, has_tau](const double* xl, double* gl) {
    const int nv = c->nv;
    const Vec q = local_vec(xl, 0, nv);
    const Vec qd = local_vec(xl, nv, nv);
    const double qd_prev = xl[2 * nv];
    const int tau_at = 2 * nv + 1;
    const int lam0 = tau_at + (has_tau ? 1 : 0);
    const int nlocal = lam0 + 3 * c->np;
    if (gl) {
      for (int m = 0; m < nlocal; ++m) gl[m] = 0.0;
    }

    const model::BiasEval be = model::bias(c->task, c->box, qd);
    double val = c->Mdiag[j] * (qd[j] - qd_prev) + c->h * be.value[j];
    if (has_tau) val -= c->h * xl[tau_at];
    if (gl) {
      gl[nv + j] += c->Mdiag[j];
      for (int m = 0; m < nv; ++m) gl[nv + m] += c->h * be.dvalue_dqdot(j, m);
      gl[2 * nv] = -c->Mdiag[j];
      if (has_tau) gl[tau_at] = -c->h;
    }
    for (int k = 0; k < c->np; ++k) {
      const model::ContactEval ce =
          model::contact_eval(c->task, c->box, q, c->pairs[k], c->pinned);
      const double ln = xl[lam0 + 3 * k];
      const double lt = xl[lam0 + 3 * k + 1] - xl[lam0 + 3 * k + 2];
      val -= c->h * (ce.dphi_dq[j] * ln + ce.dzeta_dq[j] * lt);
      if (gl) {
        for (int m = 0; m < nv; ++m) {
          gl[m] -= c->h * (ce.phi_hess(j, m) * ln + ce.zeta_hess(j, m) * lt);
        }
        gl[lam0 + 3 * k] = -c->h * ce.dphi_dq[j];
        gl[lam0 + 3 * k + 1] = -c->h * ce.dzeta_dq[j];
        gl[lam0 + 3 * k + 2] = c->h * ce.dzeta_dq[j];
      }
    }
    return val;
  };
  r.label = tag("dyn", i, j);
  return r;
}

// Pusher-outside-the-box: for a convex box the pusher is non-penetrating iff
// it lies in front of at least one face plane, i.e. max_k phi_k >= 0.  The
// per-face plane gaps cannot all be nonnegative at once (opposite-face gaps
// sum to -2*half), so non-penetration is one row per state on the largest
// gap, written as -max_k phi_k(q_si) <= 0.
nlp::Row box_gap_row(const CtxPtr& c, const Layout& L, int si) {
  nlp::Row r;
  r.kind = nlp::Row::Kind::Inequality;
  for (int m = 0; m < c->nv; ++m) r.vars.push_back(L.x_off(si) + m);
  r.eval = [c](const double* xl, double* gl) {
    const Vec q = local_vec(xl, 0, c->nv);
    int best = 0;
    double best_phi = -std::numeric_limits<double>::infinity();
    for (size_t k = 0; k < c->pairs.size(); ++k) {
      const double phi = model::signed_distance(c->task, c->box, q, c->pairs[k], c->pinned);
      if (phi > best_phi) {
        best_phi = phi;
        best = static_cast<int>(k);
      }
    }
    if (!gl) return -best_phi;
    const model::ContactEval ce =
        model::contact_eval(c->task, c->box, q, c->pairs[best], c->pinned);
    for (int m = 0; m < c->nv; ++m) gl[m] = -ce.dphi_dq[m];
    return -ce.phi;
  };
  r.label = tag("gap", si);
  return r;
}

// Relaxed contact complementarity scale*(sign*phi(q_{i+1})*ln - s) <= 0.
// Emitted as a +/- pair (|phi*ln| <= s): a face-plane gap can be negative
// while the pusher rides another face, and the one-sided product would then
// admit force at a distance through that plane.  `scale` is 1 for the
// always-on variant and the constant trigger weight sigma* for the
// task-direction variant.
nlp::Row complementarity_row(const CtxPtr& c, const Layout& L, int i, int k,
                             double scale, int sign, const char* base) {
  nlp::Row r;
  r.kind = nlp::Row::Kind::Inequality;
  for (int m = 0; m < c->nv; ++m) r.vars.push_back(L.x_off(i + 1) + m);
  r.vars.push_back(L.f_off(i, k));  // ln
  r.vars.push_back(L.s_off(i, k));
  r.eval = [c, k, scale, sign](const double* xl, double* gl) {
    const Vec q = local_vec(xl, 0, c->nv);
    const double ln = xl[c->nv];
    const double s = xl[c->nv + 1];
    const model::ContactEval ce =
        model::contact_eval(c->task, c->box, q, c->pairs[k], c->pinned);
    if (gl) {
      for (int m = 0; m < c->nv; ++m) gl[m] = scale * sign * ln * ce.dphi_dq[m];
      gl[c->nv] = scale * sign * ce.phi;
      gl[c->nv + 1] = -scale;
    }
    return scale * (sign * ce.phi * ln - s);
  };
  r.label = tag(base, i, k);
  return r;
}

// Constant-trigger force shutdown: sign*scale*ln <= 0 (the two rows together
// pin ln to zero for pairs pushing against the task direction).
nlp::Row force_off_row(const Layout& L, int i, int k, double scale, int sign) {
  nlp::Row r;
  r.kind = nlp::Row::Kind::Inequality;
  r.vars = {L.f_off(i, k)};
  const double g = sign * scale;
  r.eval = [g](const double* xl, double* gl) {
    if (gl) gl[0] = g;
    return g * xl[0];
  };
  r.label = tag(sign > 0 ? "off_p" : "off_m", i, k);
  return r;
}

// Proximity-triggered complementarity (two-sided, see complementarity_row):
//   sigma*(phi - d_thresh, eps) * (sign*phi*ln - s) <= 0.
// sigma*(g) = -min(g, 0), so the trigger weight is positive exactly where
// phi < d_thresh.
nlp::Row distance_on_row(const CtxPtr& c, const Layout& L, int i, int k, int sign) {
  nlp::Row r;
  r.kind = nlp::Row::Kind::Inequality;
  for (int m = 0; m < c->nv; ++m) r.vars.push_back(L.x_off(i + 1) + m);
  r.vars.push_back(L.f_off(i, k));
  r.vars.push_back(L.s_off(i, k));
  r.eval = [c, k, sign](const double* xl, double* gl) {
    const Vec q = local_vec(xl, 0, c->nv);
    const double ln = xl[c->nv];
    const double s = xl[c->nv + 1];
    const model::ContactEval ce =
        model::contact_eval(c->task, c->box, q, c->pairs[k], c->pinned);
    const auto [sig, dsig] = stc::sigma_star(ce.phi - c->d_thresh, c->eps);
    const double cval = sign * ce.phi * ln - s;
    if (gl) {
      for (int m = 0; m < c->nv; ++m) {
        gl[m] = (dsig * cval + sig * sign * ln) * ce.dphi_dq[m];
      }
      gl[c->nv] = sig * sign * ce.phi;
      gl[c->nv + 1] = -sig;
    }
    return sig * cval;
  };
  r.label = tag(sign > 0 ? "don_p" : "don_m", i, k);
  return r;
}

// Proximity-triggered shutdown: sigma*(d_thresh - phi, eps) * sign*ln <= 0.
nlp::Row distance_off_row(const CtxPtr& c, const Layout& L, int i, int k, int sign) {
  nlp::Row r;
  r.kind = nlp::Row::Kind::Inequality;
  for (int m = 0; m < c->nv; ++m) r.vars.push_back(L.x_off(i + 1) + m);
  r.vars.push_back(L.f_off(i, k));
  r.eval = [c, k, sign](const double* xl, double* gl) {
    const Vec q = local_vec(xl, 0, c->nv);
    const double ln = xl[c->nv];
    const model::ContactEval ce =
        model::contact_eval(c->task, c->box, q, c->pairs[k], c->pinned);
    const auto [sig, dsig] = stc::sigma_star(c->d_thresh - ce.phi, c->eps);
    if (gl) {
      for (int m = 0; m < c->nv; ++m) gl[m] = sign * ln * dsig * (-ce.dphi_dq[m]);
      gl[c->nv] = sign * sig;
    }
    return sign * sig * ln;
  };
  r.label = tag(sign > 0 ? "doff_p" : "doff_m", i, k);
  return r;
}

// One row of the per-contact friction residual set, chained through the slip
// rate psi(q_{i+1}, qd_{i+1}).  Relaxed rows subtract the pair slack.
nlp::Row friction_row(const CtxPtr& c, const Layout& L, int i, int k, int row_index,
                      bool relaxed, const std::string& label) {
  nlp::Row r;
  r.kind = nlp::Row::Kind::Inequality;
  for (int m = 0; m < 2 * c->nv; ++m) r.vars.push_back(L.x_off(i + 1) + m);
  for (int m = 0; m < c->nf; ++m) r.vars.push_back(L.f_off(i, k) + m);
  if (relaxed) r.vars.push_back(L.s_off(i, k));
  r.eval = [c, k, row_index, relaxed](const double* xl, double* gl) {
    const int nv = c->nv;
    const Vec q = local_vec(xl, 0, nv);
    const Vec qd = local_vec(xl, nv, nv);
    const Vec lam = local_vec(xl, 2 * nv, c->nf);
    const model::SlipEval se =
        model::slip_velocity(c->task, c->box, q, qd, c->pairs[k], c->pinned);
    const friction::Residual res =
        friction::residuals(c->fmodel, c->mu, se.psi, lam, c->eps)[row_index];
    double val = res.value;
    if (relaxed) val -= xl[2 * nv + c->nf];
    if (gl) {
      for (int m = 0; m < nv; ++m) {
        gl[m] = res.dvalue_dpsi * se.dpsi_dq[m];
        gl[nv + m] = res.dvalue_dpsi * se.dpsi_dqdot[m];
      }
      for (int m = 0; m < c->nf; ++m) gl[2 * nv + m] = res.dvalue_dlam[m];
      if (relaxed) gl[2 * nv + c->nf] = -1.0;
    }
    return val;
  };
  r.label = tag(("fr_" + label).c_str(), i, k);
  return r;
}

}  // namespace

nlp::Instance build_nlp(const CitoProblem& prob) {
  prob.validate();
  const Layout L = layout(prob);
  auto ctx = std::make_shared<BuildCtx>();
  ctx->task = prob.task;
  ctx->box = prob.box;
  ctx->pinned = prob.pinned_center;
  ctx->pairs = prob.pairs;
  ctx->fmodel = prob.friction_model;
  ctx->h = prob.h;
  ctx->mu = prob.box.mu_contact;
  ctx->eps = prob.trigger_epsilon;
  ctx->d_thresh = prob.d_thresh;
  ctx->nv = L.nv;
  ctx->nf = L.nf;
  ctx->np = L.npairs;
  ctx->Mdiag = model::mass_matrix(prob.task, prob.box).diagonal();
  const CtxPtr c = ctx;

  nlp::Instance inst;
  inst.n = L.total();
  inst.lb = Vec::Constant(inst.n, -kInf);
  inst.ub = Vec::Constant(inst.n, kInf);
  inst.quad_diag = Vec::Zero(inst.n);
  inst.lin = Vec::Zero(inst.n);
  inst.x0 = Vec::Zero(inst.n);

  const Vec xlb = effective_x_lb(prob), xub = effective_x_ub(prob);
  const Vec tlb = effective_tau_lb(prob), tub = effective_tau_ub(prob);
  Vec x_start = prob.x_init.cwiseMax(xlb).cwiseMin(xub);

  // States: bounds, pinned first state, masked terminal state, initial guess.
  for (int i = 0; i <= L.N; ++i) {
    inst.lb.segment(L.x_off(i), L.nx) = xlb;
    inst.ub.segment(L.x_off(i), L.nx) = xub;
    inst.x0.segment(L.x_off(i), L.nx) = x_start;
    if (i >= 1) {
      for (int j = 0; j < L.nv; ++j) {
        inst.quad_diag[L.x_off(i) + L.nv + j] = prob.w1;
      }
    }
  }
  inst.lb.segment(L.x_off(0), L.nx) = x_start;
  inst.ub.segment(L.x_off(0), L.nx) = x_start;
  {  // Terminal: goal components of the box pose and all velocities zero.
    const int t = L.x_off(L.N);
    if (prob.task == model::Task::Translate) {
      inst.lb[t + 2] = inst.ub[t + 2] = prob.goal[0];
      inst.lb[t + 3] = inst.ub[t + 3] = prob.goal[1];
    } else {
      inst.lb[t + 2] = inst.ub[t + 2] = prob.goal[0];
    }
    for (int j = 0; j < L.nv; ++j) inst.lb[t + L.nv + j] = inst.ub[t + L.nv + j] = 0.0;
  }
  // Controls.
  for (int i = 0; i < L.N; ++i) {
    inst.lb.segment(L.u_off(i), L.na) = tlb;
    inst.ub.segment(L.u_off(i), L.na) = tub;
  }
  // Forces (all variables nonnegative: ln, lt+, lt-, and gamma for CC).
  for (int i = 0; i < L.N; ++i) {
    for (int k = 0; k < L.npairs; ++k) {
      for (int m = 0; m < L.nf; ++m) inst.lb[L.f_off(i, k) + m] = 0.0;
      inst.lb[L.s_off(i, k)] = 0.0;
      inst.lin[L.s_off(i, k)] = prob.w2;
      inst.x0[L.s_off(i, k)] = 1e-3;
    }
  }

  // Constant task-direction trigger weights (the direction depends only on
  // the pinned initial state, so sigma* is a per-instance constant).
  const Vec2 d = direction_vector(prob);
  std::vector<double> sig_on(L.npairs, 0.0), sig_off(L.npairs, 0.0);
  if (prob.activation == Activation::TaskStc) {
    for (int k = 0; k < L.npairs; ++k) {
      const model::ContactEval ce = model::contact_eval(
          prob.task, prob.box, x_start.head(L.nv), c->pairs[k], prob.pinned_center);
      const Vec2 push_n = -ce.n_world;  // direction this pair can push the box
      const double align = push_n.dot(d);
      sig_on[k] = stc::sigma_star(-align, 0.0).first;   // max(align, 0)
      sig_off[k] = stc::sigma_star(align, 0.0).first;   // max(-align, 0)
    }
  }

  // Friction row kinds and labels are fixed per model; probe them once.
  const std::vector<friction::Residual> probe = friction::residuals(
      prob.friction_model, ctx->mu, 0.0, Vec::Zero(L.nf), ctx->eps);

  for (int i = 0; i < L.N; ++i) {
    for (int j = 0; j < L.nv; ++j) inst.rows.push_back(kinematics_row(L, prob.h, i, j));
    for (int j = 0; j < L.nv; ++j) inst.rows.push_back(dynamics_row(c, L, i, j));
    if (L.npairs > 0) inst.rows.push_back(box_gap_row(c, L, i + 1));
    for (int k = 0; k < L.npairs; ++k) {
      switch (prob.activation) {
        case Activation::AllCC:
          inst.rows.push_back(complementarity_row(c, L, i, k, 1.0, +1, "cc_p"));
          inst.rows.push_back(complementarity_row(c, L, i, k, 1.0, -1, "cc_m"));
          break;
        case Activation::TaskStc:
          if (sig_on[k] > 0.0) {
            inst.rows.push_back(complementarity_row(c, L, i, k, sig_on[k], +1, "on_p"));
            inst.rows.push_back(complementarity_row(c, L, i, k, sig_on[k], -1, "on_m"));
          }
          if (sig_off[k] > 0.0) {
            inst.rows.push_back(force_off_row(L, i, k, sig_off[k], +1));
            inst.rows.push_back(force_off_row(L, i, k, sig_off[k], -1));
          }
          break;
        case Activation::DistanceStc:
          inst.rows.push_back(distance_on_row(c, L, i, k, +1));
          inst.rows.push_back(distance_on_row(c, L, i, k, -1));
          inst.rows.push_back(distance_off_row(c, L, i, k, +1));
          inst.rows.push_back(distance_off_row(c, L, i, k, -1));
          break;
      }
      for (size_t rr = 0; rr < probe.size(); ++rr) {
        const bool relaxed =
            probe[rr].kind == friction::Residual::Kind::RelaxedComplementarity;
        inst.rows.push_back(
            friction_row(c, L, i, k, static_cast<int>(rr), relaxed, probe[rr].label));
      }
    }
  }
  return inst;
}

CitoSolution unpack(const CitoProblem& prob, const Vec& x) {
  const Layout L = layout(prob);
  CitoSolution sol;
  sol.X.reserve(L.N + 1);
  for (int i = 0; i <= L.N; ++i) sol.X.push_back(x.segment(L.x_off(i), L.nx));
  sol.U.reserve(L.N);
  sol.F.reserve(L.N);
  sol.S.reserve(L.N);
  sol.binding_contacts.assign(L.N, 0);
  for (int i = 0; i < L.N; ++i) {
    sol.U.push_back(x.segment(L.u_off(i), L.na));
    Vec f(L.npairs * L.nf);
    Vec s(L.npairs);
    for (int k = 0; k < L.npairs; ++k) {
      f.segment(k * L.nf, L.nf) = x.segment(L.f_off(i, k), L.nf);
      s[k] = x[L.s_off(i, k)];
      if (f[k * L.nf] > kBindingForceTol) ++sol.binding_contacts[i];
    }
    sol.F.push_back(std::move(f));
    sol.S.push_back(std::move(s));
  }
  return sol;
}

namespace {

// One backward-Euler contact step: unknowns [qdot'(nv), F(np*nf), S(np)] with
// q' = q + h*qdot' substituted into all geometry.
nlp::Instance step_instance(const CtxPtr& c, const Vec& q, const Vec& qd,
                            const Vec& tau, const Vec& vel_lb, const Vec& vel_ub) {
  const int nv = c->nv, nf = c->nf, np = c->np;
  nlp::Instance inst;
  inst.n = nv + np * nf + np;
  inst.lb = Vec::Constant(inst.n, -kInf);
  inst.ub = Vec::Constant(inst.n, kInf);
  inst.lb.head(nv) = vel_lb;
  inst.ub.head(nv) = vel_ub;
  inst.quad_diag = Vec::Zero(inst.n);
  inst.lin = Vec::Zero(inst.n);
  inst.x0 = Vec::Zero(inst.n);
  inst.x0.head(nv) = qd.cwiseMax(vel_lb).cwiseMin(vel_ub);
  for (int k = 0; k < np; ++k) {
    for (int m = 0; m < nf; ++m) inst.lb[nv + k * nf + m] = 0.0;
    const int s_at = nv + np * nf + k;
    inst.lb[s_at] = 0.0;
    inst.lin[s_at] = 1e4;
    inst.x0[s_at] = 1e-3;
  }
  for (int j = 0; j < nv; ++j) inst.quad_diag[j] = 1e-8;  // uniqueness nudge

  for (int j = 0; j < nv; ++j) {  // dynamics rows
    nlp::Row r;
    r.kind = nlp::Row::Kind::Equality;
    for (int m = 0; m < nv; ++m) r.vars.push_back(m);
    for (int k = 0; k < np; ++k) {
      for (int m = 0; m < 3; ++m) r.vars.push_back(nv + k * nf + m);
    }
    r.eval = [c, q, qd, tau, j](const double* xl, double* gl) {
      const int nv = c->nv;
      const Vec qdn = local_vec(xl, 0, nv);
      const Vec qn = q + c->h * qdn;
      const model::BiasEval be = model::bias(c->task, c->box, qdn);
      double val = c->Mdiag[j] * (qdn[j] - qd[j]) + c->h * be.value[j];
      if (j < model::na()) val -= c->h * tau[j];
      if (gl) {
        const int nlocal = nv + 3 * c->np;
        for (int m = 0; m < nlocal; ++m) gl[m] = 0.0;
        gl[j] += c->Mdiag[j];
        for (int m = 0; m < nv; ++m) gl[m] += c->h * be.dvalue_dqdot(j, m);
      }
      for (int k = 0; k < c->np; ++k) {
        const model::ContactEval ce =
            model::contact_eval(c->task, c->box, qn, c->pairs[k], c->pinned);
        const double ln = xl[nv + 3 * k];
        const double lt = xl[nv + 3 * k + 1] - xl[nv + 3 * k + 2];
        val -= c->h * (ce.dphi_dq[j] * ln + ce.dzeta_dq[j] * lt);
        if (gl) {
          for (int m = 0; m < nv; ++m) {
            gl[m] -= c->h * c->h * (ce.phi_hess(j, m) * ln + ce.zeta_hess(j, m) * lt);
          }
          gl[nv + 3 * k] = -c->h * ce.dphi_dq[j];
          gl[nv + 3 * k + 1] = -c->h * ce.dzeta_dq[j];
          gl[nv + 3 * k + 2] = c->h * ce.dzeta_dq[j];
        }
      }
      return val;
    };
    r.label = tag("step_dyn", j);
    inst.rows.push_back(std::move(r));
  }

  if (np > 0) {  // pusher outside the box: -max_k phi_k(q + h*qdot') <= 0
    nlp::Row r;
    r.kind = nlp::Row::Kind::Inequality;
    for (int m = 0; m < nv; ++m) r.vars.push_back(m);
    r.eval = [c, q](const double* xl, double* gl) {
      const Vec qn = q + c->h * local_vec(xl, 0, c->nv);
      int best = 0;
      double best_phi = -std::numeric_limits<double>::infinity();
      for (size_t k = 0; k < c->pairs.size(); ++k) {
        const double phi = model::signed_distance(c->task, c->box, qn, c->pairs[k], c->pinned);
        if (phi > best_phi) {
          best_phi = phi;
          best = static_cast<int>(k);
        }
      }
      if (!gl) return -best_phi;
      const model::ContactEval ce =
          model::contact_eval(c->task, c->box, qn, c->pairs[best], c->pinned);
      for (int m = 0; m < c->nv; ++m) gl[m] = -c->h * ce.dphi_dq[m];
      return -ce.phi;
    };
    r.label = "step_gap";
    inst.rows.push_back(std::move(r));
  }
  for (int k = 0; k < np; ++k) {  // complementarity and friction rows
    for (int sign : {+1, -1}) {
      nlp::Row r;
      r.kind = nlp::Row::Kind::Inequality;
      for (int m = 0; m < nv; ++m) r.vars.push_back(m);
      r.vars.push_back(nv + k * nf);          // ln
      r.vars.push_back(nv + np * nf + k);     // s
      r.eval = [c, q, k, sign](const double* xl, double* gl) {
        const Vec qn = q + c->h * local_vec(xl, 0, c->nv);
        const double ln = xl[c->nv];
        const double s = xl[c->nv + 1];
        const model::ContactEval ce =
            model::contact_eval(c->task, c->box, qn, c->pairs[k], c->pinned);
        if (gl) {
          for (int m = 0; m < c->nv; ++m) gl[m] = c->h * sign * ln * ce.dphi_dq[m];
          gl[c->nv] = sign * ce.phi;
          gl[c->nv + 1] = -1.0;
        }
        return sign * ce.phi * ln - s;
      };
      r.label = tag(sign > 0 ? "step_cc_p" : "step_cc_m", k);
      inst.rows.push_back(std::move(r));
    }
    const std::vector<friction::Residual> probe = friction::residuals(
        c->fmodel, c->mu, 0.0, Vec::Zero(nf), c->eps);
    for (size_t rr = 0; rr < probe.size(); ++rr) {
      const bool relaxed =
          probe[rr].kind == friction::Residual::Kind::RelaxedComplementarity;
      nlp::Row r;
      r.kind = nlp::Row::Kind::Inequality;
      for (int m = 0; m < nv; ++m) r.vars.push_back(m);
      for (int m = 0; m < nf; ++m) r.vars.push_back(nv + k * nf + m);
      if (relaxed) r.vars.push_back(nv + np * nf + k);
      r.eval = [c, q, k, rr, relaxed](const double* xl, double* gl) {
        const int nv = c->nv;
        const Vec qdn = local_vec(xl, 0, nv);
        const Vec qn = q + c->h * qdn;
        const Vec lam = local_vec(xl, nv, c->nf);
        const model::SlipEval se =
            model::slip_velocity(c->task, c->box, qn, qdn, c->pairs[k], c->pinned);
        const friction::Residual res =
            friction::residuals(c->fmodel, c->mu, se.psi, lam, c->eps)[rr];
        double val = res.value;
        if (relaxed) val -= xl[nv + c->nf];
        if (gl) {
          for (int m = 0; m < nv; ++m) {
            gl[m] = res.dvalue_dpsi * (se.dpsi_dqdot[m] + c->h * se.dpsi_dq[m]);
          }
          for (int m = 0; m < c->nf; ++m) gl[nv + m] = res.dvalue_dlam[m];
          if (relaxed) gl[nv + c->nf] = -1.0;
        }
        return val;
      };
      r.label = tag(("step_fr_" + probe[rr].label).c_str(), k);
      inst.rows.push_back(std::move(r));
    }
  }
  return inst;
}

}  // namespace

RolloutResult rollout(const CitoProblem& prob, const std::vector<Vec>& U) {
  prob.validate();
  const Layout L = layout(prob);
  if (static_cast<int>(U.size()) != L.N) {
    throw std::invalid_argument("rollout: control count mismatch");
  }
  auto ctx = std::make_shared<BuildCtx>();
  ctx->task = prob.task;
  ctx->box = prob.box;
  ctx->pinned = prob.pinned_center;
  ctx->pairs = prob.pairs;
  ctx->fmodel = prob.friction_model;
  ctx->h = prob.h;
  ctx->mu = prob.box.mu_contact;
  ctx->eps = prob.trigger_epsilon;
  ctx->nv = L.nv;
  ctx->nf = L.nf;
  ctx->np = L.npairs;
  ctx->Mdiag = model::mass_matrix(prob.task, prob.box).diagonal();

  const Vec xlb = effective_x_lb(prob), xub = effective_x_ub(prob);
  const Vec vel_lb = xlb.tail(L.nv), vel_ub = xub.tail(L.nv);

  sqp::Config cfg;
  cfg.hessian = sqp::HessianMode::BFGS;
  cfg.kkt_tol = 1e-8;
  cfg.feas_tol = 1e-8;
  cfg.max_iter = 400;
  cfg.scale_objective = true;  // slack-penalty gradients are ~1e4

  RolloutResult out;
  out.ok = true;
  Vec x = prob.x_init.cwiseMax(xlb).cwiseMin(xub);
  out.X.push_back(x);
  for (int i = 0; i < L.N; ++i) {
    const Vec q = x.head(L.nv), qd = x.tail(L.nv);
    const nlp::Instance inst = step_instance(ctx, q, qd, U[i], vel_lb, vel_ub);
    const sqp::SolveResult res = sqp::solve(inst, cfg);
    if (res.status != sqp::SolveStatus::Converged) out.ok = false;
    const Vec qd_next = res.x.head(L.nv);
    Vec x_next(L.nx);
    x_next.head(L.nv) = q + prob.h * qd_next;
    x_next.tail(L.nv) = qd_next;
    x = x_next;
    out.X.push_back(x);
  }
  if (prob.task == model::Task::Translate) {
    out.final_error = (out.X.back().segment<2>(2) - Vec2(prob.goal[0], prob.goal[1])).norm();
  } else {
    out.final_error = std::abs(out.X.back()[2] - prob.goal[0]);
  }
  return out;
}

sqp::Config default_cito_config() {
  sqp::Config cfg;
  // The objective is diagonal-quadratic in the velocities and linear in the
  // slacks, so GaussNewton mode hands the QP the exact (constant) objective
  // Hessian; a quasi-Newton model only adds noise here.  All remaining model
  // error is constraint curvature, which the trust box keeps in check: the
  // support-friction rows are far stiffer than the objective, and unboxed
  // steps waste the line search on directions that survive only at tiny
  // alpha.
  cfg.hessian = sqp::HessianMode::GaussNewton;
  cfg.tr_init = 1.0;
  cfg.kkt_tol = 1e-6;
  cfg.feas_tol = 1e-6;
  cfg.max_iter = 500;
  cfg.stall_limit = 30;
  cfg.scale_objective = true;  // slack-penalty gradients are ~1e4
  return cfg;
}

std::pair<CitoSolution, CitoStats> solve_cito(const CitoProblem& prob,
                                              const sqp::Config& cfg) {
  using clock = std::chrono::steady_clock;
  CitoStats stats;
  stats.goal_tolerance = prob.task == model::Task::Translate ? 0.02 : 0.05;

  // Smoothing continuation on the ground-support friction.  At the static
  // initial guess the support wrench linearizes as a damper with slope
  // f_max/eps_v; at the nominal eps that damper is three orders of magnitude
  // stiffer than the control authority, so every subproblem predicts an
  // immovable box and the solver crawls.  Early passes solve the same problem
  // with a softer support model and warm-start the next pass; the final pass
  // uses the caller's model unchanged, so the returned solution satisfies the
  // nominal optimality system.
  const double relax[] = {100.0, 10.0, 1.0};

  double build_seconds = 0.0, solve_seconds = 0.0;
  sqp::SolveResult res;
  Vec warm;
  int total_iters = 0;
  for (double r : relax) {
    CitoProblem pk = prob;
    pk.box.support_eps_v = prob.box.support_eps_v * r;
    pk.box.support_eps_w = prob.box.support_eps_w * r;
    const auto tb0 = clock::now();
    nlp::Instance inst = build_nlp(pk);
    const auto tb1 = clock::now();
    if (warm.size() == inst.x0.size()) inst.x0 = warm;
    sqp::Config pass_cfg = cfg;
    if (r != 1.0) {
      // Relaxed passes only have to hand the next pass a good warm start:
      // cap their budgets and accept a rough certificate.  The first pass
      // mostly has to get the trajectory moving at all; polishing its
      // objective is wasted work that the next pass redoes anyway.
      pass_cfg.max_iter = std::min(cfg.max_iter, r >= 100.0 ? 40 : 120);
      pass_cfg.kkt_tol = std::max(cfg.kkt_tol, 1e-4);
    }
    res = sqp::solve(inst, pass_cfg);
    const auto tb2 = clock::now();
    build_seconds += std::chrono::duration<double>(tb1 - tb0).count();
    solve_seconds += std::chrono::duration<double>(tb2 - tb1).count();
    warm = res.x;
    total_iters += res.iterations;
  }

  stats.build_seconds = build_seconds;
  stats.solve_seconds = solve_seconds;
  stats.status = res.status;
  stats.iterations = total_iters;
  stats.kkt = res.kkt;

  CitoSolution sol = unpack(prob, res.x);
  sol.objective = res.objective;

  const RolloutResult rr = rollout(prob, sol.U);
  stats.rollout_error = rr.final_error;
  stats.success = res.status == sqp::SolveStatus::Converged && rr.ok &&
                  rr.final_error <= stats.goal_tolerance;
  return {std::move(sol), stats};
}

}  // namespace cipush::cito
