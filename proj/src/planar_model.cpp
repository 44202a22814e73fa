#include "cipush/planar_model.hpp"

#include <cmath>
#include <map>

namespace cipush::model {

double mean_radius_square_patch(double half, double rel_tol) {
  if (half <= 0) throw std::invalid_argument("mean_radius_square_patch: half must be > 0");
  // The integrand is 1-homogeneous, so compute on the unit half-side and
  // scale.  Results are cached per tolerance (the value is reused on every
  // support-friction evaluation).
  static thread_local std::map<double, double> cache;
  const auto hit = cache.find(rel_tol);
  if (hit != cache.end()) return half * hit->second;

  auto grid_value = [](int n) {
    const double dx = 2.0 / n;
    double acc = 0.0;
    for (int i = 0; i < n; ++i) {
      const double x = -1.0 + (i + 0.5) * dx;
      for (int j = 0; j < n; ++j) {
        const double y = -1.0 + (j + 0.5) * dx;
        acc += std::sqrt(x * x + y * y);
      }
    }
    return acc * dx * dx / 4.0;  // divide by area (=4 for half-side 1)
  };
  int n = 32;
  double prev = grid_value(n);
  double value = prev;
  for (int iter = 0; iter < 8; ++iter) {
    n *= 2;
    const double cur = grid_value(n);
    // Midpoint rule converges at O(h^2); one Richardson step removes the
    // leading term.
    value = cur + (cur - prev) / 3.0;
    if (std::abs(cur - prev) <= rel_tol * std::abs(cur)) break;
    prev = cur;
  }
  cache[rel_tol] = value;
  return half * value;
}

namespace {

struct Frame {
  Vec2 p;        // pusher position (world)
  Vec2 b;        // box centre (world)
  double theta;  // box orientation
  int ip, ib, ith;  // column indices of p, b (or -1), theta in q
};

Frame split(Task task, const Vec& q, const Vec2& pinned_center) {
  Frame f;
  if (task == Task::Translate) {
    if (q.size() != 5) throw std::invalid_argument("contact_eval: q must have size 5");
    f.p = q.segment<2>(0);
    f.b = q.segment<2>(2);
    f.theta = q[4];
    f.ip = 0; f.ib = 2; f.ith = 4;
  } else {
    if (q.size() != 3) throw std::invalid_argument("contact_eval: q must have size 3");
    f.p = q.segment<2>(0);
    f.b = pinned_center;
    f.theta = q[2];
    f.ip = 0; f.ib = -1; f.ith = 2;
  }
  return f;
}

// Gap-type scalar G = w_b . R(th)^T (p - b) + c0 with gradient and Hessian.
// dG/dp = R w_b, dG/db = -R w_b, dG/dth = -w_b . S R^T u (S = 90-deg rotation),
// d2G/dp dth = S R w_b, d2G/dth2 = -(G - c0).
void gap_terms(const Frame& f, const Vec2& w_b, double c0, int n,
               double& val, Vec& grad, Mat& hess) {
  const Mat2 R = rot2(f.theta);
  const Mat2 S = perp2();
  const Vec2 u = f.p - f.b;
  const Vec2 Rw = R * w_b;
  const Vec2 SRw = S * Rw;
  const double lin = Rw.dot(u);  // w_b . R^T u

  val = lin + c0;
  grad = Vec::Zero(n);
  grad.segment<2>(f.ip) = Rw;
  if (f.ib >= 0) grad.segment<2>(f.ib) = -Rw;
  grad[f.ith] = SRw.dot(u);  // = -w_b . S R^T u since (SR)^T = -R^T S

  hess = Mat::Zero(n, n);
  hess.block<2, 1>(f.ip, f.ith) = SRw;
  hess.block<1, 2>(f.ith, f.ip) = SRw.transpose();
  if (f.ib >= 0) {
    hess.block<2, 1>(f.ib, f.ith) = -SRw;
    hess.block<1, 2>(f.ith, f.ib) = -SRw.transpose();
  }
  hess(f.ith, f.ith) = -lin;
}

}  // namespace

ContactEval contact_eval(Task task, const BoxParams& params, const Vec& q,
                         const ContactPair& pair, const Vec2& pinned_center) {
  const Frame f = split(task, q, pinned_center);
  const int n = nv(task);
  const Vec2 nb = pair.face_normal_body();
  const Vec2 tb = pair.face_tangent_body();

  ContactEval ev;
  gap_terms(f, nb, -params.half(), n, ev.phi, ev.dphi_dq, ev.phi_hess);
  gap_terms(f, tb, 0.0, n, ev.zeta, ev.dzeta_dq, ev.zeta_hess);
  const Mat2 R = rot2(f.theta);
  ev.n_world = R * nb;
  ev.t_world = R * tb;
  return ev;
}

double signed_distance(Task task, const BoxParams& params, const Vec& q,
                       const ContactPair& pair, const Vec2& pinned_center) {
  const Frame f = split(task, q, pinned_center);
  const Vec2 nb = pair.face_normal_body();
  return (rot2(f.theta) * nb).dot(f.p - f.b) - params.half();
}

Mat contact_jacobian(Task task, const BoxParams& params, const Vec& q,
                     const ContactPair& pair, const Vec2& pinned_center) {
  const ContactEval ev = contact_eval(task, params, q, pair, pinned_center);
  Mat J(2, nv(task));
  J.row(0) = ev.dphi_dq.transpose();
  J.row(1) = ev.dzeta_dq.transpose();
  return J;
}

SlipEval slip_velocity(Task task, const BoxParams& params, const Vec& q,
                       const Vec& qdot, const ContactPair& pair,
                       const Vec2& pinned_center) {
  if (qdot.size() != nv(task)) throw std::invalid_argument("slip_velocity: qdot size mismatch");
  const ContactEval ev = contact_eval(task, params, q, pair, pinned_center);
  SlipEval s;
  s.psi = ev.dzeta_dq.dot(qdot);
  s.dpsi_dq = ev.zeta_hess * qdot;
  s.dpsi_dqdot = ev.dzeta_dq;
  return s;
}

Mat mass_matrix(Task task, const BoxParams& params) {
  params.validate();
  const int n = nv(task);
  Vec d(n);
  if (task == Task::Translate) {
    d << params.pusher_mass, params.pusher_mass, params.mass, params.mass, params.inertia();
  } else {
    d << params.pusher_mass, params.pusher_mass, params.inertia();
  }
  return d.asDiagonal();
}

BiasEval bias(Task task, const BoxParams& params, const Vec& qdot) {
  const int n = nv(task);
  if (qdot.size() != n) throw std::invalid_argument("bias: qdot size mismatch");
  const double fg = params.mu_ground * params.mass * params.gravity;
  const double mg = fg * mean_radius_square_patch(params.half());

  BiasEval out;
  out.value = Vec::Zero(n);
  out.dvalue_dqdot = Mat::Zero(n, n);

  auto torsion = [&](int iw) {
    const double w = qdot[iw];
    const double s = std::sqrt(w * w + params.support_eps_w * params.support_eps_w);
    out.value[iw] = mg * w / s;
    out.dvalue_dqdot(iw, iw) = mg * (1.0 / s - w * w / (s * s * s));
  };

  if (task == Task::Translate) {
    const Vec2 v = qdot.segment<2>(2);
    const double s = std::sqrt(v.squaredNorm() + params.support_eps_v * params.support_eps_v);
    out.value.segment<2>(2) = fg * v / s;
    out.dvalue_dqdot.block<2, 2>(2, 2) =
        fg * (Mat2::Identity() / s - v * v.transpose() / (s * s * s));
    torsion(4);
  } else {
    torsion(2);
  }
  return out;
}

std::vector<ContactPair> default_pairs(Task task) {
  if (task == Task::Translate) return {ContactPair{0}, ContactPair{1}, ContactPair{2}, ContactPair{3}};
  return {ContactPair{1}};
}

}  // namespace cipush::model
