#pragma once

#include <stdexcept>
#include <vector>

#include "cipush/types.hpp"

namespace cipush::model {

/// Planar pushing task variants.
///
/// Translate: free box, generalized coordinates q = [xp, yp, xb, yb, th]
///            (pusher point, box centre, box orientation), nv = 5.
/// Rotate:    box pinned at its centre (rotation only),
///            q = [xp, yp, th], nv = 3.
enum class Task { Translate, Rotate };

struct BoxParams {
  double side = 0.1;          ///< square box edge length [m]
  double mass = 0.6;          ///< box mass [kg]
  double pusher_mass = 0.1;   ///< point pusher mass [kg]
  double mu_contact = 0.6;    ///< Coulomb coefficient pusher-box
  double mu_ground = 0.2;     ///< Coulomb coefficient box-ground
  double gravity = 9.81;      ///< [m/s^2]
  double support_eps_v = 1e-3;  ///< smoothing velocity for ground friction [m/s]
  double support_eps_w = 1e-2;  ///< smoothing rate for ground torsion [rad/s]

  double half() const { return 0.5 * side; }
  double inertia() const { return mass * side * side / 6.0; }
  void validate() const {
    if (side <= 0 || mass <= 0 || pusher_mass <= 0) {
      throw std::invalid_argument("BoxParams: side, mass, pusher_mass must be positive");
    }
    if (mu_contact < 0 || mu_ground < 0) {
      throw std::invalid_argument("BoxParams: friction coefficients must be >= 0");
    }
  }
};

inline int nv(Task task) { return task == Task::Translate ? 5 : 3; }
inline constexpr int na() { return 2; }  // actuated pusher force (fx, fy)

/// Mean distance from the centre of a square patch of half-side `half` to its
/// points, (1/A) * integral ||r|| dA.  Computed by midpoint quadrature with
/// grid doubling until the relative change drops below `rel_tol`.
/// Closed form for verification: (half/3) * (sqrt(2) + asinh(1)).
double mean_radius_square_patch(double half, double rel_tol = 1e-8);

/// One candidate contact: a pusher point against one box face.
/// Face normals are outward in the box frame: 0:+x, 1:-x, 2:+y, 3:-y.
struct ContactPair {
  int face = 1;
  Vec2 face_normal_body() const {
    switch (face) {
      case 0: return {1.0, 0.0};
      case 1: return {-1.0, 0.0};
      case 2: return {0.0, 1.0};
      case 3: return {0.0, -1.0};
      default: throw std::invalid_argument("ContactPair: face must be 0..3");
    }
  }
  /// Tangent completing a right-handed (n, t) frame.
  Vec2 face_tangent_body() const { return perp2() * face_normal_body(); }
};

/// Geometry of one pusher/face pair at configuration q.
///
/// phi  = n_b . R(th)^T (p - b) - half     (signed gap to the face plane)
/// zeta = t_b . R(th)^T (p - b)            (position along the face tangent)
///
/// Their q-gradients double as the contact Jacobian rows: d(phi)/dt =
/// dphi_dq . qdot exactly, so generalised contact forces are J^T lambda with
/// J = [dphi_dq; dzeta_dq].  The Hessians feed the transcription gradients of
/// the force-transmission term d(J^T lambda)/dq.
struct ContactEval {
  double phi = 0.0;
  double zeta = 0.0;
  Vec dphi_dq;    // nv
  Vec dzeta_dq;   // nv
  Mat phi_hess;   // nv x nv
  Mat zeta_hess;  // nv x nv
  Vec2 n_world;   // R * n_b
  Vec2 t_world;   // R * t_b
};

/// Evaluates pair geometry.  For Task::Rotate the box centre is fixed at
/// `pinned_center` and q = [xp, yp, th].
ContactEval contact_eval(Task task, const BoxParams& params, const Vec& q,
                         const ContactPair& pair,
                         const Vec2& pinned_center = Vec2::Zero());

/// Signed gap only (cheap path).
double signed_distance(Task task, const BoxParams& params, const Vec& q,
                       const ContactPair& pair,
                       const Vec2& pinned_center = Vec2::Zero());

/// Contact Jacobian rows [dphi_dq; dzeta_dq] (2 x nv).
Mat contact_jacobian(Task task, const BoxParams& params, const Vec& q,
                     const ContactPair& pair,
                     const Vec2& pinned_center = Vec2::Zero());

/// Tangential slip rate psi = dzeta_dq . qdot, with gradients
/// dpsi/dq = zeta_hess * qdot and dpsi/dqdot = dzeta_dq.
struct SlipEval {
  double psi = 0.0;
  Vec dpsi_dq;
  Vec dpsi_dqdot;
};
SlipEval slip_velocity(Task task, const BoxParams& params, const Vec& q,
                       const Vec& qdot, const ContactPair& pair,
                       const Vec2& pinned_center = Vec2::Zero());

/// Constant diagonal mass matrix.
/// Translate: diag(mp, mp, mb, mb, Ib);  Rotate: diag(mp, mp, Ib).
Mat mass_matrix(Task task, const BoxParams& params);

/// Velocity-dependent bias c(qdot): smoothed ground support friction
/// resisting the box's own motion (nothing acts on the pusher coordinates).
/// The translational part is mu_g*m*g * v/sqrt(|v|^2+eps_v^2); the torsional
/// part is m_support * w/sqrt(w^2+eps_w^2) with m_support the torsional limit
/// mu_g*m*g*mean_radius.  bias(0) == 0 and qdot . bias(qdot) >= 0 always
/// (the term is dissipative: it enters the dynamics with a minus sign).
struct BiasEval {
  Vec value;      // nv
  Mat dvalue_dqdot;  // nv x nv
};
BiasEval bias(Task task, const BoxParams& params, const Vec& qdot);

/// Default candidate pairs: all four faces for Translate, the -x face for
/// Rotate (the pusher works that face).
std::vector<ContactPair> default_pairs(Task task);

}  // namespace cipush::model
