#pragma once

#include <string>
#include <vector>

#include "cipush/types.hpp"

namespace cipush::qsp {

/// Pusher-slider state [x, y, theta, py]: slider pose in the plane plus the
/// pusher contact coordinate along the (left) contact face, body frame.
/// Control [fn, ft, vpy]: contact normal force, pusher-side tangential force,
/// and relative pusher sliding velocity along the face.  The force applied to
/// the slider in body frame is (fn, -ft) at the contact point (-half, py);
/// with that convention vpy > 0 pairs with ft = -mu_p*fn (sliding left) and
/// vpy < 0 with ft = +mu_p*fn (sliding right).
enum StateIndex { kX = 0, kY = 1, kTheta = 2, kPy = 3 };
enum ControlIndex { kFn = 0, kFt = 1, kVpy = 2 };

enum class Mode { Sticking, SlideLeft, SlideRight };

const char* mode_name(Mode m);

/// Ellipsoidal limit-surface description of quasi-static sliding on a uniform
/// square support patch, plus the pusher contact parameters.
struct LimitSurfaceParams {
  double mass = 1.0;          // kg
  double mu_ground = 0.4;     // slider-ground friction
  double mu_pusher = 0.3;     // pusher-slider friction
  double gravity = 9.81;      // m/s^2
  double half_extent = 0.05;  // half side of the square slider, m
  double k_v = 0.05;          // velocity scale of the quasi-static map, m/(s*N)

  // Derived by limit_surface():
  double f_max = 0.0;   // N
  double m_max = 0.0;   // N*m
  double c_ratio = 0.0; // m, = m_max / f_max
};

/// Fills f_max = mu_g*m*g, m_max = f_max * (mean support radius), c_ratio.
/// Throws std::invalid_argument on non-positive physical parameters.
LimitSurfaceParams limit_surface(LimitSurfaceParams base);

/// Continuous-time quasi-static dynamics xdot = f(x, u).
Vec4 qsp_f(const Vec4& x, const Vec3& u, const LimitSurfaceParams& p);

/// Analytic Jacobians A = df/dx (4x4), B = df/du (4x3); either may be null.
void qsp_jacobians(const Vec4& x, const Vec3& u, const LimitSurfaceParams& p,
                   Mat* A, Mat* B);

/// Projects a control onto the closest consistent contact mode: fn >= 0,
/// |ft| <= mu_p*fn, and vpy zeroed unless ft sits on the matching cone edge
/// (vpy is kept free when fn = 0, i.e. no contact force).
Vec3 project_control(const Vec3& u, const LimitSurfaceParams& p);

/// Contact mode implied by a control (cone-edge tolerance `tol`).
Mode control_mode(const Vec3& u, const LimitSurfaceParams& p, double tol = 1e-9);

/// Forward-Euler step of qsp_f with project_control applied first and py
/// clamped to the face, |py| <= half_extent.
Vec4 plant_step(const Vec4& x, const Vec3& u, double h,
                const LimitSurfaceParams& p);

/// Time-indexed reference: states.size() == controls.size() + 1, sampled at
/// period h.  Controls are a nominal mode-consistent (sticking) input sequence
/// that reproduces the path under forward-Euler up to O(h^2) per step.
struct Reference {
  double h = 0.0;
  std::vector<Vec4> states;
  std::vector<Vec3> controls;

  int num_steps() const { return static_cast<int>(controls.size()); }
  /// State at step i with terminal hold (i clamped into range).
  const Vec4& state_at(int i) const;
  /// Nominal control at step i with terminal hold.
  const Vec3& control_at(int i) const;
};

/// Straight line of given length along +x at constant speed; heading 0.
/// speed <= 0 yields a constant (hold-in-place) reference of one step.
Reference make_line(const LimitSurfaceParams& p, double length, double speed,
                    double h);

/// Circle of given radius at constant angular rate omega (> 0 turns left),
/// starting at the origin heading +x; `laps` full revolutions.
Reference make_circle(const LimitSurfaceParams& p, double radius, double omega,
                      double laps, double h);

/// Figure eight: a left circle followed by a right circle of the same radius,
/// repeated `laps` times; starts and ends at the origin.
Reference make_eight(const LimitSurfaceParams& p, double radius, double omega,
                     double laps, double h);

/// Polyline file ("x y" per line, meters) resampled at arc length speed*h.
/// Throws std::runtime_error on unreadable or malformed files or fewer than
/// two distinct points.
Reference make_waypoints(const LimitSurfaceParams& p, const std::string& file,
                         double speed, double h);

/// Resamples an explicit polyline (shared with make_waypoints).
Reference make_polyline(const LimitSurfaceParams& p,
                        const std::vector<Vec2>& points, double speed, double h);

}  // namespace cipush::qsp
