#include "cipush/qsp.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "cipush/planar_model.hpp"

namespace cipush::qsp {

const char* mode_name(Mode m) {
  switch (m) {
    case Mode::Sticking: return "sticking";
    case Mode::SlideLeft: return "slide_left";
    default: return "slide_right";
  }
}

LimitSurfaceParams limit_surface(LimitSurfaceParams base) {
  if (base.mass <= 0.0 || base.mu_ground <= 0.0 || base.mu_pusher <= 0.0 ||
      base.gravity <= 0.0 || base.half_extent <= 0.0 || base.k_v <= 0.0) {
    throw std::invalid_argument("limit_surface: physical parameters must be positive");
  }
  base.f_max = base.mu_ground * base.mass * base.gravity;
  base.m_max = base.f_max * model::mean_radius_square_patch(base.half_extent);
  base.c_ratio = base.m_max / base.f_max;
  return base;
}

namespace {

// Torque of the slider-side contact force (fn, -ft) applied at (-half, py).
inline double contact_torque(double fn, double ft, double py,
                             const LimitSurfaceParams& p) {
  return p.half_extent * ft - py * fn;
}

inline void require_derived(const LimitSurfaceParams& p) {
  if (p.f_max <= 0.0 || p.m_max <= 0.0 || p.c_ratio <= 0.0) {
    throw std::invalid_argument("qsp: params not initialized by limit_surface()");
  }
}

}  // namespace

Vec4 qsp_f(const Vec4& x, const Vec3& u, const LimitSurfaceParams& p) {
  require_derived(p);
  const Mat2 R = rot2(x[kTheta]);
  const Vec2 v_body(p.k_v * u[kFn], -p.k_v * u[kFt]);
  const double tau = contact_torque(u[kFn], u[kFt], x[kPy], p);
  Vec4 xdot;
  xdot.head<2>() = R * v_body;
  xdot[kTheta] = p.k_v * tau / (p.c_ratio * p.c_ratio);
  xdot[kPy] = u[kVpy];
  return xdot;
}

void qsp_jacobians(const Vec4& x, const Vec3& u, const LimitSurfaceParams& p,
                   Mat* A, Mat* B) {
  require_derived(p);
  const Mat2 R = rot2(x[kTheta]);
  const Mat2 dR = perp2() * R;  // d/dtheta of rot2
  const double c2 = p.c_ratio * p.c_ratio;
  if (A) {
    A->setZero(4, 4);
    const Vec2 v_body(p.k_v * u[kFn], -p.k_v * u[kFt]);
    A->block<2, 1>(0, kTheta) = dR * v_body;
    (*A)(kTheta, kPy) = -p.k_v * u[kFn] / c2;
  }
  if (B) {
    B->setZero(4, 3);
    B->block<2, 1>(0, kFn) = p.k_v * R.col(0);
    B->block<2, 1>(0, kFt) = -p.k_v * R.col(1);
    (*B)(kTheta, kFn) = -p.k_v * x[kPy] / c2;
    (*B)(kTheta, kFt) = p.k_v * p.half_extent / c2;
    (*B)(kPy, kVpy) = 1.0;
  }
}

Vec3 project_control(const Vec3& u, const LimitSurfaceParams& p) {
  Vec3 out = u;
  out[kFn] = std::max(u[kFn], 0.0);
  const double lim = p.mu_pusher * out[kFn];
  out[kFt] = std::min(std::max(u[kFt], -lim), lim);
  if (lim > 1e-12) {
    const double edge_tol = 1e-12 * std::max(1.0, lim);
    if (out[kFt] >= lim - edge_tol) {
      out[kVpy] = std::min(u[kVpy], 0.0);  // sliding right allows vpy <= 0
    } else if (out[kFt] <= -lim + edge_tol) {
      out[kVpy] = std::max(u[kVpy], 0.0);  // sliding left allows vpy >= 0
    } else {
      out[kVpy] = 0.0;  // strictly inside the cone: sticking
    }
  }
  return out;
}

Mode control_mode(const Vec3& u, const LimitSurfaceParams& p, double tol) {
  const double lim = p.mu_pusher * std::max(u[kFn], 0.0);
  if (u[kFt] >= lim - tol && lim > tol) return Mode::SlideRight;
  if (u[kFt] <= -lim + tol && lim > tol) return Mode::SlideLeft;
  return Mode::Sticking;
}

Vec4 plant_step(const Vec4& x, const Vec3& u, double h,
                const LimitSurfaceParams& p) {
  if (h <= 0.0) throw std::invalid_argument("plant_step: h must be positive");
  const Vec3 up = project_control(u, p);
  Vec4 next = x + h * qsp_f(x, up, p);
  next[kPy] = std::min(std::max(next[kPy], -p.half_extent), p.half_extent);
  return next;
}

const Vec4& Reference::state_at(int i) const {
  const int last = static_cast<int>(states.size()) - 1;
  return states[static_cast<size_t>(std::min(std::max(i, 0), last))];
}

const Vec3& Reference::control_at(int i) const {
  const int last = static_cast<int>(controls.size()) - 1;
  return controls[static_cast<size_t>(std::min(std::max(i, 0), last))];
}

namespace {

// Derives the nominal sticking controls from consecutive reference states:
// body forward speed from the chord length, turning rate from the heading
// increment, with ft from the torque balance at py = 0.  ft is clipped into
// the friction cone so the nominal is always mode-consistent.
void fill_nominal_controls(const LimitSurfaceParams& p, Reference& ref) {
  ref.controls.clear();
  if (ref.states.size() < 2) return;
  ref.controls.reserve(ref.states.size() - 1);
  const double c2 = p.c_ratio * p.c_ratio;
  for (size_t i = 0; i + 1 < ref.states.size(); ++i) {
    const Vec4& a = ref.states[i];
    const Vec4& b = ref.states[i + 1];
    const double v = (b.head<2>() - a.head<2>()).norm() / ref.h;
    const double w = (b[kTheta] - a[kTheta]) / ref.h;
    Vec3 u;
    u[kFn] = v / p.k_v;
    u[kFt] = w * c2 / (p.k_v * p.half_extent);
    const double lim = p.mu_pusher * u[kFn];
    u[kFt] = std::min(std::max(u[kFt], -lim), lim);
    u[kVpy] = 0.0;
    ref.controls.push_back(u);
  }
}

Vec4 pose_state(double x, double y, double theta) {
  Vec4 s;
  s << x, y, theta, 0.0;
  return s;
}

}  // namespace

Reference make_line(const LimitSurfaceParams& p, double length, double speed,
                    double h) {
  require_derived(p);
  if (h <= 0.0) throw std::invalid_argument("make_line: h must be positive");
  if (length < 0.0) throw std::invalid_argument("make_line: negative length");
  Reference ref;
  ref.h = h;
  if (speed <= 1e-12 || length == 0.0) {
    ref.states.assign(2, pose_state(0.0, 0.0, 0.0));
    fill_nominal_controls(p, ref);
    return ref;
  }
  const double duration = length / speed;
  const int n = std::max(1, static_cast<int>(std::ceil(duration / h - 1e-9)));
  ref.states.reserve(n + 1);
  for (int i = 0; i <= n; ++i) {
    ref.states.push_back(pose_state(std::min(speed * i * h, length), 0.0, 0.0));
  }
  fill_nominal_controls(p, ref);
  return ref;
}

Reference make_circle(const LimitSurfaceParams& p, double radius, double omega,
                      double laps, double h) {
  require_derived(p);
  if (h <= 0.0 || radius <= 0.0 || omega == 0.0 || laps <= 0.0) {
    throw std::invalid_argument("make_circle: bad parameters");
  }
  const double duration = laps * 2.0 * M_PI / std::abs(omega);
  const int n = std::max(1, static_cast<int>(std::ceil(duration / h - 1e-9)));
  const double side = omega > 0.0 ? 1.0 : -1.0;  // center on the +y side when turning left
  Reference ref;
  ref.h = h;
  ref.states.reserve(n + 1);
  for (int i = 0; i <= n; ++i) {
    const double a = std::min(std::abs(omega) * i * h, laps * 2.0 * M_PI);
    ref.states.push_back(pose_state(radius * std::sin(a),
                                    side * radius * (1.0 - std::cos(a)),
                                    side * a));
  }
  fill_nominal_controls(p, ref);
  return ref;
}

Reference make_eight(const LimitSurfaceParams& p, double radius, double omega,
                     double laps, double h) {
  require_derived(p);
  if (h <= 0.0 || radius <= 0.0 || omega <= 0.0 || laps <= 0.0) {
    throw std::invalid_argument("make_eight: bad parameters");
  }
  const double lobe = 2.0 * M_PI / omega;  // duration of one circle
  const double duration = 2.0 * laps * lobe;
  const int n = std::max(1, static_cast<int>(std::ceil(duration / h - 1e-9)));
  Reference ref;
  ref.h = h;
  ref.states.reserve(n + 1);
  for (int i = 0; i <= n; ++i) {
    const double t = std::min(i * h, duration);
    // Within one figure eight the two lobes cancel in heading (0 -> 2pi -> 0),
    // so theta is continuous across laps without an accumulating offset.
    const double phase = std::fmod(t, 2.0 * lobe);
    double x, y, theta;
    if (phase <= lobe) {
      const double a = omega * phase;
      x = radius * std::sin(a);
      y = radius * (1.0 - std::cos(a));
      theta = a;
    } else {
      const double a = omega * (phase - lobe);
      x = radius * std::sin(a);
      y = -radius * (1.0 - std::cos(a));
      theta = 2.0 * M_PI - a;
    }
    ref.states.push_back(pose_state(x, y, theta));
  }
  fill_nominal_controls(p, ref);
  return ref;
}

Reference make_polyline(const LimitSurfaceParams& p,
                        const std::vector<Vec2>& points, double speed,
                        double h) {
  require_derived(p);
  if (h <= 0.0 || speed <= 0.0) {
    throw std::invalid_argument("make_polyline: h and speed must be positive");
  }
  // Drop consecutive duplicates, then require at least one real segment.
  std::vector<Vec2> pts;
  for (const Vec2& q : points) {
    if (pts.empty() || (q - pts.back()).norm() > 1e-12) pts.push_back(q);
  }
  if (pts.size() < 2) {
    throw std::runtime_error("make_polyline: fewer than two distinct points");
  }

  std::vector<double> cum(pts.size(), 0.0);
  for (size_t i = 1; i < pts.size(); ++i) {
    cum[i] = cum[i - 1] + (pts[i] - pts[i - 1]).norm();
  }
  const double total = cum.back();
  const int n = std::max(1, static_cast<int>(std::ceil(total / (speed * h) - 1e-9)));

  auto sample = [&](double s) {
    s = std::min(std::max(s, 0.0), total);
    size_t k = 1;
    while (k + 1 < pts.size() && cum[k] < s) ++k;
    const double seg = cum[k] - cum[k - 1];
    const double a = seg > 0.0 ? (s - cum[k - 1]) / seg : 0.0;
    const Vec2 pos = pts[k - 1] + a * (pts[k] - pts[k - 1]);
    const Vec2 dir = (pts[k] - pts[k - 1]) / seg;
    return std::make_pair(pos, std::atan2(dir[1], dir[0]));
  };

  Reference ref;
  ref.h = h;
  ref.states.reserve(n + 1);
  double prev_theta = 0.0;
  for (int i = 0; i <= n; ++i) {
    auto [pos, theta] = sample(speed * i * h);
    if (i == 0) {
      prev_theta = theta;
    } else {
      // Unwrap so the heading reference is continuous.
      while (theta - prev_theta > M_PI) theta -= 2.0 * M_PI;
      while (theta - prev_theta < -M_PI) theta += 2.0 * M_PI;
      prev_theta = theta;
    }
    ref.states.push_back(pose_state(pos[0], pos[1], theta));
  }
  fill_nominal_controls(p, ref);
  return ref;
}

Reference make_waypoints(const LimitSurfaceParams& p, const std::string& file,
                         double speed, double h) {
  std::ifstream in(file);
  if (!in) throw std::runtime_error("make_waypoints: cannot open " + file);
  std::vector<Vec2> pts;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    // Skip blanks and comment lines.
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream ss(line);
    double x, y;
    std::string extra;
    if (!(ss >> x >> y) || (ss >> extra)) {
      throw std::runtime_error("make_waypoints: malformed line " +
                               std::to_string(lineno) + " in " + file);
    }
    pts.emplace_back(x, y);
  }
  return make_polyline(p, pts, speed, h);
}

}  // namespace cipush::qsp
