#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cstdio>
#include <doctest.h>
#include <fstream>
#include <random>

#include "cipush/qsp.hpp"
#include "support/fd.hpp"

using namespace cipush;
using testsupport::fd_jacobian;
using testsupport::uniform;

namespace {

qsp::LimitSurfaceParams paper_params() {
  return qsp::limit_surface(qsp::LimitSurfaceParams{});
}

// Independent closed form for the mean distance from the center of a square
// [-a, a]^2 under a uniform distribution: (a/3) * (sqrt(2) + ln(1 + sqrt(2))).
double mean_radius_closed_form(double a) {
  return a / 3.0 * (std::sqrt(2.0) + std::log(1.0 + std::sqrt(2.0)));
}

Vec4 state_of(double x, double y, double th, double py) {
  Vec4 s;
  s << x, y, th, py;
  return s;
}

Vec3 control_of(double fn, double ft, double vpy) {
  Vec3 u;
  u << fn, ft, vpy;
  return u;
}

}  // namespace

TEST_CASE("limit surface coefficients match the closed-form support integral") {
  const qsp::LimitSurfaceParams p = paper_params();
  CHECK(p.f_max == doctest::Approx(0.4 * 1.0 * 9.81).epsilon(1e-12));  // 3.924 N
  const double mean_r = mean_radius_closed_form(p.half_extent);
  CHECK(p.m_max == doctest::Approx(p.f_max * mean_r).epsilon(1e-7));
  CHECK(p.c_ratio == doctest::Approx(mean_r).epsilon(1e-7));
}

TEST_CASE("limit surface rejects degenerate physical parameters") {
  for (auto mutate : std::vector<std::function<void(qsp::LimitSurfaceParams&)>>{
           [](auto& p) { p.half_extent = 0.0; },
           [](auto& p) { p.mass = 0.0; },
           [](auto& p) { p.mu_ground = -0.1; },
           [](auto& p) { p.k_v = 0.0; }}) {
    qsp::LimitSurfaceParams p;
    mutate(p);
    CHECK_THROWS_AS(qsp::limit_surface(p), std::invalid_argument);
  }
  // Using the derived coefficients without computing them is also an error.
  qsp::LimitSurfaceParams raw;
  CHECK_THROWS_AS(qsp::qsp_f(Vec4::Zero(), Vec3::Zero(), raw),
                  std::invalid_argument);
}

TEST_CASE("zero force means zero motion (quasi-static)") {
  const qsp::LimitSurfaceParams p = paper_params();
  const Vec4 xd = qsp::qsp_f(state_of(0.3, -0.2, 1.1, 0.02), Vec3::Zero(), p);
  CHECK(xd.lpNorm<Eigen::Infinity>() == 0.0);
}

TEST_CASE("pure centered normal push moves straight along the body axis") {
  const qsp::LimitSurfaceParams p = paper_params();
  const double th = 0.7;
  const Vec4 xd = qsp::qsp_f(state_of(0, 0, th, 0), control_of(2.0, 0.0, 0.0), p);
  CHECK(xd[qsp::kX] == doctest::Approx(p.k_v * 2.0 * std::cos(th)).epsilon(1e-12));
  CHECK(xd[qsp::kY] == doctest::Approx(p.k_v * 2.0 * std::sin(th)).epsilon(1e-12));
  CHECK(xd[qsp::kTheta] == 0.0);
  CHECK(xd[qsp::kPy] == 0.0);
}

TEST_CASE("hand-worked rates for an off-center push with tangential force") {
  const qsp::LimitSurfaceParams p = paper_params();
  const double c2 = mean_radius_closed_form(p.half_extent) *
                    mean_radius_closed_form(p.half_extent);
  // theta = 0, fn = 2, ft = 0.5, py = 0.01:
  //   body velocity = k_v * (2, -0.5); torque = 0.05*0.5 - 0.01*2 = 0.005.
  const Vec4 xd =
      qsp::qsp_f(state_of(0, 0, 0, 0.01), control_of(2.0, 0.5, 0.07), p);
  CHECK(xd[qsp::kX] == doctest::Approx(0.1).epsilon(1e-12));
  CHECK(xd[qsp::kY] == doctest::Approx(-0.025).epsilon(1e-12));
  CHECK(xd[qsp::kTheta] == doctest::Approx(0.05 * 0.005 / c2).epsilon(1e-6));
  CHECK(xd[qsp::kPy] == doctest::Approx(0.07).epsilon(1e-12));

  // Same push with the body rotated by pi/2: world rates rotate with it.
  const Vec4 xd90 =
      qsp::qsp_f(state_of(0, 0, M_PI / 2, 0.01), control_of(2.0, 0.5, 0.07), p);
  CHECK(xd90[qsp::kX] == doctest::Approx(0.025).epsilon(1e-12));
  CHECK(xd90[qsp::kY] == doctest::Approx(0.1).epsilon(1e-12));
  CHECK(xd90[qsp::kTheta] == doctest::Approx(xd[qsp::kTheta]).epsilon(1e-12));
}

TEST_CASE("analytic jacobians match central finite differences") {
  const qsp::LimitSurfaceParams p = paper_params();
  std::mt19937_64 rng(2024);
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    Vec4 x;
    for (int i = 0; i < 4; ++i) x[i] = uniform(rng, -1.0, 1.0);
    x[qsp::kPy] = uniform(rng, -p.half_extent, p.half_extent);
    Vec3 u;
    u[qsp::kFn] = uniform(rng, 0.0, 3.0);
    u[qsp::kFt] = uniform(rng, -1.0, 1.0);
    u[qsp::kVpy] = uniform(rng, -0.05, 0.05);

    Mat A, B;
    qsp::qsp_jacobians(x, u, p, &A, &B);
    const Mat A_fd = fd_jacobian(
        [&](const Vec& xv) -> Vec { return qsp::qsp_f(Vec4(xv), u, p); }, x);
    const Mat B_fd = fd_jacobian(
        [&](const Vec& uv) -> Vec { return qsp::qsp_f(x, Vec3(uv), p); }, u);
    for (int r = 0; r < 4; ++r) {
      for (int c = 0; c < 4; ++c) worst = std::max(worst, testsupport::rel_err(A(r, c), A_fd(r, c)));
      for (int c = 0; c < 3; ++c) worst = std::max(worst, testsupport::rel_err(B(r, c), B_fd(r, c)));
    }
  }
  CHECK(worst <= 1e-6);
}

TEST_CASE("dynamics are 2*pi periodic in the heading") {
  const qsp::LimitSurfaceParams p = paper_params();
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 200; ++trial) {
    Vec4 x;
    for (int i = 0; i < 4; ++i) x[i] = uniform(rng, -2.0, 2.0);
    Vec3 u = control_of(uniform(rng, 0.0, 3.0), uniform(rng, -1.0, 1.0),
                        uniform(rng, -0.1, 0.1));
    Vec4 shifted = x;
    shifted[qsp::kTheta] += 2.0 * M_PI;
    const Vec4 a = qsp::qsp_f(x, u, p);
    const Vec4 b = qsp::qsp_f(shifted, u, p);
    CHECK((a - b).lpNorm<Eigen::Infinity>() <= 1e-12);
  }
}

TEST_CASE("the quasi-static map is dissipative: twist dot wrench >= 0") {
  const qsp::LimitSurfaceParams p = paper_params();
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 1000; ++trial) {
    const Vec4 x = state_of(uniform(rng, -1, 1), uniform(rng, -1, 1),
                            uniform(rng, -3, 3), uniform(rng, -0.05, 0.05));
    const Vec3 u = control_of(uniform(rng, 0.0, 3.0), uniform(rng, -1.0, 1.0),
                              uniform(rng, -0.1, 0.1));
    const Vec4 xd = qsp::qsp_f(x, u, p);
    const Vec2 v_body = rot2(x[qsp::kTheta]).transpose() * Vec2(xd[qsp::kX], xd[qsp::kY]);
    const double tau = p.half_extent * u[qsp::kFt] - x[qsp::kPy] * u[qsp::kFn];
    const double power = v_body[0] * u[qsp::kFn] + v_body[1] * (-u[qsp::kFt]) +
                         xd[qsp::kTheta] * tau;
    CHECK(power >= -1e-15);
  }
}

TEST_CASE("sticking pushes keep the pusher fixed on the face") {
  const qsp::LimitSurfaceParams p = paper_params();
  Vec4 x = state_of(0, 0, 0.2, 0.01);
  // |ft| = 0.05 < mu_p*fn = 0.3: strictly inside the cone, so any requested
  // slide velocity is inconsistent and must be dropped.
  const Vec3 u = control_of(1.0, 0.05, 0.3);
  for (int i = 0; i < 50; ++i) x = qsp::plant_step(x, u, 0.1, p);
  CHECK(x[qsp::kPy] == 0.01);
  CHECK(x[qsp::kX] > 0.2);  // it did move
}

TEST_CASE("mode-consistent sliding controls pass through unchanged") {
  const qsp::LimitSurfaceParams p = paper_params();
  const Vec4 x = state_of(0.1, -0.1, 0.4, 0.02);
  const double h = 0.25;
  {  // ft on the +mu_p*fn edge with vpy < 0: sliding right, consistent.
    const Vec3 u = control_of(1.0, p.mu_pusher * 1.0, -0.02);
    const Vec4 manual = x + h * qsp::qsp_f(x, u, p);
    const Vec4 stepped = qsp::plant_step(x, u, h, p);
    CHECK((stepped - manual).lpNorm<Eigen::Infinity>() <= 1e-15);
    CHECK(qsp::control_mode(u, p) == qsp::Mode::SlideRight);
  }
  {  // ft on the -mu_p*fn edge with vpy > 0: sliding left, consistent.
    const Vec3 u = control_of(1.0, -p.mu_pusher * 1.0, 0.02);
    const Vec4 stepped = qsp::plant_step(x, u, h, p);
    CHECK(stepped[qsp::kPy] == doctest::Approx(0.02 + h * 0.02).epsilon(1e-12));
    CHECK(qsp::control_mode(u, p) == qsp::Mode::SlideLeft);
  }
  {  // Cone edge with the wrong slide direction: vpy is zeroed.
    const Vec3 u = control_of(1.0, p.mu_pusher * 1.0, +0.02);
    const Vec4 stepped = qsp::plant_step(x, u, h, p);
    CHECK(stepped[qsp::kPy] == x[qsp::kPy]);
  }
}

TEST_CASE("control projection clips the cone and is idempotent") {
  const qsp::LimitSurfaceParams p = paper_params();
  const Vec3 u = control_of(2.0, 5.0, -0.3);  // far outside the cone
  const Vec3 up = qsp::project_control(u, p);
  CHECK(up[qsp::kFn] == 2.0);
  CHECK(up[qsp::kFt] == doctest::Approx(p.mu_pusher * 2.0).epsilon(1e-12));
  CHECK(up[qsp::kVpy] == -0.3);  // clipped to +edge, vpy <= 0 consistent
  CHECK((qsp::project_control(up, p) - up).lpNorm<Eigen::Infinity>() == 0.0);

  // Negative normal force: clamped to zero contact force, pose frozen.
  const Vec4 x = state_of(0, 0, 0, 0.0);
  const Vec4 stepped = qsp::plant_step(x, control_of(-1.0, 0.2, 0.0), 0.1, p);
  CHECK(stepped.head<3>().lpNorm<Eigen::Infinity>() == 0.0);

  // Sticking classification for interior and contact-free controls.
  CHECK(qsp::control_mode(control_of(1.0, 0.1, 0.0), p) == qsp::Mode::Sticking);
  CHECK(qsp::control_mode(Vec3::Zero(), p) == qsp::Mode::Sticking);
}

TEST_CASE("the pusher contact point stays on the face under integration") {
  const qsp::LimitSurfaceParams p = paper_params();
  Vec4 x = state_of(0, 0, 0, 0.045);
  // A consistent left slide pushes py toward the +face edge.
  const Vec3 u = control_of(1.0, -p.mu_pusher, 0.05);
  for (int i = 0; i < 30; ++i) {
    x = qsp::plant_step(x, u, 0.3, p);
    CHECK(std::abs(x[qsp::kPy]) <= p.half_extent);
  }
  CHECK(x[qsp::kPy] == doctest::Approx(p.half_extent).epsilon(1e-12));
}

TEST_CASE("line reference: 0.5 m at 0.05 m/s lasts 10 s and moves linearly") {
  const qsp::LimitSurfaceParams p = paper_params();
  const double h = 0.3;
  const qsp::Reference ref = qsp::make_line(p, 0.5, 0.05, h);
  REQUIRE(ref.num_steps() == 34);  // ceil(10 s / 0.3 s)
  REQUIRE(ref.states.size() == 35);
  for (int i = 0; i <= ref.num_steps(); ++i) {
    const double t = i * h;
    CHECK(ref.states[i][qsp::kX] ==
          doctest::Approx(std::min(0.05 * t, 0.5)).epsilon(1e-12));
    CHECK(ref.states[i][qsp::kY] == 0.0);
    CHECK(ref.states[i][qsp::kTheta] == 0.0);
    CHECK(ref.states[i][qsp::kPy] == 0.0);
  }
  // Nominal control: pure sticking normal push fn = v / k_v = 1 N.
  CHECK(ref.controls[0][qsp::kFn] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(ref.controls[0][qsp::kFt] == 0.0);
  CHECK(ref.controls[0][qsp::kVpy] == 0.0);

  // Forward-Euler rollout of the nominal controls reproduces the line exactly.
  Vec4 x = ref.states.front();
  for (int i = 0; i < ref.num_steps(); ++i) {
    x = qsp::plant_step(x, ref.controls[i], h, p);
    CHECK((x - ref.states[i + 1]).lpNorm<Eigen::Infinity>() <= 1e-12);
  }
}

TEST_CASE("zero-speed line collapses to a constant hold reference") {
  const qsp::LimitSurfaceParams p = paper_params();
  const qsp::Reference ref = qsp::make_line(p, 0.5, 0.0, 0.3);
  REQUIRE(ref.states.size() >= 2);
  for (const Vec4& s : ref.states) CHECK(s.lpNorm<Eigen::Infinity>() == 0.0);
  for (const Vec3& u : ref.controls) CHECK(u.lpNorm<Eigen::Infinity>() == 0.0);
  CHECK(ref.state_at(-3) == ref.states.front());
  CHECK(ref.state_at(99999) == ref.states.back());
}

TEST_CASE("circle reference: five laps at 0.3 rad/s with feasible controls") {
  const qsp::LimitSurfaceParams p = paper_params();
  const double h = 0.3, r = 0.15, w = 0.3;
  const qsp::Reference ref = qsp::make_circle(p, r, w, 5.0, h);
  const double duration = 5.0 * 2.0 * M_PI / w;
  REQUIRE(ref.num_steps() == static_cast<int>(std::ceil(duration / h)));
  const Vec2 center(0.0, r);
  for (size_t i = 0; i < ref.states.size(); ++i) {
    CHECK((Vec2(ref.states[i].head<2>()) - center).norm() ==
          doctest::Approx(r).epsilon(1e-12));
    const double expect_th = std::min(w * i * h, 5.0 * 2.0 * M_PI);
    CHECK(ref.states[i][qsp::kTheta] == doctest::Approx(expect_th).epsilon(1e-12));
  }
  // Every nominal control stays inside the pusher friction cone...
  for (const Vec3& u : ref.controls) {
    CHECK(u[qsp::kFn] >= 0.0);
    CHECK(std::abs(u[qsp::kFt]) <= p.mu_pusher * u[qsp::kFn] + 1e-12);
    CHECK(u[qsp::kVpy] == 0.0);
  }
  // ...and its forward-Euler rollout stays within the documented per-step
  // mismatch.  With the pusher centered (py = 0) the torque-producing ft also
  // induces lateral body velocity -k_v*ft, so the open-loop error per step is
  // bounded by h*(k_v*|ft| + v*omega*h/2) rather than O(h^2); heading is exact.
  for (int i = 0; i + 1 < static_cast<int>(ref.states.size()); ++i) {
    const Vec4 pred = qsp::plant_step(ref.states[i], ref.controls[i], h, p);
    const double v = ref.controls[i][qsp::kFn] * p.k_v;
    const double bound =
        h * (p.k_v * std::abs(ref.controls[i][qsp::kFt]) + 0.5 * v * w * h) + 1e-6;
    CHECK((pred.head<2>() - ref.states[i + 1].head<2>()).norm() <= bound);
    CHECK(std::abs(pred[qsp::kTheta] - ref.states[i + 1][qsp::kTheta]) <= 1e-9);
  }
}

TEST_CASE("figure eight visits both lobes and closes on itself") {
  const qsp::LimitSurfaceParams p = paper_params();
  const qsp::Reference ref = qsp::make_eight(p, 0.15, 0.3, 1.0, 0.3);
  double ymax = 0.0, ymin = 0.0;
  for (const Vec4& s : ref.states) {
    ymax = std::max(ymax, s[qsp::kY]);
    ymin = std::min(ymin, s[qsp::kY]);
  }
  CHECK(ymax == doctest::Approx(0.3).epsilon(1e-3));   // top of the left lobe
  CHECK(ymin == doctest::Approx(-0.3).epsilon(1e-3));  // bottom of the right lobe
  CHECK(ref.states.back().head<2>().norm() <= 1e-12);  // returns to the origin
  CHECK(ref.states.back()[qsp::kTheta] == doctest::Approx(0.0).epsilon(1e-12));
  // Heading is continuous: increments bounded by omega*h.
  for (size_t i = 0; i + 1 < ref.states.size(); ++i) {
    CHECK(std::abs(ref.states[i + 1][qsp::kTheta] - ref.states[i][qsp::kTheta]) <=
          0.3 * 0.3 + 1e-9);
  }
}

TEST_CASE("waypoint files resample at constant arc length with tangent heading") {
  const qsp::LimitSurfaceParams p = paper_params();
  const std::string path = "waypoints_roundtrip.txt";
  {
    std::ofstream out(path);
    out << "# an L-shaped polyline\n";
    out << "0 0\n0.3 0\n0.3 0\n0.3 0.3\n";  // duplicate point is tolerated
  }
  const double speed = 0.05, h = 0.3;
  const qsp::Reference ref = qsp::make_waypoints(p, path, speed, h);
  std::remove(path.c_str());

  REQUIRE(ref.num_steps() == static_cast<int>(std::ceil(0.6 / (speed * h))));
  for (size_t i = 0; i + 1 < ref.states.size(); ++i) {
    const double chord =
        (ref.states[i + 1].head<2>() - ref.states[i].head<2>()).norm();
    CHECK(chord <= speed * h + 1e-9);  // equality off the corner, shorter across it
  }
  CHECK(ref.states.front()[qsp::kTheta] == 0.0);
  CHECK(ref.states.back()[qsp::kTheta] == doctest::Approx(M_PI / 2).epsilon(1e-12));
  CHECK(ref.states.back()[qsp::kX] == doctest::Approx(0.3).epsilon(1e-12));
  CHECK(ref.states.back()[qsp::kY] == doctest::Approx(0.3).epsilon(1e-12));

  // A straight polyline reproduces make_line exactly.
  const qsp::Reference line = qsp::make_line(p, 0.5, 0.05, h);
  const qsp::Reference poly =
      qsp::make_polyline(p, {Vec2(0, 0), Vec2(0.5, 0)}, 0.05, h);
  REQUIRE(line.states.size() == poly.states.size());
  for (size_t i = 0; i < line.states.size(); ++i) {
    CHECK((line.states[i] - poly.states[i]).lpNorm<Eigen::Infinity>() <= 1e-12);
  }
}

TEST_CASE("malformed waypoint inputs are rejected") {
  const qsp::LimitSurfaceParams p = paper_params();
  auto write_and_try = [&](const std::string& body) {
    const std::string path = "waypoints_bad.txt";
    {
      std::ofstream out(path);
      out << body;
    }
    bool threw = false;
    try {
      qsp::make_waypoints(p, path, 0.05, 0.3);
    } catch (const std::runtime_error&) {
      threw = true;
    }
    std::remove(path.c_str());
    return threw;
  };
  CHECK(write_and_try("0.1 abc\n"));          // non-numeric token
  CHECK(write_and_try("0 0 0\n0.1 0.1 0\n")); // extra column
  CHECK(write_and_try("0.2 0.2\n"));          // single point, no segment
  CHECK(write_and_try(""));                   // empty file
  CHECK_THROWS_AS(qsp::make_waypoints(p, "no_such_file.txt", 0.05, 0.3),
                  std::runtime_error);
}
