#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "cipush/planar_model.hpp"
#include "support/fd.hpp"

using namespace cipush;
using namespace cipush::model;

namespace {

BoxParams paper_params() {
  BoxParams p;  // defaults match the studied scenario
  return p;
}

Vec random_q(Task task, std::mt19937_64& rng) {
  Vec q(nv(task));
  for (int i = 0; i < q.size(); ++i) q[i] = testsupport::uniform(rng, -0.5, 0.5);
  return q;
}

}  // namespace

TEST_CASE("mean_radius_square_patch matches the closed form") {
  // Independent oracle: for a square of half-side a the mean distance to the
  // centre is (a/3)*(sqrt(2) + ln(1 + sqrt(2))) = 0.7651957164642953 * a.
  const double closed = (std::sqrt(2.0) + std::log(1.0 + std::sqrt(2.0))) / 3.0;
  CHECK(mean_radius_square_patch(1.0) == doctest::Approx(closed).epsilon(1e-7));
  CHECK(mean_radius_square_patch(0.05) == doctest::Approx(0.05 * closed).epsilon(1e-7));
  // Scaling is exactly linear in the half-side.
  CHECK(mean_radius_square_patch(2.0) ==
        doctest::Approx(2.0 * mean_radius_square_patch(1.0)).epsilon(1e-12));
  CHECK_THROWS_AS(mean_radius_square_patch(0.0), std::invalid_argument);
}

TEST_CASE("signed distance: face gap in axis-aligned and rotated poses") {
  const BoxParams p = paper_params();
  SUBCASE("translate, axis aligned") {
    Vec q(5);
    q << -0.1, 0.0, 0.0, 0.0, 0.0;  // pusher 0.1 left of the centre
    CHECK(signed_distance(Task::Translate, p, q, ContactPair{1}) ==
          doctest::Approx(0.05).epsilon(1e-14));
    q[0] = -0.05;  // touching the -x face
    CHECK(signed_distance(Task::Translate, p, q, ContactPair{1}) ==
          doctest::Approx(0.0).epsilon(1e-14));
    // Other faces see the same pusher from farther away.
    CHECK(signed_distance(Task::Translate, p, q, ContactPair{0}) ==
          doctest::Approx(-0.1).epsilon(1e-12));
  }
  SUBCASE("translate, rotated box") {
    Vec q(5);
    q << 0.0, -0.1, 0.0, 0.0, M_PI / 2.0;  // -x face now points down
    CHECK(signed_distance(Task::Translate, p, q, ContactPair{1}) ==
          doctest::Approx(0.05).epsilon(1e-12));
  }
  SUBCASE("rotate task with pinned centre") {
    Vec q(3);
    q << -0.1, 0.0, 0.0;
    CHECK(signed_distance(Task::Rotate, p, q, ContactPair{1}) ==
          doctest::Approx(0.05).epsilon(1e-14));
  }
}

TEST_CASE("contact gradients and Hessians match finite differences") {
  const BoxParams p = paper_params();
  std::mt19937_64 rng(11);
  for (Task task : {Task::Translate, Task::Rotate}) {
    for (int trial = 0; trial < 200; ++trial) {
      const Vec q = random_q(task, rng);
      for (const ContactPair& pair : default_pairs(Task::Translate)) {
        if (task == Task::Rotate && pair.face != 1) continue;
        const ContactEval ev = contact_eval(task, p, q, pair);

        const Vec fd_phi = testsupport::fd_gradient(
            [&](const Vec& qq) { return contact_eval(task, p, qq, pair).phi; }, q);
        const Vec fd_zeta = testsupport::fd_gradient(
            [&](const Vec& qq) { return contact_eval(task, p, qq, pair).zeta; }, q);
        for (int i = 0; i < q.size(); ++i) {
          CHECK(testsupport::rel_err(fd_phi[i], ev.dphi_dq[i]) < 1e-7);
          CHECK(testsupport::rel_err(fd_zeta[i], ev.dzeta_dq[i]) < 1e-7);
        }

        const Mat fd_hp = testsupport::fd_jacobian(
            [&](const Vec& qq) { return Vec(contact_eval(task, p, qq, pair).dphi_dq); }, q);
        const Mat fd_hz = testsupport::fd_jacobian(
            [&](const Vec& qq) { return Vec(contact_eval(task, p, qq, pair).dzeta_dq); }, q);
        CHECK((fd_hp - ev.phi_hess).lpNorm<Eigen::Infinity>() < 1e-6);
        CHECK((fd_hz - ev.zeta_hess).lpNorm<Eigen::Infinity>() < 1e-6);
        // Hessians are symmetric by construction.
        CHECK((ev.phi_hess - ev.phi_hess.transpose()).lpNorm<Eigen::Infinity>() == 0.0);
      }
    }
  }
}

TEST_CASE("contact Jacobian rows are the time derivatives of the gaps") {
  const BoxParams p = paper_params();
  std::mt19937_64 rng(13);
  for (Task task : {Task::Translate, Task::Rotate}) {
    for (int trial = 0; trial < 100; ++trial) {
      const Vec q = random_q(task, rng);
      Vec qdot(nv(task));
      for (int i = 0; i < qdot.size(); ++i) qdot[i] = testsupport::uniform(rng, -1.0, 1.0);
      const ContactPair pair{task == Task::Rotate ? 1 : trial % 4};
      const Mat J = contact_jacobian(task, p, q, pair);
      const double h = 1e-6;
      const ContactEval ep = contact_eval(task, p, q + h * qdot, pair);
      const ContactEval em = contact_eval(task, p, q - h * qdot, pair);
      CHECK(testsupport::rel_err((ep.phi - em.phi) / (2 * h), J.row(0).dot(qdot)) < 1e-7);
      CHECK(testsupport::rel_err((ep.zeta - em.zeta) / (2 * h), J.row(1).dot(qdot)) < 1e-7);
    }
  }
}

TEST_CASE("slip velocity: sliding pusher against a static box") {
  const BoxParams p = paper_params();
  Vec q(5), qdot(5);
  q << -0.05, 0.0, 0.0, 0.0, 0.0;
  qdot.setZero();
  const ContactPair pair{1};
  const ContactEval ev = contact_eval(Task::Translate, p, q, pair);
  // Pusher moving along the face tangent at 0.1 m/s.
  qdot.segment<2>(0) = 0.1 * ev.t_world;
  const SlipEval s = slip_velocity(Task::Translate, p, q, qdot, pair);
  CHECK(s.psi == doctest::Approx(0.1).epsilon(1e-12));
  // Pure normal approach has zero slip.
  qdot.segment<2>(0) = -0.2 * ev.n_world;
  CHECK(slip_velocity(Task::Translate, p, q, qdot, pair).psi ==
        doctest::Approx(0.0).epsilon(1e-12));

  // Gradient check.
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 50; ++trial) {
    const Vec qq = random_q(Task::Translate, rng);
    Vec vv(5);
    for (int i = 0; i < 5; ++i) vv[i] = testsupport::uniform(rng, -1.0, 1.0);
    const SlipEval se = slip_velocity(Task::Translate, p, qq, vv, pair);
    const Vec fd_q = testsupport::fd_gradient(
        [&](const Vec& z) { return slip_velocity(Task::Translate, p, z, vv, pair).psi; }, qq);
    const Vec fd_v = testsupport::fd_gradient(
        [&](const Vec& z) { return slip_velocity(Task::Translate, p, qq, z, pair).psi; }, vv);
    for (int i = 0; i < 5; ++i) {
      CHECK(testsupport::rel_err(fd_q[i], se.dpsi_dq[i]) < 1e-6);
      CHECK(testsupport::rel_err(fd_v[i], se.dpsi_dqdot[i]) < 1e-6);
    }
  }
}

TEST_CASE("mass matrix: constant diagonal with the box inertia") {
  const BoxParams p = paper_params();
  const Mat Mt = mass_matrix(Task::Translate, p);
  Vec expect(5);
  expect << 0.1, 0.1, 0.6, 0.6, 0.6 * 0.1 * 0.1 / 6.0;
  CHECK((Mt.diagonal() - expect).lpNorm<Eigen::Infinity>() == 0.0);
  CHECK((Mt - Mat(expect.asDiagonal())).lpNorm<Eigen::Infinity>() == 0.0);
  const Mat Mr = mass_matrix(Task::Rotate, p);
  CHECK(Mr.rows() == 3);
  CHECK(Mr(2, 2) == doctest::Approx(0.001).epsilon(1e-14));

  BoxParams bad = p;
  bad.mass = -1.0;
  CHECK_THROWS_AS(mass_matrix(Task::Translate, bad), std::invalid_argument);
}

TEST_CASE("support bias: vanishes at rest, dissipative, saturates correctly") {
  const BoxParams p = paper_params();
  const double fg = p.mu_ground * p.mass * p.gravity;  // 1.1772 N
  const double mg = fg * mean_radius_square_patch(p.half());

  SUBCASE("zero at rest") {
    CHECK(bias(Task::Translate, p, Vec::Zero(5)).value.lpNorm<Eigen::Infinity>() == 0.0);
    CHECK(bias(Task::Rotate, p, Vec::Zero(3)).value.lpNorm<Eigen::Infinity>() == 0.0);
  }
  SUBCASE("pusher coordinates never see support drag") {
    std::mt19937_64 rng(23);
    for (int i = 0; i < 100; ++i) {
      Vec v(5);
      for (int k = 0; k < 5; ++k) v[k] = testsupport::uniform(rng, -3.0, 3.0);
      const Vec b = bias(Task::Translate, p, v).value;
      CHECK(b[0] == 0.0);
      CHECK(b[1] == 0.0);
      // Dissipativity: the drag power v . b is nonnegative.
      CHECK(v.dot(b) >= 0.0);
    }
  }
  SUBCASE("saturation at speed") {
    Vec v = Vec::Zero(5);
    v[2] = 2.0;
    const Vec b = bias(Task::Translate, p, v).value;
    CHECK(b[2] == doctest::Approx(fg).epsilon(1e-6));
    v.setZero();
    v[4] = 20.0;
    CHECK(bias(Task::Translate, p, v).value[4] == doctest::Approx(mg).epsilon(1e-6));
  }
  SUBCASE("gradient matches finite differences") {
    std::mt19937_64 rng(29);
    for (Task task : {Task::Translate, Task::Rotate}) {
      for (int i = 0; i < 50; ++i) {
        Vec v(nv(task));
        for (int k = 0; k < v.size(); ++k) v[k] = testsupport::uniform(rng, -1.0, 1.0);
        const BiasEval be = bias(task, p, v);
        const Mat fd = testsupport::fd_jacobian(
            [&](const Vec& z) { return Vec(bias(task, p, z).value); }, v);
        CHECK((fd - be.dvalue_dqdot).lpNorm<Eigen::Infinity>() < 1e-5);
      }
    }
  }
}

TEST_CASE("default pairs and face frames") {
  CHECK(default_pairs(Task::Translate).size() == 4);
  CHECK(default_pairs(Task::Rotate).size() == 1);
  for (int f = 0; f < 4; ++f) {
    const ContactPair pair{f};
    const Vec2 n = pair.face_normal_body();
    const Vec2 t = pair.face_tangent_body();
    CHECK(n.norm() == doctest::Approx(1.0));
    CHECK(t.norm() == doctest::Approx(1.0));
    CHECK(std::abs(n.dot(t)) < 1e-15);
    // Right-handed: n x t = +1.
    CHECK(n[0] * t[1] - n[1] * t[0] == doctest::Approx(1.0));
  }
  CHECK_THROWS_AS(ContactPair{7}.face_normal_body(), std::invalid_argument);
}
