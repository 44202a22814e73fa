#pragma once

#include <utility>
#include <vector>

#include "cipush/friction.hpp"
#include "cipush/nlp.hpp"
#include "cipush/planar_model.hpp"
#include "cipush/sqp.hpp"

namespace cipush::cito {

/// Which contact pairs carry complementarity constraints:
///   AllCC       - every pair, plain relaxed product phi*ln <= s.
///   TaskStc     - pairs whose push normal aligns with the task direction d
///                 carry the relaxed product; opposing pairs have ln forced to
///                 zero; orthogonal pairs are unconstrained.
///   DistanceStc - proximity-triggered: the product applies where the gap is
///                 below d_thresh, ln is forced to zero where it is above.
enum class Activation { AllCC, TaskStc, DistanceStc };

const char* activation_name(Activation a);

struct CitoProblem {
  model::Task task = model::Task::Translate;
  model::BoxParams box;
  Vec2 pinned_center = Vec2::Zero();  // box centre for Task::Rotate

  int horizon = 20;   // N
  double h = 0.05;    // s
  double w1 = 1.0;    // velocity cost weight
  double w2 = 1e4;    // slack (complementarity) penalty weight

  Vec x_lb, x_ub;    // size 2*nv; empty => defaults
  Vec tau_lb, tau_ub;  // size 2; empty => [-10, 10]
  Vec x_init;        // size 2*nv
  Vec goal;          // Translate: target box centre (2); Rotate: target angle (1)

  friction::Model friction_model = friction::Model::CC;
  Activation activation = Activation::AllCC;
  double d_thresh = 0.05;          // m, DistanceStc only
  double trigger_epsilon = 1e-6;   // smoothing for decision-dependent triggers
  std::vector<model::ContactPair> pairs;  // used as given; may be empty

  void validate() const;  ///< throws std::invalid_argument on bad shapes
};

/// Paper-scale translation task: box at (0.5, 0), pusher resting on the -x
/// face, all four faces as candidate pairs, horizon 20 x 0.05 s.
CitoProblem translation_problem(const Vec2& target);

/// Rotation task: box pinned at the origin, single -x face pair, pusher on
/// that face; goal is the box angle in radians.
CitoProblem rotation_problem(double angle_goal);

/// Index layout of the stacked decision vector:
/// [ X(0..N) | U(0..N-1) | F(step, pair) | S(step, pair) ].
struct Layout {
  int nv = 0, nx = 0, na = 0, nf = 0, npairs = 0, N = 0;
  int x_off(int i) const { return i * nx; }
  int u_off(int i) const { return (N + 1) * nx + i * na; }
  int f_off(int i, int k) const {
    return (N + 1) * nx + N * na + (i * npairs + k) * nf;
  }
  int s_off(int i, int k) const {
    return (N + 1) * nx + N * na + N * npairs * nf + i * npairs + k;
  }
  int total() const { return (N + 1) * nx + N * (na + npairs * nf + npairs); }
};

Layout layout(const CitoProblem& prob);

/// Task direction: goal box position minus initial box position (zero for the
/// pinned rotation task).
Vec2 direction_vector(const CitoProblem& prob);

/// Full direct transcription (backward Euler) of the contact-implicit
/// trajectory optimization.
nlp::Instance build_nlp(const CitoProblem& prob);

struct CitoSolution {
  std::vector<Vec> X;  // N+1 states [q; qdot]
  std::vector<Vec> U;  // N controls
  std::vector<Vec> F;  // N stacked per-pair force variables
  std::vector<Vec> S;  // N per-pair slacks
  double objective = 0.0;
  std::vector<int> binding_contacts;  // per-step count of pairs with ln > 1e-6
};

CitoSolution unpack(const CitoProblem& prob, const Vec& x);

/// Independent per-step verification plant: integrates the optimized controls
/// through a backward-Euler contact problem (dynamics + contact
/// complementarity + friction solved step by step, all pairs active).
struct RolloutResult {
  bool ok = false;            // every step's contact problem converged
  std::vector<Vec> X;         // simulated states, size N+1
  double final_error = 0.0;   // box position error (Translate, m) or
                              // angle error (Rotate, rad) vs. the goal
};

RolloutResult rollout(const CitoProblem& prob, const std::vector<Vec>& U);

struct CitoStats {
  sqp::SolveStatus status = sqp::SolveStatus::NumericalError;
  bool success = false;      // converged AND rollout error within tolerance
  double rollout_error = 0.0;
  double goal_tolerance = 0.0;
  int iterations = 0;
  double build_seconds = 0.0;
  double solve_seconds = 0.0;
  nlp::KktReport kkt;
};

sqp::Config default_cito_config();

std::pair<CitoSolution, CitoStats> solve_cito(
    const CitoProblem& prob, const sqp::Config& cfg = default_cito_config());

}  // namespace cipush::cito
