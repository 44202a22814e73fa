#pragma once

#include <string>
#include <vector>

#include "cipush/types.hpp"

namespace cipush::friction {

/// Coulomb friction encodings over split tangential forces.
///
/// Local force variables for one contact, in this order:
///   CC:  [ln, lt+, lt-, gamma]   (gamma is the slip-magnitude variable)
///   STC: [ln, lt+, lt-]
/// lt+ resists slip in +t (engaged when psi < 0), lt- resists slip in -t
/// (engaged when psi > 0); the net tangential force on the pusher is
/// (lt+ - lt-) along t.  psi is the tangential slip rate of the pusher
/// relative to the face.
enum class Model { CC, STC };

int num_force_vars(Model m);

struct Residual {
  enum class Kind {
    Inequality,              ///< value <= 0
    RelaxedComplementarity,  ///< value <= s with a dedicated slack s >= 0
  };
  Kind kind;
  double value;
  Vec dvalue_dlam;      ///< gradient wrt the local force variables
  double dvalue_dpsi;   ///< gradient wrt the slip rate
  std::string label;
};

/// Residual set for one contact.
///
/// CC (mixed complementarity, relaxed products):
///   (mu*ln - lt+ - lt-) * gamma <= s        [relaxed]
///   (gamma + psi) * lt+        <= s         [relaxed]
///   (gamma - psi) * lt-        <= s         [relaxed]
///   lt+ + lt- - mu*ln          <= 0
///   -(gamma + psi)             <= 0
///   -(gamma - psi)             <= 0
///
/// STC (triggered equalities, expanded to one-sided rows sharing the
/// trigger weight sigma* of stc::sigma_star):
///   sigma*(-psi) * +/-(lt- - mu*ln) <= 0    (psi > 0: lt- at the cone edge)
///   sigma*(-psi) * +/-lt+           <= 0    (psi > 0: lt+ off)
///   sigma*(+psi) * +/-(lt+ - mu*ln) <= 0    (psi < 0: lt+ at the cone edge)
///   sigma*(+psi) * +/-lt-           <= 0    (psi < 0: lt- off)
///   lt+ + lt- - mu*ln               <= 0    (friction pyramid)
/// i.e. 8 triggered rows + 1 pyramid row and one fewer variable than CC.
///
/// Nonnegativity of ln, lt+, lt- (and gamma for CC) is a simple bound and is
/// not part of the residual set.
std::vector<Residual> residuals(Model m, double mu, double psi, const Vec& lam,
                                double smoothing_epsilon);

/// Number of residual rows emitted by `residuals`.
int num_residuals(Model m);

}  // namespace cipush::friction
