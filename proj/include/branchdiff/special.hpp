#pragma once

// Regularized incomplete gamma functions.
//
// P(a, x) = gamma(a, x) / Gamma(a) and Q(a, x) = 1 - P(a, x). Series
// expansion for x < a + 1, modified Lentz continued fraction otherwise.

namespace branchdiff::special {

/// Regularized lower incomplete gamma P(a, x); a > 0, x >= 0.
double gamma_p(double a, double x);

/// Regularized upper incomplete gamma Q(a, x); a > 0, x >= 0.
double gamma_q(double a, double x);

}  // namespace branchdiff::special
