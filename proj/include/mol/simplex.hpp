#pragma once

// Dense two-phase simplex for small linear programs in standard form
//   minimize c^T x  subject to  A x = b,  x >= 0.
// Pivoting follows Bland's rule, so the method terminates on degenerate
// problems. Intended for LPs with a few dozen variables.

#include "mol/core.hpp"

namespace mol {

enum class LpStatus { Optimal, Infeasible, Unbounded };

struct LpResult {
  LpStatus status = LpStatus::Infeasible;
  Vector x;
  double objective = 0.0;
  Index pivots = 0;
};

LpResult solve_standard_lp(const Vector& c, const Matrix& A, const Vector& b, double tol = 1e-10);

}  // namespace mol
