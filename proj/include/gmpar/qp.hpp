#pragma once

#include <cstddef>
#include <vector>

#include "gmpar/hierarchy.hpp"

namespace gmpar {

enum class QpStatus { Optimal, Infeasible, MaxIterExceeded };

struct QpResult {
  QpStatus status = QpStatus::Infeasible;
  Vector x;
  double objective = 0.0;
  /// Indices of the inequality rows active at the solution.
  std::vector<std::size_t> active;
  std::size_t iterations = 0;
};

/// Strictly convex QP
///
///   min 1/2 x^T G x + g^T x   s.t.  E x = e,  C x <= d
///
/// by the Goldfarb-Idnani dual active-set method. It starts from the
/// unconstrained minimum, so no feasible point is needed, and reports
/// Infeasible when a violated constraint cannot be brought in. G must be
/// symmetric positive definite (throws SingularSystem otherwise).
/// Linearly dependent equality rows are skipped when consistent.
QpResult solve_qp(const Matrix& G, const Vector& g, const Matrix& E, const Vector& e, const Matrix& C,
                  const Vector& d, std::size_t max_iter = 10000);

}  // namespace gmpar
