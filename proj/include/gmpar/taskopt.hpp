#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "gmpar/hierarchy.hpp"

namespace gmpar {

enum class ObjectiveNorm { L2, L1 };

/// a . y + b . yhat + c, used as "= 0" (equality) or "<= 0" (inequality).
/// Empty `yhat_coef` means zero.
struct AffineConstraint {
  Vector y_coef;
  Vector yhat_coef;
  double constant = 0.0;

  double evaluate(const Vector& y, const Vector& yhat) const;
};

/// |y_i - yhat_i| <= fraction * yhat_i.
struct BandConstraint {
  std::size_t node = 0;
  double fraction = 0.2;
};

/// Objective ||yhat - y|| + beta (1 - cos(yhat, y)) subject to coherence
/// (always implied) plus the listed task constraints.
struct TaskSpec {
  double beta = 0.0;
  ObjectiveNorm norm = ObjectiveNorm::L2;
  std::vector<AffineConstraint> equalities;
  std::vector<AffineConstraint> inequalities;
  std::vector<BandConstraint> bands;
  double tol_eq = 1e-8;
  double tol_ineq = 1e-8;
  std::size_t max_iter = 200;

  std::size_t n_eq() const { return equalities.size(); }
  std::size_t n_ineq() const { return inequalities.size() + bands.size(); }
};

/// Pins node `node` to its base forecast: y_node - yhat_node = 0.
AffineConstraint pin_to_forecast(std::size_t node, std::size_t n);

/// Root pinned to the forecast plus a `band` fraction band on every node.
TaskSpec alipay_spec(double beta, std::size_t n, double band = 0.2);

/// ||yhat - y|| + beta (1 - yhat.y / (||yhat|| ||y||)); the cosine term is
/// taken as beta when either vector is zero.
double evaluate_objective(const Vector& yhat, const Vector& y, const TaskSpec& spec);

enum class TaskStatus { Converged, MaxIterExceeded };

struct TaskResult {
  Vector y;
  TaskStatus status = TaskStatus::Converged;
  std::size_t iterations = 0;
  double objective = 0.0;
  /// max |A y|, max |e_j|
  double coherence_violation = 0.0;
  double eq_violation = 0.0;
  /// max(0, max g_i)
  double ineq_violation = 0.0;

  std::string report() const;
};

/// Interval bounds implied by bands, pins and single-variable inequalities,
/// propagated leaf-to-root through the aggregation tree. Returns false when
/// some node's feasible interval is empty (the problem is then certainly
/// infeasible).
bool interval_feasible(const Vector& yhat, const TemporalHierarchy& h, const TaskSpec& spec);

/// Solves the task problem by sequential QP. Every iterate satisfies the
/// (affine) constraints, so the result is always feasible. Throws Infeasible
/// when no coherent point satisfies the constraints.
TaskResult solve_task(const Vector& yhat, const TemporalHierarchy& h, const TaskSpec& spec);

}  // namespace gmpar
