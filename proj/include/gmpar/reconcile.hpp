#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>

#include "gmpar/autodiff.hpp"
#include "gmpar/hierarchy.hpp"

namespace gmpar {

enum class WeightMode {
  Neural,
  Uniform,
  RootDouble,    ///< C1
  MiddleDouble,  ///< C2
  LeafDouble,    ///< C3
  Random,        ///< C4
  PastValue,     ///< C5
};

std::string_view to_string(WeightMode mode);
/// Accepts the names printed by to_string and the aliases c1..c5. Throws ConfigError.
WeightMode parse_weight_mode(std::string_view name);

/// Diagonal of the weight matrix w. The projection penalises
/// ||w (y - yhat)||, so each entry enters squared.
struct ReconciliationWeights {
  Vector w;
  WeightMode mode = WeightMode::Uniform;
};

/// S * yhat_bottom; the upper-level forecasts are discarded.
Vector bottom_up(const Vector& yhat, const TemporalHierarchy& h);

/// argmin_y (y - yhat)^T diag(wtilde) (y - yhat) subject to C y = c.
///
/// Solved through the Schur complement: (C D^-1 C^T) lambda = C yhat - c
/// by Cholesky, then y = yhat - D^-1 C^T lambda. Throws SingularSystem when
/// C D^-1 C^T is not positive definite (rank-deficient C), DimensionMismatch
/// on bad shapes.
Vector project_affine(const Vector& yhat, const Vector& wtilde, const Matrix& C, const Vector& c);

/// Coherent forecast closest to yhat in the norm ||w (y - yhat)||.
/// Throws InvalidWeights unless every weight is finite and positive.
Vector adaptive_reconcile(const Vector& yhat, const TemporalHierarchy& h, const Vector& w);

/// adaptive_reconcile with unit weights.
Vector projection_reconcile(const Vector& yhat, const TemporalHierarchy& h);

/// The n x n map M(w) with adaptive_reconcile(yhat) = M * yhat.
Matrix reconciliation_matrix(const TemporalHierarchy& h, const Vector& w);

/// Fixed-weight baselines. C1-C3 set the designated level to 2 and every
/// other node to 1; C2 doubles every level strictly between root and leaves.
/// C4 draws uniformly from [0.5, 2] using `seed`. C5 uses |mean| / (std + 1e-8)
/// of each node over `history` (throws MissingHistory when empty); nodes with
/// an all-zero history fall back to 1.
ReconciliationWeights make_fixed_weights(WeightMode mode, const TemporalHierarchy& h,
                                         std::span<const HierVector> history = {}, std::uint64_t seed = 0);

/// Tape op: columns of `yhat` (n x B) reconciled with the matching columns
/// of `w` (n x B). Gradients flow to both inputs.
ad::Tensor reconcile_tensor(const ad::Tensor& yhat, const ad::Tensor& w, const TemporalHierarchy& h);

}  // namespace gmpar
