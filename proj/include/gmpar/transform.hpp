#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "gmpar/hierarchy.hpp"

namespace gmpar {

inline constexpr double kDefaultRootEps = 1e-8;

/// Top-down fractions a_i = y_i / root for one root period.
struct ProportionVector {
  Vector a;
  /// Set when |root| < eps and the denominator was clamped.
  bool degenerate = false;
};

/// a = y / max(|y_root|, eps).
ProportionVector proportions(const Vector& y, double eps = kDefaultRootEps);

/// Positions (0-based within each level) of the ancestors of node
/// (level, position) on the root-to-node path, starting at level 1 (the
/// second level) and ending with `position` itself. Empty for the root.
/// Throws IndexOutOfLevel.
std::vector<std::size_t> path_indices(std::size_t level, std::size_t position, const TemporalHierarchy& h);

/// Ancestor-path fractions for every node.
struct PathProportions {
  /// alpha[node] holds level(node) entries: a of the level-1 ancestor first,
  /// the node's own fraction last. Empty for the root.
  std::vector<Vector> alpha;

  /// (p-1) x n matrix with alpha[node] in column `node`, zero padded.
  Matrix padded() const;
  /// Same shape as padded(); 1 where an entry is real, 0 for padding.
  Matrix mask() const;
};

PathProportions path_proportions(const ProportionVector& a, const TemporalHierarchy& h);

/// Per-level divisor max(max_t max_j |y^[k]_{t,j}|, eps) over a history.
Vector level_scales(std::span<const HierVector> history, const TemporalHierarchy& h, double eps = kDefaultRootEps);

/// Values of the last period in `history` divided by their level's running
/// scale over the whole history. Throws InsufficientHistory when empty.
Vector scaled_values(std::span<const HierVector> history, const TemporalHierarchy& h, double eps = kDefaultRootEps);

/// Fractions of the children of upper node `node`. Throws LeafHasNoChildren.
Vector child_proportion_group(const ProportionVector& a, const TemporalHierarchy& h, std::size_t node);

/// m_k x n_k matrix for level k < p-1: column j holds the children fractions
/// of node (k, j). Throws LeafHasNoChildren on the leaf level.
Matrix child_proportion_groups(const ProportionVector& a, const TemporalHierarchy& h, std::size_t level);

}  // namespace gmpar
