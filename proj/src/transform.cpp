#include "gmpar/transform.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "gmpar/errors.hpp"

namespace gmpar {

ProportionVector proportions(const Vector& y, double eps) {
  ProportionVector out;
  if (y.size() == 0) return out;
  const double root = std::abs(y[0]);
  out.degenerate = root < eps;
  out.a = y / std::max(root, eps);
  return out;
}

std::vector<std::size_t> path_indices(std::size_t level, std::size_t position, const TemporalHierarchy& h) {
  if (level >= h.num_levels() || position >= h.level_size(level)) {
    throw IndexOutOfLevel("position " + std::to_string(position) + " is not on level " + std::to_string(level));
  }
  std::vector<std::size_t> path(level);
  if (level == 0) return path;
  // 1-based: l_i = ceil(l_{i+1} / (n_{i+1} / n_i)).
  std::size_t l = position + 1;
  for (std::size_t k = level; k >= 1; --k) {
    path[k - 1] = l - 1;
    const std::size_t mk = h.children_per_node(k - 1);
    l = (l + mk - 1) / mk;
  }
  return path;
}

PathProportions path_proportions(const ProportionVector& a, const TemporalHierarchy& h) {
  PathProportions out;
  out.alpha.resize(h.n());
  for (std::size_t k = 0; k < h.num_levels(); ++k) {
    for (std::size_t j = 0; j < h.level_size(k); ++j) {
      const auto path = path_indices(k, j, h);
      Vector alpha(static_cast<Eigen::Index>(path.size()));
      for (std::size_t i = 0; i < path.size(); ++i) {
        alpha[static_cast<Eigen::Index>(i)] = a.a[static_cast<Eigen::Index>(h.node_index(i + 1, path[i]))];
      }
      out.alpha[h.node_index(k, j)] = std::move(alpha);
    }
  }
  return out;
}

Matrix PathProportions::padded() const {
  Eigen::Index depth = 0;
  for (const auto& v : alpha) depth = std::max(depth, v.size());
  Matrix out = Matrix::Zero(depth, static_cast<Eigen::Index>(alpha.size()));
  for (std::size_t i = 0; i < alpha.size(); ++i) {
    out.col(static_cast<Eigen::Index>(i)).head(alpha[i].size()) = alpha[i];
  }
  return out;
}

Matrix PathProportions::mask() const {
  Eigen::Index depth = 0;
  for (const auto& v : alpha) depth = std::max(depth, v.size());
  Matrix out = Matrix::Zero(depth, static_cast<Eigen::Index>(alpha.size()));
  for (std::size_t i = 0; i < alpha.size(); ++i) {
    out.col(static_cast<Eigen::Index>(i)).head(alpha[i].size()).setOnes();
  }
  return out;
}

Vector level_scales(std::span<const HierVector> history, const TemporalHierarchy& h, double eps) {
  Vector scale = Vector::Constant(static_cast<Eigen::Index>(h.num_levels()), eps);
  for (const auto& y : history) {
    if (y.size() != h.n()) throw DimensionMismatch("history entry does not match the hierarchy");
    for (std::size_t k = 0; k < h.num_levels(); ++k) {
      const double level_max = y.values
                                    .segment(static_cast<Eigen::Index>(h.level_offset(k)),
                                             static_cast<Eigen::Index>(h.level_size(k)))
                                    .cwiseAbs()
                                    .maxCoeff();
      auto& s = scale[static_cast<Eigen::Index>(k)];
      s = std::max(s, level_max);
    }
  }
  return scale;
}

Vector scaled_values(std::span<const HierVector> history, const TemporalHierarchy& h, double eps) {
  if (history.empty()) throw InsufficientHistory("scaled values need at least one observation");
  const Vector scale = level_scales(history, h, eps);
  Vector out = history.back().values;
  for (std::size_t k = 0; k < h.num_levels(); ++k) {
    out.segment(static_cast<Eigen::Index>(h.level_offset(k)), static_cast<Eigen::Index>(h.level_size(k))) /=
        scale[static_cast<Eigen::Index>(k)];
  }
  return out;
}

Vector child_proportion_group(const ProportionVector& a, const TemporalHierarchy& h, std::size_t node) {
  const std::size_t k = h.level_of(node);
  const std::size_t mk = h.children_per_node(k);
  if (mk == 0) throw LeafHasNoChildren("node " + std::to_string(node) + " is a leaf");
  return a.a.segment(static_cast<Eigen::Index>(h.first_child(node)), static_cast<Eigen::Index>(mk));
}

Matrix child_proportion_groups(const ProportionVector& a, const TemporalHierarchy& h, std::size_t level) {
  if (level >= h.num_levels()) throw IndexOutOfLevel("level " + std::to_string(level) + " outside hierarchy");
  const std::size_t mk = h.children_per_node(level);
  if (mk == 0) throw LeafHasNoChildren("the leaf level has no children");
  const auto children = a.a.segment(static_cast<Eigen::Index>(h.level_offset(level + 1)),
                                    static_cast<Eigen::Index>(h.level_size(level + 1)));
  return children.reshaped(static_cast<Eigen::Index>(mk), static_cast<Eigen::Index>(h.level_size(level)));
}

}  // namespace gmpar
