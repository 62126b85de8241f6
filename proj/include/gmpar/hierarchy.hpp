#pragma once

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace gmpar {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// A p-level temporal hierarchy over one series.
///
/// Level sizes n_1 = 1 < n_2 < ... < n_p with n_k | n_{k+1}. Nodes are
/// flattened level-major, position-minor: the root is node 0, level k
/// occupies [level_offset(k), level_offset(k) + n_k). Levels and positions
/// are 0-based in this API.
///
/// Immutable after construction.
class TemporalHierarchy {
 public:
  /// Throws EmptyLevels or NonDivisibleLevels.
  explicit TemporalHierarchy(std::vector<std::size_t> level_sizes);

  std::size_t num_levels() const noexcept { return level_sizes_.size(); }
  std::size_t level_size(std::size_t k) const { return level_sizes_.at(k); }
  const std::vector<std::size_t>& level_sizes() const noexcept { return level_sizes_; }

  /// Number of children of every node at level k (m_k = n_{k+1} / n_k).
  /// Zero for the leaf level.
  std::size_t children_per_node(std::size_t k) const;

  /// Number of leaves covered by a node at level k.
  std::size_t leaves_per_node(std::size_t k) const { return m() / level_sizes_.at(k); }

  std::size_t m() const noexcept { return level_sizes_.back(); }
  std::size_t r() const noexcept { return n_ - m(); }
  std::size_t n() const noexcept { return n_; }

  std::size_t level_offset(std::size_t k) const { return offsets_.at(k); }
  std::size_t node_index(std::size_t level, std::size_t position) const;
  std::size_t level_of(std::size_t node) const;
  std::size_t position_of(std::size_t node) const { return node - offsets_[level_of(node)]; }

  /// Parent node index; the root has none (throws OutOfRange).
  std::size_t parent(std::size_t node) const;
  /// Flat index of the first child; children are contiguous.
  std::size_t first_child(std::size_t node) const;

  /// n x m aggregation matrix; the bottom block is the identity.
  const Matrix& S() const noexcept { return S_; }
  /// r x n constraint matrix (I_r | -S_sum). A * S == 0.
  const Matrix& A() const noexcept { return A_; }

  /// S * bottom.
  Vector aggregate(const Vector& bottom) const;

 private:
  std::vector<std::size_t> level_sizes_;
  std::vector<std::size_t> offsets_;
  std::size_t n_ = 0;
  Matrix S_;
  Matrix A_;
};

/// Hierarchy preset by name: traffic {1,3,24}, electricity {1,4,24},
/// exchange {1,5}, alipay {1,7,168}. Throws ConfigError for unknown names.
TemporalHierarchy hierarchy_preset(std::string_view name);

/// Observation (or forecast) of every node for one root period.
struct HierVector {
  Vector values;
  std::size_t tau = 0;  ///< 0-based root period index

  std::size_t size() const noexcept { return static_cast<std::size_t>(values.size()); }
  double operator[](std::size_t i) const { return values[static_cast<Eigen::Index>(i)]; }
};

/// Builds y_tau from base samples [tau*m, (tau+1)*m). Throws OutOfRange.
HierVector aggregate_base(std::span<const double> base, const TemporalHierarchy& h, std::size_t tau);

struct CoherenceCheck {
  double residual = 0.0;  ///< max |A y|
  bool coherent = false;  ///< residual <= tol * (1 + max |y|)
};

CoherenceCheck check_coherence(const Vector& y, const TemporalHierarchy& h, double tol = 1e-8);

}  // namespace gmpar
