#include "gmpar/hierarchy.hpp"

#include <string>

#include "gmpar/errors.hpp"

namespace gmpar {

TemporalHierarchy::TemporalHierarchy(std::vector<std::size_t> level_sizes)
    : level_sizes_(std::move(level_sizes)) {
  if (level_sizes_.empty()) throw EmptyLevels("hierarchy needs at least one level");
  if (level_sizes_.front() != 1) throw NonDivisibleLevels("the root level must have exactly one node");
  for (std::size_t k = 0; k + 1 < level_sizes_.size(); ++k) {
    const std::size_t a = level_sizes_[k];
    const std::size_t b = level_sizes_[k + 1];
    if (a == 0 || b == 0 || b % a != 0) {
      throw NonDivisibleLevels("level " + std::to_string(k + 2) + " size " + std::to_string(b) +
                               " is not a multiple of " + std::to_string(a));
    }
  }

  offsets_.resize(level_sizes_.size());
  for (std::size_t k = 0; k < level_sizes_.size(); ++k) {
    offsets_[k] = n_;
    n_ += level_sizes_[k];
  }

  const auto n = static_cast<Eigen::Index>(n_);
  const auto m = static_cast<Eigen::Index>(this->m());
  const auto r = static_cast<Eigen::Index>(this->r());

  S_ = Matrix::Zero(n, m);
  for (std::size_t k = 0; k < level_sizes_.size(); ++k) {
    const std::size_t span = leaves_per_node(k);
    for (std::size_t j = 0; j < level_sizes_[k]; ++j) {
      const auto row = static_cast<Eigen::Index>(offsets_[k] + j);
      S_.row(row).segment(static_cast<Eigen::Index>(j * span), static_cast<Eigen::Index>(span)).setOnes();
    }
  }

  A_.resize(r, n);
  A_.leftCols(r).setIdentity();
  A_.rightCols(m) = -S_.topRows(r);
}

std::size_t TemporalHierarchy::children_per_node(std::size_t k) const {
  if (k + 1 >= level_sizes_.size()) return 0;
  return level_sizes_[k + 1] / level_sizes_[k];
}

std::size_t TemporalHierarchy::node_index(std::size_t level, std::size_t position) const {
  if (level >= level_sizes_.size() || position >= level_sizes_[level]) {
    throw OutOfRange("node (" + std::to_string(level) + ", " + std::to_string(position) + ") outside hierarchy");
  }
  return offsets_[level] + position;
}

std::size_t TemporalHierarchy::level_of(std::size_t node) const {
  if (node >= n_) throw OutOfRange("node " + std::to_string(node) + " outside hierarchy");
  std::size_t k = 0;
  while (k + 1 < offsets_.size() && offsets_[k + 1] <= node) ++k;
  return k;
}

std::size_t TemporalHierarchy::parent(std::size_t node) const {
  const std::size_t k = level_of(node);
  if (k == 0) throw OutOfRange("the root has no parent");
  const std::size_t pos = node - offsets_[k];
  return offsets_[k - 1] + pos / children_per_node(k - 1);
}

std::size_t TemporalHierarchy::first_child(std::size_t node) const {
  const std::size_t k = level_of(node);
  const std::size_t mk = children_per_node(k);
  if (mk == 0) throw OutOfRange("leaf nodes have no children");
  return offsets_[k + 1] + (node - offsets_[k]) * mk;
}

Vector TemporalHierarchy::aggregate(const Vector& bottom) const {
  if (static_cast<std::size_t>(bottom.size()) != m()) {
    throw DimensionMismatch("bottom vector has " + std::to_string(bottom.size()) + " entries, expected " +
                            std::to_string(m()));
  }
  return S_ * bottom;
}

TemporalHierarchy hierarchy_preset(std::string_view name) {
  if (name == "traffic") return TemporalHierarchy({1, 3, 24});
  if (name == "electricity") return TemporalHierarchy({1, 4, 24});
  if (name == "exchange") return TemporalHierarchy({1, 5});
  if (name == "alipay") return TemporalHierarchy({1, 7, 168});
  throw ConfigError("unknown hierarchy preset '" + std::string(name) + "'");
}

HierVector aggregate_base(std::span<const double> base, const TemporalHierarchy& h, std::size_t tau) {
  const std::size_t m = h.m();
  if ((tau + 1) * m > base.size()) {
    throw OutOfRange("period " + std::to_string(tau) + " needs " + std::to_string((tau + 1) * m) +
                     " base samples, series has " + std::to_string(base.size()));
  }
  Vector bottom(static_cast<Eigen::Index>(m));
  for (std::size_t i = 0; i < m; ++i) bottom[static_cast<Eigen::Index>(i)] = base[tau * m + i];
  return HierVector{h.aggregate(bottom), tau};
}

CoherenceCheck check_coherence(const Vector& y, const TemporalHierarchy& h, double tol) {
  if (static_cast<std::size_t>(y.size()) != h.n()) {
    throw DimensionMismatch("vector length " + std::to_string(y.size()) + " does not match n = " +
                            std::to_string(h.n()));
  }
  CoherenceCheck out;
  if (h.r() > 0) out.residual = (h.A() * y).cwiseAbs().maxCoeff();
  const double scale = y.size() > 0 ? y.cwiseAbs().maxCoeff() : 0.0;
  out.coherent = out.residual <= tol * (1.0 + scale);
  return out;
}

}  // namespace gmpar
