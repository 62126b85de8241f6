// Test-only helpers: random generators and reference solvers that share no
// code with the library paths they check.
#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "gmpar/hierarchy.hpp"

namespace gmpar::testing {

inline std::vector<std::size_t> random_level_sizes(std::mt19937_64& rng, std::size_t max_nodes, std::size_t max_levels = 4) {
  std::uniform_int_distribution<std::size_t> depth(1, max_levels);
  std::uniform_int_distribution<std::size_t> fan(2, 5);
  std::vector<std::size_t> sizes{1};
  std::size_t total = 1;
  const std::size_t p = depth(rng);
  while (sizes.size() < p) {
    const std::size_t next = sizes.back() * fan(rng);
    if (total + next > max_nodes) break;
    sizes.push_back(next);
    total += next;
  }
  return sizes;
}

inline Vector random_vector(std::mt19937_64& rng, Eigen::Index n, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  Vector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = u(rng);
  return v;
}

/// Brute-force equality-constrained QP: assembles the full (n + r) KKT
/// matrix [[D, C^T], [C, 0]] and solves it with a full-pivot LU.
inline Vector kkt_qp_solve(const Vector& yhat, const Vector& d, const Matrix& C, const Vector& c) {
  const Eigen::Index n = yhat.size();
  const Eigen::Index r = C.rows();
  Matrix K = Matrix::Zero(n + r, n + r);
  K.topLeftCorner(n, n) = d.asDiagonal();
  K.topRightCorner(n, r) = C.transpose();
  K.bottomLeftCorner(r, n) = C;
  Vector rhs(n + r);
  rhs.head(n) = d.cwiseProduct(yhat);
  rhs.tail(r) = c;
  return Eigen::FullPivLU<Matrix>(K).solve(rhs).head(n);
}

/// Central finite-difference gradient of f at x.
inline Matrix finite_difference(const std::function<double(const Matrix&)>& f, const Matrix& x, double step = 1e-5) {
  Matrix g(x.rows(), x.cols());
  Matrix probe = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double orig = probe.data()[i];
    probe.data()[i] = orig + step;
    const double up = f(probe);
    probe.data()[i] = orig - step;
    const double down = f(probe);
    probe.data()[i] = orig;
    g.data()[i] = (up - down) / (2.0 * step);
  }
  return g;
}

/// max |a - b| / max(1e-6, |b|)-style relative error used by gradient checks.
inline double relative_error(const Matrix& analytic, const Matrix& numeric) {
  const double scale = std::max({1e-6, analytic.cwiseAbs().maxCoeff(), numeric.cwiseAbs().maxCoeff()});
  return (analytic - numeric).cwiseAbs().maxCoeff() / scale;
}

}  // namespace gmpar::testing
