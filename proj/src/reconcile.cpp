#include "gmpar/reconcile.hpp"

#include <cmath>
#include <string>

#include "gmpar/errors.hpp"

namespace gmpar {

namespace {

void check_weights(const Vector& w, std::size_t n) {
  if (static_cast<std::size_t>(w.size()) != n) {
    throw DimensionMismatch("weight vector has " + std::to_string(w.size()) + " entries, expected " +
                            std::to_string(n));
  }
  for (Eigen::Index i = 0; i < w.size(); ++i) {
    if (!(w[i] > 0.0) || !std::isfinite(w[i])) {
      throw InvalidWeights("weight " + std::to_string(i) + " is " + std::to_string(w[i]) + "; weights must be > 0");
    }
  }
}

Eigen::LLT<Matrix> factor_schur(const Matrix& C, const Vector& inv_wtilde) {
  const Matrix K = C * inv_wtilde.asDiagonal() * C.transpose();
  Eigen::LLT<Matrix> llt(K);
  const double scale = K.diagonal().cwiseAbs().maxCoeff();
  const Matrix L = llt.matrixL();
  if (llt.info() != Eigen::Success || L.diagonal().cwiseAbs2().minCoeff() <= 1e-14 * scale) {
    throw SingularSystem("C W^-1 C^T is not positive definite");
  }
  return llt;
}

// Uniform double in [0, 1) from the top 53 bits; identical on every platform.
double unit_uniform(std::uint64_t& state) {
  // splitmix64
  std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  z ^= z >> 31;
  return static_cast<double>(z >> 11) * 0x1.0p-53;
}

}  // namespace

std::string_view to_string(WeightMode mode) {
  switch (mode) {
    case WeightMode::Neural: return "neural";
    case WeightMode::Uniform: return "uniform";
    case WeightMode::RootDouble: return "root-double";
    case WeightMode::MiddleDouble: return "middle-double";
    case WeightMode::LeafDouble: return "leaf-double";
    case WeightMode::Random: return "random";
    case WeightMode::PastValue: return "past-value";
  }
  return "unknown";
}

WeightMode parse_weight_mode(std::string_view name) {
  for (auto mode : {WeightMode::Neural, WeightMode::Uniform, WeightMode::RootDouble, WeightMode::MiddleDouble,
                    WeightMode::LeafDouble, WeightMode::Random, WeightMode::PastValue}) {
    if (name == to_string(mode)) return mode;
  }
  if (name == "c1" || name == "C1") return WeightMode::RootDouble;
  if (name == "c2" || name == "C2") return WeightMode::MiddleDouble;
  if (name == "c3" || name == "C3") return WeightMode::LeafDouble;
  if (name == "c4" || name == "C4") return WeightMode::Random;
  if (name == "c5" || name == "C5") return WeightMode::PastValue;
  throw ConfigError("unknown weight mode '" + std::string(name) + "'");
}

Vector bottom_up(const Vector& yhat, const TemporalHierarchy& h) {
  if (static_cast<std::size_t>(yhat.size()) != h.n()) throw DimensionMismatch("forecast length does not match n");
  return h.S() * yhat.tail(static_cast<Eigen::Index>(h.m()));
}

Vector project_affine(const Vector& yhat, const Vector& wtilde, const Matrix& C, const Vector& c) {
  if (C.cols() != yhat.size() || wtilde.size() != yhat.size() || c.size() != C.rows()) {
    throw DimensionMismatch("project_affine: inconsistent shapes");
  }
  if (C.rows() == 0) return yhat;
  const Vector inv = wtilde.cwiseInverse();
  const auto llt = factor_schur(C, inv);
  const Vector lambda = llt.solve(C * yhat - c);
  return yhat - inv.cwiseProduct(C.transpose() * lambda);
}

Vector adaptive_reconcile(const Vector& yhat, const TemporalHierarchy& h, const Vector& w) {
  if (static_cast<std::size_t>(yhat.size()) != h.n()) throw DimensionMismatch("forecast length does not match n");
  check_weights(w, h.n());
  return project_affine(yhat, w.cwiseAbs2(), h.A(), Vector::Zero(static_cast<Eigen::Index>(h.r())));
}

Vector projection_reconcile(const Vector& yhat, const TemporalHierarchy& h) {
  return adaptive_reconcile(yhat, h, Vector::Ones(static_cast<Eigen::Index>(h.n())));
}

Matrix reconciliation_matrix(const TemporalHierarchy& h, const Vector& w) {
  check_weights(w, h.n());
  const auto n = static_cast<Eigen::Index>(h.n());
  if (h.r() == 0) return Matrix::Identity(n, n);
  const Vector inv = w.cwiseAbs2().cwiseInverse();
  const auto llt = factor_schur(h.A(), inv);
  return Matrix::Identity(n, n) - inv.asDiagonal() * h.A().transpose() * llt.solve(h.A());
}

ReconciliationWeights make_fixed_weights(WeightMode mode, const TemporalHierarchy& h,
                                         std::span<const HierVector> history, std::uint64_t seed) {
  const auto n = static_cast<Eigen::Index>(h.n());
  ReconciliationWeights out{Vector::Ones(n), mode};
  const auto double_level = [&](std::size_t k) {
    out.w.segment(static_cast<Eigen::Index>(h.level_offset(k)), static_cast<Eigen::Index>(h.level_size(k)))
        .setConstant(2.0);
  };
  switch (mode) {
    case WeightMode::Uniform:
      break;
    case WeightMode::RootDouble:
      double_level(0);
      break;
    case WeightMode::MiddleDouble:
      for (std::size_t k = 1; k + 1 < h.num_levels(); ++k) double_level(k);
      break;
    case WeightMode::LeafDouble:
      double_level(h.num_levels() - 1);
      break;
    case WeightMode::Random: {
      std::uint64_t state = seed;
      for (Eigen::Index i = 0; i < n; ++i) out.w[i] = 0.5 + 1.5 * unit_uniform(state);
      break;
    }
    case WeightMode::PastValue: {
      if (history.empty()) throw MissingHistory("past-value weights need a history");
      Vector sum = Vector::Zero(n);
      Vector sq = Vector::Zero(n);
      for (const auto& y : history) {
        if (y.size() != h.n()) throw DimensionMismatch("history entry does not match the hierarchy");
        sum += y.values;
        sq += y.values.cwiseAbs2();
      }
      const double count = static_cast<double>(history.size());
      for (Eigen::Index i = 0; i < n; ++i) {
        const double mu = sum[i] / count;
        const double var = std::max(0.0, sq[i] / count - mu * mu);
        const double w = std::abs(mu) / (std::sqrt(var) + 1e-8);
        out.w[i] = (w > 0.0 && std::isfinite(w)) ? w : 1.0;
      }
      break;
    }
    case WeightMode::Neural:
      throw ConfigError("neural weights come from a trained model, not a fixed rule");
  }
  return out;
}

ad::Tensor reconcile_tensor(const ad::Tensor& yhat, const ad::Tensor& w, const TemporalHierarchy& h) {
  const auto n = static_cast<Eigen::Index>(h.n());
  if (yhat.rows() != n || w.rows() != n || yhat.cols() != w.cols()) {
    throw ShapeMismatch("reconcile_tensor: yhat and w must both be n x B");
  }
  const Matrix& Y = yhat.value();
  const Matrix& W = w.value();
  if ((W.array() <= 0.0).any()) throw InvalidWeights("reconcile_tensor: weights must be > 0");
  if (h.r() == 0) {
    return yhat.tape()->record(Y, {yhat, w}, [yhat](ad::Tape& t, const Matrix& g) { t.accumulate(yhat, g); });
  }

  const Matrix& A = h.A();
  const Eigen::Index batch = Y.cols();
  Matrix out(n, batch);
  // A^T lambda per column, reused by the backward pass.
  Matrix correction(n, batch);
  std::vector<Eigen::LLT<Matrix>> factors;
  factors.reserve(static_cast<std::size_t>(batch));
  for (Eigen::Index b = 0; b < batch; ++b) {
    const Vector inv = W.col(b).cwiseAbs2().cwiseInverse();
    factors.push_back(factor_schur(A, inv));
    const Vector lambda = factors.back().solve(A * Y.col(b));
    correction.col(b) = A.transpose() * lambda;
    out.col(b) = Y.col(b) - inv.cwiseProduct(correction.col(b));
  }

  return yhat.tape()->record(
      std::move(out), {yhat, w},
      [yhat, w, A, factors = std::move(factors), correction](ad::Tape& t, const Matrix& g) {
        const Matrix& W = w.value();
        Matrix gy(g.rows(), g.cols());
        Matrix gw(g.rows(), g.cols());
        for (Eigen::Index b = 0; b < g.cols(); ++b) {
          const Vector inv = W.col(b).cwiseAbs2().cwiseInverse();
          const Vector u = factors[static_cast<std::size_t>(b)].solve(-(A * inv.cwiseProduct(g.col(b))));
          const Vector total = g.col(b) + A.transpose() * u;
          gy.col(b) = total;
          // d/ds_i with s = 1/w^2, then chain through ds/dw = -2/w^3.
          const Vector gs = -correction.col(b).cwiseProduct(total);
          gw.col(b) = gs.cwiseProduct((-2.0 * inv).cwiseQuotient(W.col(b)));
        }
        t.accumulate(yhat, gy);
        t.accumulate(w, gw);
      });
}

}  // namespace gmpar
