#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>

#include "gmpar/hierarchy.hpp"

namespace gmpar {

inline constexpr double kDefaultDenominatorEps = 1e-8;

struct MapeResult {
  double mape = 0.0;
  /// Mean over windows for each node.
  Vector per_node;
  /// Terms whose |truth| fell below eps and used eps as the denominator.
  std::size_t guarded_terms = 0;
};

/// mean_t mean_i |pred - truth| / max(|truth|, eps). Throws LengthMismatch.
MapeResult mape(std::span<const Vector> pred, std::span<const Vector> truth, double eps = kDefaultDenominatorEps);

/// Fraction of consecutive steps where the predicted and true moves agree in
/// sign; a flat step only matches a flat step. Throws TooShort below two
/// points, LengthMismatch on unequal lengths.
double trend_accuracy(std::span<const double> pred, std::span<const double> truth);

/// |after - before| / |before|.
double relative_change(double before, double after);

struct EvalReport {
  double mape = 0.0;
  double b_mape = 0.0;
  double mse = 0.0;
  Vector per_level_mape;
  double trend_accuracy = 0.0;
  std::size_t n_windows = 0;
  std::size_t guarded_terms = 0;

  /// "key = value" lines.
  std::string to_text() const;
  std::string to_json() const;
};

/// Full report over aligned windows. Trend accuracy runs on the
/// concatenated series of `trend_level` (default: the leaf level).
EvalReport evaluate(std::span<const Vector> pred, std::span<const Vector> truth, const TemporalHierarchy& h,
                    std::optional<std::size_t> trend_level = std::nullopt, double eps = kDefaultDenominatorEps);

}  // namespace gmpar
