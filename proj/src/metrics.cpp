#include "gmpar/metrics.hpp"

#include <cmath>
#include <sstream>
#include <vector>

#include <json.hpp>

#include "gmpar/errors.hpp"

namespace gmpar {

namespace {

void check_aligned(std::span<const Vector> pred, std::span<const Vector> truth) {
  if (pred.size() != truth.size()) {
    throw LengthMismatch(std::to_string(pred.size()) + " predictions vs " + std::to_string(truth.size()) + " targets");
  }
  for (std::size_t t = 0; t < pred.size(); ++t) {
    if (pred[t].size() != truth[t].size()) throw LengthMismatch("window " + std::to_string(t) + " sizes differ");
  }
}

int sign(double x) { return (x > 0) - (x < 0); }

}  // namespace

MapeResult mape(std::span<const Vector> pred, std::span<const Vector> truth, double eps) {
  check_aligned(pred, truth);
  MapeResult out;
  if (pred.empty()) return out;
  const Eigen::Index n = pred.front().size();
  out.per_node = Vector::Zero(n);
  for (std::size_t t = 0; t < pred.size(); ++t) {
    if (pred[t].size() != n) throw LengthMismatch("windows have different node counts");
    for (Eigen::Index i = 0; i < n; ++i) {
      const double den = std::abs(truth[t][i]);
      if (den < eps) ++out.guarded_terms;
      out.per_node[i] += std::abs(pred[t][i] - truth[t][i]) / std::max(den, eps);
    }
  }
  out.per_node /= static_cast<double>(pred.size());
  out.mape = n > 0 ? out.per_node.mean() : 0.0;
  return out;
}

double trend_accuracy(std::span<const double> pred, std::span<const double> truth) {
  if (pred.size() != truth.size()) throw LengthMismatch("trend series lengths differ");
  if (pred.size() < 2) throw TooShort("trend accuracy needs at least two points");
  std::size_t hits = 0;
  for (std::size_t t = 1; t < pred.size(); ++t) {
    hits += sign(pred[t] - pred[t - 1]) == sign(truth[t] - truth[t - 1]);
  }
  return static_cast<double>(hits) / static_cast<double>(pred.size() - 1);
}

double relative_change(double before, double after) { return std::abs(after - before) / std::abs(before); }

EvalReport evaluate(std::span<const Vector> pred, std::span<const Vector> truth, const TemporalHierarchy& h,
                    std::optional<std::size_t> trend_level, double eps) {
  check_aligned(pred, truth);
  for (const auto& v : pred) {
    if (v.size() != static_cast<Eigen::Index>(h.n())) throw LengthMismatch("prediction does not match the hierarchy");
  }
  EvalReport rep;
  rep.n_windows = pred.size();
  const auto m = mape(pred, truth, eps);
  rep.mape = m.mape;
  rep.guarded_terms = m.guarded_terms;
  rep.per_level_mape = Vector::Zero(static_cast<Eigen::Index>(h.num_levels()));
  if (!pred.empty()) {
    for (std::size_t k = 0; k < h.num_levels(); ++k) {
      rep.per_level_mape[static_cast<Eigen::Index>(k)] =
          m.per_node.segment(static_cast<Eigen::Index>(h.level_offset(k)), static_cast<Eigen::Index>(h.level_size(k)))
              .mean();
    }
    double sq = 0.0;
    for (std::size_t t = 0; t < pred.size(); ++t) sq += (pred[t] - truth[t]).squaredNorm();
    rep.mse = sq / static_cast<double>(pred.size() * h.n());
  }
  rep.b_mape = rep.per_level_mape.size() ? rep.per_level_mape[rep.per_level_mape.size() - 1] : 0.0;

  const std::size_t level = trend_level.value_or(h.num_levels() - 1);
  if (level >= h.num_levels()) throw OutOfRange("trend level outside hierarchy");
  std::vector<double> p;
  std::vector<double> y;
  for (std::size_t t = 0; t < pred.size(); ++t) {
    for (std::size_t j = 0; j < h.level_size(level); ++j) {
      const auto i = static_cast<Eigen::Index>(h.node_index(level, j));
      p.push_back(pred[t][i]);
      y.push_back(truth[t][i]);
    }
  }
  rep.trend_accuracy = p.size() >= 2 ? trend_accuracy(p, y) : 0.0;
  return rep;
}

std::string EvalReport::to_text() const {
  std::ostringstream os;
  os.precision(10);
  os << "mape = " << mape << "\n"
     << "b_mape = " << b_mape << "\n"
     << "mse = " << mse << "\n";
  for (Eigen::Index k = 0; k < per_level_mape.size(); ++k) {
    os << "level" << (k + 1) << "_mape = " << per_level_mape[k] << "\n";
  }
  os << "trend_accuracy = " << trend_accuracy << "\n"
     << "n_windows = " << n_windows << "\n"
     << "guarded_terms = " << guarded_terms << "\n";
  return os.str();
}

std::string EvalReport::to_json() const {
  nlohmann::json j;
  j["mape"] = mape;
  j["b_mape"] = b_mape;
  j["mse"] = mse;
  j["per_level_mape"] = std::vector<double>(per_level_mape.data(), per_level_mape.data() + per_level_mape.size());
  j["trend_accuracy"] = trend_accuracy;
  j["n_windows"] = n_windows;
  j["guarded_terms"] = guarded_terms;
  return j.dump(2);
}

}  // namespace gmpar
