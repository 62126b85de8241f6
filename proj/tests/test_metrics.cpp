#include <doctest.h>

#include <random>
#include <vector>

#include <json.hpp>

#include "gmpar/errors.hpp"
#include "gmpar/metrics.hpp"
#include "support.hpp"

using namespace gmpar;

namespace {

// Independent count of sign agreements between consecutive differences.
double trend_oracle(const std::vector<double>& p, const std::vector<double>& y) {
  int hits = 0;
  for (std::size_t t = 1; t < p.size(); ++t) {
    const double dp = p[t] - p[t - 1];
    const double dy = y[t] - y[t - 1];
    const bool same = (dp > 0 && dy > 0) || (dp < 0 && dy < 0) || (dp == 0 && dy == 0);
    hits += same ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(p.size() - 1);
}

}  // namespace

TEST_CASE("mape examples") {
  std::vector<Vector> truth{Vector::Constant(1, 10.0)};
  std::vector<Vector> pred{Vector::Constant(1, 11.0)};
  CHECK(mape(pred, truth).mape == doctest::Approx(0.1));
  CHECK(mape(truth, truth).mape == 0.0);

  std::vector<Vector> zero_truth{Vector::Zero(2)};
  std::vector<Vector> small{Vector::Constant(2, 1e-9)};
  const auto guarded = mape(small, zero_truth);
  CHECK(guarded.guarded_terms == 2);
  CHECK(guarded.mape == doctest::Approx(0.1));

  std::vector<Vector> two{Vector::Zero(2), Vector::Zero(2)};
  CHECK_THROWS_AS(mape(two, zero_truth), LengthMismatch);
}

TEST_CASE("mape is scale invariant") {
  std::mt19937_64 rng(1);
  std::vector<Vector> p;
  std::vector<Vector> y;
  for (int t = 0; t < 10; ++t) {
    p.push_back(testing::random_vector(rng, 7, 1, 10));
    y.push_back(testing::random_vector(rng, 7, 1, 10));
  }
  const double base = mape(p, y).mape;
  for (double c : {1e-3, 7.0, 1e4}) {
    std::vector<Vector> ps;
    std::vector<Vector> ys;
    for (int t = 0; t < 10; ++t) {
      ps.push_back(c * p[static_cast<std::size_t>(t)]);
      ys.push_back(c * y[static_cast<std::size_t>(t)]);
    }
    CHECK(mape(ps, ys).mape == doctest::Approx(base).epsilon(1e-12));
  }
}

TEST_CASE("trend accuracy examples") {
  const std::vector<double> up{1, 2, 3, 4};
  const std::vector<double> down{4, 3, 2, 1};
  CHECK(trend_accuracy(up, up) == 1.0);
  CHECK(trend_accuracy(up, down) == 0.0);
  // pred moves up, down, up; truth moves up, up, down: one agreement.
  const std::vector<double> p{1, 2, 1, 2};
  const std::vector<double> y{1, 2, 3, 2};
  CHECK(trend_accuracy(p, y) == doctest::Approx(1.0 / 3));
  const std::vector<double> flat{1, 1, 1};
  const std::vector<double> rising{1, 2, 3};
  CHECK(trend_accuracy(flat, flat) == 1.0);
  CHECK(trend_accuracy(flat, rising) == 0.0);
  CHECK_THROWS_AS(trend_accuracy(std::vector<double>{1}, std::vector<double>{1}), TooShort);
  CHECK_THROWS_AS(trend_accuracy(up, rising), LengthMismatch);
}

TEST_CASE("trend accuracy agrees with an enumeration oracle and stays in [0, 1]") {
  std::mt19937_64 rng(2);
  std::uniform_int_distribution<int> d(0, 3);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> p(12);
    std::vector<double> y(12);
    for (auto& v : p) v = d(rng);
    for (auto& v : y) v = d(rng);
    const double acc = trend_accuracy(p, y);
    CHECK(acc == doctest::Approx(trend_oracle(p, y)));
    CHECK(acc >= 0.0);
    CHECK(acc <= 1.0);
  }
}

TEST_CASE("relative change of a fixed adjustment depends on node size") {
  CHECK(relative_change(10000, 10050) == doctest::Approx(0.005));
  CHECK(relative_change(100, 150) == doctest::Approx(0.5));
  CHECK(relative_change(10000, 10001) == doctest::Approx(1e-4));
}

TEST_CASE("evaluate: b-mape is the leaf slice and report serializes") {
  std::mt19937_64 rng(3);
  TemporalHierarchy h({1, 2, 6});
  std::vector<Vector> p;
  std::vector<Vector> y;
  std::vector<Vector> p_leaf;
  std::vector<Vector> y_leaf;
  for (int t = 0; t < 8; ++t) {
    p.push_back(h.aggregate(testing::random_vector(rng, 6, 1, 5)));
    y.push_back(h.aggregate(testing::random_vector(rng, 6, 1, 5)));
    p_leaf.push_back(p.back().tail(6));
    y_leaf.push_back(y.back().tail(6));
  }
  const auto rep = evaluate(p, y, h);
  CHECK(rep.n_windows == 8);
  CHECK(rep.b_mape == rep.per_level_mape[2]);
  CHECK(rep.b_mape == doctest::Approx(mape(p_leaf, y_leaf).mape).epsilon(1e-12));
  CHECK(rep.trend_accuracy >= 0.0);
  CHECK(rep.trend_accuracy <= 1.0);
  CHECK(evaluate(y, y, h).mape == 0.0);
  CHECK(evaluate(y, y, h).trend_accuracy == 1.0);

  const auto j = nlohmann::json::parse(rep.to_json());
  CHECK(j["b_mape"].get<double>() == doctest::Approx(rep.b_mape));
  CHECK(j["per_level_mape"].size() == 3);
  CHECK(rep.to_text().find("b_mape = ") != std::string::npos);
}
