#include <doctest.h>

#include <cmath>
#include <random>

#include "gmpar/errors.hpp"
#include "gmpar/reconcile.hpp"
#include "gmpar/taskopt.hpp"
#include "support.hpp"

using namespace gmpar;

namespace {

Vector vec(std::initializer_list<double> xs) {
  Vector v(static_cast<Eigen::Index>(xs.size()));
  Eigen::Index i = 0;
  for (double x : xs) v[i++] = x;
  return v;
}

// Feasible points for the root-pin + band problem on a two-level hierarchy:
// leaves drawn inside their band boxes, shifted equally to hit the pinned
// root, rejected if the shift pushed any leaf out of its band.
double best_sampled_objective(const Vector& yhat, const TemporalHierarchy& h, const TaskSpec& spec, double band,
                              std::mt19937_64& rng, int samples) {
  const auto m = static_cast<Eigen::Index>(h.m());
  const Eigen::Index off = static_cast<Eigen::Index>(h.n()) - m;
  double best = std::numeric_limits<double>::infinity();
  int accepted = 0;
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int s = 0; s < samples; ++s) {
    Vector leaves(m);
    for (Eigen::Index i = 0; i < m; ++i) leaves[i] = yhat[off + i] * (1.0 + band * u(rng));
    leaves.array() += (yhat[0] - leaves.sum()) / static_cast<double>(m);
    bool ok = true;
    for (Eigen::Index i = 0; i < m; ++i) {
      if (std::abs(leaves[i] - yhat[off + i]) > band * yhat[off + i]) ok = false;
    }
    if (!ok) continue;
    ++accepted;
    best = std::min(best, evaluate_objective(yhat, h.aggregate(leaves), spec));
  }
  REQUIRE(accepted > 0);
  return best;
}

}  // namespace

TEST_CASE("objective examples") {
  const Vector yhat = vec({3, 1, 2});
  TaskSpec spec;
  CHECK(evaluate_objective(yhat, yhat, spec) == doctest::Approx(0.0));
  CHECK(evaluate_objective(yhat, 2 * yhat, spec) == doctest::Approx(yhat.norm()));
  spec.beta = 1.0;
  CHECK(evaluate_objective(yhat, -yhat, spec) == doctest::Approx((2 * yhat).norm() + 2.0));
  CHECK(evaluate_objective(yhat, Vector::Zero(3), spec) == doctest::Approx(yhat.norm() + 1.0));
  spec.norm = ObjectiveNorm::L1;
  spec.beta = 0.0;
  CHECK(evaluate_objective(yhat, Vector::Zero(3), spec) == doctest::Approx(6.0));
}

TEST_CASE("alipay spec construction") {
  const auto spec = alipay_spec(0.5, 7);
  CHECK(spec.n_eq() == 1);
  CHECK(spec.n_ineq() == 7);
  CHECK(spec.beta == 0.5);
  CHECK(spec.norm == ObjectiveNorm::L2);
  CHECK_THROWS_AS(alipay_spec(-1.0, 3), ConfigError);
}

TEST_CASE("alipay hand instance and its infeasible neighbour") {
  const TemporalHierarchy h({1, 2});
  const auto spec = alipay_spec(0.0, 3);
  const auto res = solve_task(vec({10, 6, 5}), h, spec);
  CHECK(res.status == TaskStatus::Converged);
  CHECK(std::abs(res.y[0] - 10.0) < 1e-9);
  CHECK(std::abs(res.y[1] - 5.5) < 1e-9);
  CHECK(std::abs(res.y[2] - 4.5) < 1e-9);
  CHECK(res.report().find("status = converged") != std::string::npos);

  CHECK_FALSE(interval_feasible(vec({10, 9, 5}), h, spec));
  CHECK_THROWS_AS(solve_task(vec({10, 9, 5}), h, spec), Infeasible);
}

TEST_CASE("feasible forecast is returned unchanged") {
  const TemporalHierarchy h({1, 3});
  const Vector yhat = vec({6, 1, 2, 3});
  for (double beta : {0.0, 1.0, 1e6}) {
    const auto res = solve_task(yhat, h, alipay_spec(beta, 4));
    CHECK((res.y - yhat).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(res.objective == doctest::Approx(0.0));
  }
}

TEST_CASE("beta = 0 without task constraints reduces to projection") {
  std::mt19937_64 rng(41);
  for (int trial = 0; trial < 100; ++trial) {
    const TemporalHierarchy h(testing::random_level_sizes(rng, 30));
    const Vector yhat = testing::random_vector(rng, static_cast<Eigen::Index>(h.n()), -5, 20);
    const auto res = solve_task(yhat, h, TaskSpec{});
    CHECK((res.y - projection_reconcile(yhat, h)).cwiseAbs().maxCoeff() < 1e-6);
    CHECK(res.coherence_violation <= 1e-8);
  }
}

TEST_CASE("solutions are feasible and beat a random feasible sample") {
  std::mt19937_64 rng(77);
  int tested = 0;
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t m = 2 + rng() % 4;
    const TemporalHierarchy h({1, m});
    const auto n = static_cast<Eigen::Index>(h.n());
    Vector yhat = testing::random_vector(rng, n, 1, 10);
    yhat[0] = yhat.tail(n - 1).sum() * (1.0 + testing::random_vector(rng, 1, -0.15, 0.15)[0]);
    const double beta = trial % 3 == 0 ? 0.0 : testing::random_vector(rng, 1, 0.1, 20)[0];
    TaskSpec spec = alipay_spec(beta, h.n());
    if (trial % 4 == 3) spec.norm = ObjectiveNorm::L1;
    if (!interval_feasible(yhat, h, spec)) continue;
    ++tested;
    const auto res = solve_task(yhat, h, spec);
    CHECK(res.coherence_violation <= spec.tol_eq);
    CHECK(res.eq_violation <= spec.tol_eq);
    CHECK(res.ineq_violation <= spec.tol_ineq);
    INFO(trial, " ", res.report());
    CHECK(res.status == TaskStatus::Converged);
    const double sampled = best_sampled_objective(yhat, h, spec, 0.2, rng, 20000);
    CHECK(res.objective <= sampled + 1e-4);
  }
  CHECK(tested > 15);
}

TEST_CASE("general affine constraints") {
  // Leaf 1 must stay at least 1 above leaf 2 and the root may not exceed 9.
  const TemporalHierarchy h({1, 2});
  TaskSpec spec;
  AffineConstraint gap;
  gap.y_coef = vec({0, -1, 1});
  gap.constant = 1.0;
  AffineConstraint cap;
  cap.y_coef = vec({1, 0, 0});
  cap.constant = -9.0;
  spec.inequalities = {gap, cap};
  const auto res = solve_task(vec({10, 5, 5}), h, spec);
  CHECK(res.ineq_violation <= 1e-8);
  CHECK(res.y[0] <= 9.0 + 1e-8);
  CHECK(res.y[1] - res.y[2] >= 1.0 - 1e-8);
  CHECK(res.coherence_violation <= 1e-8);
  // Closed form: y = (9, 5, 4).
  CHECK((res.y - vec({9, 5, 4})).cwiseAbs().maxCoeff() < 1e-8);

  // Contradictory coupled inequalities escape the interval check but not the solver.
  AffineConstraint low;
  low.y_coef = vec({0, 1, 1});
  low.constant = -20.0;  // y1 + y2 <= 20
  AffineConstraint high;
  high.y_coef = vec({-1, 0, 0});
  high.constant = 25.0;  // y0 >= 25
  spec.inequalities = {low, high};
  CHECK(interval_feasible(vec({10, 5, 5}), h, spec));
  CHECK_THROWS_AS(solve_task(vec({10, 5, 5}), h, spec), Infeasible);
}

TEST_CASE("shrinking the band flips to infeasible exactly once") {
  const TemporalHierarchy h({1, 4});
  const Vector yhat = vec({20, 4, 5, 6, 3});  // children sum to 18
  bool seen_infeasible = false;
  for (int step = 0; step <= 40; ++step) {
    const double band = 0.2 * (1.0 - step / 40.0);
    bool infeasible = false;
    try {
      solve_task(yhat, h, alipay_spec(0.0, h.n(), band));
    } catch (const Infeasible&) {
      infeasible = true;
    }
    if (seen_infeasible) CHECK(infeasible);
    seen_infeasible = seen_infeasible || infeasible;
  }
  CHECK(seen_infeasible);
}

TEST_CASE("bad inputs") {
  const TemporalHierarchy h({1, 2});
  CHECK_THROWS_AS(solve_task(vec({1, 2}), h, TaskSpec{}), DimensionMismatch);
  TaskSpec spec;
  spec.bands.push_back({5, 0.2});
  CHECK_THROWS_AS(solve_task(vec({1, 2, 3}), h, spec), DimensionMismatch);
}
