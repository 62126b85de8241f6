// Acceptance checks, one PASS/FAIL line per criterion. Exit status is the
// number of failed criteria.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>

#include "gmpar/errors.hpp"
#include "gmpar/gmp.hpp"
#include "gmpar/harness.hpp"
#include "gmpar/metrics.hpp"
#include "gmpar/reconcile.hpp"
#include "gmpar/taskopt.hpp"
#include "support.hpp"

using namespace gmpar;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2e", v);
  return buf;
}

Vector vec(std::initializer_list<double> xs) {
  Vector v(static_cast<Eigen::Index>(xs.size()));
  Eigen::Index i = 0;
  for (double x : xs) v[i++] = x;
  return v;
}

double coherence_limit(const Vector& y) { return 1e-8 * (1.0 + y.cwiseAbs().maxCoeff()); }

Outcome oracle_equivalence() {
  std::mt19937_64 rng(101);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const TemporalHierarchy h(testing::random_level_sizes(rng, 30));
    const auto n = static_cast<Eigen::Index>(h.n());
    const Vector yhat = testing::random_vector(rng, n, -50, 50);
    const Vector w = testing::random_vector(rng, n, 0.05, 20);
    const Vector got = adaptive_reconcile(yhat, h, w);
    const Vector want = testing::kkt_qp_solve(yhat, w.cwiseAbs2(), h.A(), Vector::Zero(h.A().rows()));
    worst = std::max(worst, (got - want).cwiseAbs().maxCoeff());
  }
  return {worst <= 1e-6, "max |closed form - KKT solve| = " + sci(worst) + " over 100 instances"};
}

Outcome coherence_guarantee() {
  std::mt19937_64 rng(202);
  const std::vector<std::string> fixed{"uniform", "c1", "c2", "c3", "c4", "c5"};
  double worst_ratio = 0.0;
  std::size_t checks = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const TemporalHierarchy h(testing::random_level_sizes(rng, 60));
    const auto n = static_cast<Eigen::Index>(h.n());
    const Vector yhat = testing::random_vector(rng, n, -1e3, 1e3);
    std::vector<HierVector> history;
    for (int t = 0; t < 4; ++t) history.push_back({h.aggregate(testing::random_vector(rng, static_cast<Eigen::Index>(h.m()), 0, 10)), static_cast<std::size_t>(t)});
    std::vector<Vector> outs{bottom_up(yhat, h), projection_reconcile(yhat, h),
                             adaptive_reconcile(yhat, h, testing::random_vector(rng, n, 1e-3, 1e3))};
    for (const auto& mode : fixed) {
      outs.push_back(adaptive_reconcile(yhat, h, make_fixed_weights(parse_weight_mode(mode), h, history, trial).w));
    }
    ad::Tape tape;
    const ad::Tensor batched = reconcile_tensor(tape.constant(yhat.replicate(1, 2)),
                                            tape.constant(testing::random_vector(rng, 2 * n, 0.5, 2).reshaped(n, 2)), h);
    outs.push_back(batched.value().col(0));
    outs.push_back(batched.value().col(1));
    for (const auto& y : outs) {
      if (h.r() == 0) continue;
      worst_ratio = std::max(worst_ratio, (h.A() * y).cwiseAbs().maxCoeff() / coherence_limit(y));
      ++checks;
    }
  }
  return {worst_ratio <= 1.0, std::to_string(checks) + " reconciled vectors, worst |A y| / (1e-8 (1 + |y|)) = " + sci(worst_ratio)};
}

Outcome projection_properties() {
  std::mt19937_64 rng(303);
  double idem = 0.0, scale = 0.0, heavy = 0.0;
  int heavy_cases = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const TemporalHierarchy h(testing::random_level_sizes(rng, 30));
    const auto n = static_cast<Eigen::Index>(h.n());
    if (h.r() == 0) continue;
    const Vector w = testing::random_vector(rng, n, 0.2, 5);
    const Matrix M = reconciliation_matrix(h, w);
    idem = std::max(idem, (M * M - M).cwiseAbs().maxCoeff());
    for (double c : {1e-3, 1.0, 1e3}) scale = std::max(scale, (reconciliation_matrix(h, c * w) - M).cwiseAbs().maxCoeff());

    // Penalty ratio 1e6 (w ratio 1e3) on one node against uniform weights.
    const Vector yhat = testing::random_vector(rng, n, 1, 100);
    const Vector uniform = adaptive_reconcile(yhat, h, Vector::Ones(n));
    const auto node = static_cast<Eigen::Index>(rng() % static_cast<std::uint64_t>(n));
    const double base_adj = std::abs(uniform[node] - yhat[node]);
    if (base_adj < 1e-6) continue;
    Vector wh = Vector::Ones(n);
    wh[node] = 1e3;
    const double adj = std::abs(adaptive_reconcile(yhat, h, wh)[node] - yhat[node]);
    heavy = std::max(heavy, adj / base_adj);
    ++heavy_cases;
  }
  const bool pass = idem <= 1e-10 && scale <= 1e-10 && heavy <= 1e-4 && heavy_cases > 20;
  return {pass, "|M^2 - M| = " + sci(idem) + ", |M(cw) - M(w)| = " + sci(scale) + ", heavy/uniform adjustment = " +
                    sci(heavy) + " (" + std::to_string(heavy_cases) + " cases)"};
}

Outcome hand_example() {
  const TemporalHierarchy h({1, 2});
  const Vector got = adaptive_reconcile(vec({10, 6, 5}), h, Vector::Ones(3));
  const double err = (got - vec({31.0 / 3, 17.0 / 3, 14.0 / 3})).cwiseAbs().maxCoeff();
  std::ostringstream os;
  os << "y = [" << got.transpose() << "], error " << sci(err);
  return {err <= 1e-9, os.str()};
}

Outcome gradient_integrity() {
  const TemporalHierarchy h({1, 2, 4});
  GmpConfig cfg;
  cfg.hidden_size = 4;
  cfg.child_mlp_hidden = 3;
  cfg.head_hidden = 5;
  cfg.context_length = 3;
  cfg.fusion_kernel_width = 2;
  const auto base = synth_series({SynthKind::Seasonal, 10 * h.m(), h.m(), 10.0, 1.0, 5});
  const auto ds = build_windows(base, h, cfg.context_length, SplitFractions{1.0, 0.0, 0.0});
  const std::vector<std::size_t> ends{3, 6};
  const GmpBatch batch = make_batch(ds.periods, ends, h, cfg);
  GmpParams params = GmpParams::init(h, cfg, 17);

  const auto loss_at = [&]() {
    ad::Tape tape;
    const auto bound = bind_params(tape, params);
    return training_loss(forward(tape, bound, params, batch, h, cfg), batch).value()(0, 0);
  };
  ad::Tape tape;
  const auto bound = bind_params(tape, params);
  tape.backward(training_loss(forward(tape, bound, params, batch, h, cfg), batch));

  std::mt19937_64 rng(18);
  double worst = 0.0;
  Vector analytic(20), numeric(20);
  for (int probe = 0; probe < 20; ++probe) {
    const std::size_t g = rng() % params.set().size();
    Matrix& m = params.set()[g].value;
    const auto i = static_cast<Eigen::Index>(rng() % static_cast<std::uint64_t>(m.size()));
    const double orig = m.data()[i];
    const double step = 1e-6;
    m.data()[i] = orig + step;
    const double up = loss_at();
    m.data()[i] = orig - step;
    const double down = loss_at();
    m.data()[i] = orig;
    analytic[probe] = bound[g].grad().data()[i];
    numeric[probe] = (up - down) / (2 * step);
  }
  const double scale = std::max(analytic.cwiseAbs().maxCoeff(), numeric.cwiseAbs().maxCoeff());
  for (int probe = 0; probe < 20; ++probe) {
    const double denom = std::max({std::abs(analytic[probe]), std::abs(numeric[probe]), 1e-3 * scale});
    worst = std::max(worst, std::abs(analytic[probe] - numeric[probe]) / denom);
  }
  return {worst <= 1e-4, "20 probes, worst relative error " + sci(worst)};
}

Outcome task_contract() {
  std::mt19937_64 rng(404);
  double reduction = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const TemporalHierarchy h(testing::random_level_sizes(rng, 30));
    const Vector yhat = testing::random_vector(rng, static_cast<Eigen::Index>(h.n()), -10, 30);
    reduction = std::max(reduction, (solve_task(yhat, h, TaskSpec{}).y - projection_reconcile(yhat, h)).cwiseAbs().maxCoeff());
  }

  const TemporalHierarchy h2({1, 2});
  const double hand = (solve_task(vec({10, 6, 5}), h2, alipay_spec(0.0, 3)).y - vec({10, 5.5, 4.5})).cwiseAbs().maxCoeff();
  bool infeasible = false;
  try {
    solve_task(vec({10, 9, 5}), h2, alipay_spec(0.0, 3));
  } catch (const Infeasible&) {
    infeasible = true;
  }

  // Random feasible sample: leaves inside their bands, shifted equally to
  // hit the pinned root, rejected if the shift left a band.
  double worst_gap = -1e300;
  int instances = 0;
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  while (instances < 12) {
    const std::size_t m = 2 + rng() % 4;
    const TemporalHierarchy h({1, m});
    const auto n = static_cast<Eigen::Index>(h.n());
    const auto mm = static_cast<Eigen::Index>(m);
    Vector yhat = testing::random_vector(rng, n, 1, 10);
    yhat[0] = yhat.tail(mm).sum() * (1.0 + testing::random_vector(rng, 1, -0.12, 0.12)[0]);
    TaskSpec spec = alipay_spec(instances % 3 == 0 ? 0.0 : testing::random_vector(rng, 1, 0.1, 30)[0], h.n());
    if (instances % 4 == 3) spec.norm = ObjectiveNorm::L1;
    if (!interval_feasible(yhat, h, spec)) continue;
    ++instances;
    const double got = solve_task(yhat, h, spec).objective;
    double best = std::numeric_limits<double>::infinity();
    for (int s = 0; s < 100000; ++s) {
      Vector leaves(mm);
      for (Eigen::Index i = 0; i < mm; ++i) leaves[i] = yhat[1 + i] * (1.0 + 0.2 * u(rng));
      leaves.array() += (yhat[0] - leaves.sum()) / static_cast<double>(m);
      bool ok = true;
      for (Eigen::Index i = 0; i < mm; ++i) ok = ok && std::abs(leaves[i] - yhat[1 + i]) <= 0.2 * yhat[1 + i];
      if (ok) best = std::min(best, evaluate_objective(yhat, h.aggregate(leaves), spec));
    }
    worst_gap = std::max(worst_gap, got - best);
  }
  const bool pass = reduction <= 1e-6 && hand <= 1e-6 && infeasible && worst_gap <= 1e-4;
  return {pass, "reduction " + sci(reduction) + ", hand instance " + sci(hand) + ", infeasible detected " +
                    (infeasible ? "yes" : "no") + ", max(objective - sampled best) " + sci(worst_gap) + " over " +
                    std::to_string(instances) + " instances"};
}

Outcome desk_experiment() {
  ExperimentConfig cfg = desk_experiment_defaults();
  cfg.level_sizes = {1, 4, 24};
  cfg.synth_kind = SynthKind::Seasonal;
  cfg.synth_periods = 200;
  cfg.synth_level = 10.0;
  cfg.synth_noise = 1.0;
  cfg.runs = 5;
  cfg.seed = 0;
  cfg.methods = {"base", "bottom-up", "gmp-ar"};
  const auto res = run_experiment(cfg);
  int wins = 0;
  std::ostringstream os;
  os << "b-MAPE base/bottom-up/gmp-ar per seed:";
  for (std::size_t r = 0; r < cfg.runs; ++r) {
    const double base = res.rows_for("base")[r]->report.b_mape;
    const double bu = res.rows_for("bottom-up")[r]->report.b_mape;
    const double ar = res.rows_for("gmp-ar")[r]->report.b_mape;
    if (ar < base && ar < bu) ++wins;
    char buf[64];
    std::snprintf(buf, sizeof buf, " %.4f/%.4f/%.4f", base, bu, ar);
    os << buf;
  }
  os << "; gmp-ar best in " << wins << "/5";
  return {wins >= 4, os.str()};
}

Outcome alipay_constraints() {
  ExperimentConfig cfg = desk_experiment_defaults();
  const TemporalHierarchy h({1, 7, 168});
  const auto series = synth_series({SynthKind::Seasonal, 100 * h.m(), h.m(), 100.0, 5.0, 8});
  const auto ds = build_windows(series, h, cfg.gmp.context_length, cfg.split);
  TrainConfig tcfg = cfg.train;
  tcfg.seed = 8;
  const auto trained = train(ds.periods, Dataset::ends(ds.train), h, cfg.gmp, tcfg, Dataset::ends(ds.val));
  const auto pred = predict(trained.params, make_batch(ds.periods, Dataset::ends(ds.test), h, cfg.gmp), h, cfg.gmp);

  double pin = 0.0, band = 0.0, coherence = 0.0;
  int solved = 0, infeasible = 0;
  for (double beta : {0.0, 1.0}) {
    for (Eigen::Index c = 0; c < pred.yhat.cols(); ++c) {
      const Vector yhat = pred.yhat.col(c);
      try {
        const Vector y = solve_task(yhat, h, alipay_spec(beta, h.n())).y;
        ++solved;
        pin = std::max(pin, std::abs(y[0] - yhat[0]));
        band = std::max(band, ((y - yhat).cwiseAbs() - 0.2 * yhat).maxCoeff());
        coherence = std::max(coherence, (h.A() * y).cwiseAbs().maxCoeff());
      } catch (const Infeasible&) {
        ++infeasible;
      }
    }
  }
  const bool pass = solved > 0 && pin <= 1e-6 && band <= 1e-6 && coherence <= 1e-6;
  return {pass, std::to_string(solved) + " optimized forecasts (" + std::to_string(infeasible) +
                    " reported infeasible), root-pin violation " + sci(pin) + ", band violation " +
                    sci(std::max(band, 0.0)) + ", |A y| " + sci(coherence)};
}

Outcome relative_change_example() {
  const double parent = relative_change(10000, 10050);
  const double child = relative_change(100, 150);
  return {std::abs(parent - 0.005) <= 1e-12 && std::abs(child - 0.5) <= 1e-12,
          "adjustment 50: 10000 -> " + std::to_string(parent) + ", 100 -> " + std::to_string(child)};
}

}  // namespace

int main() {
  struct Criterion {
    int id;
    const char* name;
    double budget_s;
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria{
      {1, "reconciliation matches brute-force KKT", 5, oracle_equivalence},
      {2, "coherence for every reconciliation mode", 0, coherence_guarantee},
      {3, "projection properties", 0, projection_properties},
      {4, "hand example {1,2}", 0, hand_example},
      {5, "end-to-end gradient check", 30, gradient_integrity},
      {6, "task optimization contract", 60, task_contract},
      {7, "desk-scale experiment {1,4,24}", 600, desk_experiment},
      {8, "task constraints on {1,7,168} forecasts", 0, alipay_constraints},
      {9, "relative change worked example", 0, relative_change_example},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    const auto start = std::chrono::steady_clock::now();
    Outcome out;
    try {
      out = c.run();
    } catch (const std::exception& e) {
      out = {false, std::string("threw: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    bool pass = out.pass;
    std::string budget;
    if (c.budget_s > 0) {
      pass = pass && secs < c.budget_s;
      budget = ", limit " + std::to_string(static_cast<int>(c.budget_s)) + " s";
    }
    char timing[64];
    std::snprintf(timing, sizeof timing, "%.1f s", secs);
    std::cout << (pass ? "PASS" : "FAIL") << " [" << c.id << "] " << c.name << ": " << out.detail << " (" << timing
              << budget << ")" << std::endl;
    if (!pass) ++failed;
  }
  std::cout << (9 - failed) << "/9 criteria passed" << std::endl;
  return failed;
}
