// Command-line front end: hierarchy inspection, synthetic data, training,
// forecasting, reconciliation, task optimization, evaluation, experiments.
#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>

#include "gmpar/errors.hpp"
#include "gmpar/gmp.hpp"
#include "gmpar/harness.hpp"
#include "gmpar/metrics.hpp"
#include "gmpar/reconcile.hpp"
#include "gmpar/taskopt.hpp"

using namespace gmpar;
namespace fs = std::filesystem;

namespace {

struct Globals {
  std::string config;
  std::uint64_t seed = 0;
  bool seed_given = false;
  std::string out_dir = ".";
};

struct HierarchyFlags {
  std::string preset;
  std::vector<std::size_t> levels;

  void attach(CLI::App* app) {
    app->add_option("--preset", preset, "hierarchy preset (traffic, electricity, exchange, alipay)");
    app->add_option("--levels", levels, "explicit level sizes, e.g. 1,4,24")->delimiter(',');
  }
};

Config load_config(const Globals& g) { return g.config.empty() ? Config{} : Config::load(g.config); }

ExperimentConfig experiment_config(const Globals& g, const HierarchyFlags& hf) {
  ExperimentConfig cfg = ExperimentConfig::from(load_config(g));
  if (!hf.preset.empty()) cfg.level_sizes = hierarchy_preset(hf.preset).level_sizes();
  if (!hf.levels.empty()) cfg.level_sizes = hf.levels;
  if (g.seed_given) cfg.seed = g.seed;
  return cfg;
}

fs::path out_path(const Globals& g, const std::string& file) {
  fs::create_directories(g.out_dir);
  return fs::path(g.out_dir) / file;
}

void print_matrix(const std::string& name, const Matrix& m) {
  std::cout << name << " (" << m.rows() << " x " << m.cols() << ")\n";
  const Eigen::IOFormat fmt(Eigen::StreamPrecision, 0, " ", "\n", "  ", "");
  std::cout << m.format(fmt) << "\n";
}

std::vector<Vector> columns(const Matrix& m) {
  std::vector<Vector> out;
  for (Eigen::Index c = 0; c < m.cols(); ++c) out.push_back(m.col(c));
  return out;
}

Matrix as_matrix(const std::vector<Vector>& rows, std::size_t n, const std::string& what) {
  Matrix m(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(rows.size()));
  for (std::size_t c = 0; c < rows.size(); ++c) {
    if (static_cast<std::size_t>(rows[c].size()) != n) {
      throw DimensionMismatch(what + " rows have " + std::to_string(rows[c].size()) + " values, expected " +
                              std::to_string(n));
    }
    m.col(static_cast<Eigen::Index>(c)) = rows[c];
  }
  return m;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"gmpar: temporal hierarchy forecasting with adaptive reconciliation"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config, "config file (key = value with [sections])")->check(CLI::ExistingFile);
  auto* seed_opt = app.add_option("--seed", g.seed, "base random seed");
  app.add_option("--out-dir", g.out_dir, "directory for output files");

  // hierarchy
  auto* hier = app.add_subcommand("hierarchy", "print S and A for a hierarchy");
  HierarchyFlags hier_flags;
  hier_flags.attach(hier);

  // synth
  auto* synth = app.add_subcommand("synth", "write a synthetic base series");
  HierarchyFlags synth_flags;
  synth_flags.attach(synth);
  std::string synth_kind;
  std::size_t synth_periods = 0;
  double synth_noise = -1.0;
  synth->add_option("--kind", synth_kind, "seasonal, trend+seasonal or random-walk");
  synth->add_option("--periods", synth_periods, "number of root periods");
  synth->add_option("--noise", synth_noise, "noise standard deviation");

  // train
  auto* trn = app.add_subcommand("train", "train the network on a CSV series");
  HierarchyFlags train_flags;
  train_flags.attach(trn);
  std::string train_data;
  std::string train_column = "value";
  std::size_t train_epochs = 0;
  trn->add_option("--data", train_data, "CSV with the base series")->required()->check(CLI::ExistingFile);
  trn->add_option("--column", train_column, "value column");
  trn->add_option("--epochs", train_epochs, "override train.epochs");

  // forecast
  auto* fc = app.add_subcommand("forecast", "forecast the period after the last observed one");
  HierarchyFlags fc_flags;
  fc_flags.attach(fc);
  std::string fc_data;
  std::string fc_column = "value";
  std::string fc_params;
  fc->add_option("--data", fc_data, "CSV with the base series")->required()->check(CLI::ExistingFile);
  fc->add_option("--column", fc_column, "value column");
  fc->add_option("--params", fc_params, "parameter file from train")->required()->check(CLI::ExistingFile);

  // reconcile
  auto* rec = app.add_subcommand("reconcile", "reconcile base forecasts (one row per forecast)");
  HierarchyFlags rec_flags;
  rec_flags.attach(rec);
  std::string rec_input;
  std::string rec_method = "projection";
  std::string rec_weights;
  std::string rec_history;
  std::string rec_history_column = "value";
  rec->add_option("--input", rec_input, "CSV of base forecasts, n columns")->required()->check(CLI::ExistingFile);
  rec->add_option("--method", rec_method,
                  "bottom-up, projection, weighted (needs --weights) or a fixed mode: uniform, c1..c5");
  rec->add_option("--weights", rec_weights, "CSV of per-node weights (one row, or one per forecast)")
      ->check(CLI::ExistingFile);
  rec->add_option("--history", rec_history, "base series CSV for the past-value mode")->check(CLI::ExistingFile);
  rec->add_option("--history-column", rec_history_column, "value column of --history");

  // optimize
  auto* opt = app.add_subcommand("optimize", "task-based optimization of forecasts (one row per forecast)");
  HierarchyFlags opt_flags;
  opt_flags.attach(opt);
  std::string opt_input;
  double opt_beta = -1.0;
  double opt_band = -1.0;
  std::vector<std::size_t> opt_pin;
  bool opt_alipay = false;
  opt->add_option("--input", opt_input, "CSV of base forecasts, n columns")->required()->check(CLI::ExistingFile);
  opt->add_flag("--alipay", opt_alipay, "root pinned plus a 20% band on every node");
  opt->add_option("--beta", opt_beta, "cosine term multiplier (overrides [task] beta)");
  opt->add_option("--band", opt_band, "band fraction on every node (overrides [task] band)");
  opt->add_option("--pin", opt_pin, "nodes pinned to their forecast")->delimiter(',');

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "score forecasts against truth (rows aligned)");
  HierarchyFlags ev_flags;
  ev_flags.attach(ev);
  std::string ev_pred;
  std::string ev_truth;
  bool ev_json = false;
  ev->add_option("--pred", ev_pred, "CSV of forecasts, n columns")->required()->check(CLI::ExistingFile);
  ev->add_option("--truth", ev_truth, "CSV of observed values, n columns")->required()->check(CLI::ExistingFile);
  ev->add_flag("--json", ev_json, "print JSON instead of key = value lines");

  // experiment
  auto* ex = app.add_subcommand("experiment", "repeated train/forecast/reconcile/evaluate runs");
  HierarchyFlags ex_flags;
  ex_flags.attach(ex);
  bool ex_plot = false;
  std::size_t ex_runs = 0;
  ex->add_flag("--emit-plot-data", ex_plot, "write aligned prediction/truth CSVs per method and run");
  ex->add_option("--runs", ex_runs, "override experiment.runs");

  CLI11_PARSE(app, argc, argv);
  g.seed_given = seed_opt->count() > 0;

  try {
    if (hier->parsed()) {
      const auto h = experiment_config(g, hier_flags).hierarchy();
      std::cout << "levels:";
      for (auto s : h.level_sizes()) std::cout << " " << s;
      std::cout << "\nn = " << h.n() << ", m = " << h.m() << ", r = " << h.r() << "\n";
      print_matrix("S", h.S());
      print_matrix("A", h.A());
    } else if (synth->parsed()) {
      auto cfg = experiment_config(g, synth_flags);
      if (!synth_kind.empty()) cfg.synth_kind = parse_synth_kind(synth_kind);
      if (synth_periods) cfg.synth_periods = synth_periods;
      if (synth_noise >= 0) cfg.synth_noise = synth_noise;
      const auto h = cfg.hierarchy();
      const auto series = synth_series({cfg.synth_kind, cfg.synth_periods * h.m(), h.m(), cfg.synth_level,
                                        cfg.synth_noise, cfg.synth_seed.value_or(cfg.seed)});
      const auto path = out_path(g, "synth.csv");
      write_series_csv(path, series);
      std::cout << "wrote " << series.size() << " points to " << path.string() << "\n";
    } else if (trn->parsed()) {
      auto cfg = experiment_config(g, train_flags);
      if (train_epochs) cfg.train.epochs = train_epochs;
      const auto h = cfg.hierarchy();
      const auto series = ingest_csv(train_data, train_column);
      const auto ds = build_windows(series.values, h, cfg.gmp.context_length, cfg.split);
      TrainConfig tcfg = cfg.train;
      tcfg.seed = cfg.seed;
      const auto res = train(ds.periods, Dataset::ends(ds.train), h, cfg.gmp, tcfg, Dataset::ends(ds.val));
      res.params.save(out_path(g, "params.bin"));
      std::ofstream losses(out_path(g, "losses.csv"));
      losses << "epoch,train_loss" << (res.val_losses.empty() ? "" : ",val_loss") << "\n";
      for (std::size_t e = 0; e < res.losses.size(); ++e) {
        losses << e << "," << res.losses[e];
        if (!res.val_losses.empty()) losses << "," << res.val_losses[e];
        losses << "\n";
      }
      std::cout << "read " << series.rows << " rows, " << ds.periods.size() << " periods, " << ds.train.size()
                << " training windows\n"
                << "final train loss " << res.losses.back();
      if (!res.val_losses.empty()) std::cout << ", best validation loss " << res.val_losses[res.best_epoch] << " at epoch " << res.best_epoch;
      std::cout << "\nparameters: " << out_path(g, "params.bin").string() << "\n";
    } else if (fc->parsed()) {
      const auto cfg = experiment_config(g, fc_flags);
      const auto h = cfg.hierarchy();
      const auto series = ingest_csv(fc_data, fc_column);
      const auto ds = build_windows(series.values, h, cfg.gmp.context_length, SplitFractions{1.0, 0.0, 0.0});
      const auto params = GmpParams::load(fc_params, h, cfg.gmp);
      const std::vector<std::size_t> last{ds.periods.size() - 1};
      const auto pred = predict(params, make_batch(ds.periods, last, h, cfg.gmp, false), h, cfg.gmp);
      const auto path = out_path(g, "forecast.csv");
      std::ofstream os(path);
      os << "period,node,level,position,base,weight,reconciled\n" << std::setprecision(10);
      for (std::size_t i = 0; i < h.n(); ++i) {
        const auto ii = static_cast<Eigen::Index>(i);
        os << ds.periods.size() << "," << i << "," << h.level_of(i) << "," << h.position_of(i) << "," << pred.yhat(ii, 0)
           << "," << pred.w(ii, 0) << "," << pred.reconciled(ii, 0) << "\n";
      }
      std::cout << "forecast for period " << ds.periods.size() << " written to " << path.string() << "\n";
    } else if (rec->parsed()) {
      const auto cfg = experiment_config(g, rec_flags);
      const auto h = cfg.hierarchy();
      const Matrix yhat = as_matrix(read_vectors_csv(rec_input), h.n(), "forecast");
      Matrix out;
      if (rec_method == "weighted") {
        if (rec_weights.empty()) throw ConfigError("--method weighted needs --weights");
        const auto wrows = read_vectors_csv(rec_weights);
        Matrix w = as_matrix(wrows, h.n(), "weight");
        if (w.cols() == 1) w = w.replicate(1, yhat.cols());
        if (w.cols() != yhat.cols()) throw DimensionMismatch("weights need one row or one row per forecast");
        out = apply_method("gmp-ar", yhat, w, h, {}, cfg.seed);
      } else {
        std::vector<HierVector> history;
        if (!rec_history.empty()) {
          const auto base = ingest_csv(rec_history, rec_history_column).values;
          for (std::size_t tau = 0; tau < base.size() / h.m(); ++tau) history.push_back(aggregate_base(base, h, tau));
        }
        out = apply_method(rec_method, yhat, Matrix(), h, history, cfg.seed);
      }
      const auto rows = columns(out);
      const auto path = out_path(g, "reconciled.csv");
      write_vectors_csv(path, rows);
      double worst = 0.0;
      for (const auto& r : rows) worst = std::max(worst, check_coherence(r, h).residual);
      std::cout << "reconciled " << rows.size() << " forecasts (" << rec_method << "), max |A y| = " << worst << "\n"
                << "written to " << path.string() << "\n";
    } else if (opt->parsed()) {
      const Config raw = load_config(g);
      const auto cfg = experiment_config(g, opt_flags);
      const auto h = cfg.hierarchy();
      TaskSpec spec = opt_alipay ? alipay_spec(0.0, h.n()) : task_spec_from(raw, h.n());
      if (opt_beta >= 0) spec.beta = opt_beta;
      if (opt_band >= 0) {
        spec.bands.clear();
        for (std::size_t i = 0; i < h.n(); ++i) spec.bands.push_back({i, opt_band});
      }
      for (auto node : opt_pin) {
        if (node >= h.n()) throw ConfigError("--pin node outside the hierarchy");
        spec.equalities.push_back(pin_to_forecast(node, h.n()));
      }
      const auto rows = read_vectors_csv(opt_input);
      as_matrix(rows, h.n(), "forecast");
      std::vector<Vector> out;
      for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto res = solve_task(rows[i], h, spec);
        std::cout << "# forecast " << i << "\n" << res.report();
        out.push_back(res.y);
      }
      const auto path = out_path(g, "optimized.csv");
      write_vectors_csv(path, out);
      std::cout << "written to " << path.string() << "\n";
    } else if (ev->parsed()) {
      const auto cfg = experiment_config(g, ev_flags);
      const auto h = cfg.hierarchy();
      const auto pred = read_vectors_csv(ev_pred);
      const auto truth = read_vectors_csv(ev_truth);
      as_matrix(pred, h.n(), "prediction");
      as_matrix(truth, h.n(), "truth");
      const auto report = evaluate(pred, truth, h, cfg.trend_level);
      std::cout << (ev_json ? report.to_json() + "\n" : report.to_text());
    } else if (ex->parsed()) {
      auto cfg = experiment_config(g, ex_flags);
      if (ex_plot) cfg.emit_plot_data = true;
      if (ex_runs) cfg.runs = ex_runs;
      const auto res = run_experiment(cfg, g.out_dir);
      std::cout << res.summary_table();
      double total = 0.0;
      for (double s : res.run_seconds) total += s;
      std::cout << "runs: " << cfg.runs << ", total " << std::fixed << std::setprecision(1) << total << " s\n"
                << "results in " << fs::path(g.out_dir).string() << "\n";
    }
  } catch (const Infeasible& e) {
    std::cerr << "infeasible: " << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
