#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gmpar/gmp.hpp"
#include "gmpar/hierarchy.hpp"
#include "gmpar/metrics.hpp"
#include "gmpar/taskopt.hpp"

namespace gmpar {

// ---- CSV ----

struct CsvSeries {
  std::vector<double> values;
  std::size_t rows = 0;
};

/// Reads one numeric column (by header name) in file order. Throws
/// ParseError (1-based line numbers, header is line 1), MissingColumn or
/// EmptySeries. Empty cells and NaN count as missing values.
CsvSeries ingest_csv(const std::filesystem::path& path, const std::string& column);

/// Header "t,<column>" then one row per value.
void write_series_csv(const std::filesystem::path& path, std::span<const double> values,
                      const std::string& column = "value");

/// Rows of equal-length numeric vectors under a header line; the first
/// `skip_cols` columns of every row are ignored. Throws ParseError or EmptySeries.
std::vector<Vector> read_vectors_csv(const std::filesystem::path& path, std::size_t skip_cols = 0);
void write_vectors_csv(const std::filesystem::path& path, std::span<const Vector> rows, const std::string& prefix = "node");

// ---- windows ----

struct SplitFractions {
  double train = 0.7;
  double val = 0.1;
  double test = 0.2;
  /// Throws ConfigError unless all are >= 0 and they sum to 1.
  void validate() const;
};

struct Dataset {
  explicit Dataset(TemporalHierarchy h) : hierarchy(std::move(h)) {}

  TemporalHierarchy hierarchy;
  /// Base series truncated to whole root periods.
  std::vector<double> base;
  std::vector<HierVector> periods;
  std::size_t context_length = 0;
  /// Target root period of every window.
  std::vector<std::size_t> targets;
  /// Subsets of `targets`; each window lies entirely inside its segment.
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
  std::vector<std::size_t> test;
  /// Segment boundaries in root periods: [0, train_end), [train_end, val_end), [val_end, P).
  std::size_t train_end = 0;
  std::size_t val_end = 0;

  /// Last context period of each target window (target - 1).
  static std::vector<std::size_t> ends(std::span<const std::size_t> targets);
};

/// Throws InsufficientData when fewer than context_length + 1 whole root
/// periods are available.
Dataset build_windows(std::span<const double> series, const TemporalHierarchy& h, std::size_t context_length,
                      const SplitFractions& split = {});

// ---- synthetic data ----

enum class SynthKind { Seasonal, TrendSeasonal, RandomWalk };
SynthKind parse_synth_kind(const std::string& name);

struct SynthConfig {
  SynthKind kind = SynthKind::Seasonal;
  std::size_t length = 0;
  /// Season length, normally m of the target hierarchy.
  std::size_t period = 24;
  double level = 10.0;
  double noise = 1.0;
  std::uint64_t seed = 0;
};

/// Seasonal: level plus two harmonics of `period` with seed-drawn amplitudes
/// and phases, plus Gaussian noise. TrendSeasonal adds a linear trend.
/// RandomWalk: level plus cumulative Gaussian steps of sd `noise`.
std::vector<double> synth_series(const SynthConfig& cfg);

// ---- configuration ----

/// "key = value" text with [section] headers and ; or # comments. Keys are
/// addressed as "section.key".
class Config {
 public:
  /// Throws ParseError.
  static Config parse(const std::string& text);
  static Config load(const std::filesystem::path& path);

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  std::string get(const std::string& key, const std::string& fallback) const;
  /// These throw ConfigError when the value does not parse.
  double get_double(const std::string& key, double fallback) const;
  std::size_t get_size(const std::string& key, std::size_t fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::vector<std::string> get_list(const std::string& key, const std::vector<std::string>& fallback) const;
  std::vector<std::size_t> get_size_list(const std::string& key, const std::vector<std::size_t>& fallback) const;

  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

/// [task] beta, norm (l2|l1), band (fraction; 0 disables), band_nodes
/// (default all), pin (node list pinned to their forecast).
TaskSpec task_spec_from(const Config& cfg, std::size_t n);

struct ExperimentConfig {
  std::vector<std::size_t> level_sizes{1, 4, 24};
  /// "synth" or "csv".
  std::string source = "synth";
  std::filesystem::path csv_path;
  std::string csv_column = "value";
  SynthKind synth_kind = SynthKind::Seasonal;
  std::size_t synth_periods = 200;
  double synth_level = 10.0;
  double synth_noise = 1.0;
  /// Unset: every run draws its own series from its run seed.
  std::optional<std::uint64_t> synth_seed;
  SplitFractions split;
  GmpConfig gmp;
  TrainConfig train;
  std::vector<std::string> methods{"base", "bottom-up", "projection", "gmp-ar"};
  std::size_t runs = 5;
  std::uint64_t seed = 0;
  std::optional<std::size_t> trend_level;
  std::optional<TaskSpec> task;
  bool emit_plot_data = false;

  TemporalHierarchy hierarchy() const { return TemporalHierarchy(level_sizes); }
  /// Sections: [data] [split] [gmp] [train] [experiment] [task]. Throws ConfigError.
  static ExperimentConfig from(const Config& cfg);
};

/// Desk-scale defaults used by the experiment command: smaller network and
/// lower learning rate than the GmpConfig defaults.
ExperimentConfig desk_experiment_defaults();

/// Applies one reconciliation method to base forecasts (columns are
/// windows). Methods: base, bottom-up, projection, gmp-ar (uses `w`), task
/// (needs `task`), or any fixed weight mode name (uniform, c1..c5, ...).
Matrix apply_method(const std::string& method, const Matrix& yhat, const Matrix& w, const TemporalHierarchy& h,
                    std::span<const HierVector> history, std::uint64_t seed, const TaskSpec* task = nullptr);

struct MethodRow {
  std::size_t run = 0;
  std::uint64_t seed = 0;
  std::string method;
  EvalReport report;
  /// max over windows of |A y|.
  double coherence_residual = 0.0;
};

struct ExperimentResult {
  std::vector<MethodRow> rows;
  std::vector<double> run_seconds;
  std::vector<std::string> methods;
  std::size_t num_levels = 0;

  /// One row per (run, method).
  std::string rows_csv() const;
  /// Per method mean and sample variance over runs.
  std::string summary_csv() const;
  /// "mean (variance)" table.
  std::string summary_table() const;
  std::vector<const MethodRow*> rows_for(const std::string& method) const;
};

/// Trains per run, forecasts the test windows, applies every method and
/// evaluates it. When `out_dir` is non-empty writes results.csv,
/// summary.csv, summary.txt and timing.csv (plus pred_<method>_run<r>.csv
/// with emit_plot_data).
ExperimentResult run_experiment(const ExperimentConfig& cfg, const std::filesystem::path& out_dir = {});

}  // namespace gmpar
