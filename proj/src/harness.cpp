#include "gmpar/harness.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <random>
#include <set>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <boost/tokenizer.hpp>

#include "gmpar/errors.hpp"
#include "gmpar/reconcile.hpp"

namespace gmpar {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_fields(const std::string& line) {
  using Sep = boost::escaped_list_separator<char>;
  boost::tokenizer<Sep> tok(line, Sep('\\', ',', '"'));
  std::vector<std::string> out;
  for (const auto& f : tok) out.push_back(trim(f));
  return out;
}

std::optional<double> parse_double(std::string_view s) {
  double v = 0.0;
  const auto* end = s.data() + s.size();
  const auto res = std::from_chars(s.data(), end, v);
  if (res.ec != std::errc() || res.ptr != end || !std::isfinite(v)) return std::nullopt;
  return v;
}

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(10) << v;
  return os.str();
}

std::ifstream open_input(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open " + path.string());
  return is;
}

std::ofstream open_output(const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw ConfigError("cannot write " + path.string());
  return os;
}

}  // namespace

// ---- CSV ----

CsvSeries ingest_csv(const std::filesystem::path& path, const std::string& column) {
  auto is = open_input(path);
  std::string line;
  std::size_t lineno = 0;
  std::vector<std::string> header;
  while (header.empty() && std::getline(is, line)) {
    ++lineno;
    if (!trim(line).empty()) header = split_fields(line);
  }
  if (header.empty()) throw EmptySeries(path.string() + " is empty");
  const auto it = std::find(header.begin(), header.end(), column);
  if (it == header.end()) throw MissingColumn("column '" + column + "' not in " + path.string());
  const auto col = static_cast<std::size_t>(it - header.begin());

  CsvSeries out;
  while (std::getline(is, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    const auto fields = split_fields(line);
    if (fields.size() <= col) throw ParseError(lineno, "row has no '" + column + "' field");
    if (fields[col].empty()) throw ParseError(lineno, "missing value");
    const auto v = parse_double(fields[col]);
    if (!v) throw ParseError(lineno, "'" + fields[col] + "' is not a finite number");
    out.values.push_back(*v);
  }
  out.rows = out.values.size();
  if (out.values.empty()) throw EmptySeries(path.string() + " has no data rows");
  return out;
}

void write_series_csv(const std::filesystem::path& path, std::span<const double> values, const std::string& column) {
  auto os = open_output(path);
  os << "t," << column << "\n";
  for (std::size_t t = 0; t < values.size(); ++t) os << t << "," << fmt(values[t]) << "\n";
}

std::vector<Vector> read_vectors_csv(const std::filesystem::path& path, std::size_t skip_cols) {
  auto is = open_input(path);
  std::string line;
  std::size_t lineno = 0;
  bool header = true;
  std::vector<Vector> rows;
  while (std::getline(is, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    if (header) {
      header = false;
      continue;
    }
    const auto fields = split_fields(line);
    if (fields.size() <= skip_cols) throw ParseError(lineno, "row has no values");
    Vector v(static_cast<Eigen::Index>(fields.size() - skip_cols));
    for (std::size_t i = skip_cols; i < fields.size(); ++i) {
      const auto x = parse_double(fields[i]);
      if (!x) throw ParseError(lineno, "'" + fields[i] + "' is not a finite number");
      v[static_cast<Eigen::Index>(i - skip_cols)] = *x;
    }
    if (!rows.empty() && v.size() != rows.front().size()) throw ParseError(lineno, "row length differs from the first row");
    rows.push_back(std::move(v));
  }
  if (rows.empty()) throw EmptySeries(path.string() + " has no data rows");
  return rows;
}

void write_vectors_csv(const std::filesystem::path& path, std::span<const Vector> rows, const std::string& prefix) {
  auto os = open_output(path);
  const Eigen::Index n = rows.empty() ? 0 : rows.front().size();
  for (Eigen::Index i = 0; i < n; ++i) os << (i ? "," : "") << prefix << "_" << i;
  os << "\n";
  for (const auto& r : rows) {
    for (Eigen::Index i = 0; i < r.size(); ++i) os << (i ? "," : "") << fmt(r[i]);
    os << "\n";
  }
}

// ---- windows ----

void SplitFractions::validate() const {
  if (train < 0 || val < 0 || test < 0 || std::abs(train + val + test - 1.0) > 1e-9) {
    throw ConfigError("split fractions must be nonnegative and sum to 1");
  }
}

std::vector<std::size_t> Dataset::ends(std::span<const std::size_t> targets) {
  std::vector<std::size_t> out;
  out.reserve(targets.size());
  for (std::size_t t : targets) out.push_back(t - 1);
  return out;
}

Dataset build_windows(std::span<const double> series, const TemporalHierarchy& h, std::size_t context_length,
                      const SplitFractions& split) {
  split.validate();
  if (context_length == 0) throw ConfigError("context_length must be positive");
  const std::size_t m = h.m();
  const std::size_t P = series.size() / m;
  if (P < context_length + 1) {
    throw InsufficientData(std::to_string(series.size()) + " points make " + std::to_string(P) +
                           " whole periods; need " + std::to_string(context_length + 1));
  }
  Dataset ds(h);
  ds.context_length = context_length;
  ds.base.assign(series.begin(), series.begin() + static_cast<std::ptrdiff_t>(P * m));
  for (std::size_t tau = 0; tau < P; ++tau) ds.periods.push_back(aggregate_base(ds.base, h, tau));
  ds.train_end = static_cast<std::size_t>(std::llround(split.train * static_cast<double>(P)));
  ds.val_end = std::min(P, static_cast<std::size_t>(std::llround((split.train + split.val) * static_cast<double>(P))));
  for (std::size_t tau = context_length; tau < P; ++tau) {
    ds.targets.push_back(tau);
    const std::size_t first = tau - context_length;
    if (tau < ds.train_end) {
      ds.train.push_back(tau);
    } else if (first >= ds.train_end && tau < ds.val_end) {
      ds.val.push_back(tau);
    } else if (first >= ds.val_end) {
      ds.test.push_back(tau);
    }
  }
  return ds;
}

// ---- synthetic data ----

SynthKind parse_synth_kind(const std::string& name) {
  if (name == "seasonal") return SynthKind::Seasonal;
  if (name == "trend+seasonal" || name == "trend-seasonal") return SynthKind::TrendSeasonal;
  if (name == "random-walk") return SynthKind::RandomWalk;
  throw ConfigError("unknown synthetic kind '" + name + "'");
}

std::vector<double> synth_series(const SynthConfig& cfg) {
  if (cfg.length == 0) throw ConfigError("synthetic length must be positive");
  if (cfg.period == 0) throw ConfigError("synthetic period must be positive");
  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const double a1 = cfg.level * (0.3 + 0.2 * unit(rng));
  const double a2 = cfg.level * (0.1 + 0.1 * unit(rng));
  const double ph1 = 2.0 * std::numbers::pi * unit(rng);
  const double ph2 = 2.0 * std::numbers::pi * unit(rng);
  const double slope = cfg.level * (0.5 + 0.5 * unit(rng)) / static_cast<double>(cfg.length);

  std::vector<double> out;
  out.reserve(cfg.length);
  double walk = cfg.level;
  for (std::size_t t = 0; t < cfg.length; ++t) {
    const double phase = 2.0 * std::numbers::pi * static_cast<double>(t % cfg.period) / static_cast<double>(cfg.period);
    const double season = cfg.level + a1 * std::sin(phase + ph1) + a2 * std::sin(2.0 * phase + ph2);
    switch (cfg.kind) {
      case SynthKind::Seasonal:
        out.push_back(season + cfg.noise * gauss(rng));
        break;
      case SynthKind::TrendSeasonal:
        out.push_back(season + slope * static_cast<double>(t) + cfg.noise * gauss(rng));
        break;
      case SynthKind::RandomWalk:
        walk += cfg.noise * gauss(rng);
        out.push_back(walk);
        break;
    }
  }
  return out;
}

// ---- configuration ----

Config Config::parse(const std::string& text) {
  boost::property_tree::ptree pt;
  std::istringstream is(text);
  try {
    boost::property_tree::ini_parser::read_ini(is, pt);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ParseError(e.line(), e.message());
  }
  Config cfg;
  for (const auto& [name, node] : pt) {
    if (node.empty()) {
      cfg.values_[name] = node.data();
      continue;
    }
    for (const auto& [k, v] : node) cfg.values_[name + "." + k] = v.data();
  }
  return cfg;
}

Config Config::load(const std::filesystem::path& path) {
  auto is = open_input(path);
  std::stringstream buf;
  buf << is.rdbuf();
  return parse(buf.str());
}

std::string Config::get(const std::string& key, const std::string& fallback) const {
  const auto it = values_.find(key);
  return it == values_.end() ? fallback : it->second;
}

double Config::get_double(const std::string& key, double fallback) const {
  if (!has(key)) return fallback;
  const auto v = parse_double(trim(get(key, "")));
  if (!v) throw ConfigError(key + " = '" + get(key, "") + "' is not a number");
  return *v;
}

std::size_t Config::get_size(const std::string& key, std::size_t fallback) const {
  if (!has(key)) return fallback;
  const std::string s = trim(get(key, ""));
  std::size_t v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw ConfigError(key + " = '" + s + "' is not a nonnegative integer");
  }
  return v;
}

bool Config::get_bool(const std::string& key, bool fallback) const {
  if (!has(key)) return fallback;
  const std::string s = trim(get(key, ""));
  if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return false;
  throw ConfigError(key + " = '" + s + "' is not a boolean");
}

std::vector<std::string> Config::get_list(const std::string& key, const std::vector<std::string>& fallback) const {
  if (!has(key)) return fallback;
  std::vector<std::string> out;
  std::stringstream ss(get(key, ""));
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::vector<std::size_t> Config::get_size_list(const std::string& key, const std::vector<std::size_t>& fallback) const {
  if (!has(key)) return fallback;
  std::vector<std::size_t> out;
  for (const auto& item : get_list(key, {})) {
    std::size_t v = 0;
    const auto res = std::from_chars(item.data(), item.data() + item.size(), v);
    if (res.ec != std::errc() || res.ptr != item.data() + item.size()) {
      throw ConfigError(key + ": '" + item + "' is not a nonnegative integer");
    }
    out.push_back(v);
  }
  return out;
}

TaskSpec task_spec_from(const Config& cfg, std::size_t n) {
  TaskSpec spec;
  spec.beta = cfg.get_double("task.beta", 0.0);
  if (spec.beta < 0.0) throw ConfigError("task.beta must be nonnegative");
  const std::string norm = cfg.get("task.norm", "l2");
  if (norm == "l2") {
    spec.norm = ObjectiveNorm::L2;
  } else if (norm == "l1") {
    spec.norm = ObjectiveNorm::L1;
  } else {
    throw ConfigError("task.norm must be l2 or l1");
  }
  for (std::size_t node : cfg.get_size_list("task.pin", {})) {
    if (node >= n) throw ConfigError("task.pin node " + std::to_string(node) + " outside the hierarchy");
    spec.equalities.push_back(pin_to_forecast(node, n));
  }
  const double band = cfg.get_double("task.band", 0.0);
  if (band < 0.0) throw ConfigError("task.band must be nonnegative");
  if (band > 0.0) {
    std::vector<std::size_t> nodes = cfg.get_size_list("task.band_nodes", {});
    if (nodes.empty()) {
      for (std::size_t i = 0; i < n; ++i) nodes.push_back(i);
    }
    for (std::size_t node : nodes) {
      if (node >= n) throw ConfigError("task.band_nodes entry " + std::to_string(node) + " outside the hierarchy");
      spec.bands.push_back({node, band});
    }
  }
  spec.max_iter = cfg.get_size("task.max_iter", spec.max_iter);
  return spec;
}

ExperimentConfig desk_experiment_defaults() {
  ExperimentConfig cfg;
  cfg.gmp.hidden_size = 16;
  cfg.gmp.head_hidden = 16;
  cfg.gmp.child_mlp_hidden = 16;
  cfg.gmp.context_length = 4;
  cfg.gmp.fusion_kernel_width = 3;
  cfg.train.epochs = 200;
  cfg.train.lr = 5e-3;
  cfg.train.batch_size = 32;
  return cfg;
}

ExperimentConfig ExperimentConfig::from(const Config& c) {
  static const std::set<std::string> known{
      "data.levels", "data.preset", "data.source", "data.csv_path", "data.csv_column", "data.synth_kind",
      "data.periods", "data.level", "data.noise", "data.synth_seed", "split.train", "split.val", "split.test",
      "gmp.hidden_size", "gmp.child_mlp_hidden", "gmp.fusion_kernel_width", "gmp.context_length", "gmp.head_hidden",
      "gmp.embedding_dim", "gmp.weight_floor", "train.epochs", "train.lr", "train.batch_size", "train.base_weight",
      "experiment.methods", "experiment.runs", "experiment.seed", "experiment.trend_level",
      "experiment.emit_plot_data", "task.beta", "task.norm", "task.pin", "task.band", "task.band_nodes",
      "task.max_iter"};
  for (const auto& [k, v] : c.values()) {
    if (!known.count(k)) throw ConfigError("unknown config key '" + k + "'");
  }

  ExperimentConfig cfg = desk_experiment_defaults();
  if (c.has("data.preset")) cfg.level_sizes = hierarchy_preset(c.get("data.preset", "")).level_sizes();
  cfg.level_sizes = c.get_size_list("data.levels", cfg.level_sizes);
  (void)cfg.hierarchy();
  cfg.source = c.get("data.source", cfg.source);
  if (cfg.source != "synth" && cfg.source != "csv") throw ConfigError("data.source must be synth or csv");
  cfg.csv_path = c.get("data.csv_path", "");
  if (cfg.source == "csv" && cfg.csv_path.empty()) throw ConfigError("data.csv_path is required for csv data");
  cfg.csv_column = c.get("data.csv_column", cfg.csv_column);
  cfg.synth_kind = parse_synth_kind(c.get("data.synth_kind", "seasonal"));
  cfg.synth_periods = c.get_size("data.periods", cfg.synth_periods);
  cfg.synth_level = c.get_double("data.level", cfg.synth_level);
  cfg.synth_noise = c.get_double("data.noise", cfg.synth_noise);
  if (c.has("data.synth_seed")) cfg.synth_seed = c.get_size("data.synth_seed", 0);

  cfg.split.train = c.get_double("split.train", cfg.split.train);
  cfg.split.val = c.get_double("split.val", cfg.split.val);
  cfg.split.test = c.get_double("split.test", cfg.split.test);
  cfg.split.validate();

  cfg.gmp.hidden_size = c.get_size("gmp.hidden_size", cfg.gmp.hidden_size);
  cfg.gmp.child_mlp_hidden = c.get_size("gmp.child_mlp_hidden", cfg.gmp.child_mlp_hidden);
  cfg.gmp.fusion_kernel_width = c.get_size("gmp.fusion_kernel_width", cfg.gmp.fusion_kernel_width);
  cfg.gmp.context_length = c.get_size("gmp.context_length", cfg.gmp.context_length);
  cfg.gmp.head_hidden = c.get_size("gmp.head_hidden", cfg.gmp.head_hidden);
  cfg.gmp.embedding_dim = c.get_size("gmp.embedding_dim", cfg.gmp.embedding_dim);
  cfg.gmp.weight_floor = c.get_double("gmp.weight_floor", cfg.gmp.weight_floor);
  cfg.gmp.validate();

  cfg.train.epochs = c.get_size("train.epochs", cfg.train.epochs);
  cfg.train.lr = c.get_double("train.lr", cfg.train.lr);
  cfg.train.batch_size = c.get_size("train.batch_size", cfg.train.batch_size);
  cfg.train.base_weight = c.get_double("train.base_weight", cfg.train.base_weight);
  if (cfg.train.lr < 0.0) throw ConfigError("train.lr must be nonnegative");

  cfg.methods = c.get_list("experiment.methods", cfg.methods);
  if (cfg.methods.empty()) throw ConfigError("experiment.methods is empty");
  cfg.runs = c.get_size("experiment.runs", cfg.runs);
  if (cfg.runs == 0) throw ConfigError("experiment.runs must be positive");
  cfg.seed = c.get_size("experiment.seed", 0);
  if (c.has("experiment.trend_level")) cfg.trend_level = c.get_size("experiment.trend_level", 0);
  cfg.emit_plot_data = c.get_bool("experiment.emit_plot_data", false);

  bool any_task = false;
  for (const auto& [k, v] : c.values()) any_task = any_task || k.rfind("task.", 0) == 0;
  if (any_task) cfg.task = task_spec_from(c, cfg.hierarchy().n());
  for (const auto& m : cfg.methods) {
    if (m == "task" && !cfg.task) throw ConfigError("method 'task' needs a [task] section");
  }
  return cfg;
}

// ---- experiment ----

Matrix apply_method(const std::string& method, const Matrix& yhat, const Matrix& w, const TemporalHierarchy& h,
                    std::span<const HierVector> history, std::uint64_t seed, const TaskSpec* task) {
  Matrix out(yhat.rows(), yhat.cols());
  if (method == "base") return yhat;
  if (method == "bottom-up" || method == "bottom_up") {
    for (Eigen::Index c = 0; c < yhat.cols(); ++c) out.col(c) = bottom_up(yhat.col(c), h);
    return out;
  }
  if (method == "projection") {
    for (Eigen::Index c = 0; c < yhat.cols(); ++c) out.col(c) = projection_reconcile(yhat.col(c), h);
    return out;
  }
  if (method == "gmp-ar" || method == "neural") {
    if (w.rows() != yhat.rows() || w.cols() != yhat.cols()) throw DimensionMismatch("gmp-ar needs learned weights");
    for (Eigen::Index c = 0; c < yhat.cols(); ++c) out.col(c) = adaptive_reconcile(yhat.col(c), h, w.col(c));
    return out;
  }
  if (method == "task") {
    if (!task) throw ConfigError("method 'task' needs a task specification");
    for (Eigen::Index c = 0; c < yhat.cols(); ++c) out.col(c) = solve_task(yhat.col(c), h, *task).y;
    return out;
  }
  const WeightMode mode = parse_weight_mode(method);
  const Vector fixed = make_fixed_weights(mode, h, history, seed).w;
  for (Eigen::Index c = 0; c < yhat.cols(); ++c) out.col(c) = adaptive_reconcile(yhat.col(c), h, fixed);
  return out;
}

std::vector<const MethodRow*> ExperimentResult::rows_for(const std::string& method) const {
  std::vector<const MethodRow*> out;
  for (const auto& r : rows) {
    if (r.method == method) out.push_back(&r);
  }
  return out;
}

namespace {

struct MeanVar {
  double mean = 0.0;
  double var = 0.0;
};

// Sample variance (n - 1); zero for a single run.
MeanVar mean_var(const std::vector<double>& xs) {
  MeanVar mv;
  if (xs.empty()) return mv;
  for (double x : xs) mv.mean += x;
  mv.mean /= static_cast<double>(xs.size());
  if (xs.size() > 1) {
    for (double x : xs) mv.var += (x - mv.mean) * (x - mv.mean);
    mv.var /= static_cast<double>(xs.size() - 1);
  }
  return mv;
}

template <typename F>
std::vector<double> collect(const std::vector<const MethodRow*>& rows, F f) {
  std::vector<double> out;
  for (const auto* r : rows) out.push_back(f(*r));
  return out;
}

}  // namespace

std::string ExperimentResult::rows_csv() const {
  std::ostringstream os;
  os << "run,seed,method,b_mape,mape,mse,trend_accuracy";
  for (std::size_t k = 0; k < num_levels; ++k) os << ",mape_level" << k;
  os << ",coherence_residual,n_windows\n";
  for (const auto& r : rows) {
    os << r.run << "," << r.seed << "," << r.method << "," << fmt(r.report.b_mape) << "," << fmt(r.report.mape) << ","
       << fmt(r.report.mse) << "," << fmt(r.report.trend_accuracy);
    for (Eigen::Index k = 0; k < r.report.per_level_mape.size(); ++k) os << "," << fmt(r.report.per_level_mape[k]);
    os << "," << fmt(r.coherence_residual) << "," << r.report.n_windows << "\n";
  }
  return os.str();
}

std::string ExperimentResult::summary_csv() const {
  std::ostringstream os;
  os << "method,runs,b_mape_mean,b_mape_var,mape_mean,mape_var,trend_mean,trend_var,coherence_max\n";
  for (const auto& m : methods) {
    const auto rs = rows_for(m);
    const auto b = mean_var(collect(rs, [](const MethodRow& r) { return r.report.b_mape; }));
    const auto a = mean_var(collect(rs, [](const MethodRow& r) { return r.report.mape; }));
    const auto t = mean_var(collect(rs, [](const MethodRow& r) { return r.report.trend_accuracy; }));
    const auto coh = collect(rs, [](const MethodRow& r) { return r.coherence_residual; });
    os << m << "," << rs.size() << "," << fmt(b.mean) << "," << fmt(b.var) << "," << fmt(a.mean) << "," << fmt(a.var)
       << "," << fmt(t.mean) << "," << fmt(t.var) << "," << fmt(coh.empty() ? 0.0 : *std::max_element(coh.begin(), coh.end()))
       << "\n";
  }
  return os.str();
}

std::string ExperimentResult::summary_table() const {
  std::ostringstream os;
  const auto cell = [](const MeanVar& mv) {
    std::ostringstream c;
    c << std::fixed << std::setprecision(4) << mv.mean << " (" << std::scientific << std::setprecision(1) << mv.var << ")";
    return c.str();
  };
  os << std::left << std::setw(16) << "method" << std::setw(22) << "b-MAPE" << std::setw(22) << "MAPE" << "trend\n";
  for (const auto& m : methods) {
    const auto rs = rows_for(m);
    os << std::left << std::setw(16) << m << std::setw(22)
       << cell(mean_var(collect(rs, [](const MethodRow& r) { return r.report.b_mape; })))
       << std::setw(22) << cell(mean_var(collect(rs, [](const MethodRow& r) { return r.report.mape; })))
       << cell(mean_var(collect(rs, [](const MethodRow& r) { return r.report.trend_accuracy; }))) << "\n";
  }
  return os.str();
}

ExperimentResult run_experiment(const ExperimentConfig& cfg, const std::filesystem::path& out_dir) {
  const TemporalHierarchy h = cfg.hierarchy();
  cfg.gmp.validate();
  std::vector<double> csv_series;
  if (cfg.source == "csv") csv_series = ingest_csv(cfg.csv_path, cfg.csv_column).values;
  if (!out_dir.empty()) std::filesystem::create_directories(out_dir);

  ExperimentResult result;
  result.methods = cfg.methods;
  result.num_levels = h.num_levels();
  for (std::size_t run = 0; run < cfg.runs; ++run) {
    const auto start = std::chrono::steady_clock::now();
    const std::uint64_t run_seed = cfg.seed + run;
    std::vector<double> series = csv_series;
    if (cfg.source == "synth") {
      series = synth_series({cfg.synth_kind, cfg.synth_periods * h.m(), h.m(), cfg.synth_level, cfg.synth_noise,
                             cfg.synth_seed.value_or(run_seed)});
    }
    const Dataset ds = build_windows(series, h, cfg.gmp.context_length, cfg.split);
    if (ds.train.empty()) throw InsufficientData("no training windows after the split");
    if (ds.test.empty()) throw InsufficientData("no test windows after the split");

    TrainConfig tcfg = cfg.train;
    tcfg.seed = run_seed;
    const auto train_ends = Dataset::ends(ds.train);
    const auto val_ends = Dataset::ends(ds.val);
    const auto test_ends = Dataset::ends(ds.test);
    const TrainResult trained = train(ds.periods, train_ends, h, cfg.gmp, tcfg, val_ends);
    const GmpBatch batch = make_batch(ds.periods, test_ends, h, cfg.gmp);
    const GmpPrediction pred = predict(trained.params, batch, h, cfg.gmp);
    const std::span<const HierVector> history(ds.periods.data(), ds.train_end);

    std::vector<Vector> truth;
    for (Eigen::Index c = 0; c < batch.target.cols(); ++c) truth.push_back(batch.target.col(c));
    for (const auto& method : cfg.methods) {
      const Matrix out = apply_method(method, pred.yhat, pred.w, h, history, run_seed, cfg.task ? &*cfg.task : nullptr);
      std::vector<Vector> cols;
      double coherence = 0.0;
      for (Eigen::Index c = 0; c < out.cols(); ++c) {
        cols.push_back(out.col(c));
        if (h.r() > 0) coherence = std::max(coherence, (h.A() * out.col(c)).cwiseAbs().maxCoeff());
      }
      MethodRow row;
      row.run = run;
      row.seed = run_seed;
      row.method = method;
      row.report = evaluate(cols, truth, h, cfg.trend_level);
      row.coherence_residual = coherence;
      result.rows.push_back(std::move(row));

      if (cfg.emit_plot_data && !out_dir.empty()) {
        auto os = open_output(out_dir / ("pred_" + method + "_run" + std::to_string(run) + ".csv"));
        os << "target_period,node,level,truth,pred\n";
        for (Eigen::Index c = 0; c < out.cols(); ++c) {
          for (std::size_t i = 0; i < h.n(); ++i) {
            const auto ii = static_cast<Eigen::Index>(i);
            os << ds.test[static_cast<std::size_t>(c)] << "," << i << "," << h.level_of(i) << "," << fmt(truth[static_cast<std::size_t>(c)][ii])
               << "," << fmt(out(ii, c)) << "\n";
          }
        }
      }
    }
    result.run_seconds.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
  }

  if (!out_dir.empty()) {
    open_output(out_dir / "results.csv") << result.rows_csv();
    open_output(out_dir / "summary.csv") << result.summary_csv();
    open_output(out_dir / "summary.txt") << result.summary_table();
    auto timing = open_output(out_dir / "timing.csv");
    timing << "run,seconds\n";
    for (std::size_t r = 0; r < result.run_seconds.size(); ++r) timing << r << "," << fmt(result.run_seconds[r]) << "\n";
  }
  return result;
}

}  // namespace gmpar
