#include "gmpar/gmp.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "gmpar/errors.hpp"
#include "gmpar/reconcile.hpp"

namespace gmpar {

namespace {

using ad::Tensor;

std::string key(const char* group, std::size_t k, const char* leaf) {
  return std::string(group) + "." + std::to_string(k) + "." + leaf;
}

Eigen::Index ei(std::size_t v) { return static_cast<Eigen::Index>(v); }

std::size_t feature_rows(const TemporalHierarchy& h) { return 2 * (h.num_levels() - 1) + 1; }

}  // namespace

void GmpConfig::validate() const {
  if (hidden_size == 0 || child_mlp_hidden == 0 || fusion_kernel_width == 0 || context_length == 0 ||
      head_hidden == 0 || embedding_dim == 0) {
    throw ConfigError("gmp sizes must be positive");
  }
  if (fusion_kernel_width > context_length) throw ConfigError("fusion_kernel_width exceeds context_length");
  if (!(weight_floor > 0.0)) throw ConfigError("weight_floor must be positive");
  if (!(root_eps > 0.0)) throw ConfigError("root_eps must be positive");
}

// ---- parameters ----

void GmpParams::add(std::string name, Matrix value) {
  lookup_[name] = set_.size();
  set_.push_back({std::move(name), std::move(value)});
}

std::size_t GmpParams::index(const std::string& name) const {
  const auto it = lookup_.find(name);
  if (it == lookup_.end()) throw ConfigError("unknown parameter '" + name + "'");
  return it->second;
}

std::size_t GmpParams::num_scalars() const {
  std::size_t total = 0;
  for (const auto& p : set_) total += static_cast<std::size_t>(p.value.size());
  return total;
}

GmpParams GmpParams::init(const TemporalHierarchy& h, const GmpConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  if (h.num_levels() < 2) throw ConfigError("the network needs at least two levels");
  std::mt19937_64 rng(seed);
  const auto uniform = [&](std::size_t rows, std::size_t cols, std::size_t fan_in) {
    const double a = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> u(-a, a);
    Matrix m(ei(rows), ei(cols));
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
    return m;
  };

  const std::size_t H = cfg.hidden_size;
  const std::size_t Hc = cfg.child_mlp_hidden;
  const std::size_t D = feature_rows(h) + Hc;
  GmpParams p;
  for (std::size_t k = 0; k < h.num_levels(); ++k) {
    p.add(key("gru", k, "W"), uniform(3 * H, D, D));
    p.add(key("gru", k, "U"), uniform(3 * H, H, H));
    p.add(key("gru", k, "b"), uniform(3 * H, 1, H));
  }
  for (std::size_t k = 0; k + 1 < h.num_levels(); ++k) {
    const std::size_t mk = h.children_per_node(k);
    p.add(key("child", k, "W1"), uniform(Hc, mk, mk));
    p.add(key("child", k, "b1"), uniform(Hc, 1, mk));
    p.add(key("child", k, "W2"), uniform(Hc, Hc, Hc));
    p.add(key("child", k, "b2"), uniform(Hc, 1, Hc));
    // Start from the children mean.
    p.add("fuse." + std::to_string(k), Matrix::Constant(ei(mk), 1, 1.0 / static_cast<double>(mk)));
  }
  const std::size_t K = cfg.fusion_kernel_width;
  p.add("conv.W", uniform(H, 2 * H * K, 2 * H * K));
  p.add("conv.b", uniform(H, 1, 2 * H * K));
  p.add("embed", uniform(cfg.embedding_dim, h.n(), cfg.embedding_dim));
  const std::size_t in = H + cfg.embedding_dim;
  for (const char* head : {"fhead", "whead"}) {
    const std::string s(head);
    p.add(s + ".W1", uniform(cfg.head_hidden, in, in));
    p.add(s + ".b1", uniform(cfg.head_hidden, 1, in));
    p.add(s + ".W2", uniform(1, cfg.head_hidden, cfg.head_hidden));
    p.add(s + ".b2", uniform(1, 1, cfg.head_hidden));
  }
  return p;
}

namespace {

constexpr char kMagic[] = "GMPAR01";
constexpr std::size_t kMagicLen = 7;

static_assert(std::endian::native == std::endian::little, "parameter files are written little endian");

template <typename T>
void write_pod(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) throw FormatError("parameter file truncated");
  return v;
}

}  // namespace

void GmpParams::save(const std::filesystem::path& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot open " + path.string() + " for writing");
  os.write(kMagic, kMagicLen);
  write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(set_.size()));
  for (const auto& p : set_) {
    write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(p.name.size()));
    os.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    write_pod<std::uint64_t>(os, static_cast<std::uint64_t>(p.value.size()));
    os.write(reinterpret_cast<const char*>(p.value.data()), static_cast<std::streamsize>(p.value.size() * sizeof(double)));
  }
  if (!os) throw FormatError("failed writing " + path.string());
}

GmpParams GmpParams::load(const std::filesystem::path& path, const TemporalHierarchy& h, const GmpConfig& cfg) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open " + path.string());
  char magic[kMagicLen];
  if (!is.read(magic, kMagicLen) || std::memcmp(magic, kMagic, kMagicLen) != 0) {
    throw FormatError(path.string() + " is not a parameter file");
  }
  GmpParams p = init(h, cfg, 0);
  const auto count = read_pod<std::uint32_t>(is);
  if (count != p.set_.size()) {
    throw FormatError("parameter file has " + std::to_string(count) + " sections, expected " +
                      std::to_string(p.set_.size()));
  }
  for (std::uint32_t s = 0; s < count; ++s) {
    const auto len = read_pod<std::uint32_t>(is);
    if (len > 4096) throw FormatError("section name too long");
    std::string name(len, '\0');
    if (!is.read(name.data(), len)) throw FormatError("parameter file truncated");
    const auto it = p.lookup_.find(name);
    if (it == p.lookup_.end()) throw FormatError("unexpected section '" + name + "'");
    Matrix& m = p.set_[it->second].value;
    const auto elems = read_pod<std::uint64_t>(is);
    if (elems != static_cast<std::uint64_t>(m.size())) {
      throw FormatError("section '" + name + "' has " + std::to_string(elems) + " values, expected " +
                        std::to_string(m.size()));
    }
    if (!is.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(elems * sizeof(double)))) {
      throw FormatError("parameter file truncated");
    }
  }
  return p;
}

// ---- inputs ----

GmpBatch make_batch(std::span<const HierVector> series, std::span<const std::size_t> ends, const TemporalHierarchy& h,
                    const GmpConfig& cfg, bool with_target) {
  cfg.validate();
  const std::size_t C = cfg.context_length;
  const std::size_t p = h.num_levels();
  const auto B = ends.size();
  const auto n = ei(h.n());
  if (p < 2) throw ConfigError("the network needs at least two levels");

  GmpBatch batch;
  batch.size = B;
  batch.ends.assign(ends.begin(), ends.end());
  batch.features.assign(C, std::vector<Matrix>(p));
  batch.child_props.assign(C, std::vector<Matrix>(p - 1));
  for (std::size_t t = 0; t < C; ++t) {
    for (std::size_t k = 0; k < p; ++k) {
      batch.features[t][k].resize(ei(feature_rows(h)), ei(B * h.level_size(k)));
      if (k + 1 < p) batch.child_props[t][k].resize(ei(h.children_per_node(k)), ei(B * h.level_size(k)));
    }
  }
  batch.scale.resize(n, ei(B));
  if (with_target) batch.target.resize(n, ei(B));

  for (std::size_t b = 0; b < B; ++b) {
    const std::size_t end = ends[b];
    if (end + 1 < C || end >= series.size()) {
      throw InsufficientHistory("window ending at period " + std::to_string(end) + " needs " + std::to_string(C) +
                                " periods of history");
    }
    if (with_target && end + 1 >= series.size()) {
      throw InsufficientHistory("window ending at period " + std::to_string(end) + " has no target period");
    }
    const auto history = series.subspan(end + 1 - C, C);
    const Vector level_scale = level_scales(history, h, cfg.root_eps);
    for (std::size_t k = 0; k < p; ++k) {
      batch.scale.col(ei(b)).segment(ei(h.level_offset(k)), ei(h.level_size(k))).setConstant(level_scale[ei(k)]);
    }
    for (std::size_t t = 0; t < C; ++t) {
      const Vector& y = history[t].values;
      if (static_cast<std::size_t>(y.size()) != h.n()) throw DimensionMismatch("series entry does not match the hierarchy");
      const ProportionVector a = proportions(y, cfg.root_eps);
      const PathProportions path = path_proportions(a, h);
      const Matrix padded = path.padded();
      const Matrix mask = path.mask();
      for (std::size_t k = 0; k < p; ++k) {
        const auto nk = ei(h.level_size(k));
        const auto off = ei(h.level_offset(k));
        auto block = batch.features[t][k].middleCols(ei(b) * nk, nk);
        block.topRows(ei(p - 1)) = padded.middleCols(off, nk);
        block.middleRows(ei(p - 1), ei(p - 1)) = mask.middleCols(off, nk);
        block.bottomRows(1) = y.segment(off, nk).transpose() / level_scale[ei(k)];
        if (k + 1 < p) batch.child_props[t][k].middleCols(ei(b) * nk, nk) = child_proportion_groups(a, h, k);
      }
    }
    if (with_target) {
      const Vector& target = series[end + 1].values;
      if (target.size() != n) throw DimensionMismatch("series entry does not match the hierarchy");
      batch.target.col(ei(b)) = target;
    }
  }
  return batch;
}

namespace {

GmpBatch subset_batch(const GmpBatch& full, std::span<const std::size_t> windows, const TemporalHierarchy& h) {
  GmpBatch out;
  out.size = windows.size();
  const auto B = ei(windows.size());
  out.features = full.features;
  out.child_props = full.child_props;
  for (std::size_t t = 0; t < full.features.size(); ++t) {
    for (std::size_t k = 0; k < full.features[t].size(); ++k) {
      const auto nk = ei(h.level_size(k));
      auto& f = out.features[t][k];
      f.resize(full.features[t][k].rows(), B * nk);
      for (Eigen::Index b = 0; b < B; ++b) {
        f.middleCols(b * nk, nk) = full.features[t][k].middleCols(ei(windows[static_cast<std::size_t>(b)]) * nk, nk);
      }
      if (k < full.child_props[t].size()) {
        auto& c = out.child_props[t][k];
        c.resize(full.child_props[t][k].rows(), B * nk);
        for (Eigen::Index b = 0; b < B; ++b) {
          c.middleCols(b * nk, nk) = full.child_props[t][k].middleCols(ei(windows[static_cast<std::size_t>(b)]) * nk, nk);
        }
      }
    }
  }
  out.scale.resize(full.scale.rows(), B);
  if (full.target.size()) out.target.resize(full.target.rows(), B);
  for (Eigen::Index b = 0; b < B; ++b) {
    const auto src = ei(windows[static_cast<std::size_t>(b)]);
    out.scale.col(b) = full.scale.col(src);
    if (full.target.size()) out.target.col(b) = full.target.col(src);
    out.ends.push_back(full.ends[static_cast<std::size_t>(src)]);
  }
  return out;
}

}  // namespace

// ---- network pieces ----

Tensor mlp(const Tensor& x, const MlpParams& p) {
  return ad::add_bias(ad::matmul(p.W2, ad::tanh(ad::add_bias(ad::matmul(p.W1, x), p.b1))), p.b2);
}

Tensor child_distribution_features(const Tensor& child_props, const MlpParams& p) { return mlp(child_props, p); }

Tensor gru_cell(const Tensor& x, const Tensor& h, const GruParams& p) {
  const Eigen::Index H = h.rows();
  const Tensor gx = ad::add_bias(ad::matmul(p.W, x), p.b);
  const Tensor gh = ad::matmul(ad::slice_rows(p.U, 0, 2 * H), h);
  const Tensor z = ad::sigmoid(ad::add(ad::slice_rows(gx, 0, H), ad::slice_rows(gh, 0, H)));
  const Tensor r = ad::sigmoid(ad::add(ad::slice_rows(gx, H, H), ad::slice_rows(gh, H, H)));
  const Tensor cand =
      ad::tanh(ad::add(ad::slice_rows(gx, 2 * H, H), ad::matmul(ad::slice_rows(p.U, 2 * H, H), ad::mul(r, h))));
  return ad::add(h, ad::mul(z, ad::sub(cand, h)));
}

std::vector<Tensor> temporal_extract(const std::vector<Tensor>& inputs, const GruParams& p) {
  if (inputs.empty()) throw InsufficientHistory("temporal extraction needs at least one step");
  const Eigen::Index H = p.U.cols();
  Tensor h = inputs.front().tape()->constant(Matrix::Zero(H, inputs.front().cols()));
  std::vector<Tensor> states;
  states.reserve(inputs.size());
  for (const auto& x : inputs) {
    h = gru_cell(x, h, p);
    states.push_back(h);
  }
  return states;
}

Tensor child_fusion(const Tensor& child_h, const Tensor& weights) { return ad::group_weighted_sum(child_h, weights); }

Tensor temporal_hier_fusion(const std::vector<Tensor>& h_hist, const std::vector<Tensor>& hhat_hist,
                            const Tensor& kernel, const Tensor& bias) {
  const Eigen::Index H = kernel.rows();
  const auto K = static_cast<std::size_t>(kernel.cols() / (2 * H));
  if (h_hist.size() != hhat_hist.size() || h_hist.size() < K) {
    throw ShapeMismatch("fusion history shorter than the kernel");
  }
  std::vector<Tensor> taps;
  for (std::size_t s = h_hist.size() - K; s < h_hist.size(); ++s) {
    taps.push_back(h_hist[s]);
    taps.push_back(hhat_hist[s]);
  }
  return ad::add_bias(ad::matmul(kernel, ad::concat_rows(taps)), bias);
}

HeadOutput heads(const Tensor& htilde, const Tensor& embedding, const MlpParams& fhead, const MlpParams& whead,
                 double weight_floor) {
  const Tensor in = ad::concat_rows({htilde, embedding});
  return {mlp(in, fhead), ad::add_scalar(ad::softplus(mlp(in, whead)), weight_floor)};
}

std::vector<Tensor> bind_params(ad::Tape& tape, const GmpParams& params) {
  std::vector<Tensor> out;
  out.reserve(params.set().size());
  for (const auto& p : params.set()) out.push_back(tape.leaf(p.value));
  return out;
}

GmpOutput forward(ad::Tape& tape, const std::vector<Tensor>& bound, const GmpParams& params, const GmpBatch& batch,
                  const TemporalHierarchy& h, const GmpConfig& cfg) {
  const std::size_t p = h.num_levels();
  const std::size_t C = cfg.context_length;
  const auto B = ei(batch.size);
  const auto H = ei(cfg.hidden_size);
  if (batch.features.size() != C) throw InsufficientHistory("batch context does not match context_length");
  if (bound.size() != params.set().size()) throw ShapeMismatch("bound parameters do not match the set");
  const auto P = [&](const std::string& name) { return bound[params.index(name)]; };

  // Recurrent states per level and step.
  std::vector<std::vector<Tensor>> states(p);
  for (std::size_t k = 0; k < p; ++k) {
    const auto cols = B * ei(h.level_size(k));
    std::vector<Tensor> inputs;
    inputs.reserve(C);
    for (std::size_t t = 0; t < C; ++t) {
      Tensor b;
      if (k + 1 < p) {
        const MlpParams child{P(key("child", k, "W1")), P(key("child", k, "b1")), P(key("child", k, "W2")),
                              P(key("child", k, "b2"))};
        b = child_distribution_features(tape.constant(batch.child_props[t][k]), child);
      } else {
        b = tape.constant(Matrix::Zero(ei(cfg.child_mlp_hidden), cols));
      }
      inputs.push_back(ad::concat_rows({tape.constant(batch.features[t][k]), b}));
    }
    states[k] = temporal_extract(inputs, GruParams{P(key("gru", k, "W")), P(key("gru", k, "U")), P(key("gru", k, "b"))});
  }

  const MlpParams fhead{P("fhead.W1"), P("fhead.b1"), P("fhead.W2"), P("fhead.b2")};
  const MlpParams whead{P("whead.W1"), P("whead.b1"), P("whead.W2"), P("whead.b2")};
  std::vector<Tensor> fparts;
  std::vector<Tensor> wparts;
  for (std::size_t k = 0; k < p; ++k) {
    const auto nk = ei(h.level_size(k));
    std::vector<Tensor> hhat;
    hhat.reserve(C);
    for (std::size_t t = 0; t < C; ++t) {
      if (k + 1 < p) {
        hhat.push_back(child_fusion(states[k + 1][t], P("fuse." + std::to_string(k))));
      } else {
        hhat.push_back(tape.constant(Matrix::Zero(H, B * nk)));
      }
    }
    const Tensor htilde = temporal_hier_fusion(states[k], hhat, P("conv.W"), P("conv.b"));
    const Tensor embed = ad::tile_cols(ad::slice_cols(P("embed"), ei(h.level_offset(k)), nk), B);
    const HeadOutput out = heads(htilde, embed, fhead, whead, cfg.weight_floor);
    fparts.push_back(ad::reshape(out.forecast, nk, B));
    wparts.push_back(ad::reshape(out.weight, nk, B));
  }

  GmpOutput out;
  out.yhat = ad::mul(ad::concat_rows(fparts), tape.constant(batch.scale));
  out.w = ad::concat_rows(wparts);
  out.reconciled = reconcile_tensor(out.yhat, out.w, h);
  return out;
}

Tensor training_loss(const GmpOutput& out, const GmpBatch& batch, double base_weight) {
  if (batch.target.size() == 0) throw InsufficientHistory("batch has no targets");
  ad::Tape& tape = *out.yhat.tape();
  const Tensor target = tape.constant(batch.target);
  const Tensor inv_scale = tape.constant(batch.scale.cwiseInverse());
  const Tensor rec = ad::mean(ad::mul(ad::abs(ad::sub(out.reconciled, target)), inv_scale));
  if (base_weight == 0.0) return rec;
  const Tensor base = ad::mean(ad::mul(ad::abs(ad::sub(out.yhat, target)), inv_scale));
  return ad::add(rec, ad::scale(base, base_weight));
}

GmpPrediction predict(const GmpParams& params, const GmpBatch& batch, const TemporalHierarchy& h, const GmpConfig& cfg) {
  ad::Tape tape;
  const auto bound = bind_params(tape, params);
  const GmpOutput out = forward(tape, bound, params, batch, h, cfg);
  return {out.yhat.value(), out.w.value(), out.reconciled.value()};
}

// ---- training ----

TrainResult train(std::span<const HierVector> series, std::span<const std::size_t> train_ends,
                  const TemporalHierarchy& h, const GmpConfig& cfg, const TrainConfig& tcfg,
                  std::span<const std::size_t> val_ends) {
  if (train_ends.empty()) throw InsufficientHistory("no training windows");
  if (tcfg.lr < 0.0) throw ConfigError("learning rate must be nonnegative");
  const GmpBatch all = make_batch(series, train_ends, h, cfg, true);
  const bool validate = !val_ends.empty();
  GmpBatch val;
  if (validate) val = make_batch(series, val_ends, h, cfg, true);

  TrainResult result;
  result.params = GmpParams::init(h, cfg, tcfg.seed);
  GmpParams best = result.params;
  double best_val = std::numeric_limits<double>::infinity();

  ad::AdamState adam;
  const ad::AdamConfig acfg{tcfg.lr};
  std::mt19937_64 rng(tcfg.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<std::size_t> order(all.size);
  std::iota(order.begin(), order.end(), 0);
  const std::size_t bs = tcfg.batch_size == 0 ? all.size : std::min(tcfg.batch_size, all.size);

  for (std::size_t epoch = 0; epoch < tcfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    for (std::size_t start = 0; start < order.size(); start += bs) {
      const std::size_t count = std::min(bs, order.size() - start);
      const GmpBatch mb = subset_batch(all, std::span(order).subspan(start, count), h);
      ad::Tape tape;
      const auto bound = bind_params(tape, result.params);
      const Tensor loss = training_loss(forward(tape, bound, result.params, mb, h, cfg), mb, tcfg.base_weight);
      const double value = loss.value()(0, 0);
      if (!std::isfinite(value)) {
        std::ostringstream msg;
        msg << "training loss became " << value << " at epoch " << epoch << " (batch starting at " << start << ")";
        throw NonFiniteLoss(msg.str());
      }
      tape.backward(loss);
      std::vector<Matrix> grads;
      grads.reserve(bound.size());
      for (const auto& t : bound) grads.push_back(t.grad());
      ad::adam_step(result.params.set(), grads, adam, acfg);
      total += value * static_cast<double>(count);
    }
    result.losses.push_back(total / static_cast<double>(all.size));

    if (validate) {
      ad::Tape tape;
      const auto bound = bind_params(tape, result.params);
      const double v = training_loss(forward(tape, bound, result.params, val, h, cfg), val, tcfg.base_weight).value()(0, 0);
      result.val_losses.push_back(v);
      if (v < best_val) {
        best_val = v;
        best = result.params;
        result.best_epoch = epoch;
      }
    }
  }
  if (validate) result.params = best;
  return result;
}

}  // namespace gmpar
