#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "gmpar/autodiff.hpp"
#include "gmpar/hierarchy.hpp"
#include "gmpar/transform.hpp"

namespace gmpar {

struct GmpConfig {
  std::size_t hidden_size = 32;
  std::size_t child_mlp_hidden = 16;
  std::size_t fusion_kernel_width = 3;
  /// Past root periods fed to the recurrent units.
  std::size_t context_length = 4;
  std::size_t head_hidden = 32;
  std::size_t embedding_dim = 4;
  double weight_floor = 1e-3;
  double root_eps = kDefaultRootEps;

  /// Throws ConfigError.
  void validate() const;
};

/// Trainable weights, stored flat and addressed by name:
///   gru.<k>.{W,U,b}            recurrent unit of level k (gates z, r, candidate stacked)
///   child.<k>.{W1,b1,W2,b2}    child-distribution MLP of upper level k
///   fuse.<k>                   m_k scalar child weights of upper level k
///   conv.{W,b}                 shared temporal/hierarchical fusion
///   embed                      embedding_dim x n node embeddings
///   fhead.*, whead.*           forecast and weight heads
class GmpParams {
 public:
  GmpParams() = default;
  /// Uniform(-a, a) with a = 1/sqrt(fan_in); child weights start at 1/m_k.
  static GmpParams init(const TemporalHierarchy& h, const GmpConfig& cfg, std::uint64_t seed);

  ad::ParamSet& set() { return set_; }
  const ad::ParamSet& set() const { return set_; }
  std::size_t index(const std::string& name) const;
  Matrix& at(const std::string& name) { return set_[index(name)].value; }
  const Matrix& at(const std::string& name) const { return set_[index(name)].value; }
  std::size_t num_scalars() const;

  /// Versioned binary format: "GMPAR01", u32 section count, then per
  /// section a u32-length-prefixed name, u64 element count and raw doubles
  /// (little endian).
  void save(const std::filesystem::path& path) const;
  /// Reads into the layout implied by (h, cfg). Throws FormatError when
  /// the file does not match it.
  static GmpParams load(const std::filesystem::path& path, const TemporalHierarchy& h, const GmpConfig& cfg);

 private:
  void add(std::string name, Matrix value);
  ad::ParamSet set_;
  std::unordered_map<std::string, std::size_t> lookup_;
};

/// Precomputed network inputs for a batch of B windows. Level-k quantities
/// have B * n_k columns ordered window-major (column b * n_k + j).
struct GmpBatch {
  std::size_t size = 0;
  /// features[t][k]: [alpha padded; mask; scaled value], (2(p-1)+1) rows.
  std::vector<std::vector<Matrix>> features;
  /// child_props[t][k] for upper levels: m_k x (B n_k) child fractions.
  std::vector<std::vector<Matrix>> child_props;
  /// n x B per-node level scale of each window.
  Matrix scale;
  /// n x B next-period values; empty for forecasting.
  Matrix target;
  /// Root period index of the last observation in each window.
  std::vector<std::size_t> ends;
};

/// Window b covers series[ends[b] - C + 1 .. ends[b]] and (if with_target)
/// predicts series[ends[b] + 1]. Throws InsufficientHistory.
GmpBatch make_batch(std::span<const HierVector> series, std::span<const std::size_t> ends, const TemporalHierarchy& h,
                    const GmpConfig& cfg, bool with_target = true);

struct GruParams {
  ad::Tensor W, U, b;
};
struct MlpParams {
  ad::Tensor W1, b1, W2, b2;
};

/// W2 tanh(W1 x + b1) + b2 applied column-wise.
ad::Tensor mlp(const ad::Tensor& x, const MlpParams& p);

/// Child-distribution features: one child_mlp_hidden vector per column of
/// the m_k x cols proportion matrix.
ad::Tensor child_distribution_features(const ad::Tensor& child_props, const MlpParams& p);

ad::Tensor gru_cell(const ad::Tensor& x, const ad::Tensor& h, const GruParams& p);

/// Unrolls the recurrent unit from a zero state; returns the state after
/// every step.
std::vector<ad::Tensor> temporal_extract(const std::vector<ad::Tensor>& inputs, const GruParams& p);

/// hhat[:, g] = sum_l w_l child_h[:, g m + l].
ad::Tensor child_fusion(const ad::Tensor& child_h, const ad::Tensor& weights);

/// Causal convolution over the stacked [h; hhat] history, last step only.
/// `kernel` is H x (K * 2H), oldest tap first.
ad::Tensor temporal_hier_fusion(const std::vector<ad::Tensor>& h_hist, const std::vector<ad::Tensor>& hhat_hist,
                                const ad::Tensor& kernel, const ad::Tensor& bias);

struct HeadOutput {
  ad::Tensor forecast;  ///< 1 x cols, scaled space
  ad::Tensor weight;    ///< 1 x cols, >= weight_floor
};

HeadOutput heads(const ad::Tensor& htilde, const ad::Tensor& embedding, const MlpParams& fhead, const MlpParams& whead,
                 double weight_floor);

struct GmpOutput {
  ad::Tensor yhat;        ///< n x B base forecasts (original scale)
  ad::Tensor w;           ///< n x B reconciliation weights
  ad::Tensor reconciled;  ///< n x B coherent forecasts
};

/// Binds every parameter as a tape leaf, in set() order.
std::vector<ad::Tensor> bind_params(ad::Tape& tape, const GmpParams& params);

GmpOutput forward(ad::Tape& tape, const std::vector<ad::Tensor>& bound, const GmpParams& params, const GmpBatch& batch,
                  const TemporalHierarchy& h, const GmpConfig& cfg);

/// mean |rec - y| / scale + base_weight * mean |yhat - y| / scale.
ad::Tensor training_loss(const GmpOutput& out, const GmpBatch& batch, double base_weight = 0.5);

struct GmpPrediction {
  Matrix yhat;
  Matrix w;
  Matrix reconciled;
};

GmpPrediction predict(const GmpParams& params, const GmpBatch& batch, const TemporalHierarchy& h, const GmpConfig& cfg);

struct TrainConfig {
  std::size_t epochs = 200;
  double lr = 1e-2;
  /// 0 means full batch.
  std::size_t batch_size = 32;
  double base_weight = 0.5;
  std::uint64_t seed = 0;
};

struct TrainResult {
  GmpParams params;
  std::vector<double> losses;
  /// Filled when validation windows are given; params are then the ones
  /// with the lowest validation loss.
  std::vector<double> val_losses;
  std::size_t best_epoch = 0;
};

/// Adam on the training loss. Throws NonFiniteLoss.
TrainResult train(std::span<const HierVector> series, std::span<const std::size_t> train_ends,
                  const TemporalHierarchy& h, const GmpConfig& cfg, const TrainConfig& tcfg,
                  std::span<const std::size_t> val_ends = {});

}  // namespace gmpar
