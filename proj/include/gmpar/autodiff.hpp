#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace gmpar::ad {

using Matrix = Eigen::MatrixXd;

class Tape;

/// Handle to a value recorded on a Tape. Values are dense column-major
/// matrices; vectors are n x 1 and scalars 1 x 1.
class Tensor {
 public:
  Tensor() = default;

  const Matrix& value() const;
  /// Gradient after Tape::backward; zero if the tensor did not reach the loss.
  Matrix grad() const;

  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  bool requires_grad() const;
  Tape* tape() const noexcept { return tape_; }
  std::size_t id() const noexcept { return id_; }

 private:
  friend class Tape;
  Tensor(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Records one forward pass. Single-threaded; discard after backward().
class Tape {
 public:
  /// Propagates the upstream gradient `g` (shape of the output) into the
  /// inputs by calling accumulate().
  using BackwardFn = std::function<void(Tape&, const Matrix& g)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Tensor leaf(Matrix value, bool requires_grad = true);
  Tensor constant(Matrix value) { return leaf(std::move(value), false); }

  /// Records an op with a hand-written backward. The node requires a
  /// gradient iff any input does.
  Tensor record(Matrix value, const std::vector<Tensor>& inputs, BackwardFn backward);

  /// Adds `g` into the gradient slot of `t` (no-op for constants).
  void accumulate(const Tensor& t, const Matrix& g);

  /// Reverse sweep from a 1 x 1 loss. Throws NonScalarLoss.
  void backward(const Tensor& loss);

  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  friend class Tensor;
  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
};

// Elementwise (identical shapes).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor add_scalar(const Tensor& a, double c);

Tensor sigmoid(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor softplus(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor abs(const Tensor& a);
Tensor sqrt(const Tensor& a);

Tensor matmul(const Tensor& a, const Tensor& b);
/// a (d x c) plus a column b (d x 1) broadcast over columns.
Tensor add_bias(const Tensor& a, const Tensor& b);

Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor slice_rows(const Tensor& a, Eigen::Index start, Eigen::Index count);
Tensor slice_cols(const Tensor& a, Eigen::Index start, Eigen::Index count);
/// Column-major reinterpretation.
Tensor reshape(const Tensor& a, Eigen::Index rows, Eigen::Index cols);
/// [a a ... a] with `reps` copies side by side.
Tensor tile_cols(const Tensor& a, Eigen::Index reps);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
/// Largest entry; the gradient goes to the first maximal entry (column-major).
Tensor max_reduce(const Tensor& a);

/// Causal multi-channel convolution. input: C_in x T, kernel: C_out x
/// (K * C_in) laid out as K blocks of C_in columns (oldest tap first),
/// bias: C_out x 1. out[:, t] = sum_s W_s x[:, t - K + 1 + s] + bias, zero
/// padding before t = 0.
Tensor conv1d(const Tensor& input, const Tensor& kernel, const Tensor& bias);

/// x: d x (G * m), w: m x 1. out[:, g] = sum_l w_l x[:, g * m + l], i.e. a
/// stride-m convolution with one scalar tap per group member.
Tensor group_weighted_sum(const Tensor& x, const Tensor& w);

/// Named, ordered set of trainable matrices.
struct NamedParam {
  std::string name;
  Matrix value;
};
using ParamSet = std::vector<NamedParam>;

struct AdamConfig {
  double lr = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// First/second moment estimates matching a ParamSet.
struct AdamState {
  std::vector<Matrix> m;
  std::vector<Matrix> v;
  long step = 0;
};

/// One Adam update in place. `grads[i]` must have the shape of params[i].
/// Throws ShapeMismatch.
void adam_step(ParamSet& params, const std::vector<Matrix>& grads, AdamState& state, const AdamConfig& cfg);

}  // namespace gmpar::ad
