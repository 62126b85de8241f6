#include "gmpar/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "gmpar/errors.hpp"

namespace gmpar::ad {

namespace {

std::string shape_str(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

void require_same_tape(const Tensor& a, const Tensor& b) {
  if (a.tape() == nullptr || a.tape() != b.tape()) throw ShapeMismatch("tensors belong to different tapes");
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  require_same_tape(a, b);
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeMismatch(std::string(op) + ": " + shape_str(a.value()) + " vs " + shape_str(b.value()));
  }
}

// softplus(x) = log(1 + e^x) without overflow.
double softplus_scalar(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }
double sigmoid_scalar(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

const Matrix& Tensor::value() const {
  if (tape_ == nullptr) throw ShapeMismatch("tensor is not attached to a tape");
  return tape_->nodes_[id_].value;
}

Matrix Tensor::grad() const {
  const auto& node = tape_->nodes_[id_];
  if (node.grad.size() == 0) return Matrix::Zero(node.value.rows(), node.value.cols());
  return node.grad;
}

bool Tensor::requires_grad() const { return tape_ != nullptr && tape_->nodes_[id_].requires_grad; }

Tensor Tape::leaf(Matrix value, bool requires_grad) {
  nodes_.push_back(Node{std::move(value), Matrix(), requires_grad, nullptr});
  return Tensor(this, nodes_.size() - 1);
}

Tensor Tape::record(Matrix value, const std::vector<Tensor>& inputs, BackwardFn backward) {
  bool needs = false;
  for (const auto& t : inputs) {
    if (t.tape() != this) throw ShapeMismatch("input recorded on a different tape");
    needs = needs || nodes_[t.id()].requires_grad;
  }
  nodes_.push_back(Node{std::move(value), Matrix(), needs, needs ? std::move(backward) : nullptr});
  return Tensor(this, nodes_.size() - 1);
}

void Tape::accumulate(const Tensor& t, const Matrix& g) {
  auto& node = nodes_[t.id()];
  if (!node.requires_grad) return;
  if (node.grad.size() == 0) {
    node.grad = g;
  } else {
    node.grad += g;
  }
}

void Tape::backward(const Tensor& loss) {
  if (loss.tape() != this) throw ShapeMismatch("loss recorded on a different tape");
  if (loss.rows() != 1 || loss.cols() != 1) {
    throw NonScalarLoss("backward() needs a 1x1 loss, got " + shape_str(loss.value()));
  }
  for (auto& node : nodes_) node.grad.resize(0, 0);
  nodes_[loss.id()].grad = Matrix::Ones(1, 1);
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    auto& node = nodes_[i];
    if (!node.backward || node.grad.size() == 0) continue;
    node.backward(*this, node.grad);
  }
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  return a.tape()->record(a.value() + b.value(), {a, b}, [a, b](Tape& t, const Matrix& g) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  return a.tape()->record(a.value() - b.value(), {a, b}, [a, b](Tape& t, const Matrix& g) {
    t.accumulate(a, g);
    t.accumulate(b, -g);
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  return a.tape()->record(a.value().cwiseProduct(b.value()), {a, b}, [a, b](Tape& t, const Matrix& g) {
    t.accumulate(a, g.cwiseProduct(b.value()));
    t.accumulate(b, g.cwiseProduct(a.value()));
  });
}

Tensor div(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "div");
  return a.tape()->record(a.value().cwiseQuotient(b.value()), {a, b}, [a, b](Tape& t, const Matrix& g) {
    const Matrix& bv = b.value();
    t.accumulate(a, g.cwiseQuotient(bv));
    t.accumulate(b, -g.cwiseProduct(a.value()).cwiseQuotient(bv.cwiseProduct(bv)));
  });
}

Tensor scale(const Tensor& a, double c) {
  return a.tape()->record(a.value() * c, {a}, [a, c](Tape& t, const Matrix& g) { t.accumulate(a, g * c); });
}

Tensor add_scalar(const Tensor& a, double c) {
  return a.tape()->record(a.value().array() + c, {a}, [a](Tape& t, const Matrix& g) { t.accumulate(a, g); });
}

Tensor sigmoid(const Tensor& a) {
  Matrix y = a.value().unaryExpr([](double x) { return sigmoid_scalar(x); });
  return a.tape()->record(y, {a}, [a, y](Tape& t, const Matrix& g) {
    t.accumulate(a, g.array() * y.array() * (1.0 - y.array()));
  });
}

Tensor tanh(const Tensor& a) {
  Matrix y = a.value().array().tanh();
  return a.tape()->record(y, {a}, [a, y](Tape& t, const Matrix& g) {
    t.accumulate(a, g.array() * (1.0 - y.array().square()));
  });
}

Tensor softplus(const Tensor& a) {
  Matrix y = a.value().unaryExpr([](double x) { return softplus_scalar(x); });
  return a.tape()->record(y, {a}, [a](Tape& t, const Matrix& g) {
    t.accumulate(a, g.cwiseProduct(a.value().unaryExpr([](double x) { return sigmoid_scalar(x); })));
  });
}

Tensor relu(const Tensor& a) {
  return a.tape()->record(a.value().cwiseMax(0.0), {a}, [a](Tape& t, const Matrix& g) {
    t.accumulate(a, (a.value().array() > 0.0).select(g, 0.0));
  });
}

Tensor abs(const Tensor& a) {
  return a.tape()->record(a.value().cwiseAbs(), {a}, [a](Tape& t, const Matrix& g) {
    t.accumulate(a, g.cwiseProduct(a.value().unaryExpr([](double x) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); })));
  });
}

Tensor sqrt(const Tensor& a) {
  Matrix y = a.value().cwiseSqrt();
  return a.tape()->record(y, {a}, [a, y](Tape& t, const Matrix& g) {
    t.accumulate(a, 0.5 * g.cwiseQuotient(y));
  });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_same_tape(a, b);
  if (a.cols() != b.rows()) {
    throw ShapeMismatch("matmul: " + shape_str(a.value()) + " * " + shape_str(b.value()));
  }
  return a.tape()->record(a.value() * b.value(), {a, b}, [a, b](Tape& t, const Matrix& g) {
    if (a.requires_grad()) t.accumulate(a, g * b.value().transpose());
    if (b.requires_grad()) t.accumulate(b, a.value().transpose() * g);
  });
}

Tensor add_bias(const Tensor& a, const Tensor& b) {
  require_same_tape(a, b);
  if (b.cols() != 1 || b.rows() != a.rows()) {
    throw ShapeMismatch("add_bias: " + shape_str(a.value()) + " + column " + shape_str(b.value()));
  }
  Matrix y = a.value().colwise() + b.value().col(0);
  return a.tape()->record(std::move(y), {a, b}, [a, b](Tape& t, const Matrix& g) {
    t.accumulate(a, g);
    t.accumulate(b, g.rowwise().sum());
  });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeMismatch("concat_rows of nothing");
  const Eigen::Index cols = parts.front().cols();
  Eigen::Index rows = 0;
  for (const auto& p : parts) {
    require_same_tape(parts.front(), p);
    if (p.cols() != cols) throw ShapeMismatch("concat_rows: column counts differ");
    rows += p.rows();
  }
  Matrix y(rows, cols);
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    y.middleRows(at, p.rows()) = p.value();
    at += p.rows();
  }
  return parts.front().tape()->record(std::move(y), parts, [parts](Tape& t, const Matrix& g) {
    Eigen::Index off = 0;
    for (const auto& p : parts) {
      t.accumulate(p, g.middleRows(off, p.rows()));
      off += p.rows();
    }
  });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeMismatch("concat_cols of nothing");
  const Eigen::Index rows = parts.front().rows();
  Eigen::Index cols = 0;
  for (const auto& p : parts) {
    require_same_tape(parts.front(), p);
    if (p.rows() != rows) throw ShapeMismatch("concat_cols: row counts differ");
    cols += p.cols();
  }
  Matrix y(rows, cols);
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    y.middleCols(at, p.cols()) = p.value();
    at += p.cols();
  }
  return parts.front().tape()->record(std::move(y), parts, [parts](Tape& t, const Matrix& g) {
    Eigen::Index off = 0;
    for (const auto& p : parts) {
      t.accumulate(p, g.middleCols(off, p.cols()));
      off += p.cols();
    }
  });
}

Tensor slice_rows(const Tensor& a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > a.rows()) throw ShapeMismatch("slice_rows out of range");
  const Eigen::Index rows = a.rows();
  return a.tape()->record(a.value().middleRows(start, count), {a},
                          [a, start, count, rows](Tape& t, const Matrix& g) {
                            Matrix full = Matrix::Zero(rows, g.cols());
                            full.middleRows(start, count) = g;
                            t.accumulate(a, full);
                          });
}

Tensor slice_cols(const Tensor& a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > a.cols()) throw ShapeMismatch("slice_cols out of range");
  const Eigen::Index cols = a.cols();
  return a.tape()->record(a.value().middleCols(start, count), {a},
                          [a, start, count, cols](Tape& t, const Matrix& g) {
                            Matrix full = Matrix::Zero(g.rows(), cols);
                            full.middleCols(start, count) = g;
                            t.accumulate(a, full);
                          });
}

Tensor reshape(const Tensor& a, Eigen::Index rows, Eigen::Index cols) {
  if (rows * cols != a.value().size()) throw ShapeMismatch("reshape changes the element count");
  const Eigen::Index r0 = a.rows();
  const Eigen::Index c0 = a.cols();
  return a.tape()->record(a.value().reshaped(rows, cols), {a}, [a, r0, c0](Tape& t, const Matrix& g) {
    t.accumulate(a, g.reshaped(r0, c0));
  });
}

Tensor tile_cols(const Tensor& a, Eigen::Index reps) {
  if (reps <= 0) throw ShapeMismatch("tile_cols needs a positive repeat count");
  const Eigen::Index c = a.cols();
  return a.tape()->record(a.value().replicate(1, reps), {a}, [a, c, reps](Tape& t, const Matrix& g) {
    Matrix acc = Matrix::Zero(g.rows(), c);
    for (Eigen::Index r = 0; r < reps; ++r) acc += g.middleCols(r * c, c);
    t.accumulate(a, acc);
  });
}

Tensor sum(const Tensor& a) {
  Matrix y(1, 1);
  y(0, 0) = a.value().sum();
  return a.tape()->record(std::move(y), {a}, [a](Tape& t, const Matrix& g) {
    t.accumulate(a, Matrix::Constant(a.rows(), a.cols(), g(0, 0)));
  });
}

Tensor mean(const Tensor& a) {
  const double count = static_cast<double>(a.value().size());
  if (count == 0) throw ShapeMismatch("mean of an empty tensor");
  Matrix y(1, 1);
  y(0, 0) = a.value().sum() / count;
  return a.tape()->record(std::move(y), {a}, [a, count](Tape& t, const Matrix& g) {
    t.accumulate(a, Matrix::Constant(a.rows(), a.cols(), g(0, 0) / count));
  });
}

Tensor max_reduce(const Tensor& a) {
  const Matrix& v = a.value();
  if (v.size() == 0) throw ShapeMismatch("max_reduce of an empty tensor");
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < v.size(); ++i) {
    if (v.data()[i] > v.data()[best]) best = i;
  }
  Matrix y(1, 1);
  y(0, 0) = v.data()[best];
  return a.tape()->record(std::move(y), {a}, [a, best](Tape& t, const Matrix& g) {
    Matrix full = Matrix::Zero(a.rows(), a.cols());
    full.data()[best] = g(0, 0);
    t.accumulate(a, full);
  });
}

Tensor conv1d(const Tensor& input, const Tensor& kernel, const Tensor& bias) {
  require_same_tape(input, kernel);
  require_same_tape(input, bias);
  const Eigen::Index c_in = input.rows();
  const Eigen::Index steps = input.cols();
  const Eigen::Index c_out = kernel.rows();
  if (c_in == 0 || kernel.cols() % c_in != 0) {
    throw ShapeMismatch("conv1d: kernel " + shape_str(kernel.value()) + " incompatible with " + std::to_string(c_in) +
                        " input channels");
  }
  if (bias.rows() != c_out || bias.cols() != 1) throw ShapeMismatch("conv1d: bias must be C_out x 1");
  const Eigen::Index width = kernel.cols() / c_in;

  const Matrix& x = input.value();
  const Matrix& w = kernel.value();
  Matrix y = bias.value().replicate(1, steps);
  for (Eigen::Index t = 0; t < steps; ++t) {
    for (Eigen::Index s = 0; s < width; ++s) {
      const Eigen::Index src = t - width + 1 + s;
      if (src < 0) continue;
      y.col(t).noalias() += w.middleCols(s * c_in, c_in) * x.col(src);
    }
  }
  return input.tape()->record(std::move(y), {input, kernel, bias},
                              [input, kernel, bias, c_in, width, steps](Tape& tp, const Matrix& g) {
                                const Matrix& xv = input.value();
                                const Matrix& wv = kernel.value();
                                Matrix gx = Matrix::Zero(xv.rows(), xv.cols());
                                Matrix gw = Matrix::Zero(wv.rows(), wv.cols());
                                for (Eigen::Index t = 0; t < steps; ++t) {
                                  for (Eigen::Index s = 0; s < width; ++s) {
                                    const Eigen::Index src = t - width + 1 + s;
                                    if (src < 0) continue;
                                    gw.middleCols(s * c_in, c_in).noalias() += g.col(t) * xv.col(src).transpose();
                                    gx.col(src).noalias() += wv.middleCols(s * c_in, c_in).transpose() * g.col(t);
                                  }
                                }
                                tp.accumulate(input, gx);
                                tp.accumulate(kernel, gw);
                                tp.accumulate(bias, g.rowwise().sum());
                              });
}

Tensor group_weighted_sum(const Tensor& x, const Tensor& w) {
  require_same_tape(x, w);
  const Eigen::Index m = w.rows();
  if (w.cols() != 1 || m == 0 || x.cols() % m != 0) {
    throw ShapeMismatch("group_weighted_sum: " + shape_str(x.value()) + " with weights " + shape_str(w.value()));
  }
  const Eigen::Index groups = x.cols() / m;
  const Matrix& xv = x.value();
  const Matrix& wv = w.value();
  Matrix y = Matrix::Zero(xv.rows(), groups);
  for (Eigen::Index g = 0; g < groups; ++g) {
    for (Eigen::Index l = 0; l < m; ++l) y.col(g) += wv(l, 0) * xv.col(g * m + l);
  }
  return x.tape()->record(std::move(y), {x, w}, [x, w, m, groups](Tape& t, const Matrix& g) {
    const Matrix& xv = x.value();
    const Matrix& wv = w.value();
    Matrix gx(xv.rows(), xv.cols());
    Matrix gw = Matrix::Zero(m, 1);
    for (Eigen::Index k = 0; k < groups; ++k) {
      for (Eigen::Index l = 0; l < m; ++l) {
        gx.col(k * m + l) = wv(l, 0) * g.col(k);
        gw(l, 0) += g.col(k).dot(xv.col(k * m + l));
      }
    }
    t.accumulate(x, gx);
    t.accumulate(w, gw);
  });
}

void adam_step(ParamSet& params, const std::vector<Matrix>& grads, AdamState& state, const AdamConfig& cfg) {
  if (grads.size() != params.size()) throw ShapeMismatch("gradient count does not match parameter count");
  if (state.m.size() != params.size()) {
    state.m.clear();
    state.v.clear();
    for (const auto& p : params) {
      state.m.push_back(Matrix::Zero(p.value.rows(), p.value.cols()));
      state.v.push_back(Matrix::Zero(p.value.rows(), p.value.cols()));
    }
    state.step = 0;
  }
  ++state.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i].value;
    const auto& g = grads[i];
    if (g.rows() != p.rows() || g.cols() != p.cols()) {
      throw ShapeMismatch("gradient for '" + params[i].name + "' is " + shape_str(g) + ", parameter is " +
                          shape_str(p));
    }
    state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
    state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g.cwiseAbs2();
    const Matrix m_hat = state.m[i] / bc1;
    const Matrix v_hat = state.v[i] / bc2;
    p.array() -= cfg.lr * m_hat.array() / (v_hat.array().sqrt() + cfg.eps);
  }
}

}  // namespace gmpar::ad
