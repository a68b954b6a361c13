#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "obsflow/errors.hpp"
#include "obsflow/mat.hpp"

namespace obsflow::ad {

struct TensorImpl {
  Mat value;
  bool requires_grad = false;
  // Tape linkage; valid only while epoch matches the live tape's.
  std::uint64_t epoch = 0;
  int node = -1;
};

/// Dense rank-2 f64 tensor. Copies share the underlying buffer, so marking a
/// parameter requires_grad and updating it through value_mut() is visible to
/// every holder. Ops record onto the innermost live Tape when any input is
/// tracked; with no tape in scope they are plain math.
class Tensor {
public:
  Tensor() : impl_(std::make_shared<TensorImpl>()) {}
  explicit Tensor(Mat m, bool requires_grad = false)
      : impl_(std::make_shared<TensorImpl>()) {
    impl_->value = std::move(m);
    impl_->requires_grad = requires_grad;
  }

  static Tensor zeros(std::size_t r, std::size_t c, bool requires_grad = false) {
    return Tensor(Mat(r, c), requires_grad);
  }
  static Tensor scalar(double v) {
    Mat m(1, 1);
    m(0, 0) = v;
    return Tensor(std::move(m));
  }

  const Mat& value() const { return impl_->value; }
  /// Mutable access for optimizer updates; rejects graph intermediates.
  Mat& value_mut() {
    if (impl_->node >= 0 && !impl_->requires_grad)
      throw UsageError("tensor: cannot mutate a graph intermediate");
    return impl_->value;
  }

  std::size_t rows() const { return impl_->value.rows; }
  std::size_t cols() const { return impl_->value.cols; }
  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool b) { impl_->requires_grad = b; }

  const std::shared_ptr<TensorImpl>& impl() const { return impl_; }

private:
  std::shared_ptr<TensorImpl> impl_;
};

/// Reverse-mode tape. Constructing one makes it the innermost live tape for
/// this thread; ops append records in execution order, which is already
/// topological, and backward() replays them once in reverse. A tape is
/// consumed by backward and cannot be reused.
class Tape {
public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Seeds d(loss)/d(loss) = 1 and accumulates gradients for every tracked
  /// node. loss must be 1x1 and tracked on this tape.
  void backward(const Tensor& loss);

  /// Gradient of a tensor registered on this tape (after backward).
  Mat grad(const Tensor& t) const;
  bool tracked(const Tensor& t) const;

  std::uint64_t epoch() const { return epoch_; }
  static Tape* current();

  // Recording interface used by the op implementations.
  int ensure_node(const Tensor& t);
  int attach_result(Tensor& t);
  void record(std::function<void(Tape&)> fn) { records_.push_back(std::move(fn)); }
  Mat& grad_buf(int node) { return grads_[static_cast<std::size_t>(node)]; }
  const Mat& grad_buf(int node) const { return grads_[static_cast<std::size_t>(node)]; }

private:
  int alloc_node(std::size_t r, std::size_t c);

  std::vector<std::function<void(Tape&)>> records_;
  std::vector<Mat> grads_;
  std::uint64_t epoch_;
  bool consumed_ = false;
  Tape* prev_ = nullptr;
};

/// Primitive ops. Shape rules are strict; there is no implicit broadcasting
/// beyond the row-broadcast of add_bias and the per-row scaling of rowmul.

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor concat_cols(const Tensor& a, const Tensor& b);
Tensor slice_cols(const Tensor& a, std::size_t j0, std::size_t j1);
/// out[i][j] = a[i][j] + bias[0][j].
Tensor add_bias(const Tensor& a, const Tensor& bias);
/// out[i][j] = w[i] * a[i][j]; w carries no gradient (quadrature weights).
Tensor rowmul(const Tensor& a, const std::vector<double>& w);
/// out[i][j] = w[j] * a[i][j]; w carries no gradient (channel scales).
Tensor colmul(const Tensor& a, const std::vector<double>& w);
Tensor exp(const Tensor& a);
/// d/dx sqrt at x = 0 is taken as 0 (subgradient choice, keeps losses finite).
Tensor sqrt(const Tensor& a);
Tensor gelu(const Tensor& a);
Tensor tanh_act(const Tensor& a);
Tensor sum_all(const Tensor& a);
Tensor mean_all(const Tensor& a);
Tensor sum_rows(const Tensor& a);
Tensor sum_cols(const Tensor& a);
/// Row-wise max-shifted softmax over columns with fixed nonnegative weights:
/// out[i][j] = w[j] exp(s[i][j] - m_i) / sum_l w[l] exp(s[i][l] - m_i).
/// Rows sum to 1 exactly up to roundoff. Throws NumericalError on non-finite
/// scores and ConfigError on bad weights.
Tensor weighted_softmax(const Tensor& scores, const std::vector<double>& w);
/// Per-row normalization over columns: gamma * (x - mu)/sqrt(var + eps) + beta.
/// gamma and beta are [1 x cols].
Tensor layernorm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                 double eps = 1e-5);

}  // namespace obsflow::ad
