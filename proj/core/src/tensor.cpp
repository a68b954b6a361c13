#include "obsflow/tensor.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Core>

namespace obsflow::ad {

namespace {

thread_local Tape* g_current = nullptr;
thread_local std::uint64_t g_epoch = 0;

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CMap = Eigen::Map<const EMat>;
using MMap = Eigen::Map<EMat>;

CMap emap(const Mat& m) {
  return CMap(m.a.data(), static_cast<Eigen::Index>(m.rows),
              static_cast<Eigen::Index>(m.cols));
}
MMap emap(Mat& m) {
  return MMap(m.a.data(), static_cast<Eigen::Index>(m.rows),
              static_cast<Eigen::Index>(m.cols));
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ConfigError(std::string(op) + ": shape mismatch");
}

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

}  // namespace

Tape::Tape() : epoch_(++g_epoch), prev_(g_current) { g_current = this; }

Tape::~Tape() { g_current = prev_; }

Tape* Tape::current() { return g_current; }

int Tape::alloc_node(std::size_t r, std::size_t c) {
  grads_.emplace_back(r, c);
  return static_cast<int>(grads_.size()) - 1;
}

int Tape::ensure_node(const Tensor& t) {
  TensorImpl& impl = *t.impl();
  if (impl.epoch == epoch_) return impl.node;
  if (!impl.requires_grad) return -1;
  impl.node = alloc_node(impl.value.rows, impl.value.cols);
  impl.epoch = epoch_;
  return impl.node;
}

int Tape::attach_result(Tensor& t) {
  TensorImpl& impl = *t.impl();
  impl.node = alloc_node(impl.value.rows, impl.value.cols);
  impl.epoch = epoch_;
  return impl.node;
}

bool Tape::tracked(const Tensor& t) const {
  return t.impl()->epoch == epoch_ && t.impl()->node >= 0;
}

void Tape::backward(const Tensor& loss) {
  if (consumed_) throw UsageError("tape: backward called twice");
  if (loss.rows() != 1 || loss.cols() != 1)
    throw UsageError("tape: backward needs a scalar loss");
  if (!tracked(loss))
    throw UsageError("tape: loss does not depend on any tracked tensor");
  consumed_ = true;
  grad_buf(loss.impl()->node)(0, 0) = 1.0;
  for (auto it = records_.rbegin(); it != records_.rend(); ++it) (*it)(*this);
}

Mat Tape::grad(const Tensor& t) const {
  if (!tracked(t)) throw UsageError("tape: tensor is not tracked on this tape");
  return grad_buf(t.impl()->node);
}

namespace {

/// Shared recording pattern: if any input is tracked on the live tape, attach
/// the result and record a closure receiving (tape, output node).
template <class Fn>
void maybe_record(Tensor& out, std::initializer_list<const Tensor*> inputs, Fn&& fn) {
  Tape* tp = Tape::current();
  if (!tp) return;
  bool any = false;
  for (const Tensor* t : inputs)
    if (tp->ensure_node(*t) >= 0) any = true;
  if (!any) return;
  const int no = tp->attach_result(out);
  tp->record([fn = std::forward<Fn>(fn), no](Tape& t) { fn(t, no); });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  Mat m(a.rows(), a.cols());
  for (std::size_t i = 0; i < m.a.size(); ++i) m.a[i] = a.value().a[i] + b.value().a[i];
  Tensor out(std::move(m));
  auto ia = a.impl(), ib = b.impl();
  maybe_record(out, {&a, &b}, [ia, ib](Tape& t, int no) {
    const Mat& go = t.grad_buf(no);
    if (ia->epoch == t.epoch() && ia->node >= 0) {
      Mat& g = t.grad_buf(ia->node);
      for (std::size_t i = 0; i < g.a.size(); ++i) g.a[i] += go.a[i];
    }
    if (ib->epoch == t.epoch() && ib->node >= 0) {
      Mat& g = t.grad_buf(ib->node);
      for (std::size_t i = 0; i < g.a.size(); ++i) g.a[i] += go.a[i];
    }
  });
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  Mat m(a.rows(), a.cols());
  for (std::size_t i = 0; i < m.a.size(); ++i) m.a[i] = a.value().a[i] - b.value().a[i];
  Tensor out(std::move(m));
  auto ia = a.impl(), ib = b.impl();
  maybe_record(out, {&a, &b}, [ia, ib](Tape& t, int no) {
    const Mat& go = t.grad_buf(no);
    if (ia->epoch == t.epoch() && ia->node >= 0) {
      Mat& g = t.grad_buf(ia->node);
      for (std::size_t i = 0; i < g.a.size(); ++i) g.a[i] += go.a[i];
    }
    if (ib->epoch == t.epoch() && ib->node >= 0) {
      Mat& g = t.grad_buf(ib->node);
      for (std::size_t i = 0; i < g.a.size(); ++i) g.a[i] -= go.a[i];
    }
  });
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  Mat m(a.rows(), a.cols());
  for (std::size_t i = 0; i < m.a.size(); ++i) m.a[i] = a.value().a[i] * b.value().a[i];
  Tensor out(std::move(m));
  auto ia = a.impl(), ib = b.impl();
  maybe_record(out, {&a, &b}, [ia, ib](Tape& t, int no) {
    const Mat& go = t.grad_buf(no);
    if (ia->epoch == t.epoch() && ia->node >= 0) {
      Mat& g = t.grad_buf(ia->node);
      for (std::size_t i = 0; i < g.a.size(); ++i) g.a[i] += go.a[i] * ib->value.a[i];
    }
    if (ib->epoch == t.epoch() && ib->node >= 0) {
      Mat& g = t.grad_buf(ib->node);
      for (std::size_t i = 0; i < g.a.size(); ++i) g.a[i] += go.a[i] * ia->value.a[i];
    }
  });
  return out;
}

Tensor scale(const Tensor& a, double s) {
  Mat m(a.rows(), a.cols());
  for (std::size_t i = 0; i < m.a.size(); ++i) m.a[i] = s * a.value().a[i];
  Tensor out(std::move(m));
  auto ia = a.impl();
  maybe_record(out, {&a}, [ia, s](Tape& t, int no) {
    const Mat& go = t.grad_buf(no);
    Mat& g = t.grad_buf(ia->node);
    for (std::size_t i = 0; i < g.a.size(); ++i) g.a[i] += s * go.a[i];
  });
  return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) throw ConfigError("matmul: inner dimensions disagree");
  Mat m(a.rows(), b.cols());
  emap(m).noalias() = emap(a.value()) * emap(b.value());
  Tensor out(std::move(m));
  auto ia = a.impl(), ib = b.impl();
  maybe_record(out, {&a, &b}, [ia, ib](Tape& t, int no) {
    const Mat& go = t.grad_buf(no);
    if (ia->epoch == t.epoch() && ia->node >= 0)
      emap(t.grad_buf(ia->node)).noalias() += emap(go) * emap(ib->value).transpose();
    if (ib->epoch == t.epoch() && ib->node >= 0)
      emap(t.grad_buf(ib->node)).noalias() += emap(ia->value).transpose() * emap(go);
  });
  return out;
}

Tensor transpose(const Tensor& a) {
  Mat m(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) m(j, i) = a.value()(i, j);
  Tensor out(std::move(m));
  auto ia = a.impl();
  maybe_record(out, {&a}, [ia](Tape& t, int no) {
    const Mat& go = t.grad_buf(no);
    Mat& g = t.grad_buf(ia->node);
    for (std::size_t i = 0; i < g.rows; ++i)
      for (std::size_t j = 0; j < g.cols; ++j) g(i, j) += go(j, i);
  });
  return out;
}

Tensor concat_cols(const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows()) throw ConfigError("concat_cols: row counts disagree");
  Mat m(a.rows(), a.cols() + b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < a.cols(); ++j) m(i, j) = a.value()(i, j);
    for (std::size_t j = 0; j < b.cols(); ++j) m(i, a.cols() + j) = b.value()(i, j);
  }
  Tensor out(std::move(m));
  auto ia = a.impl(), ib = b.impl();
  const std::size_t ac = a.cols();
  maybe_record(out, {&a, &b}, [ia, ib, ac](Tape& t, int no) {
    const Mat& go = t.grad_buf(no);
    if (ia->epoch == t.epoch() && ia->node >= 0) {
      Mat& g = t.grad_buf(ia->node);
      for (std::size_t i = 0; i < g.rows; ++i)
        for (std::size_t j = 0; j < g.cols; ++j) g(i, j) += go(i, j);
    }
    if (ib->epoch == t.epoch() && ib->node >= 0) {
      Mat& g = t.grad_buf(ib->node);
      for (std::size_t i = 0; i < g.rows; ++i)
        for (std::size_t j = 0; j < g.cols; ++j) g(i, j) += go(i, ac + j);
    }
  });
  return out;
}

Tensor slice_cols(const Tensor& a, std::size_t j0, std::size_t j1) {
  if (j0 >= j1 || j1 > a.cols()) throw ConfigError("slice_cols: bad column range");
  Mat m(a.rows(), j1 - j0);
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = j0; j < j1; ++j) m(i, j - j0) = a.value()(i, j);
  Tensor out(std::move(m));
  auto ia = a.impl();
  maybe_record(out, {&a}, [ia, j0](Tape& t, int no) {
    const Mat& go = t.grad_buf(no);
    Mat& g = t.grad_buf(ia->node);
    for (std::size_t i = 0; i < go.rows; ++i)
      for (std::size_t j = 0; j < go.cols; ++j) g(i, j0 + j) += go(i, j);
  });
  return out;
}

Tensor add_bias(const Tensor& a, const Tensor& bias) {
  if (bias.rows() != 1 || bias.cols() != a.cols())
    throw ConfigError("add_bias: bias must be [1 x cols]");
  Mat m(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j)
      m(i, j) = a.value()(i, j) + bias.value()(0, j);
  Tensor out(std::move(m));
  auto ia = a.impl(), ib = bias.impl();
  maybe_record(out, {&a, &bias}, [ia, ib](Tape& t, int no) {
    const Mat& go = t.grad_buf(no);
    if (ia->epoch == t.epoch() && ia->node >= 0) {
      Mat& g = t.grad_buf(ia->node);
      for (std::size_t i = 0; i < g.a.size(); ++i) g.a[i] += go.a[i];
    }
    if (ib->epoch == t.epoch() && ib->node >= 0) {
      Mat& g = t.grad_buf(ib->node);
      for (std::size_t i = 0; i < go.rows; ++i)
        for (std::size_t j = 0; j < go.cols; ++j) g(0, j) += go(i, j);
    }
  });
  return out;
}

Tensor rowmul(const Tensor& a, const std::vector<double>& w) {
  if (w.size() != a.rows()) throw ConfigError("rowmul: weight length must equal rows");
  Mat m(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) m(i, j) = w[i] * a.value()(i, j);
  Tensor out(std::move(m));
  auto ia = a.impl();
  maybe_record(out, {&a}, [ia, w](Tape& t, int no) {
    const Mat& go = t.grad_buf(no);
    Mat& g = t.grad_buf(ia->node);
    for (std::size_t i = 0; i < g.rows; ++i)
      for (std::size_t j = 0; j < g.cols; ++j) g(i, j) += w[i] * go(i, j);
  });
  return out;
}

Tensor colmul(const Tensor& a, const std::vector<double>& w) {
  if (w.size() != a.cols()) throw ConfigError("colmul: weight length must equal cols");
  Mat m(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) m(i, j) = w[j] * a.value()(i, j);
  Tensor out(std::move(m));
  auto ia = a.impl();
  maybe_record(out, {&a}, [ia, w](Tape& t, int no) {
    const Mat& go = t.grad_buf(no);
    Mat& g = t.grad_buf(ia->node);
    for (std::size_t i = 0; i < g.rows; ++i)
      for (std::size_t j = 0; j < g.cols; ++j) g(i, j) += w[j] * go(i, j);
  });
  return out;
}

namespace {

template <class F, class DF>
Tensor unary_elementwise(const Tensor& a, F f, DF df_from_saved, bool save_output) {
  Mat m(a.rows(), a.cols());
  for (std::size_t i = 0; i < m.a.size(); ++i) m.a[i] = f(a.value().a[i]);
  Tensor out(std::move(m));
  auto ia = a.impl();
  auto io = out.impl();
  maybe_record(out, {&a},
               [ia, io, df_from_saved, save_output](Tape& t, int no) {
                 const Mat& go = t.grad_buf(no);
                 Mat& g = t.grad_buf(ia->node);
                 const Mat& saved = save_output ? io->value : ia->value;
                 for (std::size_t i = 0; i < g.a.size(); ++i)
                   g.a[i] += go.a[i] * df_from_saved(saved.a[i]);
               });
  return out;
}

}  // namespace

Tensor exp(const Tensor& a) {
  return unary_elementwise(
      a, [](double x) { return std::exp(x); }, [](double y) { return y; }, true);
}

Tensor sqrt(const Tensor& a) {
  for (double v : a.value().a)
    if (v < 0.0) throw NumericalError("sqrt: negative input");
  return unary_elementwise(
      a, [](double x) { return std::sqrt(x); },
      [](double y) { return y > 0.0 ? 0.5 / y : 0.0; }, true);
}

Tensor gelu(const Tensor& a) {
  return unary_elementwise(
      a, [](double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); },
      [](double x) {
        return 0.5 * (1.0 + std::erf(x * kInvSqrt2)) +
               x * kInvSqrt2Pi * std::exp(-0.5 * x * x);
      },
      false);
}

Tensor tanh_act(const Tensor& a) {
  return unary_elementwise(
      a, [](double x) { return std::tanh(x); },
      [](double y) { return 1.0 - y * y; }, true);
}

Tensor sum_all(const Tensor& a) {
  Mat m(1, 1);
  for (double v : a.value().a) m(0, 0) += v;
  Tensor out(std::move(m));
  auto ia = a.impl();
  maybe_record(out, {&a}, [ia](Tape& t, int no) {
    const double go = t.grad_buf(no)(0, 0);
    Mat& g = t.grad_buf(ia->node);
    for (double& v : g.a) v += go;
  });
  return out;
}

Tensor mean_all(const Tensor& a) {
  if (a.value().a.empty()) throw ConfigError("mean_all: empty tensor");
  const double inv = 1.0 / static_cast<double>(a.value().a.size());
  Mat m(1, 1);
  for (double v : a.value().a) m(0, 0) += v;
  m(0, 0) *= inv;
  Tensor out(std::move(m));
  auto ia = a.impl();
  maybe_record(out, {&a}, [ia, inv](Tape& t, int no) {
    const double go = t.grad_buf(no)(0, 0) * inv;
    Mat& g = t.grad_buf(ia->node);
    for (double& v : g.a) v += go;
  });
  return out;
}

Tensor sum_rows(const Tensor& a) {
  Mat m(1, a.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) m(0, j) += a.value()(i, j);
  Tensor out(std::move(m));
  auto ia = a.impl();
  maybe_record(out, {&a}, [ia](Tape& t, int no) {
    const Mat& go = t.grad_buf(no);
    Mat& g = t.grad_buf(ia->node);
    for (std::size_t i = 0; i < g.rows; ++i)
      for (std::size_t j = 0; j < g.cols; ++j) g(i, j) += go(0, j);
  });
  return out;
}

Tensor sum_cols(const Tensor& a) {
  Mat m(a.rows(), 1);
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) m(i, 0) += a.value()(i, j);
  Tensor out(std::move(m));
  auto ia = a.impl();
  maybe_record(out, {&a}, [ia](Tape& t, int no) {
    const Mat& go = t.grad_buf(no);
    Mat& g = t.grad_buf(ia->node);
    for (std::size_t i = 0; i < g.rows; ++i)
      for (std::size_t j = 0; j < g.cols; ++j) g(i, j) += go(i, 0);
  });
  return out;
}

Tensor weighted_softmax(const Tensor& scores, const std::vector<double>& w) {
  const std::size_t r = scores.rows(), c = scores.cols();
  if (w.size() != c) throw ConfigError("weighted_softmax: weight length must equal cols");
  double wsum = 0.0;
  for (double v : w) {
    if (!(v >= 0.0)) throw ConfigError("weighted_softmax: weights must be nonnegative");
    wsum += v;
  }
  if (!(wsum > 0.0)) throw ConfigError("weighted_softmax: weights sum to zero");

  Mat m(r, c);
  for (std::size_t i = 0; i < r; ++i) {
    double mx = -HUGE_VAL;
    for (std::size_t j = 0; j < c; ++j) {
      const double s = scores.value()(i, j);
      if (!std::isfinite(s)) throw NumericalError("weighted_softmax: non-finite score");
      mx = std::max(mx, s);
    }
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      const double e = w[j] * std::exp(scores.value()(i, j) - mx);
      m(i, j) = e;
      z += e;
    }
    if (!(z > 0.0)) throw NumericalError("weighted_softmax: vanishing normalizer");
    for (std::size_t j = 0; j < c; ++j) m(i, j) /= z;
  }
  Tensor out(std::move(m));
  auto is = scores.impl();
  auto io = out.impl();
  maybe_record(out, {&scores}, [is, io](Tape& t, int no) {
    const Mat& go = t.grad_buf(no);
    const Mat& p = io->value;
    Mat& g = t.grad_buf(is->node);
    for (std::size_t i = 0; i < g.rows; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < g.cols; ++j) dot += go(i, j) * p(i, j);
      for (std::size_t j = 0; j < g.cols; ++j)
        g(i, j) += p(i, j) * (go(i, j) - dot);
    }
  });
  return out;
}

Tensor layernorm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  const std::size_t r = x.rows(), c = x.cols();
  if (c == 0) throw ConfigError("layernorm: empty rows");
  if (gamma.rows() != 1 || gamma.cols() != c || beta.rows() != 1 || beta.cols() != c)
    throw ConfigError("layernorm: gamma/beta must be [1 x cols]");
  if (eps < 0.0) throw ConfigError("layernorm: eps must be nonnegative");

  Mat xhat(r, c);
  std::vector<double> inv_std(r);
  Mat m(r, c);
  for (std::size_t i = 0; i < r; ++i) {
    double mu = 0.0;
    for (std::size_t j = 0; j < c; ++j) mu += x.value()(i, j);
    mu /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      const double d = x.value()(i, j) - mu;
      var += d * d;
    }
    var /= static_cast<double>(c);
    const double denom = std::sqrt(var + eps);
    if (!(denom > 0.0)) throw NumericalError("layernorm: zero variance with eps = 0");
    inv_std[i] = 1.0 / denom;
    for (std::size_t j = 0; j < c; ++j) {
      xhat(i, j) = (x.value()(i, j) - mu) * inv_std[i];
      m(i, j) = gamma.value()(0, j) * xhat(i, j) + beta.value()(0, j);
    }
  }
  Tensor out(std::move(m));
  auto ix = x.impl(), ig = gamma.impl(), ib = beta.impl();
  maybe_record(out, {&x, &gamma, &beta},
               [ix, ig, ib, xhat = std::move(xhat),
                inv_std = std::move(inv_std)](Tape& t, int no) {
                 const Mat& go = t.grad_buf(no);
                 const std::size_t rr = go.rows, cc = go.cols;
                 const double invc = 1.0 / static_cast<double>(cc);
                 if (ig->epoch == t.epoch() && ig->node >= 0) {
                   Mat& g = t.grad_buf(ig->node);
                   for (std::size_t i = 0; i < rr; ++i)
                     for (std::size_t j = 0; j < cc; ++j)
                       g(0, j) += go(i, j) * xhat(i, j);
                 }
                 if (ib->epoch == t.epoch() && ib->node >= 0) {
                   Mat& g = t.grad_buf(ib->node);
                   for (std::size_t i = 0; i < rr; ++i)
                     for (std::size_t j = 0; j < cc; ++j) g(0, j) += go(i, j);
                 }
                 if (ix->epoch == t.epoch() && ix->node >= 0) {
                   Mat& g = t.grad_buf(ix->node);
                   for (std::size_t i = 0; i < rr; ++i) {
                     double mean_dy = 0.0, mean_dyx = 0.0;
                     for (std::size_t j = 0; j < cc; ++j) {
                       const double dy = go(i, j) * ig->value(0, j);
                       mean_dy += dy;
                       mean_dyx += dy * xhat(i, j);
                     }
                     mean_dy *= invc;
                     mean_dyx *= invc;
                     for (std::size_t j = 0; j < cc; ++j) {
                       const double dy = go(i, j) * ig->value(0, j);
                       g(i, j) += inv_std[i] *
                                  (dy - mean_dy - xhat(i, j) * mean_dyx);
                     }
                   }
                 }
               });
  return out;
}

}  // namespace obsflow::ad
