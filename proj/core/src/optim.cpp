#include "obsflow/optim.hpp"

#include <cmath>

namespace obsflow::ad {

bool Adam::step(const Tape& tape,
                const std::vector<std::pair<std::string, Tensor*>>& params,
                double clip_norm) {
  if (m_.empty()) {
    m_.reserve(params.size());
    v_.reserve(params.size());
    for (const auto& [name, p] : params) {
      m_.emplace_back(p->rows(), p->cols());
      v_.emplace_back(p->rows(), p->cols());
    }
  }
  if (m_.size() != params.size())
    throw UsageError("adam: parameter list changed between steps");

  std::vector<Mat> grads;
  grads.reserve(params.size());
  double sq = 0.0;
  for (const auto& [name, p] : params) {
    Mat g = tape.grad(*p);
    for (double x : g.a) {
      if (!std::isfinite(x)) {
        ++rejected_;
        return false;
      }
      sq += x * x;
    }
    grads.push_back(std::move(g));
  }
  if (clip_norm > 0.0) {
    const double norm = std::sqrt(sq);
    if (norm > clip_norm) {
      const double f = clip_norm / norm;
      for (Mat& g : grads)
        for (double& x : g.a) x *= f;
    }
  }

  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t k = 0; k < params.size(); ++k) {
    Mat& theta = params[k].second->value_mut();
    Mat& m = m_[k];
    Mat& v = v_[k];
    const Mat& g = grads[k];
    if (!theta.same_shape(m))
      throw UsageError("adam: parameter shape changed between steps");
    for (std::size_t i = 0; i < theta.a.size(); ++i) {
      m.a[i] = cfg_.beta1 * m.a[i] + (1.0 - cfg_.beta1) * g.a[i];
      v.a[i] = cfg_.beta2 * v.a[i] + (1.0 - cfg_.beta2) * g.a[i] * g.a[i];
      const double mhat = m.a[i] / bc1;
      const double vhat = v.a[i] / bc2;
      theta.a[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
  }
  return true;
}

}  // namespace obsflow::ad
