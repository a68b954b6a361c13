#pragma once

#include <string>
#include <utility>
#include <vector>

#include "obsflow/mat.hpp"
#include "obsflow/tensor.hpp"

namespace obsflow::ad {

struct AdamConfig {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Bias-corrected Adam over an ordered parameter list. Moment buffers are
/// keyed by position, so the list must be identical (same tensors, same
/// order) on every call.
class Adam {
public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  /// Applies one update from the gradients on `tape` (after backward).
  /// clip_norm > 0 rescales all gradients so their global L2 norm is at
  /// most clip_norm. A non-finite gradient rejects the whole step: no
  /// parameter moves, the step count stays, rejected() grows.
  bool step(const Tape& tape, const std::vector<std::pair<std::string, Tensor*>>& params,
            double clip_norm = 0.0);

  long steps() const { return t_; }
  long rejected() const { return rejected_; }
  const AdamConfig& config() const { return cfg_; }

  /// Moment buffers for checkpointing, parallel to the param list.
  std::vector<Mat>& moments1() { return m_; }
  std::vector<Mat>& moments2() { return v_; }
  void set_steps(long t) { t_ = t; }

private:
  AdamConfig cfg_;
  std::vector<Mat> m_, v_;
  long t_ = 0;
  long rejected_ = 0;
};

}  // namespace obsflow::ad
