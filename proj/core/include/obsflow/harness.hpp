#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "obsflow/checkpoint.hpp"
#include "obsflow/io.hpp"
#include "obsflow/mat.hpp"
#include "obsflow/neuralop.hpp"
#include "obsflow/tensor.hpp"

namespace obsflow::harness {

struct TrainConfig {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int batch_size = 32;
  int epochs = 1;           // 0 returns the initialization checkpoint
  std::uint64_t seed = 0;
  double clip_norm = 1.0;   // global-norm gradient clip; 0 disables
  double val_fraction = 0.1;
  int checkpoint_every = 1;  // epochs between validation snapshots

  void validate() const;
  std::string to_json() const;
  static TrainConfig from_json(const std::string& text);
};

/// Quadrature-weighted relative L2 distance over the shared grid, channels
/// flattened: ||pred - truth|| / ||truth||. A zero truth norm is undefined and
/// raises NumericalError.
double relative_l2(const Mat& pred, const Mat& truth, const std::vector<double>& w);
double relative_l2(const nop::GridFunction& pred, const nop::GridFunction& truth);

/// Differentiable counterpart used as the training cost; truth is constant.
ad::Tensor relative_l2_loss(const ad::Tensor& pred, const Mat& truth,
                            const std::vector<double>& w);

struct TrainResult {
  nop::Checkpoint best;            // weights + Adam moments at the best epoch
  std::vector<double> train_loss;  // mean batch loss per epoch
  std::vector<double> val_loss;    // one entry per validation pass
  long best_epoch = 0;             // 0 = initialization
  long rejected_steps = 0;         // Adam steps skipped on non-finite gradients
};

/// Minimizes the mean relative-L2 cost over mini-batches with Adam. The input
/// model config is augmented with per-channel standardization computed from
/// the training split before the model is built. Serial and deterministic for
/// a fixed seed; a non-finite training loss aborts with context. The retained
/// checkpoint is the best-validation one (best train loss when the validation
/// split is empty).
TrainResult train(const nop::ModelConfig& config, const data::Dataset& dataset,
                  const TrainConfig& tc);

/// Continues training from a checkpoint on the same task: weights, Adam
/// moments, and the step count all restore before the new epochs run. The
/// checkpoint's standardization is kept as-is.
TrainResult train_resume(const nop::Checkpoint& from, const data::Dataset& dataset,
                         const TrainConfig& tc);

struct EvalReport {
  std::vector<double> per_sample;  // relative L2 per test sample
  double mean = 0.0;
  double median = 0.0;
  double stddev = 0.0;  // sample standard deviation (N-1)
  double min = 0.0;
  double max = 0.0;
  std::optional<double> baseline_mean;
  std::optional<double> improvement_pct;  // 100 * (1 - mean/baseline_mean)
  double runtime_seconds = 0.0;
  std::uint64_t task_hash = 0;
  std::uint64_t model_hash = 0;  // 0 for model-free reports (baseline)
};

/// Statistics pipeline over externally produced predictions; the oracle path
/// for tests and the shared tail of evaluate/constant_baseline.
EvalReport evaluate_predictions(const std::vector<Mat>& preds, const data::Dataset& test);

/// Runs the checkpointed model over the test set. The checkpoint's task hash
/// must match the dataset's unless explicitly overridden. Parallel across
/// samples; the report is identical for any thread count.
EvalReport evaluate(const nop::Checkpoint& ckpt, const data::Dataset& test, int threads = 0,
                    bool allow_hash_mismatch = false);

/// Forecast p(t) = p(T) for every output time; forecasting tasks only.
EvalReport constant_baseline(const data::Dataset& test);

/// Fills baseline_mean and improvement_pct on `report` from a baseline run
/// over the same dataset.
void attach_baseline(EvalReport& report, const EvalReport& baseline);

struct RolloutStats {
  std::vector<double> bin_edges;  // bins + 1 shared edges spanning the truth
  std::vector<double> pred_mass;  // sums to 1
  std::vector<double> true_mass;  // sums to 1
  double overlap = 0.0;           // sum of bin-wise minima
  double wasserstein1 = 0.0;      // from the two CDFs on the shared edges
  long samples_used = 0;
  long samples_divergent = 0;  // rollouts excluded for non-finite output
  long pred_outliers = 0;      // predicted values clipped into the truth range
};

/// Histogram comparison of two pooled value sets on truth-spanning bins.
RolloutStats histogram_compare(const std::vector<double>& pred,
                               const std::vector<double>& truth, int bins);

/// Rolls the forecaster out `blocks` windows past every test history, pools
/// predicted values against ground-truth continuations regenerated from the
/// dataset's stored streams, and compares the distributions.
RolloutStats rollout_stats(const nop::Model& model, const data::Dataset& test, long blocks,
                           int bins = 100);

struct ErrorField {
  Mat field;  // |pred - truth| / per-time spatial RMS of truth, [N_t x d]
  std::vector<std::size_t> zero_rms_rows;  // rows where the RMS vanished
};

ErrorField spatiotemporal_error_field(const Mat& pred, const Mat& truth);

std::string eval_report_to_json(const EvalReport& r);
std::string rollout_stats_to_json(const RolloutStats& s);
/// CSV with one row per sample: "sample,rel_l2".
std::string eval_report_to_csv(const EvalReport& r);
/// CSV with one row per bin: "bin_lo,bin_hi,pred_mass,true_mass".
std::string rollout_stats_to_csv(const RolloutStats& s);

}  // namespace obsflow::harness
