#include "obsflow/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <limits>
#include <mutex>
#include <numeric>
#include <string>
#include <thread>
#include <utility>

#include "json_detail.hpp"
#include "obsflow/datagen.hpp"
#include "obsflow/dynsys.hpp"
#include "obsflow/errors.hpp"
#include "obsflow/optim.hpp"
#include "obsflow/rng.hpp"
#include "obsflow/threads.hpp"

namespace obsflow::harness {

using ad::Tensor;
using data::Dataset;
using data::TaskSpec;
using nop::GridFunction;
using nop::Model;
using nop::ModelConfig;

void TrainConfig::validate() const {
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("train config: lr must be positive");
  if (!(beta1 >= 0.0) || beta1 >= 1.0 || !(beta2 >= 0.0) || beta2 >= 1.0)
    throw ConfigError("train config: betas must lie in [0, 1)");
  if (!(eps > 0.0)) throw ConfigError("train config: eps must be positive");
  if (batch_size < 1) throw ConfigError("train config: batch size must be positive");
  if (epochs < 0) throw ConfigError("train config: epochs must be non-negative");
  if (!(clip_norm >= 0.0) || !std::isfinite(clip_norm))
    throw ConfigError("train config: clip norm must be non-negative");
  if (!(val_fraction >= 0.0) || val_fraction > 0.5)
    throw ConfigError("train config: validation fraction must lie in [0, 0.5]");
  if (checkpoint_every < 1) throw ConfigError("train config: checkpoint cadence must be positive");
}

std::string TrainConfig::to_json() const {
  detail::json j;
  j["lr"] = lr;
  j["beta1"] = beta1;
  j["beta2"] = beta2;
  j["eps"] = eps;
  j["batch"] = batch_size;
  j["epochs"] = epochs;
  j["seed"] = seed;
  j["clip_norm"] = clip_norm;
  j["val_fraction"] = val_fraction;
  j["checkpoint_every"] = checkpoint_every;
  return j.dump();
}

TrainConfig TrainConfig::from_json(const std::string& text) {
  detail::json j;
  try {
    j = detail::json::parse(text);
  } catch (const detail::json::parse_error& e) {
    throw ConfigError(std::string("train config: malformed JSON: ") + e.what());
  }
  detail::require_keys(j,
                       {"lr", "beta1", "beta2", "eps", "batch", "epochs", "seed", "clip_norm",
                        "val_fraction", "checkpoint_every"},
                       "train config");
  TrainConfig c;
  auto num = [&](const char* key, double& dst) {
    if (auto it = j.find(key); it != j.end()) {
      if (!it->is_number()) throw ConfigError(std::string("train config: ") + key + " must be a number");
      dst = it->get<double>();
    }
  };
  auto integer = [&](const char* key, int& dst) {
    if (auto it = j.find(key); it != j.end()) {
      if (!it->is_number_integer())
        throw ConfigError(std::string("train config: ") + key + " must be an integer");
      dst = it->get<int>();
    }
  };
  num("lr", c.lr);
  num("beta1", c.beta1);
  num("beta2", c.beta2);
  num("eps", c.eps);
  integer("batch", c.batch_size);
  integer("epochs", c.epochs);
  if (auto it = j.find("seed"); it != j.end()) {
    if (!it->is_number_integer()) throw ConfigError("train config: seed must be an integer");
    c.seed = it->get<std::uint64_t>();
  }
  num("clip_norm", c.clip_norm);
  num("val_fraction", c.val_fraction);
  integer("checkpoint_every", c.checkpoint_every);
  c.validate();
  return c;
}

double relative_l2(const Mat& pred, const Mat& truth, const std::vector<double>& w) {
  if (!pred.same_shape(truth)) throw ConfigError("relative_l2: shape mismatch");
  if (w.size() != truth.rows) throw ConfigError("relative_l2: weight count must match rows");
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < truth.rows; ++i) {
    double dn = 0.0, dd = 0.0;
    for (std::size_t j = 0; j < truth.cols; ++j) {
      const double d = pred(i, j) - truth(i, j);
      dn += d * d;
      dd += truth(i, j) * truth(i, j);
    }
    num += w[i] * dn;
    den += w[i] * dd;
  }
  if (!(den > 0.0)) throw NumericalError("relative_l2: truth has zero norm");
  return std::sqrt(num) / std::sqrt(den);
}

double relative_l2(const GridFunction& pred, const GridFunction& truth) {
  pred.validate();
  truth.validate();
  if (pred.grid.size() != truth.grid.size()) throw ConfigError("relative_l2: grid size mismatch");
  for (std::size_t i = 0; i < pred.grid.size(); ++i)
    if (std::abs(pred.grid[i] - truth.grid[i]) > 1e-12 ||
        std::abs(pred.quadrature[i] - truth.quadrature[i]) > 1e-12)
      throw ConfigError("relative_l2: grids must be shared");
  return relative_l2(pred.values.value(), truth.values.value(), truth.quadrature);
}

ad::Tensor relative_l2_loss(const ad::Tensor& pred, const Mat& truth,
                            const std::vector<double>& w) {
  if (pred.rows() != truth.rows || pred.cols() != truth.cols)
    throw ConfigError("relative_l2_loss: shape mismatch");
  if (w.size() != truth.rows) throw ConfigError("relative_l2_loss: weight count must match rows");
  double den = 0.0;
  for (std::size_t i = 0; i < truth.rows; ++i) {
    double dd = 0.0;
    for (std::size_t j = 0; j < truth.cols; ++j) dd += truth(i, j) * truth(i, j);
    den += w[i] * dd;
  }
  if (!(den > 0.0)) throw NumericalError("relative_l2_loss: truth has zero norm");
  Tensor diff = ad::sub(pred, Tensor(truth));
  Tensor num = ad::sqrt(ad::sum_all(ad::rowmul(ad::mul(diff, diff), w)));
  return ad::scale(num, 1.0 / std::sqrt(den));
}

namespace {

void fill_stats(EvalReport& r) {
  const std::size_t n = r.per_sample.size();
  if (n == 0) throw ConfigError("evaluate: empty sample set");
  r.mean = std::accumulate(r.per_sample.begin(), r.per_sample.end(), 0.0) /
           static_cast<double>(n);
  std::vector<double> s = r.per_sample;
  std::sort(s.begin(), s.end());
  r.min = s.front();
  r.max = s.back();
  r.median = (n % 2 == 1) ? s[n / 2] : 0.5 * (s[n / 2 - 1] + s[n / 2]);
  if (n == 1) {
    r.stddev = 0.0;
  } else {
    double acc = 0.0;
    for (double x : s) acc += (x - r.mean) * (x - r.mean);
    r.stddev = std::sqrt(acc / static_cast<double>(n - 1));
  }
}

struct TaskGrids {
  std::vector<double> in_grid, in_w, out_grid, out_w;
};

TaskGrids task_grids(const TaskSpec& task) {
  TaskGrids g;
  g.in_grid = nop::uniform_grid(static_cast<std::size_t>(task.input_len()));
  g.in_w = nop::trapezoid_weights(g.in_grid);
  g.out_grid = nop::uniform_grid(static_cast<std::size_t>(task.output_len()));
  g.out_w = nop::trapezoid_weights(g.out_grid);
  return g;
}

void check_model_matches_task(const ModelConfig& cfg, const TaskSpec& task, const char* who) {
  if (cfg.d_in != task.input_dim() || cfg.d_out != task.output_dim() ||
      cfg.input_len != task.input_len() || cfg.output_len != task.output_len())
    throw ConfigError(std::string(who) + ": model config does not match the dataset task");
}

GridFunction forward_sample(const Model& model, const TaskGrids& g, const Mat& input) {
  GridFunction gin{g.in_grid, Tensor(input), g.in_w};
  if (model.config().arch == nop::Arch::SelfAttnStack) return model.forward(gin);
  return model.forward(gin, g.out_grid, g.out_w);
}

}  // namespace

namespace {

TrainResult train_impl(const ModelConfig& config, const Dataset& dataset, const TrainConfig& tc,
                       const nop::Checkpoint* resume) {
  tc.validate();
  dataset.validate();
  const TaskSpec& task = dataset.task;
  check_model_matches_task(config, task, "train");

  const long j_count = dataset.num_samples();
  const long n_val = static_cast<long>(std::floor(tc.val_fraction * static_cast<double>(j_count)));
  const long n_train = j_count - n_val;
  if (n_train < 1) throw ConfigError("train: no training samples left after the validation split");

  // Deterministic split: one shuffle of all sample indices, validation at the tail.
  std::vector<long> perm(static_cast<std::size_t>(j_count));
  std::iota(perm.begin(), perm.end(), 0L);
  {
    SplitRng srng(tc.seed, 0);
    for (long i = j_count - 1; i > 0; --i) {
      const long k = static_cast<long>(srng.next_u64() % static_cast<std::uint64_t>(i + 1));
      std::swap(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(k)]);
    }
  }
  const std::vector<long> val_idx(perm.begin() + n_train, perm.end());
  std::vector<long> train_idx(perm.begin(), perm.begin() + n_train);

  // Per-channel standardization from the training split, unless the caller
  // already fixed it in the config. A resumed run keeps its checkpoint's.
  ModelConfig mcfg = config;
  auto standardize_from = [&](const std::vector<Mat> Dataset::*field, std::size_t channels,
                              std::vector<double>& shift, std::vector<double>& scale) {
    if (resume || !shift.empty() || !scale.empty()) return;
    std::vector<double> sum(channels, 0.0), sq(channels, 0.0);
    double count = 0.0;
    for (long j : train_idx) {
      const Mat& m = (dataset.*field)[static_cast<std::size_t>(j)];
      for (std::size_t i = 0; i < m.rows; ++i)
        for (std::size_t c = 0; c < channels; ++c) {
          sum[c] += m(i, c);
          sq[c] += m(i, c) * m(i, c);
        }
      count += static_cast<double>(m.rows);
    }
    shift.resize(channels);
    scale.resize(channels);
    for (std::size_t c = 0; c < channels; ++c) {
      shift[c] = sum[c] / count;
      const double var = std::max(0.0, sq[c] / count - shift[c] * shift[c]);
      const double sd = std::sqrt(var);
      scale[c] = sd > 0.0 ? sd : 1.0;
    }
  };
  standardize_from(&Dataset::inputs, static_cast<std::size_t>(task.input_dim()), mcfg.in_shift,
                   mcfg.in_scale);
  standardize_from(&Dataset::outputs, static_cast<std::size_t>(task.output_dim()),
                   mcfg.out_shift, mcfg.out_scale);

  const std::uint64_t init_seed =
      resume ? resume->init_seed : SplitRng(tc.seed, 1).next_u64();
  Model model = resume ? nop::restore_model(*resume) : Model(mcfg, init_seed);
  ad::Adam adam({tc.lr, tc.beta1, tc.beta2, tc.eps});
  if (resume && resume->has_optimizer) {
    adam.moments1() = resume->adam_m;
    adam.moments2() = resume->adam_v;
  }
  if (resume) adam.set_steps(resume->train_steps);
  auto params = model.parameters();
  const TaskGrids grids = task_grids(task);

  auto loss_value = [&](long j) {
    GridFunction out = forward_sample(model, grids, dataset.inputs[static_cast<std::size_t>(j)]);
    return relative_l2(out.values.value(), dataset.outputs[static_cast<std::size_t>(j)],
                       grids.out_w);
  };

  TrainResult res;
  double best_crit = std::numeric_limits<double>::infinity();
  auto snapshot_best = [&](long epoch) {
    res.best = nop::snapshot(model, task.hash(), init_seed, adam.steps());
    if (!adam.moments1().empty()) {
      res.best.has_optimizer = true;
      res.best.adam_m = adam.moments1();
      res.best.adam_v = adam.moments2();
    }
    res.best_epoch = epoch;
  };
  snapshot_best(0);

  for (int epoch = 1; epoch <= tc.epochs; ++epoch) {
    {
      SplitRng erng(tc.seed, 1000 + static_cast<std::uint64_t>(epoch));
      for (long i = n_train - 1; i > 0; --i) {
        const long k = static_cast<long>(erng.next_u64() % static_cast<std::uint64_t>(i + 1));
        std::swap(train_idx[static_cast<std::size_t>(i)], train_idx[static_cast<std::size_t>(k)]);
      }
    }

    double loss_sum = 0.0;
    long batches = 0;
    for (long start = 0; start < n_train; start += tc.batch_size) {
      const long stop = std::min<long>(start + tc.batch_size, n_train);
      try {
        ad::Tape tape;
        Tensor acc;
        for (long b = start; b < stop; ++b) {
          const long j = train_idx[static_cast<std::size_t>(b)];
          Tensor l = relative_l2_loss(
              forward_sample(model, grids, dataset.inputs[static_cast<std::size_t>(j)]).values,
              dataset.outputs[static_cast<std::size_t>(j)], grids.out_w);
          acc = (b == start) ? l : ad::add(acc, l);
        }
        Tensor loss = ad::scale(acc, 1.0 / static_cast<double>(stop - start));
        const double lv = loss.value()(0, 0);
        if (!std::isfinite(lv))
          throw NumericalError("loss is not finite");
        tape.backward(loss);
        adam.step(tape, params, tc.clip_norm);
        loss_sum += lv;
        ++batches;
      } catch (const NumericalError& e) {
        throw NumericalError("train: aborted at epoch " + std::to_string(epoch) + ", batch " +
                             std::to_string(start / tc.batch_size) + ": " + e.what());
      }
    }
    res.train_loss.push_back(loss_sum / static_cast<double>(batches));

    if (epoch % tc.checkpoint_every == 0 || epoch == tc.epochs) {
      double crit;
      if (n_val > 0) {
        double vs = 0.0;
        for (long j : val_idx) vs += loss_value(j);
        crit = vs / static_cast<double>(n_val);
        res.val_loss.push_back(crit);
      } else {
        crit = res.train_loss.back();
      }
      if (crit < best_crit) {
        best_crit = crit;
        snapshot_best(epoch);
      }
    }
  }
  res.rejected_steps = adam.rejected();
  return res;
}

}  // namespace

TrainResult train(const ModelConfig& config, const Dataset& dataset, const TrainConfig& tc) {
  return train_impl(config, dataset, tc, nullptr);
}

TrainResult train_resume(const nop::Checkpoint& from, const Dataset& dataset,
                         const TrainConfig& tc) {
  if (from.task_hash != dataset.task.hash())
    throw ConfigError("train: checkpoint was trained for a different task");
  return train_impl(from.config, dataset, tc, &from);
}

EvalReport evaluate_predictions(const std::vector<Mat>& preds, const Dataset& test) {
  test.validate();
  const long j_count = test.num_samples();
  if (static_cast<long>(preds.size()) != j_count)
    throw ConfigError("evaluate: one prediction per test sample required");
  const TaskGrids grids = task_grids(test.task);

  EvalReport r;
  r.per_sample.resize(preds.size());
  for (std::size_t j = 0; j < preds.size(); ++j)
    r.per_sample[j] = relative_l2(preds[j], test.outputs[j], grids.out_w);
  fill_stats(r);
  r.task_hash = test.task.hash();
  return r;
}

EvalReport evaluate(const nop::Checkpoint& ckpt, const Dataset& test, int threads,
                    bool allow_hash_mismatch) {
  const auto t0 = std::chrono::steady_clock::now();
  test.validate();
  if (ckpt.task_hash != test.task.hash() && !allow_hash_mismatch)
    throw ConfigError("evaluate: checkpoint was trained for a different task");
  if (threads < 0) throw ConfigError("evaluate: threads must be non-negative");

  const Model model = nop::restore_model(ckpt);
  check_model_matches_task(model.config(), test.task, "evaluate");
  const TaskGrids grids = task_grids(test.task);

  const long j_count = test.num_samples();
  std::vector<Mat> preds(static_cast<std::size_t>(j_count));
  std::atomic<long> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (long j = next.fetch_add(1); j < j_count; j = next.fetch_add(1)) {
      try {
        preds[static_cast<std::size_t>(j)] =
            forward_sample(model, grids, test.inputs[static_cast<std::size_t>(j)])
                .values.value();
      } catch (...) {
        std::lock_guard<std::mutex> lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        return;
      }
    }
  };
  const long t_count = std::min<long>(resolve_threads(static_cast<unsigned>(threads)), j_count);
  if (t_count <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(t_count));
    for (long t = 0; t < t_count; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  if (failure) std::rethrow_exception(failure);

  EvalReport r = evaluate_predictions(preds, test);
  r.model_hash = detail::fnv1a(ckpt.config.to_json());
  r.runtime_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

EvalReport constant_baseline(const Dataset& test) {
  const auto t0 = std::chrono::steady_clock::now();
  test.validate();
  if (test.task.task != data::TaskKind::Forecasting)
    throw ConfigError("constant_baseline: defined for forecasting tasks only");

  const std::size_t n_out = static_cast<std::size_t>(test.task.output_len());
  std::vector<Mat> preds;
  preds.reserve(test.inputs.size());
  for (const Mat& in : test.inputs) {
    Mat p(n_out, in.cols);
    const double* last = in.row(in.rows - 1);
    for (std::size_t i = 0; i < n_out; ++i)
      std::copy(last, last + in.cols, p.row(i));
    preds.push_back(std::move(p));
  }
  EvalReport r = evaluate_predictions(preds, test);
  r.runtime_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

void attach_baseline(EvalReport& report, const EvalReport& baseline) {
  if (!(baseline.mean > 0.0))
    throw NumericalError("attach_baseline: baseline mean error must be positive");
  report.baseline_mean = baseline.mean;
  report.improvement_pct = 100.0 * (1.0 - report.mean / baseline.mean);
}

RolloutStats histogram_compare(const std::vector<double>& pred,
                               const std::vector<double>& truth, int bins) {
  if (bins < 1) throw ConfigError("histogram_compare: bins must be positive");
  if (truth.empty() || pred.empty())
    throw ConfigError("histogram_compare: both value pools must be non-empty");

  double lo = truth[0], hi = truth[0];
  for (double x : truth) {
    if (!std::isfinite(x)) throw NumericalError("histogram_compare: non-finite truth value");
    lo = std::min(lo, x);
    hi = std::max(hi, x);
  }
  if (lo == hi) {
    lo -= 0.5;
    hi += 0.5;
  }

  RolloutStats s;
  const std::size_t nb = static_cast<std::size_t>(bins);
  s.bin_edges.resize(nb + 1);
  for (std::size_t b = 0; b <= nb; ++b)
    s.bin_edges[b] = lo + (hi - lo) * static_cast<double>(b) / static_cast<double>(nb);
  s.pred_mass.assign(nb, 0.0);
  s.true_mass.assign(nb, 0.0);

  auto bin_of = [&](double x) {
    const double f = (x - lo) / (hi - lo) * static_cast<double>(nb);
    const long b = std::min<long>(static_cast<long>(nb) - 1,
                                  std::max<long>(0, static_cast<long>(f)));
    return static_cast<std::size_t>(b);
  };
  for (double x : truth) s.true_mass[bin_of(x)] += 1.0;
  for (double x : pred) {
    if (!std::isfinite(x)) throw NumericalError("histogram_compare: non-finite predicted value");
    if (x < lo || x > hi) {
      ++s.pred_outliers;
      x = std::clamp(x, lo, hi);
    }
    s.pred_mass[bin_of(x)] += 1.0;
  }
  for (double& m : s.true_mass) m /= static_cast<double>(truth.size());
  for (double& m : s.pred_mass) m /= static_cast<double>(pred.size());

  double cdf_p = 0.0, cdf_t = 0.0;
  const double width = (hi - lo) / static_cast<double>(nb);
  for (std::size_t b = 0; b < nb; ++b) {
    s.overlap += std::min(s.pred_mass[b], s.true_mass[b]);
    cdf_p += s.pred_mass[b];
    cdf_t += s.true_mass[b];
    s.wasserstein1 += std::abs(cdf_p - cdf_t) * width;
  }
  return s;
}

RolloutStats rollout_stats(const Model& model, const Dataset& test, long blocks, int bins) {
  test.validate();
  if (test.task.task != data::TaskKind::Forecasting)
    throw ConfigError("rollout_stats: defined for forecasting tasks only");
  if (blocks < 1) throw ConfigError("rollout_stats: blocks must be positive");
  check_model_matches_task(model.config(), test.task, "rollout_stats");

  const TaskSpec& task = test.task;
  const long n_in = task.input_len();
  const long step_rows = task.output_len() - 1;
  if (step_rows < 1) throw ConfigError("rollout_stats: output window needs at least two points");
  const long junction = n_in - 1;
  const long total_steps = junction + blocks * step_rows + 1;

  std::vector<double> pred_pool, true_pool;
  long used = 0, divergent = 0;
  for (std::size_t j = 0; j < test.inputs.size(); ++j) {
    nop::RolloutResult r = nop::rollout(model, test.inputs[j], task.input_t1, task.dt, blocks);
    if (r.diverged || r.completed_blocks != blocks) {
      ++divergent;
      continue;
    }
    const Mat truth =
        data::regenerate_observed(task, test.base_seed, test.streams[j], total_steps);
    for (long i = 0; i < blocks * step_rows; ++i) {
      const double* row = truth.row(static_cast<std::size_t>(junction + 1 + i));
      true_pool.insert(true_pool.end(), row, row + truth.cols);
    }
    pred_pool.insert(pred_pool.end(), r.values.a.begin(), r.values.a.end());
    ++used;
  }
  if (used == 0) throw NumericalError("rollout_stats: every rollout diverged");

  RolloutStats s = histogram_compare(pred_pool, true_pool, bins);
  s.samples_used = used;
  s.samples_divergent = divergent;
  return s;
}

ErrorField spatiotemporal_error_field(const Mat& pred, const Mat& truth) {
  if (!pred.same_shape(truth)) throw ConfigError("error field: shape mismatch");
  if (truth.empty()) throw ConfigError("error field: empty input");

  ErrorField out;
  out.field = Mat(truth.rows, truth.cols);
  for (std::size_t i = 0; i < truth.rows; ++i) {
    double ms = 0.0;
    for (std::size_t j = 0; j < truth.cols; ++j) ms += truth(i, j) * truth(i, j);
    const double rms = std::sqrt(ms / static_cast<double>(truth.cols));
    if (rms == 0.0) out.zero_rms_rows.push_back(i);
    for (std::size_t j = 0; j < truth.cols; ++j) {
      const double d = std::abs(pred(i, j) - truth(i, j));
      out.field(i, j) = rms > 0.0 ? d / rms
                        : d == 0.0 ? 0.0
                                   : std::numeric_limits<double>::infinity();
    }
  }
  return out;
}

namespace {

detail::json report_json(const EvalReport& r) {
  detail::json j;
  j["per_sample"] = r.per_sample;
  j["mean"] = r.mean;
  j["median"] = r.median;
  j["std"] = r.stddev;
  j["min"] = r.min;
  j["max"] = r.max;
  j["baseline_mean"] = r.baseline_mean ? detail::json(*r.baseline_mean) : detail::json();
  j["improvement_pct"] = r.improvement_pct ? detail::json(*r.improvement_pct) : detail::json();
  j["runtime_seconds"] = r.runtime_seconds;
  j["task_hash"] = r.task_hash;
  j["model_hash"] = r.model_hash;
  return j;
}

std::string fmt(double x) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

}  // namespace

std::string eval_report_to_json(const EvalReport& r) { return report_json(r).dump(); }

std::string rollout_stats_to_json(const RolloutStats& s) {
  detail::json j;
  j["bin_edges"] = s.bin_edges;
  j["pred_mass"] = s.pred_mass;
  j["true_mass"] = s.true_mass;
  j["overlap"] = s.overlap;
  j["wasserstein1"] = s.wasserstein1;
  j["samples_used"] = s.samples_used;
  j["samples_divergent"] = s.samples_divergent;
  j["pred_outliers"] = s.pred_outliers;
  return j.dump();
}

std::string eval_report_to_csv(const EvalReport& r) {
  std::string out = "sample,rel_l2\n";
  for (std::size_t j = 0; j < r.per_sample.size(); ++j)
    out += std::to_string(j) + "," + fmt(r.per_sample[j]) + "\n";
  return out;
}

std::string rollout_stats_to_csv(const RolloutStats& s) {
  std::string out = "bin_lo,bin_hi,pred_mass,true_mass\n";
  for (std::size_t b = 0; b < s.pred_mass.size(); ++b)
    out += fmt(s.bin_edges[b]) + "," + fmt(s.bin_edges[b + 1]) + "," + fmt(s.pred_mass[b]) +
           "," + fmt(s.true_mass[b]) + "\n";
  return out;
}

}  // namespace obsflow::harness
