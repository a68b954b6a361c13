#include "obsflow/datagen.hpp"

#include <atomic>
#include <cmath>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <utility>

#include "obsflow/fft.hpp"
#include "obsflow/rng.hpp"
#include "obsflow/threads.hpp"

namespace obsflow::data {

namespace {

constexpr int kMaxRetries = 20;
constexpr double kKsSchemeDt = 0.25;

// Stream layout: bits 0..31 sample index, bit 40 split, bits 48+ retry count.
constexpr std::uint64_t kTestStreamBase = 1ull << 40;

std::vector<double> draw_nu0(const dynsys::SystemSpec& system, SplitRng& rng) {
  switch (system.kind) {
    case dynsys::SystemKind::L63:
      return {rng.uniform(-15.0, 15.0), rng.uniform(-15.0, 15.0), rng.uniform(0.0, 40.0)};
    case dynsys::SystemKind::L96: {
      const double F = system.params[0];
      std::vector<double> x(system.state_dim());
      for (double& v : x) v = F + rng.uniform(-1.0, 1.0);
      return x;
    }
    case dynsys::SystemKind::KS: {
      const std::size_t n = system.state_dim();
      const double L = system.params[0];
      std::vector<double> a(8), b(8);
      for (int k = 0; k < 8; ++k) {
        a[static_cast<std::size_t>(k)] = rng.normal();
        b[static_cast<std::size_t>(k)] = rng.normal();
      }
      std::vector<double> u(n, 0.0);
      double ms = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        const double x = static_cast<double>(j) * L / static_cast<double>(n);
        for (int k = 1; k <= 8; ++k) {
          const double w = 2.0 * M_PI * static_cast<double>(k) * x / L;
          u[j] += a[static_cast<std::size_t>(k - 1)] * std::cos(w) +
                  b[static_cast<std::size_t>(k - 1)] * std::sin(w);
        }
        ms += u[j] * u[j];
      }
      ms = std::sqrt(ms / static_cast<double>(n));
      if (ms > 0.0)
        for (double& v : u) v /= ms;
      return u;
    }
  }
  throw ConfigError("draw_nu0: unknown system kind");
}

std::vector<double> burn_one(const dynsys::SystemSpec& system, const std::vector<double>& x,
                             double duration, double scheme_dt) {
  if (duration == 0.0) return x;
  return dynsys::flow(system, x, duration, scheme_dt).x;
}

double burn_step(const dynsys::SystemSpec& system, double duration) {
  return system.kind == dynsys::SystemKind::KS ? kKsSchemeDt : duration;
}

}  // namespace

std::vector<std::vector<double>> sample_nu0(const dynsys::SystemSpec& system,
                                            std::uint64_t seed, long count,
                                            std::uint64_t stream_base) {
  system.validate();
  if (count < 1) throw ConfigError("sample_nu0: count must be at least 1");
  std::vector<std::vector<double>> pts;
  pts.reserve(static_cast<std::size_t>(count));
  for (long j = 0; j < count; ++j) {
    SplitRng rng(seed, stream_base + static_cast<std::uint64_t>(j));
    pts.push_back(draw_nu0(system, rng));
  }
  return pts;
}

std::vector<std::vector<double>> burn_in(const dynsys::SystemSpec& system,
                                         const std::vector<std::vector<double>>& points,
                                         double duration) {
  system.validate();
  if (!(duration >= 0.0)) throw ConfigError("burn_in: duration must be non-negative");
  std::vector<std::vector<double>> out;
  out.reserve(points.size());
  const double dt = burn_step(system, duration);
  for (std::size_t j = 0; j < points.size(); ++j) {
    try {
      out.push_back(burn_one(system, points[j], duration, dt));
    } catch (const IntegrationError& e) {
      throw IntegrationError("burn_in: point " + std::to_string(j) + " diverged: " +
                                 e.what(),
                             e.t_blowup);
    }
  }
  return out;
}

std::vector<double> spectral_filter(const std::vector<double>& field, int k_keep) {
  const std::size_t n = field.size();
  if (!is_pow2(n) || n < 2)
    throw ConfigError("spectral_filter: field length must be a power of two");
  if (k_keep < 1 || static_cast<std::size_t>(k_keep) > n / 2)
    throw ConfigError("spectral_filter: k_keep out of range [1, N/2]");

  std::vector<cxd> v = fft_real(field);
  const bool keep_all = static_cast<std::size_t>(k_keep) * 2 == n;
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t m = std::min(k, n - k);
    if (!keep_all && m >= static_cast<std::size_t>(k_keep)) v[k] = 0.0;
  }
  ifft(v);
  std::vector<double> out(n);
  for (std::size_t k = 0; k < n; ++k) out[k] = v[k].real();
  return out;
}

Dataset generate(const TaskSpec& task, long count, std::uint64_t seed, Split split,
                 int threads) {
  task.validate();
  if (count < 1) throw ConfigError("generate: count must be at least 1");
  if (threads < 0) throw ConfigError("generate: threads must be non-negative");

  const dynsys::SystemSpec& sys = task.system;
  const bool is_ks = sys.kind == dynsys::SystemKind::KS;
  const long n_total = dynsys::aligned_steps(0.0, task.output_t1, task.dt);
  const long n_in = task.input_len();
  const long n_out = task.output_len();
  const long i_out0 = task.task == TaskKind::Smoothing
                          ? 0
                          : dynsys::aligned_steps(0.0, task.output_t0, task.dt);
  const std::uint64_t split_base = split == Split::Train ? 0 : kTestStreamBase;

  Dataset ds;
  ds.task = task;
  ds.split = split;
  ds.base_seed = seed;
  ds.inputs.resize(static_cast<std::size_t>(count));
  ds.outputs.resize(static_cast<std::size_t>(count));
  ds.streams.resize(static_cast<std::size_t>(count));

  std::atomic<long> next{0};
  std::atomic<long> total_retries{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;

  auto make_sample = [&](long j) {
    for (int r = 0;; ++r) {
      if (r > kMaxRetries)
        throw NumericalError("generate: sample " + std::to_string(j) + " kept blowing up");
      const std::uint64_t stream = split_base | static_cast<std::uint64_t>(j) |
                                   (static_cast<std::uint64_t>(r) << 48);
      SplitRng rng(seed, stream);
      std::vector<double> x = draw_nu0(sys, rng);
      try {
        x = burn_one(sys, x, task.burn_in, is_ks ? kKsSchemeDt : task.burn_in);
        const dynsys::TrajectoryBundle traj =
            is_ks ? dynsys::ks_integrate_etdrk4(x, sys.params[0], task.dt, n_total)
                  : dynsys::integrate_rk4(sys, x, 0.0, task.output_t1, task.dt);
        const Mat& states = traj.states;

        Mat in(static_cast<std::size_t>(n_in), static_cast<std::size_t>(task.input_dim()));
        for (long i = 0; i < n_in; ++i) {
          const double* src = states.row(static_cast<std::size_t>(i));
          if (task.filter_modes) {
            std::vector<double> f = spectral_filter(
                std::vector<double>(src, src + states.cols), *task.filter_modes);
            std::copy(f.begin(), f.end(), in.row(static_cast<std::size_t>(i)));
          } else {
            for (std::size_t c = 0; c < in.cols; ++c)
              in(static_cast<std::size_t>(i), c) = src[sys.p_indices[c]];
          }
        }

        Mat out(static_cast<std::size_t>(n_out),
                static_cast<std::size_t>(task.output_dim()));
        const bool filter_out = task.task == TaskKind::Forecasting && task.filter_modes;
        for (long i = 0; i < n_out; ++i) {
          const double* src = states.row(static_cast<std::size_t>(i_out0 + i));
          if (filter_out) {
            std::vector<double> f = spectral_filter(
                std::vector<double>(src, src + states.cols), *task.filter_modes);
            std::copy(f.begin(), f.end(), out.row(static_cast<std::size_t>(i)));
          } else if (task.task == TaskKind::Forecasting) {
            for (std::size_t c = 0; c < out.cols; ++c)
              out(static_cast<std::size_t>(i), c) = src[sys.p_indices[c]];
          } else if (!sys.q_indices.empty()) {
            for (std::size_t c = 0; c < out.cols; ++c)
              out(static_cast<std::size_t>(i), c) = src[sys.q_indices[c]];
          } else {
            std::copy(src, src + states.cols, out.row(static_cast<std::size_t>(i)));
          }
        }

        ds.inputs[static_cast<std::size_t>(j)] = std::move(in);
        ds.outputs[static_cast<std::size_t>(j)] = std::move(out);
        ds.streams[static_cast<std::size_t>(j)] = stream;
        total_retries += r;
        return;
      } catch (const IntegrationError&) {
        continue;
      }
    }
  };

  auto worker = [&] {
    for (long j = next.fetch_add(1); j < count; j = next.fetch_add(1)) {
      try {
        make_sample(j);
      } catch (...) {
        std::lock_guard<std::mutex> lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        return;
      }
    }
  };

  const long t_count =
      std::min<long>(resolve_threads(static_cast<unsigned>(threads)), count);
  if (t_count <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(t_count));
    for (long t = 0; t < t_count; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  if (failure) std::rethrow_exception(failure);

  ds.retries = total_retries.load();
  ds.validate();
  return ds;
}

Mat regenerate_observed(const TaskSpec& task, std::uint64_t base_seed, std::uint64_t stream,
                        long steps) {
  task.validate();
  if (steps < 1) throw ConfigError("regenerate_observed: steps must be positive");

  const dynsys::SystemSpec& sys = task.system;
  const bool is_ks = sys.kind == dynsys::SystemKind::KS;

  SplitRng rng(base_seed, stream);
  std::vector<double> x = draw_nu0(sys, rng);
  x = burn_one(sys, x, task.burn_in, is_ks ? kKsSchemeDt : task.burn_in);
  const double t1 = static_cast<double>(steps - 1) * task.dt;
  const dynsys::TrajectoryBundle traj =
      is_ks ? dynsys::ks_integrate_etdrk4(x, sys.params[0], task.dt, steps - 1)
            : dynsys::integrate_rk4(sys, x, 0.0, t1, task.dt);
  const Mat& states = traj.states;

  Mat out(static_cast<std::size_t>(steps), static_cast<std::size_t>(task.input_dim()));
  for (long i = 0; i < steps; ++i) {
    const double* src = states.row(static_cast<std::size_t>(i));
    if (task.filter_modes) {
      std::vector<double> f = spectral_filter(std::vector<double>(src, src + states.cols),
                                              *task.filter_modes);
      std::copy(f.begin(), f.end(), out.row(static_cast<std::size_t>(i)));
    } else {
      for (std::size_t c = 0; c < out.cols; ++c)
        out(static_cast<std::size_t>(i), c) = src[sys.p_indices[c]];
    }
  }
  return out;
}

namespace {

std::vector<std::size_t> iota_indices(std::size_t n) {
  std::vector<std::size_t> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = i;
  return v;
}

// Observed components for the 40-dimensional L96 tasks: the first 21 sites
// and every second site after that; the complement is the 10 even sites
// from 21 on (0-based).
void l96_split(std::vector<std::size_t>& p, std::vector<std::size_t>& q) {
  for (std::size_t i = 0; i < 21; ++i) p.push_back(i);
  for (std::size_t i = 22; i < 40; i += 2) p.push_back(i);
  for (std::size_t i = 21; i < 40; i += 2) q.push_back(i);
}

}  // namespace

TaskSpec l63_smoothing() {
  TaskSpec t;
  t.task = TaskKind::Smoothing;
  t.system = dynsys::make_l63({0}, {1, 2});
  t.input_t0 = t.output_t0 = 0.0;
  t.input_t1 = t.output_t1 = 5.0;
  t.dt = 0.02;
  t.burn_in = 20.0;
  return t;
}

TaskSpec l63_smoothing_z_to_xy() {
  TaskSpec t = l63_smoothing();
  t.system = dynsys::make_l63({2}, {0, 1});
  return t;
}

TaskSpec l63_forecasting() {
  TaskSpec t;
  t.task = TaskKind::Forecasting;
  t.system = dynsys::make_l63({0}, {1, 2});
  t.input_t0 = 0.0;
  t.input_t1 = 2.0;
  t.output_t0 = 2.0;
  t.output_t1 = 4.0;
  t.dt = 0.01;
  t.burn_in = 20.0;
  return t;
}

TaskSpec l96_smoothing() {
  TaskSpec t;
  t.task = TaskKind::Smoothing;
  std::vector<std::size_t> p, q;
  l96_split(p, q);
  t.system = dynsys::make_l96(40, 8.0, std::move(p), std::move(q));
  t.input_t0 = t.output_t0 = 0.0;
  t.input_t1 = t.output_t1 = 5.0;
  t.dt = 0.02;
  t.burn_in = 200.0;
  return t;
}

TaskSpec l96_forecasting() {
  TaskSpec t = l96_smoothing();
  t.task = TaskKind::Forecasting;
  t.input_t1 = 5.0;
  t.output_t0 = 5.0;
  t.output_t1 = 5.2;
  return t;
}

TaskSpec ks_smoothing() {
  TaskSpec t;
  t.task = TaskKind::Smoothing;
  t.system = dynsys::make_ks(128, 32.0 * M_PI, iota_indices(128), {});
  t.input_t0 = t.output_t0 = 0.0;
  t.input_t1 = t.output_t1 = 100.0;
  t.dt = 0.25;
  t.burn_in = 200.0;
  t.filter_modes = 64;
  return t;
}

TaskSpec ks_forecasting() {
  TaskSpec t = ks_smoothing();
  t.task = TaskKind::Forecasting;
  t.input_t1 = 100.0;
  t.output_t0 = 100.0;
  t.output_t1 = 102.0;
  t.filter_modes = 32;
  return t;
}

}  // namespace obsflow::data
