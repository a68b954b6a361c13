#include <benchmark/benchmark.h>

#include <vector>

#include "obsflow/datagen.hpp"
#include "obsflow/dynsys.hpp"
#include "obsflow/harness.hpp"
#include "obsflow/neuralop.hpp"
#include "obsflow/optim.hpp"
#include "obsflow/rng.hpp"
#include "obsflow/tensor.hpp"

using namespace obsflow;

namespace {

std::vector<std::size_t> iota_idx(std::size_t n) {
  std::vector<std::size_t> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = i;
  return v;
}

void BM_L63Window(benchmark::State& state) {
  const auto sys = dynsys::make_l63(iota_idx(3), {});
  for (auto _ : state) {
    auto traj = dynsys::integrate_rk4(sys, {1.0, 1.0, 1.0}, 0.0, 5.0, 0.02);
    benchmark::DoNotOptimize(traj.states.a.data());
  }
  state.SetItemsProcessed(state.iterations() * 1000);  // internal RK4 steps
}
BENCHMARK(BM_L63Window);

void BM_L96Window(benchmark::State& state) {
  const auto sys = dynsys::make_l96(40, 8.0, iota_idx(40), {});
  std::vector<double> x0(40, 8.0);
  x0[0] += 0.01;
  for (auto _ : state) {
    auto traj = dynsys::integrate_rk4(sys, x0, 0.0, 5.0, 0.05);
    benchmark::DoNotOptimize(traj.states.a.data());
  }
  state.SetItemsProcessed(state.iterations() * 1000);
}
BENCHMARK(BM_L96Window);

void BM_KsStep(benchmark::State& state) {
  const double L = 32.0 * M_PI;
  dynsys::KsStepper stepper(128, L, 0.25);
  SplitRng rng(1, 0);
  std::vector<double> u(128);
  for (double& x : u) x = 0.1 * rng.normal();
  auto v = stepper.to_spectral(u);
  for (auto _ : state) {
    stepper.step(v);
    benchmark::DoNotOptimize(v.data());
  }
  state.SetItemsProcessed(state.iterations());
}
BENCHMARK(BM_KsStep);

void BM_Matmul(benchmark::State& state) {
  const long n = state.range(0);
  SplitRng rng(2, 0);
  Mat am(static_cast<std::size_t>(n), 32), bm(32, 32);
  for (double& x : am.a) x = rng.normal();
  for (double& x : bm.a) x = rng.normal();
  ad::Tensor a(am), b(bm);
  for (auto _ : state) {
    ad::Tensor c = ad::matmul(a, b);
    benchmark::DoNotOptimize(c.value().a.data());
  }
  state.SetItemsProcessed(state.iterations() * n * 32 * 32);
}
BENCHMARK(BM_Matmul)->Arg(64)->Arg(251);

nop::Model desk_model(long points, long channels, long heads, long layers) {
  nop::ModelConfig c;
  c.arch = nop::Arch::SelfAttnStack;
  c.layers = layers;
  c.channels = channels;
  c.heads = heads;
  c.mlp_hidden = 2 * channels;
  c.d_in = 1;
  c.d_out = 2;
  c.input_len = points;
  c.output_len = points;
  return nop::Model(c, 7);
}

void BM_AttentionForward(benchmark::State& state) {
  const long n = state.range(0);
  nop::Model model = desk_model(n, 32, 4, 2);
  SplitRng rng(3, 0);
  Mat in(static_cast<std::size_t>(n), 1);
  for (double& x : in.a) x = rng.normal();
  const auto grid = nop::uniform_grid(static_cast<std::size_t>(n));
  const nop::GridFunction gin{grid, ad::Tensor(in), nop::trapezoid_weights(grid)};
  for (auto _ : state) {
    nop::GridFunction out = model.forward(gin);
    benchmark::DoNotOptimize(out.values.value().a.data());
  }
  state.SetItemsProcessed(state.iterations() * n);
}
BENCHMARK(BM_AttentionForward)->Arg(64)->Arg(251);

/// One full optimizer step (forward, reverse pass, Adam) at the desk
/// smoothing scale; batch size is the Arg.
void BM_TrainStep(benchmark::State& state) {
  const long batch = state.range(0);
  const long n = 251;
  nop::Model model = desk_model(n, 32, 4, 2);
  auto params = model.parameters();
  ad::Adam adam;
  SplitRng rng(4, 0);
  std::vector<Mat> ins, outs;
  for (long b = 0; b < batch; ++b) {
    Mat in(static_cast<std::size_t>(n), 1), out(static_cast<std::size_t>(n), 2);
    for (double& x : in.a) x = rng.normal();
    for (double& x : out.a) x = rng.normal();
    ins.push_back(in);
    outs.push_back(out);
  }
  const auto grid = nop::uniform_grid(static_cast<std::size_t>(n));
  const auto w = nop::trapezoid_weights(grid);
  for (auto _ : state) {
    ad::Tape tape;
    ad::Tensor acc;
    for (long b = 0; b < batch; ++b) {
      nop::GridFunction gin{grid, ad::Tensor(ins[static_cast<std::size_t>(b)]), w};
      ad::Tensor l = harness::relative_l2_loss(model.forward(gin).values,
                                               outs[static_cast<std::size_t>(b)], w);
      acc = b == 0 ? l : ad::add(acc, l);
    }
    ad::Tensor loss = ad::scale(acc, 1.0 / static_cast<double>(batch));
    tape.backward(loss);
    adam.step(tape, params, 1.0);
    benchmark::DoNotOptimize(loss.value()(0, 0));
  }
  state.SetItemsProcessed(state.iterations() * batch);
}
BENCHMARK(BM_TrainStep)->Arg(1)->Arg(8)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
