#include <benchmark/benchmark.h>

#include "acl/nn.hpp"
#include "acl/rng.hpp"

namespace {

using namespace acl;

nn::Matrix batch(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed) {
  Rng rng(seed);
  nn::Matrix x(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) x(i, j) = rng.uniform01();
  }
  return x;
}

nn::ModelState mnist_mlp() {
  nn::Architecture a;
  a.input_dim = 784;
  a.hidden_dims = {100, 100};
  a.num_classes = 10;
  return nn::init_model(a, 1);
}

void BM_Forward(benchmark::State& state) {
  const auto m = mnist_mlp();
  const auto x = batch(state.range(0), 784, 2);
  for (auto _ : state) benchmark::DoNotOptimize(nn::forward(m, x).probs.data());
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Forward)->Arg(32)->Arg(1024)->Arg(4096);

void BM_TrainStep(benchmark::State& state) {
  auto m = mnist_mlp();
  const auto x = batch(32, 784, 3);
  std::vector<int> y(32);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = static_cast<int>(i % 10);
  const nn::OptimizerConfig cfg;
  for (auto _ : state) {
    const auto lg = nn::loss_and_grad(m, x, y);
    nn::optimizer_step(m, lg.grad, cfg);
  }
  state.SetItemsProcessed(state.iterations() * 32);
}
BENCHMARK(BM_TrainStep);

void BM_OutputGradEmbeddings(benchmark::State& state) {
  const auto m = mnist_mlp();
  const auto x = batch(state.range(0), 784, 4);
  for (auto _ : state) benchmark::DoNotOptimize(nn::output_grad_embeddings(m, x).data());
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_OutputGradEmbeddings)->Arg(256)->Arg(2048);

}  // namespace
