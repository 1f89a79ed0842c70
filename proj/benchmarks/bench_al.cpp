#include <benchmark/benchmark.h>

#include "acl/al.hpp"
#include "acl/rng.hpp"

namespace {

using namespace acl;

nn::Matrix gaussian(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed) {
  Rng rng(seed);
  nn::Matrix x(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) x(i, j) = rng.normal();
  }
  return x;
}

nn::Matrix softmax_rows(const nn::Matrix& z) {
  nn::Matrix p = z;
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    p.row(i) = (p.row(i).array() - p.row(i).maxCoeff()).exp();
    p.row(i) /= p.row(i).sum();
  }
  return p;
}

// Pool sizes around one S-MNIST task (about 11k) and one query of 0.5%.
constexpr std::size_t kQuery = 57;

void BM_Entropy(benchmark::State& state) {
  const auto p = softmax_rows(gaussian(state.range(0), 10, 1));
  for (auto _ : state) benchmark::DoNotOptimize(al::select_top_k(al::score_entropy(p), kQuery).data());
}
BENCHMARK(BM_Entropy)->Arg(11000);

void BM_BadgeFactored(benchmark::State& state) {
  const auto a = gaussian(state.range(0), 10, 2);
  const auto h = gaussian(state.range(0), 100, 3).cwiseMax(0.0);
  std::uint64_t seed = 0;
  for (auto _ : state) benchmark::DoNotOptimize(al::badge_select_factored(a, h, kQuery, ++seed).data());
}
BENCHMARK(BM_BadgeFactored)->Arg(2000)->Arg(11000)->Unit(benchmark::kMillisecond);

void BM_Coreset(benchmark::State& state) {
  const auto pool = gaussian(state.range(0), 100, 4);
  const auto labelled = gaussian(500, 100, 5);
  for (auto _ : state) benchmark::DoNotOptimize(al::coreset_select(pool, labelled, kQuery).data());
}
BENCHMARK(BM_Coreset)->Arg(2000)->Arg(11000)->Unit(benchmark::kMillisecond);

void BM_KMeans(benchmark::State& state) {
  const auto pool = gaussian(state.range(0), 100, 6);
  std::uint64_t seed = 0;
  for (auto _ : state) benchmark::DoNotOptimize(al::kmeans_select(pool, kQuery, ++seed).data());
}
BENCHMARK(BM_KMeans)->Arg(2000)->Arg(11000)->Unit(benchmark::kMillisecond);

}  // namespace
