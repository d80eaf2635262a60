#include <benchmark/benchmark.h>

#include "langxpand/checkpoint.hpp"
#include "langxpand/random.hpp"
#include "langxpand/transformer.hpp"

using namespace langxpand;

namespace {

TinyLMConfig bench_config(std::size_t hidden) {
  TinyLMConfig cfg;
  cfg.vocab_size = 2000;
  cfg.hidden = hidden;
  cfg.layers = 2;
  cfg.heads = 4;
  cfg.kv_heads = 2;
  cfg.window = 32;
  cfg.mlp_hidden = 2 * hidden;
  return cfg;
}

std::vector<std::int32_t> random_ids(std::size_t n) {
  Rng rng(1);
  std::vector<std::int32_t> ids(n);
  for (auto& id : ids) id = static_cast<std::int32_t>(rng.below(2000));
  return ids;
}

void BM_Forward(benchmark::State& state) {
  const auto ckpt = init_checkpoint(bench_config(static_cast<std::size_t>(state.range(0))), 0);
  const auto ids = random_ids(static_cast<std::size_t>(state.range(1)));
  for (auto _ : state) benchmark::DoNotOptimize(forward<float>(ckpt, ids));
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * ids.size()));
}
BENCHMARK(BM_Forward)->Args({32, 64})->Args({64, 64})->Args({64, 128})->Unit(benchmark::kMicrosecond);

void BM_ForwardBackward(benchmark::State& state) {
  const auto ckpt = init_checkpoint(bench_config(static_cast<std::size_t>(state.range(0))), 0);
  const auto ids = random_ids(static_cast<std::size_t>(state.range(1)));
  for (auto _ : state) {
    const auto cache = forward<float>(ckpt, ids);
    benchmark::DoNotOptimize(backward<float>(ckpt, cache));
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * ids.size()));
}
BENCHMARK(BM_ForwardBackward)->Args({32, 64})->Args({64, 64})->Args({64, 128})->Unit(benchmark::kMicrosecond);

void BM_ExpandEmbeddings(benchmark::State& state) {
  TinyLMConfig cfg = bench_config(64);
  cfg.vocab_size = 32000;
  cfg.layers = 1;
  const auto ckpt = init_checkpoint(cfg, 0);
  for (auto _ : state) benchmark::DoNotOptimize(expand_embeddings(ckpt, 38659));
}
BENCHMARK(BM_ExpandEmbeddings)->Unit(benchmark::kMillisecond);

}  // namespace
