#include <benchmark/benchmark.h>

#include "langxpand/corpus.hpp"
#include "langxpand/dedup.hpp"
#include "langxpand/ngram_lm.hpp"

using namespace langxpand;

namespace {

const std::vector<Document>& mini_docs() {
  static const auto docs = read_corpus(std::string(LANGXPAND_FIXTURE_DIR) + "/mini.jsonl").docs;
  return docs;
}

void BM_Dedup(benchmark::State& state) {
  const auto& docs = mini_docs();
  DedupConfig cfg;
  cfg.num_hashes = static_cast<std::size_t>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(dedup_ngram(docs, cfg));
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * docs.size()));
}
BENCHMARK(BM_Dedup)->Arg(64)->Arg(128)->Unit(benchmark::kMillisecond);

void BM_NGramTrain(benchmark::State& state) {
  const auto& docs = mini_docs();
  for (auto _ : state) benchmark::DoNotOptimize(NGramModel::train(docs, 3));
}
BENCHMARK(BM_NGramTrain)->Unit(benchmark::kMillisecond);

void BM_Perplexity(benchmark::State& state) {
  const auto& docs = mini_docs();
  const auto lm = NGramModel::train(docs, 3);
  std::size_t i = 0;
  for (auto _ : state) benchmark::DoNotOptimize(lm.perplexity(docs[i++ % docs.size()].text));
}
BENCHMARK(BM_Perplexity);

}  // namespace
