#include <benchmark/benchmark.h>

#include "langxpand/corpus.hpp"
#include "langxpand/tokenizer.hpp"

using namespace langxpand;

namespace {

const std::vector<Document>& mini_docs() {
  static const auto docs = read_corpus(std::string(LANGXPAND_FIXTURE_DIR) + "/mini.jsonl").docs;
  return docs;
}

const TokenizerModel& base_tokenizer() {
  static const auto tok = TokenizerModel::load(std::string(LANGXPAND_FIXTURE_DIR) + "/base_tokenizer.json");
  return tok;
}

void BM_Encode(benchmark::State& state) {
  const auto& tok = base_tokenizer();
  const auto& docs = mini_docs();
  std::size_t bytes = 0, i = 0;
  for (auto _ : state) {
    const auto& d = docs[i++ % docs.size()];
    benchmark::DoNotOptimize(tok.encode(d.text));
    bytes += d.text.size();
  }
  state.SetBytesProcessed(static_cast<std::int64_t>(bytes));
}
BENCHMARK(BM_Encode);

void BM_Decode(benchmark::State& state) {
  const auto& tok = base_tokenizer();
  const auto ids = tok.encode(mini_docs().front().text);
  for (auto _ : state) benchmark::DoNotOptimize(tok.decode(ids));
}
BENCHMARK(BM_Decode);

void BM_TrainUnigram(benchmark::State& state) {
  const auto& all = mini_docs();
  const std::vector<Document> docs(all.begin(), all.begin() + 300);
  UnigramTrainConfig cfg;
  cfg.target_vocab = static_cast<std::size_t>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(train_unigram(docs, cfg));
}
BENCHMARK(BM_TrainUnigram)->Arg(500)->Arg(1000)->Unit(benchmark::kMillisecond);

}  // namespace
