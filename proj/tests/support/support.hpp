#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "langxpand/checkpoint.hpp"
#include "langxpand/corpus.hpp"
#include "langxpand/tokenizer.hpp"

namespace langxpand::testing {

std::filesystem::path fixture(const std::string& name);

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir();
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

std::string read_file(const std::filesystem::path& path);

// Documents of the bundled mini corpus with the given source tag.
std::vector<Document> fixture_docs(const std::string& source);

// Random f64 checkpoint with perturbed norm weights, so every parameter
// matters for gradient checks.
ModelCheckpoint random_checkpoint(const TinyLMConfig& cfg, std::uint64_t seed, double init_std = 0.3);

// Straightforward double-precision decoder written independently of the
// library: per-position loops, complex-number rotary embedding, K/V heads
// repeated up to the query head count. Returns logits [T, V].
std::vector<double> reference_logits(const ModelCheckpoint& ckpt, const std::vector<std::int32_t>& ids);

// Mean next-token cross-entropy from full logits.
double reference_nll(const std::vector<double>& logits, std::size_t vocab, const std::vector<std::int32_t>& ids);

// Enumerates every segmentation of " " + text and returns the ids of the
// winner under the encoder's ordering: higher total score, then fewer ids,
// then the longer leftmost piece.
std::vector<std::int32_t> exhaustive_encode(const TokenizerModel& model, const std::string& text);

// Seeded synthetic corpus with planted exact and near duplicates.
std::vector<Document> synthetic_corpus(std::size_t n, std::uint64_t seed);

}  // namespace langxpand::testing
