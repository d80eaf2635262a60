#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "langxpand/corpus.hpp"

namespace langxpand {

// Word-shingle MinHash-LSH near-duplicate detection.
struct DedupConfig {
  std::size_t ngram_n = 3;
  std::size_t num_hashes = 128;
  std::size_t bands = 16;
  double jaccard_threshold = 0.8;
  std::uint64_t seed = 0x6c616e6778ULL;

  void validate() const;
  nlohmann::ordered_json to_json() const;
  static DedupConfig from_json(const nlohmann::json& j);
};

// Sorted, unique hashes of the word n-grams of `text`. A text with fewer than
// n words yields a single shingle over all of its words.
std::vector<std::uint64_t> shingle_hashes(std::string_view text, std::size_t n);

std::vector<std::uint64_t> minhash_signature(std::span<const std::uint64_t> shingles, const DedupConfig& cfg);

double estimate_jaccard(std::span<const std::uint64_t> a, std::span<const std::uint64_t> b);

// Byte-identical texts always collapse onto their first occurrence (reason
// "exact_duplicate"); LSH candidates whose estimated Jaccard reaches the
// threshold collapse onto the earliest kept match (reason "near_duplicate").
FilterResult dedup_ngram(std::span<const Document> docs, const DedupConfig& cfg);

}  // namespace langxpand
