#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "langxpand/corpus.hpp"

namespace langxpand {

// Lowercased, whitespace-split word tokens with punctuation left attached.
std::vector<std::string> lm_tokens(std::string_view text);

// Interpolated absolute discounting. The recursion bottoms out in a uniform
// distribution over the vocabulary plus UNK, and the final estimate is mixed
// with `unk_floor` of the same uniform so every word keeps positive mass even
// when discount is zero.
struct NGramSmoothing {
  double discount = 0.75;
  double unk_floor = 1e-6;

  void validate() const;
};

class NGramModel {
 public:
  static constexpr std::uint32_t kUnk = 0;
  static constexpr std::uint32_t kBos = 1;

  NGramModel() = default;

  static NGramModel train(std::span<const Document> docs, std::size_t order, NGramSmoothing smoothing = {});
  static NGramModel train_texts(std::span<const std::string> texts, std::size_t order,
                                NGramSmoothing smoothing = {});

  std::size_t order() const { return order_; }
  const NGramSmoothing& smoothing() const { return smoothing_; }

  // Predictable outcomes: every training word type plus UNK.
  std::size_t vocab_size() const { return words_.size() + 1; }
  const std::vector<std::string>& words() const { return words_; }
  std::uint32_t word_id(std::string_view word) const;

  // P(word | context); only the last order-1 context words matter and missing
  // leading context is padded with sentence-start.
  double prob(std::span<const std::string> context, std::string_view word) const;
  double prob_ids(std::span<const std::uint32_t> context, std::uint32_t word) const;

  // Count of `context -> word` in training, context given in full (order-1
  // ids, sentence-start padded).
  std::uint64_t count(std::span<const std::string> context, std::string_view word) const;

  // exp of the mean negative log-probability over the word tokens of `text`.
  double perplexity(std::string_view text) const;
  double perplexity_tokens(std::span<const std::string> tokens) const;

  void save(const std::filesystem::path& path) const;
  static NGramModel load(const std::filesystem::path& path);

  bool operator==(const NGramModel& other) const;

 private:
  struct ContextEntry {
    std::uint64_t total = 0;
    std::vector<std::pair<std::uint32_t, std::uint64_t>> next;  // sorted by id
  };
  struct KeyHash {
    std::size_t operator()(const std::vector<std::uint32_t>& key) const;
  };
  using Level = std::unordered_map<std::vector<std::uint32_t>, ContextEntry, KeyHash>;

  void add_sequence(std::span<const std::uint32_t> ids);
  void finish();
  std::uint32_t id_for(std::string_view word) const;

  std::size_t order_ = 0;
  NGramSmoothing smoothing_;
  std::vector<std::string> words_;  // id = index + 2
  std::unordered_map<std::string, std::uint32_t> word_ids_;
  std::vector<Level> levels_;  // levels_[k] holds contexts of length k
};

}  // namespace langxpand
