#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "langxpand/corpus.hpp"

namespace langxpand {

// Word-boundary marker (U+2581) used in stored piece text in place of a space.
inline constexpr std::string_view kSpaceMarker = "\xE2\x96\x81";

enum class PieceKind { Normal, Byte, Special, Unknown };

std::string_view to_string(PieceKind kind);
PieceKind piece_kind_from_string(std::string_view s);

struct Piece {
  std::string text;
  double score = 0.0;
  PieceKind kind = PieceKind::Normal;

  bool operator==(const Piece&) const = default;
};

struct SpecialIds {
  std::int32_t unk = 0;
  std::int32_t bos = 1;
  std::int32_t eos = 2;

  bool operator==(const SpecialIds&) const = default;
};

// Piece text with the marker replaced by a space, and back.
std::string marker_to_space(std::string_view piece_text);
std::string space_to_marker(std::string_view surface);

// Byte-level trie over normal-piece surfaces.
class PieceTrie {
 public:
  void clear();
  void insert(std::string_view key, std::int32_t value);

  // Calls fn(end_offset, value) for every key that is a prefix of
  // text.substr(begin), shortest first.
  template <class Fn>
  void for_each_prefix(std::string_view text, std::size_t begin, Fn&& fn) const {
    std::int32_t node = 0;
    for (std::size_t i = begin; i < text.size(); ++i) {
      node = child(node, static_cast<unsigned char>(text[i]));
      if (node < 0) return;
      if (nodes_[static_cast<std::size_t>(node)].value >= 0) fn(i + 1, nodes_[static_cast<std::size_t>(node)].value);
    }
  }

 private:
  struct Node {
    std::int32_t value = -1;
    std::vector<std::pair<unsigned char, std::int32_t>> children;  // sorted
  };
  std::int32_t child(std::int32_t node, unsigned char c) const;

  std::vector<Node> nodes_{Node{}};
};

struct Encoding {
  std::vector<std::int32_t> ids;
  double score = 0.0;
};

// Scored subword vocabulary with byte fallback. Ids are indices into pieces().
class TokenizerModel {
 public:
  static constexpr double kUnknownPenalty = 10.0;

  TokenizerModel() = default;
  TokenizerModel(std::vector<Piece> pieces, SpecialIds specials, bool byte_fallback, std::size_t base_size);

  // <unk>, <s>, </s>, 256 byte pieces, then the given normal pieces in order.
  static TokenizerModel from_normal_pieces(std::span<const Piece> normal);

  std::size_t size() const { return pieces_.size(); }
  std::size_t base_size() const { return base_size_; }
  bool byte_fallback() const { return byte_fallback_; }
  const SpecialIds& specials() const { return specials_; }
  const std::vector<Piece>& pieces() const { return pieces_; }
  const Piece& piece(std::int32_t id) const;
  std::optional<std::int32_t> find(std::string_view text) const;
  std::int32_t byte_id(unsigned char b) const { return byte_ids_[b]; }
  std::size_t normal_count() const;

  // Score of the synthetic edge used for a character no single-character
  // piece covers: the lowest normal score minus kUnknownPenalty.
  double unknown_score() const { return unknown_score_; }

  // Highest total-score segmentation of " " + text; ties go to fewer ids,
  // then to the longer leftmost piece.
  Encoding encode_detailed(std::string_view text) const;
  std::vector<std::int32_t> encode(std::string_view text) const { return encode_detailed(text).ids; }
  std::string decode(std::span<const std::int32_t> ids) const;

  nlohmann::ordered_json to_json() const;
  static TokenizerModel from_json(const nlohmann::json& j);
  void save(const std::filesystem::path& path) const;
  static TokenizerModel load(const std::filesystem::path& path);

  bool operator==(const TokenizerModel& other) const {
    return pieces_ == other.pieces_ && specials_ == other.specials_ && byte_fallback_ == other.byte_fallback_ &&
           base_size_ == other.base_size_;
  }

 private:
  void build_index();

  std::vector<Piece> pieces_;
  SpecialIds specials_;
  bool byte_fallback_ = true;
  std::size_t base_size_ = 0;

  std::unordered_map<std::string, std::int32_t> index_;
  std::array<std::int32_t, 256> byte_ids_{};
  std::vector<unsigned char> byte_values_;  // by id, meaningful for byte pieces
  PieceTrie trie_;
  double unknown_score_ = -kUnknownPenalty;
};

// --- training ---------------------------------------------------------------

struct UnigramTrainConfig {
  std::size_t target_vocab = 8096;
  std::size_t seed_factor = 4;
  double prune_keep = 0.75;
  std::size_t em_iters = 2;
  std::size_t max_piece_len = 16;

  void validate() const;
  nlohmann::ordered_json to_json() const;
  static UnigramTrainConfig from_json(const nlohmann::json& j);
};

struct UnigramTrainReport {
  std::vector<std::vector<double>> loglik_rounds;  // EM log-likelihoods per pruning round
  std::size_t required_chars = 0;
  std::size_t seed_pieces = 0;
  std::size_t final_pieces = 0;

  nlohmann::ordered_json to_json() const;
};

// Unigram-LM trainer: frequent-substring seeding, EM re-estimation, and
// likelihood-loss pruning down to the target size.
class UnigramTrainer {
 public:
  UnigramTrainer(std::span<const std::string> texts, UnigramTrainConfig cfg);

  void seed();
  double em_iteration();
  void prune(std::size_t new_size);
  TokenizerModel finalize() const;
  TokenizerModel train(UnigramTrainReport* report = nullptr);

  std::size_t piece_count() const { return surfaces_.size(); }
  std::size_t required_count() const { return required_; }
  const std::vector<std::string>& surfaces() const { return surfaces_; }
  const std::vector<double>& scores() const { return scores_; }

 private:
  struct Word {
    std::string text;
    double count;
  };
  void rebuild_trie();

  UnigramTrainConfig cfg_;
  std::vector<Word> words_;
  std::vector<std::string> surfaces_;  // required single characters first
  std::vector<double> scores_;
  std::vector<double> expected_;  // from the latest E-step
  std::size_t required_ = 0;
  PieceTrie trie_;
};

TokenizerModel train_unigram(std::span<const Document> docs, const UnigramTrainConfig& cfg,
                             UnigramTrainReport* report = nullptr);

// Splits " " + text into the units training counts: a leading space plus a
// run of non-whitespace, or a single other whitespace character.
std::vector<std::string> pretokenize(std::string_view text);

// --- refinement and merging -------------------------------------------------

// Allowed code points for pieces plus a maximum piece length in characters.
struct CharPolicy {
  std::vector<std::pair<char32_t, char32_t>> ranges;  // inclusive
  std::size_t max_piece_len = 16;

  bool allows(char32_t cp) const;
  bool allows_piece(std::string_view piece_text) const;

  // Printable ASCII, Vietnamese letters with diacritics, and common
  // typographic punctuation.
  static CharPolicy vietnamese();
  nlohmann::ordered_json to_json() const;
  static CharPolicy from_json(const nlohmann::json& j);
};

using PieceFrequencies = std::map<std::string, std::uint64_t>;

PieceFrequencies piece_frequencies(const TokenizerModel& model, std::span<const Document> docs);
void write_frequencies(const std::filesystem::path& path, const PieceFrequencies& freq);
PieceFrequencies read_frequencies(const std::filesystem::path& path);

// Drops normal pieces that break the policy. With a cap, multi-character
// survivors are ranked by corpus frequency; allowed single-character pieces
// are always kept.
TokenizerModel filter_pieces(const TokenizerModel& model, const CharPolicy& policy, const PieceFrequencies& freq,
                             std::optional<std::size_t> cap = std::nullopt);

// Appends addon normal pieces absent from base, in descending score order,
// after the base ids. `limit` keeps only the first `limit` novel pieces.
TokenizerModel merge_vocab(const TokenizerModel& base, const TokenizerModel& addon,
                           std::optional<std::size_t> limit = std::nullopt);

// Addon normal pieces not present in base, in merge order.
std::vector<Piece> novel_pieces(const TokenizerModel& base, const TokenizerModel& addon);

}  // namespace langxpand
