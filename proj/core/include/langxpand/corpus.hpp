#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

namespace langxpand {

class NGramModel;
class TokenizerModel;

// One corpus record. Text is NFC-normalized on ingest.
struct Document {
  std::string id;
  std::string text;
  std::string source;

  std::size_t byte_len() const { return text.size(); }
  bool operator==(const Document&) const = default;
};

// One line of a removal log.
struct Removal {
  std::string removed;
  std::optional<std::string> kept;
  std::string reason;
  double score = 0.0;

  bool operator==(const Removal&) const = default;
};

struct IngestResult {
  std::vector<Document> docs;
  std::vector<Removal> dropped;  // empty or whitespace-only documents
};

// JSONL corpus I/O. Malformed lines and duplicate ids raise DataError with the
// 1-based line number.
IngestResult parse_corpus(std::istream& in, std::string_view origin = "<stream>");
IngestResult read_corpus(const std::filesystem::path& path);
void write_corpus(const std::filesystem::path& path, std::span<const Document> docs);
std::string corpus_line(const Document& doc);

void write_removals(const std::filesystem::path& path, std::span<const Removal> removals);
std::vector<Removal> read_removals(const std::filesystem::path& path);

struct FilterResult {
  std::vector<Document> kept;
  std::vector<Removal> removed;
};

// --- random selection -------------------------------------------------------

struct SampleFraction {
  double value;
};
struct SampleCount {
  std::size_t value;
};
using SampleSize = std::variant<SampleFraction, SampleCount>;

// Uniform random subset of the requested size; output keeps input order.
std::vector<Document> sample_corpus(std::span<const Document> docs, SampleSize keep, std::uint64_t seed);
std::size_t resolve_sample_size(SampleSize keep, std::size_t population);

// --- scoring filters --------------------------------------------------------

// Anything that maps a document to a score in [0, 1].
class DocumentScorer {
 public:
  virtual ~DocumentScorer() = default;
  virtual double score(const Document& doc) const = 0;
};

// Externally computed scores keyed by document id (TSV `id<TAB>score`).
class ScoreTable : public DocumentScorer {
 public:
  static ScoreTable read(const std::filesystem::path& path);
  void set(std::string id, double score);
  double score(const Document& doc) const override;

 private:
  std::unordered_map<std::string, double> scores_;
};

// Keeps exactly the documents scoring strictly below `threshold`.
FilterResult filter_toxic(std::span<const Document> docs, const DocumentScorer& scorer, double threshold);

// Keeps documents whose word-level perplexity is at most `max_ppl`.
// Documents without word tokens are dropped with reason "empty".
FilterResult filter_perplexity(std::span<const Document> docs, const NGramModel& lm, double max_ppl);

// --- statistics -------------------------------------------------------------

struct CorpusStats {
  std::size_t num_docs = 0;
  std::size_t total_bytes = 0;
  std::optional<std::size_t> num_tokens;

  nlohmann::ordered_json to_json() const;
};

CorpusStats corpus_stats(std::span<const Document> docs, const TokenizerModel* tokenizer = nullptr);

// Document and token counts of the full-scale selection this toolkit models,
// carried in reports for side-by-side comparison.
struct ReferenceScale {
  static constexpr std::uint64_t source_docs = 54'988'654;
  static constexpr std::uint64_t selected_docs = 7'331'840;
  static constexpr std::uint64_t selected_tokens = 8'323'137'536;
};

}  // namespace langxpand
