#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "langxpand/checkpoint.hpp"
#include "langxpand/corpus.hpp"
#include "langxpand/tokenizer.hpp"
#include "langxpand/transformer.hpp"

namespace langxpand {

// Anything that yields next-token log-probabilities for a token sequence.
class LanguageScorer {
 public:
  virtual ~LanguageScorer() = default;
  virtual std::size_t vocab_size() const = 0;
  // Entry t scores ids[t + 1] given ids[0..t].
  virtual std::vector<PositionScore> score(std::span<const std::int32_t> ids) const = 0;
};

class TransformerScorer : public LanguageScorer {
 public:
  explicit TransformerScorer(const ModelCheckpoint& ckpt) : ckpt_(ckpt) {}
  std::size_t vocab_size() const override { return ckpt_.vocab_size(); }
  std::vector<PositionScore> score(std::span<const std::int32_t> ids) const override;

 private:
  const ModelCheckpoint& ckpt_;
};

// --- causal LM evaluation ---------------------------------------------------

struct ClmEvalConfig {
  std::size_t seq_len = 128;
  std::size_t max_docs = 10000;
  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::ordered_json to_json() const;
  static ClmEvalConfig from_json(const nlohmann::json& j);
};

struct DocNll {
  std::string id;
  std::size_t tokens = 0;  // scored positions
  double nll = 0.0;        // mean over scored positions
};

struct ClmReport {
  std::string model_id;
  std::string type = "Pretrained";
  std::size_t length = 0;
  std::size_t tokens = 0;
  double loss = 0.0;
  double accuracy = 0.0;
  std::size_t documents = 0;
  std::vector<std::string> skipped;  // docs with fewer than 2 tokens
  std::vector<DocNll> per_doc;

  // Keys Model, Type, Length, Tokens, Loss, Accuracy plus diagnostics.
  nlohmann::ordered_json to_json() const;
  std::string table() const;
};

// Selects the first max_docs documents of a seeded shuffle, encodes each
// without BOS, and scores non-overlapping seq_len windows. Loss and accuracy
// are token-weighted.
ClmReport eval_clm(const LanguageScorer& model, std::span<const Document> docs, const TokenizerModel& tokenizer,
                   const ClmEvalConfig& cfg, const std::string& model_id = "model");

// --- multiple choice --------------------------------------------------------

struct McqChoice {
  std::string label;
  std::string text;
};

struct McqItem {
  std::string id;
  std::string category;  // subject, e.g. stem_high_school_physics
  std::string question;
  std::vector<McqChoice> choices;
  std::string answer;
};

std::vector<McqItem> parse_mcq(std::istream& in);
std::vector<McqItem> read_mcq(const std::filesystem::path& path);

struct McqTemplate {
  std::string prompt = "{question}\n{choices}\nĐáp án:";
  std::string choice_line = "{label}. {text}";

  void validate() const;
  std::string render(const McqItem& item) const;
};

// Supercategory of a subject: stem, social_science, humanity or other (the
// fallback for unknown prefixes).
std::string supercategory(const std::string& subject);

struct McqTally {
  std::size_t correct = 0;
  std::size_t answered = 0;
  double accuracy() const { return answered == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(answered); }
  double score() const { return 100.0 * accuracy(); }
};

struct McqPrediction {
  std::string id;
  std::string category;
  std::string predicted;
  std::string answer;
  std::vector<std::pair<std::string, double>> choice_scores;  // label, mean log-prob
};

struct McqReport {
  std::string model_id;
  std::map<std::string, McqTally> subjects;
  std::map<std::string, McqTally> supercategories;
  McqTally total;
  std::vector<McqPrediction> predictions;  // sorted by id

  nlohmann::ordered_json to_json() const;
  // Category_Subcategory | Score rows: total, then each supercategory's
  // subjects followed by its <name>_total row.
  std::vector<std::pair<std::string, double>> detail_rows() const;
  std::string detail_table() const;
  // STEM, SS, Hum, Others, Avg.
  nlohmann::ordered_json summary_row() const;
  std::string summary_table() const;
};

// Scores each choice by the mean log-probability of its label continuation
// after the rendered prompt; ties go to the smallest label.
McqReport eval_mcq(const LanguageScorer& model, std::span<const McqItem> items, const TokenizerModel& tokenizer,
                   const McqTemplate& tmpl = {}, const std::string& model_id = "model");

}  // namespace langxpand
