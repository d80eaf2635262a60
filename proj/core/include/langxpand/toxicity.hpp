#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "langxpand/corpus.hpp"

namespace langxpand {

struct LabeledText {
  int label = 0;  // 1 = toxic
  std::string text;
};

// Reads `label<TAB>text` lines. Empty files and labels other than 0/1 are
// rejected.
std::vector<LabeledText> read_labeled_tsv(const std::filesystem::path& path);

using SparseFeatures = std::vector<std::pair<std::uint32_t, double>>;

// Logistic classifier over hashed, L2-normalized character n-gram counts.
class ToxicityModel : public DocumentScorer {
 public:
  ToxicityModel() = default;
  ToxicityModel(std::size_t hash_dim, int ngram_lo, int ngram_hi);

  double score(const Document& doc) const override { return score_text(doc.text); }
  double score_text(std::string_view text) const;
  double logit(const SparseFeatures& x) const;
  SparseFeatures features(std::string_view text) const;

  std::size_t hash_dim() const { return weights_.size(); }
  int ngram_lo() const { return ngram_lo_; }
  int ngram_hi() const { return ngram_hi_; }
  double bias() const { return bias_; }
  std::vector<double>& weights() { return weights_; }
  const std::vector<double>& weights() const { return weights_; }
  void set_bias(double b) { bias_ = b; }

  nlohmann::ordered_json to_json() const;
  static ToxicityModel from_json(const nlohmann::json& j);
  void save(const std::filesystem::path& path) const;
  static ToxicityModel load(const std::filesystem::path& path);

 private:
  std::vector<double> weights_;
  double bias_ = 0.0;
  int ngram_lo_ = 2;
  int ngram_hi_ = 4;
};

// Sigmoid clamped below 1 so that a threshold of 1.0 keeps everything.
double toxicity_sigmoid(double z);

struct ToxicityTrainConfig {
  std::size_t hash_dim = 1u << 16;
  int ngram_lo = 2;
  int ngram_hi = 4;
  std::size_t epochs = 20;
  double learning_rate = 0.5;
  double l2 = 1e-6;
  std::uint64_t seed = 13;

  nlohmann::ordered_json to_json() const;
  static ToxicityTrainConfig from_json(const nlohmann::json& j);
};

struct ToxicityTrainResult {
  ToxicityModel model;
  double train_accuracy = 0.0;
};

ToxicityTrainResult train_toxicity(std::span<const LabeledText> data, const ToxicityTrainConfig& cfg = {});

}  // namespace langxpand
