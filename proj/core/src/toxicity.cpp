#include "langxpand/toxicity.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "langxpand/error.hpp"
#include "langxpand/hashing.hpp"
#include "langxpand/random.hpp"
#include "langxpand/text.hpp"

namespace langxpand {

std::vector<LabeledText> read_labeled_tsv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<LabeledText> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    const std::string label = line.substr(0, tab);
    if (tab == std::string::npos || (label != "0" && label != "1")) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": expected 0|1<TAB>text");
    }
    out.push_back({label == "1" ? 1 : 0, text::nfc(line.substr(tab + 1))});
  }
  if (out.empty()) throw DataError("no labeled examples in " + path.string());
  return out;
}

double toxicity_sigmoid(double z) {
  const double s = z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
  return std::min(s, std::nextafter(1.0, 0.0));
}

ToxicityModel::ToxicityModel(std::size_t hash_dim, int ngram_lo, int ngram_hi)
    : weights_(hash_dim, 0.0), ngram_lo_(ngram_lo), ngram_hi_(ngram_hi) {
  if (hash_dim == 0) throw UsageError("toxicity hash_dim must be positive");
  if (ngram_lo < 1 || ngram_lo > ngram_hi) throw UsageError("toxicity n-gram range must satisfy 1 <= lo <= hi");
}

SparseFeatures ToxicityModel::features(std::string_view raw) const {
  SparseFeatures x;
  if (weights_.empty() || text::is_blank(raw)) return x;
  const std::string padded = " " + text::lowercase(raw) + " ";
  const auto cps = text::decode(padded);
  std::vector<std::uint32_t> buckets;
  for (int n = ngram_lo_; n <= ngram_hi_; ++n) {
    const auto len = static_cast<std::size_t>(n);
    for (std::size_t i = 0; i + len <= cps.size(); ++i) {
      const std::size_t b = cps[i].offset;
      const std::size_t e = cps[i + len - 1].offset + cps[i + len - 1].length;
      const std::uint64_t h = fnv1a64(std::string_view(padded).substr(b, e - b));
      buckets.push_back(static_cast<std::uint32_t>(h % weights_.size()));
    }
  }
  std::sort(buckets.begin(), buckets.end());
  for (std::size_t i = 0; i < buckets.size();) {
    std::size_t j = i;
    while (j < buckets.size() && buckets[j] == buckets[i]) ++j;
    x.emplace_back(buckets[i], static_cast<double>(j - i));
    i = j;
  }
  double norm = 0.0;
  for (const auto& [_, v] : x) norm += v * v;
  norm = std::sqrt(norm);
  for (auto& [_, v] : x) v /= norm;
  return x;
}

double ToxicityModel::logit(const SparseFeatures& x) const {
  double z = bias_;
  for (const auto& [i, v] : x) z += weights_[i] * v;
  return z;
}

double ToxicityModel::score_text(std::string_view text) const { return toxicity_sigmoid(logit(features(text))); }

nlohmann::ordered_json ToxicityModel::to_json() const {
  nlohmann::ordered_json j;
  j["hash_dim"] = weights_.size();
  j["ngram_range"] = {ngram_lo_, ngram_hi_};
  j["bias"] = bias_;
  auto& w = j["weights"] = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < weights_.size(); ++i) {
    if (weights_[i] != 0.0) w.push_back({i, weights_[i]});
  }
  return j;
}

ToxicityModel ToxicityModel::from_json(const nlohmann::json& j) {
  try {
    const auto range = j.at("ngram_range");
    ToxicityModel m(j.at("hash_dim").get<std::size_t>(), range.at(0).get<int>(), range.at(1).get<int>());
    m.bias_ = j.at("bias").get<double>();
    for (const auto& entry : j.at("weights")) {
      const auto i = entry.at(0).get<std::size_t>();
      if (i >= m.weights_.size()) throw DataError("toxicity weight index out of range");
      m.weights_[i] = entry.at(1).get<double>();
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed toxicity model: ") + e.what());
  }
}

void ToxicityModel::save(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << to_json().dump() << '\n';
}

ToxicityModel ToxicityModel::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open toxicity model " + path.string());
  try {
    return from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

nlohmann::ordered_json ToxicityTrainConfig::to_json() const {
  return {{"hash_dim", hash_dim}, {"ngram_lo", ngram_lo},         {"ngram_hi", ngram_hi}, {"epochs", epochs},
          {"learning_rate", learning_rate}, {"l2", l2}, {"seed", seed}};
}

ToxicityTrainConfig ToxicityTrainConfig::from_json(const nlohmann::json& j) {
  ToxicityTrainConfig c;
  c.hash_dim = j.value("hash_dim", c.hash_dim);
  c.ngram_lo = j.value("ngram_lo", c.ngram_lo);
  c.ngram_hi = j.value("ngram_hi", c.ngram_hi);
  c.epochs = j.value("epochs", c.epochs);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.l2 = j.value("l2", c.l2);
  c.seed = j.value("seed", c.seed);
  return c;
}

ToxicityTrainResult train_toxicity(std::span<const LabeledText> data, const ToxicityTrainConfig& cfg) {
  if (data.empty()) throw DataError("toxicity training data is empty");
  const auto positives = std::count_if(data.begin(), data.end(), [](const auto& d) { return d.label == 1; });
  if (positives == 0 || positives == static_cast<std::ptrdiff_t>(data.size())) {
    throw DataError("toxicity training data needs examples of both labels");
  }
  ToxicityTrainResult result{ToxicityModel(cfg.hash_dim, cfg.ngram_lo, cfg.ngram_hi), 0.0};
  ToxicityModel& model = result.model;

  std::vector<SparseFeatures> xs;
  xs.reserve(data.size());
  for (const auto& d : data) xs.push_back(model.features(d.text));

  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(cfg.seed);
  auto& w = model.weights();
  double bias = 0.0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order.begin(), order.end());
    const double lr = cfg.learning_rate / (1.0 + 0.1 * static_cast<double>(epoch));
    for (std::size_t k : order) {
      model.set_bias(bias);
      const double g = toxicity_sigmoid(model.logit(xs[k])) - data[k].label;
      for (const auto& [i, v] : xs[k]) w[i] -= lr * (g * v + cfg.l2 * w[i]);
      bias -= lr * g;
    }
  }
  model.set_bias(bias);

  std::size_t correct = 0;
  for (std::size_t k = 0; k < data.size(); ++k) {
    const int predicted = toxicity_sigmoid(model.logit(xs[k])) >= 0.5 ? 1 : 0;
    correct += predicted == data[k].label;
  }
  result.train_accuracy = static_cast<double>(correct) / static_cast<double>(data.size());
  return result;
}

}  // namespace langxpand
