#include "langxpand/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "langxpand/error.hpp"
#include "langxpand/ngram_lm.hpp"
#include "langxpand/random.hpp"
#include "langxpand/text.hpp"
#include "langxpand/tokenizer.hpp"

namespace langxpand {
namespace {

std::ofstream open_out(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  return out;
}

std::string require_string(const nlohmann::json& obj, const char* key, std::string_view where) {
  auto it = obj.find(key);
  if (it == obj.end() || !it->is_string()) {
    throw DataError(std::string(where) + ": missing string field \"" + key + "\"");
  }
  return it->get<std::string>();
}

}  // namespace

IngestResult parse_corpus(std::istream& in, std::string_view origin) {
  IngestResult result;
  std::unordered_set<std::string> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::string where = std::string(origin) + ":" + std::to_string(line_no);
    nlohmann::json obj;
    try {
      obj = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw DataError(where + ": malformed JSON line (" + e.what() + ")");
    }
    if (!obj.is_object()) throw DataError(where + ": expected a JSON object");
    Document doc;
    doc.id = require_string(obj, "id", where);
    doc.text = require_string(obj, "text", where);
    if (auto it = obj.find("source"); it != obj.end() && it->is_string()) doc.source = it->get<std::string>();
    if (!seen.insert(doc.id).second) throw DataError(where + ": duplicate document id \"" + doc.id + "\"");
    try {
      doc.text = text::nfc(doc.text);
    } catch (const DataError& e) {
      throw DataError(where + ": " + e.what());
    }
    if (text::is_blank(doc.text)) {
      result.dropped.push_back({doc.id, std::nullopt, "empty", 0.0});
      continue;
    }
    result.docs.push_back(std::move(doc));
  }
  return result;
}

IngestResult read_corpus(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open corpus " + path.string());
  return parse_corpus(in, path.string());
}

std::string corpus_line(const Document& doc) {
  nlohmann::ordered_json j;
  j["id"] = doc.id;
  j["text"] = doc.text;
  j["source"] = doc.source;
  return j.dump();
}

void write_corpus(const std::filesystem::path& path, std::span<const Document> docs) {
  auto out = open_out(path);
  for (const auto& d : docs) out << corpus_line(d) << '\n';
}

void write_removals(const std::filesystem::path& path, std::span<const Removal> removals) {
  auto out = open_out(path);
  for (const auto& r : removals) {
    nlohmann::ordered_json j;
    j["removed"] = r.removed;
    j["kept"] = r.kept ? nlohmann::ordered_json(*r.kept) : nlohmann::ordered_json(nullptr);
    j["reason"] = r.reason;
    j["score"] = std::isfinite(r.score) ? r.score : 0.0;
    out << j.dump() << '\n';
  }
}

std::vector<Removal> read_removals(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open removal log " + path.string());
  std::vector<Removal> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      Removal r;
      r.removed = j.at("removed").get<std::string>();
      if (!j.at("kept").is_null()) r.kept = j.at("kept").get<std::string>();
      r.reason = j.at("reason").get<std::string>();
      r.score = j.at("score").get<double>();
      out.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

std::size_t resolve_sample_size(SampleSize keep, std::size_t population) {
  if (const auto* f = std::get_if<SampleFraction>(&keep)) {
    if (!(f->value > 0.0 && f->value <= 1.0)) {
      throw UsageError("sample fraction must be in (0, 1], got " + std::to_string(f->value));
    }
    return static_cast<std::size_t>(std::floor(f->value * static_cast<double>(population) + 0.5));
  }
  const std::size_t count = std::get<SampleCount>(keep).value;
  if (count > population) {
    throw DataError("requested " + std::to_string(count) + " documents but the corpus has only " +
                    std::to_string(population));
  }
  return count;
}

std::vector<Document> sample_corpus(std::span<const Document> docs, SampleSize keep, std::uint64_t seed) {
  const std::size_t k = resolve_sample_size(keep, docs.size());
  std::vector<std::size_t> idx(docs.size());
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(seed);
  // Partial Fisher-Yates: the first k slots become a uniform k-subset.
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(docs.size() - i));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  std::vector<Document> out;
  out.reserve(k);
  for (std::size_t i : idx) out.push_back(docs[i]);
  return out;
}

ScoreTable ScoreTable::read(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open score file " + path.string());
  ScoreTable table;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": expected id<TAB>score");
    }
    char* end = nullptr;
    const std::string value = line.substr(tab + 1);
    const double score = std::strtod(value.c_str(), &end);
    if (end == value.c_str() || *end != '\0' || !(score >= 0.0 && score <= 1.0)) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": score must be a number in [0, 1]");
    }
    table.set(line.substr(0, tab), score);
  }
  return table;
}

void ScoreTable::set(std::string id, double score) { scores_[std::move(id)] = score; }

double ScoreTable::score(const Document& doc) const {
  auto it = scores_.find(doc.id);
  if (it == scores_.end()) throw DataError("no score for document \"" + doc.id + "\"");
  return it->second;
}

FilterResult filter_toxic(std::span<const Document> docs, const DocumentScorer& scorer, double threshold) {
  if (!(threshold >= 0.0 && threshold <= 1.0)) throw UsageError("toxicity threshold must be in [0, 1]");
  FilterResult result;
  for (const auto& d : docs) {
    const double s = scorer.score(d);
    if (s < threshold) {
      result.kept.push_back(d);
    } else {
      result.removed.push_back({d.id, std::nullopt, "toxic", s});
    }
  }
  return result;
}

FilterResult filter_perplexity(std::span<const Document> docs, const NGramModel& lm, double max_ppl) {
  if (!(max_ppl > 0.0)) throw UsageError("max perplexity must be positive");
  FilterResult result;
  for (const auto& d : docs) {
    const auto tokens = lm_tokens(d.text);
    if (tokens.empty()) {
      result.removed.push_back({d.id, std::nullopt, "empty", 0.0});
      continue;
    }
    const double ppl = lm.perplexity_tokens(tokens);
    if (ppl <= max_ppl) {
      result.kept.push_back(d);
    } else {
      result.removed.push_back({d.id, std::nullopt, "perplexity", ppl});
    }
  }
  return result;
}

nlohmann::ordered_json CorpusStats::to_json() const {
  nlohmann::ordered_json j;
  j["num_docs"] = num_docs;
  j["total_bytes"] = total_bytes;
  j["num_tokens"] = num_tokens ? nlohmann::ordered_json(*num_tokens) : nlohmann::ordered_json(nullptr);
  return j;
}

CorpusStats corpus_stats(std::span<const Document> docs, const TokenizerModel* tokenizer) {
  CorpusStats stats;
  stats.num_docs = docs.size();
  for (const auto& d : docs) stats.total_bytes += d.byte_len();
  if (tokenizer != nullptr) {
    std::size_t tokens = 0;
    for (const auto& d : docs) tokens += tokenizer->encode(d.text).size();
    stats.num_tokens = tokens;
  }
  return stats;
}

}  // namespace langxpand
