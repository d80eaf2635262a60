#include "langxpand/dedup.hpp"

#include <algorithm>
#include <limits>
#include <unordered_map>

#include "langxpand/error.hpp"
#include "langxpand/hashing.hpp"
#include "langxpand/parallel.hpp"
#include "langxpand/text.hpp"

namespace langxpand {
namespace {

std::uint64_t shingle_hash(std::span<const std::string> words) {
  std::uint64_t h = kFnvOffset;
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (i > 0) h = fnv1a64("\x1f", h);
    h = fnv1a64(words[i], h);
  }
  return h;
}

std::vector<std::uint64_t> salts(const DedupConfig& cfg) {
  std::vector<std::uint64_t> s(cfg.num_hashes);
  for (std::size_t i = 0; i < s.size(); ++i) s[i] = splitmix64(cfg.seed ^ splitmix64(i + 1));
  return s;
}

}  // namespace

void DedupConfig::validate() const {
  if (ngram_n < 1) throw UsageError("dedup ngram_n must be >= 1");
  if (num_hashes < 1) throw UsageError("dedup num_hashes must be >= 1");
  if (bands < 1 || num_hashes % bands != 0) throw UsageError("dedup bands must divide num_hashes");
  if (!(jaccard_threshold >= 0.0 && jaccard_threshold <= 1.0)) {
    throw UsageError("dedup jaccard_threshold must be in [0, 1]");
  }
}

nlohmann::ordered_json DedupConfig::to_json() const {
  return {{"ngram_n", ngram_n},
          {"num_hashes", num_hashes},
          {"bands", bands},
          {"jaccard_threshold", jaccard_threshold},
          {"seed", seed}};
}

DedupConfig DedupConfig::from_json(const nlohmann::json& j) {
  DedupConfig c;
  c.ngram_n = j.value("ngram_n", c.ngram_n);
  c.num_hashes = j.value("num_hashes", c.num_hashes);
  c.bands = j.value("bands", c.bands);
  c.jaccard_threshold = j.value("jaccard_threshold", c.jaccard_threshold);
  c.seed = j.value("seed", c.seed);
  c.validate();
  return c;
}

std::vector<std::uint64_t> shingle_hashes(std::string_view text, std::size_t n) {
  const auto words = text::split_words(text);
  std::vector<std::uint64_t> out;
  if (words.size() < n) {
    out.push_back(shingle_hash(words));
  } else {
    out.reserve(words.size() - n + 1);
    for (std::size_t i = 0; i + n <= words.size(); ++i) {
      out.push_back(shingle_hash(std::span(words).subspan(i, n)));
    }
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

std::vector<std::uint64_t> minhash_signature(std::span<const std::uint64_t> shingles, const DedupConfig& cfg) {
  const auto s = salts(cfg);
  std::vector<std::uint64_t> sig(cfg.num_hashes, std::numeric_limits<std::uint64_t>::max());
  for (std::uint64_t x : shingles) {
    for (std::size_t i = 0; i < sig.size(); ++i) sig[i] = std::min(sig[i], splitmix64(x ^ s[i]));
  }
  return sig;
}

double estimate_jaccard(std::span<const std::uint64_t> a, std::span<const std::uint64_t> b) {
  if (a.size() != b.size() || a.empty()) throw UsageError("signatures must have equal, nonzero length");
  std::size_t same = 0;
  for (std::size_t i = 0; i < a.size(); ++i) same += a[i] == b[i];
  return static_cast<double>(same) / static_cast<double>(a.size());
}

FilterResult dedup_ngram(std::span<const Document> docs, const DedupConfig& cfg) {
  cfg.validate();
  const std::size_t rows = cfg.num_hashes / cfg.bands;

  std::vector<std::vector<std::uint64_t>> sigs(docs.size());
  parallel_chunks(docs.size(), 64, [&](std::size_t, std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i) sigs[i] = minhash_signature(shingle_hashes(docs[i].text, cfg.ngram_n), cfg);
  });

  FilterResult result;
  // Text of every document seen so far -> the kept document it collapsed onto.
  std::unordered_map<std::string_view, std::size_t> exact;
  std::vector<std::unordered_map<std::uint64_t, std::vector<std::size_t>>> buckets(cfg.bands);
  std::vector<std::uint64_t> band_keys(cfg.bands);

  for (std::size_t i = 0; i < docs.size(); ++i) {
    const Document& d = docs[i];
    if (auto it = exact.find(d.text); it != exact.end()) {
      result.removed.push_back({d.id, docs[it->second].id, "exact_duplicate", 1.0});
      continue;
    }
    for (std::size_t b = 0; b < cfg.bands; ++b) {
      band_keys[b] = hash_words(std::span(sigs[i]).subspan(b * rows, rows), splitmix64(b));
    }
    // Earliest kept candidate that clears the threshold wins.
    std::size_t best = docs.size();
    double best_est = 0.0;
    for (std::size_t b = 0; b < cfg.bands; ++b) {
      auto it = buckets[b].find(band_keys[b]);
      if (it == buckets[b].end()) continue;
      for (std::size_t j : it->second) {
        if (j >= best) break;
        const double est = estimate_jaccard(sigs[i], sigs[j]);
        if (est >= cfg.jaccard_threshold) {
          best = j;
          best_est = est;
          break;
        }
      }
    }
    if (best < docs.size()) {
      exact.emplace(d.text, best);
      result.removed.push_back({d.id, docs[best].id, "near_duplicate", best_est});
      continue;
    }
    exact.emplace(d.text, i);
    for (std::size_t b = 0; b < cfg.bands; ++b) buckets[b][band_keys[b]].push_back(i);
    result.kept.push_back(d);
  }
  return result;
}

}  // namespace langxpand
