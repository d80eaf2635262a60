#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <unordered_map>

#include "langxpand/error.hpp"
#include "langxpand/parallel.hpp"
#include "langxpand/text.hpp"
#include "langxpand/tokenizer.hpp"

namespace langxpand {
namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr char32_t kMarkerCodePoint = 0x2581;
constexpr std::size_t kChunks = 64;

double log_add(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  return a > b ? a + std::log1p(std::exp(b - a)) : b + std::log1p(std::exp(a - b));
}

bool is_boundary(std::string_view s, std::size_t i) {
  return i == s.size() || (static_cast<unsigned char>(s[i]) & 0xC0) != 0x80;
}

}  // namespace

std::vector<std::string> pretokenize(std::string_view raw) {
  std::vector<std::string> out;
  if (raw.empty()) return out;
  const std::string s = " " + std::string(raw);
  std::string cur;
  for (const auto& c : text::decode(s)) {
    const std::string_view ch = std::string_view(s).substr(c.offset, c.length);
    if (c.value == U' ') {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.assign(ch);
    } else if (text::is_whitespace(c.value)) {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.clear();
      out.emplace_back(ch);
    } else {
      cur.append(ch);
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

void UnigramTrainConfig::validate() const {
  if (target_vocab < 1) throw UsageError("target_vocab must be >= 1");
  if (seed_factor < 1) throw UsageError("seed_factor must be >= 1");
  if (!(prune_keep > 0.0 && prune_keep < 1.0)) throw UsageError("prune_keep must be in (0, 1)");
  if (em_iters < 1) throw UsageError("em_iters must be >= 1");
  if (max_piece_len < 1) throw UsageError("max_piece_len must be >= 1");
}

nlohmann::ordered_json UnigramTrainConfig::to_json() const {
  return {{"target_vocab", target_vocab},
          {"seed_factor", seed_factor},
          {"prune_keep", prune_keep},
          {"em_iters", em_iters},
          {"max_piece_len", max_piece_len}};
}

UnigramTrainConfig UnigramTrainConfig::from_json(const nlohmann::json& j) {
  UnigramTrainConfig c;
  c.target_vocab = j.value("target_vocab", c.target_vocab);
  c.seed_factor = j.value("seed_factor", c.seed_factor);
  c.prune_keep = j.value("prune_keep", c.prune_keep);
  c.em_iters = j.value("em_iters", c.em_iters);
  c.max_piece_len = j.value("max_piece_len", c.max_piece_len);
  c.validate();
  return c;
}

nlohmann::ordered_json UnigramTrainReport::to_json() const {
  return {{"required_chars", required_chars},
          {"seed_pieces", seed_pieces},
          {"final_pieces", final_pieces},
          {"loglik_rounds", loglik_rounds}};
}

UnigramTrainer::UnigramTrainer(std::span<const std::string> texts, UnigramTrainConfig cfg) : cfg_(cfg) {
  cfg_.validate();
  std::map<std::string, double> counts;
  for (const auto& t : texts) {
    for (auto& w : pretokenize(t)) counts[std::move(w)] += 1.0;
  }
  if (counts.empty()) throw DataError("tokenizer training corpus is empty");
  words_.reserve(counts.size());
  for (auto& [w, c] : counts) words_.push_back({w, c});
}

void UnigramTrainer::rebuild_trie() {
  trie_.clear();
  for (std::size_t i = 0; i < surfaces_.size(); ++i) trie_.insert(surfaces_[i], static_cast<std::int32_t>(i));
}

void UnigramTrainer::seed() {
  std::map<char32_t, double> chars;
  std::unordered_map<std::string, double> subs;
  for (const auto& w : words_) {
    const auto cps = text::decode(w.text);
    for (const auto& c : cps) {
      if (c.value != kMarkerCodePoint) chars[c.value] += w.count;
    }
    for (std::size_t i = 0; i < cps.size(); ++i) {
      for (std::size_t len = 2; len <= cfg_.max_piece_len && i + len <= cps.size(); ++len) {
        const auto& last = cps[i + len - 1];
        if (last.value == kMarkerCodePoint) break;
        subs[w.text.substr(cps[i].offset, last.offset + last.length - cps[i].offset)] += w.count;
      }
    }
  }
  // A literal marker cannot be stored in piece text; it stays byte-encoded.
  std::erase_if(subs, [](const auto& kv) { return kv.first.find(kSpaceMarker) != std::string::npos; });

  required_ = chars.size();
  if (cfg_.target_vocab < required_) {
    throw DataError("target_vocab " + std::to_string(cfg_.target_vocab) + " is smaller than the " +
                    std::to_string(required_) + " mandatory characters (deficit " +
                    std::to_string(required_ - cfg_.target_vocab) + ")");
  }

  std::vector<std::pair<std::string, double>> ranked(subs.begin(), subs.end());
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    const double sa = a.second * static_cast<double>(text::length(a.first));
    const double sb = b.second * static_cast<double>(text::length(b.first));
    if (sa != sb) return sa > sb;
    return a.first < b.first;
  });
  const std::size_t seed_size = cfg_.seed_factor * cfg_.target_vocab;
  const std::size_t keep_subs = seed_size > required_ ? std::min(seed_size - required_, ranked.size()) : 0;

  surfaces_.clear();
  std::vector<double> freq;
  for (const auto& [cp, c] : chars) {
    surfaces_.push_back(text::to_utf8(cp));
    freq.push_back(c);
  }
  for (std::size_t i = 0; i < keep_subs; ++i) {
    surfaces_.push_back(ranked[i].first);
    freq.push_back(ranked[i].second);
  }
  const double total = std::accumulate(freq.begin(), freq.end(), 0.0);
  scores_.resize(surfaces_.size());
  for (std::size_t i = 0; i < freq.size(); ++i) scores_[i] = std::log(freq[i] / total);
  expected_.assign(surfaces_.size(), 0.0);
  rebuild_trie();
}

double UnigramTrainer::em_iteration() {
  if (surfaces_.empty()) throw UsageError("UnigramTrainer::seed() must run before EM");
  const std::size_t npieces = surfaces_.size();
  std::vector<std::vector<double>> partial(kChunks);
  std::vector<long double> partial_ll(kChunks, 0.0L);

  parallel_chunks(words_.size(), kChunks, [&](std::size_t chunk, std::size_t b, std::size_t e) {
    auto& acc = partial[chunk];
    acc.assign(npieces, 0.0);
    std::vector<double> alpha, beta;
    long double ll = 0.0L;
    for (std::size_t w = b; w < e; ++w) {
      const std::string& s = words_[w].text;
      const std::size_t n = s.size();
      alpha.assign(n + 1, kNegInf);
      beta.assign(n + 1, kNegInf);
      alpha[0] = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (alpha[i] == kNegInf || !is_boundary(s, i)) continue;
        trie_.for_each_prefix(s, i, [&](std::size_t end, std::int32_t id) {
          alpha[end] = log_add(alpha[end], alpha[i] + scores_[static_cast<std::size_t>(id)]);
        });
      }
      const double z = alpha[n];
      if (z == kNegInf) throw DataError("training word cannot be segmented: \"" + s + "\"");
      beta[n] = 0.0;
      for (std::size_t i = n; i-- > 0;) {
        if (!is_boundary(s, i)) continue;
        trie_.for_each_prefix(s, i, [&](std::size_t end, std::int32_t id) {
          beta[i] = log_add(beta[i], scores_[static_cast<std::size_t>(id)] + beta[end]);
        });
      }
      const double count = words_[w].count;
      for (std::size_t i = 0; i < n; ++i) {
        if (alpha[i] == kNegInf || !is_boundary(s, i)) continue;
        trie_.for_each_prefix(s, i, [&](std::size_t end, std::int32_t id) {
          const auto p = static_cast<std::size_t>(id);
          acc[p] += count * std::exp(alpha[i] + scores_[p] + beta[end] - z);
        });
      }
      ll += static_cast<long double>(count) * z;
    }
    partial_ll[chunk] = ll;
  });

  long double ll = 0.0L;
  expected_.assign(npieces, 0.0);
  for (std::size_t c = 0; c < kChunks; ++c) {
    ll += partial_ll[c];
    if (partial[c].empty()) continue;
    for (std::size_t p = 0; p < npieces; ++p) expected_[p] += partial[c][p];
  }

  // M-step. Zero-probability pieces contribute nothing to the likelihood, so
  // dropping them here cannot lower it.
  constexpr double kRequiredFloor = 1e-10;
  for (std::size_t p = 0; p < required_; ++p) expected_[p] = std::max(expected_[p], kRequiredFloor);
  double total = 0.0;
  for (double x : expected_) total += x;
  std::vector<std::string> kept_surfaces;
  std::vector<double> kept_scores, kept_expected;
  for (std::size_t p = 0; p < npieces; ++p) {
    if (p >= required_ && expected_[p] <= 0.0) continue;
    kept_surfaces.push_back(std::move(surfaces_[p]));
    kept_scores.push_back(std::log(expected_[p] / total));
    kept_expected.push_back(expected_[p]);
  }
  const bool shrunk = kept_surfaces.size() != npieces;
  surfaces_ = std::move(kept_surfaces);
  scores_ = std::move(kept_scores);
  expected_ = std::move(kept_expected);
  if (shrunk) rebuild_trie();
  return static_cast<double>(ll);
}

void UnigramTrainer::prune(std::size_t new_size) {
  if (new_size >= surfaces_.size()) return;
  const std::size_t npieces = surfaces_.size();
  std::vector<double> loss(npieces, std::numeric_limits<double>::infinity());
  std::vector<double> best;
  for (std::size_t p = required_; p < npieces; ++p) {
    // Best segmentation of the piece's own surface without the piece itself.
    const std::string& s = surfaces_[p];
    best.assign(s.size() + 1, kNegInf);
    best[0] = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (best[i] == kNegInf || !is_boundary(s, i)) continue;
      trie_.for_each_prefix(s, i, [&](std::size_t end, std::int32_t id) {
        if (static_cast<std::size_t>(id) == p) return;
        best[end] = std::max(best[end], best[i] + scores_[static_cast<std::size_t>(id)]);
      });
    }
    loss[p] = expected_[p] * (scores_[p] - best[s.size()]);
  }
  std::vector<std::size_t> order(npieces - required_);
  std::iota(order.begin(), order.end(), required_);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (loss[a] != loss[b]) return loss[a] > loss[b];
    return surfaces_[a] < surfaces_[b];
  });
  const std::size_t keep = new_size > required_ ? new_size - required_ : 0;
  std::vector<bool> keep_mask(npieces, false);
  for (std::size_t i = 0; i < required_; ++i) keep_mask[i] = true;
  for (std::size_t i = 0; i < keep && i < order.size(); ++i) keep_mask[order[i]] = true;

  std::vector<std::string> s2;
  std::vector<double> sc2, ex2;
  for (std::size_t p = 0; p < npieces; ++p) {
    if (!keep_mask[p]) continue;
    s2.push_back(std::move(surfaces_[p]));
    sc2.push_back(scores_[p]);
    ex2.push_back(expected_[p]);
  }
  surfaces_ = std::move(s2);
  scores_ = std::move(sc2);
  expected_ = std::move(ex2);
  rebuild_trie();
}

TokenizerModel UnigramTrainer::finalize() const {
  std::vector<std::size_t> order(surfaces_.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (scores_[a] != scores_[b]) return scores_[a] > scores_[b];
    return surfaces_[a] < surfaces_[b];
  });
  std::vector<Piece> normal;
  normal.reserve(order.size());
  for (std::size_t i : order) normal.push_back({space_to_marker(surfaces_[i]), scores_[i], PieceKind::Normal});
  return TokenizerModel::from_normal_pieces(normal);
}

TokenizerModel UnigramTrainer::train(UnigramTrainReport* report) {
  seed();
  UnigramTrainReport local;
  local.required_chars = required_;
  local.seed_pieces = surfaces_.size();
  while (true) {
    std::vector<double> lls;
    for (std::size_t it = 0; it < cfg_.em_iters; ++it) lls.push_back(em_iteration());
    local.loglik_rounds.push_back(std::move(lls));
    if (surfaces_.size() <= cfg_.target_vocab) break;
    const auto shrunk = static_cast<std::size_t>(static_cast<double>(surfaces_.size()) * cfg_.prune_keep);
    prune(std::max(cfg_.target_vocab, std::min(shrunk, surfaces_.size() - 1)));
  }
  TokenizerModel model = finalize();
  local.final_pieces = surfaces_.size();
  if (report != nullptr) *report = std::move(local);
  return model;
}

TokenizerModel train_unigram(std::span<const Document> docs, const UnigramTrainConfig& cfg,
                             UnigramTrainReport* report) {
  std::vector<std::string> texts;
  texts.reserve(docs.size());
  for (const auto& d : docs) texts.push_back(d.text);
  UnigramTrainer trainer(texts, cfg);
  return trainer.train(report);
}

}  // namespace langxpand
