#include "langxpand/ngram_lm.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <set>

#include "langxpand/error.hpp"
#include "langxpand/hashing.hpp"
#include "langxpand/text.hpp"

namespace langxpand {
namespace {

constexpr char kMagic[8] = {'X', 'N', 'G', 'R', 'A', 'M', '0', '1'};
constexpr std::uint32_t kVersion = 1;

template <class T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::istream& in) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) throw DataError("truncated n-gram model file");
  return v;
}

}  // namespace

std::vector<std::string> lm_tokens(std::string_view text) { return text::split_words(text::lowercase(text)); }

void NGramSmoothing::validate() const {
  if (!(discount >= 0.0 && discount <= 1.0)) throw UsageError("n-gram discount must be in [0, 1]");
  if (!(unk_floor >= 0.0 && unk_floor < 1.0)) throw UsageError("n-gram unk_floor must be in [0, 1)");
  if (discount == 0.0 && unk_floor == 0.0) {
    throw UsageError("n-gram smoothing needs a positive discount or unk_floor");
  }
}

std::size_t NGramModel::KeyHash::operator()(const std::vector<std::uint32_t>& key) const {
  std::uint64_t h = kFnvOffset;
  for (std::uint32_t v : key) h = splitmix64(h ^ v);
  return static_cast<std::size_t>(h);
}

NGramModel NGramModel::train(std::span<const Document> docs, std::size_t order, NGramSmoothing smoothing) {
  std::vector<std::string> texts;
  texts.reserve(docs.size());
  for (const auto& d : docs) texts.push_back(d.text);
  return train_texts(texts, order, smoothing);
}

NGramModel NGramModel::train_texts(std::span<const std::string> texts, std::size_t order, NGramSmoothing smoothing) {
  if (order < 1) throw UsageError("n-gram order must be >= 1");
  smoothing.validate();
  NGramModel m;
  m.order_ = order;
  m.smoothing_ = smoothing;

  std::vector<std::vector<std::string>> tokenized;
  tokenized.reserve(texts.size());
  std::set<std::string> types;
  for (const auto& t : texts) {
    tokenized.push_back(lm_tokens(t));
    types.insert(tokenized.back().begin(), tokenized.back().end());
  }
  if (types.empty()) throw DataError("n-gram training corpus has no word tokens");
  m.words_.assign(types.begin(), types.end());
  for (std::size_t i = 0; i < m.words_.size(); ++i) m.word_ids_.emplace(m.words_[i], static_cast<std::uint32_t>(i + 2));

  m.levels_.assign(order, {});
  std::vector<std::uint32_t> ids;
  for (const auto& toks : tokenized) {
    ids.clear();
    for (const auto& w : toks) ids.push_back(m.word_ids_.at(w));
    m.add_sequence(ids);
  }
  m.finish();
  return m;
}

void NGramModel::add_sequence(std::span<const std::uint32_t> ids) {
  std::vector<std::uint32_t> padded(order_ - 1, kBos);
  padded.insert(padded.end(), ids.begin(), ids.end());
  std::vector<std::uint32_t> ctx;
  for (std::size_t t = order_ - 1; t < padded.size(); ++t) {
    const std::uint32_t w = padded[t];
    for (std::size_t k = 0; k < order_; ++k) {
      ctx.assign(padded.begin() + static_cast<std::ptrdiff_t>(t - k), padded.begin() + static_cast<std::ptrdiff_t>(t));
      auto& entry = levels_[k][ctx];
      entry.total += 1;
      // Appended unsorted; finish() merges duplicates.
      entry.next.emplace_back(w, 1);
    }
  }
}

void NGramModel::finish() {
  for (auto& level : levels_) {
    for (auto& [ctx, entry] : level) {
      auto& v = entry.next;
      std::sort(v.begin(), v.end());
      std::vector<std::pair<std::uint32_t, std::uint64_t>> merged;
      for (const auto& [w, c] : v) {
        if (!merged.empty() && merged.back().first == w) {
          merged.back().second += c;
        } else {
          merged.emplace_back(w, c);
        }
      }
      v = std::move(merged);
      entry.total = 0;
      for (const auto& [w, c] : v) entry.total += c;
    }
  }
}

std::uint32_t NGramModel::id_for(std::string_view word) const {
  auto it = word_ids_.find(std::string(word));
  return it == word_ids_.end() ? kUnk : it->second;
}

std::uint32_t NGramModel::word_id(std::string_view word) const { return id_for(word); }

double NGramModel::prob_ids(std::span<const std::uint32_t> context, std::uint32_t word) const {
  if (order_ == 0) throw UsageError("n-gram model is not trained");
  const double uniform = 1.0 / static_cast<double>(vocab_size());
  const double d = smoothing_.discount;
  double p = uniform;
  std::vector<std::uint32_t> ctx;
  for (std::size_t k = 0; k < order_; ++k) {
    ctx.assign(k, kBos);
    const std::size_t avail = std::min(k, context.size());
    std::copy(context.end() - static_cast<std::ptrdiff_t>(avail), context.end(),
              ctx.end() - static_cast<std::ptrdiff_t>(avail));
    auto it = levels_[k].find(ctx);
    if (it == levels_[k].end()) continue;
    const ContextEntry& e = it->second;
    auto pos = std::lower_bound(e.next.begin(), e.next.end(), std::pair<std::uint32_t, std::uint64_t>{word, 0});
    const double c = (pos != e.next.end() && pos->first == word) ? static_cast<double>(pos->second) : 0.0;
    const double total = static_cast<double>(e.total);
    p = std::max(c - d, 0.0) / total + d * static_cast<double>(e.next.size()) / total * p;
  }
  return (1.0 - smoothing_.unk_floor) * p + smoothing_.unk_floor * uniform;
}

double NGramModel::prob(std::span<const std::string> context, std::string_view word) const {
  std::vector<std::uint32_t> ids;
  for (const auto& w : context) ids.push_back(w == "<s>" ? kBos : id_for(w));
  return prob_ids(ids, id_for(word));
}

std::uint64_t NGramModel::count(std::span<const std::string> context, std::string_view word) const {
  if (context.size() >= order_) return 0;
  std::vector<std::uint32_t> ctx;
  for (const auto& w : context) ctx.push_back(w == "<s>" ? kBos : id_for(w));
  auto it = levels_[context.size()].find(ctx);
  if (it == levels_[context.size()].end()) return 0;
  const std::uint32_t w = id_for(word);
  for (const auto& [id, c] : it->second.next) {
    if (id == w) return c;
  }
  return 0;
}

double NGramModel::perplexity_tokens(std::span<const std::string> tokens) const {
  if (tokens.empty()) throw DataError("perplexity of an empty token sequence is undefined");
  std::vector<std::uint32_t> ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) ids.push_back(id_for(t));
  double log_sum = 0.0;
  for (std::size_t t = 0; t < ids.size(); ++t) {
    log_sum += std::log(prob_ids(std::span(ids).first(t), ids[t]));
  }
  return std::exp(-log_sum / static_cast<double>(ids.size()));
}

double NGramModel::perplexity(std::string_view text) const {
  const auto tokens = lm_tokens(text);
  return perplexity_tokens(tokens);
}

void NGramModel::save(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(order_));
  put<double>(out, smoothing_.discount);
  put<double>(out, smoothing_.unk_floor);
  put<std::uint64_t>(out, words_.size());
  for (const auto& w : words_) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(w.size()));
    out.write(w.data(), static_cast<std::streamsize>(w.size()));
  }
  for (std::size_t k = 0; k < order_; ++k) {
    std::map<std::vector<std::uint32_t>, const ContextEntry*> sorted;
    for (const auto& [ctx, e] : levels_[k]) sorted.emplace(ctx, &e);
    put<std::uint64_t>(out, sorted.size());
    for (const auto& [ctx, e] : sorted) {
      for (std::uint32_t v : ctx) put<std::uint32_t>(out, v);
      put<std::uint64_t>(out, e->next.size());
      for (const auto& [w, c] : e->next) {
        put<std::uint32_t>(out, w);
        put<std::uint64_t>(out, c);
      }
    }
  }
  if (!out) throw DataError("failed writing " + path.string());
}

NGramModel NGramModel::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open n-gram model " + path.string());
  char magic[8];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw DataError(path.string() + ": bad magic, not an n-gram model");
  }
  if (get<std::uint32_t>(in) != kVersion) throw DataError(path.string() + ": unsupported n-gram model version");
  NGramModel m;
  m.order_ = get<std::uint32_t>(in);
  if (m.order_ < 1 || m.order_ > 16) throw DataError(path.string() + ": implausible n-gram order");
  m.smoothing_.discount = get<double>(in);
  m.smoothing_.unk_floor = get<double>(in);
  m.smoothing_.validate();
  const auto types = get<std::uint64_t>(in);
  m.words_.reserve(types);
  for (std::uint64_t i = 0; i < types; ++i) {
    const auto len = get<std::uint32_t>(in);
    std::string w(len, '\0');
    if (!in.read(w.data(), len)) throw DataError("truncated n-gram model file");
    m.word_ids_.emplace(w, static_cast<std::uint32_t>(i + 2));
    m.words_.push_back(std::move(w));
  }
  const std::uint32_t max_id = static_cast<std::uint32_t>(types + 1);
  m.levels_.assign(m.order_, {});
  for (std::size_t k = 0; k < m.order_; ++k) {
    const auto entries = get<std::uint64_t>(in);
    for (std::uint64_t e = 0; e < entries; ++e) {
      std::vector<std::uint32_t> ctx(k);
      for (auto& v : ctx) v = get<std::uint32_t>(in);
      ContextEntry entry;
      const auto n = get<std::uint64_t>(in);
      for (std::uint64_t i = 0; i < n; ++i) {
        const auto w = get<std::uint32_t>(in);
        const auto c = get<std::uint64_t>(in);
        if (w > max_id) throw DataError(path.string() + ": word id out of range");
        entry.next.emplace_back(w, c);
        entry.total += c;
      }
      m.levels_[k].emplace(std::move(ctx), std::move(entry));
    }
  }
  return m;
}

bool NGramModel::operator==(const NGramModel& other) const {
  if (order_ != other.order_ || words_ != other.words_ || smoothing_.discount != other.smoothing_.discount ||
      smoothing_.unk_floor != other.smoothing_.unk_floor || levels_.size() != other.levels_.size()) {
    return false;
  }
  for (std::size_t k = 0; k < levels_.size(); ++k) {
    if (levels_[k].size() != other.levels_[k].size()) return false;
    for (const auto& [ctx, e] : levels_[k]) {
      auto it = other.levels_[k].find(ctx);
      if (it == other.levels_[k].end() || it->second.next != e.next) return false;
    }
  }
  return true;
}

}  // namespace langxpand
