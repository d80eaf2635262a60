#include "langxpand/tokenizer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <set>

#include "langxpand/error.hpp"
#include "langxpand/text.hpp"

namespace langxpand {
namespace {

std::string byte_piece_text(unsigned b) {
  char buf[8];
  std::snprintf(buf, sizeof(buf), "<0x%02X>", b);
  return buf;
}

std::size_t char_len_at(std::string_view s, std::size_t i) {
  const auto b = static_cast<unsigned char>(s[i]);
  std::size_t n = b < 0x80 ? 1 : (b & 0xE0) == 0xC0 ? 2 : (b & 0xF0) == 0xE0 ? 3 : 4;
  return std::min(n, s.size() - i);
}

}  // namespace

std::string_view to_string(PieceKind kind) {
  switch (kind) {
    case PieceKind::Normal: return "normal";
    case PieceKind::Byte: return "byte";
    case PieceKind::Special: return "special";
    case PieceKind::Unknown: return "unk";
  }
  return "normal";
}

PieceKind piece_kind_from_string(std::string_view s) {
  if (s == "normal") return PieceKind::Normal;
  if (s == "byte") return PieceKind::Byte;
  if (s == "special") return PieceKind::Special;
  if (s == "unk") return PieceKind::Unknown;
  throw DataError("unknown piece kind \"" + std::string(s) + "\"");
}

std::string marker_to_space(std::string_view piece_text) {
  std::string out;
  out.reserve(piece_text.size());
  for (std::size_t i = 0; i < piece_text.size();) {
    if (piece_text.substr(i, kSpaceMarker.size()) == kSpaceMarker) {
      out.push_back(' ');
      i += kSpaceMarker.size();
    } else {
      out.push_back(piece_text[i++]);
    }
  }
  return out;
}

std::string space_to_marker(std::string_view surface) {
  std::string out;
  out.reserve(surface.size() + 4);
  for (char c : surface) {
    if (c == ' ') {
      out += kSpaceMarker;
    } else {
      out.push_back(c);
    }
  }
  return out;
}

// --- trie -------------------------------------------------------------------

void PieceTrie::clear() { nodes_.assign(1, Node{}); }

std::int32_t PieceTrie::child(std::int32_t node, unsigned char c) const {
  const auto& ch = nodes_[static_cast<std::size_t>(node)].children;
  auto it = std::lower_bound(ch.begin(), ch.end(), c, [](const auto& p, unsigned char v) { return p.first < v; });
  return (it != ch.end() && it->first == c) ? it->second : -1;
}

void PieceTrie::insert(std::string_view key, std::int32_t value) {
  std::int32_t node = 0;
  for (unsigned char c : key) {
    std::int32_t next = child(node, c);
    if (next < 0) {
      next = static_cast<std::int32_t>(nodes_.size());
      nodes_.emplace_back();
      auto& ch = nodes_[static_cast<std::size_t>(node)].children;
      auto it = std::lower_bound(ch.begin(), ch.end(), c, [](const auto& p, unsigned char v) { return p.first < v; });
      ch.insert(it, {c, next});
    }
    node = next;
  }
  nodes_[static_cast<std::size_t>(node)].value = value;
}

// --- model ------------------------------------------------------------------

TokenizerModel::TokenizerModel(std::vector<Piece> pieces, SpecialIds specials, bool byte_fallback,
                               std::size_t base_size)
    : pieces_(std::move(pieces)), specials_(specials), byte_fallback_(byte_fallback), base_size_(base_size) {
  build_index();
}

TokenizerModel TokenizerModel::from_normal_pieces(std::span<const Piece> normal) {
  std::vector<Piece> pieces;
  pieces.reserve(259 + normal.size());
  pieces.push_back({"<unk>", 0.0, PieceKind::Unknown});
  pieces.push_back({"<s>", 0.0, PieceKind::Special});
  pieces.push_back({"</s>", 0.0, PieceKind::Special});
  for (unsigned b = 0; b < 256; ++b) pieces.push_back({byte_piece_text(b), 0.0, PieceKind::Byte});
  for (const auto& p : normal) pieces.push_back({p.text, p.score, PieceKind::Normal});
  const std::size_t n = pieces.size();
  return TokenizerModel(std::move(pieces), SpecialIds{}, true, n);
}

void TokenizerModel::build_index() {
  index_.clear();
  trie_.clear();
  byte_ids_.fill(-1);
  byte_values_.assign(pieces_.size(), 0);
  double min_score = 0.0;
  bool any_normal = false;
  const auto n = static_cast<std::int32_t>(pieces_.size());
  for (std::int32_t id = 0; id < n; ++id) {
    const Piece& p = pieces_[static_cast<std::size_t>(id)];
    if (!index_.emplace(p.text, id).second) throw DataError("duplicate piece \"" + p.text + "\"");
    switch (p.kind) {
      case PieceKind::Normal: {
        if (p.text.empty()) throw DataError("empty normal piece at id " + std::to_string(id));
        if (!std::isfinite(p.score)) throw DataError("non-finite score for piece \"" + p.text + "\"");
        if (!text::is_valid_utf8(p.text)) throw DataError("piece at id " + std::to_string(id) + " is not UTF-8");
        trie_.insert(marker_to_space(p.text), id);
        min_score = any_normal ? std::min(min_score, p.score) : p.score;
        any_normal = true;
        break;
      }
      case PieceKind::Byte: {
        unsigned v = 0;
        if (p.text.size() != 6 || std::sscanf(p.text.c_str(), "<0x%2X>", &v) != 1 || p.text != byte_piece_text(v)) {
          throw DataError("malformed byte piece \"" + p.text + "\"");
        }
        if (byte_ids_[v] >= 0) throw DataError("byte piece " + p.text + " appears twice");
        byte_ids_[v] = id;
        byte_values_[static_cast<std::size_t>(id)] = static_cast<unsigned char>(v);
        break;
      }
      default:
        break;
    }
  }
  if (byte_fallback_) {
    for (unsigned b = 0; b < 256; ++b) {
      if (byte_ids_[b] < 0) throw DataError("byte fallback requires piece " + byte_piece_text(b));
    }
  }
  for (std::int32_t s : {specials_.unk, specials_.bos, specials_.eos}) {
    if (s < 0 || s >= n) throw DataError("special id " + std::to_string(s) + " out of range");
  }
  if (base_size_ > pieces_.size()) throw DataError("base_size exceeds vocabulary size");
  unknown_score_ = min_score - kUnknownPenalty;
}

const Piece& TokenizerModel::piece(std::int32_t id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= pieces_.size()) {
    throw DataError("token id " + std::to_string(id) + " out of range [0, " + std::to_string(pieces_.size()) + ")");
  }
  return pieces_[static_cast<std::size_t>(id)];
}

std::optional<std::int32_t> TokenizerModel::find(std::string_view text) const {
  auto it = index_.find(std::string(text));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::size_t TokenizerModel::normal_count() const {
  return static_cast<std::size_t>(
      std::count_if(pieces_.begin(), pieces_.end(), [](const Piece& p) { return p.kind == PieceKind::Normal; }));
}

Encoding TokenizerModel::encode_detailed(std::string_view raw) const {
  Encoding result;
  if (raw.empty()) return result;
  if (!text::is_valid_utf8(raw)) throw DataError("encode: input is not valid UTF-8");
  const std::string s = " " + std::string(raw);
  const std::size_t n = s.size();

  // Backward DP: best[i] is the best segmentation of s[i..n). Choosing the
  // first piece greedily among ties (longest wins) makes the tie-break
  // lexicographic over boundaries.
  struct Cell {
    double score = -std::numeric_limits<double>::infinity();
    std::size_t tokens = 0;
    std::size_t next = 0;
    std::int32_t piece = -1;  // -1: unknown character edge
  };
  std::vector<Cell> best(n + 1);
  best[n].score = 0.0;
  for (std::size_t i = n; i-- > 0;) {
    if ((static_cast<unsigned char>(s[i]) & 0xC0) == 0x80) continue;
    const std::size_t clen = char_len_at(s, i);
    Cell& cell = best[i];
    bool single = false;
    auto consider = [&](std::size_t end, std::int32_t id, double score, std::size_t count) {
      const Cell& rest = best[end];
      const double total = score + rest.score;
      const std::size_t tokens = count + rest.tokens;
      if (total > cell.score || (total == cell.score && tokens <= cell.tokens)) {
        cell.score = total;
        cell.tokens = tokens;
        cell.next = end;
        cell.piece = id;
      }
    };
    // Candidates must arrive in increasing end order for the tie-break, so
    // the unknown edge (always the shortest) goes first.
    trie_.for_each_prefix(s, i, [&](std::size_t end, std::int32_t) { single |= end == i + clen; });
    if (!single) consider(i + clen, -1, unknown_score_, byte_fallback_ ? clen : 1);
    trie_.for_each_prefix(s, i, [&](std::size_t end, std::int32_t id) {
      consider(end, id, pieces_[static_cast<std::size_t>(id)].score, 1);
    });
  }

  result.score = best[0].score;
  for (std::size_t i = 0; i < n; i = best[i].next) {
    const Cell& c = best[i];
    if (c.piece >= 0) {
      result.ids.push_back(c.piece);
    } else if (byte_fallback_) {
      for (std::size_t k = i; k < c.next; ++k) result.ids.push_back(byte_ids_[static_cast<unsigned char>(s[k])]);
    } else {
      result.ids.push_back(specials_.unk);
    }
  }
  return result;
}

std::string TokenizerModel::decode(std::span<const std::int32_t> ids) const {
  std::string out;
  for (std::int32_t id : ids) {
    const Piece& p = piece(id);
    switch (p.kind) {
      case PieceKind::Normal: out += marker_to_space(p.text); break;
      case PieceKind::Byte: out.push_back(static_cast<char>(byte_values_[static_cast<std::size_t>(id)])); break;
      case PieceKind::Unknown: out += "\xE2\x81\x87"; break;
      case PieceKind::Special: break;
    }
  }
  if (!out.empty() && out.front() == ' ') out.erase(0, 1);
  return out;
}

nlohmann::ordered_json TokenizerModel::to_json() const {
  nlohmann::ordered_json j;
  j["version"] = 1;
  j["byte_fallback"] = byte_fallback_;
  j["specials"] = {{"unk", specials_.unk}, {"bos", specials_.bos}, {"eos", specials_.eos}};
  j["base_size"] = base_size_;
  auto& arr = j["pieces"] = nlohmann::ordered_json::array();
  for (const auto& p : pieces_) {
    arr.push_back({{"text", p.text}, {"score", p.score}, {"kind", to_string(p.kind)}});
  }
  return j;
}

TokenizerModel TokenizerModel::from_json(const nlohmann::json& j) {
  try {
    if (j.at("version").get<int>() != 1) throw DataError("unsupported tokenizer version");
    SpecialIds sp;
    const auto& s = j.at("specials");
    sp.unk = s.at("unk").get<std::int32_t>();
    sp.bos = s.at("bos").get<std::int32_t>();
    sp.eos = s.at("eos").get<std::int32_t>();
    std::vector<Piece> pieces;
    for (const auto& p : j.at("pieces")) {
      pieces.push_back({p.at("text").get<std::string>(), p.at("score").get<double>(),
                        piece_kind_from_string(p.at("kind").get<std::string>())});
    }
    const std::size_t base = j.contains("base_size") ? j.at("base_size").get<std::size_t>() : pieces.size();
    return TokenizerModel(std::move(pieces), sp, j.at("byte_fallback").get<bool>(), base);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed tokenizer JSON: ") + e.what());
  }
}

void TokenizerModel::save(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << to_json().dump(1) << '\n';
}

TokenizerModel TokenizerModel::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open tokenizer " + path.string());
  try {
    return from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

// --- frequencies, filtering, merging ----------------------------------------

PieceFrequencies piece_frequencies(const TokenizerModel& model, std::span<const Document> docs) {
  std::vector<std::uint64_t> counts(model.size(), 0);
  for (const auto& d : docs) {
    for (std::int32_t id : model.encode(d.text)) ++counts[static_cast<std::size_t>(id)];
  }
  PieceFrequencies freq;
  for (std::size_t id = 0; id < counts.size(); ++id) {
    if (model.pieces()[id].kind == PieceKind::Normal) freq[model.pieces()[id].text] = counts[id];
  }
  return freq;
}

namespace {

std::string escape_tsv(std::string_view s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '\\': out += "\\\\"; break;
      case '\t': out += "\\t"; break;
      case '\n': out += "\\n"; break;
      case '\r': out += "\\r"; break;
      default: out.push_back(c);
    }
  }
  return out;
}

std::string unescape_tsv(std::string_view s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '\\' && i + 1 < s.size()) {
      const char c = s[++i];
      out.push_back(c == 't' ? '\t' : c == 'n' ? '\n' : c == 'r' ? '\r' : c);
    } else {
      out.push_back(s[i]);
    }
  }
  return out;
}

}  // namespace

void write_frequencies(const std::filesystem::path& path, const PieceFrequencies& freq) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  for (const auto& [piece, count] : freq) out << escape_tsv(piece) << '\t' << count << '\n';
}

PieceFrequencies read_frequencies(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open frequency file " + path.string());
  PieceFrequencies freq;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto tab = line.rfind('\t');
    char* end = nullptr;
    const std::string num = tab == std::string::npos ? "" : line.substr(tab + 1);
    const unsigned long long v = std::strtoull(num.c_str(), &end, 10);
    if (tab == std::string::npos || num.empty() || *end != '\0') {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": expected piece<TAB>count");
    }
    freq[unescape_tsv(std::string_view(line).substr(0, tab))] = v;
  }
  return freq;
}

TokenizerModel filter_pieces(const TokenizerModel& model, const CharPolicy& policy, const PieceFrequencies& freq,
                             std::optional<std::size_t> cap) {
  std::vector<std::size_t> singles;
  std::vector<std::size_t> multis;
  for (std::size_t id = 0; id < model.size(); ++id) {
    const Piece& p = model.pieces()[id];
    if (p.kind != PieceKind::Normal) continue;
    if (!policy.allows_piece(p.text)) continue;
    if (text::length(marker_to_space(p.text)) == 1) {
      singles.push_back(id);
    } else {
      multis.push_back(id);
    }
  }
  if (cap) {
    const std::size_t room = *cap > singles.size() ? *cap - singles.size() : 0;
    if (multis.size() > room) {
      auto freq_of = [&](std::size_t id) {
        auto it = freq.find(model.pieces()[id].text);
        return it == freq.end() ? std::uint64_t{0} : it->second;
      };
      std::stable_sort(multis.begin(), multis.end(), [&](std::size_t a, std::size_t b) {
        const auto fa = freq_of(a), fb = freq_of(b);
        if (fa != fb) return fa > fb;
        return a < b;
      });
      multis.resize(room);
    }
  }
  std::vector<bool> keep(model.size(), false);
  for (std::size_t id : singles) keep[id] = true;
  for (std::size_t id : multis) keep[id] = true;

  std::vector<Piece> pieces;
  SpecialIds sp;
  std::size_t base = 0;
  for (std::size_t id = 0; id < model.size(); ++id) {
    const Piece& p = model.pieces()[id];
    if (p.kind == PieceKind::Normal && !keep[id]) continue;
    const auto new_id = static_cast<std::int32_t>(pieces.size());
    if (static_cast<std::int32_t>(id) == model.specials().unk) sp.unk = new_id;
    if (static_cast<std::int32_t>(id) == model.specials().bos) sp.bos = new_id;
    if (static_cast<std::int32_t>(id) == model.specials().eos) sp.eos = new_id;
    if (id < model.base_size()) base = pieces.size() + 1;
    pieces.push_back(p);
  }
  return TokenizerModel(std::move(pieces), sp, model.byte_fallback(), base);
}

std::vector<Piece> novel_pieces(const TokenizerModel& base, const TokenizerModel& addon) {
  std::vector<Piece> out;
  for (const auto& p : addon.pieces()) {
    if (p.kind == PieceKind::Normal && !base.find(p.text)) out.push_back(p);
  }
  std::stable_sort(out.begin(), out.end(), [](const Piece& a, const Piece& b) { return a.score > b.score; });
  return out;
}

TokenizerModel merge_vocab(const TokenizerModel& base, const TokenizerModel& addon, std::optional<std::size_t> limit) {
  if (!base.byte_fallback()) throw UsageError("merge requires a base tokenizer with byte fallback");
  auto extra = novel_pieces(base, addon);
  if (limit && *limit < extra.size()) extra.resize(*limit);
  std::vector<Piece> pieces = base.pieces();
  pieces.reserve(pieces.size() + extra.size());
  for (auto& p : extra) pieces.push_back(std::move(p));
  return TokenizerModel(std::move(pieces), base.specials(), true, base.size());
}

}  // namespace langxpand
