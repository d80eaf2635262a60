#include "langxpand/error.hpp"
#include "langxpand/text.hpp"
#include "langxpand/tokenizer.hpp"

namespace langxpand {

bool CharPolicy::allows(char32_t cp) const {
  for (const auto& [lo, hi] : ranges) {
    if (cp >= lo && cp <= hi) return true;
  }
  return false;
}

bool CharPolicy::allows_piece(std::string_view piece_text) const {
  if (!text::is_valid_utf8(piece_text)) return false;
  const auto cps = text::to_u32(marker_to_space(piece_text));
  if (cps.empty() || cps.size() > max_piece_len) return false;
  for (char32_t cp : cps) {
    if (!allows(cp)) return false;
  }
  return true;
}

CharPolicy CharPolicy::vietnamese() {
  CharPolicy p;
  p.ranges = {
      {0x20, 0x7E},                                                  // printable ASCII
      {0xC0, 0xC3}, {0xC8, 0xCA}, {0xCC, 0xCD}, {0xD2, 0xD5},        // À-Ã È-Ê Ì-Í Ò-Õ
      {0xD9, 0xDA}, {0xDD, 0xDD},                                    // Ù-Ú Ý
      {0xE0, 0xE3}, {0xE8, 0xEA}, {0xEC, 0xED}, {0xF2, 0xF5},        // à-ã è-ê ì-í ò-õ
      {0xF9, 0xFA}, {0xFD, 0xFD},                                    // ù-ú ý
      {0x102, 0x103}, {0x110, 0x111}, {0x128, 0x129}, {0x168, 0x169},  // Ă ă Đ đ Ĩ ĩ Ũ ũ
      {0x1A0, 0x1A1}, {0x1AF, 0x1B0},                                // Ơ ơ Ư ư
      {0x1EA0, 0x1EF9},                                              // Latin Extended Additional (Vietnamese)
      {0x2013, 0x2014}, {0x2018, 0x2019}, {0x201C, 0x201D}, {0x2026, 0x2026},
  };
  return p;
}

nlohmann::ordered_json CharPolicy::to_json() const {
  nlohmann::ordered_json j;
  auto& r = j["ranges"] = nlohmann::ordered_json::array();
  for (const auto& [lo, hi] : ranges) r.push_back({static_cast<std::uint32_t>(lo), static_cast<std::uint32_t>(hi)});
  j["max_piece_len"] = max_piece_len;
  return j;
}

CharPolicy CharPolicy::from_json(const nlohmann::json& j) {
  CharPolicy p;
  try {
    for (const auto& r : j.at("ranges")) {
      const auto lo = r.at(0).get<std::uint32_t>();
      const auto hi = r.at(1).get<std::uint32_t>();
      if (lo > hi || hi > 0x10FFFF) throw DataError("invalid code point range in character policy");
      p.ranges.emplace_back(static_cast<char32_t>(lo), static_cast<char32_t>(hi));
    }
    p.max_piece_len = j.value("max_piece_len", p.max_piece_len);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed character policy: ") + e.what());
  }
  if (p.max_piece_len < 1) throw DataError("character policy max_piece_len must be >= 1");
  return p;
}

}  // namespace langxpand
