#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

// UTF-8 helpers. Normalization and case mapping are delegated to ICU.
namespace langxpand::text {

// Code point plus the byte span it occupies in the source string.
struct CodePoint {
  char32_t value;
  std::size_t offset;
  std::size_t length;
};

bool is_valid_utf8(std::string_view s);

// Throws DataError on malformed input.
std::vector<CodePoint> decode(std::string_view s);
std::u32string to_u32(std::string_view s);
std::string to_utf8(char32_t cp);
std::string to_utf8(std::u32string_view s);

std::size_t length(std::string_view s);

std::string nfc(std::string_view s);
bool is_nfc(std::string_view s);
std::string lowercase(std::string_view s);
bool is_whitespace(char32_t cp);
bool is_blank(std::string_view s);

// Splits on Unicode whitespace; punctuation stays attached.
std::vector<std::string> split_words(std::string_view s);

}  // namespace langxpand::text
