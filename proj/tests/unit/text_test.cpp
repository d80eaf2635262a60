#include <gtest/gtest.h>

#include "langxpand/error.hpp"
#include "langxpand/text.hpp"

using namespace langxpand;

TEST(Text, DecodesMultibyteCodePoints) {
  const auto cps = text::decode("aệ€");
  ASSERT_EQ(cps.size(), 3u);
  EXPECT_EQ(cps[1].value, U'ệ');
  EXPECT_EQ(cps[1].offset, 1u);
  EXPECT_EQ(cps[1].length, 3u);
  EXPECT_EQ(text::length("Tiếng Việt"), 10u);
}

TEST(Text, RejectsMalformedUtf8) {
  EXPECT_FALSE(text::is_valid_utf8("\xC3"));
  EXPECT_THROW(text::decode("ab\xFF"), DataError);
}

TEST(Text, NormalizesToNfc) {
  const std::string decomposed = "e\xCC\x82\xCC\xA3";  // e + circumflex + dot below
  EXPECT_FALSE(text::is_nfc(decomposed));
  EXPECT_EQ(text::nfc(decomposed), "ệ");
}

TEST(Text, LowercasesVietnamese) { EXPECT_EQ(text::lowercase("ĐÁP ÁN"), "đáp án"); }

TEST(Text, SplitsOnUnicodeWhitespace) {
  const auto w = text::split_words("xin chào,  bạn\tnhé");
  EXPECT_EQ(w, (std::vector<std::string>{"xin", "chào,", "bạn", "nhé"}));
  EXPECT_TRUE(text::is_blank(" \t\n　"));
}
