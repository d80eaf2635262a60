#include <gtest/gtest.h>

#include <cmath>

#include "langxpand/error.hpp"
#include "langxpand/ngram_lm.hpp"
#include "support.hpp"

using namespace langxpand;

namespace {

NGramModel train_one(const std::string& text, std::size_t order, NGramSmoothing sm) {
  const std::vector<std::string> texts = {text};
  return NGramModel::train_texts(texts, order, sm);
}

}  // namespace

TEST(NGram, SingleTypeCorpusIsCertain) {
  const auto lm = train_one("a a a", 1, {0.0, 1e-12});
  EXPECT_NEAR(lm.prob({}, "a"), 1.0, 1e-11);
  EXPECT_NEAR(lm.perplexity("a"), 1.0, 1e-11);
}

TEST(NGram, BigramCounts) {
  const auto lm = train_one("a b a b", 2, {});
  const std::vector<std::string> a = {"a"}, b = {"b"}, bos = {"<s>"};
  EXPECT_EQ(lm.count(a, "b"), 2u);
  EXPECT_EQ(lm.count(b, "a"), 1u);
  EXPECT_EQ(lm.count(bos, "a"), 1u);
  EXPECT_EQ(lm.count(a, "a"), 0u);
}

TEST(NGram, BigramChainPerplexityByHand) {
  // Discount 1/2, no floor. Unigram level: a and b seen twice each in 4
  // tokens, 3 outcomes with UNK: p0 = 1.5/4 + 0.5 * 2/4 * 1/3 = 11/24.
  // P(a|<s>) = 0.5/1 + 0.5 * 1/1 * 11/24 = 35/48.
  // P(b|a) = 1.5/2 + 0.5 * 1/2 * 11/24 = 83/96.
  const auto lm = train_one("a b a b", 2, {0.5, 0.0});
  const std::vector<std::string> bos = {"<s>"}, a = {"a"};
  EXPECT_NEAR(lm.prob(bos, "a"), 35.0 / 48.0, 1e-15);
  EXPECT_NEAR(lm.prob(a, "b"), 83.0 / 96.0, 1e-15);
  const double expected = std::exp(-(std::log(35.0 / 48.0) + std::log(83.0 / 96.0)) / 2.0);
  EXPECT_NEAR(lm.perplexity("a b"), expected, 1e-12);
}

TEST(NGram, UniformUnigramPerplexityIsTypeCount) {
  std::string corpus;
  for (int i = 0; i < 7; ++i) corpus += "t" + std::to_string(i) + " ";
  const auto lm = train_one(corpus, 1, {0.0, 1e-13});
  EXPECT_NEAR(lm.perplexity("t3 t1 t1 t6"), 7.0, 1e-9);
}

TEST(NGram, DistributionsNormalize) {
  const auto docs = langxpand::testing::fixture_docs("vi");
  const std::vector<Document> some(docs.begin(), docs.begin() + 50);
  const auto lm = NGramModel::train(some, 3);
  const auto& words = lm.words();
  const std::vector<std::vector<std::string>> contexts = {
      {}, {words[0]}, {words[1], words[2]}, {"<s>", words[3]}, {"never-seen", words[4]}};
  for (const auto& ctx : contexts) {
    double total = lm.prob(ctx, "<definitely-unknown>");
    for (const auto& w : words) total += lm.prob(ctx, w);
    EXPECT_NEAR(total, 1.0, 1e-9);
  }
}

TEST(NGram, SaveLoadRoundtrip) {
  const auto lm = train_one("một hai ba một hai bốn", 3, {});
  langxpand::testing::TempDir dir;
  lm.save(dir / "lm.bin");
  const auto back = NGramModel::load(dir / "lm.bin");
  EXPECT_EQ(back, lm);
  EXPECT_EQ(back.perplexity("hai ba"), lm.perplexity("hai ba"));
}

TEST(NGram, Errors) {
  EXPECT_THROW(train_one("a", 0, {}), UsageError);
  const auto lm = train_one("a b", 2, {});
  EXPECT_THROW(lm.perplexity("   "), DataError);
}
