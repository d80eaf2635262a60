#include <gtest/gtest.h>

#include <algorithm>

#include "langxpand/error.hpp"
#include "langxpand/tokenizer.hpp"
#include "support.hpp"

using namespace langxpand;
namespace lt = langxpand::testing;

namespace {

const std::string M(kSpaceMarker);

TokenizerModel model_of(std::vector<std::pair<std::string, double>> pieces) {
  std::vector<Piece> normal;
  for (auto& [t, s] : pieces) normal.push_back({t, s, PieceKind::Normal});
  return TokenizerModel::from_normal_pieces(normal);
}

std::vector<std::string> repeat_text(const std::string& s, std::size_t n) { return std::vector<std::string>(n, s); }

}  // namespace

TEST(Tokenizer, FrequentWordBecomesOnePiece) {
  const auto texts = repeat_text("xin chào ", 1000);
  UnigramTrainConfig cfg;
  cfg.target_vocab = 64;
  UnigramTrainReport report;
  UnigramTrainer trainer(texts, cfg);
  const auto model = trainer.train(&report);
  bool found = false;
  for (const auto& p : model.pieces()) {
    if (p.kind == PieceKind::Normal && p.text.find("chào") != std::string::npos && p.text.size() > 2) found = true;
  }
  EXPECT_TRUE(found);
  const auto ids = model.encode("chào");
  ASSERT_EQ(ids.size(), 1u);
  EXPECT_EQ(model.piece(ids[0]).text, M + "chào");
}

TEST(Tokenizer, EmLikelihoodNeverDecreasesWithinRound) {
  const auto docs = lt::fixture_docs("vi");
  std::vector<std::string> texts;
  for (std::size_t i = 0; i < std::min<std::size_t>(docs.size(), 200); ++i) texts.push_back(docs[i].text);
  UnigramTrainConfig cfg;
  cfg.target_vocab = 300;
  cfg.em_iters = 3;
  UnigramTrainReport report;
  UnigramTrainer(texts, cfg).train(&report);
  ASSERT_FALSE(report.loglik_rounds.empty());
  for (const auto& round : report.loglik_rounds) {
    for (std::size_t i = 1; i < round.size(); ++i) EXPECT_GE(round[i], round[i - 1] - 1e-6 * std::abs(round[i - 1]));
  }
}

TEST(Tokenizer, TargetBelowCharacterSetNamesDeficit) {
  const auto texts = repeat_text("abcdefghij", 3);
  UnigramTrainConfig cfg;
  cfg.target_vocab = 5;
  try {
    UnigramTrainer(texts, cfg).train();
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("deficit"), std::string::npos) << e.what();
  }
  EXPECT_EQ(UnigramTrainConfig{}.target_vocab, 8096u);
}

TEST(Tokenizer, PolicyDropsReplacementCharacterKeepsVietnamese) {
  const auto policy = CharPolicy::vietnamese();
  EXPECT_FALSE(policy.allows_piece(M + "a\xEF\xBF\xBD"));
  EXPECT_TRUE(policy.allows_piece(M + "chào"));
  EXPECT_TRUE(policy.allows_piece("ường"));
  EXPECT_FALSE(policy.allows_piece("漢字"));

  const auto model = model_of({{M + "chào", -1}, {"\xEF\xBF\xBD", -2}, {M + "x\xEF\xBF\xBDy", -3}});
  const auto filtered = filter_pieces(model, policy, {});
  EXPECT_TRUE(filtered.find(M + "chào").has_value());
  EXPECT_FALSE(filtered.find("\xEF\xBF\xBD").has_value());
  EXPECT_FALSE(filtered.find(M + "x\xEF\xBF\xBDy").has_value());
}

TEST(Tokenizer, CapKeepsMostFrequentSurvivors) {
  const std::vector<std::string> words = {"một", "hai", "ba",  "bốn", "năm", "sáu",
                                          "bảy", "tám", "chín", "mười", "trăm", "nghìn"};
  std::vector<std::pair<std::string, double>> pieces;
  for (const auto& w : words) pieces.push_back({M + w, -1.0});
  const auto model = model_of(pieces);

  // Word i appears i + 1 times, so "một" and "hai" are the two rarest.
  std::vector<Document> docs;
  for (std::size_t i = 0; i < words.size(); ++i) {
    std::string t;
    for (std::size_t k = 0; k <= i; ++k) t += words[i] + " ";
    docs.push_back({std::to_string(i), t, ""});
  }
  std::map<std::string, std::uint64_t> counted;
  for (const auto& d : docs) {
    for (auto id : model.encode(d.text)) ++counted[model.piece(id).text];
  }
  const auto freq = piece_frequencies(model, docs);
  for (const auto& w : words) EXPECT_EQ(freq.at(M + w), counted.at(M + w));

  const auto capped = filter_pieces(model, CharPolicy::vietnamese(), freq, 10);
  EXPECT_EQ(capped.normal_count(), 10u);
  EXPECT_FALSE(capped.find(M + "một").has_value());
  EXPECT_FALSE(capped.find(M + "hai").has_value());
  for (std::size_t i = 2; i < words.size(); ++i) EXPECT_TRUE(capped.find(M + words[i]).has_value()) << words[i];
}

TEST(Tokenizer, MergeAppendsOnlyNovelPiecesAndKeepsIds) {
  const auto base = model_of({{M + "xin", -1}, {M + "chào", -2}});
  const auto addon = model_of({{M + "chào", -1}, {M + "bạn", -2}, {M + "khỏe", -3}});
  const auto merged = merge_vocab(base, addon);
  ASSERT_EQ(merged.size(), base.size() + 2);
  EXPECT_EQ(merged.base_size(), base.size());
  for (std::size_t id = 0; id < base.size(); ++id) EXPECT_EQ(merged.pieces()[id], base.pieces()[id]);
  EXPECT_EQ(merged.find(M + "bạn"), static_cast<std::int32_t>(base.size()));
  EXPECT_EQ(merged.find(M + "khỏe"), static_cast<std::int32_t>(base.size() + 1));
  EXPECT_EQ(merge_vocab(base, addon, 1).size(), base.size() + 1);
}

TEST(Tokenizer, MergeAtReferenceScaleAppendsContiguousIds) {
  std::vector<std::pair<std::string, double>> base_pieces, addon_pieces;
  for (int i = 0; base_pieces.size() + 259 < 32000; ++i) base_pieces.push_back({"b" + std::to_string(i), -1.0});
  for (int i = 0; i < 100; ++i) addon_pieces.push_back({"b" + std::to_string(i), -1.0});  // already in base
  for (int i = 0; i < 6659; ++i) addon_pieces.push_back({"n" + std::to_string(i), -1.0});
  const auto base = model_of(base_pieces);
  ASSERT_EQ(base.size(), 32000u);
  const auto merged = merge_vocab(base, model_of(addon_pieces));
  EXPECT_EQ(merged.size(), 38659u);
  EXPECT_EQ(merged.find("n0"), 32000);
  EXPECT_EQ(merged.find("n6658"), 38658);
}

TEST(Tokenizer, RoundtripsFixtureText) {
  const auto tok = TokenizerModel::load(lt::fixture("base_tokenizer.json"));
  const auto docs = lt::fixture_docs("vi");
  std::size_t checked = 0;
  for (const auto& d : docs) {
    if (checked == 1000) break;
    EXPECT_EQ(tok.decode(tok.encode(d.text)), d.text);
    ++checked;
  }
  EXPECT_GT(checked, 100u);
}

TEST(Tokenizer, AbsentCharacterFallsBackToBytes) {
  const auto tok = model_of({{M, -1}, {"a", -1}});
  const auto ids = tok.encode("aß");
  const std::vector<std::int32_t> expected = {*tok.find(M), *tok.find("a"), tok.byte_id(0xC3), tok.byte_id(0x9F)};
  EXPECT_EQ(ids, expected);
  EXPECT_EQ(tok.decode(ids), "aß");
}

TEST(Tokenizer, ViterbiPicksHigherScoringSplit) {
  // "▁ab" alone scores s1; "▁a" + "b" scores -1 + -1.
  for (const double s1 : {-5.0, -1.0}) {
    const auto tok = model_of({{M, -3}, {"a", -3}, {"b", -1}, {M + "a", -1}, {M + "ab", s1}});
    const auto ids = tok.encode("ab");
    EXPECT_EQ(ids, lt::exhaustive_encode(tok, "ab"));
    if (s1 < -2.0) {
      EXPECT_EQ(ids, (std::vector<std::int32_t>{*tok.find(M + "a"), *tok.find("b")}));
    } else {
      EXPECT_EQ(ids, (std::vector<std::int32_t>{*tok.find(M + "ab")}));
    }
  }
}

TEST(Tokenizer, SaveLoadAndDecodeRange) {
  const auto tok = model_of({{M + "xin", -1}, {M + "chào", -2}});
  lt::TempDir dir;
  tok.save(dir / "t.json");
  EXPECT_EQ(TokenizerModel::load(dir / "t.json"), tok);
  const std::vector<std::int32_t> bad = {static_cast<std::int32_t>(tok.size())};
  EXPECT_THROW(tok.decode(bad), DataError);
}
