#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "langxpand/error.hpp"
#include "langxpand/eval.hpp"
#include "support.hpp"

using namespace langxpand;
namespace lt = langxpand::testing;

namespace {

const std::string M(kSpaceMarker);

// Knows the true continuation, so every position is predicted correctly.
class OracleScorer : public LanguageScorer {
 public:
  explicit OracleScorer(std::size_t vocab) : vocab_(vocab) {}
  std::size_t vocab_size() const override { return vocab_; }
  std::vector<PositionScore> score(std::span<const std::int32_t> ids) const override {
    return std::vector<PositionScore>(ids.size() - 1, PositionScore{0.0, true});
  }

 private:
  std::size_t vocab_;
};

// Puts log-probability 0 on one favoured token and -10 on everything else.
class FavourScorer : public LanguageScorer {
 public:
  FavourScorer(std::size_t vocab, std::int32_t favoured) : vocab_(vocab), favoured_(favoured) {}
  std::size_t vocab_size() const override { return vocab_; }
  std::vector<PositionScore> score(std::span<const std::int32_t> ids) const override {
    std::vector<PositionScore> out;
    for (std::size_t t = 0; t + 1 < ids.size(); ++t) {
      const bool hit = ids[t + 1] == favoured_;
      out.push_back({hit ? 0.0 : -10.0, hit});
    }
    return out;
  }

 private:
  std::size_t vocab_;
  std::int32_t favoured_;
};

TokenizerModel label_tokenizer() {
  std::vector<Piece> normal;
  for (const char* t : {"A", "B", "C", "D"}) normal.push_back({M + t, -1.0, PieceKind::Normal});
  return TokenizerModel::from_normal_pieces(normal);
}

McqItem item(const std::string& id, const std::string& category, const std::string& answer) {
  return {id, category, "câu hỏi " + id, {{"A", "một"}, {"B", "hai"}, {"C", "ba"}, {"D", "bốn"}}, answer};
}

std::size_t windowed_positions(std::size_t n, std::size_t seq_len) {
  std::size_t total = 0;
  for (std::size_t start = 0; start < n; start += seq_len) {
    const std::size_t len = std::min(seq_len, n - start);
    if (len >= 2) total += len - 1;
  }
  return total;
}

}  // namespace

TEST(EvalClm, OracleModelIsPerfect) {
  const auto tok = TokenizerModel::load(lt::fixture("base_tokenizer.json"));
  const auto docs = lt::fixture_docs("vi");
  ClmEvalConfig cfg;
  cfg.seq_len = 16;
  cfg.max_docs = 50;
  const auto rep = eval_clm(OracleScorer(tok.size()), docs, tok, cfg);
  EXPECT_EQ(rep.accuracy, 1.0);
  EXPECT_EQ(rep.loss, 0.0);
  EXPECT_EQ(rep.documents, 50u);
}

TEST(EvalClm, TokensCountScoredWindowPositions) {
  const auto tok = TokenizerModel::load(lt::fixture("base_tokenizer.json"));
  const auto all = lt::fixture_docs("vi");
  const std::vector<Document> docs(all.begin(), all.begin() + 30);
  ClmEvalConfig cfg;
  cfg.seq_len = 7;
  cfg.max_docs = 1000;
  std::size_t expected = 0;
  for (const auto& d : docs) expected += windowed_positions(tok.encode(d.text).size(), cfg.seq_len);
  const auto rep = eval_clm(OracleScorer(tok.size()), docs, tok, cfg);
  EXPECT_EQ(rep.tokens, expected);
  std::size_t per_doc = 0;
  for (const auto& d : rep.per_doc) per_doc += d.tokens;
  EXPECT_EQ(per_doc, expected);
}

TEST(EvalClm, UniformModelLossIsLogVocab) {
  TinyLMConfig cfg;
  cfg.vocab_size = 1300;
  cfg.hidden = 8;
  cfg.layers = 1;
  cfg.heads = 2;
  cfg.kv_heads = 1;
  cfg.mlp_hidden = 8;
  auto ckpt = init_checkpoint(cfg, 1, DType::F64);
  auto& head = require_tensor(ckpt.tensors, kHeadName);
  for (std::size_t i = 0; i < head.numel(); ++i) head.set(i, 0.0);
  const auto tok = TokenizerModel::load(lt::fixture("base_tokenizer.json"));
  const auto all = lt::fixture_docs("vi");
  const std::vector<Document> docs(all.begin(), all.begin() + 10);
  ClmEvalConfig ecfg;
  ecfg.seq_len = 32;
  const auto rep = eval_clm(TransformerScorer(ckpt), docs, tok, ecfg);
  EXPECT_NEAR(rep.loss, std::log(1300.0), 1e-6);
}

TEST(EvalClm, ShortDocumentsAreSkipped) {
  const auto tok = label_tokenizer();
  const std::vector<Document> docs = {{"short", "A", ""}, {"long", "A B C D", ""}};
  const auto rep = eval_clm(OracleScorer(tok.size()), docs, tok, {});
  EXPECT_EQ(rep.skipped, std::vector<std::string>{"short"});
  EXPECT_EQ(rep.documents, 1u);
  EXPECT_EQ(rep.tokens, 3u);
}

TEST(EvalClm, ReportColumns) {
  const auto tok = label_tokenizer();
  const std::vector<Document> docs = {{"d", "A B C D", ""}};
  const auto j = eval_clm(OracleScorer(tok.size()), docs, tok, {}, "tiny").to_json();
  std::vector<std::string> keys;
  for (const auto& [k, v] : j.items()) keys.push_back(k);
  ASSERT_GE(keys.size(), 6u);
  EXPECT_EQ(std::vector<std::string>(keys.begin(), keys.begin() + 6),
            (std::vector<std::string>{"Model", "Type", "Length", "Tokens", "Loss", "Accuracy"}));
  EXPECT_EQ(j["Model"], "tiny");
}

TEST(EvalMcq, AllMassOnGoldGivesHundred) {
  const auto tok = label_tokenizer();
  const std::vector<McqItem> items = {item("q1", "stem_math", "C")};
  const auto rep = eval_mcq(FavourScorer(tok.size(), *tok.find(M + "C")), items, tok);
  EXPECT_EQ(rep.total.score(), 100.0);
  EXPECT_EQ(rep.predictions[0].predicted, "C");
}

TEST(EvalMcq, TiesGoToSmallestLabel) {
  const auto tok = label_tokenizer();
  const std::vector<McqItem> items = {item("q1", "other_x", "B")};
  const auto rep = eval_mcq(FavourScorer(tok.size(), -1), items, tok);
  EXPECT_EQ(rep.predictions[0].predicted, "A");
  EXPECT_EQ(rep.total.correct, 0u);
}

TEST(EvalMcq, RollupsAndPermutationInvariance) {
  const auto tok = label_tokenizer();
  const FavourScorer model(tok.size(), *tok.find(M + "A"));
  // Always answers A: correct exactly where the gold label is A.
  std::vector<McqItem> items = {item("1", "stem_math", "A"),         item("2", "stem_math", "B"),
                                item("3", "stem_physics", "A"),      item("4", "humanity_history", "D"),
                                item("5", "social_science_law", "A"), item("6", "mystery", "A")};
  const auto rep = eval_mcq(model, items, tok);
  EXPECT_EQ(rep.total.correct, 4u);
  EXPECT_EQ(rep.total.answered, 6u);
  EXPECT_EQ(rep.supercategories.at("stem").correct, 2u);
  EXPECT_EQ(rep.supercategories.at("stem").answered, 3u);
  EXPECT_EQ(rep.supercategories.at("other").correct, 1u);
  EXPECT_EQ(rep.subjects.at("stem_math").answered, 2u);

  std::size_t sub_correct = 0, sub_answered = 0;
  for (const auto& [name, t] : rep.subjects) {
    if (supercategory(name) == "stem") sub_correct += t.correct, sub_answered += t.answered;
  }
  EXPECT_EQ(sub_correct, rep.supercategories.at("stem").correct);
  EXPECT_EQ(sub_answered, rep.supercategories.at("stem").answered);

  const auto rows = rep.detail_rows();
  const auto stem_total = std::find_if(rows.begin(), rows.end(), [](const auto& r) { return r.first == "stem_total"; });
  ASSERT_NE(stem_total, rows.end());
  EXPECT_DOUBLE_EQ(stem_total->second, 66.67);
  EXPECT_EQ(rows.front().first, "total");

  std::mt19937 rng(1);
  std::shuffle(items.begin(), items.end(), rng);
  EXPECT_EQ(eval_mcq(model, items, tok).to_json(), rep.to_json());
}

TEST(EvalMcq, Supercategories) {
  EXPECT_EQ(supercategory("stem_high_school_physics"), "stem");
  EXPECT_EQ(supercategory("social_science_economics"), "social_science");
  EXPECT_EQ(supercategory("humanity_philosophy"), "humanity");
  EXPECT_EQ(supercategory("other_driving"), "other");
  EXPECT_EQ(supercategory("stemcell"), "other");
}

TEST(EvalMcq, TemplateRendering) {
  const McqTemplate tmpl;
  const auto text = tmpl.render(item("q", "stem_x", "A"));
  EXPECT_EQ(text, "câu hỏi q\nA. một\nB. hai\nC. ba\nD. bốn\nĐáp án:");
  McqTemplate bad;
  bad.prompt = "{question} only";
  EXPECT_THROW(bad.validate(), UsageError);
}

TEST(EvalMcq, ParsingErrors) {
  std::istringstream missing_gold(
      R"({"id":"x9","category":"stem_a","question":"q","choices":[{"label":"A","text":"1"},{"label":"B","text":"2"}],"answer":"E"})");
  try {
    parse_mcq(missing_gold);
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("x9"), std::string::npos);
  }
  std::istringstream broken("{\"id\":\n");
  EXPECT_THROW(parse_mcq(broken), DataError);

  const auto items = read_mcq(lt::fixture("mcq.jsonl"));
  EXPECT_FALSE(items.empty());
}
