#include <gtest/gtest.h>

#include <algorithm>
#include <sstream>

#include "langxpand/error.hpp"
#include "langxpand/vocab_analysis.hpp"
#include "support.hpp"

using namespace langxpand;
namespace lt = langxpand::testing;

namespace {

const std::string M(kSpaceMarker);

TokenizerModel model_of(const std::vector<std::string>& texts) {
  std::vector<Piece> normal;
  for (const auto& t : texts) normal.push_back({t, -1.0, PieceKind::Normal});
  return TokenizerModel::from_normal_pieces(normal);
}

}  // namespace

TEST(Vocab, ZeroAdditionsLeaveComplexityAtOne) {
  const auto base = TokenizerModel::load(lt::fixture("base_tokenizer.json"));
  const auto addon = model_of({M + "chào", M + "không"});
  const auto docs = lt::fixture_docs("vi");
  const std::vector<std::size_t> sizes = {0};
  const auto curve = relative_input_complexity(base, addon, sizes, docs);
  ASSERT_EQ(curve.points.size(), 1u);
  EXPECT_EQ(curve.points[0].ric, 1.0);
  EXPECT_EQ(curve.points[0].rec, 1.0);
  EXPECT_EQ(relative_embedding_complexity(32000, 0), 1.0);
}

TEST(Vocab, SinglePieceWordGivesInverseByteCount) {
  // The base has no normal pieces, so " abcde" costs one byte token each.
  const auto base = model_of({});
  const auto addon = model_of({M + "abcde"});
  const std::vector<Document> docs = {{"1", "abcde", ""}};
  const std::size_t m = std::string(" abcde").size();
  ASSERT_EQ(base.encode("abcde").size(), m);
  const std::vector<std::size_t> sizes = {1};
  const auto curve = relative_input_complexity(base, addon, sizes, docs);
  ASSERT_EQ(curve.points.size(), 2u);  // V=0 is always included
  EXPECT_DOUBLE_EQ(curve.points[1].ric, 1.0 / static_cast<double>(m));
  EXPECT_EQ(curve.baseline.base_tokens, m);
}

TEST(Vocab, EmbeddingComplexityArithmetic) {
  EXPECT_DOUBLE_EQ(relative_embedding_complexity(32000, 8000), 1.25);
  EXPECT_DOUBLE_EQ(relative_embedding_complexity(32000, 6659), 38659.0 / 32000.0);
  EXPECT_THROW(relative_embedding_complexity(0, 5), UsageError);
}

TEST(Vocab, RicIsMonotoneOnFixture) {
  const auto base = TokenizerModel::load(lt::fixture("base_tokenizer.json"));
  const auto docs = lt::fixture_docs("vi");
  UnigramTrainConfig cfg;
  cfg.target_vocab = 600;
  const auto addon = train_unigram(docs, cfg);
  const std::vector<std::size_t> sizes = {0, 50, 100, 200};
  const auto curve = relative_input_complexity(base, addon, sizes, docs);
  ASSERT_EQ(curve.points.size(), sizes.size());
  for (std::size_t i = 1; i < curve.points.size(); ++i) EXPECT_LE(curve.points[i].ric, curve.points[i - 1].ric);
  const std::vector<Document> some(docs.begin(), docs.begin() + 20);
  const auto merged = merge_vocab(base, addon, 100);
  EXPECT_DOUBLE_EQ(relative_input_complexity(base, addon, std::vector<std::size_t>{100}, some).points.back().ric,
                   static_cast<double>(count_tokens(merged, some)) / static_cast<double>(count_tokens(base, some)));
}

TEST(Vocab, EmptyCorpusRejected) {
  const auto base = model_of({});
  const std::vector<std::size_t> sizes = {0};
  EXPECT_THROW(relative_input_complexity(base, base, sizes, {}), DataError);
}

TEST(Vocab, OverlapMatchesSetArithmetic) {
  const auto base = model_of({"a1", "a2", "s1", "s2", "s3"});
  const auto addon = model_of({"s1", "s2", "s3", "b1"});
  const auto o = vocab_overlap(base, addon);
  EXPECT_EQ(o.shared, 3u);
  EXPECT_EQ(o.base_only, 2u);
  EXPECT_EQ(o.addon_only, 1u);
}

TEST(Vocab, BundledReferenceTable) {
  const auto ref = read_reference_csv(lt::fixture("vocab_complexity_reference.csv"));
  ASSERT_EQ(ref.size(), 24u);
  EXPECT_EQ(ref.front().vocab_add, 1000u);
  EXPECT_EQ(ref.back().vocab_add, 120000u);
  const auto it = std::find_if(ref.begin(), ref.end(), [](const auto& p) { return p.vocab_add == 8000; });
  ASSERT_NE(it, ref.end());
  EXPECT_DOUBLE_EQ(it->ric, 0.50747301);
}

TEST(Vocab, NonNumericReferenceCellNamesRow) {
  std::istringstream in("vocab_add,ric,rec\n1000,0.8,1.03\n2000,oops,1.06\n");
  try {
    parse_reference_csv(in);
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("row 2"), std::string::npos) << e.what();
  }
}

TEST(Vocab, CurveCsvHasHeaderPlusOneRowPerPoint) {
  ComplexityCurve curve;
  curve.points = {{0, 1.0, 1.0}, {10, 0.9, 1.01}, {20, 0.85, 1.02}};
  std::istringstream csv(curve_csv(curve));
  std::vector<std::string> lines;
  for (std::string l; std::getline(csv, l);) lines.push_back(l);
  ASSERT_EQ(lines.size(), 4u);
  EXPECT_EQ(lines[0], "vocab_add,ric,rec");
  EXPECT_EQ(lines[2].substr(0, 3), "10,");

  lt::TempDir dir;
  const auto paths = emit_curve_report(dir.path(), curve);
  EXPECT_TRUE(std::filesystem::exists(paths.csv));
  EXPECT_NE(lt::read_file(paths.svg).find("<svg"), std::string::npos);
}
