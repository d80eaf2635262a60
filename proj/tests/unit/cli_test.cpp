#include <gtest/gtest.h>

#ifdef LANGXPAND_HAVE_CLI

#include <sstream>

#include <nlohmann/json.hpp>

#include "dispatch.hpp"
#include "support.hpp"

namespace lt = langxpand::testing;

namespace {

struct Run {
  int code;
  std::string out;
  std::string err;
};

Run run(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = langxpand::cli::dispatch(args, out, err);
  return {code, out.str(), err.str()};
}

}  // namespace

TEST(Cli, CorpusStatsPrintsJson) {
  const auto r = run({"corpus", "stats", lt::fixture("mini.jsonl").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = nlohmann::json::parse(r.out);
  EXPECT_GT(j["num_docs"].get<int>(), 0);
  EXPECT_GT(j["total_bytes"].get<int>(), 0);
}

TEST(Cli, MissingInputIsDataError) {
  lt::TempDir dir;
  const auto missing = (dir / "absent.jsonl").string();
  const auto r = run({"corpus", "stats", missing});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find(missing), std::string::npos) << r.err;
}

TEST(Cli, UnknownSubcommandIsUsageError) {
  auto r = run({"frobnicate"});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("frobnicate"), std::string::npos);
  EXPECT_NE(r.err.find("Usage"), std::string::npos);
  r = run({"corpus", "frobnicate"});
  EXPECT_EQ(r.code, 1);
  EXPECT_EQ(run({}).code, 1);
}

TEST(Cli, HelpExitsZero) {
  const auto r = run({"--help"});
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("pipeline"), std::string::npos);
}

TEST(Cli, BadOptionValueIsUsageError) {
  lt::TempDir dir;
  const auto r = run({"corpus", "sample", lt::fixture("mini.jsonl").string(), "--fraction", "1.5", "--out",
                      dir.path().string()});
  EXPECT_EQ(r.code, 1) << r.err;
}

TEST(Cli, EncodeRoundtripsThroughJson) {
  const auto r = run({"tok", "encode", lt::fixture("base_tokenizer.json").string(), "xin chào"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = nlohmann::json::parse(r.out);
  EXPECT_EQ(j["encodings"][0]["decoded"], "xin chào");
}

TEST(Cli, StageWritesReportAndManifest) {
  lt::TempDir dir;
  const auto out = dir / "sample";
  const auto r = run({"--json", "--seed", "4", "corpus", "sample", lt::fixture("mini.jsonl").string(), "--count", "25",
                      "--out", out.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(nlohmann::json::accept(r.out));
  EXPECT_TRUE(std::filesystem::exists(out / "corpus.jsonl"));
  EXPECT_TRUE(std::filesystem::exists(out / "report.json"));
  const auto manifest = nlohmann::json::parse(lt::read_file(out / "manifest.json"));
  EXPECT_TRUE(manifest.contains("config_hash"));
  EXPECT_TRUE(manifest["outputs"].contains("corpus.jsonl"));

  // Same seed, same bytes.
  const auto again = dir / "again";
  run({"--seed", "4", "corpus", "sample", lt::fixture("mini.jsonl").string(), "--count", "25", "--out", again.string()});
  EXPECT_EQ(lt::read_file(again / "corpus.jsonl"), lt::read_file(out / "corpus.jsonl"));
}

#endif
