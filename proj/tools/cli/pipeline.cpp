#include <fstream>

#include "langxpand/error.hpp"
#include "langxpand/vocab_analysis.hpp"
#include "manifest.hpp"
#include "stages.hpp"

namespace langxpand::cli {
namespace {

const nlohmann::json& block(const nlohmann::json& cfg, const char* name) {
  static const nlohmann::json empty = nlohmann::json::object();
  if (!cfg.contains(name)) return empty;
  const auto& b = cfg.at(name);
  if (!b.is_object()) throw UsageError(std::string("config block '") + name + "' must be an object");
  return b;
}

path resolve(const path& base, const nlohmann::json& paths, const char* key, bool required = true) {
  if (!paths.contains(key) || paths.at(key).is_null()) {
    if (required) throw UsageError(std::string("config is missing paths.") + key);
    return {};
  }
  const path p = paths.at(key).get<std::string>();
  return p.is_absolute() ? p : base / p;
}

SampleSize sample_size(const nlohmann::json& b) {
  if (b.contains("count")) return SampleCount{b.at("count").get<std::size_t>()};
  return SampleFraction{b.value("fraction", 1.0)};
}

}  // namespace

Json run_pipeline(const path& config_path, const std::optional<path>& out_override,
                  std::optional<std::uint64_t> seed_override) {
  const nlohmann::json cfg = read_json(config_path);
  const path base = std::filesystem::absolute(config_path).parent_path();
  const auto& paths = block(cfg, "paths");
  const std::uint64_t seed = seed_override ? *seed_override : cfg.value("seed", std::uint64_t{0});
  const path out = out_override ? *out_override : resolve(base, paths, "out");

  const path corpus = resolve(base, paths, "corpus");
  const path labeled = resolve(base, paths, "toxicity_labeled");
  const path base_tok = resolve(base, paths, "base_tokenizer");
  const path mcq = resolve(base, paths, "mcq");
  const path reference = resolve(base, paths, "vocab_reference", false);
  const path lm_reference = resolve(base, paths, "lm_reference", false);
  for (const auto& p : {corpus, labeled, base_tok, mcq}) {
    if (!std::filesystem::exists(p)) throw DataError("missing input: " + p.string());
  }

  const auto& sample_b = block(cfg, "sample");
  auto dedup_cfg = DedupConfig::from_json(block(cfg, "dedup"));
  dedup_cfg.seed = seed;
  const auto& tox_b = block(cfg, "toxicity");
  auto tox_cfg = ToxicityTrainConfig::from_json(block(tox_b, "train"));
  tox_cfg.seed = seed;
  const double tox_threshold = tox_b.value("threshold", 0.5);
  const auto& ppl_b = block(cfg, "perplexity");
  const NGramSmoothing smoothing{ppl_b.value("discount", 0.75), ppl_b.value("unk_floor", 1e-6)};
  const auto& tok_b = block(cfg, "tokenizer");
  const auto tok_cfg = UnigramTrainConfig::from_json(block(tok_b, "train"));
  const auto policy = policy_from_config(tok_b.contains("policy") ? tok_b.at("policy") : nlohmann::json());
  std::optional<std::size_t> cap;
  if (tok_b.contains("cap") && !tok_b.at("cap").is_null()) cap = tok_b.at("cap").get<std::size_t>();
  const auto& vocab_b = block(cfg, "vocab");
  const auto sizes = vocab_b.value("sizes", std::vector<std::size_t>{250, 500, 1000, 2000});
  const auto& model_b = block(cfg, "model");
  nlohmann::json model_j = model_b;
  model_j["vocab_size"] = TokenizerModel::load(base_tok).size();
  const auto model_cfg = TinyLMConfig::from_json(model_j);
  const DType dtype = dtype_from_string(model_b.value("dtype", std::string("f32")));
  const auto& train_b = block(cfg, "train");
  auto train_cfg = TrainConfig::from_json(train_b);
  train_cfg.seed = seed;
  auto clm_cfg = ClmEvalConfig::from_json(block(block(cfg, "eval"), "clm"));
  clm_cfg.seed = seed;

  std::filesystem::create_directories(out);
  const path report = out / "report";
  std::filesystem::create_directories(report);
  Json summary = Json::object();
  summary["seed"] = seed;

  summary["sample"] = stage_sample(corpus, sample_size(sample_b), seed, out / "01_sample");
  summary["dedup"] = stage_dedup(out / "01_sample/corpus.jsonl", dedup_cfg, out / "02_dedup");
  summary["train_toxic"] = stage_train_toxic(labeled, tox_cfg, out / "03_toxicity_model");
  summary["filter_toxic"] = stage_filter_toxic(out / "02_dedup/corpus.jsonl", out / "03_toxicity_model/toxicity_model.json",
                                               false, tox_threshold, out / "04_filter_toxic");
  // Without a clean reference the LM is fit on the corpus being filtered.
  const path lm_corpus = lm_reference.empty() ? out / "04_filter_toxic/corpus.jsonl" : lm_reference;
  summary["lm_train"] = stage_lm_train(lm_corpus, ppl_b.value("order", std::size_t{3}),
                                       smoothing, out / "05_lm");
  summary["filter_ppl"] = stage_filter_ppl(out / "04_filter_toxic/corpus.jsonl", out / "05_lm/ngram.bin",
                                           ppl_b.value("max_ppl", 1000.0), out / "06_filter_ppl");
  const path clean = out / "06_filter_ppl/corpus.jsonl";
  summary["stats"] = stage_stats(clean, std::nullopt, out / "07_stats");

  summary["tok_train"] = stage_tok_train(clean, tok_cfg, out / "08_tok_train");
  summary["tok_filter"] = stage_tok_filter(out / "08_tok_train/tokenizer.json", clean, policy, cap, out / "09_tok_filter");
  summary["tok_merge"] = stage_tok_merge(base_tok, out / "09_tok_filter/tokenizer.json", out / "10_tok_merge");
  const path merged_tok = out / "10_tok_merge/tokenizer.json";
  summary["vocab"] = stage_vocab_analyze(base_tok, out / "09_tok_filter/tokenizer.json", clean, sizes,
                                         reference.empty() ? std::nullopt : std::optional<path>(reference),
                                         vocab_b.value("hidden", model_cfg.hidden), out / "11_vocab");

  const std::size_t new_vocab = TokenizerModel::load(merged_tok).size();
  summary["ckpt_init"] = stage_ckpt_init(model_cfg, seed, dtype, out / "12_ckpt_init");
  summary["ckpt_expand"] = stage_ckpt_expand(out / "12_ckpt_init/model.xckpt", new_vocab,
                                             block(cfg, "expand").value("jitter", 0.0), seed, out / "13_ckpt_expand");
  summary["ckpt_verify"] = stage_ckpt_verify(out / "12_ckpt_init/model.xckpt", out / "13_ckpt_expand/model.xckpt",
                                             block(cfg, "verify").value("samples", std::size_t{32}), seed,
                                             out / "14_ckpt_verify");
  summary["train"] = stage_train_run(out / "13_ckpt_expand/model.xckpt", clean, merged_tok, train_cfg, out / "15_train");
  summary["eval_clm"] = stage_eval_clm(out / "15_train/model.xckpt", clean, merged_tok, clm_cfg, out / "16_eval_clm");
  summary["eval_mcq"] = stage_eval_mcq(out / "15_train/model.xckpt", mcq, merged_tok, McqTemplate{}, out / "17_eval_mcq");

  // Collected report directory.
  const auto merged = TokenizerModel::load(merged_tok);
  Json stats = Json::object();
  stats["input"] = corpus_stats(read_corpus(corpus).docs, &merged).to_json();
  for (const char* stage : {"01_sample", "02_dedup", "04_filter_toxic", "06_filter_ppl"}) {
    stats[stage] = corpus_stats(read_corpus(out / stage / "corpus.jsonl").docs, &merged).to_json();
  }
  write_json(report / "stats.json", stats);
  for (const char* f : {"curve.csv", "curve.svg", "curve.json", "overlap.json"}) {
    std::filesystem::copy_file(out / "11_vocab" / f, report / f, std::filesystem::copy_options::overwrite_existing);
  }
  std::filesystem::copy_file(out / "15_train/report.csv", report / "train.csv",
                             std::filesystem::copy_options::overwrite_existing);
  for (const char* f : {"clm_report.json", "clm_table.md"}) {
    std::filesystem::copy_file(out / "16_eval_clm" / f, report / f, std::filesystem::copy_options::overwrite_existing);
  }
  for (const char* f : {"mcq_report.json", "mcq_detail.md", "mcq_summary.md"}) {
    std::filesystem::copy_file(out / "17_eval_mcq" / f, report / f, std::filesystem::copy_options::overwrite_existing);
  }
  write_json(report / "pipeline.json", summary);
  StageManifest m("pipeline run");
  m.input("config", config_path).config({{"seed", seed}});
  m.write(report);
  return summary;
}

}  // namespace langxpand::cli
