#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "langxpand/checkpoint.hpp"
#include "langxpand/corpus.hpp"
#include "langxpand/dedup.hpp"
#include "langxpand/eval.hpp"
#include "langxpand/ngram_lm.hpp"
#include "langxpand/tokenizer.hpp"
#include "langxpand/toxicity.hpp"
#include "langxpand/trainer.hpp"

// One function per pipeline stage. Each writes its outputs plus manifest.json
// into `out` and returns a JSON report (also saved as report.json).
namespace langxpand::cli {

using std::filesystem::path;
using Json = nlohmann::ordered_json;

Json stage_sample(const path& corpus, SampleSize keep, std::uint64_t seed, const path& out);
Json stage_dedup(const path& corpus, const DedupConfig& cfg, const path& out);
Json stage_train_toxic(const path& tsv, const ToxicityTrainConfig& cfg, const path& out);
// `scorer` is a toxicity model JSON, or with scores_table a TSV of id<TAB>score.
Json stage_filter_toxic(const path& corpus, const path& scorer, bool scores_table, double threshold, const path& out);
Json stage_lm_train(const path& corpus, std::size_t order, const NGramSmoothing& smoothing, const path& out);
Json stage_filter_ppl(const path& corpus, const path& lm, double max_ppl, const path& out);
Json stage_stats(const path& corpus, const std::optional<path>& tokenizer, const std::optional<path>& out);

Json stage_tok_train(const path& corpus, const UnigramTrainConfig& cfg, const path& out);
Json stage_tok_filter(const path& tokenizer, const path& corpus, const CharPolicy& policy,
                      std::optional<std::size_t> cap, const path& out);
Json stage_tok_merge(const path& base, const path& addon, const path& out);

Json stage_vocab_analyze(const path& base, const path& addon, const path& corpus, const std::vector<std::size_t>& sizes,
                         const std::optional<path>& reference, std::size_t hidden, const path& out);
Json stage_vocab_report(const path& curve_json, const std::optional<path>& reference, const path& out);

Json stage_ckpt_init(const TinyLMConfig& cfg, std::uint64_t seed, DType dtype, const path& out);
Json stage_ckpt_expand(const path& ckpt, std::size_t new_vocab, double jitter, std::uint64_t seed, const path& out);
Json stage_ckpt_verify(const path& old_ckpt, const path& new_ckpt, std::size_t samples, std::uint64_t seed,
                       const std::optional<path>& out);

// Trains to cfg.total_steps, or stops early after `stop_after` steps with a
// resumable snapshot in out/snapshot.
Json stage_train_run(const path& ckpt, const path& corpus, const path& tokenizer, const TrainConfig& cfg, const path& out,
                     std::optional<std::size_t> stop_after = std::nullopt);
Json stage_train_resume(const path& snapshot, const path& corpus, const path& tokenizer, const path& out,
                        std::optional<std::size_t> stop_after = std::nullopt);

Json stage_eval_clm(const path& ckpt, const path& corpus, const path& tokenizer, const ClmEvalConfig& cfg,
                    const path& out);
Json stage_eval_mcq(const path& ckpt, const path& items, const path& tokenizer, const McqTemplate& tmpl, const path& out);

// "vietnamese" or an explicit {"ranges", "max_piece_len"} object.
CharPolicy policy_from_config(const nlohmann::json& j);

// Runs every stage in order from a project config. Relative paths in the
// config resolve against the config file's directory.
Json run_pipeline(const path& config, const std::optional<path>& out_override, std::optional<std::uint64_t> seed_override);

}  // namespace langxpand::cli
