#include "stages.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "langxpand/error.hpp"
#include "langxpand/random.hpp"
#include "langxpand/transformer.hpp"
#include "langxpand/vocab_analysis.hpp"
#include "manifest.hpp"

namespace langxpand::cli {
namespace {

Json finish(const StageManifest& manifest, const path& out, Json report) {
  write_json(out / "report.json", report);
  manifest.write(out);
  return report;
}

void prepare(const path& out) { std::filesystem::create_directories(out); }

Json removal_counts(const std::vector<Removal>& removed) {
  std::map<std::string, std::size_t> by_reason;
  for (const auto& r : removed) ++by_reason[r.reason];
  Json j = Json::object();
  for (const auto& [k, v] : by_reason) j[k] = v;
  return j;
}

Json filter_report(const std::string& stage, std::size_t input, const FilterResult& res) {
  return {{"stage", stage},
          {"input_docs", input},
          {"kept", res.kept.size()},
          {"removed", res.removed.size()},
          {"removed_by_reason", removal_counts(res.removed)}};
}

// Ingest drops are logged ahead of the stage's own removals so that every
// input line is accounted for.
FilterResult with_ingest(IngestResult&& in, FilterResult res) {
  std::vector<Removal> all = std::move(in.dropped);
  all.insert(all.end(), res.removed.begin(), res.removed.end());
  res.removed = std::move(all);
  return res;
}

Json write_filter_outputs(const std::string& stage, const StageManifest& manifest, const path& out, std::size_t input,
                          const FilterResult& res, Json extra = Json::object()) {
  write_corpus(out / "corpus.jsonl", res.kept);
  write_removals(out / "removed.jsonl", res.removed);
  Json report = filter_report(stage, input, res);
  for (auto& [k, v] : extra.items()) report[k] = v;
  return finish(manifest, out, report);
}

std::string stem(const path& p) {
  auto s = p.filename().string();
  const auto dot = s.find('.');
  return dot == std::string::npos ? s : s.substr(0, dot);
}

}  // namespace

CharPolicy policy_from_config(const nlohmann::json& j) {
  if (j.is_null() || (j.is_string() && j.get<std::string>() == "vietnamese")) return CharPolicy::vietnamese();
  if (j.is_string()) throw UsageError("unknown character policy: " + j.get<std::string>());
  return CharPolicy::from_json(j);
}

Json stage_sample(const path& corpus, SampleSize keep, std::uint64_t seed, const path& out) {
  auto in = read_corpus(corpus);
  const std::size_t input = in.docs.size() + in.dropped.size();
  FilterResult res;
  res.kept = sample_corpus(in.docs, keep, seed);
  std::set<std::string> kept_ids;
  for (const auto& d : res.kept) kept_ids.insert(d.id);
  for (const auto& d : in.docs) {
    if (!kept_ids.count(d.id)) res.removed.push_back({d.id, std::nullopt, "not_sampled", 0.0});
  }
  res = with_ingest(std::move(in), std::move(res));

  Json keep_json = std::holds_alternative<SampleFraction>(keep)
                       ? Json{{"fraction", std::get<SampleFraction>(keep).value}}
                       : Json{{"count", std::get<SampleCount>(keep).value}};
  prepare(out);
  StageManifest m("corpus sample");
  m.input("corpus", corpus).config({{"keep", keep_json}, {"seed", seed}});
  return write_filter_outputs("corpus sample", m, out, input, res,
                              {{"seed", seed},
                               {"reference_scale",
                                {{"source_docs", ReferenceScale::source_docs},
                                 {"selected_docs", ReferenceScale::selected_docs},
                                 {"selected_tokens", ReferenceScale::selected_tokens}}}});
}

Json stage_dedup(const path& corpus, const DedupConfig& cfg, const path& out) {
  cfg.validate();
  auto in = read_corpus(corpus);
  const std::size_t input = in.docs.size() + in.dropped.size();
  auto res = with_ingest(std::move(in), dedup_ngram(in.docs, cfg));
  prepare(out);
  StageManifest m("corpus dedup");
  m.input("corpus", corpus).config(cfg.to_json());
  return write_filter_outputs("corpus dedup", m, out, input, res);
}

Json stage_train_toxic(const path& tsv, const ToxicityTrainConfig& cfg, const path& out) {
  const auto data = read_labeled_tsv(tsv);
  const auto result = train_toxicity(data, cfg);
  prepare(out);
  result.model.save(out / "toxicity_model.json");
  StageManifest m("corpus train-toxic");
  m.input("labeled", tsv).config(cfg.to_json());
  return finish(m, out,
                {{"stage", "corpus train-toxic"}, {"examples", data.size()}, {"train_accuracy", result.train_accuracy}});
}

Json stage_filter_toxic(const path& corpus, const path& scorer, bool scores_table, double threshold, const path& out) {
  if (!(threshold >= 0.0 && threshold <= 1.0)) throw UsageError("toxicity threshold must be in [0, 1]");
  auto in = read_corpus(corpus);
  const std::size_t input = in.docs.size() + in.dropped.size();
  FilterResult res;
  if (scores_table) {
    res = filter_toxic(in.docs, ScoreTable::read(scorer), threshold);
  } else {
    res = filter_toxic(in.docs, ToxicityModel::load(scorer), threshold);
  }
  res = with_ingest(std::move(in), std::move(res));
  prepare(out);
  StageManifest m("corpus filter-toxic");
  m.input("corpus", corpus).input(scores_table ? "scores" : "model", scorer).config({{"threshold", threshold}});
  return write_filter_outputs("corpus filter-toxic", m, out, input, res, {{"threshold", threshold}});
}

Json stage_lm_train(const path& corpus, std::size_t order, const NGramSmoothing& smoothing, const path& out) {
  const auto in = read_corpus(corpus);
  const auto lm = NGramModel::train(in.docs, order, smoothing);
  prepare(out);
  lm.save(out / "ngram.bin");
  StageManifest m("lm train");
  m.input("corpus", corpus).config({{"order", order}, {"discount", smoothing.discount}, {"unk_floor", smoothing.unk_floor}});
  return finish(m, out, {{"stage", "lm train"}, {"order", order}, {"docs", in.docs.size()}, {"vocab_size", lm.vocab_size()}});
}

Json stage_filter_ppl(const path& corpus, const path& lm_path, double max_ppl, const path& out) {
  if (!(max_ppl > 0.0)) throw UsageError("max_ppl must be positive");
  auto in = read_corpus(corpus);
  const std::size_t input = in.docs.size() + in.dropped.size();
  const auto lm = NGramModel::load(lm_path);
  auto res = with_ingest(std::move(in), filter_perplexity(in.docs, lm, max_ppl));
  prepare(out);
  StageManifest m("corpus filter-ppl");
  m.input("corpus", corpus).input("lm", lm_path).config({{"max_ppl", max_ppl}});
  return write_filter_outputs("corpus filter-ppl", m, out, input, res, {{"max_ppl", max_ppl}});
}

Json stage_stats(const path& corpus, const std::optional<path>& tokenizer, const std::optional<path>& out) {
  const auto in = read_corpus(corpus);
  std::optional<TokenizerModel> tok;
  if (tokenizer) tok = TokenizerModel::load(*tokenizer);
  const Json stats = corpus_stats(in.docs, tok ? &*tok : nullptr).to_json();
  if (out) {
    prepare(*out);
    write_json(*out / "stats.json", stats);
    StageManifest m("corpus stats");
    m.input("corpus", corpus);
    if (tokenizer) m.input("tokenizer", *tokenizer);
    m.write(*out);
  }
  return stats;
}

Json stage_tok_train(const path& corpus, const UnigramTrainConfig& cfg, const path& out) {
  const auto in = read_corpus(corpus);
  UnigramTrainReport rep;
  const auto model = train_unigram(in.docs, cfg, &rep);
  prepare(out);
  model.save(out / "tokenizer.json");
  StageManifest m("tok train");
  m.input("corpus", corpus).config(cfg.to_json());
  Json report{{"stage", "tok train"}, {"pieces", model.size()}, {"normal_pieces", model.normal_count()}};
  const Json details = rep.to_json();
  for (const auto& [k, v] : details.items()) report[k] = v;
  return finish(m, out, report);
}

Json stage_tok_filter(const path& tokenizer, const path& corpus, const CharPolicy& policy,
                      std::optional<std::size_t> cap, const path& out) {
  const auto model = TokenizerModel::load(tokenizer);
  const auto in = read_corpus(corpus);
  const auto freq = piece_frequencies(model, in.docs);
  const auto filtered = filter_pieces(model, policy, freq, cap);
  prepare(out);
  write_frequencies(out / "freq.tsv", freq);
  filtered.save(out / "tokenizer.json");
  StageManifest m("tok filter");
  m.input("tokenizer", tokenizer).input("corpus", corpus).config({{"policy", policy.to_json()}, {"cap", cap ? Json(*cap) : Json(nullptr)}});
  return finish(m, out,
                {{"stage", "tok filter"},
                 {"normal_before", model.normal_count()},
                 {"normal_after", filtered.normal_count()},
                 {"removed", model.normal_count() - filtered.normal_count()}});
}

Json stage_tok_merge(const path& base_path, const path& addon_path, const path& out) {
  const auto base = TokenizerModel::load(base_path);
  const auto addon = TokenizerModel::load(addon_path);
  const auto merged = merge_vocab(base, addon);
  prepare(out);
  merged.save(out / "tokenizer.json");
  const auto overlap = vocab_overlap(base, addon);
  write_json(out / "overlap.json", overlap.to_json());
  StageManifest m("tok merge");
  m.input("base", base_path).input("addon", addon_path);
  const std::size_t appended = merged.size() - base.size();
  Json report{{"stage", "tok merge"},
              {"base_size", base.size()},
              {"appended", appended},
              {"merged_size", merged.size()},
              {"first_new_id", appended ? Json(base.size()) : Json(nullptr)},
              {"last_new_id", appended ? Json(merged.size() - 1) : Json(nullptr)},
              {"overlap", overlap.to_json()}};
  return finish(m, out, report);
}

Json stage_vocab_analyze(const path& base_path, const path& addon_path, const path& corpus,
                         const std::vector<std::size_t>& sizes, const std::optional<path>& reference, std::size_t hidden,
                         const path& out) {
  const auto base = TokenizerModel::load(base_path);
  const auto addon = TokenizerModel::load(addon_path);
  const auto in = read_corpus(corpus);
  auto curve = relative_input_complexity(base, addon, sizes, in.docs);
  curve.baseline.base_tokenizer = base_path.filename().string();
  curve.baseline.corpus = corpus.filename().string();
  curve.baseline.hidden = hidden;
  std::vector<ReferencePoint> ref;
  if (reference) ref = read_reference_csv(*reference);
  prepare(out);
  emit_curve_report(out, curve, ref, vocab_overlap(base, addon));
  StageManifest m("vocab analyze");
  m.input("base", base_path).input("addon", addon_path).input("corpus", corpus);
  if (reference) m.input("reference", *reference);
  m.config({{"sizes", sizes}, {"hidden", hidden}});
  Json report{{"stage", "vocab analyze"}, {"curve", curve.to_json()}, {"reference_points", ref.size()}};
  return finish(m, out, report);
}

Json stage_vocab_report(const path& curve_json, const std::optional<path>& reference, const path& out) {
  const auto j = read_json(curve_json);
  ComplexityCurve curve;
  try {
    const auto& b = j.at("baseline");
    curve.baseline = {b.value("base_tokenizer", ""), b.value("corpus", ""), b.at("n0").get<std::size_t>(),
                      b.value("hidden", std::size_t{0}), b.value("base_tokens", std::size_t{0})};
    for (const auto& p : j.at("points")) {
      curve.points.push_back({p.at("vocab_add").get<std::size_t>(), p.at("ric").get<double>(), p.at("rec").get<double>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(curve_json.string() + ": " + e.what());
  }
  std::vector<ReferencePoint> ref;
  if (reference) ref = read_reference_csv(*reference);
  prepare(out);
  emit_curve_report(out, curve, ref);
  StageManifest m("vocab report");
  m.input("curve", curve_json);
  if (reference) m.input("reference", *reference);
  return finish(m, out, {{"stage", "vocab report"}, {"points", curve.points.size()}, {"reference_points", ref.size()}});
}

Json stage_ckpt_init(const TinyLMConfig& cfg, std::uint64_t seed, DType dtype, const path& out) {
  const auto ckpt = init_checkpoint(cfg, seed, dtype);
  prepare(out);
  ckpt.save(out / "model.xckpt");
  StageManifest m("ckpt init");
  m.config({{"model", cfg.to_json()}, {"seed", seed}, {"dtype", std::string(to_string(dtype))}});
  return finish(m, out,
                {{"stage", "ckpt init"}, {"parameters", ckpt.parameter_count()}, {"vocab_size", cfg.vocab_size},
                 {"dtype", std::string(to_string(dtype))}});
}

Json stage_ckpt_expand(const path& ckpt_path, std::size_t new_vocab, double jitter, std::uint64_t seed, const path& out) {
  const auto ckpt = ModelCheckpoint::load(ckpt_path);
  const auto expanded = expand_embeddings(ckpt, new_vocab, jitter, seed);
  prepare(out);
  expanded.save(out / "model.xckpt");
  StageManifest m("ckpt expand");
  m.input("checkpoint", ckpt_path).config({{"new_vocab", new_vocab}, {"jitter", jitter}, {"seed", seed}});
  return finish(m, out,
                {{"stage", "ckpt expand"},
                 {"old_vocab", ckpt.vocab_size()},
                 {"new_vocab", new_vocab},
                 {"appended_rows", new_vocab - ckpt.vocab_size()},
                 {"embedding_shape", require_tensor(expanded.tensors, kEmbeddingName).shape()},
                 {"head_shape", require_tensor(expanded.tensors, kHeadName).shape()}});
}

Json stage_ckpt_verify(const path& old_path, const path& new_path, std::size_t samples, std::uint64_t seed,
                       const std::optional<path>& out) {
  const auto old_ckpt = ModelCheckpoint::load(old_path);
  const auto new_ckpt = ModelCheckpoint::load(new_path);
  const Tensor& old_head = require_tensor(old_ckpt.tensors, kHeadName);
  const Tensor& new_head = require_tensor(new_ckpt.tensors, kHeadName);
  const std::size_t h = old_head.cols(), n = old_head.rows();
  Rng rng(seed);
  std::vector<std::vector<double>> hs(samples, std::vector<double>(h));
  for (auto& v : hs) {
    for (auto& x : v) x = rng.normal();
  }
  const auto rep = verify_rescaling_identity(old_head, new_head, hs);

  // Logit of each appended row against the mean original logit.
  const auto w = new_head.to_f64();
  double mean_dev = 0.0;
  for (const auto& v : hs) {
    double mean = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
      double z = 0.0;
      for (std::size_t c = 0; c < h; ++c) z += w[r * h + c] * v[c];
      mean += z;
    }
    mean /= static_cast<double>(n);
    for (std::size_t r = n; r < new_head.rows(); ++r) {
      double z = 0.0;
      for (std::size_t c = 0; c < h; ++c) z += w[r * h + c] * v[c];
      mean_dev = std::max(mean_dev, std::abs(z - mean));
    }
  }
  Json report{{"stage", "ckpt verify"}, {"rescaling", rep.to_json()}, {"max_mean_logit_deviation", mean_dev}};
  report["rescaling"].erase("factors");
  if (out) {
    prepare(*out);
    StageManifest m("ckpt verify");
    m.input("old", old_path).input("new", new_path).config({{"samples", samples}, {"seed", seed}});
    return finish(m, *out, report);
  }
  return report;
}

namespace {

Json train_outputs(const Trainer& tr, const StageManifest& m, const path& out) {
  tr.checkpoint().save(out / "model.xckpt");
  write_text(out / "report.csv", tr.report().csv());
  Json report{{"stage", "train"},
              {"steps_completed", tr.current_step()},
              {"total_steps", tr.config().total_steps},
              {"parameters", tr.checkpoint().parameter_count()},
              {"optimizer_resident_values", optimizer_resident_values(tr.checkpoint().tensors)}};
  const Json summary = tr.report().summary_json();
  for (const auto& [k, v] : summary.items()) report[k] = v;
  return finish(m, out, report);
}

}  // namespace

Json stage_train_run(const path& ckpt_path, const path& corpus, const path& tokenizer, const TrainConfig& cfg,
                     const path& out, std::optional<std::size_t> stop_after) {
  const auto tok = TokenizerModel::load(tokenizer);
  const auto in = read_corpus(corpus);
  Trainer tr(ModelCheckpoint::load(ckpt_path), tokenize_corpus(in.docs, tok), cfg);
  prepare(out);
  tr.run(stop_after, out / "snapshot");
  StageManifest m("train run");
  m.input("checkpoint", ckpt_path).input("corpus", corpus).input("tokenizer", tokenizer).config(cfg.to_json());
  return train_outputs(tr, m, out);
}

Json stage_train_resume(const path& snapshot, const path& corpus, const path& tokenizer, const path& out,
                        std::optional<std::size_t> stop_after) {
  const auto tok = TokenizerModel::load(tokenizer);
  const auto in = read_corpus(corpus);
  Trainer tr = Trainer::resume(snapshot, tokenize_corpus(in.docs, tok));
  prepare(out);
  tr.run(stop_after, out / "snapshot");
  StageManifest m("train run");
  m.input("corpus", corpus).input("tokenizer", tokenizer).config(tr.config().to_json());
  return train_outputs(tr, m, out);
}

Json stage_eval_clm(const path& ckpt_path, const path& corpus, const path& tokenizer, const ClmEvalConfig& cfg,
                    const path& out) {
  const auto ckpt = ModelCheckpoint::load(ckpt_path);
  const auto tok = TokenizerModel::load(tokenizer);
  const auto in = read_corpus(corpus);
  const TransformerScorer scorer(ckpt);
  const auto rep = eval_clm(scorer, in.docs, tok, cfg, stem(ckpt_path));
  prepare(out);
  write_json(out / "clm_report.json", rep.to_json());
  write_text(out / "clm_table.md", rep.table());
  StageManifest m("eval clm");
  m.input("checkpoint", ckpt_path).input("corpus", corpus).input("tokenizer", tokenizer).config(cfg.to_json());
  Json report = rep.to_json();
  report.erase("per_doc_nll");
  return finish(m, out, report);
}

Json stage_eval_mcq(const path& ckpt_path, const path& items_path, const path& tokenizer, const McqTemplate& tmpl,
                    const path& out) {
  const auto ckpt = ModelCheckpoint::load(ckpt_path);
  const auto tok = TokenizerModel::load(tokenizer);
  const auto items = read_mcq(items_path);
  const TransformerScorer scorer(ckpt);
  const auto rep = eval_mcq(scorer, items, tok, tmpl, stem(ckpt_path));
  prepare(out);
  write_json(out / "mcq_report.json", rep.to_json());
  write_text(out / "mcq_detail.md", rep.detail_table());
  write_text(out / "mcq_summary.md", rep.summary_table());
  StageManifest m("eval mcq");
  m.input("checkpoint", ckpt_path).input("items", items_path).input("tokenizer", tokenizer)
      .config({{"prompt", tmpl.prompt}, {"choice_line", tmpl.choice_line}});
  return finish(m, out,
                {{"stage", "eval mcq"}, {"items", items.size()}, {"summary", rep.summary_row()},
                 {"total", {{"correct", rep.total.correct}, {"answered", rep.total.answered}}}});
}

}  // namespace langxpand::cli
