#include "dispatch.hpp"

#include <functional>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "langxpand/error.hpp"
#include "langxpand/parallel.hpp"
#include "manifest.hpp"
#include "stages.hpp"

namespace langxpand::cli {
namespace {

using Action = std::function<Json()>;

struct Globals {
  bool json = false;
  bool deterministic = false;
  std::optional<std::uint64_t> seed;
  std::uint64_t seed_or(std::uint64_t d) const { return seed ? *seed : d; }
};

CLI::App* leaf(CLI::App* parent, const std::string& name, const std::string& desc,
               std::vector<std::pair<CLI::App*, Action>>& actions) {
  auto* s = parent->add_subcommand(name, desc);
  s->fallthrough();
  actions.emplace_back(s, Action{});
  return s;
}

void set_action(std::vector<std::pair<CLI::App*, Action>>& actions, CLI::App* s, Action a) {
  for (auto& [app, act] : actions) {
    if (app == s) act = std::move(a);
  }
}

std::vector<std::size_t> parse_sizes(const std::string& csv) {
  std::vector<std::size_t> out;
  std::stringstream ss(csv);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    try {
      std::size_t used = 0;
      const auto v = std::stoull(cell, &used);
      if (used != cell.size()) throw std::invalid_argument(cell);
      out.push_back(v);
    } catch (const std::exception&) {
      throw UsageError("bad size list: " + csv);
    }
  }
  return out;
}

void print_human(const Json& report, std::ostream& out) {
  for (const auto& [k, v] : report.items()) {
    if (v.is_primitive()) out << k << ": " << (v.is_string() ? v.get<std::string>() : v.dump()) << "\n";
  }
}

}  // namespace

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Language adaptation toolkit for small causal language models", "langxpand"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_flag("--json", g.json, "Print the stage report as JSON");
  app.add_flag("--deterministic", g.deterministic, "Single worker, fixed reduction order");
  app.add_option("--seed", g.seed, "Seed for every random choice");

  std::vector<std::pair<CLI::App*, Action>> actions;
  bool always_json = false;

  // --- corpus -----------------------------------------------------------------
  auto* corpus = app.add_subcommand("corpus", "Corpus curation stages");
  corpus->require_subcommand(1);
  corpus->fallthrough();

  std::string in_path, out_dir, aux_path, aux2_path, aux3_path;
  std::optional<double> fraction;
  std::optional<std::size_t> count;
  {
    auto* s = leaf(corpus, "sample", "Uniform random selection", actions);
    s->add_option("corpus", in_path)->required();
    auto* f = s->add_option("--fraction", fraction, "Fraction of documents to keep");
    auto* c = s->add_option("--count", count, "Number of documents to keep");
    f->excludes(c);
    s->add_option("--out", out_dir)->required();
    set_action(actions, s, [&] {
      if (!fraction && !count) throw UsageError("corpus sample needs --fraction or --count");
      const SampleSize keep = fraction ? SampleSize{SampleFraction{*fraction}} : SampleSize{SampleCount{*count}};
      return stage_sample(in_path, keep, g.seed_or(0), out_dir);
    });
  }
  DedupConfig dedup;
  {
    auto* s = leaf(corpus, "dedup", "MinHash near-duplicate removal", actions);
    s->add_option("corpus", in_path)->required();
    s->add_option("--ngram", dedup.ngram_n, "Word shingle size")->capture_default_str();
    s->add_option("--hashes", dedup.num_hashes, "MinHash signature length")->capture_default_str();
    s->add_option("--bands", dedup.bands, "LSH bands")->capture_default_str();
    s->add_option("--threshold", dedup.jaccard_threshold, "Jaccard threshold")->capture_default_str();
    s->add_option("--out", out_dir)->required();
    set_action(actions, s, [&] {
      if (g.seed) dedup.seed = *g.seed;
      return stage_dedup(in_path, dedup, out_dir);
    });
  }
  ToxicityTrainConfig tox;
  {
    auto* s = leaf(corpus, "train-toxic", "Train the toxicity classifier", actions);
    s->add_option("labeled", in_path, "TSV of label<TAB>text")->required();
    s->add_option("--epochs", tox.epochs)->capture_default_str();
    s->add_option("--lr", tox.learning_rate)->capture_default_str();
    s->add_option("--hash-dim", tox.hash_dim)->capture_default_str();
    s->add_option("--out", out_dir)->required();
    set_action(actions, s, [&] {
      tox.seed = g.seed_or(tox.seed);
      return stage_train_toxic(in_path, tox, out_dir);
    });
  }
  double threshold = 0.5;
  {
    auto* s = leaf(corpus, "filter-toxic", "Drop documents scored toxic", actions);
    s->add_option("corpus", in_path)->required();
    auto* m = s->add_option("--model", aux_path, "Toxicity model JSON");
    auto* t = s->add_option("--scores", aux2_path, "TSV of id<TAB>score");
    m->excludes(t);
    s->add_option("--threshold", threshold)->capture_default_str();
    s->add_option("--out", out_dir)->required();
    set_action(actions, s, [&] {
      if (aux_path.empty() == aux2_path.empty()) throw UsageError("filter-toxic needs exactly one of --model, --scores");
      const bool table = !aux2_path.empty();
      return stage_filter_toxic(in_path, table ? aux2_path : aux_path, table, threshold, out_dir);
    });
  }
  double max_ppl = 1000.0;
  {
    auto* s = leaf(corpus, "filter-ppl", "Drop high-perplexity documents", actions);
    s->add_option("corpus", in_path)->required();
    s->add_option("--lm", aux_path, "n-gram model file")->required();
    s->add_option("--max-ppl", max_ppl)->capture_default_str();
    s->add_option("--out", out_dir)->required();
    set_action(actions, s, [&] { return stage_filter_ppl(in_path, aux_path, max_ppl, out_dir); });
  }
  {
    auto* s = leaf(corpus, "stats", "Document, byte and token counts", actions);
    s->add_option("corpus", in_path)->required();
    s->add_option("--tokenizer", aux_path);
    s->add_option("--out", out_dir);
    set_action(actions, s, [&] {
      always_json = true;
      return stage_stats(in_path, aux_path.empty() ? std::nullopt : std::optional<path>(aux_path),
                         out_dir.empty() ? std::nullopt : std::optional<path>(out_dir));
    });
  }

  // --- lm ---------------------------------------------------------------------
  auto* lm = app.add_subcommand("lm", "n-gram language model");
  lm->require_subcommand(1);
  lm->fallthrough();
  std::size_t order = 3;
  NGramSmoothing smoothing;
  {
    auto* s = leaf(lm, "train", "Train an n-gram model", actions);
    s->add_option("corpus", in_path)->required();
    s->add_option("--order", order)->capture_default_str();
    s->add_option("--discount", smoothing.discount)->capture_default_str();
    s->add_option("--unk-floor", smoothing.unk_floor)->capture_default_str();
    s->add_option("--out", out_dir)->required();
    set_action(actions, s, [&] { return stage_lm_train(in_path, order, smoothing, out_dir); });
  }

  // --- tok --------------------------------------------------------------------
  auto* tok = app.add_subcommand("tok", "Subword tokenizer");
  tok->require_subcommand(1);
  tok->fallthrough();
  UnigramTrainConfig tok_cfg;
  {
    auto* s = leaf(tok, "train", "Train a unigram tokenizer", actions);
    s->add_option("corpus", in_path)->required();
    s->add_option("--vocab", tok_cfg.target_vocab, "Target normal-piece count")->capture_default_str();
    s->add_option("--seed-factor", tok_cfg.seed_factor)->capture_default_str();
    s->add_option("--prune-keep", tok_cfg.prune_keep)->capture_default_str();
    s->add_option("--em-iters", tok_cfg.em_iters)->capture_default_str();
    s->add_option("--max-piece-len", tok_cfg.max_piece_len)->capture_default_str();
    s->add_option("--out", out_dir)->required();
    set_action(actions, s, [&] { return stage_tok_train(in_path, tok_cfg, out_dir); });
  }
  std::string policy_arg = "vietnamese";
  std::optional<std::size_t> cap;
  {
    auto* s = leaf(tok, "filter", "Drop pieces outside a character policy", actions);
    s->add_option("tokenizer", in_path)->required();
    s->add_option("corpus", aux_path)->required();
    s->add_option("--policy", policy_arg, "\"vietnamese\" or a policy JSON file")->capture_default_str();
    s->add_option("--cap", cap, "Keep at most this many multi-character pieces");
    s->add_option("--out", out_dir)->required();
    set_action(actions, s, [&] {
      const auto policy = policy_arg == "vietnamese" ? CharPolicy::vietnamese() : policy_from_config(read_json(policy_arg));
      return stage_tok_filter(in_path, aux_path, policy, cap, out_dir);
    });
  }
  {
    auto* s = leaf(tok, "merge", "Append novel addon pieces to a base tokenizer", actions);
    s->add_option("base", in_path)->required();
    s->add_option("addon", aux_path)->required();
    s->add_option("--out", out_dir)->required();
    set_action(actions, s, [&] { return stage_tok_merge(in_path, aux_path, out_dir); });
  }
  std::vector<std::string> texts;
  {
    auto* s = leaf(tok, "encode", "Encode text to ids", actions);
    s->add_option("tokenizer", in_path)->required();
    s->add_option("text", texts)->required();
    set_action(actions, s, [&] {
      always_json = true;
      const auto model = TokenizerModel::load(in_path);
      Json rows = Json::array();
      for (const auto& t : texts) {
        const auto ids = model.encode(t);
        Json pieces = Json::array();
        for (const auto id : ids) pieces.push_back(model.piece(id).text);
        rows.push_back({{"text", t}, {"ids", ids}, {"pieces", pieces}, {"decoded", model.decode(ids)}});
      }
      return Json{{"encodings", rows}};
    });
  }

  // --- vocab ------------------------------------------------------------------
  auto* vocab = app.add_subcommand("vocab", "Vocabulary size tradeoff analysis");
  vocab->require_subcommand(1);
  vocab->fallthrough();
  std::string sizes_arg = "1000,2000,4000,8000";
  std::size_t hidden = 4096;
  {
    auto* s = leaf(vocab, "analyze", "Complexity curves for nested addon sizes", actions);
    s->add_option("base", in_path)->required();
    s->add_option("addon", aux_path)->required();
    s->add_option("corpus", aux2_path)->required();
    s->add_option("--sizes", sizes_arg, "Comma-separated addon sizes")->capture_default_str();
    s->add_option("--reference", aux3_path, "Reference CSV to overlay");
    s->add_option("--hidden", hidden)->capture_default_str();
    s->add_option("--out", out_dir)->required();
    set_action(actions, s, [&] {
      return stage_vocab_analyze(in_path, aux_path, aux2_path, parse_sizes(sizes_arg),
                                 aux3_path.empty() ? std::nullopt : std::optional<path>(aux3_path), hidden, out_dir);
    });
  }
  {
    auto* s = leaf(vocab, "report", "Re-render curve outputs from curve.json", actions);
    s->add_option("curve", in_path)->required();
    s->add_option("--reference", aux_path);
    s->add_option("--out", out_dir)->required();
    set_action(actions, s, [&] {
      return stage_vocab_report(in_path, aux_path.empty() ? std::nullopt : std::optional<path>(aux_path), out_dir);
    });
  }

  // --- ckpt -------------------------------------------------------------------
  auto* ckpt = app.add_subcommand("ckpt", "Checkpoint surgery");
  ckpt->require_subcommand(1);
  ckpt->fallthrough();
  TinyLMConfig model_cfg;
  std::string dtype_arg = "f32";
  {
    auto* s = leaf(ckpt, "init", "Random checkpoint", actions);
    s->add_option("--config", aux_path, "Model config JSON");
    s->add_option("--vocab", model_cfg.vocab_size);
    s->add_option("--dtype", dtype_arg)->capture_default_str();
    s->add_option("--out", out_dir)->required();
    set_action(actions, s, [&] {
      auto cfg = aux_path.empty() ? model_cfg : TinyLMConfig::from_json(read_json(aux_path));
      if (model_cfg.vocab_size) cfg.vocab_size = model_cfg.vocab_size;
      return stage_ckpt_init(cfg, g.seed_or(0), dtype_from_string(dtype_arg), out_dir);
    });
  }
  std::size_t new_vocab = 0;
  double jitter = 0.0;
  {
    auto* s = leaf(ckpt, "expand", "Grow embedding and head with mean rows", actions);
    s->add_option("checkpoint", in_path)->required();
    s->add_option("--vocab", new_vocab, "New vocabulary size")->required();
    s->add_option("--jitter", jitter)->capture_default_str();
    s->add_option("--out", out_dir)->required();
    set_action(actions, s, [&] { return stage_ckpt_expand(in_path, new_vocab, jitter, g.seed_or(0), out_dir); });
  }
  std::size_t samples = 32;
  {
    auto* s = leaf(ckpt, "verify", "Check the softmax rescaling identity", actions);
    s->add_option("old", in_path)->required();
    s->add_option("new", aux_path)->required();
    s->add_option("--samples", samples)->capture_default_str();
    s->add_option("--out", out_dir);
    set_action(actions, s, [&] {
      return stage_ckpt_verify(in_path, aux_path, samples, g.seed_or(0),
                               out_dir.empty() ? std::nullopt : std::optional<path>(out_dir));
    });
  }

  // --- train ------------------------------------------------------------------
  auto* train = app.add_subcommand("train", "Continual pre-training");
  train->require_subcommand(1);
  train->fallthrough();
  std::optional<std::size_t> stop_after, steps, warmup, batch, seq_len, snapshot_every;
  std::optional<double> lr;
  {
    auto* s = leaf(train, "run", "Train from a checkpoint", actions);
    s->add_option("checkpoint", in_path)->required();
    s->add_option("corpus", aux_path)->required();
    s->add_option("tokenizer", aux2_path)->required();
    s->add_option("--config", aux3_path, "Train config JSON");
    s->add_option("--steps", steps);
    s->add_option("--lr", lr);
    s->add_option("--warmup", warmup);
    s->add_option("--batch", batch);
    s->add_option("--seq-len", seq_len);
    s->add_option("--snapshot-every", snapshot_every);
    s->add_option("--stop-after", stop_after, "Stop after this many steps with a resumable snapshot");
    s->add_option("--out", out_dir)->required();
    set_action(actions, s, [&] {
      auto cfg = aux3_path.empty() ? TrainConfig{} : TrainConfig::from_json(read_json(aux3_path));
      if (steps) cfg.total_steps = *steps;
      if (lr) cfg.peak_lr = *lr;
      if (warmup) cfg.warmup_steps = *warmup;
      if (batch) cfg.batch_size = *batch;
      if (seq_len) cfg.seq_len = *seq_len;
      if (snapshot_every) cfg.snapshot_every = *snapshot_every;
      cfg.seed = g.seed_or(cfg.seed);
      return stage_train_run(in_path, aux_path, aux2_path, cfg, out_dir, stop_after);
    });
  }
  {
    auto* s = leaf(train, "resume", "Continue from a snapshot directory", actions);
    s->add_option("snapshot", in_path)->required();
    s->add_option("corpus", aux_path)->required();
    s->add_option("tokenizer", aux2_path)->required();
    s->add_option("--stop-after", stop_after);
    s->add_option("--out", out_dir)->required();
    set_action(actions, s, [&] { return stage_train_resume(in_path, aux_path, aux2_path, out_dir, stop_after); });
  }

  // --- eval -------------------------------------------------------------------
  auto* eval = app.add_subcommand("eval", "Evaluation harnesses");
  eval->require_subcommand(1);
  eval->fallthrough();
  ClmEvalConfig clm;
  {
    auto* s = leaf(eval, "clm", "Causal LM loss and accuracy", actions);
    s->add_option("checkpoint", in_path)->required();
    s->add_option("corpus", aux_path)->required();
    s->add_option("tokenizer", aux2_path)->required();
    s->add_option("--seq-len", clm.seq_len)->capture_default_str();
    s->add_option("--max-docs", clm.max_docs)->capture_default_str();
    s->add_option("--out", out_dir)->required();
    set_action(actions, s, [&] {
      clm.seed = g.seed_or(0);
      return stage_eval_clm(in_path, aux_path, aux2_path, clm, out_dir);
    });
  }
  McqTemplate tmpl;
  {
    auto* s = leaf(eval, "mcq", "Multiple-choice accuracy", actions);
    s->add_option("checkpoint", in_path)->required();
    s->add_option("items", aux_path)->required();
    s->add_option("tokenizer", aux2_path)->required();
    s->add_option("--prompt", tmpl.prompt, "Template with {question} and {choices}");
    s->add_option("--choice-line", tmpl.choice_line, "Template with {label} and {text}");
    s->add_option("--out", out_dir)->required();
    set_action(actions, s, [&] { return stage_eval_mcq(in_path, aux_path, aux2_path, tmpl, out_dir); });
  }

  // --- pipeline ---------------------------------------------------------------
  auto* pipeline = app.add_subcommand("pipeline", "End-to-end run");
  pipeline->require_subcommand(1);
  pipeline->fallthrough();
  {
    auto* s = leaf(pipeline, "run", "Run every stage from a project config", actions);
    s->add_option("--config", in_path, "Project config JSON")->required();
    s->add_option("--out", out_dir, "Overrides paths.out");
    set_action(actions, s, [&] {
      return run_pipeline(in_path, out_dir.empty() ? std::nullopt : std::optional<path>(out_dir), g.seed);
    });
  }

  std::vector<std::string> rev(args.rbegin(), args.rend());
  try {
    app.parse(rev);
  } catch (const CLI::Success&) {
    auto* target = &app;
    for (auto* sub = target; sub;) {
      auto subs = sub->get_subcommands();
      if (subs.empty()) break;
      target = subs.front();
      sub = target;
    }
    out << target->help();
    return 0;
  } catch (const CLI::ParseError& e) {
    // Name the offending word when it is not a subcommand at its level.
    const CLI::App* level = &app;
    std::string unknown;
    for (std::size_t i = 0; i < args.size() && unknown.empty(); ++i) {
      const std::string& a = args[i];
      if (a == "--seed") {
        ++i;
        continue;
      }
      if (a.rfind("-", 0) == 0) continue;
      if (level->get_subcommands({}).empty()) break;
      const CLI::App* next = level->get_subcommand_no_throw(a);
      if (!next) {
        unknown = a;
      } else {
        level = next;
      }
    }
    if (!unknown.empty()) {
      err << "error: unknown subcommand '" << unknown << "'\n\n" << level->help();
    } else {
      err << "error: " << e.what() << "\n\n" << app.help();
    }
    return 1;
  }

  if (g.deterministic) set_deterministic(true);

  const Action* action = nullptr;
  for (const auto& [s, a] : actions) {
    if (s->parsed()) action = &a;
  }
  if (!action) {
    err << app.help();
    return 1;
  }

  try {
    const Json report = (*action)();
    if (g.json || always_json) {
      out << report.dump(2) << "\n";
    } else {
      print_human(report, out);
    }
    return 0;
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const DataError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const nlohmann::json::exception& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace langxpand::cli
