#include "langxpand/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <set>

#include "langxpand/error.hpp"
#include "langxpand/parallel.hpp"
#include "langxpand/random.hpp"

namespace langxpand {
namespace {

std::string fixed(double x, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, x);
  return buf;
}

// Replaces {name} fields in one left-to-right pass; substituted text is not
// rescanned.
std::string substitute(const std::string& tmpl, const std::map<std::string, std::string>& fields) {
  std::string out;
  std::size_t i = 0;
  while (i < tmpl.size()) {
    if (tmpl[i] == '{') {
      const auto close = tmpl.find('}', i + 1);
      if (close != std::string::npos) {
        auto it = fields.find(tmpl.substr(i + 1, close - i - 1));
        if (it != fields.end()) {
          out += it->second;
          i = close + 1;
          continue;
        }
      }
    }
    out += tmpl[i++];
  }
  return out;
}

constexpr const char* kSuperOrder[] = {"stem", "other", "humanity", "social_science"};

}  // namespace

std::vector<PositionScore> TransformerScorer::score(std::span<const std::int32_t> ids) const {
  if (ckpt_.dtype() == DType::F32) {
    const auto cache = forward<float>(ckpt_, ids);
    return position_scores<float>(cache.logits, ckpt_.vocab_size(), ids);
  }
  const auto cache = forward<double>(ckpt_, ids);
  return position_scores<double>(cache.logits, ckpt_.vocab_size(), ids);
}

void ClmEvalConfig::validate() const {
  if (seq_len < 2) throw UsageError("seq_len must be at least 2");
  if (max_docs < 1) throw UsageError("max_docs must be at least 1");
}

nlohmann::ordered_json ClmEvalConfig::to_json() const {
  return {{"seq_len", seq_len}, {"max_docs", max_docs}, {"seed", seed}};
}

ClmEvalConfig ClmEvalConfig::from_json(const nlohmann::json& j) {
  ClmEvalConfig c;
  c.seq_len = j.value("seq_len", c.seq_len);
  c.max_docs = j.value("max_docs", c.max_docs);
  c.seed = j.value("seed", c.seed);
  c.validate();
  return c;
}

nlohmann::ordered_json ClmReport::to_json() const {
  nlohmann::ordered_json docs = nlohmann::ordered_json::array();
  for (const auto& d : per_doc) docs.push_back({{"id", d.id}, {"tokens", d.tokens}, {"nll", d.nll}});
  return {{"Model", model_id},
          {"Type", type},
          {"Length", length},
          {"Tokens", tokens},
          {"Loss", loss},
          {"Accuracy", accuracy},
          {"documents", documents},
          {"skipped", skipped},
          {"per_doc_nll", docs}};
}

std::string ClmReport::table() const {
  std::string out = "| Model | Type | Length | Tokens | Loss | Accuracy |\n";
  out += "|---|---|---|---|---|---|\n";
  out += "| " + model_id + " | " + type + " | " + std::to_string(length) + " | " + std::to_string(tokens) + " | " +
         fixed(loss, 4) + " | " + fixed(accuracy, 4) + " |\n";
  return out;
}

ClmReport eval_clm(const LanguageScorer& model, std::span<const Document> docs, const TokenizerModel& tokenizer,
                   const ClmEvalConfig& cfg, const std::string& model_id) {
  cfg.validate();
  if (docs.empty()) throw DataError("evaluation corpus is empty");
  if (tokenizer.size() > model.vocab_size()) {
    throw DataError("tokenizer has " + std::to_string(tokenizer.size()) + " pieces but the model only " +
                    std::to_string(model.vocab_size()));
  }
  std::vector<std::size_t> order(docs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(cfg.seed);
  rng.shuffle(order.begin(), order.end());
  order.resize(std::min(order.size(), cfg.max_docs));

  struct DocResult {
    std::size_t tokens = 0;
    std::size_t correct = 0;
    double nll_sum = 0.0;
  };
  std::vector<DocResult> results(order.size());
  parallel_chunks(order.size(), 64, [&](std::size_t, std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i) {
      const auto ids = tokenizer.encode(docs[order[i]].text);
      DocResult r;
      for (std::size_t start = 0; start + 1 < ids.size(); start += cfg.seq_len) {
        const std::size_t len = std::min(cfg.seq_len, ids.size() - start);
        if (len < 2) break;
        for (const auto& p : model.score(std::span(ids).subspan(start, len))) {
          r.nll_sum -= p.logprob;
          r.correct += p.correct ? 1 : 0;
          ++r.tokens;
        }
      }
      results[i] = r;
    }
  });

  ClmReport rep;
  rep.model_id = model_id;
  rep.length = cfg.seq_len;
  double nll = 0.0;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < order.size(); ++i) {
    const auto& d = docs[order[i]];
    if (results[i].tokens == 0) {
      rep.skipped.push_back(d.id);
      continue;
    }
    ++rep.documents;
    rep.tokens += results[i].tokens;
    correct += results[i].correct;
    nll += results[i].nll_sum;
    rep.per_doc.push_back({d.id, results[i].tokens, results[i].nll_sum / static_cast<double>(results[i].tokens)});
  }
  if (rep.tokens == 0) throw DataError("no document has at least 2 tokens");
  rep.loss = nll / static_cast<double>(rep.tokens);
  rep.accuracy = static_cast<double>(correct) / static_cast<double>(rep.tokens);
  return rep;
}

std::vector<McqItem> parse_mcq(std::istream& in) {
  std::vector<McqItem> items;
  std::set<std::string> ids;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    McqItem item;
    try {
      const auto j = nlohmann::json::parse(line);
      item.id = j.at("id").get<std::string>();
      item.category = j.value("category", std::string("other"));
      item.question = j.at("question").get<std::string>();
      for (const auto& c : j.at("choices")) item.choices.push_back({c.at("label").get<std::string>(), c.at("text").get<std::string>()});
      if (j.contains("answer") && !j["answer"].is_null()) item.answer = j["answer"].get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      throw DataError("MCQ line " + std::to_string(lineno) + ": " + e.what());
    }
    if (!ids.insert(item.id).second) throw DataError("MCQ line " + std::to_string(lineno) + ": duplicate id " + item.id);
    if (item.choices.size() < 2) throw DataError("MCQ item " + item.id + " has fewer than 2 choices");
    std::set<std::string> labels;
    for (const auto& c : item.choices) {
      if (c.label.empty() || !labels.insert(c.label).second) {
        throw DataError("MCQ item " + item.id + " has an empty or repeated choice label");
      }
    }
    if (item.answer.empty() || !labels.count(item.answer)) {
      throw DataError("MCQ item " + item.id + " is missing a gold label among its choices");
    }
    items.push_back(std::move(item));
  }
  return items;
}

std::vector<McqItem> read_mcq(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  return parse_mcq(in);
}

void McqTemplate::validate() const {
  if (prompt.find("{question}") == std::string::npos || prompt.find("{choices}") == std::string::npos) {
    throw UsageError("MCQ template needs {question} and {choices} placeholders");
  }
}

std::string McqTemplate::render(const McqItem& item) const {
  std::string choices;
  for (std::size_t i = 0; i < item.choices.size(); ++i) {
    if (i) choices += '\n';
    choices += substitute(choice_line, {{"label", item.choices[i].label}, {"text", item.choices[i].text}});
  }
  return substitute(prompt, {{"question", item.question}, {"choices", choices}});
}

std::string supercategory(const std::string& subject) {
  for (const char* s : {"stem", "social_science", "humanity", "other"}) {
    const std::string prefix = std::string(s) + "_";
    if (subject.rfind(prefix, 0) == 0) return s;
  }
  return "other";
}

nlohmann::ordered_json McqReport::to_json() const {
  auto tally = [](const McqTally& t) {
    return nlohmann::ordered_json{
        {"correct", t.correct}, {"answered", t.answered}, {"accuracy", t.accuracy()}, {"score", std::round(t.score() * 100) / 100}};
  };
  nlohmann::ordered_json subj = nlohmann::ordered_json::object(), sup = nlohmann::ordered_json::object();
  for (const auto& [k, t] : subjects) subj[k] = tally(t);
  for (const char* s : kSuperOrder) {
    auto it = supercategories.find(s);
    if (it != supercategories.end()) sup[std::string(s) + "_total"] = tally(it->second);
  }
  nlohmann::ordered_json rows = nlohmann::ordered_json::array();
  for (const auto& [name, score] : detail_rows()) rows.push_back({{"Category_Subcategory", name}, {"Score", score}});
  nlohmann::ordered_json preds = nlohmann::ordered_json::array();
  for (const auto& p : predictions) {
    nlohmann::ordered_json cs = nlohmann::ordered_json::object();
    for (const auto& [label, s] : p.choice_scores) cs[label] = s;
    preds.push_back({{"id", p.id}, {"category", p.category}, {"predicted", p.predicted}, {"answer", p.answer}, {"scores", cs}});
  }
  return {{"model", model_id}, {"total", tally(total)}, {"supercategories", sup}, {"subjects", subj},
          {"summary", summary_row()}, {"detail", rows}, {"predictions", preds}};
}

std::vector<std::pair<std::string, double>> McqReport::detail_rows() const {
  auto rounded = [](const McqTally& t) { return std::round(t.score() * 100) / 100; };
  std::vector<std::pair<std::string, double>> rows{{"total", rounded(total)}};
  for (const char* s : kSuperOrder) {
    auto it = supercategories.find(s);
    if (it == supercategories.end()) continue;
    for (const auto& [name, t] : subjects) {
      if (supercategory(name) == s) rows.emplace_back(name, rounded(t));
    }
    rows.emplace_back(std::string(s) + "_total", rounded(it->second));
  }
  return rows;
}

std::string McqReport::detail_table() const {
  std::string out = "| Category_Subcategory | Score |\n|---|---:|\n";
  for (const auto& [name, score] : detail_rows()) out += "| " + name + " | " + fixed(score, 2) + " |\n";
  return out;
}

nlohmann::ordered_json McqReport::summary_row() const {
  auto score = [&](const char* s) {
    auto it = supercategories.find(s);
    return it == supercategories.end() ? nlohmann::ordered_json(nullptr)
                                       : nlohmann::ordered_json(std::round(it->second.score() * 100) / 100);
  };
  return {{"Model", model_id},         {"STEM", score("stem")},   {"SS", score("social_science")},
          {"Hum", score("humanity")},   {"Others", score("other")}, {"Avg", std::round(total.score() * 100) / 100}};
}

std::string McqReport::summary_table() const {
  const auto row = summary_row();
  std::string out = "| Model | STEM | SS | Hum | Others | Avg |\n|---|---:|---:|---:|---:|---:|\n| " + model_id;
  for (const char* k : {"STEM", "SS", "Hum", "Others", "Avg"}) {
    out += " | " + (row[k].is_null() ? std::string("-") : fixed(row[k].get<double>(), 2));
  }
  return out + " |\n";
}

McqReport eval_mcq(const LanguageScorer& model, std::span<const McqItem> items, const TokenizerModel& tokenizer,
                   const McqTemplate& tmpl, const std::string& model_id) {
  tmpl.validate();
  if (tokenizer.size() > model.vocab_size()) {
    throw DataError("tokenizer has " + std::to_string(tokenizer.size()) + " pieces but the model only " +
                    std::to_string(model.vocab_size()));
  }
  for (const auto& item : items) {
    const bool has_gold = std::any_of(item.choices.begin(), item.choices.end(), [&](const McqChoice& c) { return c.label == item.answer; });
    if (!has_gold) throw DataError("MCQ item " + item.id + " is missing a gold label among its choices");
  }
  std::vector<McqPrediction> preds(items.size());
  parallel_chunks(items.size(), 64, [&](std::size_t, std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i) {
      const auto& item = items[i];
      const auto ctx = tokenizer.encode(tmpl.render(item));
      if (ctx.empty()) throw DataError("MCQ item " + item.id + " renders to an empty prompt");
      McqPrediction p{item.id, item.category, "", item.answer, {}};
      std::vector<McqChoice> sorted = item.choices;
      std::sort(sorted.begin(), sorted.end(), [](const McqChoice& a, const McqChoice& c) { return a.label < c.label; });
      double best = -std::numeric_limits<double>::infinity();
      for (const auto& c : sorted) {
        const auto cont = tokenizer.encode(c.label);
        std::vector<std::int32_t> seq = ctx;
        seq.insert(seq.end(), cont.begin(), cont.end());
        const auto scores = model.score(seq);
        double sum = 0.0;
        for (std::size_t k = ctx.size() - 1; k < scores.size(); ++k) sum += scores[k].logprob;
        const double mean = sum / static_cast<double>(cont.size());
        p.choice_scores.emplace_back(c.label, mean);
        if (p.predicted.empty() || mean > best) {
          best = mean;
          p.predicted = c.label;
        }
      }
      preds[i] = std::move(p);
    }
  });

  McqReport rep;
  rep.model_id = model_id;
  for (const auto& p : preds) {
    const std::size_t hit = p.predicted == p.answer ? 1 : 0;
    for (McqTally* t : {&rep.subjects[p.category], &rep.supercategories[supercategory(p.category)], &rep.total}) {
      t->correct += hit;
      t->answered += 1;
    }
  }
  std::sort(preds.begin(), preds.end(), [](const McqPrediction& a, const McqPrediction& b) { return a.id < b.id; });
  rep.predictions = std::move(preds);
  return rep;
}

}  // namespace langxpand
