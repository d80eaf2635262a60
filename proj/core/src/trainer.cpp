#include "langxpand/trainer.hpp"

#include <chrono>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>

#include "langxpand/error.hpp"
#include "langxpand/hashing.hpp"
#include "langxpand/parallel.hpp"
#include "langxpand/transformer.hpp"

namespace langxpand {

void TrainConfig::validate() const {
  if (!(peak_lr > 0.0) || !std::isfinite(peak_lr)) throw UsageError("peak_lr must be positive");
  if (total_steps == 0) throw UsageError("total_steps must be positive");
  if (warmup_steps > total_steps) throw UsageError("warmup_steps must not exceed total_steps");
  if (!(min_lr_ratio >= 0.0 && min_lr_ratio <= 1.0)) throw UsageError("min_lr_ratio must be in [0, 1]");
  if (!(beta1 > 0.0 && beta1 < 1.0) || !(beta2 > 0.0 && beta2 < 1.0)) throw UsageError("betas must be in (0, 1)");
  if (!(eps > 0.0)) throw UsageError("eps must be positive");
  if (!(weight_decay >= 0.0)) throw UsageError("weight_decay must be >= 0");
  if (batch_size == 0) throw UsageError("batch_size must be positive");
  if (seq_len < 2) throw UsageError("seq_len must be at least 2");
  if (!(grad_clip >= 0.0)) throw UsageError("grad_clip must be >= 0");
}

nlohmann::ordered_json TrainConfig::to_json() const {
  return {{"peak_lr", peak_lr},       {"warmup_steps", warmup_steps}, {"total_steps", total_steps},
          {"min_lr_ratio", min_lr_ratio}, {"betas", {beta1, beta2}},  {"eps", eps},
          {"weight_decay", weight_decay}, {"batch_size", batch_size},   {"seq_len", seq_len},
          {"seed", seed},             {"grad_clip", grad_clip},       {"snapshot_every", snapshot_every}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  try {
    c.peak_lr = j.value("peak_lr", c.peak_lr);
    c.warmup_steps = j.value("warmup_steps", c.warmup_steps);
    c.total_steps = j.value("total_steps", c.total_steps);
    c.min_lr_ratio = j.value("min_lr_ratio", c.min_lr_ratio);
    if (j.contains("betas")) {
      c.beta1 = j["betas"].at(0).get<double>();
      c.beta2 = j["betas"].at(1).get<double>();
    }
    c.eps = j.value("eps", c.eps);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.seq_len = j.value("seq_len", c.seq_len);
    c.seed = j.value("seed", c.seed);
    c.grad_clip = j.value("grad_clip", c.grad_clip);
    c.snapshot_every = j.value("snapshot_every", c.snapshot_every);
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(std::string("bad train config: ") + e.what());
  }
  c.validate();
  return c;
}

double lr_at(const TrainConfig& cfg, std::size_t step) {
  if (step > cfg.total_steps) {
    throw UsageError("step " + std::to_string(step) + " outside schedule of " + std::to_string(cfg.total_steps) + " steps");
  }
  if (step < cfg.warmup_steps) {
    return cfg.peak_lr * static_cast<double>(step) / static_cast<double>(cfg.warmup_steps);
  }
  const std::size_t decay = cfg.total_steps - cfg.warmup_steps;
  if (decay == 0 || step == cfg.warmup_steps) return cfg.peak_lr;
  const double p = static_cast<double>(step - cfg.warmup_steps) / static_cast<double>(decay);
  const double r = cfg.min_lr_ratio;
  return cfg.peak_lr * (r + (1.0 - r) * 0.5 * (1.0 + std::cos(std::numbers::pi * p)));
}

OptimizerState OptimizerState::zeros_like(const TensorStore& params) {
  OptimizerState s;
  for (const auto& [name, p] : params) {
    s.m.emplace(name, Tensor(p.dtype(), p.shape()));
    s.v.emplace(name, Tensor(p.dtype(), p.shape()));
  }
  return s;
}

TensorStore OptimizerState::to_store() const {
  TensorStore out;
  for (const auto& [name, t] : m) out.emplace("m." + name, t);
  for (const auto& [name, t] : v) out.emplace("v." + name, t);
  return out;
}

OptimizerState OptimizerState::from_store(const TensorStore& store, std::size_t t) {
  OptimizerState s;
  s.t = t;
  for (const auto& [name, tensor] : store) {
    if (name.rfind("m.", 0) == 0) s.m.emplace(name.substr(2), tensor);
    else if (name.rfind("v.", 0) == 0) s.v.emplace(name.substr(2), tensor);
    else throw DataError("unexpected optimizer tensor '" + name + "'");
  }
  return s;
}

std::size_t optimizer_resident_values(const TensorStore& params) {
  std::size_t n = 0;
  for (const auto& [name, p] : params) n += p.numel();
  return 4 * n;
}

namespace {

void check_finite(const TensorStore& grads) {
  for (const auto& [name, g] : grads) {
    if (!g.all_finite()) throw DataError("non-finite gradient in tensor '" + name + "'");
  }
}

template <class T>
void adamw_tensor(std::span<T> p, std::span<const T> g, std::span<T> m, std::span<T> v, double lr, double decay,
                  const TrainConfig& cfg, double bc1, double bc2) {
  for (std::size_t i = 0; i < p.size(); ++i) {
    double w = static_cast<double>(p[i]);
    const double gi = static_cast<double>(g[i]);
    w -= lr * decay * w;
    const double mi = cfg.beta1 * static_cast<double>(m[i]) + (1.0 - cfg.beta1) * gi;
    const double vi = cfg.beta2 * static_cast<double>(v[i]) + (1.0 - cfg.beta2) * gi * gi;
    m[i] = static_cast<T>(mi);
    v[i] = static_cast<T>(vi);
    w -= lr * (mi / bc1) / (std::sqrt(vi / bc2) + cfg.eps);
    p[i] = static_cast<T>(w);
  }
}

}  // namespace

void adamw_update(TensorStore& params, const TensorStore& grads, OptimizerState& state, const TrainConfig& cfg,
                  double lr) {
  for (const auto& [name, p] : params) {
    const Tensor& g = require_tensor(grads, name);
    if (g.shape() != p.shape() || g.dtype() != p.dtype()) throw DataError("gradient for '" + name + "' has the wrong shape");
    if (!g.all_finite()) throw DataError("non-finite gradient in tensor '" + name + "'");
  }
  const std::size_t t = state.t + 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  for (auto& [name, p] : params) {
    const Tensor& g = grads.at(name);
    Tensor& m = require_tensor(state.m, name);
    Tensor& v = require_tensor(state.v, name);
    const double decay = p.shape().size() >= 2 ? cfg.weight_decay : 0.0;
    if (p.dtype() == DType::F32) {
      adamw_tensor<float>(p.data<float>(), g.data<float>(), m.data<float>(), v.data<float>(), lr, decay, cfg, bc1, bc2);
    } else {
      adamw_tensor<double>(p.data<double>(), g.data<double>(), m.data<double>(), v.data<double>(), lr, decay, cfg, bc1,
                           bc2);
    }
  }
  state.t = t;
}

void adamw_step(TensorStore& params, const TensorStore& grads, OptimizerState& state, const TrainConfig& cfg,
                std::size_t step) {
  if (step != state.t + 1) {
    throw UsageError("optimizer step " + std::to_string(step) + " does not follow state step " + std::to_string(state.t));
  }
  adamw_update(params, grads, state, cfg, lr_at(cfg, step));
}

double clip_grad_norm(TensorStore& grads, double max_norm) {
  double ss = 0.0;
  for (const auto& [name, g] : grads) {
    for (double x : g.to_f64()) ss += x * x;
  }
  const double norm = std::sqrt(ss);
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / norm;
    for (auto& [name, g] : grads) {
      if (g.dtype() == DType::F32) {
        for (auto& x : g.data<float>()) x = static_cast<float>(x * s);
      } else {
        for (auto& x : g.data<double>()) x *= s;
      }
    }
  }
  return norm;
}

std::string TrainReport::csv() const {
  std::string out = "step,lr,loss\n";
  char buf[96];
  for (const auto& r : steps) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g\n", r.step, r.lr, r.loss);
    out += buf;
  }
  return out;
}

TrainReport TrainReport::parse_csv(const std::string& text) {
  TrainReport rep;
  std::istringstream in(text);
  std::string line;
  std::getline(in, line);
  if (line != "step,lr,loss") throw DataError("train report CSV has an unexpected header");
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    StepRecord r;
    if (std::sscanf(line.c_str(), "%zu,%lf,%lf", &r.step, &r.lr, &r.loss) != 3) {
      throw DataError("train report CSV row " + std::to_string(row) + " is malformed");
    }
    rep.steps.push_back(r);
  }
  return rep;
}

nlohmann::ordered_json TrainReport::summary_json() const {
  nlohmann::ordered_json j{{"steps", steps.size()}, {"tokens_consumed", tokens_consumed}};
  if (!steps.empty()) {
    j["first_loss"] = steps.front().loss;
    j["final_loss"] = steps.back().loss;
  }
  return j;
}

namespace {

template <class T>
std::pair<double, TensorStore> sequence_gradient(const ModelCheckpoint& ckpt, std::span<const std::int32_t> seq) {
  const auto cache = forward<T>(ckpt, seq);
  const auto stats = loss_and_accuracy<T>(cache.logits, ckpt.config.vocab_size, seq);
  return {stats.nll, backward<T>(ckpt, cache)};
}

template <class T>
void add_into(Tensor& acc, const Tensor& x) {
  auto a = acc.data<T>();
  const auto b = x.data<T>();
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
}

template <class T>
void scale(Tensor& t, double s) {
  for (auto& x : t.data<T>()) x = static_cast<T>(x * s);
}

std::uint64_t digest_tokens(const std::vector<std::int32_t>& tokens) {
  return fnv1a64(std::string_view(reinterpret_cast<const char*>(tokens.data()), tokens.size() * sizeof(std::int32_t)));
}

}  // namespace

Trainer::Trainer(ModelCheckpoint ckpt, std::vector<std::int32_t> tokens, TrainConfig cfg)
    : ckpt_(std::move(ckpt)), tokens_(std::move(tokens)), cfg_(cfg), rng_(cfg.seed) {
  cfg_.validate();
  ckpt_.validate();
  for (auto id : tokens_) {
    if (id < 0 || static_cast<std::size_t>(id) >= ckpt_.vocab_size()) {
      throw DataError("training token id " + std::to_string(id) + " outside vocabulary of " +
                      std::to_string(ckpt_.vocab_size()));
    }
  }
  num_chunks_ = tokens_.size() / cfg_.seq_len;
  if (num_chunks_ < cfg_.batch_size) {
    throw DataError("corpus too small: one batch needs " + std::to_string(cfg_.batch_size * cfg_.seq_len) +
                    " tokens, corpus has " + std::to_string(tokens_.size()));
  }
  opt_ = OptimizerState::zeros_like(ckpt_.tensors);
  token_digest_ = digest_tokens(tokens_);
  start_epoch();
}

void Trainer::start_epoch() {
  epoch_rng_state_ = rng_.serialize();
  order_.resize(num_chunks_);
  std::iota(order_.begin(), order_.end(), std::size_t{0});
  rng_.shuffle(order_.begin(), order_.end());
  cursor_ = 0;
}

std::vector<std::size_t> Trainer::next_batch() {
  if (cursor_ + cfg_.batch_size > num_chunks_) {
    ++epoch_;
    start_epoch();
  }
  std::vector<std::size_t> batch(order_.begin() + static_cast<std::ptrdiff_t>(cursor_),
                                 order_.begin() + static_cast<std::ptrdiff_t>(cursor_ + cfg_.batch_size));
  cursor_ += cfg_.batch_size;
  return batch;
}

StepRecord Trainer::step() {
  if (opt_.t >= cfg_.total_steps) throw UsageError("training already reached total_steps");
  const auto started = std::chrono::steady_clock::now();
  const auto batch = next_batch();
  const std::size_t B = batch.size(), L = cfg_.seq_len;
  std::vector<double> losses(B);
  std::vector<TensorStore> grads(B);
  const bool f32 = ckpt_.dtype() == DType::F32;
  parallel_chunks(B, B, [&](std::size_t, std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i) {
      const std::span<const std::int32_t> seq(tokens_.data() + batch[i] * L, L);
      auto [loss, g] = f32 ? sequence_gradient<float>(ckpt_, seq) : sequence_gradient<double>(ckpt_, seq);
      losses[i] = loss;
      grads[i] = std::move(g);
    }
  });
  TensorStore total = std::move(grads[0]);
  for (std::size_t i = 1; i < B; ++i) {
    for (auto& [name, t] : total) {
      if (f32) add_into<float>(t, grads[i].at(name));
      else add_into<double>(t, grads[i].at(name));
    }
  }
  double loss = 0.0;
  for (double l : losses) loss += l;
  loss /= static_cast<double>(B);
  for (auto& [name, t] : total) {
    if (f32) scale<float>(t, 1.0 / static_cast<double>(B));
    else scale<double>(t, 1.0 / static_cast<double>(B));
  }
  check_finite(total);
  if (cfg_.grad_clip > 0.0) clip_grad_norm(total, cfg_.grad_clip);

  const std::size_t s = opt_.t + 1;
  const double lr = lr_at(cfg_, s);
  adamw_step(ckpt_.tensors, total, opt_, cfg_, s);

  StepRecord rec{s, lr, loss};
  report_.steps.push_back(rec);
  report_.tokens_consumed += B * L;
  report_.wall_seconds += std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return rec;
}

void Trainer::run(std::optional<std::size_t> until_step, const std::optional<std::filesystem::path>& snapshot_dir) {
  const std::size_t stop = std::min(until_step.value_or(cfg_.total_steps), cfg_.total_steps);
  while (opt_.t < stop) {
    step();
    if (snapshot_dir && cfg_.snapshot_every > 0 && opt_.t % cfg_.snapshot_every == 0) save_snapshot(*snapshot_dir);
  }
  if (snapshot_dir) save_snapshot(*snapshot_dir);
}

void Trainer::save_snapshot(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  ckpt_.save(dir / "params.xckpt");
  write_store(opt_.to_store(), dir / "opt.xckpt");
  nlohmann::ordered_json state{{"step", opt_.t},
                               {"epoch", epoch_},
                               {"cursor", cursor_},
                               {"rng_state", epoch_rng_state_},
                               {"token_digest", token_digest_},
                               {"tokens_consumed", report_.tokens_consumed},
                               {"train_config", cfg_.to_json()}};
  std::ofstream(dir / "trainer_state.json") << state.dump(2) << "\n";
  std::ofstream(dir / "report.csv", std::ios::binary) << report_.csv();
}

Trainer Trainer::resume(const std::filesystem::path& dir, std::vector<std::int32_t> tokens) {
  std::ifstream in(dir / "trainer_state.json");
  if (!in) throw DataError("cannot open " + (dir / "trainer_state.json").string());
  nlohmann::json state;
  try {
    state = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("bad trainer_state.json: " + std::string(e.what()));
  }
  Trainer tr(ModelCheckpoint::load(dir / "params.xckpt"), std::move(tokens), TrainConfig::from_json(state.at("train_config")));
  if (state.at("token_digest").get<std::uint64_t>() != tr.token_digest_) {
    throw DataError("token stream differs from the one the snapshot was trained on");
  }
  tr.opt_ = OptimizerState::from_store(read_store(dir / "opt.xckpt"), state.at("step").get<std::size_t>());
  tr.epoch_ = state.at("epoch").get<std::size_t>();
  tr.rng_ = Rng::deserialize(state.at("rng_state").get<std::string>());
  tr.start_epoch();
  tr.cursor_ = state.at("cursor").get<std::size_t>();
  std::ifstream rep(dir / "report.csv", std::ios::binary);
  if (rep) {
    std::ostringstream ss;
    ss << rep.rdbuf();
    tr.report_ = TrainReport::parse_csv(ss.str());
  }
  tr.report_.tokens_consumed = state.value("tokens_consumed", std::size_t{0});
  return tr;
}

std::vector<std::int32_t> tokenize_corpus(std::span<const Document> docs, const TokenizerModel& tokenizer,
                                          bool append_eos) {
  std::vector<std::vector<std::int32_t>> per_doc(docs.size());
  parallel_chunks(docs.size(), 64, [&](std::size_t, std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i) per_doc[i] = tokenizer.encode(docs[i].text);
  });
  std::vector<std::int32_t> out;
  for (const auto& ids : per_doc) {
    out.insert(out.end(), ids.begin(), ids.end());
    if (append_eos) out.push_back(tokenizer.specials().eos);
  }
  return out;
}

TrainResult train_clm(const ModelCheckpoint& ckpt, std::vector<std::int32_t> tokens, const TrainConfig& cfg) {
  Trainer tr(ckpt, std::move(tokens), cfg);
  tr.run();
  return {tr.checkpoint(), tr.report()};
}

}  // namespace langxpand
