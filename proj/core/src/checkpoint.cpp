#include "langxpand/checkpoint.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "langxpand/error.hpp"
#include "langxpand/random.hpp"

namespace langxpand {

void TinyLMConfig::validate() const {
  auto positive = [](std::size_t v, const char* name) {
    if (v == 0) throw UsageError(std::string(name) + " must be positive");
  };
  positive(vocab_size, "vocab_size");
  positive(hidden, "hidden");
  positive(layers, "layers");
  positive(heads, "heads");
  positive(kv_heads, "kv_heads");
  positive(window, "window");
  positive(mlp_hidden, "mlp_hidden");
  if (heads % kv_heads != 0) throw UsageError("heads must be divisible by kv_heads");
  if (hidden % heads != 0) throw UsageError("hidden must be divisible by heads");
  if (head_dim() % 2 != 0) throw UsageError("head_dim must be even for rotary embeddings");
  if (!(rope_theta > 0.0)) throw UsageError("rope_theta must be positive");
  if (!(norm_eps > 0.0)) throw UsageError("norm_eps must be positive");
}

nlohmann::ordered_json TinyLMConfig::to_json() const {
  return {{"vocab_size", vocab_size}, {"hidden", hidden},         {"layers", layers},
          {"heads", heads},           {"kv_heads", kv_heads},     {"head_dim", head_dim()},
          {"window", window},         {"rope_theta", rope_theta}, {"mlp_hidden", mlp_hidden},
          {"norm_eps", norm_eps}};
}

TinyLMConfig TinyLMConfig::from_json(const nlohmann::json& j) {
  TinyLMConfig c;
  try {
    c.vocab_size = j.value("vocab_size", c.vocab_size);
    c.hidden = j.value("hidden", c.hidden);
    c.layers = j.value("layers", c.layers);
    c.heads = j.value("heads", c.heads);
    c.kv_heads = j.value("kv_heads", c.kv_heads);
    c.window = j.value("window", c.window);
    c.rope_theta = j.value("rope_theta", c.rope_theta);
    c.mlp_hidden = j.value("mlp_hidden", c.mlp_hidden);
    c.norm_eps = j.value("norm_eps", c.norm_eps);
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(std::string("bad model config: ") + e.what());
  }
  c.validate();
  if (j.contains("head_dim") && j["head_dim"].get<std::size_t>() != c.head_dim()) {
    throw UsageError("head_dim must equal hidden / heads");
  }
  return c;
}

std::vector<std::pair<std::string, Shape>> parameter_shapes(const TinyLMConfig& c) {
  const std::size_t hd = c.head_dim();
  std::vector<std::pair<std::string, Shape>> out;
  out.emplace_back(kEmbeddingName, Shape{c.vocab_size, c.hidden});
  for (std::size_t l = 0; l < c.layers; ++l) {
    const std::string p = "layers." + std::to_string(l) + ".";
    out.emplace_back(p + "attention_norm.weight", Shape{c.hidden});
    out.emplace_back(p + "attention.wq.weight", Shape{c.heads * hd, c.hidden});
    out.emplace_back(p + "attention.wk.weight", Shape{c.kv_heads * hd, c.hidden});
    out.emplace_back(p + "attention.wv.weight", Shape{c.kv_heads * hd, c.hidden});
    out.emplace_back(p + "attention.wo.weight", Shape{c.hidden, c.heads * hd});
    out.emplace_back(p + "ffn_norm.weight", Shape{c.hidden});
    out.emplace_back(p + "feed_forward.w1.weight", Shape{c.mlp_hidden, c.hidden});
    out.emplace_back(p + "feed_forward.w2.weight", Shape{c.hidden, c.mlp_hidden});
    out.emplace_back(p + "feed_forward.w3.weight", Shape{c.mlp_hidden, c.hidden});
  }
  out.emplace_back("norm.weight", Shape{c.hidden});
  out.emplace_back(kHeadName, Shape{c.vocab_size, c.hidden});
  return out;
}

DType ModelCheckpoint::dtype() const { return require_tensor(tensors, kEmbeddingName).dtype(); }

std::size_t ModelCheckpoint::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : tensors) n += t.numel();
  return n;
}

void ModelCheckpoint::validate() const {
  config.validate();
  const auto shapes = parameter_shapes(config);
  const DType d = dtype();
  for (const auto& [name, shape] : shapes) {
    const Tensor& t = require_tensor(tensors, name);
    if (t.shape() != shape) {
      throw DataError("tensor '" + name + "' has shape " + shape_string(t.shape()) + ", config expects " +
                      shape_string(shape));
    }
    if (t.dtype() != d) throw DataError("tensor '" + name + "' has a different dtype from the embedding");
  }
  if (tensors.size() != shapes.size()) throw DataError("checkpoint has tensors not named by the config");
}

std::filesystem::path config_path_for(const std::filesystem::path& ckpt_path) {
  auto p = ckpt_path;
  p.replace_extension(".config.json");
  return p;
}

void ModelCheckpoint::save(const std::filesystem::path& path) const {
  validate();
  write_store(tensors, path);
  std::ofstream out(config_path_for(path));
  if (!out) throw DataError("cannot write " + config_path_for(path).string());
  out << config.to_json().dump(2) << "\n";
}

ModelCheckpoint ModelCheckpoint::load(const std::filesystem::path& path) {
  const auto cfg_path = config_path_for(path);
  std::ifstream in(cfg_path);
  if (!in) throw DataError("cannot open " + cfg_path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(cfg_path.string() + ": " + e.what());
  }
  ModelCheckpoint ckpt{TinyLMConfig::from_json(j), read_store(path)};
  ckpt.validate();
  return ckpt;
}

ModelCheckpoint ModelCheckpoint::cast(DType d) const {
  ModelCheckpoint out{config, {}};
  for (const auto& [name, t] : tensors) out.tensors.emplace(name, t.cast(d));
  return out;
}

ModelCheckpoint init_checkpoint(const TinyLMConfig& cfg, std::uint64_t seed, DType dtype, double init_std) {
  cfg.validate();
  Rng rng(seed);
  ModelCheckpoint ckpt{cfg, {}};
  for (const auto& [name, shape] : parameter_shapes(cfg)) {
    Tensor t(DType::F64, shape);
    auto v = t.data<double>();
    if (shape.size() == 1) {
      std::fill(v.begin(), v.end(), 1.0);
    } else {
      for (auto& x : v) x = init_std * rng.normal();
    }
    ckpt.tensors.emplace(name, t.cast(dtype));
  }
  return ckpt;
}

std::vector<double> row_mean(const Tensor& m, std::size_t rows) {
  if (m.shape().size() != 2 || rows == 0 || rows > m.rows()) throw UsageError("row_mean needs a matrix with enough rows");
  const std::size_t h = m.cols();
  std::vector<double> mean(h, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < h; ++c) mean[c] += m.get(r * h + c);
  }
  for (auto& x : mean) x /= static_cast<double>(rows);
  return mean;
}

namespace {

template <class T>
Tensor grow_rows(const Tensor& src, std::size_t new_rows, const std::vector<double>& mean, double jitter, Rng& rng) {
  const std::size_t old_rows = src.rows(), h = src.cols();
  std::vector<T> out(new_rows * h);
  const auto in = src.data<T>();
  std::copy(in.begin(), in.end(), out.begin());
  for (std::size_t r = old_rows; r < new_rows; ++r) {
    for (std::size_t c = 0; c < h; ++c) {
      const double noise = jitter > 0.0 ? jitter * rng.normal() : 0.0;
      out[r * h + c] = static_cast<T>(mean[c] + noise);
    }
  }
  return Tensor(Shape{new_rows, h}, std::move(out));
}

}  // namespace

ModelCheckpoint expand_embeddings(const ModelCheckpoint& ckpt, std::size_t new_vocab, double jitter,
                                  std::uint64_t seed) {
  ckpt.validate();
  const std::size_t old_vocab = ckpt.vocab_size();
  if (new_vocab <= old_vocab) {
    throw UsageError("new vocabulary size " + std::to_string(new_vocab) + " must exceed the current " +
                     std::to_string(old_vocab));
  }
  if (!(jitter >= 0.0) || !std::isfinite(jitter)) throw UsageError("jitter must be a finite value >= 0");
  Rng rng(seed);
  ModelCheckpoint out = ckpt;
  out.config.vocab_size = new_vocab;
  for (const char* name : {kEmbeddingName, kHeadName}) {
    const Tensor& src = require_tensor(ckpt.tensors, name);
    const auto mean = row_mean(src, old_vocab);
    out.tensors[name] = src.dtype() == DType::F32 ? grow_rows<float>(src, new_vocab, mean, jitter, rng)
                                                   : grow_rows<double>(src, new_vocab, mean, jitter, rng);
  }
  out.validate();
  return out;
}

nlohmann::ordered_json RescalingReport::to_json() const {
  nlohmann::ordered_json factors = nlohmann::ordered_json::array();
  for (const auto& s : samples) factors.push_back(s.factor);
  double min_shrink = samples.empty() ? 0.0 : samples.front().shrink;
  for (const auto& s : samples) min_shrink = std::min(min_shrink, s.shrink);
  return {{"samples", samples.size()},
          {"max_deviation", max_deviation},
          {"max_factor", max_factor},
          {"min_shrink", min_shrink},
          {"factor_below_one", factor_below_one},
          {"factors", factors}};
}

RescalingReport verify_rescaling_identity(const Tensor& old_head, const Tensor& new_head,
                                          std::span<const std::vector<double>> hidden_states) {
  if (old_head.shape().size() != 2 || new_head.shape().size() != 2) throw UsageError("heads must be matrices");
  const std::size_t n = old_head.rows(), n2 = new_head.rows(), h = old_head.cols();
  if (new_head.cols() != h || n2 < n || n == 0) {
    throw DataError("head shapes " + shape_string(old_head.shape()) + " and " + shape_string(new_head.shape()) +
                    " are not an expansion");
  }
  const auto a = old_head.to_f64();
  const auto b = new_head.to_f64();
  if (!std::equal(a.begin(), a.end(), b.begin())) throw DataError("expanded head does not preserve the original rows");

  RescalingReport report;
  std::vector<double> z(n2);
  for (const auto& hs : hidden_states) {
    if (hs.size() != h) throw DataError("hidden state has dimension " + std::to_string(hs.size()) + ", expected " + std::to_string(h));
    for (std::size_t r = 0; r < n2; ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < h; ++c) s += b[r * h + c] * hs[c];
      z[r] = s;
    }
    const double m = *std::max_element(z.begin(), z.end());
    double s_old = 0.0, s_new = 0.0;
    for (std::size_t r = 0; r < n; ++r) s_old += std::exp(z[r] - m);
    for (std::size_t r = n; r < n2; ++r) s_new += std::exp(z[r] - m);
    RescalingSample sample;
    const double s_all = s_old + s_new;
    sample.factor = 1.0 / (1.0 + s_new / s_old);
    sample.shrink = s_new / s_all;
    for (std::size_t r = 0; r < n; ++r) {
      const double e = std::exp(z[r] - m);
      const double p = e / s_old, p_new = e / s_all;
      sample.max_deviation = std::max(sample.max_deviation, std::abs(p_new - p * sample.factor));
    }
    report.max_deviation = std::max(report.max_deviation, sample.max_deviation);
    report.max_factor = std::max(report.max_factor, sample.factor);
    // shrink > 0 is the strict form of factor < 1.
    if (n2 > n && !(sample.shrink > 0.0)) report.factor_below_one = false;
    report.samples.push_back(sample);
  }
  return report;
}

}  // namespace langxpand
