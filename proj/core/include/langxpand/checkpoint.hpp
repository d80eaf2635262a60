#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "langxpand/tensor_store.hpp"

namespace langxpand {

// Decoder hyperparameters. head_dim is derived as hidden / heads.
struct TinyLMConfig {
  std::size_t vocab_size = 0;
  std::size_t hidden = 64;
  std::size_t layers = 2;
  std::size_t heads = 4;
  std::size_t kv_heads = 2;
  std::size_t window = 64;
  double rope_theta = 10000.0;
  std::size_t mlp_hidden = 128;
  double norm_eps = 1e-5;

  std::size_t head_dim() const { return heads == 0 ? 0 : hidden / heads; }
  std::size_t group_size() const { return heads / kv_heads; }

  void validate() const;
  nlohmann::ordered_json to_json() const;
  static TinyLMConfig from_json(const nlohmann::json& j);
  bool operator==(const TinyLMConfig&) const = default;
};

// Canonical parameter names and shapes. Linear weights are [out, in]; the
// output head is row-per-token like the embedding.
std::vector<std::pair<std::string, Shape>> parameter_shapes(const TinyLMConfig& cfg);

inline constexpr const char* kEmbeddingName = "tok_embeddings.weight";
inline constexpr const char* kHeadName = "output.weight";

struct ModelCheckpoint {
  TinyLMConfig config;
  TensorStore tensors;

  std::size_t vocab_size() const { return config.vocab_size; }
  DType dtype() const;
  std::size_t parameter_count() const;

  // Every parameter present with its canonical shape and one shared dtype.
  void validate() const;

  // Writes `path` (tensor container) and its config sidecar.
  void save(const std::filesystem::path& path) const;
  static ModelCheckpoint load(const std::filesystem::path& path);
  ModelCheckpoint cast(DType dtype) const;
};

// foo.xckpt -> foo.config.json
std::filesystem::path config_path_for(const std::filesystem::path& ckpt_path);

// Gaussian N(0, init_std^2) for matrices, ones for norm weights.
ModelCheckpoint init_checkpoint(const TinyLMConfig& cfg, std::uint64_t seed, DType dtype = DType::F32,
                                double init_std = 0.02);

// Grows the embedding and output head to new_vocab rows. Every new row is the
// column mean of the original rows (accumulated in double), plus optional
// N(0, jitter^2) noise. Original rows are copied bit for bit.
ModelCheckpoint expand_embeddings(const ModelCheckpoint& ckpt, std::size_t new_vocab, double jitter = 0.0,
                                  std::uint64_t seed = 0);

// Column mean of the first `rows` rows of a row-per-token matrix, in double.
std::vector<double> row_mean(const Tensor& matrix, std::size_t rows);

struct RescalingSample {
  double factor = 0.0;         // 1 / (1 + sum_new exp(z) / sum_old exp(z))
  double shrink = 0.0;         // 1 - factor, computed directly so it stays exact when tiny
  double max_deviation = 0.0;  // max_w |p'(w) - p(w) * factor|
};

struct RescalingReport {
  std::vector<RescalingSample> samples;
  double max_deviation = 0.0;
  double max_factor = 0.0;
  bool factor_below_one = true;

  nlohmann::ordered_json to_json() const;
};

// Compares the softmax over the expanded head with the original softmax scaled
// by the shrink factor, for each hidden state.
RescalingReport verify_rescaling_identity(const Tensor& old_head, const Tensor& new_head,
                                          std::span<const std::vector<double>> hidden_states);

}  // namespace langxpand
