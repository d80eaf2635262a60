#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "langxpand/checkpoint.hpp"

namespace langxpand {

// Activations kept from the forward pass. Matrices are row-major [T, ...].
template <class T>
struct LayerCache {
  std::vector<T> x_in;     // [T, H]
  std::vector<T> rms1;     // [T]
  std::vector<T> n1;       // [T, H]
  std::vector<T> q, k, v;  // after rotary embedding (q, k)
  std::vector<T> probs;    // [heads, T, T], zero outside the causal window
  std::vector<T> attn;     // [T, heads * head_dim]
  std::vector<T> x_mid;    // [T, H]
  std::vector<T> rms2;
  std::vector<T> n2;
  std::vector<T> a, b;  // w1 and w3 projections, [T, mlp_hidden]
  std::vector<T> gate;  // silu(a) * b
};

template <class T>
struct ForwardCache {
  std::vector<std::int32_t> ids;
  std::size_t length = 0;
  std::vector<LayerCache<T>> layers;
  std::vector<T> x_final, rms_final, n_final;
  std::vector<T> logits;  // [T, V]
};

// Full-sequence forward pass. T must match the checkpoint dtype (float for
// f32, double for f64).
template <class T>
ForwardCache<T> forward(const ModelCheckpoint& ckpt, std::span<const std::int32_t> ids);

// Gradient of a scalar loss given d(loss)/d(logits), shaped [T, V].
template <class T>
TensorStore backward_from_logits(const ModelCheckpoint& ckpt, const ForwardCache<T>& cache, std::span<const T> dlogits);

// Gradient of the mean next-token cross-entropy of the cached sequence.
template <class T>
TensorStore backward(const ModelCheckpoint& ckpt, const ForwardCache<T>& cache);

struct LossStats {
  double nll = 0.0;  // mean cross-entropy over scored positions
  double accuracy = 0.0;
  std::size_t tokens = 0;
  std::size_t correct = 0;
};

// Row t of `logits` predicts seq[t + 1]; the last row is not scored. Argmax
// ties resolve to the lowest id.
template <class T>
LossStats loss_and_accuracy(std::span<const T> logits, std::size_t vocab, std::span<const std::int32_t> seq);

// d(mean next-token cross-entropy)/d(logits): (softmax - onehot) / (T - 1) on
// scored rows, zero on the last row.
template <class T>
std::vector<T> loss_gradient(std::span<const T> logits, std::size_t vocab, std::span<const std::int32_t> seq);

struct PositionScore {
  double logprob = 0.0;
  bool correct = false;
};

// Per-position next-token log-probability and argmax hit, for rows 0..T-2.
template <class T>
std::vector<PositionScore> position_scores(std::span<const T> logits, std::size_t vocab,
                                           std::span<const std::int32_t> seq);

}  // namespace langxpand
