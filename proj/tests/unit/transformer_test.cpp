#include <gtest/gtest.h>

#include <cmath>

#include "langxpand/error.hpp"
#include "langxpand/transformer.hpp"
#include "support.hpp"

using namespace langxpand;
namespace lt = langxpand::testing;

namespace {

TinyLMConfig small(std::size_t vocab, std::size_t window) {
  TinyLMConfig cfg;
  cfg.vocab_size = vocab;
  cfg.hidden = 16;
  cfg.layers = 2;
  cfg.heads = 4;
  cfg.kv_heads = 2;
  cfg.window = window;
  cfg.mlp_hidden = 24;
  return cfg;
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(a[i] - b[i]));
  return d;
}

}  // namespace

TEST(Transformer, HandSetOneLayerMatchesStepByStepReference) {
  TinyLMConfig cfg;
  cfg.vocab_size = 5;
  cfg.hidden = 4;
  cfg.layers = 1;
  cfg.heads = 2;
  cfg.kv_heads = 1;
  cfg.window = 3;
  cfg.mlp_hidden = 6;
  auto ckpt = init_checkpoint(cfg, 0, DType::F64);
  double phase = 0.0;
  for (auto& [name, t] : ckpt.tensors) {
    phase += 0.7;
    for (std::size_t i = 0; i < t.numel(); ++i) {
      t.set(i, t.shape().size() == 1 ? 1.0 + 0.05 * static_cast<double>(i) : 0.4 * std::sin(1.3 * i + phase));
    }
  }
  const std::vector<std::int32_t> ids = {3, 0, 4};
  const auto cache = forward<double>(ckpt, ids);
  ASSERT_EQ(cache.logits.size(), 15u);
  EXPECT_LT(max_abs_diff(cache.logits, lt::reference_logits(ckpt, ids)), 1e-12);
}

TEST(Transformer, InactiveWindowEqualsFullCausal) {
  const std::vector<std::int32_t> ids = {1, 5, 2, 7, 7, 0};
  const auto a = lt::random_checkpoint(small(9, 6), 1);
  auto b = a;
  b.config.window = 1000;
  EXPECT_EQ(forward<double>(a, ids).logits, forward<double>(b, ids).logits);
}

TEST(Transformer, CausalityAndWindow) {
  const std::size_t W = 3;
  const auto ckpt = lt::random_checkpoint(small(9, W), 2);
  std::vector<std::int32_t> ids = {1, 5, 2, 7, 3, 0, 8, 4};
  const auto base = forward<double>(ckpt, ids).logits;
  const std::size_t t = 2;
  ids[t] = 6;
  const auto moved = forward<double>(ckpt, ids).logits;
  const std::size_t V = 9;
  // Windows stack across layers, so with L layers position t reaches t + L(W-1).
  const std::size_t reach = t + ckpt.config.layers * (W - 1);
  for (std::size_t p = 0; p < ids.size(); ++p) {
    bool same = true;
    for (std::size_t v = 0; v < V; ++v) same = same && base[p * V + v] == moved[p * V + v];
    if (p < t || p > reach) EXPECT_TRUE(same) << "position " << p;
    if (p == t) EXPECT_FALSE(same);
  }
}

TEST(Transformer, SingleLayerWindowIsStrict) {
  auto cfg = small(9, 3);
  cfg.layers = 1;
  const auto ckpt = lt::random_checkpoint(cfg, 3);
  std::vector<std::int32_t> ids = {1, 5, 2, 7, 3, 0, 8, 4};
  const auto base = forward<double>(ckpt, ids).logits;
  ids[1] = 6;
  const auto moved = forward<double>(ckpt, ids).logits;
  for (std::size_t p = 1 + 3; p < ids.size(); ++p) {
    for (std::size_t v = 0; v < 9; ++v) EXPECT_EQ(base[p * 9 + v], moved[p * 9 + v]);
  }
}

TEST(Transformer, AttentionRowsSumToOne) {
  const auto ckpt = lt::random_checkpoint(small(9, 4), 4);
  const std::vector<std::int32_t> ids = {1, 5, 2, 7, 3, 0};
  const auto cache = forward<double>(ckpt, ids);
  const std::size_t T = ids.size();
  for (const auto& layer : cache.layers) {
    for (std::size_t h = 0; h < ckpt.config.heads; ++h) {
      for (std::size_t i = 0; i < T; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < T; ++j) s += layer.probs[(h * T + i) * T + j];
        EXPECT_NEAR(s, 1.0, 1e-9);
      }
    }
  }
}

TEST(Transformer, SinglePrecisionTracksDouble) {
  const auto ckpt = lt::random_checkpoint(small(11, 8), 5, 0.1);
  const std::vector<std::int32_t> ids = {1, 5, 2, 7, 3, 10};
  const auto d = forward<double>(ckpt, ids).logits;
  const auto f = forward<float>(ckpt.cast(DType::F32), ids).logits;
  for (std::size_t i = 0; i < d.size(); ++i) EXPECT_NEAR(f[i], d[i], 1e-4);
}

TEST(Transformer, OutOfRangeIdRejected) {
  const auto ckpt = lt::random_checkpoint(small(9, 4), 6);
  const std::vector<std::int32_t> ids = {1, 9};
  EXPECT_THROW(forward<double>(ckpt, ids), DataError);
}

TEST(Transformer, UniformLogitsGiveLogK) {
  const std::size_t k = 7;
  const std::vector<std::int32_t> seq = {0, 3, 6, 1, 2};
  const std::vector<double> logits(seq.size() * k, 0.25);
  const auto s = loss_and_accuracy<double>(logits, k, seq);
  EXPECT_NEAR(s.nll, std::log(7.0), 1e-14);
  EXPECT_EQ(s.tokens, seq.size() - 1);
}

TEST(Transformer, RiggedLogitsArePerfect) {
  const std::size_t k = 5;
  const std::vector<std::int32_t> seq = {0, 3, 4, 1, 2};
  std::vector<double> logits(seq.size() * k, 0.0);
  for (std::size_t t = 0; t + 1 < seq.size(); ++t) logits[t * k + static_cast<std::size_t>(seq[t + 1])] = 10.0;
  const auto s = loss_and_accuracy<double>(logits, k, seq);
  EXPECT_EQ(s.accuracy, 1.0);
  EXPECT_LT(s.nll, 1e-3);
}

TEST(Transformer, TwoPositionLossByHand) {
  // Rows [1,0] and [0,2] score targets 1 and 0; the last row has no target.
  const std::vector<double> logits = {1, 0, 0, 2, 9, 9};
  const std::vector<std::int32_t> seq = {0, 1, 0};
  const double expected = (std::log(1.0 + std::exp(1.0)) + std::log(1.0 + std::exp(2.0))) / 2.0;
  const auto s = loss_and_accuracy<double>(logits, 2, seq);
  EXPECT_NEAR(s.nll, expected, 1e-15);
  EXPECT_EQ(s.tokens, 2u);
  EXPECT_EQ(s.correct, 0u);
  const std::vector<std::int32_t> one = {1};
  EXPECT_THROW(loss_and_accuracy<double>(std::vector<double>{0, 0}, 2, one), DataError);
}

TEST(Transformer, LossGradientIsSoftmaxMinusOneHot) {
  const std::vector<double> logits = {1, 0, -1, 0.5, 2, 0, 3, 3, 3};
  const std::vector<std::int32_t> seq = {0, 2, 1};
  const auto g = loss_gradient<double>(logits, 3, seq);
  for (std::size_t t = 0; t < 2; ++t) {
    double z = 0.0;
    for (std::size_t v = 0; v < 3; ++v) z += std::exp(logits[t * 3 + v]);
    for (std::size_t v = 0; v < 3; ++v) {
      const double onehot = static_cast<std::int32_t>(v) == seq[t + 1] ? 1.0 : 0.0;
      EXPECT_NEAR(g[t * 3 + v], (std::exp(logits[t * 3 + v]) / z - onehot) / 2.0, 1e-15);
    }
  }
  for (std::size_t v = 0; v < 3; ++v) EXPECT_EQ(g[6 + v], 0.0);
}

TEST(Transformer, UnusedEmbeddingRowsGetZeroGradient) {
  auto ckpt = lt::random_checkpoint(small(12, 4), 7);
  auto& emb = require_tensor(ckpt.tensors, kEmbeddingName);
  const std::size_t H = ckpt.config.hidden;
  for (std::size_t r = 8; r < 12; ++r) {
    for (std::size_t c = 0; c < H; ++c) emb.set(r * H + c, 0.0);
  }
  const std::vector<std::int32_t> ids = {1, 5, 2, 7, 3, 0};
  const auto grads = backward<double>(ckpt, forward<double>(ckpt, ids));
  const auto& g = require_tensor(grads, kEmbeddingName);
  for (std::size_t r = 8; r < 12; ++r) {
    for (std::size_t c = 0; c < H; ++c) EXPECT_EQ(g.get(r * H + c), 0.0);
  }
  for (const auto& [name, t] : ckpt.tensors) EXPECT_EQ(grads.at(name).shape(), t.shape()) << name;
}

TEST(Transformer, GradientMatchesFiniteDifferenceOnSampledEntries) {
  const auto ckpt = lt::random_checkpoint(small(10, 4), 8);
  const std::vector<std::int32_t> ids = {1, 5, 2, 7, 3, 0, 9};
  const auto grads = backward<double>(ckpt, forward<double>(ckpt, ids));
  const double eps = 1e-5;
  for (const auto& [name, t] : ckpt.tensors) {
    for (std::size_t i : {std::size_t{0}, t.numel() / 2, t.numel() - 1}) {
      auto plus = ckpt, minus = ckpt;
      require_tensor(plus.tensors, name).set(i, t.get(i) + eps);
      require_tensor(minus.tensors, name).set(i, t.get(i) - eps);
      const double lp = lt::reference_nll(lt::reference_logits(plus, ids), 10, ids);
      const double lm = lt::reference_nll(lt::reference_logits(minus, ids), 10, ids);
      EXPECT_NEAR(grads.at(name).get(i), (lp - lm) / (2 * eps), 1e-7) << name << "[" << i << "]";
    }
  }
}
