#include "langxpand/transformer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <type_traits>

#include "langxpand/error.hpp"

namespace langxpand {
namespace {

// y[t,o] = sum_i W[o,i] x[t,i]
template <class T>
void linear(const T* x, const T* w, T* y, std::size_t n, std::size_t in, std::size_t out) {
  for (std::size_t t = 0; t < n; ++t) {
    const T* xt = x + t * in;
    for (std::size_t o = 0; o < out; ++o) {
      const T* wo = w + o * in;
      T s = 0;
      for (std::size_t i = 0; i < in; ++i) s += wo[i] * xt[i];
      y[t * out + o] = s;
    }
  }
}

// dx[t,i] += sum_o dy[t,o] W[o,i]
template <class T>
void linear_dx(const T* dy, const T* w, T* dx, std::size_t n, std::size_t in, std::size_t out) {
  for (std::size_t t = 0; t < n; ++t) {
    T* dxt = dx + t * in;
    for (std::size_t o = 0; o < out; ++o) {
      const T g = dy[t * out + o];
      if (g == T(0)) continue;
      const T* wo = w + o * in;
      for (std::size_t i = 0; i < in; ++i) dxt[i] += g * wo[i];
    }
  }
}

// dW[o,i] += sum_t dy[t,o] x[t,i]
template <class T>
void linear_dw(const T* dy, const T* x, T* dw, std::size_t n, std::size_t in, std::size_t out) {
  for (std::size_t t = 0; t < n; ++t) {
    const T* xt = x + t * in;
    for (std::size_t o = 0; o < out; ++o) {
      const T g = dy[t * out + o];
      if (g == T(0)) continue;
      T* dwo = dw + o * in;
      for (std::size_t i = 0; i < in; ++i) dwo[i] += g * xt[i];
    }
  }
}

template <class T>
void rmsnorm(const T* x, const T* g, T* r, T* y, std::size_t n, std::size_t h, double eps) {
  for (std::size_t t = 0; t < n; ++t) {
    const T* xt = x + t * h;
    T ss = 0;
    for (std::size_t i = 0; i < h; ++i) ss += xt[i] * xt[i];
    const T rt = T(1) / std::sqrt(ss / static_cast<T>(h) + static_cast<T>(eps));
    r[t] = rt;
    for (std::size_t i = 0; i < h; ++i) y[t * h + i] = xt[i] * rt * g[i];
  }
}

template <class T>
void rmsnorm_backward(const T* x, const T* g, const T* r, const T* dy, T* dx, T* dg, std::size_t n, std::size_t h) {
  std::vector<T> xh(h), dxh(h);
  for (std::size_t t = 0; t < n; ++t) {
    T dot = 0;
    for (std::size_t i = 0; i < h; ++i) {
      xh[i] = x[t * h + i] * r[t];
      dxh[i] = dy[t * h + i] * g[i];
      dg[i] += dy[t * h + i] * xh[i];
      dot += dxh[i] * xh[i];
    }
    dot /= static_cast<T>(h);
    for (std::size_t i = 0; i < h; ++i) dx[t * h + i] += r[t] * (dxh[i] - xh[i] * dot);
  }
}

template <class T>
struct Rope {
  std::vector<T> cos, sin;  // [T, head_dim / 2]
  std::size_t half = 0;

  Rope(std::size_t n, std::size_t head_dim, double theta) : cos(n * head_dim / 2), sin(n * head_dim / 2), half(head_dim / 2) {
    for (std::size_t t = 0; t < n; ++t) {
      for (std::size_t i = 0; i < half; ++i) {
        const double freq = std::pow(theta, -2.0 * static_cast<double>(i) / static_cast<double>(head_dim));
        const double angle = static_cast<double>(t) * freq;
        cos[t * half + i] = static_cast<T>(std::cos(angle));
        sin[t * half + i] = static_cast<T>(std::sin(angle));
      }
    }
  }

  // Rotates interleaved pairs; inverse = true applies the transpose.
  void apply(std::vector<T>& v, std::size_t n, std::size_t heads, bool inverse) const {
    const std::size_t hd = 2 * half;
    for (std::size_t t = 0; t < n; ++t) {
      for (std::size_t h = 0; h < heads; ++h) {
        T* p = v.data() + (t * heads + h) * hd;
        for (std::size_t i = 0; i < half; ++i) {
          const T c = cos[t * half + i];
          const T s = inverse ? -sin[t * half + i] : sin[t * half + i];
          const T x0 = p[2 * i], x1 = p[2 * i + 1];
          p[2 * i] = x0 * c - x1 * s;
          p[2 * i + 1] = x0 * s + x1 * c;
        }
      }
    }
  }
};

template <class T>
constexpr DType dtype_of() {
  return std::is_same_v<T, float> ? DType::F32 : DType::F64;
}

template <class T>
const T* weight(const ModelCheckpoint& ckpt, const std::string& name) {
  return require_tensor(ckpt.tensors, name).data<T>().data();
}

std::string layer_name(std::size_t l, const char* suffix) { return "layers." + std::to_string(l) + "." + suffix; }

template <class T>
void check_dtype(const ModelCheckpoint& ckpt) {
  if (ckpt.dtype() != dtype_of<T>()) {
    throw UsageError("checkpoint dtype " + std::string(to_string(ckpt.dtype())) + " does not match the requested precision");
  }
}

template <class T>
T sigmoid(T x) {
  return T(1) / (T(1) + std::exp(-x));
}

}  // namespace

template <class T>
ForwardCache<T> forward(const ModelCheckpoint& ckpt, std::span<const std::int32_t> ids) {
  check_dtype<T>(ckpt);
  const TinyLMConfig& c = ckpt.config;
  const std::size_t n = ids.size(), H = c.hidden, V = c.vocab_size, hd = c.head_dim(), nh = c.heads,
                    nkv = c.kv_heads, M = c.mlp_hidden, group = c.group_size();
  if (n == 0) throw DataError("cannot run the model on an empty sequence");
  for (auto id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= V) {
      throw DataError("token id " + std::to_string(id) + " outside vocabulary of " + std::to_string(V));
    }
  }
  ForwardCache<T> cache;
  cache.ids.assign(ids.begin(), ids.end());
  cache.length = n;
  const Rope<T> rope(n, hd, c.rope_theta);
  const T scale = T(1) / std::sqrt(static_cast<T>(hd));

  std::vector<T> x(n * H);
  const T* emb = weight<T>(ckpt, kEmbeddingName);
  for (std::size_t t = 0; t < n; ++t) std::copy_n(emb + static_cast<std::size_t>(ids[t]) * H, H, x.begin() + t * H);

  std::vector<T> scores(n);
  cache.layers.resize(c.layers);
  for (std::size_t l = 0; l < c.layers; ++l) {
    auto& lc = cache.layers[l];
    lc.x_in = x;
    lc.rms1.resize(n);
    lc.n1.resize(n * H);
    rmsnorm(x.data(), weight<T>(ckpt, layer_name(l, "attention_norm.weight")), lc.rms1.data(), lc.n1.data(), n, H, c.norm_eps);
    lc.q.resize(n * nh * hd);
    lc.k.resize(n * nkv * hd);
    lc.v.resize(n * nkv * hd);
    linear(lc.n1.data(), weight<T>(ckpt, layer_name(l, "attention.wq.weight")), lc.q.data(), n, H, nh * hd);
    linear(lc.n1.data(), weight<T>(ckpt, layer_name(l, "attention.wk.weight")), lc.k.data(), n, H, nkv * hd);
    linear(lc.n1.data(), weight<T>(ckpt, layer_name(l, "attention.wv.weight")), lc.v.data(), n, H, nkv * hd);
    rope.apply(lc.q, n, nh, false);
    rope.apply(lc.k, n, nkv, false);

    lc.probs.assign(nh * n * n, T(0));
    lc.attn.assign(n * nh * hd, T(0));
    for (std::size_t h = 0; h < nh; ++h) {
      const std::size_t kh = h / group;
      for (std::size_t t = 0; t < n; ++t) {
        const std::size_t lo = t + 1 > c.window ? t + 1 - c.window : 0;
        const T* qt = lc.q.data() + (t * nh + h) * hd;
        T m = -std::numeric_limits<T>::infinity();
        for (std::size_t u = lo; u <= t; ++u) {
          const T* ku = lc.k.data() + (u * nkv + kh) * hd;
          T s = 0;
          for (std::size_t d = 0; d < hd; ++d) s += qt[d] * ku[d];
          scores[u] = s * scale;
          m = std::max(m, scores[u]);
        }
        T sum = 0;
        for (std::size_t u = lo; u <= t; ++u) {
          scores[u] = std::exp(scores[u] - m);
          sum += scores[u];
        }
        T* pr = lc.probs.data() + (h * n + t) * n;
        T* out = lc.attn.data() + (t * nh + h) * hd;
        for (std::size_t u = lo; u <= t; ++u) {
          pr[u] = scores[u] / sum;
          const T* vu = lc.v.data() + (u * nkv + kh) * hd;
          for (std::size_t d = 0; d < hd; ++d) out[d] += pr[u] * vu[d];
        }
      }
    }
    std::vector<T> y(n * H);
    linear(lc.attn.data(), weight<T>(ckpt, layer_name(l, "attention.wo.weight")), y.data(), n, nh * hd, H);
    for (std::size_t i = 0; i < n * H; ++i) x[i] += y[i];
    lc.x_mid = x;

    lc.rms2.resize(n);
    lc.n2.resize(n * H);
    rmsnorm(x.data(), weight<T>(ckpt, layer_name(l, "ffn_norm.weight")), lc.rms2.data(), lc.n2.data(), n, H, c.norm_eps);
    lc.a.resize(n * M);
    lc.b.resize(n * M);
    lc.gate.resize(n * M);
    linear(lc.n2.data(), weight<T>(ckpt, layer_name(l, "feed_forward.w1.weight")), lc.a.data(), n, H, M);
    linear(lc.n2.data(), weight<T>(ckpt, layer_name(l, "feed_forward.w3.weight")), lc.b.data(), n, H, M);
    for (std::size_t i = 0; i < n * M; ++i) lc.gate[i] = lc.a[i] * sigmoid(lc.a[i]) * lc.b[i];
    linear(lc.gate.data(), weight<T>(ckpt, layer_name(l, "feed_forward.w2.weight")), y.data(), n, M, H);
    for (std::size_t i = 0; i < n * H; ++i) x[i] += y[i];
  }

  cache.x_final = x;
  cache.rms_final.resize(n);
  cache.n_final.resize(n * H);
  rmsnorm(x.data(), weight<T>(ckpt, "norm.weight"), cache.rms_final.data(), cache.n_final.data(), n, H, c.norm_eps);
  cache.logits.resize(n * V);
  linear(cache.n_final.data(), weight<T>(ckpt, kHeadName), cache.logits.data(), n, H, V);
  return cache;
}

template <class T>
TensorStore backward_from_logits(const ModelCheckpoint& ckpt, const ForwardCache<T>& cache, std::span<const T> dlogits) {
  check_dtype<T>(ckpt);
  const TinyLMConfig& c = ckpt.config;
  const std::size_t n = cache.length, H = c.hidden, V = c.vocab_size, hd = c.head_dim(), nh = c.heads,
                    nkv = c.kv_heads, M = c.mlp_hidden, group = c.group_size();
  if (cache.layers.size() != c.layers || cache.logits.size() != n * V) {
    throw UsageError("forward cache does not match the checkpoint");
  }
  if (dlogits.size() != n * V) throw UsageError("logit gradient has the wrong shape");

  TensorStore grads;
  for (const auto& [name, shape] : parameter_shapes(c)) grads.emplace(name, Tensor(dtype_of<T>(), shape));
  auto g = [&](const std::string& name) { return require_tensor(grads, name).data<T>().data(); };

  const Rope<T> rope(n, hd, c.rope_theta);
  const T scale = T(1) / std::sqrt(static_cast<T>(hd));

  linear_dw(dlogits.data(), cache.n_final.data(), g(kHeadName), n, H, V);
  std::vector<T> dn(n * H, T(0));
  linear_dx(dlogits.data(), weight<T>(ckpt, kHeadName), dn.data(), n, H, V);
  std::vector<T> dx(n * H, T(0));
  rmsnorm_backward(cache.x_final.data(), weight<T>(ckpt, "norm.weight"), cache.rms_final.data(), dn.data(), dx.data(),
                   g("norm.weight"), n, H);

  std::vector<T> dgate(n * M), da(n * M), db(n * M), dattn(n * nh * hd), dq(n * nh * hd), dk(n * nkv * hd),
      dv(n * nkv * hd), dp(n);
  for (std::size_t l = c.layers; l-- > 0;) {
    const auto& lc = cache.layers[l];
    // Feed-forward block; dx flows through the residual unchanged.
    std::vector<T> dx_mid = dx;
    linear_dw(dx.data(), lc.gate.data(), g(layer_name(l, "feed_forward.w2.weight")), n, M, H);
    std::fill(dgate.begin(), dgate.end(), T(0));
    linear_dx(dx.data(), weight<T>(ckpt, layer_name(l, "feed_forward.w2.weight")), dgate.data(), n, M, H);
    for (std::size_t i = 0; i < n * M; ++i) {
      const T s = sigmoid(lc.a[i]);
      db[i] = dgate[i] * lc.a[i] * s;
      da[i] = dgate[i] * lc.b[i] * s * (T(1) + lc.a[i] * (T(1) - s));
    }
    linear_dw(da.data(), lc.n2.data(), g(layer_name(l, "feed_forward.w1.weight")), n, H, M);
    linear_dw(db.data(), lc.n2.data(), g(layer_name(l, "feed_forward.w3.weight")), n, H, M);
    std::fill(dn.begin(), dn.end(), T(0));
    linear_dx(da.data(), weight<T>(ckpt, layer_name(l, "feed_forward.w1.weight")), dn.data(), n, H, M);
    linear_dx(db.data(), weight<T>(ckpt, layer_name(l, "feed_forward.w3.weight")), dn.data(), n, H, M);
    rmsnorm_backward(lc.x_mid.data(), weight<T>(ckpt, layer_name(l, "ffn_norm.weight")), lc.rms2.data(), dn.data(),
                     dx_mid.data(), g(layer_name(l, "ffn_norm.weight")), n, H);

    // Attention block.
    dx = dx_mid;
    linear_dw(dx_mid.data(), lc.attn.data(), g(layer_name(l, "attention.wo.weight")), n, nh * hd, H);
    std::fill(dattn.begin(), dattn.end(), T(0));
    linear_dx(dx_mid.data(), weight<T>(ckpt, layer_name(l, "attention.wo.weight")), dattn.data(), n, nh * hd, H);
    std::fill(dq.begin(), dq.end(), T(0));
    std::fill(dk.begin(), dk.end(), T(0));
    std::fill(dv.begin(), dv.end(), T(0));
    for (std::size_t h = 0; h < nh; ++h) {
      const std::size_t kh = h / group;
      for (std::size_t t = 0; t < n; ++t) {
        const std::size_t lo = t + 1 > c.window ? t + 1 - c.window : 0;
        const T* pr = lc.probs.data() + (h * n + t) * n;
        const T* dot = dattn.data() + (t * nh + h) * hd;
        T pdp = 0;
        for (std::size_t u = lo; u <= t; ++u) {
          const T* vu = lc.v.data() + (u * nkv + kh) * hd;
          T s = 0;
          for (std::size_t d = 0; d < hd; ++d) s += dot[d] * vu[d];
          dp[u] = s;
          pdp += pr[u] * s;
          T* dvu = dv.data() + (u * nkv + kh) * hd;
          for (std::size_t d = 0; d < hd; ++d) dvu[d] += pr[u] * dot[d];
        }
        const T* qt = lc.q.data() + (t * nh + h) * hd;
        T* dqt = dq.data() + (t * nh + h) * hd;
        for (std::size_t u = lo; u <= t; ++u) {
          const T ds = pr[u] * (dp[u] - pdp) * scale;
          const T* ku = lc.k.data() + (u * nkv + kh) * hd;
          T* dku = dk.data() + (u * nkv + kh) * hd;
          for (std::size_t d = 0; d < hd; ++d) {
            dqt[d] += ds * ku[d];
            dku[d] += ds * qt[d];
          }
        }
      }
    }
    rope.apply(dq, n, nh, true);
    rope.apply(dk, n, nkv, true);
    linear_dw(dq.data(), lc.n1.data(), g(layer_name(l, "attention.wq.weight")), n, H, nh * hd);
    linear_dw(dk.data(), lc.n1.data(), g(layer_name(l, "attention.wk.weight")), n, H, nkv * hd);
    linear_dw(dv.data(), lc.n1.data(), g(layer_name(l, "attention.wv.weight")), n, H, nkv * hd);
    std::fill(dn.begin(), dn.end(), T(0));
    linear_dx(dq.data(), weight<T>(ckpt, layer_name(l, "attention.wq.weight")), dn.data(), n, H, nh * hd);
    linear_dx(dk.data(), weight<T>(ckpt, layer_name(l, "attention.wk.weight")), dn.data(), n, H, nkv * hd);
    linear_dx(dv.data(), weight<T>(ckpt, layer_name(l, "attention.wv.weight")), dn.data(), n, H, nkv * hd);
    rmsnorm_backward(lc.x_in.data(), weight<T>(ckpt, layer_name(l, "attention_norm.weight")), lc.rms1.data(), dn.data(),
                     dx.data(), g(layer_name(l, "attention_norm.weight")), n, H);
  }

  T* demb = g(kEmbeddingName);
  for (std::size_t t = 0; t < n; ++t) {
    T* row = demb + static_cast<std::size_t>(cache.ids[t]) * H;
    for (std::size_t i = 0; i < H; ++i) row[i] += dx[t * H + i];
  }
  return grads;
}

template <class T>
TensorStore backward(const ModelCheckpoint& ckpt, const ForwardCache<T>& cache) {
  const auto dl = loss_gradient<T>(cache.logits, ckpt.config.vocab_size, cache.ids);
  return backward_from_logits<T>(ckpt, cache, dl);
}

namespace {

template <class T>
void check_logits(std::span<const T> logits, std::size_t vocab, std::span<const std::int32_t> seq) {
  if (seq.size() < 2) throw DataError("need at least 2 tokens for next-token scoring");
  if (vocab == 0 || logits.size() != seq.size() * vocab) throw UsageError("logits shape does not match sequence");
  for (auto id : seq) {
    if (id < 0 || static_cast<std::size_t>(id) >= vocab) throw DataError("target id " + std::to_string(id) + " out of range");
  }
}

// log-sum-exp and first argmax of one row, in double.
template <class T>
std::pair<double, std::size_t> row_stats(const T* row, std::size_t vocab) {
  std::size_t arg = 0;
  for (std::size_t j = 1; j < vocab; ++j) {
    if (row[j] > row[arg]) arg = j;
  }
  const double m = static_cast<double>(row[arg]);
  double s = 0.0;
  for (std::size_t j = 0; j < vocab; ++j) s += std::exp(static_cast<double>(row[j]) - m);
  return {m + std::log(s), arg};
}

}  // namespace

template <class T>
std::vector<PositionScore> position_scores(std::span<const T> logits, std::size_t vocab,
                                           std::span<const std::int32_t> seq) {
  check_logits(logits, vocab, seq);
  std::vector<PositionScore> out(seq.size() - 1);
  for (std::size_t t = 0; t + 1 < seq.size(); ++t) {
    const T* row = logits.data() + t * vocab;
    const auto [lse, arg] = row_stats(row, vocab);
    const auto target = static_cast<std::size_t>(seq[t + 1]);
    out[t].logprob = static_cast<double>(row[target]) - lse;
    out[t].correct = arg == target;
  }
  return out;
}

template <class T>
LossStats loss_and_accuracy(std::span<const T> logits, std::size_t vocab, std::span<const std::int32_t> seq) {
  const auto scores = position_scores(logits, vocab, seq);
  LossStats s;
  double total = 0.0;
  for (const auto& p : scores) {
    total -= p.logprob;
    s.correct += p.correct ? 1 : 0;
  }
  s.tokens = scores.size();
  s.nll = total / static_cast<double>(s.tokens);
  s.accuracy = static_cast<double>(s.correct) / static_cast<double>(s.tokens);
  return s;
}

template <class T>
std::vector<T> loss_gradient(std::span<const T> logits, std::size_t vocab, std::span<const std::int32_t> seq) {
  check_logits(logits, vocab, seq);
  const std::size_t n = seq.size();
  const double inv = 1.0 / static_cast<double>(n - 1);
  std::vector<T> out(logits.size(), T(0));
  for (std::size_t t = 0; t + 1 < n; ++t) {
    const T* row = logits.data() + t * vocab;
    const double lse = row_stats(row, vocab).first;
    for (std::size_t j = 0; j < vocab; ++j) {
      double p = std::exp(static_cast<double>(row[j]) - lse);
      if (j == static_cast<std::size_t>(seq[t + 1])) p -= 1.0;
      out[t * vocab + j] = static_cast<T>(p * inv);
    }
  }
  return out;
}

#define LANGXPAND_INSTANTIATE(T)                                                                                    \
  template ForwardCache<T> forward<T>(const ModelCheckpoint&, std::span<const std::int32_t>);                       \
  template TensorStore backward_from_logits<T>(const ModelCheckpoint&, const ForwardCache<T>&, std::span<const T>); \
  template TensorStore backward<T>(const ModelCheckpoint&, const ForwardCache<T>&);                                 \
  template LossStats loss_and_accuracy<T>(std::span<const T>, std::size_t, std::span<const std::int32_t>);          \
  template std::vector<T> loss_gradient<T>(std::span<const T>, std::size_t, std::span<const std::int32_t>);         \
  template std::vector<PositionScore> position_scores<T>(std::span<const T>, std::size_t, std::span<const std::int32_t>);

LANGXPAND_INSTANTIATE(float)
LANGXPAND_INSTANTIATE(double)

#undef LANGXPAND_INSTANTIATE

}  // namespace langxpand
