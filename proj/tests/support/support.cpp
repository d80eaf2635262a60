#include "support.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <fstream>
#include <functional>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "langxpand/random.hpp"
#include "langxpand/text.hpp"

namespace langxpand::testing {

std::filesystem::path fixture(const std::string& name) { return std::filesystem::path(LANGXPAND_FIXTURE_DIR) / name; }

TempDir::TempDir() {
  std::string tmpl = (std::filesystem::temp_directory_path() / "langxpand-test-XXXXXX").string();
  if (!mkdtemp(tmpl.data())) throw std::runtime_error("mkdtemp failed");
  path_ = tmpl;
}

TempDir::~TempDir() {
  std::error_code ec;
  std::filesystem::remove_all(path_, ec);
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<Document> fixture_docs(const std::string& source) {
  std::vector<Document> out;
  for (auto& d : read_corpus(fixture("mini.jsonl")).docs) {
    if (d.source == source) out.push_back(std::move(d));
  }
  return out;
}

ModelCheckpoint random_checkpoint(const TinyLMConfig& cfg, std::uint64_t seed, double init_std) {
  auto ckpt = init_checkpoint(cfg, seed, DType::F64, init_std);
  Rng rng(seed ^ 0x5eed);
  for (auto& [name, t] : ckpt.tensors) {
    if (t.shape().size() != 1) continue;
    for (std::size_t i = 0; i < t.numel(); ++i) t.set(i, 1.0 + 0.2 * rng.normal());
  }
  return ckpt;
}

namespace {

using Mat = std::vector<std::vector<double>>;

Mat load(const ModelCheckpoint& ckpt, const std::string& name) {
  const Tensor& t = require_tensor(ckpt.tensors, name);
  Mat m(t.rows(), std::vector<double>(t.cols()));
  for (std::size_t r = 0; r < t.rows(); ++r) {
    for (std::size_t c = 0; c < t.cols(); ++c) m[r][c] = t.get(r * t.cols() + c);
  }
  return m;
}

std::vector<double> load_vec(const ModelCheckpoint& ckpt, const std::string& name) {
  return require_tensor(ckpt.tensors, name).to_f64();
}

std::vector<double> matvec(const Mat& w, const std::vector<double>& x) {
  std::vector<double> y(w.size(), 0.0);
  for (std::size_t r = 0; r < w.size(); ++r) {
    for (std::size_t c = 0; c < x.size(); ++c) y[r] += w[r][c] * x[c];
  }
  return y;
}

std::vector<double> rms(const std::vector<double>& x, const std::vector<double>& g, double eps) {
  double ms = 0.0;
  for (double v : x) ms += v * v;
  ms /= static_cast<double>(x.size());
  std::vector<double> y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] / std::sqrt(ms + eps) * g[i];
  return y;
}

// Rotates consecutive pairs (2i, 2i+1) as complex numbers.
void rotate(std::vector<double>& v, std::size_t offset, std::size_t hd, std::size_t pos, double theta) {
  for (std::size_t i = 0; i < hd / 2; ++i) {
    const double angle = static_cast<double>(pos) * std::pow(theta, -2.0 * static_cast<double>(i) / static_cast<double>(hd));
    const std::complex<double> z(v[offset + 2 * i], v[offset + 2 * i + 1]);
    const std::complex<double> r = z * std::polar(1.0, angle);
    v[offset + 2 * i] = r.real();
    v[offset + 2 * i + 1] = r.imag();
  }
}

}  // namespace

std::vector<double> reference_logits(const ModelCheckpoint& ckpt, const std::vector<std::int32_t>& ids) {
  const auto& c = ckpt.config;
  const std::size_t T = ids.size(), H = c.hidden, hd = H / c.heads, rep = c.heads / c.kv_heads;
  const Mat emb = load(ckpt, kEmbeddingName);
  std::vector<std::vector<double>> x(T);
  for (std::size_t t = 0; t < T; ++t) x[t] = emb[static_cast<std::size_t>(ids[t])];

  for (std::size_t l = 0; l < c.layers; ++l) {
    const std::string p = "layers." + std::to_string(l) + ".";
    const Mat wq = load(ckpt, p + "attention.wq.weight"), wk = load(ckpt, p + "attention.wk.weight"),
              wv = load(ckpt, p + "attention.wv.weight"), wo = load(ckpt, p + "attention.wo.weight");
    const Mat w1 = load(ckpt, p + "feed_forward.w1.weight"), w2 = load(ckpt, p + "feed_forward.w2.weight"),
              w3 = load(ckpt, p + "feed_forward.w3.weight");
    const auto g1 = load_vec(ckpt, p + "attention_norm.weight"), g2 = load_vec(ckpt, p + "ffn_norm.weight");

    std::vector<std::vector<double>> q(T), k(T), v(T);
    for (std::size_t t = 0; t < T; ++t) {
      const auto n1 = rms(x[t], g1, c.norm_eps);
      q[t] = matvec(wq, n1);
      const auto kk = matvec(wk, n1), vv = matvec(wv, n1);
      // Repeat each K/V head for its query group, as a plain MHA would see it.
      k[t].resize(c.heads * hd);
      v[t].resize(c.heads * hd);
      for (std::size_t h = 0; h < c.heads; ++h) {
        for (std::size_t d = 0; d < hd; ++d) {
          k[t][h * hd + d] = kk[(h / rep) * hd + d];
          v[t][h * hd + d] = vv[(h / rep) * hd + d];
        }
      }
      for (std::size_t h = 0; h < c.heads; ++h) {
        rotate(q[t], h * hd, hd, t, c.rope_theta);
        rotate(k[t], h * hd, hd, t, c.rope_theta);
      }
    }
    std::vector<std::vector<double>> next(T);
    for (std::size_t t = 0; t < T; ++t) {
      std::vector<double> attn(c.heads * hd, 0.0);
      for (std::size_t h = 0; h < c.heads; ++h) {
        std::vector<double> s;
        std::vector<std::size_t> us;
        for (std::size_t u = 0; u <= t; ++u) {
          if (t - u >= c.window) continue;
          double dot = 0.0;
          for (std::size_t d = 0; d < hd; ++d) dot += q[t][h * hd + d] * k[u][h * hd + d];
          s.push_back(dot / std::sqrt(static_cast<double>(hd)));
          us.push_back(u);
        }
        const double m = *std::max_element(s.begin(), s.end());
        double z = 0.0;
        for (double& e : s) z += (e = std::exp(e - m));
        for (std::size_t j = 0; j < s.size(); ++j) {
          for (std::size_t d = 0; d < hd; ++d) attn[h * hd + d] += s[j] / z * v[us[j]][h * hd + d];
        }
      }
      auto y = matvec(wo, attn);
      for (std::size_t i = 0; i < H; ++i) y[i] += x[t][i];
      const auto n2 = rms(y, g2, c.norm_eps);
      const auto a = matvec(w1, n2), b = matvec(w3, n2);
      std::vector<double> gate(a.size());
      for (std::size_t i = 0; i < a.size(); ++i) gate[i] = a[i] / (1.0 + std::exp(-a[i])) * b[i];
      const auto f = matvec(w2, gate);
      for (std::size_t i = 0; i < H; ++i) y[i] += f[i];
      next[t] = y;
    }
    x = next;
  }
  const auto gf = load_vec(ckpt, "norm.weight");
  const Mat head = load(ckpt, kHeadName);
  std::vector<double> logits;
  for (std::size_t t = 0; t < T; ++t) {
    const auto z = matvec(head, rms(x[t], gf, c.norm_eps));
    logits.insert(logits.end(), z.begin(), z.end());
  }
  return logits;
}

double reference_nll(const std::vector<double>& logits, std::size_t vocab, const std::vector<std::int32_t>& ids) {
  double total = 0.0;
  for (std::size_t t = 0; t + 1 < ids.size(); ++t) {
    const double* z = logits.data() + t * vocab;
    const double m = *std::max_element(z, z + vocab);
    double s = 0.0;
    for (std::size_t j = 0; j < vocab; ++j) s += std::exp(z[j] - m);
    total += m + std::log(s) - z[ids[t + 1]];
  }
  return total / static_cast<double>(ids.size() - 1);
}

std::vector<std::int32_t> exhaustive_encode(const TokenizerModel& model, const std::string& raw) {
  const std::string s = " " + raw;
  const auto cps = text::decode(s);
  std::vector<std::size_t> bounds;
  for (const auto& cp : cps) bounds.push_back(cp.offset);
  bounds.push_back(s.size());

  struct Seg {
    std::size_t begin, end;
    std::int32_t id;  // -1: unknown character
  };
  struct Best {
    bool found = false;
    double score = 0.0;
    std::size_t tokens = 0;
    std::vector<std::size_t> ends;
    std::vector<Seg> segs;
  } best;

  std::vector<Seg> path;
  std::function<void(std::size_t)> walk = [&](std::size_t bi) {
    if (bi + 1 == bounds.size()) {
      // Sum right to left, the order the encoder accumulates in.
      double score = 0.0;
      std::size_t tokens = 0;
      std::vector<std::size_t> ends;
      for (auto it = path.rbegin(); it != path.rend(); ++it) {
        score = (it->id >= 0 ? model.piece(it->id).score : model.unknown_score()) + score;
        tokens += it->id >= 0 ? 1 : (model.byte_fallback() ? it->end - it->begin : 1);
      }
      for (const auto& sg : path) ends.push_back(sg.end);
      bool better = !best.found || score > best.score ||
                    (score == best.score && (tokens < best.tokens || (tokens == best.tokens && ends > best.ends)));
      if (better) best = {true, score, tokens, ends, path};
      return;
    }
    const std::size_t b = bounds[bi];
    bool single = false;
    for (std::size_t bj = bi + 1; bj < bounds.size(); ++bj) {
      const std::string surface = s.substr(b, bounds[bj] - b);
      const auto id = model.find(space_to_marker(surface));
      if (id && model.piece(*id).kind == PieceKind::Normal) {
        if (bj == bi + 1) single = true;
        path.push_back({b, bounds[bj], *id});
        walk(bj);
        path.pop_back();
      }
    }
    if (!single) {
      path.push_back({b, bounds[bi + 1], -1});
      walk(bi + 1);
      path.pop_back();
    }
  };
  walk(0);

  std::vector<std::int32_t> ids;
  for (const auto& sg : best.segs) {
    if (sg.id >= 0) {
      ids.push_back(sg.id);
    } else if (model.byte_fallback()) {
      for (std::size_t k = sg.begin; k < sg.end; ++k) ids.push_back(model.byte_id(static_cast<unsigned char>(s[k])));
    } else {
      ids.push_back(model.specials().unk);
    }
  }
  return ids;
}

std::vector<Document> synthetic_corpus(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<std::string> lexicon;
  const std::string letters = "abcdeghiklmnopqrstuvxy";
  for (int i = 0; i < 4000; ++i) {
    std::string w;
    const auto len = 2 + rng.below(6);
    for (std::uint64_t j = 0; j < len; ++j) w += letters[rng.below(letters.size())];
    lexicon.push_back(w);
  }
  std::vector<Document> docs;
  auto add = [&](std::string text) {
    char id[32];
    std::snprintf(id, sizeof id, "s-%06zu", docs.size());
    docs.push_back({id, std::move(text), "synthetic"});
  };
  while (docs.size() < n) {
    const auto r = rng.uniform();
    if (docs.size() > 10 && r < 0.08) {
      add(docs[rng.below(docs.size())].text);
    } else if (docs.size() > 10 && r < 0.12) {
      auto words = text::split_words(docs[rng.below(docs.size())].text);
      words[rng.below(words.size())] = lexicon[rng.below(lexicon.size())];
      std::string t;
      for (const auto& w : words) t += (t.empty() ? "" : " ") + w;
      add(t);
    } else {
      std::string t;
      const auto len = 60 + rng.below(80);
      for (std::uint64_t j = 0; j < len; ++j) t += (j ? " " : "") + lexicon[rng.below(lexicon.size())];
      add(t);
    }
  }
  return docs;
}

}  // namespace langxpand::testing
