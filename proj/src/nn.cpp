#include "ctxfuse/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace ctxfuse {

void xavier_fill(Tensor& t, Rng& rng, std::size_t fan_in, std::size_t fan_out) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (std::size_t i = 0; i < t.size(); ++i) t.data()[i] = rng.uniform_sym(limit);
}

// ---- attention -----------------------------------------------------------

void AttentionParams::collect(const std::string& prefix, NamedParams& out) const {
  out.emplace_back(prefix + ".wq", wq);
  out.emplace_back(prefix + ".wk", wk);
  out.emplace_back(prefix + ".wv", wv);
}

AttentionParams attention_init(Rng& rng, std::size_t d_q_in, std::size_t d_kv_in,
                               std::size_t d_att, std::size_t heads, bool scale) {
  if (heads == 0 || d_att % heads != 0)
    throw std::invalid_argument("attention: " + std::to_string(heads) + " heads must divide d_att " +
                                std::to_string(d_att));
  AttentionParams p;
  p.wq = Tensor::zeros({d_q_in, d_att}, true);
  p.wk = Tensor::zeros({d_kv_in, d_att}, true);
  p.wv = Tensor::zeros({d_kv_in, d_att}, true);
  xavier_fill(p.wq, rng, d_q_in, d_att);
  xavier_fill(p.wk, rng, d_kv_in, d_att);
  xavier_fill(p.wv, rng, d_kv_in, d_att);
  p.heads = heads;
  p.scale = scale;
  return p;
}

Tensor attn_seq(const AttentionParams& p, Tensor queries, Tensor keys_values,
                const std::vector<std::uint8_t>& allowed) {
  const std::size_t m = queries.rows(), n = keys_values.rows();
  if (!allowed.empty() && allowed.size() != m * n)
    throw std::invalid_argument("attention: mask of " + std::to_string(allowed.size()) +
                                " flags for " + std::to_string(m) + "x" + std::to_string(n) +
                                " scores");
  Tensor q = matmul(queries, p.wq);
  Tensor k = matmul(keys_values, p.wk);
  Tensor v = matmul(keys_values, p.wv);
  const std::size_t d_att = q.cols(), dh = d_att / p.heads;
  std::vector<Tensor> heads_out;
  heads_out.reserve(p.heads);
  for (std::size_t h = 0; h < p.heads; ++h) {
    Tensor qh = p.heads == 1 ? q : slice_cols(q, h * dh, (h + 1) * dh);
    Tensor kh = p.heads == 1 ? k : slice_cols(k, h * dh, (h + 1) * dh);
    Tensor vh = p.heads == 1 ? v : slice_cols(v, h * dh, (h + 1) * dh);
    Tensor scores = matmul_nt(qh, kh);
    if (p.scale) scores = scale(scores, 1.0 / std::sqrt(static_cast<double>(dh)));
    Tensor alpha = softmax_rows(scores, allowed);
    heads_out.push_back(matmul(alpha, vh));
  }
  return p.heads == 1 ? heads_out[0] : concat_cols(heads_out);
}

std::vector<std::uint8_t> causal_allowed(std::size_t n) {
  std::vector<std::uint8_t> m(n * n, 0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j <= i; ++j) m[i * n + j] = 1;
  return m;
}

std::vector<std::uint8_t> key_allowed(std::size_t queries, const std::vector<std::uint8_t>& keys) {
  std::vector<std::uint8_t> m(queries * keys.size());
  for (std::size_t i = 0; i < queries; ++i)
    for (std::size_t j = 0; j < keys.size(); ++j) m[i * keys.size() + j] = keys[j];
  return m;
}

std::vector<std::uint8_t> mask_and(const std::vector<std::uint8_t>& a,
                                   const std::vector<std::uint8_t>& b) {
  if (a.size() != b.size()) throw std::invalid_argument("mask_and: size mismatch");
  std::vector<std::uint8_t> m(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) m[i] = a[i] && b[i];
  return m;
}

// ---- position-wise feed-forward ------------------------------------------

void FfnParams::collect(const std::string& prefix, NamedParams& out) const {
  out.emplace_back(prefix + ".w1", w1);
  out.emplace_back(prefix + ".b1", b1);
  out.emplace_back(prefix + ".w2", w2);
  out.emplace_back(prefix + ".b2", b2);
}

FfnParams ffn_init(Rng& rng, std::size_t d, std::size_t d_ff) {
  FfnParams p;
  p.w1 = Tensor::zeros({d, d_ff}, true);
  p.b1 = Tensor::zeros({d_ff}, true);
  p.w2 = Tensor::zeros({d_ff, d}, true);
  p.b2 = Tensor::zeros({d}, true);
  xavier_fill(p.w1, rng, d, d_ff);
  xavier_fill(p.w2, rng, d_ff, d);
  return p;
}

Tensor ffn(const FfnParams& p, Tensor x) {
  Tensor hidden = relu(add_rowvec(matmul(x, p.w1), p.b1));
  return add_rowvec(matmul(hidden, p.w2), p.b2);
}

// ---- layer normalization --------------------------------------------------

void LayerNormParams::collect(const std::string& prefix, NamedParams& out) const {
  out.emplace_back(prefix + ".gain", gain);
  out.emplace_back(prefix + ".bias", bias);
}

LayerNormParams layer_norm_init(std::size_t d) {
  LayerNormParams p;
  p.gain = Tensor::full({d}, 1.0, true);
  p.bias = Tensor::zeros({d}, true);
  return p;
}

Tensor layer_norm(const LayerNormParams& p, Tensor x) {
  return layer_norm_rows(x, p.gain, p.bias);
}

// ---- token embedding with sinusoidal positions ----------------------------

Tensor sinusoid_rows(std::size_t offset, std::size_t len, std::size_t d) {
  if (d % 2 != 0)
    throw std::invalid_argument("position signal needs an even width, got " + std::to_string(d));
  Tensor out = Tensor::zeros({len, d});
  for (std::size_t r = 0; r < len; ++r) {
    const double pos = static_cast<double>(offset + r);
    for (std::size_t i = 0; i < d / 2; ++i) {
      const double angle = pos / std::pow(10000.0, 2.0 * static_cast<double>(i) /
                                                       static_cast<double>(d));
      out.data()[r * d + 2 * i] = std::sin(angle);
      out.data()[r * d + 2 * i + 1] = std::cos(angle);
    }
  }
  return out;
}

void EmbeddingParams::collect(const std::string& prefix, NamedParams& out) const {
  out.emplace_back(prefix + ".table", table);
}

EmbeddingParams embedding_init(Rng& rng, std::size_t vocab, std::size_t d) {
  EmbeddingParams p;
  p.table = Tensor::zeros({vocab, d}, true);
  // scaled-down normal keeps the position signal visible next to the tokens
  for (std::size_t i = 0; i < p.table.size(); ++i) p.table.data()[i] = rng.normal() * 0.1;
  return p;
}

Tensor embed_sequence(const EmbeddingParams& p, const std::vector<int>& ids, std::size_t offset) {
  Tensor tok = embed_rows(p.table, ids);
  return add(tok, sinusoid_rows(offset, ids.size(), tok.cols()));
}

}  // namespace ctxfuse
