#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "ctxfuse/rng.hpp"
#include "ctxfuse/tensor.hpp"

namespace ctxfuse {

// Named views of every learnable tensor in a block, in a stable order.
// Checkpoints, the optimizer, and cross-run parameter copying all key off
// these names, so prefixes must stay stable across model variants.
using NamedParams = std::vector<std::pair<std::string, Tensor>>;

void xavier_fill(Tensor& t, Rng& rng, std::size_t fan_in, std::size_t fan_out);

// ---- attention -----------------------------------------------------------
//
// attn(q, K, V) = sum_i alpha_i (v_i W_v) with alpha = softmax over
// (q W_q)·(k_i W_k). There is deliberately no output projection: the head
// outputs are just concatenated, so d_att must equal the residual width.
// With `scale` on, scores are divided by sqrt(d_head) before the softmax.
struct AttentionParams {
  Tensor wq;  // [d_q_in × d_att]
  Tensor wk;  // [d_kv_in × d_att]
  Tensor wv;  // [d_kv_in × d_att]
  std::size_t heads = 1;
  bool scale = false;

  void collect(const std::string& prefix, NamedParams& out) const;
};

AttentionParams attention_init(Rng& rng, std::size_t d_q_in, std::size_t d_kv_in,
                               std::size_t d_att, std::size_t heads, bool scale);

// queries: one row per query position; keys_values: one row per attended
// position. allowed is empty (everything attends to everything) or a
// rows(queries) × rows(keys_values) 0/1 matrix; a query row must keep at
// least one allowed position.
Tensor attn_seq(const AttentionParams& p, Tensor queries, Tensor keys_values,
                const std::vector<std::uint8_t>& allowed = {});

// allowed[i][j] = 1 iff j <= i (each position sees itself and the past)
std::vector<std::uint8_t> causal_allowed(std::size_t n);
// replicate per-key flags across query rows
std::vector<std::uint8_t> key_allowed(std::size_t queries, const std::vector<std::uint8_t>& keys);
// element-wise AND of two masks of identical size
std::vector<std::uint8_t> mask_and(const std::vector<std::uint8_t>& a,
                                   const std::vector<std::uint8_t>& b);

// ---- position-wise feed-forward ------------------------------------------
//
// ffn(x) = max(x W1 + b1, 0) W2 + b2, applied to each row independently.
struct FfnParams {
  Tensor w1;  // [d × d_ff]
  Tensor b1;  // [d_ff]
  Tensor w2;  // [d_ff × d]
  Tensor b2;  // [d]

  void collect(const std::string& prefix, NamedParams& out) const;
};

FfnParams ffn_init(Rng& rng, std::size_t d, std::size_t d_ff);
Tensor ffn(const FfnParams& p, Tensor x);

// ---- layer normalization --------------------------------------------------

struct LayerNormParams {
  Tensor gain;  // [d]
  Tensor bias;  // [d]

  void collect(const std::string& prefix, NamedParams& out) const;
};

LayerNormParams layer_norm_init(std::size_t d);
Tensor layer_norm(const LayerNormParams& p, Tensor x);

// ---- token embedding with sinusoidal positions ----------------------------

// [len × d] position signal starting at `offset`; row p has
// sin(p / 10000^(2i/d)) in even columns and cos of the same angle in odd
// columns. Untracked constant, d must be even.
Tensor sinusoid_rows(std::size_t offset, std::size_t len, std::size_t d);

struct EmbeddingParams {
  Tensor table;  // [vocab × d]

  void collect(const std::string& prefix, NamedParams& out) const;
};

EmbeddingParams embedding_init(Rng& rng, std::size_t vocab, std::size_t d);
// rows looked up by id, plus the position signal starting at `offset`
Tensor embed_sequence(const EmbeddingParams& p, const std::vector<int>& ids,
                      std::size_t offset = 0);

}  // namespace ctxfuse
