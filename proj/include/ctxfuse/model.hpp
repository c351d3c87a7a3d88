#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ctxfuse/dropnet.hpp"
#include "ctxfuse/nn.hpp"
#include "ctxfuse/provider.hpp"
#include "ctxfuse/tensor.hpp"
#include "ctxfuse/tokens.hpp"

namespace ctxfuse {

// Wiring variants. `full` fuses the provider into every encoder and decoder
// layer through dedicated attention modules; the others reproduce the
// comparison points: a plain Transformer, feeding provider states as
// embeddings, a per-layer linear feed instead of attention, removal of the
// encoder- or decoder-side provider attention, and the sequential
// (non-averaged) decoder arrangement.
enum class Variant {
  full,
  no_provider_baseline,
  embedding_feed,
  linear_feed,
  drop_enc_attnB,
  drop_dec_attnB,
  stacked_decoder,
};

Variant variant_from_string(const std::string& s);
std::string to_string(Variant v);

struct ModelConfig {
  std::size_t layers = 2;  // depth of both stacks
  std::size_t d_model = 32;
  std::size_t d_ff = 64;
  std::size_t heads = 4;
  std::size_t src_vocab = 0;
  std::size_t tgt_vocab = 0;
  std::size_t d_provider = 32;  // width of the frozen provider states
  double p_net = 1.0;
  Variant variant = Variant::full;
  bool attention_scaling = true;  // divide scores by sqrt(d_head)
  double dropout = 0.3;           // activation dropout in train mode
  bool tie_output = false;        // share target embedding with output projection
  // read the per-layer linear feed literally (transform the layer's own
  // hidden state) instead of transforming the aligned provider feature
  bool linear_feed_literal = false;
  bool dropnet_shared_draws = false;  // decoder reuses encoder layer draws

  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

// true when forward passes read provider states under this config
bool needs_provider(const ModelConfig& cfg);

// stable textual identity of a config; checkpoints store it and refuse to
// load into a model built differently
std::string config_fingerprint(const ModelConfig& cfg);

struct EncoderState {
  std::vector<Tensor> h;  // h[0] = embedding output, h[L] = final layer

  const Tensor& top() const { return h.back(); }
};

class FusedModel {
 public:
  FusedModel(ModelConfig cfg, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }

  // One source sentence. In train mode, a drop-net sample switches the
  // two-branch sublayers and dropout_rng drives activation dropout; eval
  // mode (or a missing sample/rng) computes the deterministic expectation.
  EncoderState encode(const std::vector<int>& src, const ProviderOutput& hb, bool train = false,
                      const DropNetSample* dn = nullptr, Rng* dropout_rng = nullptr) const;

  // Teacher-forced causal logits, one row per position of tgt_in (which
  // starts with BOS). Row t depends only on tgt_in[0..t].
  Tensor decode_logits(const EncoderState& enc, const ProviderOutput& hb,
                       const std::vector<int>& tgt_in, bool train = false,
                       const DropNetSample* dn = nullptr, Rng* dropout_rng = nullptr) const;

  // eval-mode log-probabilities of the token following the prefix
  std::vector<double> next_logprobs(const EncoderState& enc, const ProviderOutput& hb,
                                    const std::vector<int>& prefix) const;

  // every trainable parameter of the translation module (never the provider)
  NamedParams named_params() const;
  // the modules absent from a plain Transformer: provider attentions,
  // per-layer feed matrices, the embedding projection, their norms
  NamedParams fusion_params() const;
  // named_params minus fusion_params: the set a warm start copies by name
  NamedParams shared_params() const;

 private:
  struct EncLayer {
    AttentionParams attn_s;
    std::optional<AttentionParams> attn_b;
    Tensor w_feed;  // linear_feed only
    LayerNormParams norm_att;
    FfnParams ffn;
    LayerNormParams norm_ffn;
  };
  struct DecLayer {
    AttentionParams attn_s;
    LayerNormParams norm_self;
    std::optional<AttentionParams> attn_b;
    AttentionParams attn_e;
    LayerNormParams norm_cross;
    std::optional<LayerNormParams> norm_fuse_b;  // stacked arrangement only
    FfnParams ffn;
    LayerNormParams norm_ffn;
  };

  bool enc_has_attn_b() const;
  bool dec_has_attn_b() const;
  Tensor source_embedding(const std::vector<int>& src, const ProviderOutput& hb) const;
  void check_provider(const ProviderOutput& hb) const;
  Tensor maybe_dropout(Tensor x, bool train, Rng* rng) const;

  ModelConfig cfg_;
  EmbeddingParams enc_embed_;  // absent under embedding_feed
  Tensor src_proj_;            // embedding_feed only: [d_provider × d_model]
  std::vector<EncLayer> enc_layers_;
  EmbeddingParams dec_embed_;
  std::vector<DecLayer> dec_layers_;
  Tensor out_w_;  // [d_model × tgt_vocab], absent when tied
};

}  // namespace ctxfuse
