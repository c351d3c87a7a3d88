#include "ctxfuse/model.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace ctxfuse {

Variant variant_from_string(const std::string& s) {
  if (s == "full") return Variant::full;
  if (s == "no_provider_baseline") return Variant::no_provider_baseline;
  if (s == "embedding_feed") return Variant::embedding_feed;
  if (s == "linear_feed") return Variant::linear_feed;
  if (s == "drop_enc_attnB") return Variant::drop_enc_attnB;
  if (s == "drop_dec_attnB") return Variant::drop_dec_attnB;
  if (s == "stacked_decoder") return Variant::stacked_decoder;
  throw std::invalid_argument(
      "unknown variant '" + s +
      "' (expected full, no_provider_baseline, embedding_feed, linear_feed, drop_enc_attnB, "
      "drop_dec_attnB, stacked_decoder)");
}

std::string to_string(Variant v) {
  switch (v) {
    case Variant::full: return "full";
    case Variant::no_provider_baseline: return "no_provider_baseline";
    case Variant::embedding_feed: return "embedding_feed";
    case Variant::linear_feed: return "linear_feed";
    case Variant::drop_enc_attnB: return "drop_enc_attnB";
    case Variant::drop_dec_attnB: return "drop_dec_attnB";
    case Variant::stacked_decoder: return "stacked_decoder";
  }
  throw std::logic_error("unreachable variant");
}

void ModelConfig::validate() const {
  if (layers == 0) throw std::invalid_argument("model: needs at least one layer");
  if (d_model % 2 != 0) throw std::invalid_argument("model: d_model must be even");
  if (heads == 0 || d_model % heads != 0)
    throw std::invalid_argument("model: heads must divide d_model");
  if (src_vocab <= static_cast<std::size_t>(tok_id::first_content) ||
      tgt_vocab <= static_cast<std::size_t>(tok_id::first_content))
    throw std::invalid_argument("model: vocabularies must hold the reserved ids plus content");
  if (!(p_net >= 0.0 && p_net <= 1.0))
    throw std::invalid_argument("model: p_net must lie in [0,1]");
  if (!(dropout >= 0.0 && dropout < 1.0))
    throw std::invalid_argument("model: dropout must lie in [0,1)");
  if (linear_feed_literal && variant != Variant::linear_feed)
    throw std::invalid_argument("model: linear_feed_literal only applies to the linear_feed variant");
  if (d_provider == 0) throw std::invalid_argument("model: d_provider must be positive");
}

bool needs_provider(const ModelConfig& cfg) {
  if (cfg.variant == Variant::no_provider_baseline) return false;
  if (cfg.variant == Variant::linear_feed && cfg.linear_feed_literal) return false;
  return true;
}

std::string config_fingerprint(const ModelConfig& cfg) {
  std::ostringstream os;
  os << "layers=" << cfg.layers << ";d_model=" << cfg.d_model << ";d_ff=" << cfg.d_ff
     << ";heads=" << cfg.heads << ";src_vocab=" << cfg.src_vocab << ";tgt_vocab=" << cfg.tgt_vocab
     << ";d_provider=" << cfg.d_provider << ";p_net=" << cfg.p_net
     << ";variant=" << to_string(cfg.variant) << ";attention_scaling=" << cfg.attention_scaling
     << ";dropout=" << cfg.dropout << ";tie_output=" << cfg.tie_output
     << ";linear_feed_literal=" << cfg.linear_feed_literal
     << ";dropnet_shared_draws=" << cfg.dropnet_shared_draws;
  return os.str();
}

namespace {

// Provider rows aligned to the source length: framing rows (leading CLS,
// trailing SEP) are stripped, the rest is truncated or zero-padded to l_x.
// The provider output is frozen, so this is a plain copy.
Tensor aligned_provider_rows(const ProviderOutput& hb, std::size_t l_x) {
  const std::size_t len = hb.h.rows(), d = hb.h.cols();
  const std::size_t content = len >= 2 ? len - 2 : 0;
  Tensor out = Tensor::zeros({l_x, d});
  for (std::size_t i = 0; i < l_x && i < content; ++i)
    for (std::size_t j = 0; j < d; ++j) out.set(i, j, hb.h.at(i + 1, j));
  return out;
}

}  // namespace

FusedModel::FusedModel(ModelConfig cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(derive_seed(seed, "model-init"));
  const std::size_t d = cfg_.d_model;

  if (cfg_.variant == Variant::embedding_feed) {
    src_proj_ = Tensor::zeros({cfg_.d_provider, d}, true);
    xavier_fill(src_proj_, rng, cfg_.d_provider, d);
  } else {
    enc_embed_ = embedding_init(rng, cfg_.src_vocab, d);
  }
  enc_layers_.reserve(cfg_.layers);
  for (std::size_t l = 0; l < cfg_.layers; ++l) {
    EncLayer el;
    el.attn_s = attention_init(rng, d, d, d, cfg_.heads, cfg_.attention_scaling);
    if (enc_has_attn_b())
      el.attn_b = attention_init(rng, d, cfg_.d_provider, d, cfg_.heads, cfg_.attention_scaling);
    if (cfg_.variant == Variant::linear_feed) {
      const std::size_t in = cfg_.linear_feed_literal ? d : cfg_.d_provider;
      el.w_feed = Tensor::zeros({in, d}, true);
      xavier_fill(el.w_feed, rng, in, d);
    }
    el.norm_att = layer_norm_init(d);
    el.ffn = ffn_init(rng, d, cfg_.d_ff);
    el.norm_ffn = layer_norm_init(d);
    enc_layers_.push_back(std::move(el));
  }

  dec_embed_ = embedding_init(rng, cfg_.tgt_vocab, d);
  dec_layers_.reserve(cfg_.layers);
  for (std::size_t l = 0; l < cfg_.layers; ++l) {
    DecLayer dl;
    dl.attn_s = attention_init(rng, d, d, d, cfg_.heads, cfg_.attention_scaling);
    dl.norm_self = layer_norm_init(d);
    if (dec_has_attn_b())
      dl.attn_b = attention_init(rng, d, cfg_.d_provider, d, cfg_.heads, cfg_.attention_scaling);
    dl.attn_e = attention_init(rng, d, d, d, cfg_.heads, cfg_.attention_scaling);
    dl.norm_cross = layer_norm_init(d);
    if (cfg_.variant == Variant::stacked_decoder) dl.norm_fuse_b = layer_norm_init(d);
    dl.ffn = ffn_init(rng, d, cfg_.d_ff);
    dl.norm_ffn = layer_norm_init(d);
    dec_layers_.push_back(std::move(dl));
  }

  if (!cfg_.tie_output) {
    out_w_ = Tensor::zeros({d, cfg_.tgt_vocab}, true);
    xavier_fill(out_w_, rng, d, cfg_.tgt_vocab);
  }
}

bool FusedModel::enc_has_attn_b() const {
  // the sequential decoder arrangement changes only the decoder; its encoder
  // keeps the fused two-branch sublayer
  return cfg_.variant == Variant::full || cfg_.variant == Variant::drop_dec_attnB ||
         cfg_.variant == Variant::stacked_decoder;
}

bool FusedModel::dec_has_attn_b() const {
  return cfg_.variant == Variant::full || cfg_.variant == Variant::drop_enc_attnB ||
         cfg_.variant == Variant::stacked_decoder;
}

void FusedModel::check_provider(const ProviderOutput& hb) const {
  if (!hb.h.defined() || hb.h.rank() != 2)
    throw std::invalid_argument("model: this variant needs provider states");
  if (hb.h.cols() != cfg_.d_provider)
    throw std::invalid_argument("model: provider states are " + std::to_string(hb.h.cols()) +
                                " wide, configured d_provider is " +
                                std::to_string(cfg_.d_provider));
  if (hb.mask.size() != hb.h.rows())
    throw std::invalid_argument("model: provider mask length does not match its states");
}

Tensor FusedModel::maybe_dropout(Tensor x, bool train, Rng* rng) const {
  if (train && cfg_.dropout > 0.0 && rng) return dropout(std::move(x), cfg_.dropout, *rng);
  return x;
}

Tensor FusedModel::source_embedding(const std::vector<int>& src, const ProviderOutput& hb) const {
  if (cfg_.variant == Variant::embedding_feed) {
    Tensor feat = aligned_provider_rows(hb, src.size());
    return add(matmul(feat, src_proj_), sinusoid_rows(0, src.size(), cfg_.d_model));
  }
  return embed_sequence(enc_embed_, src);
}

EncoderState FusedModel::encode(const std::vector<int>& src, const ProviderOutput& hb, bool train,
                                const DropNetSample* dn, Rng* dropout_rng) const {
  if (src.empty()) throw std::invalid_argument("model: empty source sentence");
  if (needs_provider(cfg_)) check_provider(hb);
  if (train && dn && dn->enc_u.size() != cfg_.layers)
    throw std::invalid_argument("model: drop-net sample has " + std::to_string(dn->enc_u.size()) +
                                " encoder draws for " + std::to_string(cfg_.layers) + " layers");
  const std::size_t l_x = src.size();

  EncoderState st;
  Tensor x = maybe_dropout(source_embedding(src, hb), train, dropout_rng);
  st.h.push_back(x);

  std::vector<std::uint8_t> prov_allowed;
  if (enc_has_attn_b()) prov_allowed = key_allowed(l_x, hb.mask);
  Tensor fed;  // aligned provider feature, shared by every layer's feed
  if (cfg_.variant == Variant::linear_feed && !cfg_.linear_feed_literal)
    fed = aligned_provider_rows(hb, l_x);

  for (std::size_t l = 0; l < cfg_.layers; ++l) {
    const EncLayer& el = enc_layers_[l];
    Tensor self_branch = attn_seq(el.attn_s, x, x);
    Tensor comb;
    if (el.attn_b) {
      Tensor provider_branch = attn_seq(*el.attn_b, x, hb.h, prov_allowed);
      comb = (train && dn)
                 ? combine_train(self_branch, provider_branch, dn->enc_u[l], cfg_.p_net)
                 : combine_eval(self_branch, provider_branch);
    } else if (el.w_feed.defined()) {
      Tensor feed_branch = matmul(cfg_.linear_feed_literal ? x : fed, el.w_feed);
      comb = (train && dn) ? combine_train(self_branch, feed_branch, dn->enc_u[l], cfg_.p_net)
                           : combine_eval(self_branch, feed_branch);
    } else {
      comb = self_branch;
    }
    x = layer_norm(el.norm_att, add(x, maybe_dropout(comb, train, dropout_rng)));
    Tensor f = maybe_dropout(ffn(el.ffn, x), train, dropout_rng);
    x = layer_norm(el.norm_ffn, add(x, f));
    st.h.push_back(x);
  }
  return st;
}

Tensor FusedModel::decode_logits(const EncoderState& enc, const ProviderOutput& hb,
                                 const std::vector<int>& tgt_in, bool train,
                                 const DropNetSample* dn, Rng* dropout_rng) const {
  if (tgt_in.empty()) throw std::invalid_argument("model: empty decoder input");
  if (enc.h.empty()) throw std::invalid_argument("model: encoder state is empty");
  if (dec_has_attn_b()) check_provider(hb);
  if (train && dn && dn->dec_u.size() != cfg_.layers)
    throw std::invalid_argument("model: drop-net sample has " + std::to_string(dn->dec_u.size()) +
                                " decoder draws for " + std::to_string(cfg_.layers) + " layers");
  const std::size_t t_len = tgt_in.size();

  Tensor x = maybe_dropout(embed_sequence(dec_embed_, tgt_in), train, dropout_rng);
  const auto causal = causal_allowed(t_len);
  std::vector<std::uint8_t> prov_allowed;
  if (dec_has_attn_b()) prov_allowed = key_allowed(t_len, hb.mask);

  for (std::size_t l = 0; l < cfg_.layers; ++l) {
    const DecLayer& dl = dec_layers_[l];
    Tensor sa = attn_seq(dl.attn_s, x, x, causal);
    x = layer_norm(dl.norm_self, add(x, maybe_dropout(sa, train, dropout_rng)));

    if (dl.norm_fuse_b) {  // sequential arrangement: attn_E then attn_B
      Tensor e = attn_seq(dl.attn_e, x, enc.top());
      x = layer_norm(dl.norm_cross, add(x, maybe_dropout(e, train, dropout_rng)));
      Tensor b = attn_seq(*dl.attn_b, x, hb.h, prov_allowed);
      x = layer_norm(*dl.norm_fuse_b, add(x, maybe_dropout(b, train, dropout_rng)));
    } else if (dl.attn_b) {
      Tensor provider_branch = attn_seq(*dl.attn_b, x, hb.h, prov_allowed);
      Tensor encoder_branch = attn_seq(dl.attn_e, x, enc.top());
      Tensor comb = (train && dn)
                        ? combine_train(provider_branch, encoder_branch, dn->dec_u[l], cfg_.p_net)
                        : combine_eval(provider_branch, encoder_branch);
      x = layer_norm(dl.norm_cross, add(x, maybe_dropout(comb, train, dropout_rng)));
    } else {
      Tensor e = attn_seq(dl.attn_e, x, enc.top());
      x = layer_norm(dl.norm_cross, add(x, maybe_dropout(e, train, dropout_rng)));
    }

    Tensor f = maybe_dropout(ffn(dl.ffn, x), train, dropout_rng);
    x = layer_norm(dl.norm_ffn, add(x, f));
  }
  return cfg_.tie_output ? matmul_nt(x, dec_embed_.table) : matmul(x, out_w_);
}

std::vector<double> FusedModel::next_logprobs(const EncoderState& enc, const ProviderOutput& hb,
                                              const std::vector<int>& prefix) const {
  NoGradGuard ng;
  Tensor logits = decode_logits(enc, hb, prefix);
  const std::size_t v = logits.cols(), last = logits.rows() - 1;
  double mx = logits.at(last, 0);
  for (std::size_t j = 1; j < v; ++j) mx = std::max(mx, logits.at(last, j));
  double z = 0.0;
  for (std::size_t j = 0; j < v; ++j) z += std::exp(logits.at(last, j) - mx);
  const double lse = mx + std::log(z);
  std::vector<double> lp(v);
  for (std::size_t j = 0; j < v; ++j) lp[j] = logits.at(last, j) - lse;
  return lp;
}

NamedParams FusedModel::named_params() const {
  NamedParams out;
  if (cfg_.variant == Variant::embedding_feed)
    out.emplace_back("enc.src_proj", src_proj_);
  else
    enc_embed_.collect("enc.embed", out);
  for (std::size_t l = 0; l < enc_layers_.size(); ++l) {
    const std::string p = "enc.l" + std::to_string(l);
    const EncLayer& el = enc_layers_[l];
    el.attn_s.collect(p + ".attn_s", out);
    if (el.attn_b) el.attn_b->collect(p + ".attn_b", out);
    if (el.w_feed.defined()) out.emplace_back(p + ".w_feed", el.w_feed);
    el.norm_att.collect(p + ".norm_att", out);
    el.ffn.collect(p + ".ffn", out);
    el.norm_ffn.collect(p + ".norm_ffn", out);
  }
  dec_embed_.collect("dec.embed", out);
  for (std::size_t l = 0; l < dec_layers_.size(); ++l) {
    const std::string p = "dec.l" + std::to_string(l);
    const DecLayer& dl = dec_layers_[l];
    dl.attn_s.collect(p + ".attn_s", out);
    dl.norm_self.collect(p + ".norm_self", out);
    if (dl.attn_b) dl.attn_b->collect(p + ".attn_b", out);
    dl.attn_e.collect(p + ".attn_e", out);
    dl.norm_cross.collect(p + ".norm_cross", out);
    if (dl.norm_fuse_b) dl.norm_fuse_b->collect(p + ".norm_fuse_b", out);
    dl.ffn.collect(p + ".ffn", out);
    dl.norm_ffn.collect(p + ".norm_ffn", out);
  }
  if (out_w_.defined()) out.emplace_back("dec.out.w", out_w_);
  return out;
}

namespace {

bool is_fusion_name(const std::string& name) {
  return name.find(".attn_b") != std::string::npos ||
         name.find(".w_feed") != std::string::npos ||
         name.find("src_proj") != std::string::npos ||
         name.find(".norm_fuse_b") != std::string::npos;
}

}  // namespace

NamedParams FusedModel::fusion_params() const {
  NamedParams out;
  for (auto& np : named_params())
    if (is_fusion_name(np.first)) out.push_back(np);
  return out;
}

NamedParams FusedModel::shared_params() const {
  NamedParams out;
  for (auto& np : named_params())
    if (!is_fusion_name(np.first)) out.push_back(np);
  return out;
}

}  // namespace ctxfuse
