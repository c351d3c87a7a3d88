#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "ctxfuse/dropnet.hpp"
#include "ctxfuse/grad_check.hpp"
#include "ctxfuse/model.hpp"
#include "ctxfuse/rng.hpp"
#include "ctxfuse/tensor.hpp"
#include "ctxfuse/tokens.hpp"
#include "doctest.h"

using namespace ctxfuse;

// ---------------------------------------------------------------------------
// Independent oracle: the layer equations recomputed with plain loops over
// std::vector, reading the model's weights by name. No Tensor ops involved.
// ---------------------------------------------------------------------------

namespace {

using Mat = std::vector<std::vector<double>>;

Mat to_mat(const Tensor& t) {
  Mat m(t.rows(), std::vector<double>(t.cols()));
  for (std::size_t i = 0; i < t.rows(); ++i)
    for (std::size_t j = 0; j < t.cols(); ++j) m[i][j] = t.at(i, j);
  return m;
}

std::vector<double> to_vec(const Tensor& t) {
  std::vector<double> v(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) v[i] = t.at(i);
  return v;
}

std::map<std::string, Tensor> by_name(const NamedParams& ps) {
  std::map<std::string, Tensor> m;
  for (const auto& [n, t] : ps) m.emplace(n, t);
  return m;
}

Mat embed_oracle(const Mat& table, const std::vector<int>& ids) {
  const std::size_t d = table[0].size();
  Mat out(ids.size(), std::vector<double>(d));
  for (std::size_t r = 0; r < ids.size(); ++r) {
    const double pos = static_cast<double>(r);
    for (std::size_t i = 0; i < d / 2; ++i) {
      const double angle =
          pos / std::pow(10000.0, 2.0 * static_cast<double>(i) / static_cast<double>(d));
      out[r][2 * i] = table[static_cast<std::size_t>(ids[r])][2 * i] + std::sin(angle);
      out[r][2 * i + 1] = table[static_cast<std::size_t>(ids[r])][2 * i + 1] + std::cos(angle);
    }
  }
  return out;
}

Mat matmul_oracle(const Mat& a, const Mat& b) {
  Mat c(a.size(), std::vector<double>(b[0].size(), 0.0));
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < b[0].size(); ++j)
      for (std::size_t k = 0; k < b.size(); ++k) c[i][j] += a[i][k] * b[k][j];
  return c;
}

// multi-head attention, explicit loops; allowed is empty or rows(q)*rows(kv)
Mat attn_oracle(const Mat& q_in, const Mat& kv_in, const Mat& wq, const Mat& wk, const Mat& wv,
                std::size_t heads, bool scale, const std::vector<std::uint8_t>& allowed) {
  const Mat q = matmul_oracle(q_in, wq);
  const Mat k = matmul_oracle(kv_in, wk);
  const Mat v = matmul_oracle(kv_in, wv);
  const std::size_t m = q.size(), n = k.size(), d_att = q[0].size(), dh = d_att / heads;
  Mat out(m, std::vector<double>(d_att, 0.0));
  for (std::size_t h = 0; h < heads; ++h) {
    for (std::size_t i = 0; i < m; ++i) {
      std::vector<double> score(n, 0.0);
      double mx = -1e300;
      for (std::size_t j = 0; j < n; ++j) {
        if (!allowed.empty() && !allowed[i * n + j]) continue;
        for (std::size_t c = 0; c < dh; ++c) score[j] += q[i][h * dh + c] * k[j][h * dh + c];
        if (scale) score[j] /= std::sqrt(static_cast<double>(dh));
        mx = std::max(mx, score[j]);
      }
      double z = 0.0;
      for (std::size_t j = 0; j < n; ++j)
        if (allowed.empty() || allowed[i * n + j]) z += std::exp(score[j] - mx);
      for (std::size_t j = 0; j < n; ++j) {
        if (!allowed.empty() && !allowed[i * n + j]) continue;
        const double alpha = std::exp(score[j] - mx) / z;
        for (std::size_t c = 0; c < dh; ++c) out[i][h * dh + c] += alpha * v[j][h * dh + c];
      }
    }
  }
  return out;
}

Mat layer_norm_oracle(const Mat& x, const std::vector<double>& gain,
                      const std::vector<double>& bias, double eps = 1e-5) {
  const std::size_t d = x[0].size();
  Mat out(x.size(), std::vector<double>(d));
  for (std::size_t r = 0; r < x.size(); ++r) {
    double mean = 0.0;
    for (double v : x[r]) mean += v;
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (double v : x[r]) var += (v - mean) * (v - mean);
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < d; ++c) out[r][c] = gain[c] * (x[r][c] - mean) * is + bias[c];
  }
  return out;
}

Mat ffn_oracle(const Mat& x, const Mat& w1, const std::vector<double>& b1, const Mat& w2,
               const std::vector<double>& b2) {
  Mat h = matmul_oracle(x, w1);
  for (auto& row : h)
    for (std::size_t c = 0; c < row.size(); ++c) row[c] = std::max(row[c] + b1[c], 0.0);
  Mat y = matmul_oracle(h, w2);
  for (auto& row : y)
    for (std::size_t c = 0; c < row.size(); ++c) row[c] += b2[c];
  return y;
}

Mat add_mat(const Mat& a, const Mat& b) {
  Mat c = a;
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < a[0].size(); ++j) c[i][j] += b[i][j];
  return c;
}

Mat avg_mat(const Mat& a, const Mat& b) {
  Mat c = a;
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < a[0].size(); ++j) c[i][j] = 0.5 * (a[i][j] + b[i][j]);
  return c;
}

std::vector<std::uint8_t> causal_mask(std::size_t n) {
  std::vector<std::uint8_t> m(n * n, 0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j <= i; ++j) m[i * n + j] = 1;
  return m;
}

std::vector<std::uint8_t> per_key(std::size_t rows, const std::vector<std::uint8_t>& keys) {
  std::vector<std::uint8_t> m;
  for (std::size_t r = 0; r < rows; ++r) m.insert(m.end(), keys.begin(), keys.end());
  return m;
}

void check_close(const Tensor& got, const Mat& want, double tol = 1e-10) {
  REQUIRE(got.rows() == want.size());
  REQUIRE(got.cols() == want[0].size());
  for (std::size_t i = 0; i < want.size(); ++i)
    for (std::size_t j = 0; j < want[0].size(); ++j)
      CHECK(got.at(i, j) == doctest::Approx(want[i][j]).epsilon(tol));
}

// the tiny instance every oracle test uses
ModelConfig tiny_config(Variant v) {
  ModelConfig cfg;
  cfg.layers = 1;
  cfg.d_model = 2;
  cfg.d_ff = 2;
  cfg.heads = 1;
  cfg.src_vocab = 6;
  cfg.tgt_vocab = 7;
  cfg.d_provider = 3;
  cfg.p_net = 1.0;
  cfg.variant = v;
  cfg.attention_scaling = false;
  cfg.dropout = 0.0;
  return cfg;
}

ProviderOutput tiny_provider() {
  ProviderOutput hb;
  hb.h = Tensor::from({4, 3}, {0.3, -0.1, 0.6,   //
                               -0.4, 0.8, 0.2,   //
                               0.5, 0.5, -0.7,   //
                               0.1, -0.9, 0.4});
  hb.mask = {1, 1, 1, 0};  // final row is padding-like: never attended
  return hb;
}

const std::vector<int> kSrc{4, 5, 4};
const std::vector<int> kTgtIn{tok_id::bos, 4, 6};

// encoder layer as explicit loops; branch: 0 = self only, 1 = average with
// provider attention, 2 = provider branch alone, 3 = average with linear feed
Mat enc_oracle(const std::map<std::string, Tensor>& P, const std::vector<int>& src,
               const ProviderOutput& hb, int branch, bool scale, std::size_t heads) {
  Mat x = embed_oracle(to_mat(P.at("enc.embed.table")), src);
  const Mat self = attn_oracle(x, x, to_mat(P.at("enc.l0.attn_s.wq")),
                               to_mat(P.at("enc.l0.attn_s.wk")), to_mat(P.at("enc.l0.attn_s.wv")),
                               heads, scale, {});
  Mat comb;
  if (branch == 0) {
    comb = self;
  } else if (branch == 3) {
    // provider rows aligned to the source: strip the leading CLS row and the
    // trailing SEP row, pad with zeros up to the source length
    const Mat hbm = to_mat(hb.h);
    Mat fed(src.size(), std::vector<double>(hbm[0].size(), 0.0));
    for (std::size_t i = 0; i < src.size() && i + 2 <= hbm.size() && i < hbm.size() - 2; ++i)
      fed[i] = hbm[i + 1];
    comb = avg_mat(self, matmul_oracle(fed, to_mat(P.at("enc.l0.w_feed"))));
  } else {
    const Mat prov = attn_oracle(
        x, to_mat(hb.h), to_mat(P.at("enc.l0.attn_b.wq")), to_mat(P.at("enc.l0.attn_b.wk")),
        to_mat(P.at("enc.l0.attn_b.wv")), heads, scale, per_key(src.size(), hb.mask));
    comb = branch == 1 ? avg_mat(self, prov) : prov;
  }
  x = layer_norm_oracle(add_mat(x, comb), to_vec(P.at("enc.l0.norm_att.gain")),
                        to_vec(P.at("enc.l0.norm_att.bias")));
  const Mat f = ffn_oracle(x, to_mat(P.at("enc.l0.ffn.w1")), to_vec(P.at("enc.l0.ffn.b1")),
                           to_mat(P.at("enc.l0.ffn.w2")), to_vec(P.at("enc.l0.ffn.b2")));
  return layer_norm_oracle(add_mat(x, f), to_vec(P.at("enc.l0.norm_ffn.gain")),
                           to_vec(P.at("enc.l0.norm_ffn.bias")));
}

// decoder layer + output projection; branch: 0 = encoder attention only,
// 1 = average of provider and encoder attention, 2 = provider alone,
// 3 = encoder alone (the other half of a forced draw)
Mat dec_oracle(const std::map<std::string, Tensor>& P, const std::vector<int>& tgt_in,
               const Mat& enc_top, const ProviderOutput& hb, int branch, bool scale,
               std::size_t heads) {
  Mat x = embed_oracle(to_mat(P.at("dec.embed.table")), tgt_in);
  const auto causal = causal_mask(tgt_in.size());
  const Mat sa = attn_oracle(x, x, to_mat(P.at("dec.l0.attn_s.wq")),
                             to_mat(P.at("dec.l0.attn_s.wk")), to_mat(P.at("dec.l0.attn_s.wv")),
                             heads, scale, causal);
  x = layer_norm_oracle(add_mat(x, sa), to_vec(P.at("dec.l0.norm_self.gain")),
                        to_vec(P.at("dec.l0.norm_self.bias")));

  const Mat encb = attn_oracle(x, enc_top, to_mat(P.at("dec.l0.attn_e.wq")),
                               to_mat(P.at("dec.l0.attn_e.wk")), to_mat(P.at("dec.l0.attn_e.wv")),
                               heads, scale, {});
  Mat comb;
  if (branch == 0 || branch == 3) {
    comb = encb;
  } else {
    const Mat prov = attn_oracle(
        x, to_mat(hb.h), to_mat(P.at("dec.l0.attn_b.wq")), to_mat(P.at("dec.l0.attn_b.wk")),
        to_mat(P.at("dec.l0.attn_b.wv")), heads, scale, per_key(tgt_in.size(), hb.mask));
    comb = branch == 1 ? avg_mat(prov, encb) : prov;
  }
  x = layer_norm_oracle(add_mat(x, comb), to_vec(P.at("dec.l0.norm_cross.gain")),
                        to_vec(P.at("dec.l0.norm_cross.bias")));
  const Mat f = ffn_oracle(x, to_mat(P.at("dec.l0.ffn.w1")), to_vec(P.at("dec.l0.ffn.b1")),
                           to_mat(P.at("dec.l0.ffn.w2")), to_vec(P.at("dec.l0.ffn.b2")));
  x = layer_norm_oracle(add_mat(x, f), to_vec(P.at("dec.l0.norm_ffn.gain")),
                        to_vec(P.at("dec.l0.norm_ffn.bias")));
  return matmul_oracle(x, to_mat(P.at("dec.out.w")));
}

}  // namespace

// ---------------------------------------------------------------------------

TEST_CASE("fused encoder layer matches the explicit-loop oracle") {
  FusedModel m(tiny_config(Variant::full), 41);
  const auto P = by_name(m.named_params());
  const auto hb = tiny_provider();
  auto st = m.encode(kSrc, hb);
  REQUIRE(st.h.size() == 2);  // embedding + one layer
  check_close(st.top(), enc_oracle(P, kSrc, hb, 1, false, 1));
}

TEST_CASE("fused decoder layer matches the explicit-loop oracle") {
  FusedModel m(tiny_config(Variant::full), 41);
  const auto P = by_name(m.named_params());
  const auto hb = tiny_provider();
  auto st = m.encode(kSrc, hb);
  auto logits = m.decode_logits(st, hb, kTgtIn);
  check_close(logits, dec_oracle(P, kTgtIn, to_mat(st.top()), hb, 1, false, 1));
}

TEST_CASE("plain-transformer baseline matches the single-branch oracle and ignores the provider") {
  FusedModel m(tiny_config(Variant::no_provider_baseline), 42);
  const auto P = by_name(m.named_params());
  CHECK_FALSE(needs_provider(m.config()));

  ProviderOutput none;  // baseline runs without any provider states
  auto st = m.encode(kSrc, none);
  check_close(st.top(), enc_oracle(P, kSrc, tiny_provider(), 0, false, 1));
  auto logits = m.decode_logits(st, none, kTgtIn);
  check_close(logits, dec_oracle(P, kTgtIn, to_mat(st.top()), tiny_provider(), 0, false, 1));

  // feeding it real provider states anyway changes nothing, bit for bit
  auto st2 = m.encode(kSrc, tiny_provider());
  for (std::size_t i = 0; i < st.top().size(); ++i) CHECK(st.top().at(i) == st2.top().at(i));
}

TEST_CASE("sequential decoder arrangement matches its own loop oracle") {
  FusedModel m(tiny_config(Variant::stacked_decoder), 43);
  const auto P = by_name(m.named_params());
  const auto hb = tiny_provider();
  auto st = m.encode(kSrc, hb);
  // its encoder keeps the fused two-branch sublayer
  check_close(st.top(), enc_oracle(P, kSrc, hb, 1, false, 1));

  // decoder: self -> encoder attention -> provider attention -> FFN, each
  // with its own residual + norm, no averaging anywhere
  Mat x = embed_oracle(to_mat(P.at("dec.embed.table")), kTgtIn);
  const Mat sa = attn_oracle(x, x, to_mat(P.at("dec.l0.attn_s.wq")),
                             to_mat(P.at("dec.l0.attn_s.wk")), to_mat(P.at("dec.l0.attn_s.wv")), 1,
                             false, causal_mask(kTgtIn.size()));
  x = layer_norm_oracle(add_mat(x, sa), to_vec(P.at("dec.l0.norm_self.gain")),
                        to_vec(P.at("dec.l0.norm_self.bias")));
  const Mat e = attn_oracle(x, to_mat(st.top()), to_mat(P.at("dec.l0.attn_e.wq")),
                            to_mat(P.at("dec.l0.attn_e.wk")), to_mat(P.at("dec.l0.attn_e.wv")), 1,
                            false, {});
  x = layer_norm_oracle(add_mat(x, e), to_vec(P.at("dec.l0.norm_cross.gain")),
                        to_vec(P.at("dec.l0.norm_cross.bias")));
  const Mat b = attn_oracle(x, to_mat(hb.h), to_mat(P.at("dec.l0.attn_b.wq")),
                            to_mat(P.at("dec.l0.attn_b.wk")), to_mat(P.at("dec.l0.attn_b.wv")), 1,
                            false, per_key(kTgtIn.size(), hb.mask));
  x = layer_norm_oracle(add_mat(x, b), to_vec(P.at("dec.l0.norm_fuse_b.gain")),
                        to_vec(P.at("dec.l0.norm_fuse_b.bias")));
  const Mat f = ffn_oracle(x, to_mat(P.at("dec.l0.ffn.w1")), to_vec(P.at("dec.l0.ffn.b1")),
                           to_mat(P.at("dec.l0.ffn.w2")), to_vec(P.at("dec.l0.ffn.b2")));
  x = layer_norm_oracle(add_mat(x, f), to_vec(P.at("dec.l0.norm_ffn.gain")),
                        to_vec(P.at("dec.l0.norm_ffn.bias")));
  check_close(m.decode_logits(st, hb, kTgtIn), matmul_oracle(x, to_mat(P.at("dec.out.w"))));
}

TEST_CASE("multi-head scaled instance still matches the oracle") {
  ModelConfig cfg = tiny_config(Variant::full);
  cfg.d_model = 4;
  cfg.d_ff = 6;
  cfg.heads = 2;
  cfg.attention_scaling = true;
  FusedModel m(cfg, 44);
  const auto P = by_name(m.named_params());
  const auto hb = tiny_provider();
  auto st = m.encode(kSrc, hb);
  check_close(st.top(), enc_oracle(P, kSrc, hb, 1, true, 2));
  check_close(m.decode_logits(st, hb, kTgtIn),
              dec_oracle(P, kTgtIn, to_mat(st.top()), hb, 1, true, 2));
}

TEST_CASE("forced drop-net draws select the documented branches") {
  ModelConfig cfg = tiny_config(Variant::full);
  FusedModel m(cfg, 45);
  const auto P = by_name(m.named_params());
  const auto hb = tiny_provider();

  DropNetSample low;  // u below p/2: first branch alone
  low.enc_u = {0.01};
  low.dec_u = {0.01};
  DropNetSample high;  // u above 1 - p/2: second branch alone
  high.enc_u = {0.99};
  high.dec_u = {0.99};

  // encoder: first branch is self attention, second is provider attention
  auto st_low = m.encode(kSrc, hb, true, &low, nullptr);
  check_close(st_low.top(), enc_oracle(P, kSrc, hb, 0, false, 1));
  auto st_high = m.encode(kSrc, hb, true, &high, nullptr);
  check_close(st_high.top(), enc_oracle(P, kSrc, hb, 2, false, 1));

  // decoder: first branch is provider attention, second is encoder attention
  auto enc_eval = m.encode(kSrc, hb);
  auto lg_low = m.decode_logits(enc_eval, hb, kTgtIn, true, &low, nullptr);
  check_close(lg_low, dec_oracle(P, kTgtIn, to_mat(enc_eval.top()), hb, 2, false, 1));
  auto lg_high = m.decode_logits(enc_eval, hb, kTgtIn, true, &high, nullptr);
  check_close(lg_high, dec_oracle(P, kTgtIn, to_mat(enc_eval.top()), hb, 3, false, 1));
}

TEST_CASE("p_net = 0 training equals eval bit for bit") {
  ModelConfig cfg = tiny_config(Variant::full);
  cfg.p_net = 0.0;
  FusedModel m(cfg, 46);
  const auto hb = tiny_provider();
  Rng rng(7);
  auto dn = draw_dropnet(rng, 1, 1);
  auto tr = m.encode(kSrc, hb, true, &dn, nullptr);
  auto ev = m.encode(kSrc, hb);
  for (std::size_t i = 0; i < ev.top().size(); ++i) CHECK(tr.top().at(i) == ev.top().at(i));
  auto lg_tr = m.decode_logits(tr, hb, kTgtIn, true, &dn, nullptr);
  auto lg_ev = m.decode_logits(ev, hb, kTgtIn);
  for (std::size_t i = 0; i < lg_ev.size(); ++i) CHECK(lg_tr.at(i) == lg_ev.at(i));
}

TEST_CASE("linear feed transforms the aligned provider feature") {
  ModelConfig cfg = tiny_config(Variant::linear_feed);
  FusedModel m(cfg, 47);
  const auto P = by_name(m.named_params());
  const auto hb = tiny_provider();
  CHECK(P.count("enc.l0.w_feed") == 1);
  CHECK(P.count("enc.l0.attn_b.wq") == 0);
  auto st = m.encode(kSrc, hb);
  check_close(st.top(), enc_oracle(P, kSrc, hb, 3, false, 1));
  // its decoder reads the encoder exactly like the plain baseline
  check_close(m.decode_logits(st, hb, kTgtIn),
              dec_oracle(P, kTgtIn, to_mat(st.top()), hb, 0, false, 1));
}

TEST_CASE("literal linear feed transforms the layer's own state and needs no provider") {
  ModelConfig cfg = tiny_config(Variant::linear_feed);
  cfg.linear_feed_literal = true;
  CHECK_FALSE(needs_provider(cfg));
  FusedModel m(cfg, 48);
  const auto P = by_name(m.named_params());
  ProviderOutput none;
  auto st = m.encode(kSrc, none);

  // oracle: feed branch is x W_feed with the layer input as its own feature
  Mat x = embed_oracle(to_mat(P.at("enc.embed.table")), kSrc);
  const Mat self = attn_oracle(x, x, to_mat(P.at("enc.l0.attn_s.wq")),
                               to_mat(P.at("enc.l0.attn_s.wk")), to_mat(P.at("enc.l0.attn_s.wv")),
                               1, false, {});
  const Mat comb = avg_mat(self, matmul_oracle(x, to_mat(P.at("enc.l0.w_feed"))));
  x = layer_norm_oracle(add_mat(x, comb), to_vec(P.at("enc.l0.norm_att.gain")),
                        to_vec(P.at("enc.l0.norm_att.bias")));
  const Mat f = ffn_oracle(x, to_mat(P.at("enc.l0.ffn.w1")), to_vec(P.at("enc.l0.ffn.b1")),
                           to_mat(P.at("enc.l0.ffn.w2")), to_vec(P.at("enc.l0.ffn.b2")));
  check_close(st.top(), layer_norm_oracle(add_mat(x, f), to_vec(P.at("enc.l0.norm_ffn.gain")),
                                          to_vec(P.at("enc.l0.norm_ffn.bias"))));
}

TEST_CASE("embedding feed projects provider rows in place of source embeddings") {
  ModelConfig cfg = tiny_config(Variant::embedding_feed);
  FusedModel m(cfg, 49);
  const auto P = by_name(m.named_params());
  CHECK(P.count("enc.src_proj") == 1);
  CHECK(P.count("enc.embed.table") == 0);
  const auto hb = tiny_provider();
  auto st = m.encode(kSrc, hb);

  // layer 0 state: aligned provider rows through the projection + positions
  const Mat hbm = to_mat(hb.h);
  Mat fed(kSrc.size(), std::vector<double>(3, 0.0));
  for (std::size_t i = 0; i < kSrc.size() && i < hbm.size() - 2; ++i) fed[i] = hbm[i + 1];
  Mat x0 = matmul_oracle(fed, to_mat(P.at("enc.src_proj")));
  for (std::size_t r = 0; r < x0.size(); ++r) {
    const double pos = static_cast<double>(r);
    for (std::size_t i = 0; i < x0[0].size() / 2; ++i) {
      const double angle =
          pos / std::pow(10000.0, 2.0 * static_cast<double>(i) / static_cast<double>(x0[0].size()));
      x0[r][2 * i] += std::sin(angle);
      x0[r][2 * i + 1] += std::cos(angle);
    }
  }
  check_close(st.h[0], x0);
}

TEST_CASE("attn_B removal variants keep exactly one side fused") {
  const auto hb = tiny_provider();
  {
    FusedModel m(tiny_config(Variant::drop_enc_attnB), 50);
    const auto P = by_name(m.named_params());
    CHECK(P.count("enc.l0.attn_b.wq") == 0);
    CHECK(P.count("dec.l0.attn_b.wq") == 1);
    auto st = m.encode(kSrc, hb);
    check_close(st.top(), enc_oracle(P, kSrc, hb, 0, false, 1));
    check_close(m.decode_logits(st, hb, kTgtIn),
                dec_oracle(P, kTgtIn, to_mat(st.top()), hb, 1, false, 1));
  }
  {
    FusedModel m(tiny_config(Variant::drop_dec_attnB), 51);
    const auto P = by_name(m.named_params());
    CHECK(P.count("enc.l0.attn_b.wq") == 1);
    CHECK(P.count("dec.l0.attn_b.wq") == 0);
    auto st = m.encode(kSrc, hb);
    check_close(st.top(), enc_oracle(P, kSrc, hb, 1, false, 1));
    check_close(m.decode_logits(st, hb, kTgtIn),
                dec_oracle(P, kTgtIn, to_mat(st.top()), hb, 0, false, 1));
  }
}

TEST_CASE("removing encoder attn_B equals zeroing its value projection up to the halved residual") {
  // the removal drops the averaging too: with the provider value projection
  // zeroed, the full wiring contributes self/2 where the removal keeps self
  ModelConfig cfg = tiny_config(Variant::full);
  FusedModel m(cfg, 52);
  const auto P = by_name(m.named_params());
  auto wv = P.at("enc.l0.attn_b.wv");
  for (std::size_t i = 0; i < wv.size(); ++i) wv.set(i, 0.0);

  const auto hb = tiny_provider();
  auto st = m.encode(kSrc, hb);
  // oracle with the halved self branch (provider branch contributes zero)
  Mat x = embed_oracle(to_mat(P.at("enc.embed.table")), kSrc);
  Mat self = attn_oracle(x, x, to_mat(P.at("enc.l0.attn_s.wq")),
                         to_mat(P.at("enc.l0.attn_s.wk")), to_mat(P.at("enc.l0.attn_s.wv")), 1,
                         false, {});
  for (auto& row : self)
    for (auto& v : row) v *= 0.5;
  x = layer_norm_oracle(add_mat(x, self), to_vec(P.at("enc.l0.norm_att.gain")),
                        to_vec(P.at("enc.l0.norm_att.bias")));
  const Mat f = ffn_oracle(x, to_mat(P.at("enc.l0.ffn.w1")), to_vec(P.at("enc.l0.ffn.b1")),
                           to_mat(P.at("enc.l0.ffn.w2")), to_vec(P.at("enc.l0.ffn.b2")));
  check_close(st.top(), layer_norm_oracle(add_mat(x, f), to_vec(P.at("enc.l0.norm_ffn.gain")),
                                          to_vec(P.at("enc.l0.norm_ffn.bias"))));
}

TEST_CASE("provider-side padding rows never influence the output") {
  FusedModel m(tiny_config(Variant::full), 53);
  auto hb = tiny_provider();
  auto st = m.encode(kSrc, hb);
  auto lg = m.decode_logits(st, hb, kTgtIn);

  // append garbage rows flagged as padding
  ProviderOutput padded;
  padded.h = Tensor::zeros({6, 3});
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 3; ++j) padded.h.set(i, j, hb.h.at(i, j));
  padded.h.set(4, 0, 123.0);
  padded.h.set(5, 2, -77.0);
  padded.mask = {1, 1, 1, 0, 0, 0};

  auto st2 = m.encode(kSrc, padded);
  for (std::size_t i = 0; i < st.top().size(); ++i) CHECK(st.top().at(i) == st2.top().at(i));
  auto lg2 = m.decode_logits(st2, padded, kTgtIn);
  for (std::size_t i = 0; i < lg.size(); ++i) CHECK(lg.at(i) == lg2.at(i));
}

TEST_CASE("decoder causality: future tokens cannot reach earlier rows") {
  ModelConfig cfg = tiny_config(Variant::full);
  cfg.d_model = 4;
  cfg.heads = 2;
  cfg.d_ff = 8;
  FusedModel m(cfg, 54);
  const auto hb = tiny_provider();
  auto st = m.encode(kSrc, hb);

  std::vector<int> tgt{tok_id::bos, 4, 5, 6};
  auto base = m.decode_logits(st, hb, tgt);
  for (std::size_t t = 0; t + 1 < tgt.size(); ++t) {
    auto mut = tgt;
    mut[t + 1] = mut[t + 1] == 4 ? 5 : 4;
    auto lg = m.decode_logits(st, hb, mut);
    for (std::size_t r = 0; r <= t; ++r)
      for (std::size_t c = 0; c < base.cols(); ++c) CHECK(base.at(r, c) == lg.at(r, c));
  }
}

TEST_CASE("eval forward is a deterministic function of parameters and inputs") {
  FusedModel m(tiny_config(Variant::full), 55);
  const auto hb = tiny_provider();
  auto a = m.encode(kSrc, hb);
  auto b = m.encode(kSrc, hb);
  for (std::size_t i = 0; i < a.top().size(); ++i) CHECK(a.top().at(i) == b.top().at(i));
  auto la = m.decode_logits(a, hb, kTgtIn);
  auto lb = m.decode_logits(b, hb, kTgtIn);
  for (std::size_t i = 0; i < la.size(); ++i) CHECK(la.at(i) == lb.at(i));
}

TEST_CASE("next_logprobs is the log-softmax of the final logits row") {
  FusedModel m(tiny_config(Variant::full), 56);
  const auto hb = tiny_provider();
  auto st = m.encode(kSrc, hb);
  auto lp = m.next_logprobs(st, hb, kTgtIn);
  auto logits = m.decode_logits(st, hb, kTgtIn);
  const std::size_t last = logits.rows() - 1;
  double z = 0.0;
  for (std::size_t j = 0; j < logits.cols(); ++j) z += std::exp(logits.at(last, j));
  double total = 0.0;
  for (std::size_t j = 0; j < lp.size(); ++j) {
    CHECK(lp[j] == doctest::Approx(logits.at(last, j) - std::log(z)).epsilon(1e-10));
    total += std::exp(lp[j]);
  }
  CHECK(total == doctest::Approx(1.0).epsilon(1e-10));
}

TEST_CASE("gradients of the full fused model pass finite differences") {
  FusedModel m(tiny_config(Variant::full), 57);
  const auto hb = tiny_provider();
  const std::vector<int> tgt_out{4, 6, tok_id::eos};
  auto loss_fn = [&] {
    auto st = m.encode(kSrc, hb);
    return nll_loss_rows(m.decode_logits(st, hb, kTgtIn), tgt_out, 0.1, -1);
  };
  auto report = check_gradients(loss_fn, m.named_params());
  for (const auto& msg : report.failures) MESSAGE(msg);
  CHECK(report.pass);
  CHECK(report.checked > 100);
}

TEST_CASE("gradients flow through a frozen drop-net training sample") {
  ModelConfig cfg = tiny_config(Variant::full);
  cfg.p_net = 0.4;
  FusedModel m(cfg, 58);
  const auto hb = tiny_provider();
  const std::vector<int> tgt_out{4, 6, tok_id::eos};
  DropNetSample dn;
  dn.enc_u = {0.5};  // both branches averaged
  dn.dec_u = {0.95};  // encoder branch alone
  auto loss_fn = [&] {
    auto st = m.encode(kSrc, hb, true, &dn, nullptr);
    return nll_loss_rows(m.decode_logits(st, hb, kTgtIn, true, &dn, nullptr), tgt_out, 0.1, -1);
  };
  auto report = check_gradients(loss_fn, m.named_params());
  for (const auto& msg : report.failures) MESSAGE(msg);
  CHECK(report.pass);
}

TEST_CASE("tied output projection reuses the target embedding") {
  ModelConfig cfg = tiny_config(Variant::full);
  cfg.tie_output = true;
  FusedModel m(cfg, 59);
  const auto P = by_name(m.named_params());
  CHECK(P.count("dec.out.w") == 0);
  const auto hb = tiny_provider();
  auto st = m.encode(kSrc, hb);
  auto logits = m.decode_logits(st, hb, kTgtIn);
  CHECK(logits.cols() == cfg.tgt_vocab);
}

TEST_CASE("fusion and shared parameter sets partition the names") {
  FusedModel m(tiny_config(Variant::full), 60);
  const auto all = m.named_params();
  const auto fusion = m.fusion_params();
  const auto shared = m.shared_params();
  CHECK(all.size() == fusion.size() + shared.size());
  for (const auto& [n, t] : fusion)
    CHECK((n.find(".attn_b") != std::string::npos || n.find(".w_feed") != std::string::npos ||
           n.find("src_proj") != std::string::npos || n.find(".norm_fuse_b") != std::string::npos));
  for (const auto& [n, t] : shared) {
    CHECK(n.find(".attn_b") == std::string::npos);
    CHECK(n.find(".w_feed") == std::string::npos);
  }
  // the baseline exposes no fusion parameters at all
  FusedModel base(tiny_config(Variant::no_provider_baseline), 60);
  CHECK(base.fusion_params().empty());
  CHECK(base.named_params().size() == base.shared_params().size());
}

TEST_CASE("config validation rejects contradictions") {
  ModelConfig cfg = tiny_config(Variant::full);
  cfg.p_net = 1.5;
  CHECK_THROWS_AS(FusedModel(cfg, 1), std::invalid_argument);
  cfg = tiny_config(Variant::full);
  cfg.heads = 3;  // does not divide d_model = 2
  CHECK_THROWS_AS(FusedModel(cfg, 1), std::invalid_argument);
  cfg = tiny_config(Variant::full);
  cfg.linear_feed_literal = true;  // only meaningful under linear_feed
  CHECK_THROWS_AS(FusedModel(cfg, 1), std::invalid_argument);
  cfg = tiny_config(Variant::full);
  cfg.layers = 0;
  CHECK_THROWS_AS(FusedModel(cfg, 1), std::invalid_argument);

  // a fused variant refuses to run without provider states
  FusedModel m(tiny_config(Variant::full), 1);
  ProviderOutput none;
  CHECK_THROWS_AS(m.encode(kSrc, none), std::invalid_argument);

  // provider width mismatch is caught
  ProviderOutput wrong;
  wrong.h = Tensor::zeros({3, 5});
  wrong.mask = {1, 1, 1};
  CHECK_THROWS_AS(m.encode(kSrc, wrong), std::invalid_argument);
}

TEST_CASE("variant names round-trip through the string mapping") {
  for (auto v : {Variant::full, Variant::no_provider_baseline, Variant::embedding_feed,
                 Variant::linear_feed, Variant::drop_enc_attnB, Variant::drop_dec_attnB,
                 Variant::stacked_decoder})
    CHECK(variant_from_string(to_string(v)) == v);
  CHECK_THROWS_AS(variant_from_string("bogus"), std::invalid_argument);
}

TEST_CASE("config fingerprints separate differing configurations") {
  auto a = tiny_config(Variant::full);
  auto b = a;
  CHECK(config_fingerprint(a) == config_fingerprint(b));
  b.p_net = 0.5;
  CHECK(config_fingerprint(a) != config_fingerprint(b));
  b = a;
  b.variant = Variant::stacked_decoder;
  CHECK(config_fingerprint(a) != config_fingerprint(b));
}
