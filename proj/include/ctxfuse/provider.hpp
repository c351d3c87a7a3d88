#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "ctxfuse/nn.hpp"
#include "ctxfuse/serialize.hpp"
#include "ctxfuse/tensor.hpp"

namespace ctxfuse {

// Greedy longest-match piece tokenizer. Built char-level here (every
// character of the synthetic alphabet, space included, is one piece), which
// deliberately segments sentences differently from the word-level
// translation vocabulary: downstream code must survive provider-side
// sequences longer than source-side ones.
class PieceTokenizer {
 public:
  // ids 0..4 are reserved: PAD, UNK, CLS, SEP, MASK; content pieces follow
  explicit PieceTokenizer(std::vector<std::string> pieces);

  // one piece per distinct character occurring in the lines, sorted
  static PieceTokenizer char_level(const std::vector<std::string>& lines);

  int pad_id() const { return 0; }
  int unk_id() const { return 1; }
  int cls_id() const { return 2; }
  int sep_id() const { return 3; }
  int mask_id() const { return 4; }
  static constexpr int kFirstContentId = 5;

  std::size_t vocab_size() const { return pieces_.size(); }
  const std::string& piece(int id) const;
  const std::vector<std::string>& content_pieces() const { return content_; }

  // greedy longest match; a character no piece covers becomes one UNK
  std::vector<int> tokenize(const std::string& s) const;
  // concatenates content pieces; special ids contribute nothing
  std::string detokenize(const std::vector<int>& ids) const;

 private:
  std::vector<std::string> pieces_;   // full table including specials
  std::vector<std::string> content_;  // content pieces only, construction order
  std::unordered_map<std::string, int> index_;
  std::size_t max_piece_len_ = 0;
};

enum class ProviderMode { sentence, document };

struct ProviderOutput {
  Tensor h;                        // [len × d] last-layer states, untracked
  std::vector<std::uint8_t> mask;  // 1 = real position, 0 = ignore (padding)

  std::size_t len() const { return h.defined() ? h.rows() : 0; }
};

struct ProviderConfig {
  std::size_t layers = 4;
  std::size_t d_model = 32;
  std::size_t d_ff = 64;
  std::size_t heads = 4;

  bool operator==(const ProviderConfig&) const = default;
};

struct MlmPretrainConfig {
  std::uint64_t steps = 400;
  std::size_t batch_sentences = 8;
  double lr = 1e-3;
  double mask_rate = 0.15;
  double holdout_fraction = 0.1;  // tail lines reserved for accuracy measurement
};

// The frozen context encoder. A small Transformer encoder over piece ids
// (score scaling on), pretrained by masked-piece prediction, then frozen:
// after freeze() every parameter is untracked and encode() runs without
// recording, so no gradient can ever reach it.
class Provider {
 public:
  Provider(ProviderConfig cfg, PieceTokenizer tokenizer, std::uint64_t seed);

  const ProviderConfig& config() const { return cfg_; }
  const PieceTokenizer& tokenizer() const { return tok_; }
  std::size_t d_model() const { return cfg_.d_model; }
  bool frozen() const { return frozen_; }
  void freeze();

  // (CLS, pieces(x), SEP) in sentence mode;
  // (CLS, pieces(x_prev), SEP, pieces(x), SEP) in document mode.
  std::vector<int> assemble(const std::string& x, ProviderMode mode,
                            const std::optional<std::string>& x_prev = std::nullopt) const;
  ProviderOutput encode(const std::string& x, ProviderMode mode,
                        const std::optional<std::string>& x_prev = std::nullopt) const;
  // last-layer states for an explicit id sequence (all positions real)
  Tensor encode_ids(const std::vector<int>& ids) const;

  // masked-piece pretraining on raw text; returns held-out masked-piece
  // accuracy measured after the final step. Must precede freeze().
  double pretrain(const std::vector<std::string>& lines, const MlmPretrainConfig& mc,
                  std::uint64_t seed);
  double masked_accuracy(const std::vector<std::string>& lines, double mask_rate,
                         std::uint64_t seed) const;

  NamedParams named_params() const;

  void save(const std::string& path) const;
  static Provider load(const std::string& path);

 private:
  struct Layer {
    AttentionParams attn;
    LayerNormParams norm_attn;
    FfnParams ffn;
    LayerNormParams norm_ffn;
  };

  Tensor run_stack(const std::vector<int>& ids) const;

  ProviderConfig cfg_;
  PieceTokenizer tok_;
  EmbeddingParams embed_;
  std::vector<Layer> layers_;
  Tensor mlm_w_;  // [d × vocab] masked-piece prediction head
  Tensor mlm_b_;  // [vocab]
  bool frozen_ = false;
};

}  // namespace ctxfuse
