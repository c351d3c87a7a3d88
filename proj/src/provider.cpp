#include "ctxfuse/provider.hpp"

#include <algorithm>
#include <set>
#include <stdexcept>

#include "ctxfuse/optim.hpp"
#include "ctxfuse/rng.hpp"

namespace ctxfuse {

// ---- PieceTokenizer ------------------------------------------------------

PieceTokenizer::PieceTokenizer(std::vector<std::string> pieces) {
  pieces_ = {"<pad>", "<unk>", "<cls>", "<sep>", "<mask>"};
  content_ = std::move(pieces);
  for (const auto& p : content_) {
    if (p.empty()) throw std::invalid_argument("tokenizer: empty piece");
    const int id = static_cast<int>(pieces_.size());
    if (!index_.emplace(p, id).second)
      throw std::invalid_argument("tokenizer: duplicate piece '" + p + "'");
    pieces_.push_back(p);
    max_piece_len_ = std::max(max_piece_len_, p.size());
  }
}

PieceTokenizer PieceTokenizer::char_level(const std::vector<std::string>& lines) {
  std::set<char> chars;
  for (const auto& line : lines)
    for (char c : line) chars.insert(c);
  std::vector<std::string> pieces;
  pieces.reserve(chars.size());
  for (char c : chars) pieces.emplace_back(1, c);
  return PieceTokenizer(std::move(pieces));
}

const std::string& PieceTokenizer::piece(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= pieces_.size())
    throw std::invalid_argument("tokenizer: id " + std::to_string(id) + " out of range");
  return pieces_[static_cast<std::size_t>(id)];
}

std::vector<int> PieceTokenizer::tokenize(const std::string& s) const {
  std::vector<int> ids;
  std::size_t i = 0;
  while (i < s.size()) {
    int match = -1;
    std::size_t match_len = 0;
    const std::size_t cap = std::min(max_piece_len_, s.size() - i);
    for (std::size_t len = cap; len >= 1; --len) {
      auto it = index_.find(s.substr(i, len));
      if (it != index_.end()) {
        match = it->second;
        match_len = len;
        break;
      }
    }
    if (match < 0) {
      ids.push_back(unk_id());
      i += 1;  // skip the uncovered character
    } else {
      ids.push_back(match);
      i += match_len;
    }
  }
  return ids;
}

std::string PieceTokenizer::detokenize(const std::vector<int>& ids) const {
  std::string s;
  for (int id : ids)
    if (id >= kFirstContentId) s += piece(id);
  return s;
}

// ---- Provider ------------------------------------------------------------

Provider::Provider(ProviderConfig cfg, PieceTokenizer tokenizer, std::uint64_t seed)
    : cfg_(cfg), tok_(std::move(tokenizer)) {
  if (cfg_.layers == 0) throw std::invalid_argument("provider: needs at least one layer");
  Rng rng(derive_seed(seed, "provider-init"));
  embed_ = embedding_init(rng, tok_.vocab_size(), cfg_.d_model);
  layers_.reserve(cfg_.layers);
  for (std::size_t l = 0; l < cfg_.layers; ++l) {
    Layer layer;
    layer.attn = attention_init(rng, cfg_.d_model, cfg_.d_model, cfg_.d_model, cfg_.heads,
                                /*scale=*/true);
    layer.norm_attn = layer_norm_init(cfg_.d_model);
    layer.ffn = ffn_init(rng, cfg_.d_model, cfg_.d_ff);
    layer.norm_ffn = layer_norm_init(cfg_.d_model);
    layers_.push_back(std::move(layer));
  }
  mlm_w_ = Tensor::zeros({cfg_.d_model, tok_.vocab_size()}, true);
  mlm_b_ = Tensor::zeros({tok_.vocab_size()}, true);
  xavier_fill(mlm_w_, rng, cfg_.d_model, tok_.vocab_size());
}

void Provider::freeze() {
  for (auto& [name, p] : named_params()) {
    Tensor t = p;
    t.set_tracked(false);
  }
  frozen_ = true;
}

std::vector<int> Provider::assemble(const std::string& x, ProviderMode mode,
                                    const std::optional<std::string>& x_prev) const {
  if (x.empty()) throw std::invalid_argument("provider: empty input sentence");
  if (mode == ProviderMode::document && !x_prev.has_value())
    throw std::invalid_argument("provider: document mode needs the preceding sentence");
  std::vector<int> ids;
  ids.push_back(tok_.cls_id());
  if (mode == ProviderMode::document) {
    for (int id : tok_.tokenize(*x_prev)) ids.push_back(id);
    ids.push_back(tok_.sep_id());
  }
  for (int id : tok_.tokenize(x)) ids.push_back(id);
  ids.push_back(tok_.sep_id());
  return ids;
}

Tensor Provider::run_stack(const std::vector<int>& ids) const {
  Tensor x = embed_sequence(embed_, ids);
  for (const auto& layer : layers_) {
    Tensor a = attn_seq(layer.attn, x, x);
    x = layer_norm(layer.norm_attn, add(x, a));
    Tensor f = ffn(layer.ffn, x);
    x = layer_norm(layer.norm_ffn, add(x, f));
  }
  return x;
}

ProviderOutput Provider::encode(const std::string& x, ProviderMode mode,
                                const std::optional<std::string>& x_prev) const {
  NoGradGuard ng;
  const std::vector<int> ids = assemble(x, mode, x_prev);
  ProviderOutput out;
  out.h = run_stack(ids);
  out.mask.assign(ids.size(), 1);
  return out;
}

Tensor Provider::encode_ids(const std::vector<int>& ids) const {
  NoGradGuard ng;
  return run_stack(ids);
}

namespace {

// content positions worth predicting: real pieces, not whitespace
std::vector<std::size_t> maskable_positions(const PieceTokenizer& tok,
                                            const std::vector<int>& ids) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < ids.size(); ++i)
    if (ids[i] >= PieceTokenizer::kFirstContentId && tok.piece(ids[i]) != " ") out.push_back(i);
  return out;
}

// replaces ~rate of the maskable positions (at least one) with the mask id;
// targets hold the original id there and PAD everywhere else
bool apply_masking(const PieceTokenizer& tok, std::vector<int>& ids, std::vector<int>& targets,
                   double rate, Rng& rng) {
  const auto positions = maskable_positions(tok, ids);
  if (positions.empty()) return false;
  targets.assign(ids.size(), tok.pad_id());
  bool any = false;
  for (std::size_t pos : positions) {
    if (rng.uniform() < rate) {
      targets[pos] = ids[pos];
      ids[pos] = tok.mask_id();
      any = true;
    }
  }
  if (!any) {
    const std::size_t pos = positions[rng.uniform_int(positions.size())];
    targets[pos] = ids[pos];
    ids[pos] = tok.mask_id();
  }
  return true;
}

}  // namespace

double Provider::pretrain(const std::vector<std::string>& lines, const MlmPretrainConfig& mc,
                          std::uint64_t seed) {
  if (frozen_) throw std::runtime_error("provider: already frozen, cannot pretrain");
  if (lines.empty()) throw std::invalid_argument("provider: empty pretraining corpus");
  const std::size_t holdout =
      std::min(lines.size() - 1,
               static_cast<std::size_t>(static_cast<double>(lines.size()) * mc.holdout_fraction));
  const std::size_t train_n = lines.size() - holdout;

  AdamConfig ac;
  ac.weight_decay = 0.0;
  AdamW opt(named_params(), ac);
  for (std::uint64_t step = 0; step < mc.steps; ++step) {
    Rng rng(derive_seed(seed, "mlm-step", step));
    opt.zero_grad();
    std::size_t used = 0;
    for (std::size_t b = 0; b < mc.batch_sentences; ++b) {
      const auto& line = lines[rng.uniform_int(train_n)];
      std::vector<int> ids = assemble(line, ProviderMode::sentence);
      std::vector<int> targets;
      if (!apply_masking(tok_, ids, targets, mc.mask_rate, rng)) continue;
      Tensor h = run_stack(ids);
      Tensor logits = add_rowvec(matmul(h, mlm_w_), mlm_b_);
      Tensor loss = nll_loss_rows(logits, targets, 0.0, tok_.pad_id());
      backward(loss, 1.0 / static_cast<double>(mc.batch_sentences));
      ++used;
    }
    if (used > 0) opt.step(mc.lr);
  }
  const std::vector<std::string> eval_lines(lines.end() - static_cast<std::ptrdiff_t>(holdout ? holdout : lines.size()),
                                            lines.end());
  return masked_accuracy(eval_lines, mc.mask_rate, derive_seed(seed, "mlm-eval"));
}

double Provider::masked_accuracy(const std::vector<std::string>& lines, double mask_rate,
                                 std::uint64_t seed) const {
  if (lines.empty()) throw std::invalid_argument("provider: empty evaluation corpus");
  NoGradGuard ng;
  std::size_t correct = 0, total = 0;
  for (std::size_t li = 0; li < lines.size(); ++li) {
    Rng rng(derive_seed(seed, "mask", li));
    std::vector<int> ids = assemble(lines[li], ProviderMode::sentence);
    std::vector<int> targets;
    if (!apply_masking(tok_, ids, targets, mask_rate, rng)) continue;
    Tensor h = run_stack(ids);
    Tensor logits = add_rowvec(matmul(h, mlm_w_), mlm_b_);
    const std::size_t v = logits.cols();
    for (std::size_t i = 0; i < targets.size(); ++i) {
      if (targets[i] == tok_.pad_id()) continue;
      std::size_t best = 0;
      for (std::size_t j = 1; j < v; ++j)
        if (logits.at(i, j) > logits.at(i, best)) best = j;
      correct += static_cast<int>(best) == targets[i];
      ++total;
    }
  }
  if (total == 0) throw std::runtime_error("provider: no maskable positions in evaluation corpus");
  return static_cast<double>(correct) / static_cast<double>(total);
}

NamedParams Provider::named_params() const {
  NamedParams out;
  embed_.collect("provider.embed", out);
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const std::string p = "provider.l" + std::to_string(l);
    layers_[l].attn.collect(p + ".attn", out);
    layers_[l].norm_attn.collect(p + ".norm_attn", out);
    layers_[l].ffn.collect(p + ".ffn", out);
    layers_[l].norm_ffn.collect(p + ".norm_ffn", out);
  }
  out.emplace_back("provider.mlm.w", mlm_w_);
  out.emplace_back("provider.mlm.b", mlm_b_);
  return out;
}

void Provider::save(const std::string& path) const {
  Archive a;
  a.scalars["provider.layers"] = cfg_.layers;
  a.scalars["provider.d_model"] = cfg_.d_model;
  a.scalars["provider.d_ff"] = cfg_.d_ff;
  a.scalars["provider.heads"] = cfg_.heads;
  a.scalars["provider.frozen"] = frozen_ ? 1 : 0;
  std::string blob;
  for (const auto& p : tok_.content_pieces()) {
    blob += p;
    blob += '\n';
  }
  a.texts["provider.pieces"] = blob;
  pack_params(named_params(), a);
  write_archive(path, a);
}

Provider Provider::load(const std::string& path) {
  const Archive a = read_archive(path);
  for (const char* key : {"provider.layers", "provider.d_model", "provider.d_ff",
                          "provider.heads", "provider.frozen"})
    if (!a.scalars.count(key))
      throw std::runtime_error("provider: archive lacks scalar '" + std::string(key) + "'");
  ProviderConfig cfg;
  cfg.layers = a.scalars.at("provider.layers");
  cfg.d_model = a.scalars.at("provider.d_model");
  cfg.d_ff = a.scalars.at("provider.d_ff");
  cfg.heads = a.scalars.at("provider.heads");

  auto blob_it = a.texts.find("provider.pieces");
  if (blob_it == a.texts.end()) throw std::runtime_error("provider: archive lacks piece table");
  std::vector<std::string> pieces;
  std::string cur;
  for (char c : blob_it->second) {
    if (c == '\n') {
      pieces.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }

  Provider p(cfg, PieceTokenizer(std::move(pieces)), /*seed=*/0);
  NamedParams params = p.named_params();
  unpack_params(a, params);
  if (a.scalars.at("provider.frozen")) p.freeze();
  return p;
}

}  // namespace ctxfuse
