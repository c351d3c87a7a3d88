#include "ctxfuse/train.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "ctxfuse/decode.hpp"
#include "ctxfuse/dropnet.hpp"
#include "ctxfuse/rng.hpp"

namespace ctxfuse {

void TrainRunLog::add(std::uint64_t step, std::string split, std::string metric, double value) {
  if (!rows_.empty() && step < rows_.back().step)
    throw std::invalid_argument("train log steps must be non-decreasing");
  rows_.push_back(Row{step, std::move(split), std::move(metric), value});
}

void TrainRunLog::write_csv(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out << "step,split,metric,value\n";
  for (const auto& r : rows_) {
    std::ostringstream v;
    v.precision(17);
    v << r.value;
    out << r.step << ',' << r.split << ',' << r.metric << ',' << v.str() << '\n';
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

void TrainConfig::validate() const {
  if (max_steps < 1) throw std::invalid_argument("max_steps must be at least 1");
  if (batch_tokens < 1) throw std::invalid_argument("batch_tokens must be at least 1");
  if (accum_steps < 1) throw std::invalid_argument("accum_steps must be at least 1");
  if (eval_every < 1) throw std::invalid_argument("eval_every must be at least 1");
  if (label_smoothing < 0.0 || label_smoothing >= 1.0)
    throw std::invalid_argument("label_smoothing must be in [0, 1)");
}

std::string train_config_fingerprint(const TrainConfig& cfg) {
  // max_steps is deliberately absent: resuming a checkpoint extends the step
  // budget, and every field that affects bit-exactness of the remaining steps
  // is still covered.
  std::ostringstream os;
  os.precision(17);
  os << "batch_tokens=" << cfg.batch_tokens
     << ";accum_steps=" << cfg.accum_steps << ";label_smoothing=" << cfg.label_smoothing
     << ";warmup_init=" << cfg.schedule.warmup_init << ";peak=" << cfg.schedule.peak
     << ";warmup_steps=" << cfg.schedule.warmup_steps << ";beta1=" << cfg.adam.beta1
     << ";beta2=" << cfg.adam.beta2 << ";eps=" << cfg.adam.eps
     << ";weight_decay=" << cfg.adam.weight_decay << ";eval_every=" << cfg.eval_every
     << ";patience=" << cfg.patience << ";val_decode_limit=" << cfg.val_decode_limit
     << ";val_max_len=" << cfg.val_max_len << ";lr_step_offset=" << cfg.lr_step_offset
     << ";seed=" << cfg.seed;
  return os.str();
}

std::vector<Batch> make_batches(const std::vector<std::vector<int>>& tgt_out,
                                std::size_t batch_tokens) {
  std::vector<std::size_t> idx(tgt_out.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    if (tgt_out[a].size() != tgt_out[b].size()) return tgt_out[a].size() < tgt_out[b].size();
    return a < b;
  });
  std::vector<Batch> batches;
  for (std::size_t i : idx) {
    const std::size_t t = tgt_out[i].size();
    if (batches.empty() || batches.back().tgt_tokens + t > batch_tokens) batches.emplace_back();
    batches.back().items.push_back(i);
    batches.back().tgt_tokens += t;
  }
  return batches;
}

Trainer::Trainer(FusedModel& model, const Provider* provider, const ParallelCorpus& train_data,
                 const ParallelCorpus& valid_data, const Vocab& vocab_src, const Vocab& vocab_tgt,
                 TrainConfig cfg)
    : model_(model),
      provider_(provider),
      valid_data_(valid_data),
      vocab_src_(vocab_src),
      vocab_tgt_(vocab_tgt),
      cfg_(std::move(cfg)),
      opt_(model.named_params(), cfg_.adam) {
  cfg_.validate();
  if (train_data.size() == 0 || valid_data.size() == 0)
    throw std::invalid_argument("training needs non-empty train and valid splits");

  auto encode_corpus = [&](const ParallelCorpus& cp, std::vector<Encoded>& out) {
    out.reserve(cp.size());
    for (std::size_t i = 0; i < cp.size(); ++i) {
      Encoded e;
      e.src = vocab_src_.encode(cp.src[i]);
      e.src.push_back(tok_id::eos);
      const auto tgt = vocab_tgt_.encode(cp.tgt[i]);
      e.tgt_in.push_back(tok_id::bos);
      e.tgt_in.insert(e.tgt_in.end(), tgt.begin(), tgt.end());
      e.tgt_out = tgt;
      e.tgt_out.push_back(tok_id::eos);
      out.push_back(std::move(e));
    }
  };
  encode_corpus(train_data, train_enc_);
  encode_corpus(valid_data, valid_enc_);

  if (needs_provider(model_.config())) {
    if (provider_ == nullptr)
      throw std::invalid_argument("model reads provider states but no provider was given");
    auto fill = [&](const ParallelCorpus& cp, std::vector<ProviderOutput>& out) {
      out.reserve(cp.size());
      for (std::size_t i = 0; i < cp.size(); ++i)
        out.push_back(cp.has_context()
                          ? provider_->encode(cp.src[i], ProviderMode::document, cp.prev[i])
                          : provider_->encode(cp.src[i], ProviderMode::sentence));
    };
    fill(train_data, train_hb_);
    fill(valid_data, valid_hb_);
  }

  std::vector<std::vector<int>> tgt_only;
  tgt_only.reserve(train_enc_.size());
  for (const auto& e : train_enc_) tgt_only.push_back(e.tgt_out);
  batches_ = make_batches(tgt_only, cfg_.batch_tokens);
}

const ProviderOutput& Trainer::provider_state(std::size_t train_index) const {
  return train_hb_.empty() ? empty_hb_ : train_hb_[train_index];
}

const std::vector<std::size_t>& Trainer::epoch_order(std::uint64_t epoch) const {
  if (order_epoch_ != epoch) {
    order_.resize(batches_.size());
    std::iota(order_.begin(), order_.end(), 0);
    Rng rng(derive_seed(cfg_.seed, "order", epoch));
    rng.shuffle(order_);
    order_epoch_ = epoch;
  }
  return order_;
}

double Trainer::train_update() {
  const std::size_t n_layers = model_.config().layers;
  Rng dn_rng(derive_seed(cfg_.seed, "dropnet", step_));
  const DropNetSample dn =
      draw_dropnet(dn_rng, n_layers, n_layers, model_.config().dropnet_shared_draws);

  const std::uint64_t micro_base = step_ * cfg_.accum_steps;
  std::size_t total_tokens = 0;
  for (std::size_t a = 0; a < cfg_.accum_steps; ++a) {
    const std::uint64_t micro = micro_base + a;
    const auto& batch = batches_[epoch_order(micro / batches_.size())[micro % batches_.size()]];
    total_tokens += batch.tgt_tokens;
  }

  opt_.zero_grad();
  double weighted_loss = 0.0;
  for (std::size_t a = 0; a < cfg_.accum_steps; ++a) {
    const std::uint64_t micro = micro_base + a;
    const auto& batch = batches_[epoch_order(micro / batches_.size())[micro % batches_.size()]];
    Rng drop_rng(derive_seed(cfg_.seed, "dropout", micro));
    for (std::size_t s : batch.items) {
      const Encoded& e = train_enc_[s];
      const ProviderOutput& hb = provider_state(s);
      const EncoderState enc = model_.encode(e.src, hb, true, &dn, &drop_rng);
      Tensor logits = model_.decode_logits(enc, hb, e.tgt_in, true, &dn, &drop_rng);
      Tensor loss = nll_loss_rows(logits, e.tgt_out, cfg_.label_smoothing, -1);
      const double w =
          static_cast<double>(e.tgt_out.size()) / static_cast<double>(total_tokens);
      weighted_loss += loss.item() * w;
      backward(loss, w);
    }
  }
  const double lr = cfg_.schedule.lr_at(step_ + 1 + cfg_.lr_step_offset);
  opt_.step(lr);
  ++step_;
  return weighted_loss;
}

double Trainer::validation_loss() const {
  NoGradGuard ng;
  double weighted = 0.0;
  std::size_t total = 0;
  for (std::size_t i = 0; i < valid_enc_.size(); ++i) {
    const Encoded& e = valid_enc_[i];
    const ProviderOutput& hb = valid_hb_.empty() ? empty_hb_ : valid_hb_[i];
    const EncoderState enc = model_.encode(e.src, hb);
    Tensor logits = model_.decode_logits(enc, hb, e.tgt_in);
    Tensor loss = nll_loss_rows(logits, e.tgt_out, cfg_.label_smoothing, -1);
    weighted += loss.item() * static_cast<double>(e.tgt_out.size());
    total += e.tgt_out.size();
  }
  return weighted / static_cast<double>(total);
}

void Trainer::evaluate(TrainRunLog& log) {
  const double vloss = validation_loss();
  log.add(step_, "valid", "loss", vloss);

  const std::size_t n = std::min(cfg_.val_decode_limit, valid_enc_.size());
  std::vector<std::string> hyps, refs;
  hyps.reserve(n);
  refs.reserve(n);
  {
    NoGradGuard ng;
    for (std::size_t i = 0; i < n; ++i) {
      const ProviderOutput& hb = valid_hb_.empty() ? empty_hb_ : valid_hb_[i];
      const EncoderState enc = model_.encode(valid_enc_[i].src, hb);
      const Hypothesis h = greedy_decode(model_, enc, hb, cfg_.val_max_len);
      hyps.push_back(vocab_tgt_.decode(h.tokens));
      refs.push_back(valid_data_.tgt[i]);
    }
  }
  last_val_bleu_ = corpus_bleu(hyps, refs);
  last_val_seq_acc_ = sequence_accuracy(hyps, refs);
  log.add(step_, "valid", "bleu", last_val_bleu_);
  log.add(step_, "valid", "seq_acc", last_val_seq_acc_);

  if (!has_best_ || vloss < best_val_loss_) {
    best_val_loss_ = vloss;
    has_best_ = true;
    evals_since_best_ = 0;
  } else {
    ++evals_since_best_;
  }
  last_val_loss_ = vloss;
}

TrainResult Trainer::run(TrainRunLog& log) {
  TrainResult res;
  double train_loss = 0.0;
  std::uint64_t last_eval_step = ~0ULL;
  while (step_ < cfg_.max_steps) {
    train_loss = train_update();
    log.add(step_, "train", "loss", train_loss);
    if (step_ % cfg_.eval_every == 0) {
      evaluate(log);
      last_eval_step = step_;
      if (cfg_.patience > 0 && evals_since_best_ >= cfg_.patience) {
        res.early_stopped = true;
        break;
      }
    }
  }
  if (last_eval_step != step_) evaluate(log);
  res.final_step = step_;
  res.last_train_loss = train_loss;
  res.best_val_loss = best_val_loss_;
  res.last_val_loss = last_val_loss_;
  res.last_val_bleu = last_val_bleu_;
  res.last_val_seq_acc = last_val_seq_acc_;
  return res;
}

void Trainer::save_checkpoint(const std::string& path) const {
  Archive a;
  pack_params(model_.named_params(), a, "param.");
  opt_.pack_state(a, "opt.");
  a.scalars["train.step"] = step_;
  a.scalars["train.evals_since_best"] = evals_since_best_;
  a.scalars["train.has_best"] = has_best_ ? 1 : 0;
  a.scalars["train.best_val_bits"] = std::bit_cast<std::uint64_t>(best_val_loss_);
  a.scalars["train.seed"] = cfg_.seed;
  a.texts["config.model"] = config_fingerprint(model_.config());
  a.texts["config.train"] = train_config_fingerprint(cfg_);
  write_archive(path, a);
}

void Trainer::load_checkpoint(const std::string& path) {
  const Archive a = read_archive(path);
  auto expect_text = [&](const std::string& key, const std::string& want) {
    auto it = a.texts.find(key);
    if (it == a.texts.end()) throw std::runtime_error("checkpoint missing " + key);
    if (it->second != want)
      throw std::runtime_error("checkpoint " + key + " mismatch:\n  stored:  " + it->second +
                               "\n  current: " + want);
  };
  expect_text("config.model", config_fingerprint(model_.config()));
  expect_text("config.train", train_config_fingerprint(cfg_));

  NamedParams params = model_.named_params();
  unpack_params(a, params, "param.");
  opt_.load_state(a, "opt.");
  step_ = a.scalars.at("train.step");
  evals_since_best_ = a.scalars.at("train.evals_since_best");
  has_best_ = a.scalars.at("train.has_best") != 0;
  best_val_loss_ = std::bit_cast<double>(a.scalars.at("train.best_val_bits"));
}

std::vector<std::string> warm_start_copy(const NamedParams& source, FusedModel& target) {
  std::map<std::string, Tensor> by_name;
  for (const auto& [name, t] : source) by_name.emplace(name, t);

  std::vector<std::string> copied;
  std::vector<std::string> diffs;
  NamedParams dst = target.named_params();
  for (auto& [name, t] : dst) {
    auto it = by_name.find(name);
    if (it == by_name.end()) continue;
    if (it->second.shape() != t.shape()) {
      diffs.push_back(name + ": " + shape_str(it->second.shape()) + " vs " +
                      shape_str(t.shape()));
      continue;
    }
    std::copy(it->second.values().begin(), it->second.values().end(), t.data());
    copied.push_back(name);
  }
  if (!diffs.empty()) {
    std::string msg = "warm start shape mismatches:";
    for (const auto& d : diffs) msg += "\n  " + d;
    throw std::runtime_error(msg);
  }
  return copied;
}

}  // namespace ctxfuse
