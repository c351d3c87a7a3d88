#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ctxfuse/data.hpp"
#include "ctxfuse/model.hpp"
#include "ctxfuse/optim.hpp"
#include "ctxfuse/provider.hpp"
#include "ctxfuse/serialize.hpp"

namespace ctxfuse {

// Training curves as CSV rows; the step column never decreases.
class TrainRunLog {
 public:
  struct Row {
    std::uint64_t step;
    std::string split;   // "train" / "valid"
    std::string metric;  // "loss" / "bleu" / "seq_acc"
    double value;
  };

  void add(std::uint64_t step, std::string split, std::string metric, double value);
  void write_csv(const std::string& path) const;  // header: step,split,metric,value
  const std::vector<Row>& rows() const { return rows_; }

 private:
  std::vector<Row> rows_;
};

struct TrainConfig {
  std::uint64_t max_steps = 2000;  // parameter updates
  std::size_t batch_tokens = 256;  // target tokens per micro-batch (length-sorted buckets)
  std::size_t accum_steps = 1;     // micro-batches per update
  double label_smoothing = 0.1;
  LrSchedule schedule;
  AdamConfig adam;
  std::uint64_t eval_every = 100;     // validation cadence in updates
  std::size_t patience = 5;           // stop after this many evals without val-loss
                                      // improvement; 0 disables early stopping
  std::size_t val_decode_limit = 200;  // sentences decoded for valid bleu/seq_acc
  std::size_t val_max_len = 32;
  std::uint64_t lr_step_offset = 0;  // warm-started runs may continue the schedule
  std::uint64_t seed = 1;

  void validate() const;
};

std::string train_config_fingerprint(const TrainConfig& cfg);

// Deterministic length-sorted token-count bucketing: sentences sorted by
// (target length, index), grouped greedily so each batch holds at most
// batch_tokens target tokens (always at least one sentence).
struct Batch {
  std::vector<std::size_t> items;
  std::size_t tgt_tokens = 0;
};
std::vector<Batch> make_batches(const std::vector<std::vector<int>>& tgt_out,
                                std::size_t batch_tokens);

struct TrainResult {
  std::uint64_t final_step = 0;
  double last_train_loss = 0.0;
  double best_val_loss = 0.0;
  double last_val_loss = 0.0;
  double last_val_bleu = 0.0;
  double last_val_seq_acc = 0.0;
  bool early_stopped = false;
};

// One-model training driver: token-mean label-smoothed NLL, Adam with the
// warmup/decay schedule, drop-net and dropout streams re-derived per step so
// a resumed run is bit-identical to an unbroken one. Provider states are
// precomputed once per corpus (the provider is frozen).
class Trainer {
 public:
  Trainer(FusedModel& model, const Provider* provider, const ParallelCorpus& train_data,
          const ParallelCorpus& valid_data, const Vocab& vocab_src, const Vocab& vocab_tgt,
          TrainConfig cfg);

  TrainResult run(TrainRunLog& log);

  void save_checkpoint(const std::string& path) const;
  void load_checkpoint(const std::string& path);  // rejects mismatched configs

  std::uint64_t step() const { return step_; }
  double validation_loss() const;  // eval-mode token-mean loss over the full valid split

 private:
  struct Encoded {
    std::vector<int> src;     // words + EOS
    std::vector<int> tgt_in;  // BOS + words
    std::vector<int> tgt_out; // words + EOS
  };

  double train_update();  // one optimizer step; returns the batch token-mean loss
  void evaluate(TrainRunLog& log);
  const ProviderOutput& provider_state(std::size_t train_index) const;

  FusedModel& model_;
  const Provider* provider_;
  const ParallelCorpus& valid_data_;
  const Vocab& vocab_src_;
  const Vocab& vocab_tgt_;
  TrainConfig cfg_;

  std::vector<Encoded> train_enc_;
  std::vector<Encoded> valid_enc_;
  std::vector<ProviderOutput> train_hb_;  // empty when the model ignores the provider
  std::vector<ProviderOutput> valid_hb_;
  ProviderOutput empty_hb_;
  std::vector<Batch> batches_;

  AdamW opt_;
  std::uint64_t step_ = 0;
  double best_val_loss_ = 0.0;
  bool has_best_ = false;
  std::uint64_t evals_since_best_ = 0;
  double last_val_loss_ = 0.0;
  double last_val_bleu_ = 0.0;
  double last_val_seq_acc_ = 0.0;

  // per-epoch batch order, derived from (seed, epoch)
  mutable std::vector<std::size_t> order_;
  mutable std::uint64_t order_epoch_ = ~0ULL;
  const std::vector<std::size_t>& epoch_order(std::uint64_t epoch) const;
};

// Copies every parameter of `source` whose name also exists in `target`
// (shapes must agree; mismatches are collected into one error). Names
// missing from `source` — the fusion modules — keep their fresh
// initialization. Returns the copied names.
std::vector<std::string> warm_start_copy(const NamedParams& source, FusedModel& target);

}  // namespace ctxfuse
