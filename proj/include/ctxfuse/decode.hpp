#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "ctxfuse/data.hpp"
#include "ctxfuse/model.hpp"
#include "ctxfuse/provider.hpp"

namespace ctxfuse {

struct Hypothesis {
  std::vector<int> tokens;   // generated content ids (no BOS/EOS)
  double logp = 0.0;         // cumulative, includes the end-of-sequence term once finished
  bool finished = false;
  bool forced_stop = false;  // completed by hitting max_len rather than by choosing EOS
};

struct DecodeConfig {
  std::size_t beam = 5;
  double alpha = 1.0;  // length-penalty exponent
  std::size_t max_len = 32;

  void validate() const;
};

// ((5 + len) / 6)^alpha
double length_penalty(std::size_t len, double alpha);

// Beam search over content tokens plus end-of-sequence. Keeps the `beam`
// best unfinished prefixes per step; every end-of-sequence expansion is
// scored into the finished pool, and prefixes still alive at max_len are
// completed there with their end-of-sequence term and flagged. Final
// ranking divides cumulative log-probability by the length penalty; ties
// prefer the shorter, then lexicographically smaller token sequence.
// Outputs are non-empty by construction. Fully deterministic.
Hypothesis beam_search(const FusedModel& model, const EncoderState& enc, const ProviderOutput& hb,
                       const DecodeConfig& dc);

// argmax token per step until end-of-sequence. beam=1 with alpha=0 follows
// the same content path but ranks every prefix's stop from its finished
// pool, so its result never scores below the greedy one.
Hypothesis greedy_decode(const FusedModel& model, const EncoderState& enc,
                         const ProviderOutput& hb, std::size_t max_len);

// Full pipeline for one corpus: encode each source (through the provider
// when the model reads it; in doc mode the preceding sentence joins the
// provider input), run beam search, detokenize. `provider` may be null for
// models that never read it.
std::vector<std::string> translate_corpus(const FusedModel& model, const Provider* provider,
                                          const std::vector<std::string>& src_lines,
                                          const std::vector<std::string>& prev_lines,
                                          const Vocab& vocab_src, const Vocab& vocab_tgt,
                                          const DecodeConfig& dc);

// Corpus-level BLEU on whitespace tokens: geometric mean of clipped n-gram
// precisions (n <= max_n) times the brevity penalty, scaled to [0, 100].
// No smoothing: any n-gram order with zero matches collapses the score to 0.
double corpus_bleu(const std::vector<std::string>& hyps, const std::vector<std::string>& refs,
                   std::size_t max_n = 4);

// fraction of hypotheses whose word sequence equals the reference exactly
double sequence_accuracy(const std::vector<std::string>& hyps,
                         const std::vector<std::string>& refs);

struct TimingReport {
  double baseline_seconds = 0.0;
  double fused_seconds = 0.0;
  double ratio = 0.0;  // fused/baseline - 1
};

// Decodes the corpus with both models under identical settings, one warm-up
// pass each (discarded) plus `repetitions` timed passes, and reports the
// median wall time per corpus. Provider encoding is part of the timed work
// for a model that reads it.
TimingReport timing_harness(const FusedModel& baseline, const Provider* baseline_provider,
                            const FusedModel& fused, const Provider* fused_provider,
                            const std::vector<std::string>& src_lines,
                            const std::vector<std::string>& prev_lines, const Vocab& vocab_src,
                            const Vocab& vocab_tgt, const DecodeConfig& dc,
                            std::size_t repetitions);

}  // namespace ctxfuse
