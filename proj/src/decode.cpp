#include "ctxfuse/decode.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <stdexcept>
#include <unordered_map>

namespace ctxfuse {
namespace {

// candidate ordering while the beam is still growing: raw log-probability,
// lexicographic tokens as the deterministic tie-break (equal lengths here)
bool better_candidate(const Hypothesis& a, const Hypothesis& b) {
  if (a.logp != b.logp) return a.logp > b.logp;
  return a.tokens < b.tokens;
}

double final_score(const Hypothesis& h, double alpha) {
  return h.logp / length_penalty(h.tokens.size(), alpha);
}

bool better_final(const Hypothesis& a, const Hypothesis& b, double alpha) {
  const double sa = final_score(a, alpha), sb = final_score(b, alpha);
  if (sa != sb) return sa > sb;
  if (a.tokens.size() != b.tokens.size()) return a.tokens.size() < b.tokens.size();
  return a.tokens < b.tokens;
}

std::vector<int> with_bos(const std::vector<int>& tokens) {
  std::vector<int> prefix;
  prefix.reserve(tokens.size() + 1);
  prefix.push_back(tok_id::bos);
  prefix.insert(prefix.end(), tokens.begin(), tokens.end());
  return prefix;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

void DecodeConfig::validate() const {
  if (beam < 1) throw std::invalid_argument("beam width must be at least 1");
  if (alpha < 0.0) throw std::invalid_argument("length-penalty exponent must be non-negative");
  if (max_len < 1) throw std::invalid_argument("max_len must be at least 1");
}

double length_penalty(std::size_t len, double alpha) {
  return std::pow((5.0 + static_cast<double>(len)) / 6.0, alpha);
}

Hypothesis beam_search(const FusedModel& model, const EncoderState& enc, const ProviderOutput& hb,
                       const DecodeConfig& dc) {
  dc.validate();
  const int vocab = static_cast<int>(model.config().tgt_vocab);

  std::vector<Hypothesis> live{Hypothesis{}};
  std::vector<Hypothesis> pool;

  for (std::size_t step = 0; step < dc.max_len; ++step) {
    std::vector<Hypothesis> candidates;
    for (const auto& h : live) {
      const auto lp = model.next_logprobs(enc, hb, with_bos(h.tokens));
      // empty outputs are not allowed, so end-of-sequence needs a token first
      if (!h.tokens.empty()) {
        Hypothesis done = h;
        done.logp += lp[static_cast<std::size_t>(tok_id::eos)];
        done.finished = true;
        pool.push_back(std::move(done));
      }
      for (int t = tok_id::first_content; t < vocab; ++t) {
        Hypothesis next = h;
        next.tokens.push_back(t);
        next.logp += lp[static_cast<std::size_t>(t)];
        candidates.push_back(std::move(next));
      }
    }
    std::sort(candidates.begin(), candidates.end(), better_candidate);
    if (candidates.size() > dc.beam) candidates.resize(dc.beam);
    live = std::move(candidates);
    if (live.empty()) break;
  }

  // prefixes that reached max_len close with their end-of-sequence term
  for (const auto& h : live) {
    const auto lp = model.next_logprobs(enc, hb, with_bos(h.tokens));
    Hypothesis done = h;
    done.logp += lp[static_cast<std::size_t>(tok_id::eos)];
    done.finished = true;
    done.forced_stop = true;
    pool.push_back(std::move(done));
  }

  if (pool.empty()) throw std::runtime_error("beam search produced no hypothesis");
  const Hypothesis* best = &pool.front();
  for (const auto& h : pool)
    if (better_final(h, *best, dc.alpha)) best = &h;
  return *best;
}

Hypothesis greedy_decode(const FusedModel& model, const EncoderState& enc,
                         const ProviderOutput& hb, std::size_t max_len) {
  if (max_len < 1) throw std::invalid_argument("max_len must be at least 1");
  Hypothesis h;
  for (std::size_t step = 0; step < max_len; ++step) {
    const auto lp = model.next_logprobs(enc, hb, with_bos(h.tokens));
    int best = tok_id::first_content;
    double best_lp = lp[static_cast<std::size_t>(best)];
    for (int t = tok_id::first_content + 1; t < static_cast<int>(lp.size()); ++t)
      if (lp[static_cast<std::size_t>(t)] > best_lp) {
        best = t;
        best_lp = lp[static_cast<std::size_t>(t)];
      }
    if (!h.tokens.empty() && lp[static_cast<std::size_t>(tok_id::eos)] > best_lp) {
      h.logp += lp[static_cast<std::size_t>(tok_id::eos)];
      h.finished = true;
      return h;
    }
    h.tokens.push_back(best);
    h.logp += best_lp;
  }
  const auto lp = model.next_logprobs(enc, hb, with_bos(h.tokens));
  h.logp += lp[static_cast<std::size_t>(tok_id::eos)];
  h.finished = true;
  h.forced_stop = true;
  return h;
}

std::vector<std::string> translate_corpus(const FusedModel& model, const Provider* provider,
                                          const std::vector<std::string>& src_lines,
                                          const std::vector<std::string>& prev_lines,
                                          const Vocab& vocab_src, const Vocab& vocab_tgt,
                                          const DecodeConfig& dc) {
  dc.validate();
  const bool wants_provider = needs_provider(model.config());
  if (wants_provider && provider == nullptr)
    throw std::invalid_argument("model reads provider states but no provider was given");
  if (!prev_lines.empty() && prev_lines.size() != src_lines.size())
    throw std::invalid_argument("context column size mismatch");

  std::vector<std::string> out;
  out.reserve(src_lines.size());
  ProviderOutput empty_hb;
  for (std::size_t i = 0; i < src_lines.size(); ++i) {
    ProviderOutput hb;
    if (wants_provider) {
      hb = prev_lines.empty()
               ? provider->encode(src_lines[i], ProviderMode::sentence)
               : provider->encode(src_lines[i], ProviderMode::document, prev_lines[i]);
    }
    std::vector<int> src = vocab_src.encode(src_lines[i]);
    src.push_back(tok_id::eos);
    const EncoderState enc = model.encode(src, wants_provider ? hb : empty_hb);
    const Hypothesis best = beam_search(model, enc, wants_provider ? hb : empty_hb, dc);
    out.push_back(vocab_tgt.decode(best.tokens));
  }
  return out;
}

double corpus_bleu(const std::vector<std::string>& hyps, const std::vector<std::string>& refs,
                   std::size_t max_n) {
  if (hyps.empty() || hyps.size() != refs.size())
    throw std::invalid_argument("corpus_bleu needs equal-sized non-empty corpora");
  if (max_n < 1) throw std::invalid_argument("max_n must be at least 1");

  std::vector<double> matches(max_n, 0.0), totals(max_n, 0.0);
  double hyp_len = 0.0, ref_len = 0.0;

  for (std::size_t i = 0; i < hyps.size(); ++i) {
    const auto h = split_words(hyps[i]);
    const auto r = split_words(refs[i]);
    hyp_len += static_cast<double>(h.size());
    ref_len += static_cast<double>(r.size());
    for (std::size_t n = 1; n <= max_n; ++n) {
      if (h.size() < n) continue;
      std::unordered_map<std::string, long> ref_counts;
      for (std::size_t j = 0; j + n <= r.size(); ++j) {
        std::string gram;
        for (std::size_t k = 0; k < n; ++k) gram += r[j + k] + '\x1f';
        ++ref_counts[gram];
      }
      std::unordered_map<std::string, long> hyp_counts;
      for (std::size_t j = 0; j + n <= h.size(); ++j) {
        std::string gram;
        for (std::size_t k = 0; k < n; ++k) gram += h[j + k] + '\x1f';
        ++hyp_counts[gram];
      }
      for (const auto& [gram, cnt] : hyp_counts) {
        totals[n - 1] += static_cast<double>(cnt);
        auto it = ref_counts.find(gram);
        if (it != ref_counts.end())
          matches[n - 1] += static_cast<double>(std::min(cnt, it->second));
      }
    }
  }

  if (hyp_len == 0.0) return 0.0;
  double log_prec = 0.0;
  for (std::size_t n = 0; n < max_n; ++n) {
    if (matches[n] == 0.0 || totals[n] == 0.0) return 0.0;
    log_prec += std::log(matches[n] / totals[n]) / static_cast<double>(max_n);
  }
  const double bp = hyp_len >= ref_len ? 1.0 : std::exp(1.0 - ref_len / hyp_len);
  return 100.0 * bp * std::exp(log_prec);
}

double sequence_accuracy(const std::vector<std::string>& hyps,
                         const std::vector<std::string>& refs) {
  if (hyps.empty() || hyps.size() != refs.size())
    throw std::invalid_argument("sequence_accuracy needs equal-sized non-empty corpora");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < hyps.size(); ++i)
    if (split_words(hyps[i]) == split_words(refs[i])) ++correct;
  return static_cast<double>(correct) / static_cast<double>(hyps.size());
}

TimingReport timing_harness(const FusedModel& baseline, const Provider* baseline_provider,
                            const FusedModel& fused, const Provider* fused_provider,
                            const std::vector<std::string>& src_lines,
                            const std::vector<std::string>& prev_lines, const Vocab& vocab_src,
                            const Vocab& vocab_tgt, const DecodeConfig& dc,
                            std::size_t repetitions) {
  if (repetitions < 1) throw std::invalid_argument("repetitions must be at least 1");
  if (src_lines.empty()) throw std::invalid_argument("timing corpus must be non-empty");

  auto run = [&](const FusedModel& m, const Provider* p) {
    std::vector<double> secs;
    for (std::size_t rep = 0; rep <= repetitions; ++rep) {  // first pass is warm-up
      const auto t0 = std::chrono::steady_clock::now();
      translate_corpus(m, p, src_lines, prev_lines, vocab_src, vocab_tgt, dc);
      const auto t1 = std::chrono::steady_clock::now();
      if (rep > 0) secs.push_back(std::chrono::duration<double>(t1 - t0).count());
    }
    return median(std::move(secs));
  };

  TimingReport report;
  report.baseline_seconds = run(baseline, baseline_provider);
  report.fused_seconds = run(fused, fused_provider);
  if (report.baseline_seconds <= 0.0 || report.fused_seconds <= 0.0)
    throw std::runtime_error("non-positive timing measurement");
  report.ratio = report.fused_seconds / report.baseline_seconds - 1.0;
  return report;
}

}  // namespace ctxfuse
