#pragma once

#include <cstdint>
#include <string>

#include "ctxfuse/nn.hpp"
#include "ctxfuse/serialize.hpp"

namespace ctxfuse {

// Linear warmup from warmup_init to peak over warmup_steps, then inverse-
// square-root decay peak * sqrt(warmup_steps / step). The boundary step uses
// the decay branch, so lr_at(warmup_steps) == peak exactly.
struct LrSchedule {
  double warmup_init = 1e-7;
  double peak = 5e-4;
  std::uint64_t warmup_steps = 4000;

  double lr_at(std::uint64_t step) const;  // step >= 1
};

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-8;
  double weight_decay = 1e-4;  // decoupled: applied to the parameter, not the moments
};

// Adam with bias correction and decoupled weight decay. Owns first/second
// moment buffers keyed by parameter name; the parameter tensors themselves
// stay owned by the model. Gradients are read from each tensor's grad buffer
// and are NOT cleared by step() — the caller zeroes them before accumulating
// the next batch.
class AdamW {
 public:
  AdamW(NamedParams params, AdamConfig cfg = {});

  // applies one update at the given learning rate; throws on non-finite
  // gradients, naming the parameter
  void step(double lr);
  void zero_grad();

  std::uint64_t step_count() const { return step_; }
  const NamedParams& params() const { return params_; }

  // moments + step counter, for bit-exact training resume
  void pack_state(Archive& a, const std::string& prefix = "opt.") const;
  void load_state(const Archive& a, const std::string& prefix = "opt.");

 private:
  NamedParams params_;
  AdamConfig cfg_;
  std::vector<std::vector<double>> m_, v_;
  std::uint64_t step_ = 0;
};

}  // namespace ctxfuse
