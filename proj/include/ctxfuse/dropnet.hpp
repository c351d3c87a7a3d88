#pragma once

#include <cstddef>
#include <vector>

#include "ctxfuse/rng.hpp"
#include "ctxfuse/tensor.hpp"

namespace ctxfuse {

// Per-iteration uniform draws for the stochastic branch combinator: one draw
// per encoder layer and one per decoder layer, shared across every position
// within the layer, redrawn every training iteration.
struct DropNetSample {
  std::vector<double> enc_u;
  std::vector<double> dec_u;
};

// shared_draws reuses the encoder draw for the decoder layer of the same
// index (both stacks usually have the same depth)
DropNetSample draw_dropnet(Rng& rng, std::size_t enc_layers, std::size_t dec_layers,
                           bool shared_draws = false);

enum class BranchChoice { first_only, second_only, both };

// u < p/2 -> first branch alone; u > 1 - p/2 -> second branch alone;
// otherwise both, averaged
BranchChoice dropnet_choice(double u, double p_net);

// training-time combination: the selected branch passes through with
// coefficient 1, the averaged case is exactly (a + b) / 2
Tensor combine_train(Tensor a, Tensor b, double u, double p_net);

// inference-time expectation, independent of p_net: exactly (a + b) / 2
Tensor combine_eval(Tensor a, Tensor b);

}  // namespace ctxfuse
