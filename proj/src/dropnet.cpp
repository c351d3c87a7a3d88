#include "ctxfuse/dropnet.hpp"

#include <algorithm>
#include <stdexcept>
#include <string>

namespace ctxfuse {

DropNetSample draw_dropnet(Rng& rng, std::size_t enc_layers, std::size_t dec_layers,
                           bool shared_draws) {
  DropNetSample s;
  const std::size_t n = std::max(enc_layers, dec_layers);
  std::vector<double> u(n);
  for (auto& x : u) x = rng.uniform();
  s.enc_u.assign(u.begin(), u.begin() + static_cast<std::ptrdiff_t>(enc_layers));
  if (shared_draws) {
    s.dec_u.assign(u.begin(), u.begin() + static_cast<std::ptrdiff_t>(dec_layers));
  } else {
    s.dec_u.resize(dec_layers);
    for (auto& x : s.dec_u) x = rng.uniform();
  }
  return s;
}

BranchChoice dropnet_choice(double u, double p_net) {
  if (!(u >= 0.0 && u <= 1.0))
    throw std::invalid_argument("drop-net: draw " + std::to_string(u) + " outside [0,1]");
  if (!(p_net >= 0.0 && p_net <= 1.0))
    throw std::invalid_argument("drop-net: rate " + std::to_string(p_net) + " outside [0,1]");
  if (u < p_net / 2.0) return BranchChoice::first_only;
  if (u > 1.0 - p_net / 2.0) return BranchChoice::second_only;
  return BranchChoice::both;
}

Tensor combine_train(Tensor a, Tensor b, double u, double p_net) {
  if (a.shape() != b.shape())
    throw std::invalid_argument("drop-net: branch shapes " + shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
  switch (dropnet_choice(u, p_net)) {
    case BranchChoice::first_only:
      return a;
    case BranchChoice::second_only:
      return b;
    case BranchChoice::both:
      break;
  }
  return combine_eval(std::move(a), std::move(b));
}

Tensor combine_eval(Tensor a, Tensor b) {
  if (a.shape() != b.shape())
    throw std::invalid_argument("drop-net: branch shapes " + shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
  return scale(add(std::move(a), std::move(b)), 0.5);
}

}  // namespace ctxfuse
