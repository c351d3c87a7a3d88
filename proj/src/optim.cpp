#include "ctxfuse/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace ctxfuse {

double LrSchedule::lr_at(std::uint64_t step) const {
  if (step == 0) throw std::invalid_argument("lr_at: steps are 1-based");
  if (step >= warmup_steps)
    return peak * std::sqrt(static_cast<double>(warmup_steps) / static_cast<double>(step));
  return warmup_init + (peak - warmup_init) * static_cast<double>(step) /
                           static_cast<double>(warmup_steps);
}

AdamW::AdamW(NamedParams params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
  if (params_.empty()) throw std::invalid_argument("optimizer: no parameters");
  for (const auto& [name, p] : params_) {
    if (!p.tracked())
      throw std::invalid_argument("optimizer: parameter '" + name +
                                  "' is not tracked (frozen tensors cannot be optimized)");
    m_.emplace_back(p.size(), 0.0);
    v_.emplace_back(p.size(), 0.0);
  }
}

void AdamW::step(double lr) {
  ++step_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
  for (std::size_t pi = 0; pi < params_.size(); ++pi) {
    Tensor p = params_[pi].second;
    const double* g = p.grad();
    double* w = p.data();
    double* m = m_[pi].data();
    double* v = v_[pi].data();
    for (std::size_t i = 0; i < p.size(); ++i) {
      if (!std::isfinite(g[i]))
        throw std::runtime_error("optimizer: non-finite gradient in '" + params_[pi].first + "'");
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
      const double m_hat = m[i] / bc1;
      const double v_hat = v[i] / bc2;
      w[i] -= lr * (m_hat / (std::sqrt(v_hat) + cfg_.eps) + cfg_.weight_decay * w[i]);
    }
  }
}

void AdamW::zero_grad() {
  for (auto& [name, p] : params_) p.zero_grad();
}

void AdamW::pack_state(Archive& a, const std::string& prefix) const {
  a.scalars[prefix + "step"] = step_;
  for (std::size_t pi = 0; pi < params_.size(); ++pi) {
    a.sections[prefix + "m." + params_[pi].first] = m_[pi];
    a.sections[prefix + "v." + params_[pi].first] = v_[pi];
  }
}

void AdamW::load_state(const Archive& a, const std::string& prefix) {
  auto it = a.scalars.find(prefix + "step");
  if (it == a.scalars.end()) throw std::runtime_error("optimizer: archive lacks step counter");
  step_ = it->second;
  for (std::size_t pi = 0; pi < params_.size(); ++pi) {
    for (auto [buf, tag] : {std::pair{&m_[pi], "m."}, std::pair{&v_[pi], "v."}}) {
      const std::string key = prefix + tag + params_[pi].first;
      auto sec = a.sections.find(key);
      if (sec == a.sections.end())
        throw std::runtime_error("optimizer: archive lacks section '" + key + "'");
      if (sec->second.size() != buf->size())
        throw std::runtime_error("optimizer: section '" + key + "' size mismatch");
      *buf = sec->second;
    }
  }
}

}  // namespace ctxfuse
