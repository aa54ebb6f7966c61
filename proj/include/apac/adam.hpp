#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

namespace apac {

struct AdamConfig {
  double learning_rate = 4e-4;
  double beta1 = 0.5;
  double beta2 = 0.9;
  double weight_decay = 1e-4;
  double guard = 1e-8;
};

struct AdamState {
  AdamConfig config;
  std::vector<double> m;
  std::vector<double> v;
  std::uint64_t step = 0;

  static AdamState zeros(std::size_t n, const AdamConfig& cfg) {
    return {cfg, std::vector<double>(n, 0.0), std::vector<double>(n, 0.0), 0};
  }
};

// Adam with coupled L2 weight decay (the decay term joins the gradient before
// the moment updates).
inline void adam_step(AdamState& s, std::span<double> params, std::span<const double> grads) {
  if (params.size() != grads.size() || s.m.size() != params.size() || s.v.size() != params.size())
    throw std::invalid_argument("adam_step: shape mismatch");
  const AdamConfig& c = s.config;
  ++s.step;
  const double k = static_cast<double>(s.step);
  const double correct1 = 1.0 - std::pow(c.beta1, k);
  const double correct2 = 1.0 - std::pow(c.beta2, k);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i] + c.weight_decay * params[i];
    s.m[i] = c.beta1 * s.m[i] + (1.0 - c.beta1) * g;
    s.v[i] = c.beta2 * s.v[i] + (1.0 - c.beta2) * g * g;
    const double m_hat = s.m[i] / correct1;
    const double v_hat = s.v[i] / correct2;
    params[i] -= c.learning_rate * m_hat / (std::sqrt(v_hat) + c.guard);
  }
}

}  // namespace apac
