#include "g2s/adamw.hpp"

#include <cmath>
#include <stdexcept>

namespace g2s {

AdamW::AdamW(const std::vector<NamedTensor>& params, AdamWOptions defaults)
    : defaults_(defaults) {
  add_group(params);
}

void AdamW::add_group(const std::vector<NamedTensor>& params, double lr,
                      double weight_decay) {
  for (const auto& p : params) {
    if (!p.tensor.is_leaf()) {
      throw std::invalid_argument("AdamW: parameter '" + p.name +
                                  "' is not a leaf tensor");
    }
    const std::size_t n = p.tensor.numel();
    slots_.push_back(Slot{p.name, p.tensor, lr, weight_decay,
                          std::vector<double>(n, 0.0),
                          std::vector<double>(n, 0.0)});
  }
}

void AdamW::set_lr(double lr) {
  defaults_.lr = lr;
  for (auto& s : slots_) s.lr = lr;
}

void AdamW::step(bool zero_grad_after) {
  for (const auto& s : slots_) {
    if (!s.param.has_grad()) {
      throw std::runtime_error("adamw_step: parameter '" + s.name +
                               "' has no gradient");
    }
  }
  ++steps_;
  const double t = static_cast<double>(steps_);
  const double bc1 = 1.0 - std::pow(defaults_.beta1, t);
  const double bc2 = 1.0 - std::pow(defaults_.beta2, t);
  const double b1 = defaults_.beta1, b2 = defaults_.beta2;
  for (auto& s : slots_) {
    auto p = s.param.mutable_data();
    auto g = s.param.grad();
    const double decay = 1.0 - s.lr * s.weight_decay;
    for (std::size_t i = 0; i < p.size(); ++i) {
      p[i] *= decay;
      s.m[i] = b1 * s.m[i] + (1.0 - b1) * g[i];
      s.v[i] = b2 * s.v[i] + (1.0 - b2) * g[i] * g[i];
      const double m_hat = s.m[i] / bc1;
      const double v_hat = s.v[i] / bc2;
      p[i] -= s.lr * m_hat / (std::sqrt(v_hat) + defaults_.eps);
    }
  }
  if (zero_grad_after) zero_grad();
}

void AdamW::zero_grad() {
  for (auto& s : slots_) {
    auto g = s.param.mutable_grad();
    std::fill(g.begin(), g.end(), 0.0);
  }
}

}  // namespace g2s
