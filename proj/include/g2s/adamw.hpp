#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "g2s/tensor.hpp"

namespace g2s {

struct AdamWOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.05;
};

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

/// Adam with decoupled weight decay. Parameters may be split into groups
/// with their own learning rate and decay.
class AdamW {
 public:
  explicit AdamW(AdamWOptions defaults = {}) : defaults_(defaults) {}
  AdamW(const std::vector<NamedTensor>& params, AdamWOptions defaults);

  void add_group(const std::vector<NamedTensor>& params, double lr,
                 double weight_decay);
  void add_group(const std::vector<NamedTensor>& params) {
    add_group(params, defaults_.lr, defaults_.weight_decay);
  }

  /// Applies one update. Every parameter must carry a gradient.
  void step(bool zero_grad_after = false);
  /// Sets every parameter gradient to zeros.
  void zero_grad();

  std::uint64_t step_count() const { return steps_; }
  const AdamWOptions& defaults() const { return defaults_; }
  void set_lr(double lr);

  std::size_t parameter_count() const { return slots_.size(); }
  const std::vector<double>& first_moment(std::size_t i) const {
    return slots_.at(i).m;
  }
  const std::vector<double>& second_moment(std::size_t i) const {
    return slots_.at(i).v;
  }

 private:
  struct Slot {
    std::string name;
    Tensor param;
    double lr;
    double weight_decay;
    std::vector<double> m;
    std::vector<double> v;
  };

  AdamWOptions defaults_;
  std::vector<Slot> slots_;
  std::uint64_t steps_ = 0;
};

}  // namespace g2s
