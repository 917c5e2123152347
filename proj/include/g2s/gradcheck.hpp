#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "g2s/tensor.hpp"

namespace g2s {

/// Piecewise-smooth region signature of a function at the current inputs.
/// A finite-difference stencil that changes it is left out.
using RegimeFn = std::function<std::vector<std::uint8_t>()>;

struct GradcheckOptions {
  double step = 1e-5;
  double tolerance = 1e-3;
  /// Relative error is |a - n| / max(|a|, |n|, floor).
  double floor = 1e-6;
  std::size_t instances = 20;
  std::uint64_t seed = 0;
};

struct GradcheckCase {
  std::string name;
  std::size_t instances = 0;
  std::size_t compared = 0;
  std::size_t excluded = 0;
  double max_rel_error = 0.0;
};

struct GradcheckResult {
  std::string module;
  std::vector<GradcheckCase> cases;
  double seconds = 0.0;

  double max_rel_error() const;
  bool passed(double tolerance) const;
};

/// "autodiff", "chamfer", "gsplat", "losses".
const std::vector<std::string>& gradcheck_modules();

/// Compares backward() against central differences of `build` for every
/// element of every leaf, accumulating into `acc`.
void compare_gradients(const std::function<Tensor()>& build,
                       const std::vector<Tensor>& leaves, const GradcheckOptions& opts,
                       GradcheckCase& acc, const RegimeFn& regime = {});

/// Throws std::invalid_argument for an unknown module.
GradcheckResult run_gradcheck(const std::string& module, const GradcheckOptions& opts = {});

}  // namespace g2s
