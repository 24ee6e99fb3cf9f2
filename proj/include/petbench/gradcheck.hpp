#pragma once

#include "petbench/tensor.hpp"

#include <cstdint>
#include <functional>
#include <span>
#include <string>

namespace petbench {

struct GradcheckOptions {
  double eps = 1e-4;
  // Coordinates probed per parameter tensor; 0 probes every coordinate.
  // Larger tensors are sampled deterministically from `seed`.
  Index max_probes_per_param = 0;
  std::uint64_t seed = 42;
};

struct GradcheckResult {
  double max_discrepancy = 0.0;
  std::string worst_param;
  Index worst_index = -1;
  Index probes = 0;
};

/// Compares reverse-mode gradients of `f` against central differences. `f`
/// must recompute the scalar loss from the current values of `params`, and
/// must be deterministic. The discrepancy of one coordinate is
/// |analytic - numeric| / max(1, |analytic|, |numeric|).
///
/// Throws NumericError when `f` is non-finite at a probe point.
GradcheckResult finite_diff_gradcheck(const std::function<Tensor<double>()>& f, std::span<Tensor<double>> params,
                                      const GradcheckOptions& options = {},
                                      std::span<const std::string> names = {});

}  // namespace petbench
