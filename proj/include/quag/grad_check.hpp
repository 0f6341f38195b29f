#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "quag/tensor.hpp"

namespace quag {

struct GradCheckOptions {
  double step = 1e-3;
  // Coordinates sampled per parameter; 0 checks every coordinate.
  std::size_t max_coords_per_param = 0;
  std::uint64_t seed = 0;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t coords_checked = 0;
};

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

// Compares reverse-mode gradients of a scalar-valued f against central
// differences. Relative error per coordinate is
// |analytic - numeric| / max(1, |analytic|, |numeric|). Runs in f64 precision.
GradCheckResult grad_check(const std::function<Tensor()>& f, const NamedTensors& params,
                           const GradCheckOptions& options = {});
GradCheckResult grad_check(const std::function<Tensor()>& f, const std::vector<Tensor>& params,
                           const GradCheckOptions& options = {});

// Identity in the forward pass whose backward rule multiplies the incoming
// gradient by `factor`. A deliberately wrong op for negative-control checks.
Tensor corrupt_backward(const Tensor& x, double factor);

}  // namespace quag
