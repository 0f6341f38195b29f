#include "quag/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace quag {

namespace {

double eval_scalar(const std::function<Tensor()>& f) {
  NoGradScope no_grad;
  const Tensor out = f();
  if (out.numel() != 1) {
    throw ShapeError("grad_check: function output is not scalar: " + shape_string(out.shape()));
  }
  return out.item();
}

}  // namespace

GradCheckResult grad_check(const std::function<Tensor()>& f, const NamedTensors& params,
                           const GradCheckOptions& options) {
  if (options.step < 1e-4 || options.step > 1e-2) {
    throw std::invalid_argument("grad_check: step must lie in [1e-4, 1e-2]");
  }
  PrecisionScope precision(Precision::F64);

  std::vector<Tensor> leaves;
  for (const auto& [name, t] : params) {
    Tensor leaf = t;
    leaf.set_requires_grad(true);
    leaf.zero_grad();
    leaves.push_back(leaf);
  }
  const Tensor out = f();
  if (out.numel() != 1) {
    throw ShapeError("grad_check: function output is not scalar: " + shape_string(out.shape()));
  }
  out.backward();

  GradCheckResult result;
  std::mt19937_64 rng(options.seed);
  const double h = options.step;
  for (std::size_t p = 0; p < leaves.size(); ++p) {
    Tensor& leaf = leaves[p];
    const std::vector<double> analytic(leaf.grad().begin(), leaf.grad().end());
    std::vector<std::size_t> coords(leaf.numel());
    std::iota(coords.begin(), coords.end(), 0);
    if (options.max_coords_per_param != 0 && coords.size() > options.max_coords_per_param) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(options.max_coords_per_param);
      std::sort(coords.begin(), coords.end());
    }
    auto values = leaf.mutable_data();
    for (std::size_t i : coords) {
      const double original = values[i];
      values[i] = original + h;
      const double plus = eval_scalar(f);
      values[i] = original - h;
      const double minus = eval_scalar(f);
      values[i] = original;
      const double numeric = (plus - minus) / (2.0 * h);
      const double denom = std::max({1.0, std::abs(analytic[i]), std::abs(numeric)});
      const double rel = std::abs(analytic[i] - numeric) / denom;
      ++result.coords_checked;
      if (rel > result.max_rel_error || result.worst_param.empty()) {
        if (rel >= result.max_rel_error) {
          result.max_rel_error = rel;
          result.worst_param = params[p].first;
          result.worst_index = i;
          result.worst_analytic = analytic[i];
          result.worst_numeric = numeric;
        }
      }
    }
  }
  return result;
}

GradCheckResult grad_check(const std::function<Tensor()>& f, const std::vector<Tensor>& params,
                           const GradCheckOptions& options) {
  NamedTensors named;
  for (std::size_t i = 0; i < params.size(); ++i) {
    named.emplace_back("param" + std::to_string(i), params[i]);
  }
  return grad_check(f, named, options);
}

Tensor corrupt_backward(const Tensor& x, double factor) {
  const std::vector<double> values(x.data().begin(), x.data().end());
  return make_result(x.shape(), values, {x}, "corrupt_backward", [factor](TensorImpl& self) {
    TensorImpl& in = *self.parents[0];
    if (!in.requires_grad) return;
    for (std::size_t i = 0; i < self.grad.size(); ++i) in.accumulate(i, factor * self.grad[i]);
  });
}

}  // namespace quag
