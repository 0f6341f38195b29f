#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace quag {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

// Storage precision for op results. In F32 mode (the default) every value an
// op writes is rounded to the nearest float, so all tensor contents are
// exactly representable as f32. F64 mode skips the rounding; gradient checks
// run under it so finite differences are not swamped by f32 round-off.
enum class Precision { F32, F64 };

Precision current_precision();

class PrecisionScope {
 public:
  explicit PrecisionScope(Precision p);
  ~PrecisionScope();
  PrecisionScope(const PrecisionScope&) = delete;
  PrecisionScope& operator=(const PrecisionScope&) = delete;

 private:
  Precision previous_;
};

// Rounds v according to the active precision.
inline double round_value(double v, Precision p) {
  return p == Precision::F32 ? static_cast<double>(static_cast<float>(v)) : v;
}

// Disables graph recording on this thread while alive.
class NoGradScope {
 public:
  NoGradScope();
  ~NoGradScope();
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct TensorImpl;

// Dense row-major tensor handle. Copies share storage; ops never mutate
// their inputs.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from_values(Shape shape, std::vector<double> values,
                            bool requires_grad = false);
  static Tensor from_floats(Shape shape, std::span<const float> values,
                            bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> data() const;
  // Direct write access, intended for initializers and optimizers acting on
  // leaf parameters.
  std::span<double> mutable_data();
  double item() const;
  double at(std::size_t i) const { return data()[i]; }
  double at(std::size_t row, std::size_t col) const;
  std::vector<float> to_floats() const;

  bool requires_grad() const;
  void set_requires_grad(bool value);
  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  // Reverse-mode sweep from this scalar. Gradients are accumulated into every
  // reachable tensor that requires grad.
  void backward() const;

  // A new leaf sharing no history (data copied).
  Tensor detach() const;

  TensorImpl* impl() const { return impl_.get(); }
  const std::shared_ptr<TensorImpl>& impl_ptr() const { return impl_; }
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

 private:
  std::shared_ptr<TensorImpl> impl_;
};

using BackwardFn = std::function<void(TensorImpl& self)>;

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorImpl>> parents;
  BackwardFn backward_fn;
  const char* op_name = "leaf";

  bool is_leaf() const { return !backward_fn; }
  void ensure_grad();
  // grad[i] += delta, rounded to the active precision.
  void accumulate(std::size_t i, double delta);
};

// Builds an op result. When grad mode is on and any input requires grad, the
// result is wired into the graph with the given backward rule; otherwise it is
// a plain constant.
Tensor make_result(Shape shape, std::vector<double> data,
                   std::initializer_list<Tensor> inputs, const char* op_name,
                   BackwardFn backward);
Tensor make_result(Shape shape, std::vector<double> data,
                   const std::vector<Tensor>& inputs, const char* op_name,
                   BackwardFn backward);

// Ordered node list recorded from a scalar root: every node appears after all
// of its inputs, and each node appears exactly once.
class ComputationTape {
 public:
  static ComputationTape record(const Tensor& root);

  std::size_t size() const { return nodes_.size(); }
  const std::vector<TensorImpl*>& nodes() const { return nodes_; }

  // Seeds d(root)/d(root) = 1 and runs every backward rule in reverse order.
  void run_backward(const Tensor& root) const;

 private:
  std::vector<TensorImpl*> nodes_;
};

}  // namespace quag
