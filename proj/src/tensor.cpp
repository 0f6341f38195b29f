#include "quag/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_set>

namespace quag {

namespace {
thread_local Precision g_precision = Precision::F32;
thread_local bool g_grad_enabled = true;
}  // namespace

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Precision current_precision() { return g_precision; }

PrecisionScope::PrecisionScope(Precision p) : previous_(g_precision) {
  g_precision = p;
}
PrecisionScope::~PrecisionScope() { g_precision = previous_; }

NoGradScope::NoGradScope() : previous_(g_grad_enabled) {
  g_grad_enabled = false;
}
NoGradScope::~NoGradScope() { g_grad_enabled = previous_; }

bool grad_enabled() { return g_grad_enabled; }

void TensorImpl::ensure_grad() {
  if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
}

void TensorImpl::accumulate(std::size_t i, double delta) {
  grad[i] = round_value(grad[i] + delta, g_precision);
}

namespace {

std::shared_ptr<TensorImpl> new_impl(Shape shape, std::vector<double> data) {
  for (auto e : shape) {
    if (e == 0) throw ShapeError("tensor extents must be positive, got " + shape_string(shape));
  }
  if (shape_numel(shape) != data.size()) {
    throw ShapeError("data length " + std::to_string(data.size()) +
                     " does not match shape " + shape_string(shape));
  }
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  return impl;
}

}  // namespace

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const auto n = shape_numel(shape);
  return from_values(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::from_values(Shape shape, std::vector<double> values, bool requires_grad) {
  const auto p = current_precision();
  for (auto& v : values) v = round_value(v, p);
  auto impl = new_impl(std::move(shape), std::move(values));
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::from_floats(Shape shape, std::span<const float> values, bool requires_grad) {
  return from_values(std::move(shape), std::vector<double>(values.begin(), values.end()),
                     requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from_values({1}, {value}, requires_grad);
}

const Shape& Tensor::shape() const { return impl_->shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= rank()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for " +
                     shape_string(shape()));
  }
  return shape()[axis];
}

std::size_t Tensor::numel() const { return impl_->data.size(); }

std::span<const double> Tensor::data() const { return impl_->data; }
std::span<double> Tensor::mutable_data() { return impl_->data; }

double Tensor::item() const {
  if (numel() != 1) {
    throw ShapeError("item() requires a single-element tensor, got " + shape_string(shape()));
  }
  return impl_->data[0];
}

double Tensor::at(std::size_t row, std::size_t col) const {
  return impl_->data[row * shape().back() + col];
}

std::vector<float> Tensor::to_floats() const {
  return std::vector<float>(impl_->data.begin(), impl_->data.end());
}

bool Tensor::requires_grad() const { return impl_->requires_grad; }
void Tensor::set_requires_grad(bool value) { impl_->requires_grad = value; }
bool Tensor::has_grad() const { return impl_->grad.size() == impl_->data.size(); }
std::span<const double> Tensor::grad() const { return impl_->grad; }
std::span<double> Tensor::mutable_grad() {
  impl_->ensure_grad();
  return impl_->grad;
}
void Tensor::zero_grad() { impl_->grad.assign(impl_->data.size(), 0.0); }

void Tensor::backward() const {
  if (numel() != 1) {
    throw ShapeError("backward() requires a scalar root, got " + shape_string(shape()));
  }
  ComputationTape::record(*this).run_backward(*this);
}

Tensor Tensor::detach() const {
  auto impl = new_impl(impl_->shape, impl_->data);
  return Tensor(std::move(impl));
}

Tensor make_result(Shape shape, std::vector<double> data, const std::vector<Tensor>& inputs,
                   const char* op_name, BackwardFn backward) {
  const auto p = current_precision();
  if (p == Precision::F32) {
    for (auto& v : data) v = round_value(v, p);
  }
  auto impl = new_impl(std::move(shape), std::move(data));
  impl->op_name = op_name;
  if (g_grad_enabled) {
    bool any = false;
    for (const auto& t : inputs) any = any || t.requires_grad();
    if (any) {
      impl->requires_grad = true;
      impl->parents.reserve(inputs.size());
      for (const auto& t : inputs) impl->parents.push_back(t.impl_ptr());
      impl->backward_fn = std::move(backward);
    }
  }
  return Tensor(std::move(impl));
}

Tensor make_result(Shape shape, std::vector<double> data, std::initializer_list<Tensor> inputs,
                   const char* op_name, BackwardFn backward) {
  return make_result(std::move(shape), std::move(data), std::vector<Tensor>(inputs), op_name,
                     std::move(backward));
}

ComputationTape ComputationTape::record(const Tensor& root) {
  ComputationTape tape;
  if (!root.requires_grad()) return tape;
  std::unordered_set<TensorImpl*> visited;
  // Iterative post-order DFS: a node is emitted once all of its parents are.
  std::vector<std::pair<TensorImpl*, std::size_t>> stack;
  stack.emplace_back(root.impl(), 0);
  visited.insert(root.impl());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      TensorImpl* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) {
        stack.emplace_back(parent, 0);
      }
    } else {
      tape.nodes_.push_back(node);
      stack.pop_back();
    }
  }
  return tape;
}

void ComputationTape::run_backward(const Tensor& root) const {
  if (nodes_.empty()) return;
  for (auto* node : nodes_) {
    if (node->is_leaf()) {
      node->ensure_grad();
    } else {
      node->grad.assign(node->data.size(), 0.0);
    }
  }
  root.impl()->accumulate(0, 1.0);
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    TensorImpl* node = *it;
    if (!node->is_leaf()) node->backward_fn(*node);
  }
}

}  // namespace quag
