#include "ppl/tensor.hpp"

#include <sstream>

namespace ppl {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

namespace {

void check_shape(const Shape& shape) {
  if (shape.empty()) throw ShapeError("tensor shape must have at least one dimension");
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (shape[i] == 0) throw ShapeError("tensor dimension " + std::to_string(i) + " is zero");
  }
}

thread_local GradTape* g_active_tape = nullptr;

}  // namespace

Tensor::Tensor(Shape shape, Real fill) {
  check_shape(shape);
  impl_ = std::make_shared<detail::TensorImpl>();
  impl_->data.assign(shape_numel(shape), fill);
  impl_->shape = std::move(shape);
}

Tensor::Tensor(Shape shape, std::vector<Real> data) {
  check_shape(shape);
  if (shape_numel(shape) != data.size()) {
    throw ShapeError("tensor data length " + std::to_string(data.size()) +
                     " does not match shape " + shape_str(shape));
  }
  impl_ = std::make_shared<detail::TensorImpl>();
  impl_->shape = std::move(shape);
  impl_->data = std::move(data);
}

Tensor make_result(Shape shape, std::vector<Real> data) {
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  return Tensor(std::move(impl));
}

detail::TensorImpl& Tensor::impl() const {
  if (!impl_) throw std::logic_error("use of an undefined tensor");
  return *impl_;
}

std::size_t Tensor::dim(std::size_t i) const {
  if (i >= rank()) throw ShapeError("dimension index " + std::to_string(i) + " out of range");
  return impl().shape[i];
}

Real Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  return impl().data[0];
}

Tensor& Tensor::set_requires_grad(bool on) {
  impl().requires_grad = on;
  return *this;
}

std::vector<Real> Tensor::grad() const {
  if (impl().grad.empty()) return std::vector<Real>(numel(), Real(0));
  return impl().grad;
}

Tensor Tensor::clone() const {
  Tensor t(shape(), impl().data);
  t.impl().requires_grad = impl().requires_grad;
  return t;
}

Tensor Tensor::reshaped(Shape new_shape) const {
  if (shape_numel(new_shape) != numel()) {
    throw ShapeError("cannot reshape " + shape_str(shape()) + " to " + shape_str(new_shape));
  }
  return Tensor(std::move(new_shape), impl().data);
}

bool GradTape::record(std::vector<Tensor> inputs, Tensor& output, BackwardFn backward) {
  bool any = false;
  for (const auto& t : inputs) any = any || t.needs_grad();
  if (!any) return false;
  Node node;
  node.inputs.reserve(inputs.size());
  for (auto& t : inputs) node.inputs.push_back(t.impl_ptr());
  node.output = output.impl_ptr();
  node.backward = std::move(backward);
  output.impl().tracked = true;
  nodes_.push_back(std::move(node));
  return true;
}

void GradTape::backward(const Tensor& loss) {
  if (loss.numel() != 1) {
    throw ShapeError("backward requires a scalar loss, got shape " + shape_str(loss.shape()));
  }
  // A loss that never touched a tracked value has no gradient to propagate.
  if (!loss.impl().tracked) return;
  auto& seed = loss.impl().grad;
  seed.assign(1, Real(1));

  std::vector<std::span<Real>> grad_in;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    auto& node = *it;
    if (node.output->grad.empty()) continue;
    grad_in.assign(node.inputs.size(), std::span<Real>{});
    for (std::size_t i = 0; i < node.inputs.size(); ++i) {
      auto& in = *node.inputs[i];
      if (!(in.requires_grad || in.tracked)) continue;
      if (in.grad.empty()) in.grad.assign(in.data.size(), Real(0));
      grad_in[i] = in.grad;
    }
    node.backward(node.output->grad, grad_in);
    // Intermediate gradients are consumed exactly once in reverse order.
    if (!node.output->requires_grad) std::vector<Real>().swap(node.output->grad);
  }
}

TapeScope::TapeScope(GradTape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }
TapeScope::~TapeScope() { g_active_tape = previous_; }

GradTape* active_tape() { return g_active_tape; }

}  // namespace ppl
