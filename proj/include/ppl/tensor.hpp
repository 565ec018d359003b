#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace ppl {

#ifdef PPL_DOUBLE
using Real = double;
#else
using Real = float;
#endif

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Raised for malformed shapes, arguments or configurations. The message names
/// the offending dimension or value.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

namespace detail {

struct TensorImpl {
  Shape shape;
  std::vector<Real> data;
  std::vector<Real> grad;  // empty until backward touches it
  bool requires_grad = false;
  bool tracked = false;  // produced by a recorded op
};

}  // namespace detail

/// Dense row-major array. Copies are shallow handles; use clone() for a deep
/// copy. Values produced by operations are never mutated afterwards, only
/// leaf parameters are updated in place by the optimizer.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, Real fill = Real(0));
  Tensor(Shape shape, std::vector<Real> data);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), Real(0)); }
  static Tensor ones(Shape shape) { return Tensor(std::move(shape), Real(1)); }
  static Tensor scalar(Real v) { return Tensor(Shape{1}, v); }

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl().shape; }
  std::size_t rank() const { return impl().shape.size(); }
  std::size_t dim(std::size_t i) const;
  std::size_t numel() const { return impl().data.size(); }

  std::span<const Real> data() const { return impl().data; }
  std::span<Real> mutable_data() { return impl().data; }
  Real item() const;
  Real operator[](std::size_t i) const { return impl().data[i]; }

  bool requires_grad() const { return impl().requires_grad; }
  Tensor& set_requires_grad(bool on);
  /// True when gradients can flow into this tensor (leaf parameter or a value
  /// recorded on the active tape).
  bool needs_grad() const { return impl().requires_grad || impl().tracked; }

  bool has_grad() const { return !impl().grad.empty(); }
  /// Accumulated gradient. Zeros when backward never reached this tensor.
  std::vector<Real> grad() const;
  void zero_grad() { impl().grad.clear(); }

  Tensor clone() const;
  /// Same data, new shape with equal element count. Not differentiable; use
  /// ops::reshape on the tape.
  Tensor reshaped(Shape shape) const;

  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

  detail::TensorImpl& impl() const;
  const std::shared_ptr<detail::TensorImpl>& impl_ptr() const { return impl_; }

 private:
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<detail::TensorImpl> impl_;

  friend class GradTape;
  friend Tensor make_result(Shape, std::vector<Real>);
};

/// Output tensor of an operation (fresh, untracked).
Tensor make_result(Shape shape, std::vector<Real> data);

/// Reverse-mode tape. Operations executed while a tape is active (see
/// TapeScope) append a node whenever any input needs a gradient; nodes are
/// stored in execution order, which is a topological order by construction.
class GradTape {
 public:
  using BackwardFn =
      std::function<void(std::span<const Real> grad_out, std::span<std::span<Real>> grad_in)>;

  struct Node {
    std::vector<std::shared_ptr<detail::TensorImpl>> inputs;
    std::shared_ptr<detail::TensorImpl> output;
    BackwardFn backward;
  };

  GradTape() = default;
  GradTape(const GradTape&) = delete;
  GradTape& operator=(const GradTape&) = delete;

  /// Records `output = op(inputs)` if any input needs a gradient. Returns true
  /// when the node was recorded (the output is then tracked).
  bool record(std::vector<Tensor> inputs, Tensor& output, BackwardFn backward);

  /// Populates grad() of every requires_grad leaf reachable from `loss`.
  /// Gradients accumulate into leaves; intermediate buffers are released. An
  /// untracked loss (no path to any leaf) leaves every gradient untouched.
  void backward(const Tensor& loss);

  std::size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

 private:
  std::vector<Node> nodes_;
};

/// Activates a tape on the current thread for the scope's lifetime.
class TapeScope {
 public:
  explicit TapeScope(GradTape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  GradTape* previous_;
};

GradTape* active_tape();

}  // namespace ppl
