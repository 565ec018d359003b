#pragma once

#include <optional>
#include <vector>

#include "ppl/tensor.hpp"

// Differentiable primitives. Feature volumes are N×C×H×W; the spatial ops also
// accept a single C×H×W volume and return the same rank they were given.
namespace ppl::ops {

Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, Real s);
Tensor sum(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);

/// Forward identity that contributes nothing to the backward pass.
Tensor stop_gradient(const Tensor& a);

/// weight: C_out×C_in×k×k, bias: C_out (optional).
Tensor conv2d(const Tensor& input, const Tensor& weight, const std::optional<Tensor>& bias,
              std::size_t stride, std::size_t padding);

/// Per-sample normalization over groups of channels with a learnable per
/// channel scale and shift. groups == channels gives instance normalization.
Tensor group_norm(const Tensor& input, const Tensor& gamma, const Tensor& beta,
                  std::size_t groups, Real eps = Real(1e-5));

/// Non-overlapping k×k average pooling; trailing rows/columns that do not fill
/// a window are dropped.
Tensor avg_pool2d(const Tensor& input, std::size_t k);

/// N×C×H×W -> N×C (C×H×W -> C).
Tensor global_avg_pool(const Tensor& input);

/// input N×C_in, weight C_out×C_in, bias C_out -> N×C_out.
Tensor linear(const Tensor& input, const Tensor& weight, const std::optional<Tensor>& bias);

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
Tensor narrow(const Tensor& input, std::size_t axis, std::size_t start, std::size_t length);

/// Mean over batch and classes of the per-class logistic loss.
/// logits, targets: N×C (targets in {0,1}).
Tensor multilabel_soft_margin_loss(const Tensor& logits, const Tensor& targets);

}  // namespace ppl::ops
