#pragma once

#include <string>

#include "ppl/ops.hpp"
#include "ppl/optim.hpp"
#include "ppl/rng.hpp"

namespace ppl {

/// Square convolution with bias, Kaiming-uniform initialized (fan-in scaling).
struct Conv2d {
  Parameter weight;
  Parameter bias;
  std::size_t stride = 1;
  std::size_t padding = 0;

  static Conv2d make(const std::string& name, std::size_t in_channels, std::size_t out_channels,
                     std::size_t kernel, std::size_t stride, std::size_t padding, Rng& rng);

  std::size_t in_channels() const { return weight.value.dim(1); }
  std::size_t out_channels() const { return weight.value.dim(0); }
  Tensor operator()(const Tensor& x) const;
};

struct GroupNorm {
  Parameter gamma;
  Parameter beta;
  std::size_t groups = 1;

  /// One group per `group_size` channels (at least one group).
  static GroupNorm make(const std::string& name, std::size_t channels, std::size_t group_size);
  Tensor operator()(const Tensor& x) const;
};

/// Fills `t` with U(-bound, bound), bound = sqrt(6 / fan_in).
void kaiming_uniform(Tensor& t, std::size_t fan_in, Rng& rng);

}  // namespace ppl
