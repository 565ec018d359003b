#include "ppl/layers.hpp"

#include <cmath>

namespace ppl {

void kaiming_uniform(Tensor& t, std::size_t fan_in, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  for (auto& v : t.mutable_data()) v = static_cast<Real>(rng.uniform(-bound, bound));
}

Conv2d Conv2d::make(const std::string& name, std::size_t in_channels, std::size_t out_channels,
                    std::size_t kernel, std::size_t stride, std::size_t padding, Rng& rng) {
  Conv2d c;
  c.weight = {name + ".weight", Tensor({out_channels, in_channels, kernel, kernel})};
  c.bias = {name + ".bias", Tensor({out_channels})};
  kaiming_uniform(c.weight.value, in_channels * kernel * kernel, rng);
  c.weight.value.set_requires_grad(true);
  c.bias.value.set_requires_grad(true);
  c.stride = stride;
  c.padding = padding;
  return c;
}

Tensor Conv2d::operator()(const Tensor& x) const {
  return ops::conv2d(x, weight.value, bias.value, stride, padding);
}

GroupNorm GroupNorm::make(const std::string& name, std::size_t channels, std::size_t group_size) {
  GroupNorm n;
  n.gamma = {name + ".gamma", Tensor({channels}, Real(1))};
  n.beta = {name + ".beta", Tensor({channels}, Real(0))};
  n.gamma.value.set_requires_grad(true);
  n.beta.value.set_requires_grad(true);
  n.groups = std::max<std::size_t>(1, channels / std::max<std::size_t>(1, group_size));
  while (channels % n.groups != 0) --n.groups;
  return n;
}

Tensor GroupNorm::operator()(const Tensor& x) const {
  return ops::group_norm(x, gamma.value, beta.value, groups);
}

}  // namespace ppl
