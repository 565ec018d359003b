#pragma once

#include <cstdint>
#include <cstring>
#include <vector>

#include "ppl/rng.hpp"
#include "ppl/tensor.hpp"

namespace ppl::test {

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(shape);
  for (auto& v : t.mutable_data()) v = static_cast<Real>(rng.uniform(lo, hi));
  return t;
}

inline bool bitwise_equal(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() && std::memcmp(a.data().data(), b.data().data(), a.numel() * sizeof(Real)) == 0;
}

inline std::vector<Real> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

}  // namespace ppl::test
