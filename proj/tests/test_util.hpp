#pragma once

#include <vector>

#include "fadapt/rng.hpp"
#include "fadapt/tensor.hpp"

namespace fadapt::testing {

template <class T>
Tensor<T> randn(Shape shape, Rng& rng, bool requires_grad = false, double sd = 1.0) {
  std::vector<T> v(numel_of(shape));
  for (auto& x : v) x = static_cast<T>(sd * rng.normal());
  return Tensor<T>(std::move(shape), std::move(v), requires_grad);
}

template <class T>
Tensor<T> from(Shape shape, std::vector<T> v, bool requires_grad = false) {
  return Tensor<T>(std::move(shape), std::move(v), requires_grad);
}

}  // namespace fadapt::testing
