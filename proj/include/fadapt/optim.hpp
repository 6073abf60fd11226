#pragma once

#include <span>
#include <vector>

#include "fadapt/tensor.hpp"

namespace fadapt {

template <class T>
struct OptimState {
  std::vector<std::vector<T>> momentum_buffers;
  T lr = T(0.02);
  T momentum = T(0.9);
  T weight_decay = T(5e-4);
};

/// One SGD step with classical momentum and coupled L2 weight decay:
///   v <- momentum * v + (grad + wd * p);  p <- p - lr * v
/// Buffers are created (zeroed) on the first call.
template <class T>
void sgd_step(std::span<Tensor<T>> params, OptimState<T>& st) {
  if (!(st.lr > T(0))) throw ContractError("sgd_step: learning rate must be positive");
  if (!(st.momentum >= T(0) && st.momentum < T(1))) throw ContractError("sgd_step: momentum must be in [0, 1)");
  if (st.weight_decay < T(0)) throw ContractError("sgd_step: weight decay must be nonnegative");
  if (st.momentum_buffers.empty())
    for (auto& p : params) st.momentum_buffers.emplace_back(p.numel(), T(0));
  if (st.momentum_buffers.size() != params.size())
    throw DimensionError("sgd_step: optimizer state tracks a different parameter list");
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    auto& v = st.momentum_buffers[i];
    if (v.size() != p.numel()) throw DimensionError("sgd_step: momentum buffer shape mismatch");
    if (!p.has_grad()) throw ContractError("sgd_step: parameter has no gradient buffer");
    auto g = p.grad();
    auto d = p.data();
    for (std::size_t j = 0; j < v.size(); ++j) {
      v[j] = st.momentum * v[j] + (g[j] + st.weight_decay * d[j]);
      d[j] = d[j] - st.lr * v[j];
    }
  }
}

}  // namespace fadapt
