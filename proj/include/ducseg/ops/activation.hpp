#pragma once

#include "ducseg/tensor.hpp"

namespace ducseg {

template <Real T>
Tensor4<T> relu_forward(const Tensor4<T>& x) {
  Tensor4<T> y = x;
  for (auto& v : y.data()) v = v > T(0) ? v : T(0);
  return y;
}

/// Passes grad_out where x > 0; the kink at exactly zero takes the zero branch.
template <Real T>
Tensor4<T> relu_backward(const Tensor4<T>& x, const Tensor4<T>& grad_out) {
  detail::require_same_shape(x, grad_out, "relu_backward");
  Tensor4<T> g = grad_out;
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (!(x[i] > T(0))) g[i] = T(0);
  }
  return g;
}

}  // namespace ducseg
