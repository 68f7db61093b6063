#pragma once

// SGD with momentum and L2 weight decay, and the poly learning-rate policy.

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "ducseg/errors.hpp"
#include "ducseg/params.hpp"

namespace ducseg {

/// base * (1 - iter / max_iter)^power; exactly 0 at iter == max_iter.
inline double poly_lr(double base, long long iter, long long max_iter, double power) {
  if (max_iter <= 0 || iter < 0 || iter > max_iter) {
    throw ConfigError("poly_lr: need 0 <= iter <= max_iter and max_iter > 0, got iter=" +
                      std::to_string(iter) + " max_iter=" + std::to_string(max_iter));
  }
  if (iter == max_iter) return 0.0;
  return base * std::pow(1.0 - static_cast<double>(iter) / static_cast<double>(max_iter), power);
}

/// One velocity buffer per learnable tensor, in visit order.
template <Real T>
struct OptimizerState {
  std::vector<std::string> names;
  std::vector<std::vector<T>> velocity;
};

template <Real T, class P>
OptimizerState<T> make_optimizer_state(P& params) {
  OptimizerState<T> st;
  params.visit([&](const std::string& name, std::span<T> v) {
    st.names.push_back(name);
    st.velocity.emplace_back(v.size(), T(0));
  });
  return st;
}

/// g' = grad + weight_decay * param;  v = momentum * v + g';  param -= lr * v.
template <Real T, class P>
void sgd_step(P& params, P& grads, OptimizerState<T>& state, double lr, double momentum,
              double weight_decay) {
  auto p = collect_params<T>(params);
  auto g = collect_params<T>(grads);
  if (p.size() != g.size() || p.size() != state.velocity.size()) {
    throw ShapeError("sgd_step: " + std::to_string(p.size()) + " parameter tensors, " +
                     std::to_string(g.size()) + " gradients, " +
                     std::to_string(state.velocity.size()) + " velocity buffers");
  }
  for (std::size_t t = 0; t < p.size(); ++t) {
    auto pv = p[t].second;
    auto gv = g[t].second;
    auto& v = state.velocity[t];
    if (pv.size() != gv.size() || pv.size() != v.size()) {
      throw ShapeError("sgd_step: size mismatch for " + p[t].first);
    }
    for (std::size_t i = 0; i < pv.size(); ++i) {
      const T gd = gv[i] + static_cast<T>(weight_decay) * pv[i];
      v[i] = static_cast<T>(momentum) * v[i] + gd;
      pv[i] -= static_cast<T>(lr) * v[i];
    }
  }
}

}  // namespace ducseg
