#pragma once

// Per-channel batch normalization over the (n, h, w) axes.
//
//   y = gamma * (x - mu) / sqrt(var + eps) + beta
//
// Train mode normalizes with the biased batch statistics (computed in two
// passes, accumulated in double) and folds them into the running estimates:
//   running <- (1 - momentum) * running + momentum * batch.
// Eval mode normalizes with the running estimates and leaves them untouched.

#include <cmath>
#include <string>
#include <vector>

#include "ducseg/errors.hpp"
#include "ducseg/params.hpp"
#include "ducseg/tensor.hpp"

namespace ducseg {

enum class Mode { train, eval };

template <Real T>
struct BatchNormState {
  std::vector<T> gamma;
  std::vector<T> beta;
  std::vector<T> running_mean;
  std::vector<T> running_var;
  double epsilon = 1e-5;
  double momentum = 0.1;

  int channels() const noexcept { return static_cast<int>(gamma.size()); }

  template <class F>
  void visit(F&& f, std::string_view prefix = {}) {
    f(join_name(prefix, "gamma"), std::span<T>(gamma));
    f(join_name(prefix, "beta"), std::span<T>(beta));
  }
  template <class F>
  void visit_buffers(F&& f, std::string_view prefix = {}) {
    f(join_name(prefix, "running_mean"), std::span<T>(running_mean));
    f(join_name(prefix, "running_var"), std::span<T>(running_var));
  }

  friend bool operator==(const BatchNormState&, const BatchNormState&) = default;
};

/// gamma = 1, beta = 0, running mean 0, running variance 1.
template <Real T>
BatchNormState<T> make_batchnorm(int channels) {
  if (channels < 1) throw ConfigError("batch norm needs at least one channel");
  const auto c = static_cast<std::size_t>(channels);
  return BatchNormState<T>{std::vector<T>(c, T(1)), std::vector<T>(c, T(0)),
                           std::vector<T>(c, T(0)), std::vector<T>(c, T(1))};
}

/// Gradient accumulator matching `state` (only gamma and beta are meaningful).
template <Real T>
BatchNormState<T> zero_batchnorm_grads(const BatchNormState<T>& state) {
  const auto c = state.gamma.size();
  return BatchNormState<T>{std::vector<T>(c, T(0)), std::vector<T>(c, T(0)), {}, {},
                           state.epsilon, state.momentum};
}

template <Real T>
struct BatchNormGrads {
  Tensor4<T> grad_x;
  BatchNormState<T> params;  // gamma and beta gradients
};

namespace detail {

template <Real T>
void check_bn_call(const Tensor4<T>& x, const BatchNormState<T>& st) {
  if (x.c() != st.channels() || st.beta.size() != st.gamma.size() ||
      st.running_mean.size() != st.gamma.size() || st.running_var.size() != st.gamma.size()) {
    throw ShapeError("batchnorm: input has " + std::to_string(x.c()) + " channels, state has " +
                     std::to_string(st.channels()));
  }
  if (!(st.epsilon > 0.0)) throw ConfigError("batchnorm: epsilon must be positive");
}

struct ChannelStats {
  std::vector<double> mean;
  std::vector<double> var;
};

template <Real T>
ChannelStats batch_stats(const Tensor4<T>& x) {
  const int C = x.c();
  const std::size_t plane = x.shape().plane();
  const double count = static_cast<double>(x.n()) * static_cast<double>(plane);
  ChannelStats s{std::vector<double>(C, 0.0), std::vector<double>(C, 0.0)};
  for (int c = 0; c < C; ++c) {
    double total = 0.0;
    for (int n = 0; n < x.n(); ++n) {
      const T* p = x.plane(n, c);
      for (std::size_t i = 0; i < plane; ++i) total += p[i];
    }
    const double mu = total / count;
    double sq = 0.0;
    for (int n = 0; n < x.n(); ++n) {
      const T* p = x.plane(n, c);
      for (std::size_t i = 0; i < plane; ++i) {
        const double dv = p[i] - mu;
        sq += dv * dv;
      }
    }
    s.mean[c] = mu;
    s.var[c] = sq / count;
  }
  return s;
}

}  // namespace detail

template <Real T>
Tensor4<T> batchnorm_forward(const Tensor4<T>& x, BatchNormState<T>& state, Mode mode) {
  detail::check_bn_call(x, state);
  const int C = x.c();
  const std::size_t plane = x.shape().plane();
  std::vector<double> mean(C), var(C);
  if (mode == Mode::train) {
    if (x.n() * plane == 0) throw ShapeError("batchnorm: empty batch in train mode");
    auto stats = detail::batch_stats(x);
    mean = std::move(stats.mean);
    var = std::move(stats.var);
    for (int c = 0; c < C; ++c) {
      const double m = state.momentum;
      state.running_mean[c] = static_cast<T>((1.0 - m) * state.running_mean[c] + m * mean[c]);
      state.running_var[c] = static_cast<T>((1.0 - m) * state.running_var[c] + m * var[c]);
    }
  } else {
    for (int c = 0; c < C; ++c) {
      mean[c] = state.running_mean[c];
      var[c] = state.running_var[c];
    }
  }

  Tensor4<T> y(x.shape());
  for (int c = 0; c < C; ++c) {
    const double inv = 1.0 / std::sqrt(var[c] + state.epsilon);
    const T scale_c = static_cast<T>(state.gamma[c] * inv);
    const T shift_c = static_cast<T>(state.beta[c] - state.gamma[c] * inv * mean[c]);
    for (int n = 0; n < x.n(); ++n) {
      const T* xp = x.plane(n, c);
      T* yp = y.plane(n, c);
      for (std::size_t i = 0; i < plane; ++i) yp[i] = scale_c * xp[i] + shift_c;
    }
  }
  return y;
}

/// Backward pass; train mode recomputes the batch statistics from x.
template <Real T>
BatchNormGrads<T> batchnorm_backward(const Tensor4<T>& x, const BatchNormState<T>& state, Mode mode,
                                     const Tensor4<T>& grad_out) {
  detail::check_bn_call(x, state);
  detail::require_same_shape(x, grad_out, "batchnorm_backward");
  const int C = x.c();
  const std::size_t plane = x.shape().plane();
  const double count = static_cast<double>(x.n()) * static_cast<double>(plane);

  BatchNormGrads<T> g{Tensor4<T>(x.shape()), zero_batchnorm_grads(state)};
  detail::ChannelStats stats;
  if (mode == Mode::train) {
    stats = detail::batch_stats(x);
  } else {
    stats.mean.assign(state.running_mean.begin(), state.running_mean.end());
    stats.var.assign(state.running_var.begin(), state.running_var.end());
  }

  for (int c = 0; c < C; ++c) {
    const double mu = stats.mean[c];
    const double inv = 1.0 / std::sqrt(stats.var[c] + state.epsilon);
    double sum_g = 0.0;
    double sum_gx = 0.0;
    for (int n = 0; n < x.n(); ++n) {
      const T* xp = x.plane(n, c);
      const T* gp = grad_out.plane(n, c);
      for (std::size_t i = 0; i < plane; ++i) {
        sum_g += gp[i];
        sum_gx += gp[i] * ((xp[i] - mu) * inv);
      }
    }
    g.params.gamma[c] = static_cast<T>(sum_gx);
    g.params.beta[c] = static_cast<T>(sum_g);

    const double gamma = state.gamma[c];
    for (int n = 0; n < x.n(); ++n) {
      const T* xp = x.plane(n, c);
      const T* gp = grad_out.plane(n, c);
      T* gx = g.grad_x.plane(n, c);
      if (mode == Mode::train) {
        const double k = gamma * inv / count;
        for (std::size_t i = 0; i < plane; ++i) {
          const double xhat = (xp[i] - mu) * inv;
          gx[i] = static_cast<T>(k * (count * gp[i] - sum_g - xhat * sum_gx));
        }
      } else {
        const double k = gamma * inv;
        for (std::size_t i = 0; i < plane; ++i) gx[i] = static_cast<T>(k * gp[i]);
      }
    }
  }
  return g;
}

}  // namespace ducseg
