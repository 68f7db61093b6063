#pragma once

// Dense NCHW tensors and the structural operations built on them.
//
// Layout is fixed row-major (batch, channel, height, width). Every free
// function here takes its inputs by const reference and returns a fresh
// tensor; nothing aliases.

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "ducseg/errors.hpp"
#include "ducseg/rng.hpp"

namespace ducseg {

template <class T>
concept Real = std::floating_point<T>;

struct Shape4 {
  int n = 0;
  int c = 0;
  int h = 0;
  int w = 0;

  constexpr std::size_t numel() const noexcept {
    return static_cast<std::size_t>(n) * static_cast<std::size_t>(c) *
           static_cast<std::size_t>(h) * static_cast<std::size_t>(w);
  }
  constexpr std::size_t plane() const noexcept {
    return static_cast<std::size_t>(h) * static_cast<std::size_t>(w);
  }
  constexpr bool valid() const noexcept { return n >= 0 && c >= 0 && h >= 0 && w >= 0; }

  friend constexpr bool operator==(const Shape4&, const Shape4&) = default;
};

inline std::string to_string(const Shape4& s) {
  std::ostringstream os;
  os << '(' << s.n << ',' << s.c << ',' << s.h << ',' << s.w << ')';
  return os.str();
}

inline std::ostream& operator<<(std::ostream& os, const Shape4& s) { return os << to_string(s); }

template <Real T>
class Tensor4 {
 public:
  using value_type = T;

  Tensor4() = default;

  explicit Tensor4(Shape4 shape, T fill = T(0)) : shape_(shape) {
    if (!shape.valid()) throw ShapeError("negative tensor dimension in " + to_string(shape));
    data_.assign(shape.numel(), fill);
  }

  Tensor4(Shape4 shape, std::vector<T> data) : shape_(shape), data_(std::move(data)) {
    if (!shape.valid()) throw ShapeError("negative tensor dimension in " + to_string(shape));
    if (data_.size() != shape.numel()) {
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + to_string(shape));
    }
  }

  const Shape4& shape() const noexcept { return shape_; }
  int n() const noexcept { return shape_.n; }
  int c() const noexcept { return shape_.c; }
  int h() const noexcept { return shape_.h; }
  int w() const noexcept { return shape_.w; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::size_t index(int n, int c, int y, int x) const noexcept {
    return ((static_cast<std::size_t>(n) * shape_.c + c) * shape_.h + y) * shape_.w + x;
  }

  T& operator()(int n, int c, int y, int x) noexcept { return data_[index(n, c, y, x)]; }
  T operator()(int n, int c, int y, int x) const noexcept { return data_[index(n, c, y, x)]; }

  T& operator[](std::size_t i) noexcept { return data_[i]; }
  T operator[](std::size_t i) const noexcept { return data_[i]; }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }

  T* plane(int n, int c) noexcept { return data_.data() + index(n, c, 0, 0); }
  const T* plane(int n, int c) const noexcept { return data_.data() + index(n, c, 0, 0); }

  std::vector<T>& storage() noexcept { return data_; }
  const std::vector<T>& storage() const noexcept { return data_; }

  bool all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
  }

  friend bool operator==(const Tensor4& a, const Tensor4& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape4 shape_{};
  std::vector<T> data_;
};

template <Real To, Real From>
Tensor4<To> tensor_cast(const Tensor4<From>& x) {
  if constexpr (std::same_as<To, From>) {
    return x;
  } else {
    std::vector<To> out(x.size());
    std::transform(x.data().begin(), x.data().end(), out.begin(),
                   [](From v) { return static_cast<To>(v); });
    return Tensor4<To>(x.shape(), std::move(out));
  }
}

// ---------------------------------------------------------------------------
// Structural operations

template <Real T>
Tensor4<T> concat_channels(const Tensor4<T>& a, const Tensor4<T>& b) {
  const Shape4& sa = a.shape();
  const Shape4& sb = b.shape();
  auto mismatch = [&](const char* dim, int va, int vb) {
    return ShapeError(std::string("concat_channels: ") + dim + " differs (" +
                      std::to_string(va) + " vs " + std::to_string(vb) + ")");
  };
  if (sa.n != sb.n) throw mismatch("batch", sa.n, sb.n);
  if (sa.h != sb.h) throw mismatch("height", sa.h, sb.h);
  if (sa.w != sb.w) throw mismatch("width", sa.w, sb.w);

  Tensor4<T> out({sa.n, sa.c + sb.c, sa.h, sa.w});
  const std::size_t plane = sa.plane();
  for (int n = 0; n < sa.n; ++n) {
    std::copy_n(a.plane(n, 0), plane * sa.c, out.plane(n, 0));
    std::copy_n(b.plane(n, 0), plane * sb.c, out.plane(n, sa.c));
  }
  return out;
}

/// Channels [start, start + count) of x.
template <Real T>
Tensor4<T> slice_channels(const Tensor4<T>& x, int start, int count) {
  if (start < 0 || count < 0 || start + count > x.c()) {
    throw ShapeError("slice_channels: range [" + std::to_string(start) + ", " +
                     std::to_string(start + count) + ") outside " + std::to_string(x.c()) +
                     " channels");
  }
  Tensor4<T> out({x.n(), count, x.h(), x.w()});
  const std::size_t plane = x.shape().plane();
  for (int n = 0; n < x.n(); ++n) {
    std::copy_n(x.plane(n, start), plane * count, out.plane(n, 0));
  }
  return out;
}

template <Real T>
Tensor4<T> pad2d(const Tensor4<T>& x, int pad) {
  if (pad < 0) throw ShapeError("pad2d: negative padding");
  if (pad == 0) return x;
  const Shape4& s = x.shape();
  Tensor4<T> out({s.n, s.c, s.h + 2 * pad, s.w + 2 * pad});
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      for (int y = 0; y < s.h; ++y) {
        std::copy_n(x.plane(n, c) + static_cast<std::size_t>(y) * s.w, s.w,
                    &out(n, c, y + pad, pad));
      }
    }
  }
  return out;
}

/// Window [y0, y0+h) x [x0, x0+w); parts outside x are filled with `fill`.
template <Real T>
Tensor4<T> crop_region(const Tensor4<T>& x, int y0, int x0, int h, int w, T fill = T(0)) {
  if (h < 0 || w < 0) throw ShapeError("crop_region: negative extent");
  const Shape4& s = x.shape();
  Tensor4<T> out({s.n, s.c, h, w}, fill);
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      for (int y = 0; y < h; ++y) {
        const int sy = y0 + y;
        if (sy < 0 || sy >= s.h) continue;
        for (int xx = 0; xx < w; ++xx) {
          const int sx = x0 + xx;
          if (sx >= 0 && sx < s.w) out(n, c, y, xx) = x(n, c, sy, sx);
        }
      }
    }
  }
  return out;
}

/// Removes `amount` pixels from every spatial border.
template <Real T>
Tensor4<T> crop2d(const Tensor4<T>& x, int amount) {
  const Shape4& s = x.shape();
  if (amount < 0 || 2 * amount > s.h || 2 * amount > s.w) {
    throw ShapeError("crop2d: cannot remove " + std::to_string(amount) + " from " + to_string(s));
  }
  return crop_region(x, amount, amount, s.h - 2 * amount, s.w - 2 * amount);
}

/// Item `index` of the batch as a batch of one.
template <Real T>
Tensor4<T> batch_item(const Tensor4<T>& x, int index) {
  if (index < 0 || index >= x.n()) throw ShapeError("batch_item: index out of range");
  const std::size_t item = static_cast<std::size_t>(x.c()) * x.shape().plane();
  std::vector<T> data(x.data().begin() + static_cast<std::ptrdiff_t>(item * index),
                      x.data().begin() + static_cast<std::ptrdiff_t>(item * (index + 1)));
  return Tensor4<T>({1, x.c(), x.h(), x.w()}, std::move(data));
}

/// Stacks single-item tensors of equal (c, h, w) into one batch.
template <Real T>
Tensor4<T> stack_batch(std::span<const Tensor4<T>> items) {
  if (items.empty()) throw ShapeError("stack_batch: no items");
  const Shape4 first = items.front().shape();
  std::vector<T> data;
  data.reserve(first.numel() * items.size());
  int total = 0;
  for (const auto& t : items) {
    const Shape4& s = t.shape();
    if (s.c != first.c || s.h != first.h || s.w != first.w) {
      throw ShapeError("stack_batch: item shape " + to_string(s) + " differs from " +
                       to_string(first));
    }
    data.insert(data.end(), t.data().begin(), t.data().end());
    total += s.n;
  }
  return Tensor4<T>({total, first.c, first.h, first.w}, std::move(data));
}

// ---------------------------------------------------------------------------
// Elementwise arithmetic (shapes must match exactly; no broadcasting)

namespace detail {
template <Real T>
void require_same_shape(const Tensor4<T>& a, const Tensor4<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape " + to_string(a.shape()) + " vs " +
                     to_string(b.shape()));
  }
}
}  // namespace detail

template <Real T>
Tensor4<T> add(const Tensor4<T>& a, const Tensor4<T>& b) {
  detail::require_same_shape(a, b, "add");
  Tensor4<T> out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i];
  return out;
}

template <Real T>
Tensor4<T> subtract(const Tensor4<T>& a, const Tensor4<T>& b) {
  detail::require_same_shape(a, b, "subtract");
  Tensor4<T> out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b[i];
  return out;
}

template <Real T>
Tensor4<T> multiply(const Tensor4<T>& a, const Tensor4<T>& b) {
  detail::require_same_shape(a, b, "multiply");
  Tensor4<T> out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b[i];
  return out;
}

template <Real T>
Tensor4<T> scale(const Tensor4<T>& a, T factor) {
  Tensor4<T> out = a;
  for (auto& v : out.data()) v *= factor;
  return out;
}

/// a += b, in place; used to accumulate gradients arriving along several paths.
template <Real T>
void accumulate_into(Tensor4<T>& a, const Tensor4<T>& b) {
  detail::require_same_shape(a, b, "accumulate_into");
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
}

template <Real T>
double sum(const Tensor4<T>& x) {
  return std::accumulate(x.data().begin(), x.data().end(), 0.0,
                         [](double acc, T v) { return acc + static_cast<double>(v); });
}

template <Real T>
double max_abs_diff(const Tensor4<T>& a, const Tensor4<T>& b) {
  detail::require_same_shape(a, b, "max_abs_diff");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
  }
  return m;
}

// ---------------------------------------------------------------------------
// Seeded initialization

struct Uniform {
  double lo = 0.0;
  double hi = 1.0;
};

struct Normal {
  double mean = 0.0;
  double stddev = 1.0;
};

using Distribution = std::variant<Uniform, Normal>;

/// Fills a tensor in storage order from one SplitMix64 stream seeded with `seed`.
template <Real T>
Tensor4<T> seeded_fill(Shape4 shape, std::uint64_t seed, const Distribution& dist) {
  if (const auto* u = std::get_if<Uniform>(&dist); u != nullptr && u->lo > u->hi) {
    throw ConfigError("seeded_fill: uniform lower bound exceeds upper bound");
  }
  Tensor4<T> out(shape);
  SplitMix64 rng(seed);
  std::visit(
      [&](const auto& d) {
        using D = std::decay_t<decltype(d)>;
        for (auto& v : out.data()) {
          if constexpr (std::same_as<D, Uniform>) {
            v = static_cast<T>(rng.uniform(d.lo, d.hi));
          } else {
            v = static_cast<T>(rng.normal(d.mean, d.stddev));
          }
        }
      },
      dist);
  return out;
}

}  // namespace ducseg
