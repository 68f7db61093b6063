#pragma once

// Parameter visiting.
//
// Every learnable structure exposes `visit(f)` calling f(name, span) once per
// learnable tensor in a fixed order, and optionally `visit_buffers(f)` for
// non-learnable state that must be checkpointed (batch-norm running stats).
// Gradient structures reuse the parameter type, so zipping two visits of the
// same type yields matching (parameter, gradient) pairs.

#include <concepts>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace ducseg {

inline std::string join_name(std::string_view prefix, std::string_view name) {
  if (prefix.empty()) return std::string(name);
  std::string out(prefix);
  out += '.';
  out += name;
  return out;
}

/// Named, flat views of every learnable tensor in `p`.
template <class T, class P>
std::vector<std::pair<std::string, std::span<T>>> collect_params(P& p) {
  std::vector<std::pair<std::string, std::span<T>>> out;
  p.visit([&](const std::string& name, std::span<T> values) { out.emplace_back(name, values); });
  return out;
}

template <class T, class P>
std::vector<std::pair<std::string, std::span<T>>> collect_buffers(P& p) {
  std::vector<std::pair<std::string, std::span<T>>> out;
  p.visit_buffers(
      [&](const std::string& name, std::span<T> values) { out.emplace_back(name, values); });
  return out;
}

template <class T, class P>
std::size_t count_params(P& p) {
  std::size_t total = 0;
  p.visit([&](const std::string&, std::span<T> values) { total += values.size(); });
  return total;
}

/// Sets every learnable entry of a gradient structure to zero.
template <class T, class P>
void zero_params(P& p) {
  p.visit([](const std::string&, std::span<T> values) {
    for (auto& v : values) v = T(0);
  });
}

}  // namespace ducseg
