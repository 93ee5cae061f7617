#pragma once

// Named flat parameter buffers. Every trainable module exposes its tensors
// through visit(), in a fixed order; the optimizer, the l2 penalty, the
// checkpoint blob and the finite-difference checks all walk that order.

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace odergru {

using ParamVisitor = std::function<void(std::string_view name, std::span<double> values)>;
using ConstParamVisitor = std::function<void(std::string_view name, std::span<const double> values)>;

template <class P>
std::size_t param_count(const P& p) {
  std::size_t n = 0;
  p.visit(ConstParamVisitor([&](std::string_view, std::span<const double> v) { n += v.size(); }));
  return n;
}

template <class P>
std::vector<double> flatten(const P& p) {
  std::vector<double> out;
  p.visit(ConstParamVisitor(
      [&](std::string_view, std::span<const double> v) { out.insert(out.end(), v.begin(), v.end()); }));
  return out;
}

/// Copies `flat` into p in visit order. Returns false (leaving p untouched)
/// when the length does not match.
template <class P>
bool unflatten(P& p, std::span<const double> flat) {
  if (flat.size() != param_count(p)) return false;
  std::size_t k = 0;
  p.visit(ParamVisitor([&](std::string_view, std::span<double> v) {
    for (double& x : v) x = flat[k++];
  }));
  return true;
}

template <class P>
P zeros_like(const P& p) {
  P z = p;
  z.visit(ParamVisitor([](std::string_view, std::span<double> v) {
    for (double& x : v) x = 0.0;
  }));
  return z;
}

/// Parameter names with sizes, in visit order.
template <class P>
std::vector<std::pair<std::string, std::size_t>> param_layout(const P& p) {
  std::vector<std::pair<std::string, std::size_t>> out;
  p.visit(ConstParamVisitor(
      [&](std::string_view name, std::span<const double> v) { out.emplace_back(std::string(name), v.size()); }));
  return out;
}

}  // namespace odergru
