#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace gau {

using Shape = std::vector<int>;

inline long numel(const Shape& s) {
  long n = 1;
  for (int e : s) {
    if (e <= 0) throw std::invalid_argument("tensor extent must be positive");
    n *= e;
  }
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) out += (i ? "x" : "") + std::to_string(s[i]);
  return out + "]";
}

inline bool same_shape(const Shape& a, const Shape& b) { return a == b; }

// Dense row-major tensor. Rank-4 image batches use NHWC layout.
template <typename S>
struct Tensor {
  Shape shape;
  std::vector<S> data;

  Tensor() = default;
  explicit Tensor(Shape sh) : shape(std::move(sh)), data(numel(shape), S(0)) {}
  Tensor(Shape sh, std::vector<S> d) : shape(std::move(sh)), data(std::move(d)) {
    if ((long)data.size() != numel(shape))
      throw std::invalid_argument("tensor data size does not match shape " + shape_str(shape));
  }

  static Tensor zeros(Shape sh) { return Tensor(std::move(sh)); }
  static Tensor full(Shape sh, S v) {
    Tensor t(std::move(sh));
    std::fill(t.data.begin(), t.data.end(), v);
    return t;
  }
  static Tensor scalar(S v) { return full({1}, v); }

  long size() const { return (long)data.size(); }
  int rank() const { return (int)shape.size(); }
  int extent(int axis) const { return shape[axis]; }

  S& operator[](long i) { return data[i]; }
  const S& operator[](long i) const { return data[i]; }

  // rank-4 accessor (NHWC)
  S& at4(int n, int h, int w, int c) {
    return data[((long(n) * shape[1] + h) * shape[2] + w) * shape[3] + c];
  }
  const S& at4(int n, int h, int w, int c) const {
    return data[((long(n) * shape[1] + h) * shape[2] + w) * shape[3] + c];
  }

  bool all_finite() const {
    for (const S& v : data)
      if (!std::isfinite((double)v)) return false;
    return true;
  }

  template <typename T>
  Tensor<T> cast() const {
    Tensor<T> out;
    out.shape = shape;
    out.data.resize(data.size());
    for (size_t i = 0; i < data.size(); ++i) out.data[i] = (T)data[i];
    return out;
  }
};

// Broadcast helpers (numpy-style, trailing-aligned).
inline Shape broadcast_shape(const Shape& a, const Shape& b) {
  size_t r = std::max(a.size(), b.size());
  Shape out(r);
  for (size_t i = 0; i < r; ++i) {
    int ea = i < r - a.size() ? 1 : a[i - (r - a.size())];
    int eb = i < r - b.size() ? 1 : b[i - (r - b.size())];
    if (ea != eb && ea != 1 && eb != 1)
      throw std::invalid_argument("shapes not broadcastable: " + shape_str(a) + " vs " + shape_str(b));
    out[i] = std::max(ea, eb);
  }
  return out;
}

inline bool broadcastable_to(const Shape& from, const Shape& to) {
  if (from.size() > to.size()) return false;
  size_t off = to.size() - from.size();
  for (size_t i = 0; i < from.size(); ++i)
    if (from[i] != to[i + off] && from[i] != 1) return false;
  return true;
}

}  // namespace gau
