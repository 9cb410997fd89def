#pragma once

#include <algorithm>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <string>
#include <vector>

#include "lcaunet/common.hpp"

namespace lcaunet {

using Shape = std::vector<std::int64_t>;

inline std::int64_t numel(const Shape& s) {
  std::int64_t n = 1;
  for (auto d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string r = "(";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) r += ",";
    r += std::to_string(s[i]);
  }
  return r + ")";
}

// Dense row-major array. The plain (non-autograd) value type used by the
// data pipeline, metrics, and as storage inside autograd nodes.
template <typename T>
struct Array {
  Shape shape;
  std::vector<T> data;

  Array() = default;
  explicit Array(Shape s) : shape(std::move(s)), data(numel(shape), T(0)) {}
  Array(Shape s, T fill) : shape(std::move(s)), data(numel(shape), fill) {}
  Array(Shape s, std::vector<T> values) : shape(std::move(s)), data(std::move(values)) {
    LCAUNET_CHECK_SHAPE(static_cast<std::int64_t>(data.size()) == numel(shape),
                        "Array: ", data.size(), " values for shape ", shape_str(shape));
  }

  std::int64_t size() const { return static_cast<std::int64_t>(data.size()); }
  std::int64_t dim(int i) const { return shape[static_cast<std::size_t>(i)]; }
  int rank() const { return static_cast<int>(shape.size()); }

  T& operator[](std::int64_t i) { return data[static_cast<std::size_t>(i)]; }
  const T& operator[](std::int64_t i) const { return data[static_cast<std::size_t>(i)]; }

  // NCHW accessor for rank-4 arrays.
  T& at4(std::int64_t b, std::int64_t c, std::int64_t y, std::int64_t x) {
    return data[((b * shape[1] + c) * shape[2] + y) * shape[3] + x];
  }
  const T& at4(std::int64_t b, std::int64_t c, std::int64_t y, std::int64_t x) const {
    return data[((b * shape[1] + c) * shape[2] + y) * shape[3] + x];
  }

  template <typename U>
  Array<U> cast() const {
    Array<U> out;
    out.shape = shape;
    out.data.resize(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
    return out;
  }
};

template <typename T>
bool same_shape(const Array<T>& a, const Array<T>& b) {
  return a.shape == b.shape;
}

template <typename T>
T max_abs_diff(const Array<T>& a, const Array<T>& b) {
  T m = 0;
  for (std::size_t i = 0; i < a.data.size(); ++i)
    m = std::max(m, std::abs(a.data[i] - b.data[i]));
  return m;
}

}  // namespace lcaunet
