#pragma once

#include <Eigen/Core>
#include <cmath>
#include <memory>
#include <utility>
#include <vector>

#include "lcaunet/autograd.hpp"

namespace lcaunet::ag {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

// Multiply-accumulate tally for the attention cost model. A scope activates
// counting on forward GEMMs of linear() and the windowed attention core;
// softmax, scaling and bias adds are deliberately left out of the tally.
struct MacCounter {
  std::uint64_t macs = 0;
};

inline MacCounter*& active_mac_counter() {
  thread_local MacCounter* counter = nullptr;
  return counter;
}

struct MacScope {
  MacCounter* prev;
  explicit MacScope(MacCounter* c) : prev(active_mac_counter()) {
    active_mac_counter() = c;
  }
  ~MacScope() { active_mac_counter() = prev; }
  MacScope(const MacScope&) = delete;
  MacScope& operator=(const MacScope&) = delete;
};

inline void count_macs(std::uint64_t n) {
  if (MacCounter* c = active_mac_counter()) c->macs += n;
}

// ---------------------------------------------------------------------------
// Elementwise

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  LCAUNET_CHECK_SHAPE(a.shape() == b.shape(), "add: shape mismatch ",
                      shape_str(a.shape()), " vs ", shape_str(b.shape()));
  Array<T> out(a.shape());
  const std::int64_t n = out.size();
  for (std::int64_t i = 0; i < n; ++i) out[i] = a.value()[i] + b.value()[i];
  auto pa = a.ptr(), pb = b.ptr();
  return make_op<T>(std::move(out), {a, b}, [pa, pb, n](Node<T>& self) {
    if (pa->requires_grad) accumulate(*pa, self.grad.data(), n);
    if (pb->requires_grad) accumulate(*pb, self.grad.data(), n);
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  LCAUNET_CHECK_SHAPE(a.shape() == b.shape(), "sub: shape mismatch ",
                      shape_str(a.shape()), " vs ", shape_str(b.shape()));
  Array<T> out(a.shape());
  const std::int64_t n = out.size();
  for (std::int64_t i = 0; i < n; ++i) out[i] = a.value()[i] - b.value()[i];
  auto pa = a.ptr(), pb = b.ptr();
  return make_op<T>(std::move(out), {a, b}, [pa, pb, n](Node<T>& self) {
    if (pa->requires_grad) accumulate(*pa, self.grad.data(), n);
    if (pb->requires_grad) {
      pb->ensure_grad();
      for (std::int64_t i = 0; i < n; ++i) pb->grad[i] -= self.grad[i];
    }
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  LCAUNET_CHECK_SHAPE(a.shape() == b.shape(), "mul: shape mismatch ",
                      shape_str(a.shape()), " vs ", shape_str(b.shape()));
  Array<T> out(a.shape());
  const std::int64_t n = out.size();
  for (std::int64_t i = 0; i < n; ++i) out[i] = a.value()[i] * b.value()[i];
  auto pa = a.ptr(), pb = b.ptr();
  return make_op<T>(std::move(out), {a, b}, [pa, pb, n](Node<T>& self) {
    if (pa->requires_grad) {
      pa->ensure_grad();
      for (std::int64_t i = 0; i < n; ++i) pa->grad[i] += self.grad[i] * pb->value[i];
    }
    if (pb->requires_grad) {
      pb->ensure_grad();
      for (std::int64_t i = 0; i < n; ++i) pb->grad[i] += self.grad[i] * pa->value[i];
    }
  });
}

template <typename T>
Var<T> div(const Var<T>& a, const Var<T>& b) {
  LCAUNET_CHECK_SHAPE(a.shape() == b.shape(), "div: shape mismatch ",
                      shape_str(a.shape()), " vs ", shape_str(b.shape()));
  Array<T> out(a.shape());
  const std::int64_t n = out.size();
  for (std::int64_t i = 0; i < n; ++i) out[i] = a.value()[i] / b.value()[i];
  auto pa = a.ptr(), pb = b.ptr();
  return make_op<T>(std::move(out), {a, b}, [pa, pb, n](Node<T>& self) {
    if (pa->requires_grad) {
      pa->ensure_grad();
      for (std::int64_t i = 0; i < n; ++i) pa->grad[i] += self.grad[i] / pb->value[i];
    }
    if (pb->requires_grad) {
      pb->ensure_grad();
      for (std::int64_t i = 0; i < n; ++i) {
        const T bv = pb->value[i];
        pb->grad[i] -= self.grad[i] * pa->value[i] / (bv * bv);
      }
    }
  });
}

template <typename T>
Var<T> scale(const Var<T>& a, T c) {
  Array<T> out(a.shape());
  const std::int64_t n = out.size();
  for (std::int64_t i = 0; i < n; ++i) out[i] = a.value()[i] * c;
  auto pa = a.ptr();
  return make_op<T>(std::move(out), {a}, [pa, c, n](Node<T>& self) {
    if (!pa->requires_grad) return;
    pa->ensure_grad();
    for (std::int64_t i = 0; i < n; ++i) pa->grad[i] += self.grad[i] * c;
  });
}

template <typename T>
Var<T> add_const(const Var<T>& a, T c) {
  Array<T> out(a.shape());
  const std::int64_t n = out.size();
  for (std::int64_t i = 0; i < n; ++i) out[i] = a.value()[i] + c;
  auto pa = a.ptr();
  return make_op<T>(std::move(out), {a}, [pa, n](Node<T>& self) {
    if (pa->requires_grad) accumulate(*pa, self.grad.data(), n);
  });
}

template <typename T>
Var<T> neg(const Var<T>& a) { return scale(a, T(-1)); }

template <typename T>
Var<T> relu(const Var<T>& a) {
  Array<T> out(a.shape());
  const std::int64_t n = out.size();
  for (std::int64_t i = 0; i < n; ++i) out[i] = a.value()[i] > T(0) ? a.value()[i] : T(0);
  auto pa = a.ptr();
  return make_op<T>(std::move(out), {a}, [pa, n](Node<T>& self) {
    if (!pa->requires_grad) return;
    pa->ensure_grad();
    for (std::int64_t i = 0; i < n; ++i)
      if (pa->value[i] > T(0)) pa->grad[i] += self.grad[i];
  });
}

template <typename T>
Var<T> sigmoid(const Var<T>& a) {
  Array<T> out(a.shape());
  const std::int64_t n = out.size();
  for (std::int64_t i = 0; i < n; ++i) {
    const T x = a.value()[i];
    out[i] = x >= T(0) ? T(1) / (T(1) + std::exp(-x))
                       : std::exp(x) / (T(1) + std::exp(x));
  }
  auto pa = a.ptr();
  return make_op<T>(std::move(out), {a}, [pa, n](Node<T>& self) {
    if (!pa->requires_grad) return;
    pa->ensure_grad();
    for (std::int64_t i = 0; i < n; ++i) {
      const T y = self.value[i];
      pa->grad[i] += self.grad[i] * y * (T(1) - y);
    }
  });
}

namespace detail {
inline constexpr double kInvSqrt2 = 0.7071067811865475244;
inline constexpr double kInvSqrt2Pi = 0.3989422804014326779;
}  // namespace detail

template <typename T>
Var<T> gelu(const Var<T>& a) {
  // Exact erf form; derivative is Phi(x) + x * phi(x).
  Array<T> out(a.shape());
  const std::int64_t n = out.size();
  for (std::int64_t i = 0; i < n; ++i) {
    const double x = static_cast<double>(a.value()[i]);
    out[i] = static_cast<T>(x * 0.5 * (1.0 + std::erf(x * detail::kInvSqrt2)));
  }
  auto pa = a.ptr();
  return make_op<T>(std::move(out), {a}, [pa, n](Node<T>& self) {
    if (!pa->requires_grad) return;
    pa->ensure_grad();
    for (std::int64_t i = 0; i < n; ++i) {
      const double x = static_cast<double>(pa->value[i]);
      const double phi = 0.5 * (1.0 + std::erf(x * detail::kInvSqrt2));
      const double pdf = detail::kInvSqrt2Pi * std::exp(-0.5 * x * x);
      pa->grad[i] += self.grad[i] * static_cast<T>(phi + x * pdf);
    }
  });
}

template <typename T>
Var<T> log_op(const Var<T>& a) {
  Array<T> out(a.shape());
  const std::int64_t n = out.size();
  for (std::int64_t i = 0; i < n; ++i) out[i] = std::log(a.value()[i]);
  auto pa = a.ptr();
  return make_op<T>(std::move(out), {a}, [pa, n](Node<T>& self) {
    if (!pa->requires_grad) return;
    pa->ensure_grad();
    for (std::int64_t i = 0; i < n; ++i) pa->grad[i] += self.grad[i] / pa->value[i];
  });
}

// Gradient passes through only where lo < x < hi.
template <typename T>
Var<T> clamp(const Var<T>& a, T lo, T hi) {
  Array<T> out(a.shape());
  const std::int64_t n = out.size();
  for (std::int64_t i = 0; i < n; ++i)
    out[i] = std::min(hi, std::max(lo, a.value()[i]));
  auto pa = a.ptr();
  return make_op<T>(std::move(out), {a}, [pa, lo, hi, n](Node<T>& self) {
    if (!pa->requires_grad) return;
    pa->ensure_grad();
    for (std::int64_t i = 0; i < n; ++i) {
      const T x = pa->value[i];
      if (x > lo && x < hi) pa->grad[i] += self.grad[i];
    }
  });
}

// ---------------------------------------------------------------------------
// Reductions (scalar results have shape {1})

template <typename T>
Var<T> sum_all(const Var<T>& a) {
  const std::int64_t n = a.size();
  T acc = 0;
  for (std::int64_t i = 0; i < n; ++i) acc += a.value()[i];
  Array<T> out(Shape{1});
  out[0] = acc;
  auto pa = a.ptr();
  return make_op<T>(std::move(out), {a}, [pa, n](Node<T>& self) {
    if (!pa->requires_grad) return;
    pa->ensure_grad();
    const T g = self.grad[0];
    for (std::int64_t i = 0; i < n; ++i) pa->grad[i] += g;
  });
}

template <typename T>
Var<T> mean_all(const Var<T>& a) {
  return scale(sum_all(a), T(1) / static_cast<T>(a.size()));
}

// ---------------------------------------------------------------------------
// Shape movement

template <typename T>
Var<T> reshape(const Var<T>& a, Shape s) {
  LCAUNET_CHECK_SHAPE(numel(s) == a.size(), "reshape: ", shape_str(a.shape()),
                      " -> ", shape_str(s), " changes element count");
  Array<T> out(std::move(s), a.value().data);
  auto pa = a.ptr();
  const std::int64_t n = a.size();
  return make_op<T>(std::move(out), {a}, [pa, n](Node<T>& self) {
    if (pa->requires_grad) accumulate(*pa, self.grad.data(), n);
  });
}

// Rows of `a` viewed as (R, row_len); output row j = input row idx[j].
// idx entries may repeat; backward scatter-adds.
template <typename T>
Var<T> gather_rows(const Var<T>& a, std::shared_ptr<const std::vector<std::int64_t>> idx,
                   Shape out_shape, std::int64_t row_len) {
  const std::int64_t rows_out = static_cast<std::int64_t>(idx->size());
  LCAUNET_CHECK_SHAPE(numel(out_shape) == rows_out * row_len,
                      "gather_rows: output shape/index mismatch");
  Array<T> out(std::move(out_shape));
  const T* src = a.value().data.data();
  T* dst = out.data.data();
  for (std::int64_t j = 0; j < rows_out; ++j)
    std::copy_n(src + (*idx)[static_cast<std::size_t>(j)] * row_len, row_len,
                dst + j * row_len);
  auto pa = a.ptr();
  return make_op<T>(std::move(out), {a}, [pa, idx, rows_out, row_len](Node<T>& self) {
    if (!pa->requires_grad) return;
    pa->ensure_grad();
    const T* g = self.grad.data();
    for (std::int64_t j = 0; j < rows_out; ++j) {
      T* dst = pa->grad.data() + (*idx)[static_cast<std::size_t>(j)] * row_len;
      const T* src = g + j * row_len;
      for (std::int64_t k = 0; k < row_len; ++k) dst[k] += src[k];
    }
  });
}

template <typename T>
Var<T> concat(const std::vector<Var<T>>& parts, int axis) {
  LCAUNET_CHECK_SHAPE(!parts.empty(), "concat: no inputs");
  const Shape& s0 = parts[0].shape();
  const int rank = static_cast<int>(s0.size());
  LCAUNET_CHECK_SHAPE(axis >= 0 && axis < rank, "concat: bad axis");
  Shape out_shape = s0;
  std::int64_t cat = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    LCAUNET_CHECK_SHAPE(static_cast<int>(s.size()) == rank, "concat: rank mismatch");
    for (int d = 0; d < rank; ++d)
      LCAUNET_CHECK_SHAPE(d == axis || s[d] == s0[d], "concat: shape mismatch at dim ", d);
    cat += s[axis];
  }
  out_shape[axis] = cat;
  std::int64_t outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= s0[d];
  for (int d = axis + 1; d < rank; ++d) inner *= s0[d];

  Array<T> out(out_shape);
  std::vector<std::int64_t> piece(parts.size());
  {
    std::int64_t off = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
      piece[k] = parts[k].shape()[axis] * inner;
      const T* src = parts[k].value().data.data();
      for (std::int64_t o = 0; o < outer; ++o)
        std::copy_n(src + o * piece[k], piece[k],
                    out.data.data() + o * cat * inner + off);
      off += piece[k];
    }
  }
  std::vector<std::shared_ptr<Node<T>>> pts;
  for (const auto& p : parts) pts.push_back(p.ptr());
  const std::int64_t row = cat * inner;
  return make_op<T>(std::move(out), parts, [pts, piece, outer, row](Node<T>& self) {
    std::int64_t off = 0;
    for (std::size_t k = 0; k < pts.size(); ++k) {
      if (pts[k]->requires_grad) {
        pts[k]->ensure_grad();
        for (std::int64_t o = 0; o < outer; ++o) {
          const T* src = self.grad.data() + o * row + off;
          T* dst = pts[k]->grad.data() + o * piece[k];
          for (std::int64_t i = 0; i < piece[k]; ++i) dst[i] += src[i];
        }
      }
      off += piece[k];
    }
  });
}

// ---------------------------------------------------------------------------
// Linear algebra

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  LCAUNET_CHECK_SHAPE(a.shape().size() == 2 && b.shape().size() == 2 &&
                          a.dim(1) == b.dim(0),
                      "matmul: incompatible ", shape_str(a.shape()), " x ",
                      shape_str(b.shape()));
  const std::int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Array<T> out(Shape{m, n});
  MatMap<T>(out.data.data(), m, n).noalias() =
      ConstMatMap<T>(a.value().data.data(), m, k) *
      ConstMatMap<T>(b.value().data.data(), k, n);
  auto pa = a.ptr(), pb = b.ptr();
  return make_op<T>(std::move(out), {a, b}, [pa, pb, m, k, n](Node<T>& self) {
    ConstMatMap<T> gy(self.grad.data(), m, n);
    if (pa->requires_grad) {
      pa->ensure_grad();
      MatMap<T>(pa->grad.data(), m, k).noalias() +=
          gy * ConstMatMap<T>(pb->value.data.data(), k, n).transpose();
    }
    if (pb->requires_grad) {
      pb->ensure_grad();
      MatMap<T>(pb->grad.data(), k, n).noalias() +=
          ConstMatMap<T>(pa->value.data.data(), m, k).transpose() * gy;
    }
  });
}

// x: (..., c_in) treated as rows; w: (c_in, c_out); optional bias (c_out).
template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& bias = {}) {
  const Shape& xs = x.shape();
  LCAUNET_CHECK_SHAPE(!xs.empty() && w.shape().size() == 2 &&
                          xs.back() == w.dim(0),
                      "linear: incompatible ", shape_str(xs), " x ",
                      shape_str(w.shape()));
  const std::int64_t c_in = w.dim(0), c_out = w.dim(1);
  const std::int64_t rows = x.size() / c_in;
  Shape out_shape = xs;
  out_shape.back() = c_out;
  Array<T> out(out_shape);
  MatMap<T> y(out.data.data(), rows, c_out);
  y.noalias() = ConstMatMap<T>(x.value().data.data(), rows, c_in) *
                ConstMatMap<T>(w.value().data.data(), c_in, c_out);
  count_macs(static_cast<std::uint64_t>(rows) * c_in * c_out);
  if (bias.defined()) {
    LCAUNET_CHECK_SHAPE(bias.size() == c_out, "linear: bias size mismatch");
    y.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(
        bias.value().data.data(), c_out);
  }
  auto px = x.ptr(), pw = w.ptr();
  auto pb = bias.defined() ? bias.ptr() : nullptr;
  return make_op<T>(std::move(out), bias.defined() ? std::vector<Var<T>>{x, w, bias}
                                                   : std::vector<Var<T>>{x, w},
                    [px, pw, pb, rows, c_in, c_out](Node<T>& self) {
    ConstMatMap<T> gy(self.grad.data(), rows, c_out);
    if (px->requires_grad) {
      px->ensure_grad();
      MatMap<T>(px->grad.data(), rows, c_in).noalias() +=
          gy * ConstMatMap<T>(pw->value.data.data(), c_in, c_out).transpose();
    }
    if (pw->requires_grad) {
      pw->ensure_grad();
      MatMap<T>(pw->grad.data(), c_in, c_out).noalias() +=
          ConstMatMap<T>(px->value.data.data(), rows, c_in).transpose() * gy;
    }
    if (pb && pb->requires_grad) {
      pb->ensure_grad();
      Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>(pb->grad.data(), c_out) +=
          gy.colwise().sum();
    }
  });
}

// tokens (B, N, C) + table (N, C), broadcast over batch.
template <typename T>
Var<T> add_position(const Var<T>& tokens, const Var<T>& table) {
  const Shape& s = tokens.shape();
  LCAUNET_CHECK_SHAPE(s.size() == 3 && table.shape().size() == 2 &&
                          s[1] == table.dim(0) && s[2] == table.dim(1),
                      "add_position: ", shape_str(s), " vs ", shape_str(table.shape()));
  const std::int64_t b = s[0], nc = s[1] * s[2];
  Array<T> out(s);
  for (std::int64_t i = 0; i < b; ++i)
    for (std::int64_t j = 0; j < nc; ++j)
      out[i * nc + j] = tokens.value()[i * nc + j] + table.value()[j];
  auto pt = tokens.ptr(), pp = table.ptr();
  return make_op<T>(std::move(out), {tokens, table}, [pt, pp, b, nc](Node<T>& self) {
    if (pt->requires_grad) accumulate(*pt, self.grad.data(), b * nc);
    if (pp->requires_grad) {
      pp->ensure_grad();
      for (std::int64_t i = 0; i < b; ++i)
        for (std::int64_t j = 0; j < nc; ++j) pp->grad[j] += self.grad[i * nc + j];
    }
  });
}

// ---------------------------------------------------------------------------
// Softmax / normalization

template <typename T>
Var<T> softmax_lastdim(const Var<T>& a) {
  const Shape& s = a.shape();
  const std::int64_t c = s.back();
  const std::int64_t rows = a.size() / c;
  Array<T> out(s);
  for (std::int64_t r = 0; r < rows; ++r) {
    const T* x = a.value().data.data() + r * c;
    T* y = out.data.data() + r * c;
    T mx = x[0];
    for (std::int64_t i = 1; i < c; ++i) mx = std::max(mx, x[i]);
    T z = 0;
    for (std::int64_t i = 0; i < c; ++i) {
      y[i] = std::exp(x[i] - mx);
      z += y[i];
    }
    const T inv = T(1) / z;
    for (std::int64_t i = 0; i < c; ++i) y[i] *= inv;
  }
  auto pa = a.ptr();
  return make_op<T>(std::move(out), {a}, [pa, rows, c](Node<T>& self) {
    if (!pa->requires_grad) return;
    pa->ensure_grad();
    for (std::int64_t r = 0; r < rows; ++r) {
      const T* y = self.value.data.data() + r * c;
      const T* gy = self.grad.data() + r * c;
      T dot = 0;
      for (std::int64_t i = 0; i < c; ++i) dot += y[i] * gy[i];
      T* gx = pa->grad.data() + r * c;
      for (std::int64_t i = 0; i < c; ++i) gx[i] += y[i] * (gy[i] - dot);
    }
  });
}

namespace detail {

// Shared row-normalization backward: rows of length `len`, with an affine
// parameter indexed by `gamma_index(row_pos)`.
template <typename T>
struct NormSaved {
  std::vector<T> xhat;
  std::vector<T> inv_std;
};

}  // namespace detail

// LayerNorm over the last dimension. gamma/beta have shape (C).
template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta,
                  T eps = T(1e-5)) {
  const Shape& s = x.shape();
  const std::int64_t c = s.back();
  LCAUNET_CHECK_SHAPE(gamma.size() == c && beta.size() == c,
                      "layer_norm: affine params must have size ", c);
  const std::int64_t rows = x.size() / c;
  auto saved = std::make_shared<detail::NormSaved<T>>();
  saved->xhat.resize(static_cast<std::size_t>(rows * c));
  saved->inv_std.resize(static_cast<std::size_t>(rows));
  Array<T> out(s);
  for (std::int64_t r = 0; r < rows; ++r) {
    const T* xr = x.value().data.data() + r * c;
    T mean = 0;
    for (std::int64_t i = 0; i < c; ++i) mean += xr[i];
    mean /= static_cast<T>(c);
    T var = 0;
    for (std::int64_t i = 0; i < c; ++i) var += (xr[i] - mean) * (xr[i] - mean);
    var /= static_cast<T>(c);
    const T inv = T(1) / std::sqrt(var + eps);
    saved->inv_std[static_cast<std::size_t>(r)] = inv;
    T* xh = saved->xhat.data() + r * c;
    T* y = out.data.data() + r * c;
    for (std::int64_t i = 0; i < c; ++i) {
      xh[i] = (xr[i] - mean) * inv;
      y[i] = xh[i] * gamma.value()[i] + beta.value()[i];
    }
  }
  auto px = x.ptr(), pg = gamma.ptr(), pb = beta.ptr();
  return make_op<T>(std::move(out), {x, gamma, beta},
                    [px, pg, pb, saved, rows, c](Node<T>& self) {
    if (pg->requires_grad) pg->ensure_grad();
    if (pb->requires_grad) pb->ensure_grad();
    if (px->requires_grad) px->ensure_grad();
    for (std::int64_t r = 0; r < rows; ++r) {
      const T* gy = self.grad.data() + r * c;
      const T* xh = saved->xhat.data() + r * c;
      if (pg->requires_grad || pb->requires_grad) {
        for (std::int64_t i = 0; i < c; ++i) {
          if (pg->requires_grad) pg->grad[i] += gy[i] * xh[i];
          if (pb->requires_grad) pb->grad[i] += gy[i];
        }
      }
      if (px->requires_grad) {
        T sum_g = 0, sum_gx = 0;
        for (std::int64_t i = 0; i < c; ++i) {
          const T gh = gy[i] * pg->value[i];
          sum_g += gh;
          sum_gx += gh * xh[i];
        }
        const T inv_c = T(1) / static_cast<T>(c);
        const T inv = saved->inv_std[static_cast<std::size_t>(r)];
        T* gx = px->grad.data() + r * c;
        for (std::int64_t i = 0; i < c; ++i) {
          const T gh = gy[i] * pg->value[i];
          gx[i] += inv * (gh - inv_c * sum_g - xh[i] * inv_c * sum_gx);
        }
      }
    }
  });
}

// InstanceNorm over spatial dims of NCHW input; gamma/beta per channel.
template <typename T>
Var<T> instance_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta,
                     T eps = T(1e-5)) {
  const Shape& s = x.shape();
  LCAUNET_CHECK_SHAPE(s.size() == 4, "instance_norm: expected NCHW, got ",
                      shape_str(s));
  const std::int64_t b = s[0], c = s[1], hw = s[2] * s[3];
  LCAUNET_CHECK_SHAPE(gamma.size() == c && beta.size() == c,
                      "instance_norm: affine params must have size ", c);
  auto saved = std::make_shared<detail::NormSaved<T>>();
  saved->xhat.resize(static_cast<std::size_t>(b * c * hw));
  saved->inv_std.resize(static_cast<std::size_t>(b * c));
  Array<T> out(s);
  for (std::int64_t r = 0; r < b * c; ++r) {
    const T* xr = x.value().data.data() + r * hw;
    const std::int64_t ch = r % c;
    T mean = 0;
    for (std::int64_t i = 0; i < hw; ++i) mean += xr[i];
    mean /= static_cast<T>(hw);
    T var = 0;
    for (std::int64_t i = 0; i < hw; ++i) var += (xr[i] - mean) * (xr[i] - mean);
    var /= static_cast<T>(hw);
    const T inv = T(1) / std::sqrt(var + eps);
    saved->inv_std[static_cast<std::size_t>(r)] = inv;
    T* xh = saved->xhat.data() + r * hw;
    T* y = out.data.data() + r * hw;
    const T g = gamma.value()[ch], bb = beta.value()[ch];
    for (std::int64_t i = 0; i < hw; ++i) {
      xh[i] = (xr[i] - mean) * inv;
      y[i] = xh[i] * g + bb;
    }
  }
  auto px = x.ptr(), pg = gamma.ptr(), pb = beta.ptr();
  return make_op<T>(std::move(out), {x, gamma, beta},
                    [px, pg, pb, saved, b, c, hw](Node<T>& self) {
    if (pg->requires_grad) pg->ensure_grad();
    if (pb->requires_grad) pb->ensure_grad();
    if (px->requires_grad) px->ensure_grad();
    for (std::int64_t r = 0; r < b * c; ++r) {
      const std::int64_t ch = r % c;
      const T* gy = self.grad.data() + r * hw;
      const T* xh = saved->xhat.data() + r * hw;
      if (pg->requires_grad || pb->requires_grad) {
        T dg = 0, db = 0;
        for (std::int64_t i = 0; i < hw; ++i) {
          dg += gy[i] * xh[i];
          db += gy[i];
        }
        if (pg->requires_grad) pg->grad[ch] += dg;
        if (pb->requires_grad) pb->grad[ch] += db;
      }
      if (px->requires_grad) {
        const T g = pg->value[ch];
        T sum_g = 0, sum_gx = 0;
        for (std::int64_t i = 0; i < hw; ++i) {
          sum_g += gy[i];
          sum_gx += gy[i] * xh[i];
        }
        sum_g *= g;
        sum_gx *= g;
        const T inv_n = T(1) / static_cast<T>(hw);
        const T inv = saved->inv_std[static_cast<std::size_t>(r)];
        T* gx = px->grad.data() + r * hw;
        for (std::int64_t i = 0; i < hw; ++i)
          gx[i] += inv * (gy[i] * g - inv_n * sum_g - xh[i] * inv_n * sum_gx);
      }
    }
  });
}

}  // namespace lcaunet::ag
