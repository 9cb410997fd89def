#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <vector>

#include "lcaunet/ops.hpp"

namespace lcaunet::ag {

namespace detail {

// im2row for one NCHW image: out (Cin*k*k, OH*OW) row-major, so that
// W(Cout, Cin*k*k) * out lands directly in (Cout, OH*OW) layout.
template <typename T>
void im2row(const T* x, std::int64_t c_in, std::int64_t h, std::int64_t w,
            std::int64_t k, std::int64_t stride, std::int64_t pad,
            std::int64_t oh, std::int64_t ow, T* cols) {
  for (std::int64_t ci = 0; ci < c_in; ++ci) {
    const T* plane = x + ci * h * w;
    for (std::int64_t dy = 0; dy < k; ++dy) {
      for (std::int64_t dx = 0; dx < k; ++dx) {
        T* row = cols + ((ci * k + dy) * k + dx) * oh * ow;
        for (std::int64_t oy = 0; oy < oh; ++oy) {
          const std::int64_t iy = oy * stride + dy - pad;
          T* dst = row + oy * ow;
          if (iy < 0 || iy >= h) {
            std::fill_n(dst, ow, T(0));
            continue;
          }
          const T* src = plane + iy * w;
          for (std::int64_t ox = 0; ox < ow; ++ox) {
            const std::int64_t ix = ox * stride + dx - pad;
            dst[ox] = (ix >= 0 && ix < w) ? src[ix] : T(0);
          }
        }
      }
    }
  }
}

// Transpose of im2row: scatter-add cols (Cin*k*k, OH*OW) back into dx.
template <typename T>
void row2im_add(const T* cols, std::int64_t c_in, std::int64_t h, std::int64_t w,
                std::int64_t k, std::int64_t stride, std::int64_t pad,
                std::int64_t oh, std::int64_t ow, T* dx) {
  for (std::int64_t ci = 0; ci < c_in; ++ci) {
    T* plane = dx + ci * h * w;
    for (std::int64_t dy = 0; dy < k; ++dy) {
      for (std::int64_t dx_ = 0; dx_ < k; ++dx_) {
        const T* row = cols + ((ci * k + dy) * k + dx_) * oh * ow;
        for (std::int64_t oy = 0; oy < oh; ++oy) {
          const std::int64_t iy = oy * stride + dy - pad;
          if (iy < 0 || iy >= h) continue;
          T* dst = plane + iy * w;
          const T* src = row + oy * ow;
          for (std::int64_t ox = 0; ox < ow; ++ox) {
            const std::int64_t ix = ox * stride + dx_ - pad;
            if (ix >= 0 && ix < w) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

inline std::int64_t conv_out_dim(std::int64_t in, std::int64_t k,
                                 std::int64_t stride, std::int64_t pad) {
  return (in + 2 * pad - k) / stride + 1;
}

}  // namespace detail

// Standard cross-correlation, NCHW. weights (Cout, Cin, k, k).
// 1x1/stride-1 convolutions skip im2row and run one GEMM per image.
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& bias = {},
              std::int64_t stride = 1, std::int64_t pad = 0) {
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  LCAUNET_CHECK_SHAPE(xs.size() == 4 && ws.size() == 4, "conv2d: expected NCHW x and OIKK weights");
  LCAUNET_CHECK_SHAPE(xs[1] == ws[1], "conv2d: input channels ", xs[1],
                      " != weight channels ", ws[1]);
  LCAUNET_CHECK_SHAPE(ws[2] == ws[3], "conv2d: non-square kernel");
  const std::int64_t b = xs[0], c_in = xs[1], h = xs[2], wd = xs[3];
  const std::int64_t c_out = ws[0], k = ws[2];
  LCAUNET_CHECK_SHAPE(h + 2 * pad >= k && wd + 2 * pad >= k,
                      "conv2d: spatial dims smaller than kernel");
  const std::int64_t oh = detail::conv_out_dim(h, k, stride, pad);
  const std::int64_t ow = detail::conv_out_dim(wd, k, stride, pad);
  const std::int64_t ckk = c_in * k * k, ohw = oh * ow;
  const bool pointwise = (k == 1 && stride == 1 && pad == 0);

  Array<T> out(Shape{b, c_out, oh, ow});
  std::vector<T> cols;
  if (!pointwise) cols.resize(static_cast<std::size_t>(ckk * ohw));
  ConstMatMap<T> wm(w.value().data.data(), c_out, ckk);
  for (std::int64_t i = 0; i < b; ++i) {
    const T* xi = x.value().data.data() + i * c_in * h * wd;
    MatMap<T> yi(out.data.data() + i * c_out * ohw, c_out, ohw);
    if (pointwise) {
      yi.noalias() = wm * ConstMatMap<T>(xi, c_in, ohw);
    } else {
      detail::im2row(xi, c_in, h, wd, k, stride, pad, oh, ow, cols.data());
      yi.noalias() = wm * ConstMatMap<T>(cols.data(), ckk, ohw);
    }
    if (bias.defined())
      yi.colwise() += Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>(
          bias.value().data.data(), c_out);
  }

  auto px = x.ptr(), pw = w.ptr();
  auto pb = bias.defined() ? bias.ptr() : nullptr;
  auto parents = bias.defined() ? std::vector<Var<T>>{x, w, bias}
                                : std::vector<Var<T>>{x, w};
  return make_op<T>(std::move(out), parents,
                    [px, pw, pb, b, c_in, h, wd, c_out, k, stride, pad, oh, ow,
                     ckk, ohw, pointwise](Node<T>& self) {
    if (px->requires_grad) px->ensure_grad();
    if (pw->requires_grad) pw->ensure_grad();
    if (pb && pb->requires_grad) pb->ensure_grad();
    std::vector<T> cols, dcols;
    if (!pointwise) {
      cols.resize(static_cast<std::size_t>(ckk * ohw));
      if (px->requires_grad) dcols.resize(static_cast<std::size_t>(ckk * ohw));
    }
    ConstMatMap<T> wm(pw->value.data.data(), c_out, ckk);
    for (std::int64_t i = 0; i < b; ++i) {
      ConstMatMap<T> gy(self.grad.data() + i * c_out * ohw, c_out, ohw);
      const T* xi = px->value.data.data() + i * c_in * h * wd;
      if (pointwise) {
        if (pw->requires_grad)
          MatMap<T>(pw->grad.data(), c_out, ckk).noalias() +=
              gy * ConstMatMap<T>(xi, c_in, ohw).transpose();
        if (px->requires_grad)
          MatMap<T>(px->grad.data() + i * c_in * h * wd, c_in, ohw).noalias() +=
              wm.transpose() * gy;
      } else {
        if (pw->requires_grad) {
          detail::im2row(xi, c_in, h, wd, k, stride, pad, oh, ow, cols.data());
          MatMap<T>(pw->grad.data(), c_out, ckk).noalias() +=
              gy * ConstMatMap<T>(cols.data(), ckk, ohw).transpose();
        }
        if (px->requires_grad) {
          MatMap<T>(dcols.data(), ckk, ohw).noalias() = wm.transpose() * gy;
          detail::row2im_add(dcols.data(), c_in, h, wd, k, stride, pad, oh, ow,
                             px->grad.data() + i * c_in * h * wd);
        }
      }
      if (pb && pb->requires_grad)
        Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>>(pb->grad.data(), c_out) +=
            gy.rowwise().sum();
    }
  });
}

// Pixel-difference convolution (central variant): every kernel tap weights the
// difference between its pixel and the window center, out-of-bounds reads are
// zero. weights (Cout, Cin/groups, k, k); k odd.
template <typename T>
Var<T> pdc_conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& bias = {},
                  std::int64_t stride = 1, std::int64_t pad = 0,
                  std::int64_t groups = 1) {
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  LCAUNET_CHECK_SHAPE(xs.size() == 4 && ws.size() == 4, "pdc_conv2d: expected NCHW x and OIKK weights");
  const std::int64_t b = xs[0], c_in = xs[1], h = xs[2], wd = xs[3];
  const std::int64_t c_out = ws[0], cig = ws[1], k = ws[2];
  LCAUNET_CHECK_SHAPE(ws[2] == ws[3] && k % 2 == 1, "pdc_conv2d: kernel must be square and odd");
  LCAUNET_CHECK_SHAPE(groups > 0 && c_in % groups == 0 && c_out % groups == 0 &&
                          c_in / groups == cig,
                      "pdc_conv2d: channel/group mismatch (in=", c_in, " groups=",
                      groups, " weight-in=", cig, ")");
  LCAUNET_CHECK_SHAPE(h + 2 * pad >= k && wd + 2 * pad >= k,
                      "pdc_conv2d: spatial dims smaller than kernel");
  const std::int64_t oh = detail::conv_out_dim(h, k, stride, pad);
  const std::int64_t ow = detail::conv_out_dim(wd, k, stride, pad);
  const std::int64_t cog = c_out / groups, ctr = k / 2;

  auto at = [h, wd](const T* plane, std::int64_t y, std::int64_t x_) -> T {
    return (y >= 0 && y < h && x_ >= 0 && x_ < wd) ? plane[y * wd + x_] : T(0);
  };

  Array<T> out(Shape{b, c_out, oh, ow});
  for (std::int64_t i = 0; i < b; ++i) {
    for (std::int64_t co = 0; co < c_out; ++co) {
      const std::int64_t g = co / cog;
      T* yplane = out.data.data() + (i * c_out + co) * oh * ow;
      const T* wk = w.value().data.data() + co * cig * k * k;
      for (std::int64_t oy = 0; oy < oh; ++oy) {
        for (std::int64_t ox = 0; ox < ow; ++ox) {
          T acc = bias.defined() ? bias.value()[co] : T(0);
          for (std::int64_t ci = 0; ci < cig; ++ci) {
            const T* plane =
                x.value().data.data() + (i * c_in + g * cig + ci) * h * wd;
            const T xc = at(plane, oy * stride + ctr - pad, ox * stride + ctr - pad);
            const T* wc = wk + ci * k * k;
            for (std::int64_t dy = 0; dy < k; ++dy)
              for (std::int64_t dx = 0; dx < k; ++dx)
                acc += wc[dy * k + dx] *
                       (at(plane, oy * stride + dy - pad, ox * stride + dx - pad) - xc);
          }
          yplane[oy * ow + ox] = acc;
        }
      }
    }
  }

  auto px = x.ptr(), pw = w.ptr();
  auto pb = bias.defined() ? bias.ptr() : nullptr;
  auto parents = bias.defined() ? std::vector<Var<T>>{x, w, bias}
                                : std::vector<Var<T>>{x, w};
  return make_op<T>(std::move(out), parents,
                    [px, pw, pb, b, c_in, h, wd, c_out, cig, cog, k, ctr, stride,
                     pad, oh, ow, at](Node<T>& self) {
    if (px->requires_grad) px->ensure_grad();
    if (pw->requires_grad) pw->ensure_grad();
    if (pb && pb->requires_grad) pb->ensure_grad();
    for (std::int64_t i = 0; i < b; ++i) {
      for (std::int64_t co = 0; co < c_out; ++co) {
        const std::int64_t g = co / cog;
        const T* gplane = self.grad.data() + (i * c_out + co) * oh * ow;
        const T* wk = pw->value.data.data() + co * cig * k * k;
        T* dwk = pw->requires_grad ? pw->grad.data() + co * cig * k * k : nullptr;
        for (std::int64_t oy = 0; oy < oh; ++oy) {
          for (std::int64_t ox = 0; ox < ow; ++ox) {
            const T gy = gplane[oy * ow + ox];
            if (gy == T(0)) continue;
            if (pb && pb->requires_grad) pb->grad[co] += gy;
            for (std::int64_t ci = 0; ci < cig; ++ci) {
              const std::int64_t cx = i * c_in + g * cig + ci;
              const T* plane = px->value.data.data() + cx * h * wd;
              T* dplane = px->requires_grad ? px->grad.data() + cx * h * wd : nullptr;
              const std::int64_t cy = oy * stride + ctr - pad;
              const std::int64_t cxp = ox * stride + ctr - pad;
              const T xc = at(plane, cy, cxp);
              const T* wc = wk + ci * k * k;
              T wsum = 0;
              for (std::int64_t dy = 0; dy < k; ++dy) {
                for (std::int64_t dx = 0; dx < k; ++dx) {
                  const std::int64_t iy = oy * stride + dy - pad;
                  const std::int64_t ix = ox * stride + dx - pad;
                  const T xv = at(plane, iy, ix);
                  if (dwk) dwk[ci * k * k + dy * k + dx] += gy * (xv - xc);
                  const T wv = wc[dy * k + dx];
                  wsum += wv;
                  if (dplane && iy >= 0 && iy < h && ix >= 0 && ix < wd)
                    dplane[iy * wd + ix] += gy * wv;
                }
              }
              if (dplane && cy >= 0 && cy < h && cxp >= 0 && cxp < wd)
                dplane[cy * wd + cxp] -= gy * wsum;
            }
          }
        }
      }
    }
  });
}

// 2x2 max pooling with stride 2.
template <typename T>
Var<T> maxpool2x2(const Var<T>& x) {
  const Shape& s = x.shape();
  LCAUNET_CHECK_SHAPE(s.size() == 4 && s[2] % 2 == 0 && s[3] % 2 == 0,
                      "maxpool2x2: NCHW with even H, W required, got ", shape_str(s));
  const std::int64_t bc = s[0] * s[1], h = s[2], w = s[3];
  const std::int64_t oh = h / 2, ow = w / 2;
  Array<T> out(Shape{s[0], s[1], oh, ow});
  auto argmax = std::make_shared<std::vector<std::int64_t>>(
      static_cast<std::size_t>(bc * oh * ow));
  for (std::int64_t p = 0; p < bc; ++p) {
    const T* in = x.value().data.data() + p * h * w;
    T* o = out.data.data() + p * oh * ow;
    std::int64_t* am = argmax->data() + p * oh * ow;
    for (std::int64_t oy = 0; oy < oh; ++oy) {
      for (std::int64_t ox = 0; ox < ow; ++ox) {
        std::int64_t best = (2 * oy) * w + 2 * ox;
        T bv = in[best];
        const std::int64_t cands[3] = {(2 * oy) * w + 2 * ox + 1,
                                       (2 * oy + 1) * w + 2 * ox,
                                       (2 * oy + 1) * w + 2 * ox + 1};
        for (std::int64_t cand : cands)
          if (in[cand] > bv) { bv = in[cand]; best = cand; }
        o[oy * ow + ox] = bv;
        am[oy * ow + ox] = best;
      }
    }
  }
  auto px = x.ptr();
  return make_op<T>(std::move(out), {x}, [px, argmax, bc, h, w, oh, ow](Node<T>& self) {
    if (!px->requires_grad) return;
    px->ensure_grad();
    for (std::int64_t p = 0; p < bc; ++p) {
      const T* g = self.grad.data() + p * oh * ow;
      T* dst = px->grad.data() + p * h * w;
      const std::int64_t* am = argmax->data() + p * oh * ow;
      for (std::int64_t j = 0; j < oh * ow; ++j) dst[am[j]] += g[j];
    }
  });
}

namespace detail {

struct LerpTap {
  std::int64_t lo, hi;
  double frac;
};

inline std::vector<LerpTap> bilinear_taps(std::int64_t in, std::int64_t out) {
  std::vector<LerpTap> taps(static_cast<std::size_t>(out));
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (std::int64_t o = 0; o < out; ++o) {
    double src = (static_cast<double>(o) + 0.5) * scale - 0.5;
    if (src < 0) src = 0;
    const double f = std::floor(src);
    std::int64_t lo = static_cast<std::int64_t>(f);
    std::int64_t hi = std::min(lo + 1, in - 1);
    if (lo > in - 1) lo = in - 1;
    taps[static_cast<std::size_t>(o)] = {lo, hi, src - f};
  }
  return taps;
}

}  // namespace detail

// Bilinear resize to (oh, ow), half-pixel centers (align_corners=false).
template <typename T>
Var<T> bilinear_resize(const Var<T>& x, std::int64_t oh, std::int64_t ow) {
  const Shape& s = x.shape();
  LCAUNET_CHECK_SHAPE(s.size() == 4, "bilinear_resize: expected NCHW");
  const std::int64_t bc = s[0] * s[1], h = s[2], w = s[3];
  if (oh == h && ow == w) return reshape(x, s);  // pass-through
  auto ty = std::make_shared<std::vector<detail::LerpTap>>(detail::bilinear_taps(h, oh));
  auto tx = std::make_shared<std::vector<detail::LerpTap>>(detail::bilinear_taps(w, ow));
  Array<T> out(Shape{s[0], s[1], oh, ow});
  for (std::int64_t p = 0; p < bc; ++p) {
    const T* in = x.value().data.data() + p * h * w;
    T* o = out.data.data() + p * oh * ow;
    for (std::int64_t oy = 0; oy < oh; ++oy) {
      const auto& a = (*ty)[static_cast<std::size_t>(oy)];
      for (std::int64_t ox = 0; ox < ow; ++ox) {
        const auto& b = (*tx)[static_cast<std::size_t>(ox)];
        const T v00 = in[a.lo * w + b.lo], v01 = in[a.lo * w + b.hi];
        const T v10 = in[a.hi * w + b.lo], v11 = in[a.hi * w + b.hi];
        const T top = v00 + static_cast<T>(b.frac) * (v01 - v00);
        const T bot = v10 + static_cast<T>(b.frac) * (v11 - v10);
        o[oy * ow + ox] = top + static_cast<T>(a.frac) * (bot - top);
      }
    }
  }
  auto px = x.ptr();
  return make_op<T>(std::move(out), {x}, [px, ty, tx, bc, h, w, oh, ow](Node<T>& self) {
    if (!px->requires_grad) return;
    px->ensure_grad();
    for (std::int64_t p = 0; p < bc; ++p) {
      const T* g = self.grad.data() + p * oh * ow;
      T* dst = px->grad.data() + p * h * w;
      for (std::int64_t oy = 0; oy < oh; ++oy) {
        const auto& a = (*ty)[static_cast<std::size_t>(oy)];
        const T fy = static_cast<T>(a.frac);
        for (std::int64_t ox = 0; ox < ow; ++ox) {
          const auto& b = (*tx)[static_cast<std::size_t>(ox)];
          const T fx = static_cast<T>(b.frac);
          const T gv = g[oy * ow + ox];
          dst[a.lo * w + b.lo] += gv * (T(1) - fy) * (T(1) - fx);
          dst[a.lo * w + b.hi] += gv * (T(1) - fy) * fx;
          dst[a.hi * w + b.lo] += gv * fy * (T(1) - fx);
          dst[a.hi * w + b.hi] += gv * fy * fx;
        }
      }
    }
  });
}

// (B, C, H, W) -> (B, H*W, C) token layout.
template <typename T>
Var<T> nchw_to_tokens(const Var<T>& x) {
  const Shape& s = x.shape();
  LCAUNET_CHECK_SHAPE(s.size() == 4, "nchw_to_tokens: expected NCHW");
  const std::int64_t b = s[0], c = s[1], hw = s[2] * s[3];
  Array<T> out(Shape{b, hw, c});
  for (std::int64_t i = 0; i < b; ++i) {
    ConstMatMap<T> in(x.value().data.data() + i * c * hw, c, hw);
    MatMap<T>(out.data.data() + i * hw * c, hw, c) = in.transpose();
  }
  auto px = x.ptr();
  return make_op<T>(std::move(out), {x}, [px, b, c, hw](Node<T>& self) {
    if (!px->requires_grad) return;
    px->ensure_grad();
    for (std::int64_t i = 0; i < b; ++i) {
      ConstMatMap<T> g(self.grad.data() + i * hw * c, hw, c);
      MatMap<T>(px->grad.data() + i * c * hw, c, hw) += g.transpose();
    }
  });
}

// (B, N, C) tokens with grid (gh, gw) -> (B, C, gh, gw).
template <typename T>
Var<T> tokens_to_nchw(const Var<T>& t, std::int64_t gh, std::int64_t gw) {
  const Shape& s = t.shape();
  LCAUNET_CHECK_SHAPE(s.size() == 3 && s[1] == gh * gw,
                      "tokens_to_nchw: token count ", s.size() == 3 ? s[1] : -1,
                      " != ", gh, "x", gw);
  const std::int64_t b = s[0], c = s[2], hw = gh * gw;
  Array<T> out(Shape{b, c, gh, gw});
  for (std::int64_t i = 0; i < b; ++i) {
    ConstMatMap<T> in(t.value().data.data() + i * hw * c, hw, c);
    MatMap<T>(out.data.data() + i * c * hw, c, hw) = in.transpose();
  }
  auto pt = t.ptr();
  return make_op<T>(std::move(out), {t}, [pt, b, c, hw](Node<T>& self) {
    if (!pt->requires_grad) return;
    pt->ensure_grad();
    for (std::int64_t i = 0; i < b; ++i) {
      ConstMatMap<T> g(self.grad.data() + i * c * hw, c, hw);
      MatMap<T>(pt->grad.data() + i * hw * c, hw, c) += g.transpose();
    }
  });
}

// (B, C, H, W) -> (B, (H/P)*(W/P), C*P*P) non-overlapping patch flattening.
template <typename T>
Var<T> space_to_tokens(const Var<T>& x, std::int64_t p) {
  const Shape& s = x.shape();
  LCAUNET_CHECK_SHAPE(s.size() == 4, "space_to_tokens: expected NCHW");
  LCAUNET_CHECK_CONFIG(s[2] % p == 0 && s[3] % p == 0,
                       "space_to_tokens: H=", s[2], " W=", s[3],
                       " must be divisible by patch size ", p);
  const std::int64_t b = s[0], c = s[1], h = s[2], w = s[3];
  const std::int64_t ph = h / p, pw = w / p, n = ph * pw, d = c * p * p;
  Array<T> out(Shape{b, n, d});
  for (std::int64_t i = 0; i < b; ++i)
    for (std::int64_t ci = 0; ci < c; ++ci) {
      const T* plane = x.value().data.data() + (i * c + ci) * h * w;
      for (std::int64_t py = 0; py < ph; ++py)
        for (std::int64_t px_ = 0; px_ < pw; ++px_) {
          T* tok = out.data.data() + (i * n + py * pw + px_) * d + ci * p * p;
          for (std::int64_t dy = 0; dy < p; ++dy)
            std::copy_n(plane + (py * p + dy) * w + px_ * p, p, tok + dy * p);
        }
    }
  auto px = x.ptr();
  return make_op<T>(std::move(out), {x}, [px, b, c, h, w, p](Node<T>& self) {
    if (!px->requires_grad) return;
    px->ensure_grad();
    const std::int64_t ph = h / p, pw = w / p, n = ph * pw, d = c * p * p;
    for (std::int64_t i = 0; i < b; ++i)
      for (std::int64_t ci = 0; ci < c; ++ci) {
        T* plane = px->grad.data() + (i * c + ci) * h * w;
        for (std::int64_t py = 0; py < ph; ++py)
          for (std::int64_t px_ = 0; px_ < pw; ++px_) {
            const T* tok =
                self.grad.data() + (i * n + py * pw + px_) * d + ci * p * p;
            for (std::int64_t dy = 0; dy < p; ++dy) {
              T* dst = plane + (py * p + dy) * w + px_ * p;
              for (std::int64_t dx = 0; dx < p; ++dx) dst[dx] += tok[dy * p + dx];
            }
          }
      }
  });
}

}  // namespace lcaunet::ag
