#pragma once

#include <cmath>
#include <memory>
#include <vector>

#include "lcaunet/ops.hpp"

namespace lcaunet::ag {

// Row indices that partition a (B, gh*gw, C) token tensor into windows of
// wh x ww, optionally after a cyclic shift by (-shift, -shift). Output row
// order is (batch, window row-major, token row-major within window), suitable
// for gather_rows with row_len = C.
inline std::shared_ptr<std::vector<std::int64_t>> window_partition_indices(
    std::int64_t b, std::int64_t gh, std::int64_t gw, std::int64_t wh,
    std::int64_t ww, std::int64_t shift = 0) {
  LCAUNET_CHECK_CONFIG(gh % wh == 0 && gw % ww == 0, "window partition: grid ",
                       gh, "x", gw, " not divisible by window ", wh, "x", ww);
  LCAUNET_CHECK_CONFIG(shift >= 0 && shift < wh && shift < ww,
                       "window partition: bad shift ", shift);
  const std::int64_t n = gh * gw;
  auto idx = std::make_shared<std::vector<std::int64_t>>();
  idx->reserve(static_cast<std::size_t>(b * n));
  for (std::int64_t i = 0; i < b; ++i)
    for (std::int64_t wr = 0; wr < gh / wh; ++wr)
      for (std::int64_t wc = 0; wc < gw / ww; ++wc)
        for (std::int64_t tr = 0; tr < wh; ++tr)
          for (std::int64_t tc = 0; tc < ww; ++tc) {
            const std::int64_t r = (wr * wh + tr + shift) % gh;
            const std::int64_t c = (wc * ww + tc + shift) % gw;
            idx->push_back(i * n + r * gw + c);
          }
  return idx;
}

// Inverse permutation: scatter window rows back to (B, gh*gw, C) token order.
inline std::shared_ptr<std::vector<std::int64_t>> invert_row_permutation(
    const std::vector<std::int64_t>& fwd) {
  auto inv = std::make_shared<std::vector<std::int64_t>>(fwd.size());
  for (std::size_t r = 0; r < fwd.size(); ++r)
    (*inv)[static_cast<std::size_t>(fwd[r])] = static_cast<std::int64_t>(r);
  return inv;
}

// Additive attention mask for shifted windows: tokens that came from different
// sides of the cyclic wrap must not see each other. Shape (n_windows, L, L)
// with 0 for allowed pairs and `blocked` otherwise.
template <typename T>
Array<T> shifted_window_mask(std::int64_t gh, std::int64_t gw, std::int64_t wh,
                             std::int64_t ww, std::int64_t shift,
                             T blocked = T(-100)) {
  LCAUNET_CHECK_CONFIG(shift > 0 && shift < wh && shift < ww,
                       "shifted_window_mask: bad shift ", shift);
  // Label each grid cell of the *shifted* frame by its source region.
  std::vector<int> region(static_cast<std::size_t>(gh * gw));
  auto band = [](std::int64_t v, std::int64_t extent, std::int64_t win,
                 std::int64_t s) {
    if (v < extent - win) return 0;
    if (v < extent - s) return 1;
    return 2;
  };
  for (std::int64_t r = 0; r < gh; ++r)
    for (std::int64_t c = 0; c < gw; ++c)
      region[static_cast<std::size_t>(r * gw + c)] =
          band(r, gh, wh, shift) * 3 + band(c, gw, ww, shift);

  const std::int64_t nw = (gh / wh) * (gw / ww), l = wh * ww;
  Array<T> mask(Shape{nw, l, l}, T(0));
  auto idx = window_partition_indices(1, gh, gw, wh, ww, 0);
  for (std::int64_t w = 0; w < nw; ++w) {
    const std::int64_t* rows = idx->data() + w * l;
    T* m = mask.data.data() + w * l * l;
    for (std::int64_t a = 0; a < l; ++a)
      for (std::int64_t bq = 0; bq < l; ++bq)
        if (region[static_cast<std::size_t>(rows[a])] !=
            region[static_cast<std::size_t>(rows[bq])])
          m[a * l + bq] = blocked;
  }
  return mask;
}

// Multi-head scaled dot-product attention over independent windows.
// q, k, v: (R, C) with R = n_windows * l and C = heads * head_dim. The
// optional mask (nw_per_image, l, l) is added to the logits of window w using
// slice w % nw_per_image. Returns (R, C). Forward GEMM MACs are tallied when a
// MacScope is active: 2 * R * l * C per call.
template <typename T>
Var<T> attend_windows(const Var<T>& q, const Var<T>& k, const Var<T>& v,
                      std::int64_t l, std::int64_t heads,
                      std::shared_ptr<const Array<T>> mask = nullptr) {
  LCAUNET_CHECK_SHAPE(q.shape().size() == 2 && q.shape() == k.shape() &&
                          k.shape() == v.shape(),
                      "attend_windows: q/k/v must share a 2-D shape, got ",
                      shape_str(q.shape()), " / ", shape_str(k.shape()), " / ",
                      shape_str(v.shape()));
  const std::int64_t rows = q.dim(0), c = q.dim(1);
  LCAUNET_CHECK_SHAPE(rows % l == 0, "attend_windows: rows ", rows,
                      " not a multiple of window length ", l);
  LCAUNET_CHECK_CONFIG(c % heads == 0, "attend_windows: dim ", c,
                       " not divisible by heads ", heads);
  const std::int64_t nw = rows / l, d = c / heads;
  const T scl = static_cast<T>(1.0 / std::sqrt(static_cast<double>(d)));
  std::int64_t nw_mask = 0;
  if (mask) {
    LCAUNET_CHECK_SHAPE(mask->shape.size() == 3 && mask->shape[1] == l &&
                            mask->shape[2] == l && nw % mask->shape[0] == 0,
                        "attend_windows: mask shape ", shape_str(mask->shape),
                        " incompatible with ", nw, " windows of length ", l);
    nw_mask = mask->shape[0];
  }

  using StrideMap = Eigen::Map<RowMat<T>, 0, Eigen::OuterStride<>>;
  using ConstStrideMap = Eigen::Map<const RowMat<T>, 0, Eigen::OuterStride<>>;
  const Eigen::OuterStride<> stride(static_cast<Eigen::Index>(c));

  // The saved probabilities are only needed by the backward pass; skip the
  // (potentially huge) buffer in inference / benchmark mode.
  const bool track = grad_mode_flag() && (q.requires_grad() || k.requires_grad() ||
                                          v.requires_grad());
  std::shared_ptr<std::vector<T>> probs;
  if (track)
    probs = std::make_shared<std::vector<T>>(
        static_cast<std::size_t>(nw * heads * l * l));
  Array<T> out(Shape{rows, c});
  RowMat<T> s(l, l);
  for (std::int64_t w = 0; w < nw; ++w) {
    for (std::int64_t h = 0; h < heads; ++h) {
      const std::int64_t base = w * l * c + h * d;
      ConstStrideMap qm(q.value().data.data() + base, l, d, stride);
      ConstStrideMap km(k.value().data.data() + base, l, d, stride);
      ConstStrideMap vm(v.value().data.data() + base, l, d, stride);
      s.noalias() = qm * km.transpose();
      s *= scl;
      if (mask)
        s += ConstMatMap<T>(mask->data.data() + (w % nw_mask) * l * l, l, l);
      for (std::int64_t r = 0; r < l; ++r) {
        T* row = s.data() + r * l;
        const T mx = *std::max_element(row, row + l);
        T sum = 0;
        for (std::int64_t j = 0; j < l; ++j) {
          row[j] = std::exp(row[j] - mx);
          sum += row[j];
        }
        const T inv = T(1) / sum;
        for (std::int64_t j = 0; j < l; ++j) row[j] *= inv;
      }
      if (track)
        std::copy_n(s.data(), l * l, probs->data() + (w * heads + h) * l * l);
      StrideMap(out.data.data() + base, l, d, stride).noalias() = s * vm;
    }
  }
  count_macs(2ull * static_cast<std::uint64_t>(rows) * l * c);

  auto pq = q.ptr(), pk = k.ptr(), pv = v.ptr();
  return make_op<T>(std::move(out), {q, k, v},
                    [pq, pk, pv, probs, nw, heads, l, c, d, scl,
                     stride](Node<T>& self) {
    const bool gq = pq->requires_grad, gk = pk->requires_grad,
               gv = pv->requires_grad;
    if (gq) pq->ensure_grad();
    if (gk) pk->ensure_grad();
    if (gv) pv->ensure_grad();
    RowMat<T> da(l, l), ds(l, l);
    for (std::int64_t w = 0; w < nw; ++w) {
      for (std::int64_t h = 0; h < heads; ++h) {
        const std::int64_t base = w * l * c + h * d;
        ConstMatMap<T> a(probs->data() + (w * heads + h) * l * l, l, l);
        ConstStrideMap go(self.grad.data() + base, l, d, stride);
        ConstStrideMap vm(pv->value.data.data() + base, l, d, stride);
        if (gv)
          StrideMap(pv->grad.data() + base, l, d, stride).noalias() +=
              a.transpose() * go;
        if (!gq && !gk) continue;
        da.noalias() = go * vm.transpose();
        // softmax backward: ds = a .* (da - rowsum(a .* da))
        for (std::int64_t r = 0; r < l; ++r) {
          const T dot = a.row(r).cwiseProduct(da.row(r)).sum();
          ds.row(r) = (a.row(r).array() * (da.row(r).array() - dot)).matrix();
        }
        ds *= scl;
        if (gq)
          StrideMap(pq->grad.data() + base, l, d, stride).noalias() +=
              ds * ConstStrideMap(pk->value.data.data() + base, l, d, stride);
        if (gk)
          StrideMap(pk->grad.data() + base, l, d, stride).noalias() +=
              ds.transpose() *
              ConstStrideMap(pq->value.data.data() + base, l, d, stride);
      }
    }
  });
}

}  // namespace lcaunet::ag
