#pragma once

#include <cstdint>
#include <string>

#include "lcaunet/layers.hpp"

namespace lcaunet {

enum class AttnMode { global, local };

// Analytic multiply-accumulate cost of multi-head cross attention over an
// h x w token grid of width c: 4hwC^2 for the q/k/v/out projections plus the
// score/value products — quadratic in hw for the global form, linear for the
// windowed form. Softmax, scaling and bias terms are outside the model.
inline std::uint64_t attention_cost(std::uint64_t h, std::uint64_t w, std::uint64_t c,
                                    std::uint64_t win_h, std::uint64_t win_w,
                                    AttnMode mode) {
  const std::uint64_t hw = h * w;
  const std::uint64_t proj = 4 * hw * c * c;
  if (mode == AttnMode::global) return proj + 2 * hw * hw * c;
  return proj + 2 * win_h * win_w * hw * c;
}

// Windowed cross-attention fusion of one stage pair: queries from the edge
// branch, keys/values from the body branch, residual from the query side,
// then a residual FFN. Window defaults to the attention window of the body
// encoder; a window covering the whole grid makes the attention global.
template <typename T>
struct LcafFusion {
  nn::Dense<T> wq, wk, wv, wo;
  nn::Mlp<T> ffn;
  std::int64_t heads = 1, win = 7, gh = 0, gw = 0, dim = 0;

  LcafFusion() = default;
  LcafFusion(ag::ParamSet<T>& ps, const std::string& name, Rng& rng,
             std::int64_t dim_, std::int64_t heads_, std::int64_t window,
             std::int64_t gh_, std::int64_t gw_, std::int64_t ffn_hidden)
      : wq(ps, name + ".wq", rng, dim_, dim_, /*bias=*/false),
        wk(ps, name + ".wk", rng, dim_, dim_, /*bias=*/false),
        wv(ps, name + ".wv", rng, dim_, dim_, /*bias=*/false),
        wo(ps, name + ".wo", rng, dim_, dim_, /*bias=*/false),
        ffn(ps, name + ".ffn", rng, dim_, ffn_hidden),
        heads(heads_), win(window), gh(gh_), gw(gw_), dim(dim_) {
    LCAUNET_CHECK_CONFIG(dim_ % heads_ == 0, name, ": dim ", dim_,
                         " not divisible by heads ", heads_);
    LCAUNET_CHECK_CONFIG(gh_ % window == 0 && gw_ % window == 0, name, ": grid ",
                         gh_, "x", gw_, " not divisible by window ", window);
  }

  // Multi-head local cross attention on pre-partitioned window rows; this is
  // exactly the region the analytic cost model covers, so MAC tallies taken
  // around this call reproduce attention_cost.
  ag::Var<T> mlca_windows(const ag::Var<T>& edge_win, const ag::Var<T>& body_win) const {
    auto att = ag::attend_windows(wq(edge_win), wk(body_win), wv(body_win),
                                  win * win, heads);
    return ag::add(edge_win, wo(att));
  }

  ag::Var<T> operator()(const ag::Var<T>& edge_feat, const ag::Var<T>& body_feat) const {
    LCAUNET_CHECK_SHAPE(edge_feat.shape() == body_feat.shape(),
                        "lcaf: modality shapes differ: ", shape_str(edge_feat.shape()),
                        " vs ", shape_str(body_feat.shape()));
    const Shape& s = edge_feat.shape();
    LCAUNET_CHECK_SHAPE(s[1] == dim && s[2] == gh && s[3] == gw,
                        "lcaf: expected (B,", dim, ",", gh, ",", gw, "), got ",
                        shape_str(s));
    const std::int64_t b = s[0], n = gh * gw;
    auto et = ag::nchw_to_tokens(edge_feat);
    auto bt = ag::nchw_to_tokens(body_feat);
    auto fwd = ag::window_partition_indices(b, gh, gw, win, win, 0);
    auto ew = ag::gather_rows(et, fwd, Shape{b * n, dim}, dim);
    auto bw = ag::gather_rows(bt, fwd, Shape{b * n, dim}, dim);
    auto mlca = ag::gather_rows(mlca_windows(ew, bw), ag::invert_row_permutation(*fwd),
                                Shape{b, n, dim}, dim);
    auto out = ag::add(mlca, ffn(mlca));
    return ag::tokens_to_nchw(out, gh, gw);
  }
};

// Ablation substitute for LCAF: channel concatenation + 1x1 projection.
template <typename T>
struct ConcatFuse {
  nn::Conv2d<T> proj;

  ConcatFuse() = default;
  ConcatFuse(ag::ParamSet<T>& ps, const std::string& name, Rng& rng, std::int64_t dim)
      : proj(ps, name + ".proj", rng, 2 * dim, dim, 1, 1, 0) {}

  ag::Var<T> operator()(const ag::Var<T>& edge_feat, const ag::Var<T>& body_feat) const {
    LCAUNET_CHECK_SHAPE(edge_feat.shape() == body_feat.shape(),
                        "concat fuse: modality shapes differ");
    return proj(ag::concat<T>({edge_feat, body_feat}, 1));
  }
};

}  // namespace lcaunet
