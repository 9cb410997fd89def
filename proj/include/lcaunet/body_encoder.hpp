#pragma once

#include <memory>
#include <string>
#include <vector>

#include "lcaunet/layers.hpp"

namespace lcaunet {

struct BodyEncoderConfig {
  std::int64_t patch_size = 4;
  std::int64_t embed_dim = 24;
  std::vector<std::int64_t> depths{2, 2, 2, 2};
  std::vector<std::int64_t> heads{3, 6, 12, 24};
  std::int64_t window = 7;
  double mlp_ratio = 4.0;
};

// Patch flattening -> linear projection -> learned absolute positions.
template <typename T>
struct PatchEmbed {
  nn::Dense<T> proj;
  ag::Var<T> pos;
  std::int64_t p = 4;

  PatchEmbed() = default;
  PatchEmbed(ag::ParamSet<T>& ps, const std::string& name, Rng& rng,
             std::int64_t patch, std::int64_t dim, std::int64_t n_tokens)
      : proj(ps, name + ".proj", rng, 3 * patch * patch, dim), p(patch) {
    pos = ps.add(name + ".pos", init::trunc_normal<T>(rng, {n_tokens, dim}));
  }

  ag::Var<T> operator()(const ag::Var<T>& image) const {
    return ag::add_position(proj(ag::space_to_tokens(image, p)), pos);
  }
};

// One pre-LN windowed self-attention block: z + MSA(LN(z)), then the MLP
// residual. Shifted variant cyclically shifts the grid by window/2 before
// partitioning and masks attention across the wrap seam. When the grid equals
// the window there is nothing to shift across, so the shift degenerates to 0
// (the standard construction).
template <typename T>
struct WindowAttnBlock {
  nn::LayerNorm<T> ln1, ln2;
  nn::Dense<T> q, k, v, o;
  nn::Mlp<T> mlp;
  std::int64_t heads = 1, window = 7, shift = 0, gh = 0, gw = 0;
  std::shared_ptr<const Array<T>> mask;

  WindowAttnBlock() = default;
  WindowAttnBlock(ag::ParamSet<T>& ps, const std::string& name, Rng& rng,
                  std::int64_t dim, std::int64_t heads_, std::int64_t window_,
                  bool shifted, std::int64_t gh_, std::int64_t gw_,
                  std::int64_t mlp_hidden)
      : ln1(ps, name + ".ln1", dim),
        ln2(ps, name + ".ln2", dim),
        q(ps, name + ".q", rng, dim, dim),
        k(ps, name + ".k", rng, dim, dim),
        v(ps, name + ".v", rng, dim, dim),
        o(ps, name + ".o", rng, dim, dim),
        mlp(ps, name + ".mlp", rng, dim, mlp_hidden),
        heads(heads_), window(window_), gh(gh_), gw(gw_) {
    LCAUNET_CHECK_CONFIG(dim % heads_ == 0, name, ": dim ", dim,
                         " not divisible by heads ", heads_);
    LCAUNET_CHECK_CONFIG(gh_ % window_ == 0 && gw_ % window_ == 0, name,
                         ": grid ", gh_, "x", gw_, " not divisible by window ",
                         window_);
    if (shifted && gh_ > window_ && gw_ > window_) {
      shift = window_ / 2;
      mask = std::make_shared<const Array<T>>(
          ag::shifted_window_mask<T>(gh_, gw_, window_, window_, shift));
    }
  }

  ag::Var<T> operator()(const ag::Var<T>& z) const {
    const std::int64_t b = z.dim(0), n = z.dim(1), c = z.dim(2);
    auto y = ln1(z);
    auto fwd = ag::window_partition_indices(b, gh, gw, window, window, shift);
    auto win = ag::gather_rows(y, fwd, Shape{b * n, c}, c);
    auto att = ag::attend_windows(q(win), k(win), v(win), window * window, heads, mask);
    auto back = ag::gather_rows(o(att), ag::invert_row_permutation(*fwd),
                                Shape{b, n, c}, c);
    auto z1 = ag::add(z, back);
    return ag::add(z1, mlp(ln2(z1)));
  }
};

// 2x2 token merge: concatenate the four neighbors, LN, project 4C -> 2C.
template <typename T>
struct PatchMerge {
  nn::LayerNorm<T> norm;
  nn::Dense<T> proj;
  std::int64_t gh = 0, gw = 0;

  PatchMerge() = default;
  PatchMerge(ag::ParamSet<T>& ps, const std::string& name, Rng& rng,
             std::int64_t dim, std::int64_t gh_, std::int64_t gw_)
      : norm(ps, name + ".norm", 4 * dim),
        proj(ps, name + ".proj", rng, 4 * dim, 2 * dim, /*bias=*/false),
        gh(gh_), gw(gw_) {
    LCAUNET_CHECK_CONFIG(gh_ % 2 == 0 && gw_ % 2 == 0,
                         "patch merge needs an even grid, got ", gh_, "x", gw_);
  }

  ag::Var<T> operator()(const ag::Var<T>& z) const {
    const std::int64_t b = z.dim(0), n = z.dim(1), c = z.dim(2);
    LCAUNET_CHECK_SHAPE(n == gh * gw, "patch merge: token count ", n,
                        " != grid ", gh, "x", gw);
    auto idx = std::make_shared<std::vector<std::int64_t>>();
    idx->reserve(static_cast<std::size_t>(b * n));
    for (std::int64_t i = 0; i < b; ++i)
      for (std::int64_t y = 0; y < gh; y += 2)
        for (std::int64_t x = 0; x < gw; x += 2) {
          idx->push_back(i * n + y * gw + x);
          idx->push_back(i * n + (y + 1) * gw + x);
          idx->push_back(i * n + y * gw + x + 1);
          idx->push_back(i * n + (y + 1) * gw + x + 1);
        }
    auto merged = ag::reshape(ag::gather_rows(z, idx, Shape{b * n, c}, c),
                              Shape{b, n / 4, 4 * c});
    return proj(norm(merged));
  }
};

// Hierarchical windowed-attention branch. The spatial grid is fixed at
// construction (learned positions are resolution-bound), and the per-stage
// pieces are exposed separately so the model can inject fused features
// between stages.
template <typename T>
struct BodyEncoder {
  BodyEncoderConfig cfg;
  std::int64_t gh0 = 0, gw0 = 0;
  PatchEmbed<T> embed;
  std::vector<std::vector<WindowAttnBlock<T>>> stages;
  std::vector<PatchMerge<T>> merges;

  BodyEncoder() = default;
  BodyEncoder(ag::ParamSet<T>& ps, const std::string& name, Rng& rng,
              BodyEncoderConfig config, std::int64_t img_h, std::int64_t img_w)
      : cfg(std::move(config)) {
    const std::int64_t p = cfg.patch_size;
    const int ns = static_cast<int>(cfg.depths.size());
    LCAUNET_CHECK_CONFIG(ns == 4 && cfg.heads.size() == 4,
                         "body encoder expects 4 stages of depths/heads");
    LCAUNET_CHECK_CONFIG(img_h % (p * 8) == 0 && img_w % (p * 8) == 0,
                         "body encoder needs H, W divisible by ", p * 8, ", got ",
                         img_h, "x", img_w);
    gh0 = img_h / p;
    gw0 = img_w / p;
    embed = PatchEmbed<T>(ps, name + ".embed", rng, p, cfg.embed_dim, gh0 * gw0);
    for (int s = 0; s < ns; ++s) {
      LCAUNET_CHECK_CONFIG(cfg.depths[s] > 0 && cfg.depths[s] % 2 == 0,
                           "stage depth must be a positive even count, got ",
                           cfg.depths[s]);
      const std::int64_t d = dim(s), gh = grid_h(s), gw = grid_w(s);
      std::vector<WindowAttnBlock<T>> blocks;
      const std::string sn = name + ".stage" + std::to_string(s);
      for (std::int64_t i = 0; i < cfg.depths[s]; ++i)
        blocks.emplace_back(ps, sn + ".block" + std::to_string(i), rng, d,
                            cfg.heads[s], cfg.window, /*shifted=*/i % 2 == 1, gh, gw,
                            static_cast<std::int64_t>(cfg.mlp_ratio * d));
      stages.push_back(std::move(blocks));
      if (s < ns - 1)
        merges.emplace_back(ps, sn + ".merge", rng, d, gh, gw);
    }
  }

  std::int64_t dim(int s) const { return cfg.embed_dim << s; }
  std::int64_t grid_h(int s) const { return gh0 >> s; }
  std::int64_t grid_w(int s) const { return gw0 >> s; }

  ag::Var<T> embed_forward(const ag::Var<T>& image) const { return embed(image); }

  ag::Var<T> stage_forward(int s, ag::Var<T> tokens) const {
    for (const auto& blk : stages[static_cast<std::size_t>(s)]) tokens = blk(tokens);
    return tokens;
  }

  ag::Var<T> merge_forward(int s, const ag::Var<T>& tokens) const {
    return merges[static_cast<std::size_t>(s)](tokens);
  }

  // Full pipeline: four NCHW stage features.
  std::vector<ag::Var<T>> forward(const ag::Var<T>& image) const {
    auto t = embed_forward(image);
    std::vector<ag::Var<T>> out;
    for (int s = 0; s < 4; ++s) {
      t = stage_forward(s, t);
      out.push_back(ag::tokens_to_nchw(t, grid_h(s), grid_w(s)));
      if (s < 3) t = merge_forward(s, t);
    }
    return out;
  }
};

}  // namespace lcaunet
