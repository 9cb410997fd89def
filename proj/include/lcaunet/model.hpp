#pragma once

#include <string>
#include <vector>

#include "lcaunet/body_encoder.hpp"
#include "lcaunet/decoder.hpp"
#include "lcaunet/edge_encoder.hpp"
#include "lcaunet/lcaf.hpp"

namespace lcaunet {

struct ModelConfig {
  std::int64_t img_h = 224, img_w = 224;
  std::int64_t edge_channels = 24;
  std::int64_t body_dim = 24;
  std::vector<std::int64_t> depths{2, 2, 2, 2};
  std::vector<std::int64_t> heads{3, 6, 12, 24};
  std::int64_t window = 7;
  double mlp_ratio = 4.0;
  std::int64_t lcaf_window = 7;
  bool use_lcaf = true;      // false: concat + 1x1 fusion (ablation)
  bool fuse_to_body = false; // true: fused stage also feeds the next body stage

  void validate() const {
    LCAUNET_CHECK_CONFIG(edge_channels == body_dim,
                         "fusion pairs same-stage features, so edge_channels (",
                         edge_channels, ") must equal body_dim (", body_dim, ")");
    LCAUNET_CHECK_CONFIG(img_h % 32 == 0 && img_w % 32 == 0,
                         "image size must be divisible by 32, got ", img_h, "x", img_w);
    LCAUNET_CHECK_CONFIG(depths.size() == 4 && heads.size() == 4,
                         "depths and heads must list 4 stages");
    for (int s = 0; s < 4; ++s) {
      const std::int64_t g = (img_h / 4) >> s, gw_ = (img_w / 4) >> s;
      LCAUNET_CHECK_CONFIG(g % window == 0 && gw_ % window == 0, "stage ", s,
                           " grid ", g, "x", gw_, " not divisible by window ", window);
      LCAUNET_CHECK_CONFIG(g % lcaf_window == 0 && gw_ % lcaf_window == 0, "stage ",
                           s, " grid ", g, "x", gw_,
                           " not divisible by fusion window ", lcaf_window);
      LCAUNET_CHECK_CONFIG((body_dim << s) % heads[static_cast<std::size_t>(s)] == 0,
                           "stage ", s, " dim ", (body_dim << s),
                           " not divisible by heads ",
                           heads[static_cast<std::size_t>(s)]);
    }
  }
};

template <typename T>
struct SegOutput {
  ag::Var<T> logits;                 // (B, 1, H, W)
  std::vector<ag::Var<T>> edge_maps; // 4 x (B, 1, H, W), probabilities
};

template <typename T>
struct LCAUnet {
  ModelConfig cfg;
  ag::ParamSet<T> params;
  EdgeEncoder<T> edge;
  BodyEncoder<T> body;
  std::vector<LcafFusion<T>> lcaf;
  std::vector<ConcatFuse<T>> cat_fuse;
  Decoder<T> decoder;

  explicit LCAUnet(ModelConfig config, std::uint64_t seed) : cfg(std::move(config)) {
    cfg.validate();
    Rng rng(mix_seed(seed, 0x1c0de));
    edge = EdgeEncoder<T>(params, "edge", rng, cfg.edge_channels);
    BodyEncoderConfig bc;
    bc.embed_dim = cfg.body_dim;
    bc.depths = cfg.depths;
    bc.heads = cfg.heads;
    bc.window = cfg.window;
    bc.mlp_ratio = cfg.mlp_ratio;
    body = BodyEncoder<T>(params, "body", rng, bc, cfg.img_h, cfg.img_w);
    for (int s = 0; s < 4; ++s) {
      const std::int64_t d = cfg.body_dim << s;
      if (cfg.use_lcaf)
        lcaf.emplace_back(params, "lcaf" + std::to_string(s), rng, d,
                          cfg.heads[static_cast<std::size_t>(s)], cfg.lcaf_window,
                          body.grid_h(s), body.grid_w(s),
                          static_cast<std::int64_t>(cfg.mlp_ratio * d));
      else
        cat_fuse.emplace_back(params, "fuse" + std::to_string(s), rng, d);
    }
    decoder = Decoder<T>(params, "decoder", rng, cfg.body_dim);
  }

  SegOutput<T> forward(const ag::Var<T>& image) const {
    auto eouts = edge.forward(image);
    auto t = body.embed_forward(image);
    std::vector<ag::Var<T>> fused;
    for (int s = 0; s < 4; ++s) {
      t = body.stage_forward(s, t);
      auto bf = ag::tokens_to_nchw(t, body.grid_h(s), body.grid_w(s));
      fused.push_back(cfg.use_lcaf
                          ? lcaf[static_cast<std::size_t>(s)](eouts[static_cast<std::size_t>(s)].features, bf)
                          : cat_fuse[static_cast<std::size_t>(s)](eouts[static_cast<std::size_t>(s)].features, bf));
      if (s < 3) {
        if (cfg.fuse_to_body)
          t = ag::add(t, ag::nchw_to_tokens(fused.back()));
        t = body.merge_forward(s, t);
      }
    }
    SegOutput<T> out;
    out.logits = decoder(image, fused);
    for (auto& e : eouts) out.edge_maps.push_back(e.side_map);
    return out;
  }
};

}  // namespace lcaunet
