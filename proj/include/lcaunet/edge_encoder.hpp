#pragma once

#include <string>
#include <vector>

#include "lcaunet/layers.hpp"

namespace lcaunet {

// Depthwise central-difference conv -> ReLU -> pointwise conv, plus residual.
// The pointwise projection starts at zero so each block is the identity at
// init: sixteen of these run back to back with no normalization, and any
// variance gain per block compounds into features the downstream heads
// cannot survive when training from scratch (no pretrained branch here).
template <typename T>
struct PdcBlock {
  nn::PdcConv<T> dw;
  nn::Conv2d<T> pw;

  PdcBlock() = default;
  PdcBlock(ag::ParamSet<T>& ps, const std::string& name, Rng& rng, std::int64_t channels)
      : dw(ps, name + ".dw", rng, channels, channels, 3, 1, 1, channels),
        pw(ps, name + ".pw", rng, channels, channels, 1, 1, 0, nn::WInit::Zero) {}

  ag::Var<T> operator()(const ag::Var<T>& x) const {
    return ag::add(x, pw(ag::relu(dw(x))));
  }
};

template <typename T>
struct EdgeStageOutput {
  ag::Var<T> features;  // (B, C*2^s, H/4/2^s, W/4/2^s)
  ag::Var<T> side_map;  // (B, 1, H, W) in [0,1]
};

// Four-stage difference-convolution branch. The stem takes the image to C
// channels at 1/4 resolution; each later stage halves the grid via max-pool
// and doubles the width with a 1x1 conv so stages pair up with the body
// encoder for fusion. Every stage ends in a supervised full-resolution side
// edge map.
template <typename T>
struct EdgeEncoder {
  static constexpr int kStages = 4;
  static constexpr int kBlocksPerStage = 4;

  std::int64_t base_channels = 0;
  nn::Conv2d<T> stem0, stem1;
  struct Stage {
    nn::Conv2d<T> expand;  // undefined for stage 0
    std::vector<PdcBlock<T>> blocks;
    nn::Conv2d<T> side;
  };
  std::vector<Stage> stages;

  EdgeEncoder() = default;
  EdgeEncoder(ag::ParamSet<T>& ps, const std::string& name, Rng& rng, std::int64_t c) {
    LCAUNET_CHECK_CONFIG(c > 0 && c % 2 == 0,
                         "edge encoder base channels must be positive and even, got ", c);
    base_channels = c;
    stem0 = nn::Conv2d<T>(ps, name + ".stem0", rng, 3, c / 2, 3, 2, 1);
    stem1 = nn::Conv2d<T>(ps, name + ".stem1", rng, c / 2, c, 3, 2, 1);
    std::int64_t ch = c;
    for (int s = 0; s < kStages; ++s) {
      Stage st;
      const std::string sn = name + ".stage" + std::to_string(s);
      if (s > 0) {
        // No nonlinearity follows, so variance-preserving rather than He.
        st.expand = nn::Conv2d<T>(ps, sn + ".expand", rng, ch, 2 * ch, 1, 1, 0,
                                  nn::WInit::Xavier);
        ch *= 2;
      }
      for (int bI = 0; bI < kBlocksPerStage; ++bI)
        st.blocks.emplace_back(ps, sn + ".block" + std::to_string(bI), rng, ch);
      // Zero-init head: untrained side maps start at probability 0.5.
      st.side = nn::Conv2d<T>(ps, sn + ".side", rng, ch, 1, 1, 1, 0, nn::WInit::Zero);
      stages.push_back(std::move(st));
    }
  }

  std::vector<EdgeStageOutput<T>> forward(const ag::Var<T>& image) const {
    const Shape& s = image.shape();
    LCAUNET_CHECK_SHAPE(s.size() == 4 && s[1] == 3,
                        "edge encoder expects (B,3,H,W), got ", shape_str(s));
    const std::int64_t h = s[2], w = s[3];
    LCAUNET_CHECK_CONFIG(h % 32 == 0 && w % 32 == 0,
                         "edge encoder needs H, W divisible by 32, got ", h, "x", w);
    auto x = ag::relu(stem1(ag::relu(stem0(image))));
    std::vector<EdgeStageOutput<T>> out;
    for (int st = 0; st < kStages; ++st) {
      if (st > 0) x = stages[st].expand(ag::maxpool2x2(x));
      for (const auto& blk : stages[st].blocks) x = blk(x);
      auto side = ag::sigmoid(ag::bilinear_resize(stages[st].side(x), h, w));
      out.push_back({x, side});
    }
    return out;
  }
};

}  // namespace lcaunet
