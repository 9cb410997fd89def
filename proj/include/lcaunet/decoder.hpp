#pragma once

#include <string>
#include <utility>
#include <vector>

#include "lcaunet/layers.hpp"

namespace lcaunet {

// conv3x3 -> IN -> ReLU -> conv3x3 -> IN, added back onto the input.
template <typename T>
struct ResidualBlock {
  nn::Conv2d<T> conv1, conv2;
  nn::InstanceNorm<T> in1, in2;

  ResidualBlock() = default;
  ResidualBlock(ag::ParamSet<T>& ps, const std::string& name, Rng& rng,
                std::int64_t channels)
      : conv1(ps, name + ".conv1", rng, channels, channels, 3, 1, 1),
        conv2(ps, name + ".conv2", rng, channels, channels, 3, 1, 1),
        in1(ps, name + ".in1", channels),
        in2(ps, name + ".in2", channels) {}

  ag::Var<T> operator()(const ag::Var<T>& x) const {
    return ag::add(x, in2(conv2(ag::relu(in1(conv1(x))))));
  }
};

// Prior-guided fusion: the high-level feature (half resolution) is upsampled
// and drives scale/shift heads that modulate the low-level feature
// (gamma ⊙ low + beta); the modulated map is concatenated with the untouched
// low feature and projected back to the stage width. Heads start at the
// identity modulation (gamma=1, beta=0).
template <typename T>
struct PgmfFuse {
  nn::Conv2d<T> g1, g2, b1, b2, out;
  std::int64_t c_low = 0;

  PgmfFuse() = default;
  PgmfFuse(ag::ParamSet<T>& ps, const std::string& name, Rng& rng,
           std::int64_t c_low_, std::int64_t c_high)
      : g1(ps, name + ".g1", rng, c_high, c_low_, 3, 1, 1),
        g2(ps, name + ".g2", rng, c_low_, c_low_, 3, 1, 1, nn::WInit::Zero, T(1)),
        b1(ps, name + ".b1", rng, c_high, c_low_, 3, 1, 1),
        b2(ps, name + ".b2", rng, c_low_, c_low_, 3, 1, 1, nn::WInit::Zero),
        out(ps, name + ".out", rng, 2 * c_low_, c_low_, 1, 1, 0),
        c_low(c_low_) {}

  ag::Var<T> operator()(const ag::Var<T>& low, const ag::Var<T>& high) const {
    const Shape& ls = low.shape();
    const Shape& hs = high.shape();
    LCAUNET_CHECK_SHAPE(ls.size() == 4 && hs.size() == 4 && hs[2] * 2 == ls[2] &&
                            hs[3] * 2 == ls[3],
                        "pgmf: high must be at exactly half the resolution of low, got ",
                        shape_str(hs), " vs ", shape_str(ls));
    auto up = ag::bilinear_resize(high, ls[2], ls[3]);
    auto gamma = g2(ag::relu(g1(up)));
    auto beta = b2(ag::relu(b1(up)));
    auto modulated = ag::add(ag::mul(gamma, low), beta);
    return out(ag::concat<T>({modulated, low}, 1));
  }
};

// Two shallow convolutional blocks on the raw image: features at full and
// half resolution for late injection into the decoder tail.
template <typename T>
struct ShallowFeatures {
  nn::Conv2d<T> conv1, conv2;

  ShallowFeatures() = default;
  ShallowFeatures(ag::ParamSet<T>& ps, const std::string& name, Rng& rng,
                  std::int64_t c_full, std::int64_t c_half)
      : conv1(ps, name + ".conv1", rng, 3, c_full, 3, 1, 1),
        conv2(ps, name + ".conv2", rng, c_full, c_half, 3, 2, 1) {}

  std::pair<ag::Var<T>, ag::Var<T>> operator()(const ag::Var<T>& image) const {
    auto full = ag::relu(conv1(image));
    return {full, ag::relu(conv2(full))};
  }
};

// Decodes the four fused stages (C..8C at 1/4..1/32 resolution) into logits:
// per-stage residual pre-integration, three deep-to-shallow PGMF fusions down
// to H/4, then two bilinear 2x steps each concatenated with a shallow image
// feature, and a zero-initialized 1x1 head (untrained output = logit 0).
template <typename T>
struct Decoder {
  std::vector<ResidualBlock<T>> pre;
  std::vector<PgmfFuse<T>> pgmf;
  ShallowFeatures<T> shallow;
  nn::Conv2d<T> post_half, post_full, head;

  Decoder() = default;
  Decoder(ag::ParamSet<T>& ps, const std::string& name, Rng& rng, std::int64_t c) {
    LCAUNET_CHECK_CONFIG(c % 4 == 0, "decoder base width must be divisible by 4, got ", c);
    for (int s = 0; s < 4; ++s)
      pre.emplace_back(ps, name + ".pre" + std::to_string(s), rng, c << s);
    for (int s = 2; s >= 0; --s)  // deep to shallow: (4C,8C), (2C,4C), (C,2C)
      pgmf.emplace_back(ps, name + ".pgmf" + std::to_string(s), rng, c << s,
                        c << (s + 1));
    shallow = ShallowFeatures<T>(ps, name + ".shallow", rng, c / 4, c / 2);
    post_half = nn::Conv2d<T>(ps, name + ".post_half", rng, c + c / 2, c / 2, 1, 1, 0);
    post_full = nn::Conv2d<T>(ps, name + ".post_full", rng, c / 2 + c / 4, c / 4, 1, 1, 0);
    head = nn::Conv2d<T>(ps, name + ".head", rng, c / 4, 1, 1, 1, 0, nn::WInit::Zero);
  }

  ag::Var<T> operator()(const ag::Var<T>& image,
                        const std::vector<ag::Var<T>>& fused) const {
    LCAUNET_CHECK_SHAPE(fused.size() == 4, "decoder expects 4 fused stages");
    const std::int64_t h = image.dim(2), w = image.dim(3);
    std::vector<ag::Var<T>> r;
    for (int s = 0; s < 4; ++s) r.push_back(pre[static_cast<std::size_t>(s)](fused[static_cast<std::size_t>(s)]));
    auto d = r[3];
    for (int i = 0; i < 3; ++i) d = pgmf[static_cast<std::size_t>(i)](r[static_cast<std::size_t>(2 - i)], d);
    auto [sf_full, sf_half] = shallow(image);
    auto x1 = ag::relu(post_half(
        ag::concat<T>({ag::bilinear_resize(d, h / 2, w / 2), sf_half}, 1)));
    auto x0 = ag::relu(post_full(
        ag::concat<T>({ag::bilinear_resize(x1, h, w), sf_full}, 1)));
    return head(x0);
  }
};

}  // namespace lcaunet
