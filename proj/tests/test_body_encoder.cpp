#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <random>

#include "lcaunet/body_encoder.hpp"
#include "oracles.hpp"

using namespace lcaunet;

namespace {

BodyEncoderConfig small_cfg() {
  BodyEncoderConfig c;
  c.embed_dim = 6;
  c.depths = {2, 2, 2, 2};
  c.heads = {1, 2, 3, 6};
  c.window = 4;
  return c;
}

}  // namespace

TEST_CASE("patch embedding equals a hand-rolled projection") {
  ag::ParamSet<double> ps;
  Rng rng(3);
  const std::int64_t p = 4, dim = 6, gh = 2, gw = 3;
  PatchEmbed<double> embed(ps, "embed", rng, p, dim, gh * gw);
  Array<double> img = test::randu(rng, {2, 3, gh * p, gw * p});

  ag::NoGradGuard ng;
  auto got = embed(ag::Var<double>::constant(img)).value();
  REQUIRE(got.shape == Shape{2, gh * gw, dim});

  const auto& w = embed.proj.w.value();   // (3*p*p, dim)
  const auto& bias = embed.proj.b.value();
  const auto& pos = embed.pos.value();    // (n, dim)
  for (std::int64_t b = 0; b < 2; ++b)
    for (std::int64_t ty = 0; ty < gh; ++ty)
      for (std::int64_t tx = 0; tx < gw; ++tx) {
        const std::int64_t t = ty * gw + tx;
        // flatten the patch channel-major, rows inside channels
        std::vector<double> f(static_cast<std::size_t>(3 * p * p));
        for (std::int64_t c = 0; c < 3; ++c)
          for (std::int64_t dy = 0; dy < p; ++dy)
            for (std::int64_t dx = 0; dx < p; ++dx)
              f[static_cast<std::size_t>(c * p * p + dy * p + dx)] =
                  img.at4(b, c, ty * p + dy, tx * p + dx);
        for (std::int64_t d = 0; d < dim; ++d) {
          double want = bias[d] + pos[t * dim + d];
          for (std::int64_t i = 0; i < 3 * p * p; ++i)
            want += f[static_cast<std::size_t>(i)] * w[i * dim + d];
          CHECK(got[(b * gh * gw + t) * dim + d] ==
                doctest::Approx(want).epsilon(1e-12));
        }
      }
}

TEST_CASE("hierarchy: grids halve, widths double, four NCHW stage outputs") {
  ag::ParamSet<float> ps;
  Rng rng(5);
  BodyEncoder<float> enc(ps, "body", rng, small_cfg(), 128, 128);
  CHECK(enc.gh0 == 32);
  for (int s = 0; s < 4; ++s) {
    CHECK(enc.dim(s) == 6 << s);
    CHECK(enc.grid_h(s) == 32 >> s);
    CHECK(enc.grid_w(s) == 32 >> s);
  }

  Array<float> img(Shape{1, 3, 128, 128});
  std::uniform_real_distribution<double> ud(0.0, 1.0);
  for (auto& x : img.data) x = static_cast<float>(ud(rng));
  ag::NoGradGuard ng;
  auto feats = enc.forward(ag::Var<float>::constant(img));
  REQUIRE(feats.size() == 4);
  CHECK(feats[0].shape() == Shape{1, 6, 32, 32});
  CHECK(feats[1].shape() == Shape{1, 12, 16, 16});
  CHECK(feats[2].shape() == Shape{1, 24, 8, 8});
  CHECK(feats[3].shape() == Shape{1, 48, 4, 4});
  for (const auto& f : feats)
    for (float v : f.value().data) CHECK(std::isfinite(v));
}

TEST_CASE("patch merge matches a from-scratch reimplementation") {
  ag::ParamSet<double> ps;
  Rng rng(7);
  const std::int64_t c = 3, gh = 4, gw = 4, n = gh * gw;
  PatchMerge<double> merge(ps, "merge", rng, c, gh, gw);
  // exercise the affine part of the norm too
  for (auto& g : merge.norm.gamma.node().value.data) g = 0.5 + 0.1 * g;
  merge.norm.beta.node().value.data[2] = -0.3;

  Array<double> z = test::randu(rng, {1, n, c});
  ag::NoGradGuard ng;
  auto got = merge(ag::Var<double>::constant(z)).value();
  REQUIRE(got.shape == Shape{1, n / 4, 2 * c});

  const auto& w = merge.proj.w.value();        // (4c, 2c), bias-free
  const auto& gamma = merge.norm.gamma.value();
  const auto& beta = merge.norm.beta.value();
  for (std::int64_t gy = 0; gy < gh / 2; ++gy)
    for (std::int64_t gx = 0; gx < gw / 2; ++gx) {
      // neighbor order: top-left, bottom-left, top-right, bottom-right
      const std::int64_t picks[4] = {
          (2 * gy) * gw + 2 * gx, (2 * gy + 1) * gw + 2 * gx,
          (2 * gy) * gw + 2 * gx + 1, (2 * gy + 1) * gw + 2 * gx + 1};
      std::vector<double> cat(static_cast<std::size_t>(4 * c));
      for (int k = 0; k < 4; ++k)
        for (std::int64_t d = 0; d < c; ++d)
          cat[static_cast<std::size_t>(k * c + d)] = z[picks[k] * c + d];
      double mean = 0, var = 0;
      for (double x : cat) mean += x;
      mean /= static_cast<double>(cat.size());
      for (double x : cat) var += (x - mean) * (x - mean);
      var /= static_cast<double>(cat.size());
      const double inv = 1.0 / std::sqrt(var + 1e-5);
      for (std::int64_t d = 0; d < 2 * c; ++d) {
        double want = 0;
        for (std::int64_t i = 0; i < 4 * c; ++i)
          want += (gamma[i] * (cat[static_cast<std::size_t>(i)] - mean) * inv +
                   beta[i]) *
                  w[i * 2 * c + d];
        const std::int64_t t = gy * (gw / 2) + gx;
        CHECK(got[t * 2 * c + d] == doctest::Approx(want).epsilon(1e-10));
      }
    }
}

TEST_CASE("patch merge output groups depend only on their 2x2 source") {
  ag::ParamSet<double> ps;
  Rng rng(9);
  PatchMerge<double> merge(ps, "merge", rng, 2, 4, 4);
  Array<double> z = test::randu(rng, {1, 16, 2});
  ag::NoGradGuard ng;
  auto base = merge(ag::Var<double>::constant(z)).value();

  Array<double> z2 = z;
  z2[(3 * 4 + 3) * 2 + 1] += 1.0;  // token (3,3) feeds group (1,1) only
  auto bumped = merge(ag::Var<double>::constant(z2)).value();
  for (std::int64_t t = 0; t < 4; ++t)
    for (std::int64_t d = 0; d < 4; ++d) {
      if (t == 3) continue;
      CHECK(bumped[t * 4 + d] == base[t * 4 + d]);
    }
  bool group_changed = false;
  for (std::int64_t d = 0; d < 4; ++d)
    group_changed |= bumped[3 * 4 + d] != base[3 * 4 + d];
  CHECK(group_changed);
}

TEST_CASE("shift degenerates to zero when the grid equals the window") {
  ag::ParamSet<float> ps;
  Rng rng(11);
  WindowAttnBlock<float> tight(ps, "t", rng, 4, 2, 4, /*shifted=*/true, 4, 4, 8);
  CHECK(tight.shift == 0);
  CHECK(tight.mask == nullptr);

  WindowAttnBlock<float> roomy(ps, "r", rng, 4, 2, 4, /*shifted=*/true, 8, 8, 8);
  CHECK(roomy.shift == 2);
  REQUIRE(roomy.mask != nullptr);
  // mask has at least one blocked pair and all entries in {0, -100}
  bool any_blocked = false;
  for (float m : roomy.mask->data) {
    CHECK((m == 0.f || m == -100.f));
    any_blocked |= m == -100.f;
  }
  CHECK(any_blocked);

  // inside the encoder, the last stage's grid equals the window at 128px
  ag::ParamSet<float> ps2;
  BodyEncoder<float> enc(ps2, "body", rng, small_cfg(), 128, 128);
  CHECK(enc.stages[0][1].shift == 2);
  CHECK(enc.stages[3][1].shift == 0);
}

TEST_CASE("windowed block without a shift only mixes tokens inside a window") {
  ag::ParamSet<double> ps;
  Rng rng(13);
  // window 2 on a 4x4 grid: token (0,0) and token (3,3) share no window
  WindowAttnBlock<double> blk(ps, "b", rng, 4, 2, 2, /*shifted=*/false, 4, 4, 8);
  Array<double> z = test::randu(rng, {1, 16, 4});
  ag::NoGradGuard ng;
  auto base = blk(ag::Var<double>::constant(z)).value();
  Array<double> z2 = z;
  // bump one coordinate, not the whole vector: pre-LN attention is exactly
  // invariant to constant shifts of a token (the norm subtracts the mean)
  z2[15 * 4 + 1] += 0.7;
  auto bumped = blk(ag::Var<double>::constant(z2)).value();
  for (std::int64_t d = 0; d < 4; ++d)
    CHECK(bumped[0 * 4 + d] == base[0 * 4 + d]);  // far corner: untouched
  CHECK(bumped[15 * 4 + 1] != base[15 * 4 + 1]);  // bumped token: changed
  // (3,2) = token 14 shares the bottom-right window, so it must move
  bool neighbor_changed = false;
  for (std::int64_t d = 0; d < 4; ++d)
    neighbor_changed |= bumped[14 * 4 + d] != base[14 * 4 + d];
  CHECK(neighbor_changed);
}

TEST_CASE("gradients flow through a shifted, masked block") {
  ag::ParamSet<double> ps;
  Rng rng(17);
  WindowAttnBlock<double> blk(ps, "b", rng, 4, 2, 2, /*shifted=*/true, 4, 4, 8);
  REQUIRE(blk.shift == 1);
  auto z = ag::Var<double>::param(test::randu(rng, {1, 16, 4}));
  Rng probe(19);
  auto err = test::grad_check_sampled(
      [&] { return ag::sum_all(ag::mul(blk(z), blk(z))); },
      {z, blk.q.w, blk.k.w, blk.v.w, blk.o.w, blk.q.b, blk.ln1.gamma,
       blk.ln2.beta, blk.mlp.fc1.w, blk.mlp.fc2.b},
      10, probe);
  CHECK(err < 1e-7);
}

TEST_CASE("gradients flow through embedding and merge") {
  ag::ParamSet<double> ps;
  Rng rng(23);
  PatchEmbed<double> embed(ps, "e", rng, 2, 4, 4);
  PatchMerge<double> merge(ps, "m", rng, 4, 2, 2);
  auto img = ag::Var<double>::param(test::randu(rng, {1, 3, 4, 4}));
  auto err = test::grad_check(
      [&] { return ag::sum_all(ag::mul(merge(embed(img)), merge(embed(img)))); },
      {img, embed.proj.w, embed.proj.b, embed.pos, merge.norm.gamma,
       merge.norm.beta, merge.proj.w});
  CHECK(err < 1e-7);
}

TEST_CASE("same seed, same branch; different seed, different branch") {
  Rng ra(31), rb(31), rc(32);
  ag::ParamSet<float> a, b, c;
  BodyEncoder<float> ea(a, "body", ra, small_cfg(), 128, 128);
  BodyEncoder<float> eb(b, "body", rb, small_cfg(), 128, 128);
  BodyEncoder<float> ec(c, "body", rc, small_cfg(), 128, 128);
  CHECK(ea.embed.pos.value().data == eb.embed.pos.value().data);
  CHECK(ea.stages[2][1].q.w.value().data == eb.stages[2][1].q.w.value().data);
  CHECK(ea.embed.pos.value().data != ec.embed.pos.value().data);
}

TEST_CASE("construction validates geometry") {
  Rng rng(37);
  ag::ParamSet<float> ps;
  auto cfg = small_cfg();

  auto c1 = cfg;
  c1.depths = {2, 2, 2};
  CHECK_THROWS_AS(BodyEncoder<float>(ps, "b1", rng, c1, 128, 128), ConfigError);

  auto c2 = cfg;
  c2.depths = {2, 3, 2, 2};
  CHECK_THROWS_AS(BodyEncoder<float>(ps, "b2", rng, c2, 128, 128), ConfigError);

  auto c3 = cfg;
  c3.heads = {5, 2, 3, 6};  // 6 % 5 != 0
  CHECK_THROWS_AS(BodyEncoder<float>(ps, "b3", rng, c3, 128, 128), ConfigError);

  auto c4 = cfg;
  c4.window = 5;  // 32 % 5 != 0
  CHECK_THROWS_AS(BodyEncoder<float>(ps, "b4", rng, c4, 128, 128), ConfigError);

  CHECK_THROWS_AS(BodyEncoder<float>(ps, "b5", rng, cfg, 120, 128), ConfigError);

  CHECK_THROWS_AS(PatchMerge<float>(ps, "m", rng, 4, 3, 4), ConfigError);

  PatchMerge<float> m(ps, "m2", rng, 4, 2, 2);
  Array<float> wrong(Shape{1, 6, 4}, 0.f);
  ag::NoGradGuard ng;
  CHECK_THROWS_AS(m(ag::Var<float>::constant(wrong)), ShapeError);
}
