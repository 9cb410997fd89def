#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>
#include <numeric>
#include <set>

#include "lcaunet/data.hpp"

using namespace lcaunet;
using namespace lcaunet::data;
namespace fs = std::filesystem;

namespace {

double sum(const Array<float>& a) {
  return std::accumulate(a.data.begin(), a.data.end(), 0.0);
}

bool is_binary(const Array<float>& a) {
  for (float v : a.data)
    if (v != 0.f && v != 1.f) return false;
  return true;
}

// Independent 3x3 morphological gradient, written the slow obvious way.
Array<float> edge_band_ref(const Array<float>& m) {
  const std::int64_t h = m.dim(0), w = m.dim(1);
  Array<float> out(m.shape, 0.f);
  for (std::int64_t y = 0; y < h; ++y)
    for (std::int64_t x = 0; x < w; ++x) {
      float mx = 0.f, mn = 1.f;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const std::int64_t yy = y + dy, xx = x + dx;
          const float v =
              (yy >= 0 && yy < h && xx >= 0 && xx < w) ? m[yy * w + xx] : 0.f;
          mx = std::max(mx, v);
          mn = std::min(mn, v);
        }
      out[y * w + x] = mx != mn ? 1.f : 0.f;
    }
  return out;
}

}  // namespace

TEST_CASE("edge ground truth is the 3x3 morphological gradient") {
  // A 3x3 square inside 8x8.
  Array<float> mask(Shape{8, 8}, 0.f);
  for (std::int64_t y = 2; y <= 4; ++y)
    for (std::int64_t x = 2; x <= 4; ++x) mask[y * 8 + x] = 1.f;
  const auto got = derive_edge_gt(mask);
  const auto want = edge_band_ref(mask);
  for (std::int64_t i = 0; i < got.size(); ++i) CHECK(got[i] == want[i]);
  // Band covers the square boundary plus its outer ring; the single interior
  // pixel (3,3) stays clear.
  CHECK(got[3 * 8 + 3] == 0.f);
  CHECK(got[2 * 8 + 2] == 1.f);
  CHECK(got[1 * 8 + 1] == 1.f);
  CHECK(got[0 * 8 + 0] == 0.f);
  // Empty and full-frame masks: full has a band only at the frame edge,
  // because outside the image counts as background.
  CHECK(sum(derive_edge_gt(Array<float>(Shape{8, 8}, 0.f))) == 0.0);
  const auto full = derive_edge_gt(Array<float>(Shape{8, 8}, 1.f));
  CHECK(full[0] == 1.f);
  CHECK(full[3 * 8 + 3] == 0.f);
}

TEST_CASE("gray-world normalization balances channel means") {
  Rng rng(7);
  Array<float> img(Shape{3, 10, 10});
  std::uniform_real_distribution<float> d(0.2f, 0.5f);
  for (auto& v : img.data) v = d(rng);
  // Tint channel 0 upward (stays below clipping after rescale).
  for (std::int64_t i = 0; i < 100; ++i) img[i] += 0.2f;
  const auto out = gray_world_normalize(img);
  double means[3];
  for (int c = 0; c < 3; ++c) {
    double s = 0;
    for (std::int64_t i = 0; i < 100; ++i) s += out[c * 100 + i];
    means[c] = s / 100.0;
  }
  CHECK(means[0] == doctest::Approx(means[1]).epsilon(1e-5));
  CHECK(means[1] == doctest::Approx(means[2]).epsilon(1e-5));
  for (float v : out.data) {
    CHECK(v >= 0.f);
    CHECK(v <= 1.f);
  }
  CHECK_THROWS_AS(gray_world_normalize(Array<float>(Shape{1, 4, 4}, 0.f)), ShapeError);
}

TEST_CASE("plain resize helpers") {
  // Bilinear on a linear ramp is exact away from the replicated border.
  Array<float> ramp(Shape{1, 4, 8});
  for (std::int64_t x = 0; x < 8; ++x)
    for (std::int64_t y = 0; y < 4; ++y) ramp[y * 8 + x] = static_cast<float>(x);
  const auto up = resize_bilinear(ramp, 4, 16);
  // Output column centers map to (x + 0.5)/2 - 0.5 in source coordinates.
  CHECK(up[5] == doctest::Approx((5 + 0.5) / 2.0 - 0.5).epsilon(1e-6));
  CHECK(up[8] == doctest::Approx((8 + 0.5) / 2.0 - 0.5).epsilon(1e-6));

  // Constant image stays constant under any resize.
  const auto dn = resize_bilinear(Array<float>(Shape{3, 8, 8}, 0.37f), 5, 3);
  for (float v : dn.data) CHECK(v == doctest::Approx(0.37f));

  // Nearest keeps binary masks binary and maps centers correctly on 2x.
  Array<float> m(Shape{2, 2}, 0.f);
  m[3] = 1.f;
  const auto m2 = resize_nearest(m, 4, 4);
  CHECK(is_binary(m2));
  CHECK(m2[3 * 4 + 3] == 1.f);
  CHECK(m2[0] == 0.f);
  CHECK(sum(m2) == 4.0);

  // Same-size calls are identity.
  const auto same = resize_bilinear(ramp, 4, 8);
  for (std::int64_t i = 0; i < same.size(); ++i) CHECK(same[i] == ramp[i]);
}

TEST_CASE("synthetic samples are deterministic, bounded, and self-consistent") {
  const auto a = data::synth_lesion_sample(123, 96, 96);
  const auto b = data::synth_lesion_sample(123, 96, 96);
  CHECK(a.image.data == b.image.data);
  CHECK(a.mask.data == b.mask.data);
  const auto c = data::synth_lesion_sample(124, 96, 96);
  CHECK(a.image.data != c.image.data);

  CHECK(is_binary(a.mask));
  for (float v : a.image.data) {
    CHECK(v >= 0.f);
    CHECK(v <= 1.f);
  }
  // edge_gt is derived from the mask, not stored independently.
  const auto band = derive_edge_gt(a.mask);
  CHECK(a.edge_gt.data == band.data);

  // Lesion occupies a sane fraction of the frame across seeds.
  for (std::uint64_t seed = 0; seed < 12; ++seed) {
    const auto s = data::synth_lesion_sample(seed, 96, 96);
    const double frac = sum(s.mask) / (96.0 * 96.0);
    CHECK(frac > 0.01);
    CHECK(frac < 0.7);
  }
  CHECK_THROWS_AS(data::synth_lesion_sample(1, 16, 16), ConfigError);
}

TEST_CASE("identity augmentation is exact") {
  const auto s = data::synth_lesion_sample(5, 96, 96);
  data::AugmentDraw d;  // defaults: no flips, 0 degrees, unit photometry
  const auto out = data::augment_with(s, d);
  CHECK(out.image.data == s.image.data);
  CHECK(out.mask.data == s.mask.data);
  CHECK(out.edge_gt.data == s.edge_gt.data);
}

TEST_CASE("flips are involutions and preserve mask area") {
  const auto s = data::synth_lesion_sample(6, 96, 96);
  data::AugmentDraw h;
  h.hflip = true;
  const auto once = data::augment_with(s, h);
  CHECK(once.image.data != s.image.data);
  CHECK(sum(once.mask) == sum(s.mask));
  const auto twice = data::augment_with(once, h);
  CHECK(twice.image.data == s.image.data);
  CHECK(twice.mask.data == s.mask.data);

  data::AugmentDraw v;
  v.vflip = true;
  const auto vtwice = data::augment_with(data::augment_with(s, v), v);
  CHECK(vtwice.image.data == s.image.data);
}

TEST_CASE("rotation keeps the pair consistent and roughly preserves area") {
  const auto s = data::synth_lesion_sample(8, 96, 96);
  data::AugmentDraw d;
  d.angle_deg = 12.5;
  const auto out = data::augment_with(s, d);
  CHECK(is_binary(out.mask));
  CHECK(out.edge_gt.data == derive_edge_gt(out.mask).data);
  const double a0 = sum(s.mask), a1 = sum(out.mask);
  CHECK(a1 > 0.9 * a0);
  CHECK(a1 < 1.1 * a0);
  for (float v : out.image.data) {
    CHECK(v >= 0.f);
    CHECK(v <= 1.f);
  }
}

TEST_CASE("photometric jitter moves brightness the expected direction") {
  const auto s = data::synth_lesion_sample(9, 96, 96);
  data::AugmentDraw d;
  d.brightness = 1.15;
  const auto out = data::augment_with(s, d);
  CHECK(sum(out.image) > sum(s.image));
  CHECK(out.mask.data == s.mask.data);  // photometry never touches labels

  // Contrast pivots around the (post-brightness) mean: a constant image with
  // unit brightness is a fixed point.
  data::Sample flat = s;
  for (auto& v : flat.image.data) v = 0.4f;
  data::AugmentDraw c;
  c.contrast = 1.3;
  const auto outc = data::augment_with(flat, c);
  for (float v : outc.image.data) CHECK(v == doctest::Approx(0.4f).epsilon(1e-6));
}

TEST_CASE("seeded augment is deterministic and varies across seeds") {
  const auto s = data::synth_lesion_sample(10, 96, 96);
  const auto a = data::augment(s, 77);
  const auto b = data::augment(s, 77);
  CHECK(a.image.data == b.image.data);
  CHECK(a.mask.data == b.mask.data);
  const auto c = data::augment(s, 78);
  CHECK(a.image.data != c.image.data);
}

TEST_CASE("synthetic sets number their ids sequentially") {
  const auto set = data::make_synth_set(5, 99, 64, 64);
  REQUIRE(set.size() == 5);
  CHECK(set[0].id == "synth_000000");
  CHECK(set[4].id == "synth_000004");
  // Content differs across indices but is stable across calls.
  CHECK(set[0].image.data != set[1].image.data);
  const auto again = data::make_synth_set(5, 99, 64, 64);
  CHECK(set[3].image.data == again[3].image.data);
}

TEST_CASE("split indices: sizes, disjointness, determinism") {
  const auto s = data::split_indices(23, 4);
  CHECK(s.train.size() == 16);  // floor(0.7 * 23)
  CHECK(s.val.size() == 2);     // floor(0.1 * 23)
  CHECK(s.test.size() == 5);    // remainder
  std::set<std::size_t> all;
  for (auto v : s.train) all.insert(v);
  for (auto v : s.val) all.insert(v);
  for (auto v : s.test) all.insert(v);
  CHECK(all.size() == 23);
  CHECK(*all.rbegin() == 22);

  const auto again = data::split_indices(23, 4);
  CHECK(s.train == again.train);
  CHECK(s.test == again.test);
  const auto other = data::split_indices(23, 5);
  CHECK(s.train != other.train);
  CHECK_THROWS_AS(data::split_indices(10, 1, 0.8, 0.4), ConfigError);
}

TEST_CASE("png round trip: images quantized to 8 bits, masks exact") {
  const auto dir = fs::temp_directory_path() / "lcaunet_data_test";
  fs::create_directories(dir);
  const auto s = data::synth_lesion_sample(11, 64, 64);

  const std::string ip = (dir / "img.png").string();
  io::write_png_rgb(ip, s.image);
  const auto img = io::load_image(ip);
  REQUIRE(img.shape == s.image.shape);
  for (std::int64_t i = 0; i < img.size(); ++i)
    CHECK(std::abs(img[i] - s.image[i]) <= 0.5f / 255.f + 1e-6f);

  const std::string mp = (dir / "mask.png").string();
  io::write_png_gray(mp, s.mask);
  const auto mask = io::load_mask(mp);
  CHECK(mask.data == s.mask.data);
  fs::remove_all(dir);
}

TEST_CASE("directory loader pairs files, skips strays, resizes") {
  const auto dir = fs::temp_directory_path() / "lcaunet_dir_test";
  fs::remove_all(dir);
  data::write_synth_dir(dir.string(), 6, 3, 64, 64);
  // One image without a mask, one mask without an image.
  io::write_png_rgb((dir / "stray.png").string(), Array<float>(Shape{3, 8, 8}, 0.5f));
  io::write_png_gray((dir / "orphan_segmentation.png").string(),
                     Array<float>(Shape{8, 8}, 1.f));

  const auto ds = data::load_isic_dir(dir.string(), 1, 96, 96);
  CHECK(ds.train.size() == 4);  // floor(0.7*6)
  CHECK(ds.val.size() == 0);    // floor(0.1*6)
  CHECK(ds.test.size() == 2);
  REQUIRE(ds.skipped.size() == 2);
  CHECK(ds.skipped[0] == "orphan_segmentation");
  CHECK(ds.skipped[1] == "stray");
  for (const auto& smp : ds.train) {
    CHECK(smp.image.shape == Shape{3, 96, 96});
    CHECK(is_binary(smp.mask));
    CHECK(smp.edge_gt.data == derive_edge_gt(smp.mask).data);
  }

  fs::remove_all(dir);
  fs::create_directories(dir);
  CHECK_THROWS_AS(data::load_isic_dir(dir.string(), 1, 64, 64), ConfigError);
  fs::remove_all(dir);
  CHECK_THROWS_AS(data::load_isic_dir(dir.string(), 1, 64, 64), ConfigError);
}

TEST_CASE("directory loader round-trips synthetic masks exactly") {
  const auto dir = fs::temp_directory_path() / "lcaunet_rt_test";
  fs::remove_all(dir);
  data::write_synth_dir(dir.string(), 3, 21, 64, 64);
  const auto set = data::make_synth_set(3, 21, 64, 64);
  const auto ds = data::load_isic_dir(dir.string(), 1, 64, 64, 1.0, 0.0);
  REQUIRE(ds.train.size() == 3);
  // Loader shuffles; match by id. Same resolution, so masks survive verbatim.
  for (const auto& got : ds.train) {
    const auto& want = *std::find_if(set.begin(), set.end(),
                                     [&](const auto& s) { return s.id == got.id; });
    CHECK(got.mask.data == want.mask.data);
    for (std::int64_t i = 0; i < got.image.size(); ++i)
      CHECK(std::abs(got.image[i] - want.image[i]) <= 0.5f / 255.f + 1e-6f);
  }
  fs::remove_all(dir);
}
