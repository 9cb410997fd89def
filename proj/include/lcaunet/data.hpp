#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "lcaunet/conv_ops.hpp"  // bilinear tap helper
#include "lcaunet/png_io.hpp"

namespace lcaunet::data {

struct Sample {
  Array<float> image;    // (3, H, W) in [0,1]
  Array<float> mask;     // (H, W) binary
  Array<float> edge_gt;  // (H, W) in [0,1]
  std::string id;
};

// ---------------------------------------------------------------------------
// Preprocessing

// Color-constancy: scale every channel so its mean matches the mean of the
// channel means. Channels with zero mean are left alone; result clipped to
// [0,1].
inline Array<float> gray_world_normalize(const Array<float>& img) {
  LCAUNET_CHECK_SHAPE(img.rank() == 3 && img.dim(0) == 3,
                      "gray_world: expected (3,H,W), got ", shape_str(img.shape));
  const std::int64_t hw = img.dim(1) * img.dim(2);
  double means[3];
  for (int c = 0; c < 3; ++c) {
    double s = 0;
    for (std::int64_t i = 0; i < hw; ++i) s += img[c * hw + i];
    means[c] = s / static_cast<double>(hw);
  }
  const double target = (means[0] + means[1] + means[2]) / 3.0;
  Array<float> out(img.shape);
  for (int c = 0; c < 3; ++c) {
    const double scale = means[c] > 0 ? target / means[c] : 1.0;
    for (std::int64_t i = 0; i < hw; ++i)
      out[c * hw + i] = std::clamp(static_cast<float>(img[c * hw + i] * scale), 0.f, 1.f);
  }
  return out;
}

namespace detail {

template <bool Max>
Array<float> morph3x3(const Array<float>& m) {
  const std::int64_t h = m.dim(0), w = m.dim(1);
  Array<float> out(m.shape);
  for (std::int64_t y = 0; y < h; ++y)
    for (std::int64_t x = 0; x < w; ++x) {
      float v = Max ? 0.f : 1.f;
      for (std::int64_t dy = -1; dy <= 1; ++dy)
        for (std::int64_t dx = -1; dx <= 1; ++dx) {
          const std::int64_t yy = y + dy, xx = x + dx;
          // Outside the frame counts as background.
          const float s = (yy >= 0 && yy < h && xx >= 0 && xx < w) ? m[yy * w + xx] : 0.f;
          v = Max ? std::max(v, s) : std::min(v, s);
        }
      out[y * w + x] = v;
    }
  return out;
}

}  // namespace detail

// Morphological gradient: dilate(3x3) XOR erode(3x3) of a binary mask — a
// roughly two-pixel band around the boundary.
inline Array<float> derive_edge_gt(const Array<float>& mask) {
  LCAUNET_CHECK_SHAPE(mask.rank() == 2, "derive_edge_gt: expected (H,W)");
  auto dil = detail::morph3x3<true>(mask);
  auto ero = detail::morph3x3<false>(mask);
  Array<float> out(mask.shape);
  for (std::int64_t i = 0; i < mask.size(); ++i)
    out[i] = (dil[i] != ero[i]) ? 1.f : 0.f;
  return out;
}

// ---------------------------------------------------------------------------
// Plain-array resizing (no autograd)

inline Array<float> resize_bilinear(const Array<float>& img, std::int64_t oh,
                                    std::int64_t ow) {
  LCAUNET_CHECK_SHAPE(img.rank() == 2 || img.rank() == 3,
                      "resize_bilinear: expected (H,W) or (C,H,W)");
  const bool chw = img.rank() == 3;
  const std::int64_t c = chw ? img.dim(0) : 1;
  const std::int64_t h = img.dim(chw ? 1 : 0), w = img.dim(chw ? 2 : 1);
  if (h == oh && w == ow) return img;
  auto ty = ag::detail::bilinear_taps(h, oh);
  auto tx = ag::detail::bilinear_taps(w, ow);
  Array<float> out(chw ? Shape{c, oh, ow} : Shape{oh, ow});
  for (std::int64_t ci = 0; ci < c; ++ci) {
    const float* in = img.data.data() + ci * h * w;
    float* o = out.data.data() + ci * oh * ow;
    for (std::int64_t y = 0; y < oh; ++y) {
      const auto& a = ty[static_cast<std::size_t>(y)];
      for (std::int64_t x = 0; x < ow; ++x) {
        const auto& b = tx[static_cast<std::size_t>(x)];
        const float top = in[a.lo * w + b.lo] +
                          static_cast<float>(b.frac) * (in[a.lo * w + b.hi] - in[a.lo * w + b.lo]);
        const float bot = in[a.hi * w + b.lo] +
                          static_cast<float>(b.frac) * (in[a.hi * w + b.hi] - in[a.hi * w + b.lo]);
        o[y * ow + x] = top + static_cast<float>(a.frac) * (bot - top);
      }
    }
  }
  return out;
}

inline Array<float> resize_nearest(const Array<float>& img, std::int64_t oh,
                                   std::int64_t ow) {
  LCAUNET_CHECK_SHAPE(img.rank() == 2, "resize_nearest: expected (H,W)");
  const std::int64_t h = img.dim(0), w = img.dim(1);
  if (h == oh && w == ow) return img;
  Array<float> out(Shape{oh, ow});
  for (std::int64_t y = 0; y < oh; ++y) {
    const std::int64_t sy = std::min<std::int64_t>(
        h - 1, static_cast<std::int64_t>((static_cast<double>(y) + 0.5) * h / oh));
    for (std::int64_t x = 0; x < ow; ++x) {
      const std::int64_t sx = std::min<std::int64_t>(
          w - 1, static_cast<std::int64_t>((static_cast<double>(x) + 0.5) * w / ow));
      out[y * ow + x] = img[sy * w + sx];
    }
  }
  return out;
}

inline Array<float> binarize_mask(const Array<float>& m, float thr = 0.5f) {
  Array<float> out(m.shape);
  for (std::int64_t i = 0; i < m.size(); ++i) out[i] = m[i] >= thr ? 1.f : 0.f;
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic lesion generator

struct SynthConfig {
  double min_area = 0.05, max_area = 0.5;  // mask fraction bounds
  bool hair = true;
  bool vignette = true;
};

namespace detail {

// Smooth low-frequency noise: a coarse random grid, bilinearly upsampled.
inline Array<float> smooth_noise(Rng& rng, std::int64_t h, std::int64_t w,
                                 std::int64_t cells, float amp) {
  std::uniform_real_distribution<float> d(-amp, amp);
  Array<float> coarse(Shape{cells, cells});
  for (auto& v : coarse.data) v = d(rng);
  return resize_bilinear(coarse, h, w);
}

struct BlobShape {
  double cx, cy, r0;
  double amp[4], phase[4];  // harmonics k = 2..5
  double radius(double theta) const {
    double r = 1.0;
    for (int k = 0; k < 4; ++k) r += amp[k] * std::cos((k + 2) * theta + phase[k]);
    return r0 * std::clamp(r, 0.55, 1.45);
  }
};

inline BlobShape draw_blob(Rng& rng, std::int64_t h, std::int64_t w) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  BlobShape b;
  b.cx = (0.38 + 0.24 * u(rng)) * static_cast<double>(w);
  b.cy = (0.38 + 0.24 * u(rng)) * static_cast<double>(h);
  b.r0 = (0.16 + 0.18 * u(rng)) * static_cast<double>(std::min(h, w));
  for (int k = 0; k < 4; ++k) {
    b.amp[k] = u(rng) * 0.28 / (k + 2);
    b.phase[k] = u(rng) * 2.0 * std::numbers::pi;
  }
  return b;
}

}  // namespace detail

// Deterministic per seed: textured skin background, one star-convex lesion
// blob (possibly low-contrast), optional hair strokes and vignette. The blob
// is resampled until its area fraction fits the configured bounds.
inline Sample synth_lesion_sample(std::uint64_t seed, std::int64_t h, std::int64_t w,
                                  const SynthConfig& cfg = {}) {
  LCAUNET_CHECK_CONFIG(h >= 64 && w >= 64, "synthetic samples need H, W >= 64");
  Rng rng(mix_seed(seed, 0x5e5d));
  std::uniform_real_distribution<double> u(0.0, 1.0);

  // Background: warm base tone + gradient + smooth texture.
  const float base[3] = {static_cast<float>(0.66 + 0.12 * u(rng)),
                         static_cast<float>(0.50 + 0.12 * u(rng)),
                         static_cast<float>(0.42 + 0.12 * u(rng))};
  const double gdir = u(rng) * 2.0 * std::numbers::pi;
  const float gamp = static_cast<float>(0.03 + 0.05 * u(rng));
  auto tex = detail::smooth_noise(rng, h, w, 8, 0.05f);

  Sample s;
  s.image = Array<float>(Shape{3, h, w});
  s.mask = Array<float>(Shape{h, w}, 0.f);
  for (std::int64_t y = 0; y < h; ++y)
    for (std::int64_t x = 0; x < w; ++x) {
      const float g = gamp * static_cast<float>(
          (x * std::cos(gdir) + y * std::sin(gdir)) / static_cast<double>(w));
      const float t = tex[y * w + x];
      for (int c = 0; c < 3; ++c)
        s.image[(c * h + y) * w + x] = base[c] + g + t * (1.f - 0.1f * c);
    }

  // Lesion blob; resample the shape until the area fraction is in bounds.
  detail::BlobShape blob = detail::draw_blob(rng, h, w);
  for (int attempt = 0; attempt < 24; ++attempt) {
    double area = 0.0;
    // Coarse estimate by integrating r(theta)^2 / 2.
    for (int i = 0; i < 256; ++i) {
      const double r = blob.radius(2.0 * std::numbers::pi * i / 256.0);
      area += 0.5 * r * r * (2.0 * std::numbers::pi / 256.0);
    }
    const double frac = area / static_cast<double>(h * w);
    if (frac >= cfg.min_area && frac <= cfg.max_area) break;
    blob = detail::draw_blob(rng, h, w);
  }

  const float lesion[3] = {static_cast<float>(0.30 + 0.18 * u(rng)),
                           static_cast<float>(0.18 + 0.14 * u(rng)),
                           static_cast<float>(0.14 + 0.12 * u(rng))};
  const float opacity = static_cast<float>(0.45 + 0.5 * u(rng));  // low values: low contrast
  auto lesion_tex = detail::smooth_noise(rng, h, w, 12, 0.06f);
  for (std::int64_t y = 0; y < h; ++y)
    for (std::int64_t x = 0; x < w; ++x) {
      const double dx = x - blob.cx, dy = y - blob.cy;
      const double dist = std::hypot(dx, dy);
      const double r = blob.radius(std::atan2(dy, dx));
      s.mask[y * w + x] = dist <= r ? 1.f : 0.f;
      // ~1.5 px soft rim so the photo has no aliased staircase.
      const double a = std::clamp((r - dist) / 1.5 + 0.5, 0.0, 1.0) * opacity;
      if (a <= 0.0) continue;
      const float shade = 1.f - 0.25f * static_cast<float>(std::exp(-dist / (0.5 * r + 1e-9)));
      for (int c = 0; c < 3; ++c) {
        float& px = s.image[(c * h + y) * w + x];
        const float lv = lesion[c] * shade + lesion_tex[y * w + x];
        px = px * (1.f - static_cast<float>(a)) + lv * static_cast<float>(a);
      }
    }

  if (cfg.hair) {
    const int strokes = static_cast<int>(u(rng) * 4.0);
    for (int i = 0; i < strokes; ++i) {
      // Quadratic curve across the frame, drawn dark and thin.
      const double x0 = u(rng) * w, y0 = u(rng) * h;
      const double x1 = u(rng) * w, y1 = u(rng) * h;
      const double mx = u(rng) * w, my = u(rng) * h;
      const int steps = static_cast<int>(2 * std::max(h, w));
      for (int t = 0; t <= steps; ++t) {
        const double tt = static_cast<double>(t) / steps;
        const double omt = 1.0 - tt;
        const std::int64_t px = static_cast<std::int64_t>(
            omt * omt * x0 + 2 * omt * tt * mx + tt * tt * x1);
        const std::int64_t py = static_cast<std::int64_t>(
            omt * omt * y0 + 2 * omt * tt * my + tt * tt * y1);
        if (px < 0 || px >= w || py < 0 || py >= h) continue;
        for (int c = 0; c < 3; ++c) {
          float& v = s.image[(c * h + py) * w + px];
          v = v * 0.35f + 0.05f;
        }
      }
    }
  }

  if (cfg.vignette) {
    const float v = static_cast<float>(u(rng) * 0.25);
    const double dmax = std::hypot(h * 0.5, w * 0.5);
    for (std::int64_t y = 0; y < h; ++y)
      for (std::int64_t x = 0; x < w; ++x) {
        const double d = std::hypot(y - h * 0.5, x - w * 0.5) / dmax;
        const float f = 1.f - v * static_cast<float>(d * d);
        for (int c = 0; c < 3; ++c) s.image[(c * h + y) * w + x] *= f;
      }
  }

  for (auto& px : s.image.data) px = std::clamp(px, 0.f, 1.f);
  s.edge_gt = derive_edge_gt(s.mask);
  char buf[32];
  std::snprintf(buf, sizeof buf, "synth_%06llu", static_cast<unsigned long long>(seed));
  s.id = buf;
  return s;
}

// ---------------------------------------------------------------------------
// Augmentation

struct AugmentDraw {
  bool hflip = false, vflip = false;
  double angle_deg = 0.0;
  double brightness = 1.0, contrast = 1.0;
};

inline AugmentDraw sample_augment(Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  AugmentDraw d;
  d.hflip = u(rng) < 0.5;
  d.vflip = u(rng) < 0.5;
  d.angle_deg = -15.0 + 30.0 * u(rng);
  d.brightness = 0.8 + 0.4 * u(rng);
  d.contrast = 0.8 + 0.4 * u(rng);
  return d;
}

namespace detail {

inline std::int64_t reflect(std::int64_t i, std::int64_t n) {
  while (i < 0 || i >= n) i = i < 0 ? -i - 1 : 2 * n - 1 - i;
  return i;
}

// Rotate by sampling the source at the inversely rotated position. Images use
// bilinear interpolation with reflected borders; masks use bilinear with zero
// fill (re-binarized by the caller).
inline Array<float> rotate(const Array<float>& src, double deg, bool reflect_fill) {
  const bool chw = src.rank() == 3;
  const std::int64_t c = chw ? src.dim(0) : 1;
  const std::int64_t h = src.dim(chw ? 1 : 0), w = src.dim(chw ? 2 : 1);
  const double rad = deg * std::numbers::pi / 180.0;
  const double cs = std::cos(rad), sn = std::sin(rad);
  const double cy = (h - 1) / 2.0, cx = (w - 1) / 2.0;
  Array<float> out(src.shape, 0.f);
  for (std::int64_t ci = 0; ci < c; ++ci) {
    const float* in = src.data.data() + ci * h * w;
    float* o = out.data.data() + ci * h * w;
    for (std::int64_t y = 0; y < h; ++y)
      for (std::int64_t x = 0; x < w; ++x) {
        const double sx = cs * (x - cx) + sn * (y - cy) + cx;
        const double sy = -sn * (x - cx) + cs * (y - cy) + cy;
        const std::int64_t x0 = static_cast<std::int64_t>(std::floor(sx));
        const std::int64_t y0 = static_cast<std::int64_t>(std::floor(sy));
        const double fx = sx - x0, fy = sy - y0;
        double acc = 0.0;
        for (int dy = 0; dy <= 1; ++dy)
          for (int dx = 0; dx <= 1; ++dx) {
            const double wgt = (dx ? fx : 1 - fx) * (dy ? fy : 1 - fy);
            if (wgt == 0.0) continue;
            std::int64_t yy = y0 + dy, xx = x0 + dx;
            float v = 0.f;
            if (reflect_fill) {
              v = in[reflect(yy, h) * w + reflect(xx, w)];
            } else if (yy >= 0 && yy < h && xx >= 0 && xx < w) {
              v = in[yy * w + xx];
            }
            acc += wgt * v;
          }
        o[y * w + x] = static_cast<float>(acc);
      }
  }
  return out;
}

inline void flip_lr(Array<float>& a) {
  const bool chw = a.rank() == 3;
  const std::int64_t c = chw ? a.dim(0) : 1;
  const std::int64_t h = a.dim(chw ? 1 : 0), w = a.dim(chw ? 2 : 1);
  for (std::int64_t ci = 0; ci < c; ++ci)
    for (std::int64_t y = 0; y < h; ++y) {
      float* row = a.data.data() + (ci * h + y) * w;
      std::reverse(row, row + w);
    }
}

inline void flip_ud(Array<float>& a) {
  const bool chw = a.rank() == 3;
  const std::int64_t c = chw ? a.dim(0) : 1;
  const std::int64_t h = a.dim(chw ? 1 : 0), w = a.dim(chw ? 2 : 1);
  for (std::int64_t ci = 0; ci < c; ++ci)
    for (std::int64_t y = 0; y < h / 2; ++y)
      std::swap_ranges(a.data.data() + (ci * h + y) * w,
                       a.data.data() + (ci * h + y + 1) * w,
                       a.data.data() + (ci * h + (h - 1 - y)) * w);
}

}  // namespace detail

// Joint geometric + photometric transform. The mask stays binary and edge_gt
// is re-derived from the transformed mask, so the pair remains consistent.
inline Sample augment_with(const Sample& in, const AugmentDraw& d) {
  Sample out = in;
  if (d.hflip) {
    detail::flip_lr(out.image);
    detail::flip_lr(out.mask);
  }
  if (d.vflip) {
    detail::flip_ud(out.image);
    detail::flip_ud(out.mask);
  }
  if (d.angle_deg != 0.0) {
    out.image = detail::rotate(out.image, d.angle_deg, /*reflect_fill=*/true);
    out.mask = binarize_mask(detail::rotate(out.mask, d.angle_deg, false));
  }
  if (d.brightness != 1.0 || d.contrast != 1.0) {
    double mean = 0.0;
    for (float v : out.image.data) mean += v;
    mean /= static_cast<double>(out.image.size());
    for (auto& v : out.image.data)
      v = std::clamp(static_cast<float>(((v * d.brightness) - mean) * d.contrast + mean),
                     0.f, 1.f);
  }
  out.edge_gt = derive_edge_gt(out.mask);
  return out;
}

inline Sample augment(const Sample& s, std::uint64_t seed) {
  Rng rng(mix_seed(seed, 0xa06));
  return augment_with(s, sample_augment(rng));
}

// ---------------------------------------------------------------------------
// Datasets

inline std::vector<Sample> make_synth_set(std::int64_t n, std::uint64_t seed,
                                          std::int64_t h, std::int64_t w,
                                          const SynthConfig& cfg = {}) {
  std::vector<Sample> out;
  out.reserve(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) {
    Sample s = synth_lesion_sample(mix_seed(seed, static_cast<std::uint64_t>(i)), h, w, cfg);
    char buf[32];
    std::snprintf(buf, sizeof buf, "synth_%06lld", static_cast<long long>(i));
    s.id = buf;
    out.push_back(std::move(s));
  }
  return out;
}

// 7:1:2-style split: floor(f_train*n), floor(f_val*n), remainder.
struct SplitIndices {
  std::vector<std::size_t> train, val, test;
};

inline SplitIndices split_indices(std::size_t n, std::uint64_t seed,
                                  double f_train = 0.7, double f_val = 0.1) {
  LCAUNET_CHECK_CONFIG(f_train >= 0 && f_val >= 0 && f_train + f_val <= 1.0,
                       "split fractions must be nonnegative and sum to <= 1");
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  Rng rng(mix_seed(seed, 0x5b17));
  std::shuffle(idx.begin(), idx.end(), rng);
  const std::size_t n_train = static_cast<std::size_t>(f_train * static_cast<double>(n));
  const std::size_t n_val = static_cast<std::size_t>(f_val * static_cast<double>(n));
  SplitIndices s;
  s.train.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
  s.val.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_train),
               idx.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
  s.test.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), idx.end());
  return s;
}

struct LoadedDataset {
  std::vector<Sample> train, val, test;
  std::vector<std::string> skipped;  // ids missing a mask / masks missing an image
};

// Directory of `<id>.png` / `<id>_segmentation.png` pairs; everything resized
// to target_hw (images bilinear, masks nearest + re-binarize), edge GT derived
// after resizing.
inline LoadedDataset load_isic_dir(const std::string& root, std::uint64_t seed,
                                   std::int64_t target_h = 224,
                                   std::int64_t target_w = 224,
                                   double f_train = 0.7, double f_val = 0.1) {
  namespace fs = std::filesystem;
  LCAUNET_CHECK_CONFIG(fs::is_directory(root), "dataset directory not found: ", root);
  const std::string suffix = "_segmentation";
  std::vector<std::string> ids;
  LoadedDataset out;
  for (const auto& e : fs::directory_iterator(root)) {
    if (!e.is_regular_file() || e.path().extension() != ".png") continue;
    const std::string stem = e.path().stem().string();
    if (stem.size() > suffix.size() &&
        stem.compare(stem.size() - suffix.size(), suffix.size(), suffix) == 0) {
      const std::string id = stem.substr(0, stem.size() - suffix.size());
      if (!fs::exists(fs::path(root) / (id + ".png"))) out.skipped.push_back(stem);
      continue;
    }
    if (fs::exists(fs::path(root) / (stem + suffix + ".png")))
      ids.push_back(stem);
    else
      out.skipped.push_back(stem);
  }
  std::sort(ids.begin(), ids.end());
  std::sort(out.skipped.begin(), out.skipped.end());
  LCAUNET_CHECK_CONFIG(!ids.empty(), "no paired image/mask PNGs found in ", root);

  auto load_one = [&](const std::string& id) {
    Sample s;
    s.id = id;
    s.image = resize_bilinear(io::load_image((fs::path(root) / (id + ".png")).string()),
                              target_h, target_w);
    for (auto& v : s.image.data) v = std::clamp(v, 0.f, 1.f);
    s.mask = binarize_mask(resize_nearest(
        io::load_mask((fs::path(root) / (id + suffix + ".png")).string()), target_h,
        target_w));
    s.edge_gt = derive_edge_gt(s.mask);
    return s;
  };
  const SplitIndices split = split_indices(ids.size(), seed, f_train, f_val);
  for (auto i : split.train) out.train.push_back(load_one(ids[i]));
  for (auto i : split.val) out.val.push_back(load_one(ids[i]));
  for (auto i : split.test) out.test.push_back(load_one(ids[i]));
  return out;
}

// Write a synthetic set in the loader's PNG layout.
inline void write_synth_dir(const std::string& dir, std::int64_t n, std::uint64_t seed,
                            std::int64_t h, std::int64_t w,
                            const SynthConfig& cfg = {}) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  auto set = make_synth_set(n, seed, h, w, cfg);
  for (const auto& s : set) {
    io::write_png_rgb((fs::path(dir) / (s.id + ".png")).string(), s.image);
    io::write_png_gray((fs::path(dir) / (s.id + "_segmentation.png")).string(), s.mask);
  }
}

}  // namespace lcaunet::data
