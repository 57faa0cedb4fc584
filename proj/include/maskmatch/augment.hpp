#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "maskmatch/errors.hpp"
#include "maskmatch/image.hpp"
#include "maskmatch/rng.hpp"
#include "maskmatch/tensor.hpp"

namespace maskmatch {

enum class StrongOp {
  identity,
  auto_contrast,
  brightness,
  color,
  contrast,
  posterize,
  sharpness,
  shear_x,
  translate_x,
};

inline std::string to_string(StrongOp op) {
  switch (op) {
    case StrongOp::identity: return "identity";
    case StrongOp::auto_contrast: return "auto_contrast";
    case StrongOp::brightness: return "brightness";
    case StrongOp::color: return "color";
    case StrongOp::contrast: return "contrast";
    case StrongOp::posterize: return "posterize";
    case StrongOp::sharpness: return "sharpness";
    case StrongOp::shear_x: return "shear_x";
    case StrongOp::translate_x: return "translate_x";
  }
  return "?";
}

inline StrongOp parse_strong_op(const std::string& s) {
  for (int i = 0; i <= static_cast<int>(StrongOp::translate_x); ++i)
    if (to_string(static_cast<StrongOp>(i)) == s) return static_cast<StrongOp>(i);
  throw ConfigError("unknown strong augmentation op '" + s + "'");
}

/// One entry of the strong-op pool; the magnitude is drawn uniformly from [lo, hi].
struct StrongOpSpec {
  StrongOp op = StrongOp::identity;
  double lo = 0.0;
  double hi = 0.0;
};

/// Magnitude ranges of the default pool. Blend-style ops use an enhancement
/// factor (1 = unchanged); posterize uses bits; shear a slope; translate a
/// fraction of the width.
inline StrongOpSpec default_op_range(StrongOp op) {
  switch (op) {
    case StrongOp::identity: return {op, 0.0, 0.0};
    case StrongOp::auto_contrast: return {op, 0.0, 0.0};
    case StrongOp::brightness: return {op, 0.5, 1.5};
    case StrongOp::color: return {op, 0.1, 1.9};
    case StrongOp::contrast: return {op, 0.1, 1.9};
    case StrongOp::posterize: return {op, 4.0, 8.0};
    case StrongOp::sharpness: return {op, 0.1, 1.9};
    case StrongOp::shear_x: return {op, -0.3, 0.3};
    case StrongOp::translate_x: return {op, -0.3, 0.3};
  }
  return {op, 0.0, 0.0};
}

inline std::vector<StrongOpSpec> default_strong_pool() {
  std::vector<StrongOpSpec> pool;
  for (auto op : {StrongOp::auto_contrast, StrongOp::brightness, StrongOp::color,
                  StrongOp::contrast, StrongOp::posterize, StrongOp::sharpness, StrongOp::shear_x,
                  StrongOp::translate_x})
    pool.push_back(default_op_range(op));
  return pool;
}

struct AugmentationPolicy {
  int crop_padding = 4;
  double flip_probability = 0.5;
  std::vector<StrongOpSpec> strong_ops = default_strong_pool();
  int strong_ops_per_image = 2;

  void validate() const {
    if (flip_probability < 0.0 || flip_probability > 1.0)
      throw ConfigError("flip_probability must be in [0,1]");
    if (crop_padding < 0) throw ConfigError("crop_padding must be >= 0");
    if (strong_ops_per_image < 1) throw ConfigError("strong_ops_per_image must be >= 1");
  }
};

inline constexpr float kFillValue = 0.5f;

/// Horizontal flip with probability flip_probability, then pad by crop_padding
/// (mid-gray) and crop a random window of the original size.
inline Image weak_augment(const Image& image, const AugmentationPolicy& policy, Rng& rng) {
  const bool flip = rng.bernoulli(policy.flip_probability);
  const int pad = policy.crop_padding;
  int dy = 0, dx = 0;
  if (pad > 0) {
    dy = static_cast<int>(rng.integer(-pad, pad));
    dx = static_cast<int>(rng.integer(-pad, pad));
  }
  if (!flip && dy == 0 && dx == 0) return image;
  Image out(image.height, image.width, image.channels, kFillValue);
  for (int y = 0; y < image.height; ++y) {
    const int sy = y + dy;
    if (sy < 0 || sy >= image.height) continue;
    for (int x = 0; x < image.width; ++x) {
      int sx = x + dx;
      if (sx < 0 || sx >= image.width) continue;
      if (flip) sx = image.width - 1 - sx;
      for (int c = 0; c < image.channels; ++c) out.at(y, x, c) = image.at(sy, sx, c);
    }
  }
  return out;
}

namespace detail {

inline float luminance(const Image& img, int y, int x) {
  if (img.channels < 3) return img.at(y, x, 0);
  return 0.299f * img.at(y, x, 0) + 0.587f * img.at(y, x, 1) + 0.114f * img.at(y, x, 2);
}

// out = degenerate + factor * (img - degenerate), clamped
inline void blend_into(Image& img, const Image& degenerate, double factor) {
  for (std::size_t i = 0; i < img.pixels.size(); ++i) {
    const double v = degenerate.pixels[i] + factor * (img.pixels[i] - degenerate.pixels[i]);
    img.pixels[i] = static_cast<float>(std::clamp(v, 0.0, 1.0));
  }
}

inline void auto_contrast(Image& img) {
  for (int c = 0; c < img.channels; ++c) {
    float lo = 1.0f, hi = 0.0f;
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x) {
        lo = std::min(lo, img.at(y, x, c));
        hi = std::max(hi, img.at(y, x, c));
      }
    if (hi - lo <= 1e-6f) continue;
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x) img.at(y, x, c) = (img.at(y, x, c) - lo) / (hi - lo);
  }
}

inline void apply_op(Image& img, StrongOp op, double m) {
  switch (op) {
    case StrongOp::identity: break;
    case StrongOp::auto_contrast: auto_contrast(img); break;
    case StrongOp::brightness: blend_into(img, Image(img.height, img.width, img.channels, 0.0f), m); break;
    case StrongOp::color: {
      Image gray(img.height, img.width, img.channels);
      for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
          for (int c = 0; c < img.channels; ++c) gray.at(y, x, c) = luminance(img, y, x);
      blend_into(img, gray, m);
      break;
    }
    case StrongOp::contrast: {
      double mean = 0.0;
      for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) mean += luminance(img, y, x);
      mean /= static_cast<double>(img.height) * img.width;
      blend_into(img, Image(img.height, img.width, img.channels, static_cast<float>(mean)), m);
      break;
    }
    case StrongOp::posterize: {
      const int bits = std::clamp(static_cast<int>(std::lround(m)), 1, 8);
      const float levels = static_cast<float>(1 << bits);
      for (auto& p : img.pixels) p = std::min(std::floor(p * levels) / levels, 1.0f);
      break;
    }
    case StrongOp::sharpness: {
      // smoothing kernel [[1,1,1],[1,5,1],[1,1,1]]/13 on the interior, border untouched
      Image smooth = img;
      for (int y = 1; y + 1 < img.height; ++y)
        for (int x = 1; x + 1 < img.width; ++x)
          for (int c = 0; c < img.channels; ++c) {
            float s = 0.0f;
            for (int oy = -1; oy <= 1; ++oy)
              for (int ox = -1; ox <= 1; ++ox)
                s += img.at(y + oy, x + ox, c) * ((oy == 0 && ox == 0) ? 5.0f : 1.0f);
            smooth.at(y, x, c) = s / 13.0f;
          }
      blend_into(img, smooth, m);
      break;
    }
    case StrongOp::shear_x: {
      Image out(img.height, img.width, img.channels, kFillValue);
      const double cy = (img.height - 1) / 2.0;
      for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
          const int sx = static_cast<int>(std::lround(x + m * (y - cy)));
          if (sx < 0 || sx >= img.width) continue;
          for (int c = 0; c < img.channels; ++c) out.at(y, x, c) = img.at(y, sx, c);
        }
      img = std::move(out);
      break;
    }
    case StrongOp::translate_x: {
      Image out(img.height, img.width, img.channels, kFillValue);
      const int shift = static_cast<int>(std::lround(m * img.width));
      for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
          const int sx = x - shift;
          if (sx < 0 || sx >= img.width) continue;
          for (int c = 0; c < img.channels; ++c) out.at(y, x, c) = img.at(y, sx, c);
        }
      img = std::move(out);
      break;
    }
  }
  img.clamp();
}

}  // namespace detail

/// Pool indices chosen for one strong augmentation (uniform, with replacement).
inline std::vector<std::size_t> sample_strong_ops(const AugmentationPolicy& policy, Rng& rng) {
  if (policy.strong_ops.empty()) throw ConfigError("strong augmentation pool is empty");
  std::vector<std::size_t> picks(static_cast<std::size_t>(policy.strong_ops_per_image));
  for (auto& p : picks) p = rng.below(policy.strong_ops.size());
  return picks;
}

/// RandAugment-style strong view: a weak pass followed by strong_ops_per_image
/// ops drawn from the pool with uniform magnitudes.
inline Image strong_augment(const Image& image, const AugmentationPolicy& policy, Rng& rng) {
  if (policy.strong_ops.empty()) throw ConfigError("strong augmentation pool is empty");
  Image out = weak_augment(image, policy, rng);
  for (auto idx : sample_strong_ops(policy, rng)) {
    const auto& spec = policy.strong_ops[idx];
    detail::apply_op(out, spec.op, rng.uniform(spec.lo, spec.hi));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Patch tokens

/// Splits an image into (H/P)*(W/P) non-overlapping patches in row-major patch
/// order; each row is one patch flattened as (py, px, channel).
template <class T = float>
Mat<T> patchify(const Image& image, int patch) {
  if (patch <= 0 || image.height % patch != 0 || image.width % patch != 0)
    throw ShapeError("image " + std::to_string(image.height) + "x" + std::to_string(image.width) +
                     " is not divisible by patch size " + std::to_string(patch));
  const int gh = image.height / patch, gw = image.width / patch;
  const int dim = patch * patch * image.channels;
  Mat<T> out(gh * gw, dim);
  for (int gy = 0; gy < gh; ++gy)
    for (int gx = 0; gx < gw; ++gx) {
      const int row = gy * gw + gx;
      int col = 0;
      for (int py = 0; py < patch; ++py)
        for (int px = 0; px < patch; ++px)
          for (int c = 0; c < image.channels; ++c)
            out(row, col++) = static_cast<T>(image.at(gy * patch + py, gx * patch + px, c));
    }
  return out;
}

/// Exact inverse of patchify.
template <class T>
Image unpatchify(const Mat<T>& patches, int patch, int height, int width, int channels) {
  if (patch <= 0 || height % patch != 0 || width % patch != 0)
    throw ShapeError("image dimensions not divisible by patch size");
  const int gh = height / patch, gw = width / patch;
  if (patches.rows() != gh * gw || patches.cols() != patch * patch * channels)
    throw ShapeError("patch matrix is " + std::to_string(patches.rows()) + "x" +
                     std::to_string(patches.cols()) + ", expected " + std::to_string(gh * gw) +
                     "x" + std::to_string(patch * patch * channels));
  Image img(height, width, channels);
  for (int gy = 0; gy < gh; ++gy)
    for (int gx = 0; gx < gw; ++gx) {
      const int row = gy * gw + gx;
      int col = 0;
      for (int py = 0; py < patch; ++py)
        for (int px = 0; px < patch; ++px)
          for (int c = 0; c < channels; ++c)
            img.at(gy * patch + py, gx * patch + px, c) = static_cast<float>(patches(row, col++));
    }
  return img;
}

}  // namespace maskmatch
